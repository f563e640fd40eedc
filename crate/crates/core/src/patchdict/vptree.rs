//! Vantage-point tree over dictionary patches under the Hamming metric.
//!
//! Search is exact: subtrees are skipped only when the triangle inequality
//! proves no contained patch can improve the current k-th best distance.
//! Entries at the current worst distance are still visited so the
//! `(distance, patch_id)` tie order is preserved.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PatchDictionary, TopK};

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf(Vec<u32>),
    Inner {
        vantage: u32,
        /// Median distance; ids with `d < mu` go to `inner`.
        mu: u32,
        inner: usize,
        outer: usize,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct VpTree {
    nodes: Vec<Node>,
    root: usize,
}

impl VpTree {
    pub fn build(dict: &PatchDictionary, seed: u64) -> VpTree {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<u32> = (0..dict.count() as u32).collect();
        let mut nodes = Vec::new();
        let root = build_node(dict, ids, &mut rng, &mut nodes);
        VpTree { nodes, root }
    }

    pub fn search(&self, dict: &PatchDictionary, query_words: &[u64], k: usize) -> Vec<(u32, u32)> {
        let mut best = TopK::new(k);
        self.visit(self.root, dict, query_words, &mut best);
        best.into_sorted()
    }

    fn visit(&self, node: usize, dict: &PatchDictionary, qw: &[u64], best: &mut TopK) {
        match &self.nodes[node] {
            Node::Leaf(ids) => {
                for &id in ids {
                    let bound = best.abandon_bound();
                    let d = crate::patchdict::packed::word_distance_bounded(
                        qw,
                        dict.patch_words(id),
                        bound,
                    );
                    if d <= bound {
                        best.offer(d, id);
                    }
                }
            }
            Node::Inner {
                vantage,
                mu,
                inner,
                outer,
            } => {
                let (vantage, mu, inner, outer) = (*vantage, *mu, *inner, *outer);
                let dq = dict.distance_to(qw, vantage);
                best.offer(dq, vantage);
                // inner holds d(v, p) <= mu - 1, outer holds d(v, p) >= mu.
                // A child is skippable only when its distance lower bound
                // strictly exceeds the current worst kept distance; equality
                // must still be visited to honor the id tie order.
                let sides: [(usize, bool); 2] = if dq < mu {
                    [(inner, true), (outer, false)]
                } else {
                    [(outer, false), (inner, true)]
                };
                for (child, is_inner) in sides {
                    let tau = best.abandon_bound();
                    let reachable = if tau == u32::MAX {
                        true
                    } else if is_inner {
                        dq <= (mu - 1).saturating_add(tau)
                    } else {
                        mu <= dq.saturating_add(tau)
                    };
                    if reachable {
                        self.visit(child, dict, qw, best);
                    }
                }
            }
        }
    }
}

fn build_node(
    dict: &PatchDictionary,
    mut ids: Vec<u32>,
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<Node>,
) -> usize {
    if ids.len() <= LEAF_SIZE {
        ids.sort_unstable();
        nodes.push(Node::Leaf(ids));
        return nodes.len() - 1;
    }
    let pick = rng.gen_range(0..ids.len());
    let vantage = ids.swap_remove(pick);
    let vw = dict.patch_words(vantage).to_vec();
    let mut dists: Vec<(u32, u32)> = ids
        .iter()
        .map(|&id| (dict.distance_to(&vw, id), id))
        .collect();
    let mid = dists.len() / 2;
    dists.select_nth_unstable(mid);
    let mu = dists[mid].0;
    let inner_ids: Vec<u32> = dists.iter().filter(|&&(d, _)| d < mu).map(|&(_, id)| id).collect();
    let outer_ids: Vec<u32> = dists.iter().filter(|&&(d, _)| d >= mu).map(|&(_, id)| id).collect();
    if inner_ids.is_empty() || outer_ids.is_empty() {
        // Degenerate split (all distances equal); fall back to a flat leaf
        // containing the vantage too.
        let mut all: Vec<u32> = dists.into_iter().map(|(_, id)| id).collect();
        all.push(vantage);
        all.sort_unstable();
        nodes.push(Node::Leaf(all));
        return nodes.len() - 1;
    }
    let inner = build_node(dict, inner_ids, rng, nodes);
    let outer = build_node(dict, outer_ids, rng, nodes);
    nodes.push(Node::Inner {
        vantage,
        mu,
        inner,
        outer,
    });
    nodes.len() - 1
}
