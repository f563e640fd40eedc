//! Patch dictionary with exact Hamming nearest-neighbor search.
//!
//! P×P label patches are extracted from synthetic label maps, stored 5-bit
//! packed, and queried under the per-cell Hamming distance. Queries are
//! answered exactly either by a blocked linear scan (word-wise XOR +
//! popcount) or through a vantage-point tree with triangle-inequality
//! pruning. Ranking is total: ties in distance break toward the smaller
//! patch id.

mod io;
mod packed;
mod vptree;

pub use io::{expected_file_size, load_dictionary, save_dictionary};

use crate::error::{Error, Result};
use crate::types::LabelMap;

use packed::{
    cell_at, pack_words, unpack_words, word_distance, word_distance_bounded, words_per_patch,
};
use vptree::VpTree;

/// One P×P label patch (odd side length, row-major cells in `0..=20`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelPatch {
    patch_size: usize,
    cells: Vec<u8>,
}

impl LabelPatch {
    pub fn new(patch_size: usize, cells: Vec<u8>) -> Result<Self> {
        if patch_size % 2 == 0 || patch_size == 0 {
            return Err(Error::Contract(format!(
                "patch side length must be odd, got {patch_size}"
            )));
        }
        if cells.len() != patch_size * patch_size {
            return Err(Error::Contract(format!(
                "expected {} cells, got {}",
                patch_size * patch_size,
                cells.len()
            )));
        }
        if cells.iter().any(|&c| c > 20) {
            return Err(Error::Contract("patch cell label out of range 0..=20".into()));
        }
        Ok(LabelPatch { patch_size, cells })
    }

    /// Extracts the patch centered at `(cu, cv)`, reading out-of-bounds cells
    /// as background.
    pub fn from_map(map: &LabelMap, cu: usize, cv: usize, patch_size: usize) -> Result<Self> {
        let r = (patch_size / 2) as isize;
        let mut cells = Vec::with_capacity(patch_size * patch_size);
        for dv in -r..=r {
            for du in -r..=r {
                cells.push(map.get_padded(cu as isize + du, cv as isize + dv));
            }
        }
        LabelPatch::new(patch_size, cells)
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn center(&self) -> u8 {
        self.cells[self.cells.len() / 2]
    }

    fn to_words(&self) -> Vec<u64> {
        let mut w = Vec::new();
        pack_words(&self.cells, &mut w);
        w
    }
}

/// Per-cell Hamming distance between two equally sized patches.
pub fn hamming_distance(a: &LabelPatch, b: &LabelPatch) -> Result<u32> {
    if a.patch_size != b.patch_size {
        return Err(Error::Contract(format!(
            "patch size mismatch: {} vs {}",
            a.patch_size, b.patch_size
        )));
    }
    Ok(word_distance(&a.to_words(), &b.to_words()))
}

/// Ranked exact nearest-neighbor hits, ascending by `(distance, patch_id)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NNQueryResult {
    /// `(patch_id, hamming_distance)` pairs.
    pub hits: Vec<(u32, u32)>,
}

/// Immutable collection of packed patches, optionally indexed.
#[derive(Debug, Clone)]
pub struct PatchDictionary {
    patch_size: usize,
    words_per_patch: usize,
    words: Vec<u64>,
    source_ids: Vec<(u32, u32)>,
    index: Option<VpTree>,
}

impl PatchDictionary {
    fn from_parts(
        patch_size: usize,
        words: Vec<u64>,
        source_ids: Vec<(u32, u32)>,
    ) -> Self {
        PatchDictionary {
            patch_size,
            words_per_patch: words_per_patch(patch_size * patch_size),
            words,
            source_ids,
            index: None,
        }
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn count(&self) -> usize {
        self.source_ids.len()
    }

    pub fn is_indexed(&self) -> bool {
        self.index.is_some()
    }

    pub fn source_id(&self, patch_id: u32) -> (u32, u32) {
        self.source_ids[patch_id as usize]
    }

    pub fn source_ids(&self) -> &[(u32, u32)] {
        &self.source_ids
    }

    #[inline]
    fn patch_words(&self, patch_id: u32) -> &[u64] {
        let s = patch_id as usize * self.words_per_patch;
        &self.words[s..s + self.words_per_patch]
    }

    pub fn patch(&self, patch_id: u32) -> LabelPatch {
        LabelPatch {
            patch_size: self.patch_size,
            cells: unpack_words(self.patch_words(patch_id), self.patch_size * self.patch_size),
        }
    }

    /// Label at row-major cell `i` of patch `patch_id`.
    #[inline]
    pub fn cell(&self, patch_id: u32, i: usize) -> u8 {
        cell_at(self.patch_words(patch_id), i)
    }

    /// Center-cell label of patch `patch_id`.
    #[inline]
    pub fn center_label(&self, patch_id: u32) -> u8 {
        self.cell(patch_id, (self.patch_size * self.patch_size) / 2)
    }

    #[inline]
    pub fn distance_to(&self, query_words: &[u64], patch_id: u32) -> u32 {
        word_distance(query_words, self.patch_words(patch_id))
    }

    /// Builds the vantage-point tree index; deterministic per `seed`.
    pub fn build_index(&mut self, seed: u64) {
        if self.count() > 0 {
            self.index = Some(VpTree::build(self, seed));
        }
    }

    /// Exact k-nearest-neighbor query under the `(distance, patch_id)` order.
    pub fn nn_search(&self, q: &LabelPatch, k: usize) -> Result<NNQueryResult> {
        if q.patch_size != self.patch_size {
            return Err(Error::Contract(format!(
                "query patch size {} does not match dictionary {}",
                q.patch_size, self.patch_size
            )));
        }
        if k < 1 || k > self.count() {
            return Err(Error::Contract(format!(
                "k = {k} out of range 1..={}",
                self.count()
            )));
        }
        let qw = q.to_words();
        let hits = match &self.index {
            Some(tree) => tree.search(self, &qw, k),
            None => self.scan_words(&qw, k),
        };
        Ok(NNQueryResult { hits })
    }

    /// Blocked linear scan over all patches; the un-indexed exact route.
    pub fn linear_scan(&self, q: &LabelPatch, k: usize) -> Result<NNQueryResult> {
        if q.patch_size != self.patch_size {
            return Err(Error::Contract("patch size mismatch".into()));
        }
        if k < 1 || k > self.count() {
            return Err(Error::Contract(format!("k = {k} out of range")));
        }
        Ok(NNQueryResult {
            hits: self.scan_words(&q.to_words(), k),
        })
    }

    fn scan_words(&self, qw: &[u64], k: usize) -> Vec<(u32, u32)> {
        let mut best = TopK::new(k);
        for id in 0..self.count() as u32 {
            let bound = best.abandon_bound();
            let d = word_distance_bounded(qw, self.patch_words(id), bound);
            if d <= bound {
                best.offer(d, id);
            }
        }
        best.into_sorted()
    }
}

/// Bounded best-k accumulator under the `(distance, id)` total order.
pub(crate) struct TopK {
    k: usize,
    // Max-heap on (distance, id).
    heap: std::collections::BinaryHeap<(u32, u32)>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        TopK {
            k,
            heap: std::collections::BinaryHeap::with_capacity(k + 1),
        }
    }

    /// Largest distance a candidate may have and still possibly enter.
    #[inline]
    pub fn abandon_bound(&self) -> u32 {
        if self.heap.len() < self.k {
            u32::MAX
        } else {
            self.heap.peek().map(|&(d, _)| d).unwrap_or(u32::MAX)
        }
    }

    #[inline]
    pub fn offer(&mut self, d: u32, id: u32) {
        if self.heap.len() < self.k {
            self.heap.push((d, id));
        } else if let Some(&worst) = self.heap.peek() {
            if (d, id) < worst {
                self.heap.pop();
                self.heap.push((d, id));
            }
        }
    }

    pub fn into_sorted(self) -> Vec<(u32, u32)> {
        let mut v: Vec<(u32, u32)> = self.heap.into_vec();
        v.sort_unstable();
        v.into_iter().map(|(d, id)| (id, d)).collect()
    }
}

/// Extracts a dictionary from `maps`. Centers are stride-subsampled positions
/// where the whole patch fits inside the map; with `foreground_only` the
/// center pixel must additionally carry a foreground label.
pub fn extract_patches(
    maps: &[LabelMap],
    patch_size: usize,
    stride: usize,
    foreground_only: bool,
) -> Result<PatchDictionary> {
    if patch_size % 2 == 0 || patch_size == 0 {
        return Err(Error::Config(format!("patch_size must be odd, got {patch_size}")));
    }
    if stride == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    for m in maps {
        if patch_size > m.width || patch_size > m.height {
            return Err(Error::Config(format!(
                "patch_size {patch_size} exceeds map dimensions {}x{}",
                m.width, m.height
            )));
        }
    }
    let r = patch_size / 2;
    let mut words = Vec::new();
    let mut source_ids = Vec::new();
    for (img, m) in maps.iter().enumerate() {
        let mut v = r;
        while v + r < m.height {
            let mut u = r;
            while u + r < m.width {
                if !foreground_only || m.get(u, v) != 0 {
                    let patch = LabelPatch::from_map(m, u, v, patch_size)?;
                    pack_words(patch.cells(), &mut words);
                    source_ids.push((img as u32, (v * m.width + u) as u32));
                }
                u += stride;
            }
            v += stride;
        }
    }
    if source_ids.is_empty() {
        return Err(Error::EmptyDictionary(
            "no eligible patch centers in the given maps".into(),
        ));
    }
    Ok(PatchDictionary::from_parts(patch_size, words, source_ids))
}
