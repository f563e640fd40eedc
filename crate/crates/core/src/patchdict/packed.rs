//! 5-bit packed storage for label patches and the word-wise Hamming kernel.
//!
//! Two packings exist: a u64-word layout (12 cells per word) used by the
//! distance kernel, and a dense 5-bit bitstream used by the dictionary file
//! format (`ceil(5 * P^2 / 8)` bytes per patch).

/// Cells per u64 word in the kernel layout.
pub const CELLS_PER_WORD: usize = 12;

/// Mask selecting the low bit of each 5-bit group.
const GROUP_LSB: u64 = {
    let mut m = 0u64;
    let mut i = 0;
    while i < CELLS_PER_WORD {
        m |= 1 << (5 * i);
        i += 1;
    }
    m
};

pub fn words_per_patch(cells: usize) -> usize {
    cells.div_ceil(CELLS_PER_WORD)
}

/// Packs labels (each in `0..32`) into u64 words, 12 per word.
pub fn pack_words(cells: &[u8], out: &mut Vec<u64>) {
    for chunk in cells.chunks(CELLS_PER_WORD) {
        let mut w = 0u64;
        for (i, &c) in chunk.iter().enumerate() {
            debug_assert!(c < 32);
            w |= (c as u64) << (5 * i);
        }
        out.push(w);
    }
}

pub fn unpack_words(words: &[u64], cells: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(cells);
    for (i, &w) in words.iter().enumerate() {
        let n = (cells - i * CELLS_PER_WORD).min(CELLS_PER_WORD);
        for j in 0..n {
            out.push(((w >> (5 * j)) & 0x1F) as u8);
        }
    }
    out
}

#[inline]
pub fn cell_at(words: &[u64], i: usize) -> u8 {
    ((words[i / CELLS_PER_WORD] >> (5 * (i % CELLS_PER_WORD))) & 0x1F) as u8
}

/// Number of cell positions whose labels differ between two word blocks.
#[inline]
pub fn word_distance(a: &[u64], b: &[u64]) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    let mut d = 0u32;
    for (&x, &y) in a.iter().zip(b) {
        let x = x ^ y;
        let hit = (x | x >> 1 | x >> 2 | x >> 3 | x >> 4) & GROUP_LSB;
        d += hit.count_ones();
    }
    d
}

/// Like [`word_distance`] but abandons once the partial sum exceeds `bound`,
/// returning any value `> bound` in that case.
#[inline]
pub fn word_distance_bounded(a: &[u64], b: &[u64], bound: u32) -> u32 {
    let mut d = 0u32;
    for (&x, &y) in a.iter().zip(b) {
        let x = x ^ y;
        let hit = (x | x >> 1 | x >> 2 | x >> 3 | x >> 4) & GROUP_LSB;
        d += hit.count_ones();
        if d > bound {
            return d;
        }
    }
    d
}

/// Packs labels into the dense 5-bit file bitstream, LSB first within bytes.
pub fn pack_bits(cells: &[u8]) -> Vec<u8> {
    let nbits = cells.len() * 5;
    let mut out = vec![0u8; nbits.div_ceil(8)];
    for (i, &c) in cells.iter().enumerate() {
        let bit = i * 5;
        let (byte, off) = (bit / 8, bit % 8);
        out[byte] |= ((c as u16) << off) as u8;
        if off > 3 {
            out[byte + 1] |= c >> (8 - off);
        }
    }
    out
}

pub fn unpack_bits(bytes: &[u8], cells: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(cells);
    for i in 0..cells {
        let bit = i * 5;
        let (byte, off) = (bit / 8, bit % 8);
        let mut v = (bytes[byte] >> off) as u16;
        if off > 3 {
            v |= (bytes[byte + 1] as u16) << (8 - off);
        }
        out.push((v & 0x1F) as u8);
    }
    out
}
