//! Binary dictionary file format.
//!
//! Layout (all integers little-endian): magic `PDCT`, format version `u16`,
//! patch_size `u16`, count `u64`, then the provenance table (`count` pairs of
//! `u32` image id and `u32` pixel index), then the packed patch block
//! (`count` records of `ceil(5 * P^2 / 8)` bytes each).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::packed::{pack_bits, pack_words, unpack_bits};
use super::PatchDictionary;

const MAGIC: &[u8; 4] = b"PDCT";
const VERSION: u16 = 1;

pub fn save_dictionary(d: &PatchDictionary, path: &Path) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(d.patch_size() as u16).to_le_bytes()).map_err(io)?;
    w.write_all(&(d.count() as u64).to_le_bytes()).map_err(io)?;
    for &(img, px) in d.source_ids() {
        w.write_all(&img.to_le_bytes()).map_err(io)?;
        w.write_all(&px.to_le_bytes()).map_err(io)?;
    }
    for id in 0..d.count() as u32 {
        w.write_all(&pack_bits(d.patch(id).cells())).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads a dictionary and rebuilds its index (seed 0).
pub fn load_dictionary(path: &Path) -> Result<PatchDictionary> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |reason: &str| Error::format(path, reason);
    if buf.len() < 16 {
        return Err(fail("file shorter than header"));
    }
    if &buf[0..4] != MAGIC {
        return Err(fail("bad magic"));
    }
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    if version != VERSION {
        return Err(fail(&format!("unsupported format version {version}")));
    }
    let patch_size = u16::from_le_bytes([buf[6], buf[7]]) as usize;
    if patch_size == 0 || patch_size % 2 == 0 {
        return Err(fail(&format!("invalid patch_size {patch_size}")));
    }
    let count = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
    let cells = patch_size * patch_size;
    let rec = (cells * 5).div_ceil(8);
    let expect = 16 + count * 8 + count * rec;
    if buf.len() != expect {
        return Err(fail(&format!(
            "file size {} does not match expected {expect}",
            buf.len()
        )));
    }
    let mut source_ids = Vec::with_capacity(count);
    for i in 0..count {
        let o = 16 + i * 8;
        source_ids.push((
            u32::from_le_bytes(buf[o..o + 4].try_into().unwrap()),
            u32::from_le_bytes(buf[o + 4..o + 8].try_into().unwrap()),
        ));
    }
    let base = 16 + count * 8;
    let mut words = Vec::new();
    for i in 0..count {
        let o = base + i * rec;
        let cells_vec = unpack_bits(&buf[o..o + rec], cells);
        if cells_vec.iter().any(|&c| c > 20) {
            return Err(fail("patch cell label out of range"));
        }
        pack_words(&cells_vec, &mut words);
    }
    let mut d = PatchDictionary::from_parts(patch_size, words, source_ids);
    d.build_index(0);
    Ok(d)
}

/// Expected on-disk size in bytes for a dictionary of `count` patches.
pub fn expected_file_size(patch_size: usize, count: usize) -> usize {
    16 + count * 8 + count * (patch_size * patch_size * 5).div_ceil(8)
}
