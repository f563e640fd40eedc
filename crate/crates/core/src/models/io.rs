//! Model persistence: a versioned binary parameter block (little-endian
//! doubles) plus a JSON sidecar (`<path>.json`) describing the architecture.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{NUM_JOINTS, NUM_PARTS};

use super::mlp::Mlp;
use super::reg::{RegInputMode, RegModel, REG_FEATURE_LEN};
use super::seg::SegModel;

const SEG_MAGIC: &[u8; 4] = b"SEGM";
const REG_MAGIC: &[u8; 4] = b"REGM";
const VERSION: u16 = 1;

fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

#[derive(Serialize, Deserialize)]
struct SegSidecar {
    kind: String,
    patch: usize,
    hidden: usize,
    steps: u64,
}

#[derive(Serialize, Deserialize)]
struct RegSidecar {
    kind: String,
    hidden: usize,
    mode: RegInputMode,
    opening_radius: usize,
}

fn write_params<'a>(
    path: &Path,
    magic: &[u8; 4],
    params: impl Iterator<Item = &'a f64>,
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let mut count = 0u64;
    let mut body = Vec::new();
    for p in params {
        body.extend_from_slice(&p.to_le_bytes());
        count += 1;
    }
    buf.extend_from_slice(&count.to_le_bytes());
    buf.extend_from_slice(&body);
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn read_params(path: &Path, magic: &[u8; 4]) -> Result<Vec<f64>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < 14 {
        return Err(Error::format(path, "file shorter than header"));
    }
    if &buf[0..4] != magic {
        return Err(Error::format(path, "bad magic"));
    }
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    if version != VERSION {
        return Err(Error::format(
            path,
            &format!("unsupported model version {version}"),
        ));
    }
    let count = u64::from_le_bytes(buf[6..14].try_into().unwrap()) as usize;
    if buf.len() != 14 + count * 8 {
        return Err(Error::format(
            path,
            &format!("expected {} parameter bytes, found {}", count * 8, buf.len() - 14),
        ));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let o = 14 + i * 8;
        let v = f64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format(path, "non-finite parameter"));
        }
        out.push(v);
    }
    Ok(out)
}

fn mlp_from_flat(input: usize, hidden: usize, output: usize, flat: &[f64]) -> Mlp {
    let mut it = flat.iter().cloned();
    let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
    Mlp {
        input,
        hidden,
        output,
        w1: take(hidden * input),
        b1: take(hidden),
        w2: take(output * hidden),
        b2: take(output),
    }
}

pub fn save_seg_model(m: &SegModel, path: &Path) -> Result<()> {
    write_params(path, SEG_MAGIC, m.mlp.params())?;
    let sidecar = SegSidecar {
        kind: "seg".into(),
        patch: m.patch,
        hidden: m.mlp.hidden,
        steps: m.steps,
    };
    let sp = sidecar_path(path);
    fs::write(&sp, serde_json::to_vec_pretty(&sidecar).expect("serialize"))
        .map_err(|e| Error::io(&sp, e))
}

pub fn load_seg_model(path: &Path) -> Result<SegModel> {
    let sp = sidecar_path(path);
    let raw = fs::read(&sp).map_err(|e| Error::io(&sp, e))?;
    let sc: SegSidecar =
        serde_json::from_slice(&raw).map_err(|e| Error::format(&sp, &e.to_string()))?;
    if sc.kind != "seg" {
        return Err(Error::format(&sp, "sidecar kind is not 'seg'"));
    }
    let flat = read_params(path, SEG_MAGIC)?;
    let input = sc.patch * sc.patch;
    let expect = (input + 1) * sc.hidden + (sc.hidden + 1) * NUM_PARTS;
    if flat.len() != expect {
        return Err(Error::format(
            path,
            &format!("expected {expect} parameters, found {}", flat.len()),
        ));
    }
    Ok(SegModel {
        patch: sc.patch,
        mlp: mlp_from_flat(input, sc.hidden, NUM_PARTS, &flat),
        steps: sc.steps,
    })
}

pub fn save_reg_model(m: &RegModel, path: &Path) -> Result<()> {
    write_params(path, REG_MAGIC, m.nets.iter().flat_map(Mlp::params))?;
    let sidecar = RegSidecar {
        kind: "reg".into(),
        hidden: m.nets[0].hidden,
        mode: m.mode,
        opening_radius: m.opening_radius,
    };
    let sp = sidecar_path(path);
    fs::write(&sp, serde_json::to_vec_pretty(&sidecar).expect("serialize"))
        .map_err(|e| Error::io(&sp, e))
}

pub fn load_reg_model(path: &Path) -> Result<RegModel> {
    let sp = sidecar_path(path);
    let raw = fs::read(&sp).map_err(|e| Error::io(&sp, e))?;
    let sc: RegSidecar =
        serde_json::from_slice(&raw).map_err(|e| Error::format(&sp, &e.to_string()))?;
    if sc.kind != "reg" {
        return Err(Error::format(&sp, "sidecar kind is not 'reg'"));
    }
    let flat = read_params(path, REG_MAGIC)?;
    let per_net = (REG_FEATURE_LEN + 1) * sc.hidden + (sc.hidden + 1) * 3;
    if flat.len() != per_net * NUM_JOINTS {
        return Err(Error::format(
            path,
            &format!(
                "expected {} parameters, found {}",
                per_net * NUM_JOINTS,
                flat.len()
            ),
        ));
    }
    let nets = (0..NUM_JOINTS)
        .map(|j| {
            mlp_from_flat(
                REG_FEATURE_LEN,
                sc.hidden,
                3,
                &flat[j * per_net..(j + 1) * per_net],
            )
        })
        .collect();
    Ok(RegModel {
        mode: sc.mode,
        opening_radius: sc.opening_radius,
        nets,
    })
}
