//! On-disk sample formats: binary PGM maps, per-sample joint CSVs and the
//! dataset manifest.
//!
//! Depth maps are 16-bit P5 graymaps (`round(depth * 65535)`, most
//! significant byte first as PGM requires), label maps are 8-bit P5 graymaps
//! with values `0..=20`, and joints are CSV rows `joint_id,u,v,z`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{DatasetConfig, HandPoseParams};
use crate::error::{Error, Result};
use crate::types::{DepthMap, Joint, JointId, JointSet, LabelMap, NUM_JOINTS, NUM_PARTS};

/// One generated sample with its originating parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub depth: DepthMap,
    pub labels: LabelMap,
    pub joints: JointSet,
    pub params: HandPoseParams,
}

/// Dataset split names, matching the on-disk directory layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Synth,
    Real,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Synth => "synth",
            Split::Real => "real",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRef {
    pub split: Split,
    pub id: String,
    pub seed: u64,
}

/// JSON manifest written next to the split directories.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: DatasetConfig,
    pub n_synth: usize,
    pub n_real_proxy: usize,
    pub n_test: usize,
    pub joint_names: Vec<String>,
    pub samples: Vec<SampleRef>,
}

impl DatasetManifest {
    pub fn new(config: DatasetConfig, n_synth: usize, n_real_proxy: usize, n_test: usize) -> Self {
        DatasetManifest {
            config,
            n_synth,
            n_real_proxy,
            n_test,
            joint_names: JointId::ALL.iter().map(|j| j.name().to_string()).collect(),
            samples: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_vec_pretty(self)
            .map_err(|e| Error::format(path, e.to_string()))?;
        fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let body = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&body).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn ids(&self, split: Split) -> Vec<String> {
        self.samples
            .iter()
            .filter(|s| s.split == split)
            .map(|s| s.id.clone())
            .collect()
    }
}

fn pgm_header(mut r: impl BufRead, path: &Path) -> Result<(usize, usize, u32)> {
    let mut tokens = Vec::new();
    // Read header tokens, skipping comments, until magic + dims + maxval.
    let mut token = String::new();
    while tokens.len() < 4 {
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte)
            .map_err(|_| Error::format(path, "truncated PGM header"))?;
        let c = byte[0] as char;
        if c == '#' {
            let mut line = String::new();
            r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if !token.is_empty() {
                tokens.push(std::mem::take(&mut token));
            }
        } else {
            token.push(c);
        }
    }
    if tokens[0] != "P5" {
        return Err(Error::format(path, format!("expected P5 magic, got {}", tokens[0])));
    }
    let w: usize = tokens[1].parse().map_err(|_| Error::format(path, "bad width"))?;
    let h: usize = tokens[2].parse().map_err(|_| Error::format(path, "bad height"))?;
    let maxval: u32 = tokens[3].parse().map_err(|_| Error::format(path, "bad maxval"))?;
    Ok((w, h, maxval))
}

pub fn write_depth_pgm(path: &Path, d: &DepthMap) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write!(w, "P5\n{} {}\n65535\n", d.width, d.height).map_err(|e| Error::io(path, e))?;
    for i in 0..d.values.len() {
        let q = if d.foreground[i] {
            (d.values[i].clamp(0.0, 1.0) * 65535.0).round() as u16
        } else {
            0
        };
        w.write_all(&q.to_be_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a 16-bit depth PGM. The foreground mask is set from the paired label
/// map by [`load_sample`]; standalone reads mark nonzero pixels as foreground.
pub fn read_depth_pgm(path: &Path) -> Result<DepthMap> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let (width, height, maxval) = pgm_header(&mut r, path)?;
    if maxval != 65535 {
        return Err(Error::format(path, format!("expected maxval 65535, got {maxval}")));
    }
    let mut buf = vec![0u8; width * height * 2];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(path, "truncated pixel data"))?;
    let mut d = DepthMap::new(width, height);
    for i in 0..width * height {
        let q = u16::from_be_bytes([buf[2 * i], buf[2 * i + 1]]);
        d.values[i] = q as f64 / 65535.0;
        d.foreground[i] = q != 0;
    }
    Ok(d)
}

pub fn write_label_pgm(path: &Path, m: &LabelMap) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write!(w, "P5\n{} {}\n255\n", m.width, m.height).map_err(|e| Error::io(path, e))?;
    w.write_all(&m.labels).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_label_pgm(path: &Path) -> Result<LabelMap> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let (width, height, maxval) = pgm_header(&mut r, path)?;
    if maxval != 255 {
        return Err(Error::format(path, format!("expected maxval 255, got {maxval}")));
    }
    let mut labels = vec![0u8; width * height];
    r.read_exact(&mut labels)
        .map_err(|_| Error::format(path, "truncated pixel data"))?;
    if let Some(&bad) = labels.iter().find(|&&l| l as usize > NUM_PARTS) {
        return Err(Error::format(path, format!("label {bad} out of range")));
    }
    Ok(LabelMap {
        width,
        height,
        labels,
    })
}

pub fn write_joints_csv(path: &Path, joints: &JointSet) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    writeln!(w, "joint_id,u,v,z").map_err(|e| Error::io(path, e))?;
    for id in JointId::ALL {
        let j = joints.get(id);
        writeln!(w, "{},{:.17e},{:.17e},{:.17e}", id.name(), j.u, j.v, j.z)
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_joints_csv(path: &Path) -> Result<JointSet> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = body.lines();
    let header = lines.next().ok_or_else(|| Error::format(path, "empty file"))?;
    if header.trim() != "joint_id,u,v,z" {
        return Err(Error::format(path, "unexpected CSV header"));
    }
    let mut joints = JointSet::zeroed();
    let mut seen = 0usize;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::format(path, format!("bad row: {line}")));
        }
        let id = JointId::ALL
            .iter()
            .copied()
            .find(|j| j.name() == parts[0])
            .ok_or_else(|| Error::format(path, format!("unknown joint id {}", parts[0])))?;
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::format(path, format!("bad number {s}")))
        };
        joints.set(
            id,
            Joint {
                u: parse(parts[1])?,
                v: parse(parts[2])?,
                z: parse(parts[3])?,
            },
        );
        seen += 1;
    }
    if seen != NUM_JOINTS {
        return Err(Error::format(path, format!("expected {NUM_JOINTS} joints, got {seen}")));
    }
    Ok(joints)
}

fn sample_paths(dir: &Path, id: &str) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("{id}.depth.pgm")),
        dir.join(format!("{id}.labels.pgm")),
        dir.join(format!("{id}.joints.csv")),
    )
}

pub fn write_sample(dir: &Path, id: &str, sample: &Sample) -> Result<()> {
    let (dp, lp, jp) = sample_paths(dir, id);
    write_depth_pgm(&dp, &sample.depth)?;
    write_label_pgm(&lp, &sample.labels)?;
    write_joints_csv(&jp, &sample.joints)
}

/// Reads one sample triple. The depth foreground mask is taken from the label
/// map (the clean ground truth), except where degradation removed the pixel
/// from the depth image itself.
pub fn load_sample(dir: &Path, id: &str) -> Result<(DepthMap, LabelMap, JointSet)> {
    let (dp, lp, jp) = sample_paths(dir, id);
    let mut depth = read_depth_pgm(&dp)?;
    let labels = read_label_pgm(&lp)?;
    let joints = read_joints_csv(&jp)?;
    if depth.width != labels.width || depth.height != labels.height {
        return Err(Error::format(&dp, "depth/label dimension mismatch"));
    }
    for i in 0..depth.values.len() {
        depth.foreground[i] = depth.foreground[i] && labels.labels[i] != 0;
    }
    Ok((depth, labels, joints))
}
