//! Weakly supervised gating: joint-associated barycenters, the L2 quality
//! measure, per-sample accept/reject of restored maps, and assembly of the
//! mixed fine-tuning stream.
//!
//! A restored map is accepted only when the sum of distances between its
//! part barycenters and the ground-truth joint positions is strictly smaller
//! than the same sum for the original prediction. Joints whose labels are
//! absent from a map contribute the image diagonal as penalty, so a map that
//! wipes out a finger cannot pass the gate for free.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Finger, JointId, JointSet, LabelMap, NUM_JOINTS, PALM};

/// Part labels associated with each joint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointLabelTable {
    labels: [Vec<u8>; NUM_JOINTS],
}

impl JointLabelTable {
    pub fn new(labels: [Vec<u8>; NUM_JOINTS]) -> Result<Self> {
        for (i, ls) in labels.iter().enumerate() {
            if ls.is_empty() {
                return Err(Error::Config(format!(
                    "joint {:?} has no associated labels",
                    JointId::ALL[i]
                )));
            }
            if ls.iter().any(|&l| l == 0 || l > 20) {
                return Err(Error::Config("joint label out of range 1..=20".into()));
            }
        }
        Ok(JointLabelTable { labels })
    }

    /// The generator's declared mapping: tip segments for fingertip joints,
    /// proximal segments for knuckles, palm for the four base joints.
    pub fn default_table() -> Self {
        let mut labels: [Vec<u8>; NUM_JOINTS] = Default::default();
        for (finger, tip, knuckle) in [
            (Finger::Thumb, JointId::ThumbTip, JointId::ThumbKnuckle),
            (Finger::Index, JointId::IndexTip, JointId::IndexKnuckle),
            (Finger::Middle, JointId::MiddleTip, JointId::MiddleKnuckle),
            (Finger::Ring, JointId::RingTip, JointId::RingKnuckle),
            (Finger::Little, JointId::LittleTip, JointId::LittleKnuckle),
        ] {
            labels[tip as usize] = vec![finger.tip_label()];
            labels[knuckle as usize] = vec![finger.proximal_label()];
        }
        for j in [
            JointId::WristCenter,
            JointId::PalmCenter,
            JointId::ThumbBase,
            JointId::LittleBase,
        ] {
            labels[j as usize] = vec![PALM];
        }
        JointLabelTable { labels }
    }

    pub fn labels_for(&self, joint: JointId) -> &[u8] {
        &self.labels[joint as usize]
    }
}

/// Unweighted mean pixel coordinate per joint over pixels carrying any of the
/// joint's labels; `None` where no such pixel exists.
pub fn part_barycenters(
    m: &LabelMap,
    table: &JointLabelTable,
) -> [Option<(f64, f64)>; NUM_JOINTS] {
    let mut sums = [(0.0f64, 0.0f64, 0u64); NUM_JOINTS];
    for v in 0..m.height {
        for u in 0..m.width {
            let l = m.get(u, v);
            if l == 0 {
                continue;
            }
            for (j, labels) in table.labels.iter().enumerate() {
                if labels.contains(&l) {
                    sums[j].0 += u as f64;
                    sums[j].1 += v as f64;
                    sums[j].2 += 1;
                }
            }
        }
    }
    let mut out = [None; NUM_JOINTS];
    for (j, &(su, sv, n)) in sums.iter().enumerate() {
        if n > 0 {
            out[j] = Some((su / n as f64, sv / n as f64));
        }
    }
    out
}

/// Penalty for a joint with no labeled pixels: the image diagonal.
pub fn absent_penalty(m: &LabelMap) -> f64 {
    ((m.width * m.width + m.height * m.height) as f64).sqrt()
}

/// Sum over joints of the 2-D distance between part barycenter and
/// ground-truth joint position; absent barycenters add the image diagonal.
pub fn quality_measure(m: &LabelMap, joints: &JointSet, table: &JointLabelTable) -> f64 {
    let bary = part_barycenters(m, table);
    let penalty = absent_penalty(m);
    let mut sum = 0.0;
    for (j, id) in JointId::ALL.iter().enumerate() {
        match bary[j] {
            Some((bu, bv)) => {
                let gt = joints.get(*id);
                sum += ((bu - gt.u).powi(2) + (bv - gt.v).powi(2)).sqrt();
            }
            None => sum += penalty,
        }
    }
    sum
}

/// Per-sample gate outcome with full diagnostics.
#[derive(Debug, Clone)]
pub struct QualityReport {
    pub barycenter_before: [Option<(f64, f64)>; NUM_JOINTS],
    pub barycenter_after: [Option<(f64, f64)>; NUM_JOINTS],
    pub sum_before: f64,
    pub sum_after: f64,
    pub accepted: bool,
}

/// Accepts the restored map iff its quality measure strictly improves on the
/// prediction's.
pub fn gate_sample(
    pred: &LabelMap,
    restored: &LabelMap,
    joints: &JointSet,
    table: &JointLabelTable,
) -> Result<QualityReport> {
    if pred.width != restored.width || pred.height != restored.height {
        return Err(Error::Contract("gate inputs must share dimensions".into()));
    }
    let sum_before = quality_measure(pred, joints, table);
    let sum_after = quality_measure(restored, joints, table);
    Ok(QualityReport {
        barycenter_before: part_barycenters(pred, table),
        barycenter_after: part_barycenters(restored, table),
        sum_before,
        sum_after,
        accepted: sum_after < sum_before,
    })
}

/// Accepted pseudo-labeled samples plus the rejection log.
#[derive(Debug, Clone, Default)]
pub struct PseudoLabelSet {
    pub accepted: Vec<(String, LabelMap)>,
    pub rejected: Vec<(String, String)>,
}

impl PseudoLabelSet {
    pub fn rejection_rate(&self) -> f64 {
        let total = self.accepted.len() + self.rejected.len();
        if total == 0 {
            0.0
        } else {
            self.rejected.len() as f64 / total as f64
        }
    }
}

/// Origin tag carried by every stream entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamSource {
    Synth,
    Pseudo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamEntry {
    pub sample_id: String,
    pub source: StreamSource,
}

/// Deterministic shuffled mix of synthetic and pseudo-labeled sample ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneStream {
    pub entries: Vec<StreamEntry>,
    /// Set when the pseudo set was empty (pure supervised fine-tune).
    pub degenerate: bool,
}

/// Builds the fine-tuning stream: every accepted pseudo sample appears once,
/// accompanied by `ratio` synthetic samples per pseudo sample (cycling the
/// synthetic set when it is too small), shuffled deterministically.
pub fn build_finetune_stream(
    synth_ids: &[String],
    pseudo: &PseudoLabelSet,
    ratio: usize,
    seed: u64,
) -> Result<FinetuneStream> {
    if synth_ids.is_empty() {
        return Err(Error::Config("synthetic set must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if pseudo.accepted.is_empty() {
        // Degenerate stream: supervised continuation only.
        let mut entries: Vec<StreamEntry> = synth_ids
            .iter()
            .map(|id| StreamEntry {
                sample_id: id.clone(),
                source: StreamSource::Synth,
            })
            .collect();
        entries.shuffle(&mut rng);
        return Ok(FinetuneStream {
            entries,
            degenerate: true,
        });
    }
    let n_synth = ratio * pseudo.accepted.len();
    let mut pool: Vec<&String> = synth_ids.iter().collect();
    pool.shuffle(&mut rng);
    let mut entries: Vec<StreamEntry> = Vec::with_capacity(n_synth + pseudo.accepted.len());
    for i in 0..n_synth {
        entries.push(StreamEntry {
            sample_id: pool[i % pool.len()].clone(),
            source: StreamSource::Synth,
        });
    }
    for (id, _) in &pseudo.accepted {
        entries.push(StreamEntry {
            sample_id: id.clone(),
            source: StreamSource::Pseudo,
        });
    }
    entries.shuffle(&mut rng);
    Ok(FinetuneStream {
        entries,
        degenerate: false,
    })
}
