//! Per-joint pose regressors. Each of the 14 joints gets an independent
//! one-hidden-layer perceptron over a fused feature vector: the depth map
//! downsampled to 24x24 plus statistics of the joint's segmentation mask.
//! Training minimizes squared L2 over (u, v, z) with adaptive-moment updates.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::supervision::JointLabelTable;
use crate::types::{DepthMap, Joint, JointSet, LabelMap, NUM_JOINTS};

use super::mlp::{AdamState, Grads, Mlp};
use super::morphology::joint_masks;
use super::RegTrainConfig;

const DOWN: usize = 24;
/// Downsampled depth (24*24) plus the 9-entry mask-statistics block.
pub const REG_FEATURE_LEN: usize = DOWN * DOWN + 9;

/// Whether the regressor sees segmentation-derived statistics or depth only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegInputMode {
    /// Mask-statistics block forced to zero (no segmentation input).
    DepthOnly,
    /// Depth features fused with per-joint mask statistics.
    Fused,
}

/// 14 independent per-joint networks.
#[derive(Debug, Clone, PartialEq)]
pub struct RegModel {
    pub mode: RegInputMode,
    pub opening_radius: usize,
    pub nets: Vec<Mlp>,
}

impl RegModel {
    pub fn init(hidden: usize, mode: RegInputMode, opening_radius: usize, seed: u64) -> Self {
        RegModel {
            mode,
            opening_radius,
            nets: (0..NUM_JOINTS)
                .map(|j| Mlp::init(REG_FEATURE_LEN, hidden, 3, seed ^ (j as u64) << 32))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.nets.iter().all(Mlp::all_finite)
    }
}

/// Mean of the depth values over cells falling in each 24x24 bin.
fn downsample_depth(depth: &DepthMap) -> Vec<f64> {
    let mut sum = vec![0.0; DOWN * DOWN];
    let mut cnt = vec![0u32; DOWN * DOWN];
    for v in 0..depth.height {
        let bv = v * DOWN / depth.height;
        for u in 0..depth.width {
            let bu = u * DOWN / depth.width;
            sum[bv * DOWN + bu] += depth.values[v * depth.width + u];
            cnt[bv * DOWN + bu] += 1;
        }
    }
    sum.iter()
        .zip(&cnt)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect()
}

/// Statistics of one binary mask over the depth map: area fraction,
/// centroid (u, v) normalized by image size, second central moments
/// normalized by size^2, and masked-depth mean/min/max. All zero when the
/// mask is empty.
fn mask_stats(depth: &DepthMap, mask: &[bool]) -> [f64; 9] {
    let (w, h) = (depth.width, depth.height);
    let mut n = 0usize;
    let (mut su, mut sv) = (0.0f64, 0.0f64);
    let (mut sd, mut dmin, mut dmax) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for v in 0..h {
        for u in 0..w {
            if !mask[v * w + u] {
                continue;
            }
            n += 1;
            su += u as f64;
            sv += v as f64;
            let d = depth.values[v * w + u];
            sd += d;
            dmin = dmin.min(d);
            dmax = dmax.max(d);
        }
    }
    if n == 0 {
        return [0.0; 9];
    }
    let nf = n as f64;
    let (cu, cv) = (su / nf, sv / nf);
    let (mut muu, mut mvv, mut muv) = (0.0f64, 0.0f64, 0.0f64);
    for v in 0..h {
        for u in 0..w {
            if mask[v * w + u] {
                let (du, dv) = (u as f64 - cu, v as f64 - cv);
                muu += du * du;
                mvv += dv * dv;
                muv += du * dv;
            }
        }
    }
    let area2 = (w * h) as f64;
    let wh = (w as f64) * (h as f64);
    [
        nf / area2,
        cu / w as f64,
        cv / h as f64,
        muu / (nf * wh),
        mvv / (nf * wh),
        muv / (nf * wh),
        sd / nf,
        dmin,
        dmax,
    ]
}

/// Feature vector for one joint given a depth map and segmentation.
pub fn reg_features(
    depth: &DepthMap,
    mask: &[bool],
    mode: RegInputMode,
) -> Vec<f64> {
    let mut f = downsample_depth(depth);
    match mode {
        RegInputMode::DepthOnly => f.extend([0.0; 9]),
        RegInputMode::Fused => f.extend(mask_stats(depth, mask)),
    }
    f
}

/// Per-sample features for all joints.
pub fn sample_features(
    depth: &DepthMap,
    seg: &LabelMap,
    table: &JointLabelTable,
    mode: RegInputMode,
    opening_radius: usize,
) -> Vec<Vec<f64>> {
    let masks = joint_masks(seg, table, opening_radius);
    (0..NUM_JOINTS)
        .map(|j| reg_features(depth, &masks[j], mode))
        .collect()
}

/// Mean foreground depth, added back to predicted z.
pub fn reference_depth(raw: &DepthMap) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (d, &fg) in raw.values.iter().zip(&raw.foreground) {
        if fg {
            sum += d;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// One training frame: per-joint features plus (u, v, z - reference) targets.
pub struct RegExample {
    pub features: Vec<Vec<f64>>,
    pub targets: [[f64; 3]; NUM_JOINTS],
}

/// Builds a training frame. `norm_depth` feeds the features; `raw_depth`
/// supplies the reference depth subtracted from target z.
pub fn build_reg_example(
    raw_depth: &DepthMap,
    norm_depth: &DepthMap,
    seg: &LabelMap,
    joints: &JointSet,
    table: &JointLabelTable,
    mode: RegInputMode,
    opening_radius: usize,
) -> RegExample {
    let reference = reference_depth(raw_depth);
    let features = sample_features(norm_depth, seg, table, mode, opening_radius);
    let targets = std::array::from_fn(|j| {
        let jt = &joints.joints[j];
        [jt.u, jt.v, jt.z - reference]
    });
    RegExample { features, targets }
}

/// Mean squared L2 loss and gradient for one joint's network over a batch
/// of (feature, target) pairs.
pub fn reg_loss_grad(
    net: &Mlp,
    batch: &[(&Vec<f64>, &[f64; 3])],
) -> Result<(f64, Grads)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty regressor batch".into()));
    }
    let mut g = Grads::zeros(net);
    let mut loss = 0.0;
    for (x, t) in batch {
        let (h, y) = net.forward(x);
        let mut dy = [0.0; 3];
        for o in 0..3 {
            let e = y[o] - t[o];
            loss += e * e;
            dy[o] = 2.0 * e;
        }
        net.backward(x, &h, &dy, &mut g);
    }
    let inv = 1.0 / batch.len() as f64;
    g.scale(inv);
    let loss = loss * inv;
    if !loss.is_finite() {
        return Err(Error::Divergence("non-finite regressor loss".into()));
    }
    Ok((loss, g))
}

fn train_one_joint(
    joint: usize,
    examples: &[RegExample],
    cfg: &RegTrainConfig,
    seed: u64,
) -> Result<Mlp> {
    let mut net = Mlp::init(REG_FEATURE_LEN, cfg.hidden, 3, seed);
    let mut adam = AdamState::new(net.param_count(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0xD1B54A32D192ED03));
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<(&Vec<f64>, &[f64; 3])> = chunk
                .iter()
                .map(|&i| (&examples[i].features[joint], &examples[i].targets[joint]))
                .collect();
            let (loss, g) = reg_loss_grad(&net, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "regressor joint {joint} diverged at epoch {epoch}"
                )));
            }
            adam.step(&mut net, &g);
        }
    }
    if !net.all_finite() {
        return Err(Error::Divergence(format!(
            "regressor joint {joint} parameters non-finite"
        )));
    }
    Ok(net)
}

/// Trains all 14 joint networks (in parallel, independent seeds).
pub fn train_regressor(
    examples: &[RegExample],
    mode: RegInputMode,
    cfg: &RegTrainConfig,
    seed: u64,
) -> Result<RegModel> {
    if examples.is_empty() {
        return Err(Error::Contract("no regressor training frames".into()));
    }
    let nets: Vec<Mlp> = (0..NUM_JOINTS)
        .into_par_iter()
        .map(|j| train_one_joint(j, examples, cfg, seed ^ ((j as u64) << 32)))
        .collect::<Result<Vec<_>>>()?;
    Ok(RegModel {
        mode,
        opening_radius: cfg.opening_radius,
        nets,
    })
}

/// Predicts all 14 joints; z gets the reference depth added back.
pub fn predict_pose(
    model: &RegModel,
    raw_depth: &DepthMap,
    norm_depth: &DepthMap,
    seg: &LabelMap,
    table: &JointLabelTable,
) -> JointSet {
    let reference = reference_depth(raw_depth);
    let features = sample_features(norm_depth, seg, table, model.mode, model.opening_radius);
    let joints = std::array::from_fn(|j| {
        let (_, y) = model.nets[j].forward(&features[j]);
        Joint {
            u: y[0],
            v: y[1],
            z: y[2] + reference,
        }
    });
    JointSet { joints }
}
