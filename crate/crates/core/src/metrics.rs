//! Evaluation quantities: per-pixel and per-class segmentation accuracy,
//! mean joint error in 2-D and 3-D, the frames-within-threshold curve, and
//! comparison tables across pipeline variants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{JointId, JointSet, LabelMap, NUM_JOINTS, NUM_PARTS};

/// Segmentation accuracy over the truth foreground.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegScore {
    /// Fraction of truth-foreground pixels with the correct label.
    pub per_pixel: f64,
    /// Unweighted mean of per-class recalls over classes present in truth.
    pub per_class: f64,
    /// Recall per part label 1..=20; `None` when the class is absent.
    pub per_class_breakdown: Vec<Option<f64>>,
}

/// Physical scales used to report pixel/depth-unit errors in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseUnits {
    /// Millimetres per image pixel (applies to u and v).
    pub mm_per_pixel: f64,
    /// Millimetres per normalized depth unit (applies to z).
    pub mm_per_depth_unit: f64,
}

impl Default for PoseUnits {
    fn default() -> Self {
        PoseUnits {
            mm_per_pixel: 2.0,
            mm_per_depth_unit: 100.0,
        }
    }
}

/// Per-frame joint errors in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePoseError {
    pub per_joint_2d: [f64; NUM_JOINTS],
    pub per_joint_3d: [f64; NUM_JOINTS],
}

impl FramePoseError {
    pub fn max_3d(&self) -> f64 {
        self.per_joint_3d.iter().cloned().fold(0.0, f64::max)
    }

    pub fn mean_2d(&self) -> f64 {
        self.per_joint_2d.iter().sum::<f64>() / NUM_JOINTS as f64
    }

    pub fn mean_3d(&self) -> f64 {
        self.per_joint_3d.iter().sum::<f64>() / NUM_JOINTS as f64
    }
}

/// Aggregated pose accuracy over a set of frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseScore {
    pub mean_2d: f64,
    pub mean_3d: f64,
    pub per_joint_2d: Vec<f64>,
    pub per_joint_3d: Vec<f64>,
    /// (threshold mm, fraction of frames with all joints within it).
    pub threshold_curve: Vec<(f64, f64)>,
}

/// Compares a predicted label map against ground truth. Evaluation is
/// restricted to truth-foreground pixels (truth label != 0).
pub fn seg_accuracy(pred: &LabelMap, truth: &LabelMap) -> Result<SegScore> {
    if pred.width != truth.width || pred.height != truth.height {
        return Err(Error::Contract(format!(
            "dimension mismatch: pred {}x{} vs truth {}x{}",
            pred.width, pred.height, truth.width, truth.height
        )));
    }
    let mut correct = [0u64; NUM_PARTS + 1];
    let mut total = [0u64; NUM_PARTS + 1];
    for (p, t) in pred.labels.iter().zip(&truth.labels) {
        if *t == 0 {
            continue;
        }
        total[*t as usize] += 1;
        if p == t {
            correct[*t as usize] += 1;
        }
    }
    let fg: u64 = total[1..].iter().sum();
    if fg == 0 {
        return Err(Error::Contract("truth has no foreground pixels".into()));
    }
    let per_pixel = correct[1..].iter().sum::<u64>() as f64 / fg as f64;
    let per_class_breakdown: Vec<Option<f64>> = (1..=NUM_PARTS)
        .map(|c| (total[c] > 0).then(|| correct[c] as f64 / total[c] as f64))
        .collect();
    let present: Vec<f64> = per_class_breakdown.iter().flatten().cloned().collect();
    let per_class = present.iter().sum::<f64>() / present.len() as f64;
    Ok(SegScore {
        per_pixel,
        per_class,
        per_class_breakdown,
    })
}

/// Per-joint 2-D and 3-D errors for one frame, in millimetres.
pub fn pose_error(pred: &JointSet, truth: &JointSet, units: PoseUnits) -> FramePoseError {
    let mut e2 = [0.0; NUM_JOINTS];
    let mut e3 = [0.0; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        let (a, b) = (&pred.joints[j], &truth.joints[j]);
        let du = (a.u - b.u) * units.mm_per_pixel;
        let dv = (a.v - b.v) * units.mm_per_pixel;
        let dz = (a.z - b.z) * units.mm_per_depth_unit;
        e2[j] = (du * du + dv * dv).sqrt();
        e3[j] = (du * du + dv * dv + dz * dz).sqrt();
    }
    FramePoseError {
        per_joint_2d: e2,
        per_joint_3d: e3,
    }
}

/// Default threshold grid: 0 to 80 mm in steps of 4 mm.
pub fn default_threshold_grid() -> Vec<f64> {
    (0..=20).map(|i| (i * 4) as f64).collect()
}

/// Fraction of frames whose maximum joint 3-D error is within each
/// threshold of the grid.
pub fn threshold_curve(max_errors: &[f64], grid: &[f64]) -> Vec<(f64, f64)> {
    let n = max_errors.len().max(1) as f64;
    grid.iter()
        .map(|&t| {
            let within = max_errors.iter().filter(|&&e| e <= t).count();
            (t, within as f64 / n)
        })
        .collect()
}

/// Aggregates per-frame errors into a [`PoseScore`].
pub fn pose_score(frames: &[FramePoseError], grid: &[f64]) -> Result<PoseScore> {
    if frames.is_empty() {
        return Err(Error::Contract("no frames to score".into()));
    }
    let n = frames.len() as f64;
    let mut per_joint_2d = vec![0.0; NUM_JOINTS];
    let mut per_joint_3d = vec![0.0; NUM_JOINTS];
    for f in frames {
        for j in 0..NUM_JOINTS {
            per_joint_2d[j] += f.per_joint_2d[j];
            per_joint_3d[j] += f.per_joint_3d[j];
        }
    }
    per_joint_2d.iter_mut().for_each(|e| *e /= n);
    per_joint_3d.iter_mut().for_each(|e| *e /= n);
    let maxes: Vec<f64> = frames.iter().map(FramePoseError::max_3d).collect();
    Ok(PoseScore {
        mean_2d: per_joint_2d.iter().sum::<f64>() / NUM_JOINTS as f64,
        mean_3d: per_joint_3d.iter().sum::<f64>() / NUM_JOINTS as f64,
        per_joint_2d,
        per_joint_3d,
        threshold_curve: threshold_curve(&maxes, grid),
    })
}

/// One pipeline variant's scores for the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub name: String,
    pub seg: Option<SegScore>,
    pub pose: Option<PoseScore>,
}

/// Rendered comparison across variants.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub csv: String,
    pub text: String,
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "-".into(),
    }
}

fn fmt_delta(v: Option<f64>, base: Option<f64>) -> String {
    match (v, base) {
        (Some(a), Some(b)) => format!("{:+.4}", a - b),
        _ => "-".into(),
    }
}

/// Emits CSV and aligned-text tables with deltas against the named
/// baseline variant.
pub fn comparison_report(runs: &[VariantResult], baseline: &str) -> Result<ComparisonReport> {
    let base = runs
        .iter()
        .find(|r| r.name == baseline)
        .ok_or_else(|| Error::Contract(format!("baseline variant '{baseline}' not found")))?
        .clone();
    let b_pp = base.seg.as_ref().map(|s| s.per_pixel);
    let b_pc = base.seg.as_ref().map(|s| s.per_class);
    let b_2d = base.pose.as_ref().map(|p| p.mean_2d);
    let b_3d = base.pose.as_ref().map(|p| p.mean_3d);

    let header = [
        "variant",
        "seg_per_pixel",
        "seg_per_pixel_delta",
        "seg_per_class",
        "seg_per_class_delta",
        "pose_2d_mm",
        "pose_2d_delta",
        "pose_3d_mm",
        "pose_3d_delta",
    ];
    let mut rows: Vec<[String; 9]> = Vec::new();
    for r in runs {
        let pp = r.seg.as_ref().map(|s| s.per_pixel);
        let pc = r.seg.as_ref().map(|s| s.per_class);
        let e2 = r.pose.as_ref().map(|p| p.mean_2d);
        let e3 = r.pose.as_ref().map(|p| p.mean_3d);
        rows.push([
            r.name.clone(),
            fmt_opt(pp),
            fmt_delta(pp, b_pp),
            fmt_opt(pc),
            fmt_delta(pc, b_pc),
            fmt_opt(e2),
            fmt_delta(e2, b_2d),
            fmt_opt(e3),
            fmt_delta(e3, b_3d),
        ]);
    }

    let mut csv = header.join(",");
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.join(","));
        csv.push('\n');
    }

    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut text = String::new();
    let render = |cells: &[String], widths: &[usize], out: &mut String| {
        let line: Vec<String> = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<width$}", width = *w))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    };
    let header_cells: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    render(&header_cells, &widths, &mut text);
    for row in &rows {
        render(row, &widths, &mut text);
    }
    Ok(ComparisonReport { csv, text })
}

/// CSV of per-joint errors for one variant.
pub fn pose_csv(score: &PoseScore) -> String {
    let mut s = String::from("joint,error_2d_mm,error_3d_mm\n");
    for j in 0..NUM_JOINTS {
        s.push_str(&format!(
            "{},{:.17e},{:.17e}\n",
            JointId::ALL[j].name(),
            score.per_joint_2d[j],
            score.per_joint_3d[j]
        ));
    }
    s.push_str(&format!(
        "mean,{:.17e},{:.17e}\n",
        score.mean_2d, score.mean_3d
    ));
    s
}

/// CSV of the frames-within-threshold curve.
pub fn curve_csv(score: &PoseScore) -> String {
    let mut s = String::from("threshold_mm,fraction_within\n");
    for (t, f) in &score.threshold_curve {
        s.push_str(&format!("{t},{f:.17e}\n"));
    }
    s
}

/// CSV of segmentation scores (one row per variant).
pub fn seg_csv(runs: &[(String, SegScore)]) -> String {
    let mut s = String::from("variant,per_pixel,per_class\n");
    for (name, score) in runs {
        s.push_str(&format!(
            "{name},{:.17e},{:.17e}\n",
            score.per_pixel, score.per_class
        ));
    }
    s
}
