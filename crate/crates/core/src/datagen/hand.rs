//! Flat articulated hand rasterizer.
//!
//! The rig lives in image coordinates (u right, v down). The palm is an
//! ellipse; each finger is a chain of capsule segments whose directions
//! accumulate per-segment flexion angles. Every primitive carries a depth so
//! pixels covered by several primitives resolve to the closest one.

use crate::datagen::HandPoseParams;
use crate::error::{Error, Result};
use crate::types::{DepthMap, Finger, Joint, JointId, JointSet, LabelMap, PALM};

#[derive(Debug, Clone, Copy)]
struct Vec2 {
    x: f64,
    y: f64,
}

impl Vec2 {
    fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }

    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }

    fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }

    fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

/// Capsule segment with linearly interpolated depth along its axis.
#[derive(Debug, Clone)]
struct Capsule {
    a: Vec2,
    b: Vec2,
    radius_a: f64,
    radius_b: f64,
    depth_a: f64,
    depth_b: f64,
    label: u8,
}

impl Capsule {
    /// Coverage test; returns interpolated depth when the pixel is inside.
    fn sample(&self, p: Vec2) -> Option<f64> {
        let ab = self.b.sub(self.a);
        let len2 = ab.dot(ab);
        let t = if len2 <= 1e-12 {
            0.0
        } else {
            (p.sub(self.a).dot(ab) / len2).clamp(0.0, 1.0)
        };
        let closest = self.a.add(ab.scale(t));
        let dist = p.sub(closest).norm();
        let radius = self.radius_a + (self.radius_b - self.radius_a) * t;
        if dist <= radius {
            Some(self.depth_a + (self.depth_b - self.depth_a) * t)
        } else {
            None
        }
    }
}

/// Per-finger layout constants: spread angle off the palm axis, initial
/// pointing direction offset, length factor and attachment radius factor.
const FINGER_LAYOUT: [(f64, f64, f64); 5] = [
    // (spread from palm-up axis, extra base rotation, length factor)
    (-1.45, -0.45, 0.72), // thumb
    (-0.50, 0.22, 0.95),  // index
    (-0.17, 0.06, 1.00),  // middle
    (0.17, -0.06, 0.94),  // ring
    (0.50, -0.22, 0.78),  // little
];

const SEGMENT_FRACTIONS_4: [f64; 4] = [0.32, 0.27, 0.23, 0.18];
const SEGMENT_FRACTIONS_3: [f64; 3] = [0.40, 0.33, 0.27];

struct Rig {
    palm_center: Vec2,
    palm_au: f64,
    palm_av: f64,
    palm_depth: f64,
    rotation: f64,
    capsules: Vec<Capsule>,
    joints: JointSet,
}

fn build_rig(params: &HandPoseParams, size: usize) -> Rig {
    let s = size as f64 / 48.0;
    let palm_center = Vec2::new(size as f64 * 0.5, size as f64 * 0.64);
    let palm_au = 10.0 * s * params.palm_scale;
    let palm_av = 11.5 * s * params.palm_scale;
    let palm_depth = 0.55 + params.camera_depth_offset;
    let rot = params.global_rotation;
    // Hand-local "up" direction.
    let up = Vec2::new(0.0, -1.0).rotate(rot);

    let mut capsules = Vec::new();
    let mut joints = JointSet::zeroed();

    for (f, finger) in Finger::ALL.iter().enumerate() {
        let (spread, base_rot, len_factor) = FINGER_LAYOUT[f];
        let attach_dir = up.rotate(spread);
        // Radius of the palm ellipse along attach_dir (ellipse in rotated frame).
        let local = attach_dir.rotate(-rot);
        let er = 1.0
            / ((local.x / palm_au).powi(2) + (local.y / palm_av).powi(2))
                .sqrt()
                .max(1e-9);
        let attach = palm_center.add(attach_dir.scale(er));

        let total_len = 16.0 * s * params.palm_scale * len_factor;
        let width = params.finger_widths[f] * s;
        let nseg = finger.segment_count();
        let fractions: &[f64] = if nseg == 3 {
            &SEGMENT_FRACTIONS_3
        } else {
            &SEGMENT_FRACTIONS_4
        };

        let mut pos = attach;
        let mut dir = attach_dir.rotate(base_rot);
        // Fingers sit closer to the camera than the palm; depth falls off
        // toward the tip and each finger gets a small deterministic offset so
        // crossings resolve the same way every time.
        let mut depth = palm_depth - 0.035 - 0.004 * f as f64;
        let curl_sign = if *finger == Finger::Thumb { 1.0 } else { 1.0 };
        for seg in 0..nseg {
            let flex = params.finger_angles[f][seg];
            dir = dir.rotate(curl_sign * flex);
            let len = total_len * fractions[seg];
            let end = pos.add(dir.scale(len));
            let taper = 1.0 - 0.08 * seg as f64;
            let depth_end = depth - 0.012;
            capsules.push(Capsule {
                a: pos,
                b: end,
                radius_a: 0.5 * width * taper,
                radius_b: 0.5 * width * (1.0 - 0.08 * (seg + 1) as f64),
                depth_a: depth,
                depth_b: depth_end,
                label: finger.segment_label(seg),
            });
            if seg == 0 {
                let knuckle = match finger {
                    Finger::Thumb => JointId::ThumbKnuckle,
                    Finger::Index => JointId::IndexKnuckle,
                    Finger::Middle => JointId::MiddleKnuckle,
                    Finger::Ring => JointId::RingKnuckle,
                    Finger::Little => JointId::LittleKnuckle,
                };
                joints.set(
                    knuckle,
                    Joint {
                        u: pos.x,
                        v: pos.y,
                        z: depth,
                    },
                );
            }
            pos = end;
            depth = depth_end;
        }
        let tip = match finger {
            Finger::Thumb => JointId::ThumbTip,
            Finger::Index => JointId::IndexTip,
            Finger::Middle => JointId::MiddleTip,
            Finger::Ring => JointId::RingTip,
            Finger::Little => JointId::LittleTip,
        };
        joints.set(
            tip,
            Joint {
                u: pos.x,
                v: pos.y,
                z: depth,
            },
        );
    }

    let wrist = palm_center.add(up.scale(-palm_av));
    joints.set(
        JointId::WristCenter,
        Joint {
            u: wrist.x,
            v: wrist.y,
            z: palm_depth,
        },
    );
    joints.set(
        JointId::PalmCenter,
        Joint {
            u: palm_center.x,
            v: palm_center.y,
            z: palm_depth,
        },
    );
    // Finger bases sit between the palm center and the attachment point.
    let thumb_attach = joints.get(JointId::ThumbKnuckle);
    joints.set(
        JointId::ThumbBase,
        Joint {
            u: 0.5 * (palm_center.x + thumb_attach.u),
            v: 0.5 * (palm_center.y + thumb_attach.v),
            z: palm_depth,
        },
    );
    let little_attach = joints.get(JointId::LittleKnuckle);
    joints.set(
        JointId::LittleBase,
        Joint {
            u: 0.5 * (palm_center.x + little_attach.u),
            v: 0.5 * (palm_center.y + little_attach.v),
            z: palm_depth,
        },
    );

    Rig {
        palm_center,
        palm_au,
        palm_av,
        palm_depth,
        rotation: rot,
        capsules,
        joints,
    }
}

/// Rasterizes `params` into a paired depth map, label map and joint set.
///
/// Every covered pixel takes the label of its closest (smallest depth)
/// primitive; the depth map's foreground mask equals the label map's
/// foreground by construction.
pub fn render_hand(
    params: &HandPoseParams,
    size: usize,
) -> Result<(DepthMap, LabelMap, JointSet)> {
    if size < 24 {
        return Err(Error::Config(format!("image size must be >= 24, got {size}")));
    }
    if params.palm_scale <= 0.0 || params.finger_widths.iter().any(|&w| w <= 0.0) {
        return Err(Error::Contract("non-positive palm_scale or finger width".into()));
    }
    let rig = build_rig(params, size);

    let mut depth = DepthMap::new(size, size);
    let mut labels = LabelMap::new(size, size);

    for v in 0..size {
        for u in 0..size {
            let p = Vec2::new(u as f64 + 0.5, v as f64 + 0.5);
            let mut best: Option<(f64, u8)> = None;
            // Palm ellipse.
            let local = p.sub(rig.palm_center).rotate(-rig.rotation);
            if (local.x / rig.palm_au).powi(2) + (local.y / rig.palm_av).powi(2) <= 1.0 {
                best = Some((rig.palm_depth, PALM));
            }
            for c in &rig.capsules {
                if let Some(d) = c.sample(p) {
                    if best.map_or(true, |(bd, _)| d < bd) {
                        best = Some((d, c.label));
                    }
                }
            }
            if let Some((d, l)) = best {
                let i = depth.idx(u, v);
                depth.values[i] = d.clamp(0.0, 1.0);
                depth.foreground[i] = true;
                labels.labels[i] = l;
            }
        }
    }

    if depth.foreground_count() == 0 {
        return Err(Error::Generation("hand entirely out of frame".into()));
    }
    let bound = size as f64;
    for j in rig.joints.joints.iter() {
        if j.u < 0.0 || j.v < 0.0 || j.u >= bound || j.v >= bound {
            return Err(Error::Generation(format!(
                "joint out of frame at ({:.1}, {:.1})",
                j.u, j.v
            )));
        }
    }
    Ok((depth, labels, rig.joints))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{sample_pose, GeneratorBounds};
    use crate::types::NUM_PARTS;

    fn flat_params() -> HandPoseParams {
        HandPoseParams {
            finger_angles: [[0.0; 4]; 5],
            global_rotation: 0.0,
            palm_scale: 1.0,
            finger_widths: [5.0, 3.8, 3.6, 3.4, 3.0],
            camera_depth_offset: 0.0,
            seed: 0,
        }
    }

    #[test]
    fn flat_hand_shows_all_parts() {
        let (_, labels, _) = render_hand(&flat_params(), 48).unwrap();
        let mut present = vec![false; NUM_PARTS + 1];
        for &l in &labels.labels {
            present[l as usize] = true;
        }
        assert!(present[PALM as usize], "palm missing");
        for l in 1..=NUM_PARTS {
            assert!(present[l], "part {l} missing in flat pose");
        }
    }

    #[test]
    fn flat_hand_has_no_finger_over_palm_interior() {
        // In the extended pose fingers attach at the ellipse boundary, so the
        // inner 70% of the palm must be pure palm label.
        let (_, labels, joints) = render_hand(&flat_params(), 48).unwrap();
        let c = joints.get(crate::types::JointId::PalmCenter);
        for v in 0..48usize {
            for u in 0..48usize {
                let du = (u as f64 + 0.5 - c.u) / (10.0 * 0.7);
                let dv = (v as f64 + 0.5 - c.v) / (11.5 * 0.7);
                if du * du + dv * dv <= 1.0 {
                    assert_eq!(labels.get(u, v), PALM, "non-palm label inside palm at ({u},{v})");
                }
            }
        }
    }

    #[test]
    fn fingertip_joints_touch_their_tip_segments() {
        let (_, labels, joints) = render_hand(&flat_params(), 48).unwrap();
        for (tip_joint, finger) in [
            (JointId::ThumbTip, Finger::Thumb),
            (JointId::IndexTip, Finger::Index),
            (JointId::MiddleTip, Finger::Middle),
            (JointId::RingTip, Finger::Ring),
            (JointId::LittleTip, Finger::Little),
        ] {
            let j = joints.get(tip_joint);
            let label = finger.tip_label();
            // The tip label must appear within 2px of the joint.
            let mut found = false;
            for dv in -2..=2i64 {
                for du in -2..=2i64 {
                    let (u, v) = (j.u as i64 + du, j.v as i64 + dv);
                    if (0..48).contains(&u)
                        && (0..48).contains(&v)
                        && labels.get(u as usize, v as usize) == label
                    {
                        found = true;
                    }
                }
            }
            assert!(found, "tip label {label} not adjacent to joint {tip_joint:?}");
        }
    }

    #[test]
    fn depth_and_label_foreground_agree() {
        let b = GeneratorBounds::default();
        for seed in 0..20 {
            let p = sample_pose(&b, seed).unwrap();
            if let Ok((depth, labels, _)) = render_hand(&p, 48) {
                for i in 0..depth.values.len() {
                    assert_eq!(depth.foreground[i], labels.labels[i] != 0);
                    if depth.foreground[i] {
                        assert!(depth.values[i].is_finite());
                    } else {
                        assert_eq!(depth.values[i], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn per_part_pixel_counts_are_stable_for_fixed_seed() {
        // Frozen regression snapshot for one seed; regenerate deliberately if
        // the rig constants change.
        let b = GeneratorBounds::default();
        let p = sample_pose(&b, 12345).unwrap();
        let (_, labels, _) = render_hand(&p, 48).unwrap();
        let mut counts = vec![0usize; NUM_PARTS + 1];
        for &l in &labels.labels {
            counts[l as usize] += 1;
        }
        let total: usize = counts[1..].iter().sum();
        assert!(total > 300, "foreground unexpectedly small: {total}");
        // Golden counts frozen from the first run at seed 12345; regenerate
        // deliberately (see the ignored printer below) if the rig changes.
        assert_eq!(counts, GOLDEN_SEED_12345, "per-part pixel counts drifted");
    }

    include!("golden_counts.rs");

    #[test]
    #[ignore = "regenerates the golden snapshot"]
    fn print_golden_counts() {
        let b = GeneratorBounds::default();
        let p = sample_pose(&b, 12345).unwrap();
        let (_, labels, _) = render_hand(&p, 48).unwrap();
        let mut counts = vec![0usize; NUM_PARTS + 1];
        for &l in &labels.labels {
            counts[l as usize] += 1;
        }
        println!("const GOLDEN_SEED_12345: [usize; 21] = {counts:?};");
    }
}
