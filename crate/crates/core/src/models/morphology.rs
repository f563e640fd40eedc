//! Binary morphology on label-derived masks: disc-structured opening used
//! to clean per-joint part regions before feature pooling.

use crate::supervision::JointLabelTable;
use crate::types::{JointId, LabelMap, NUM_JOINTS};

/// Offsets of a disc structuring element: all (du, dv) with
/// du^2 + dv^2 <= radius^2.
pub fn disc_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dv in -r..=r {
        for du in -r..=r {
            if du * du + dv * dv <= r * r {
                out.push((du, dv));
            }
        }
    }
    out
}

fn erode(mask: &[bool], w: usize, h: usize, se: &[(isize, isize)]) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for v in 0..h as isize {
        'px: for u in 0..w as isize {
            for &(du, dv) in se {
                let (cu, cv) = (u + du, v + dv);
                if cu < 0 || cv < 0 || cu >= w as isize || cv >= h as isize {
                    continue 'px; // outside the image counts as background
                }
                if !mask[cv as usize * w + cu as usize] {
                    continue 'px;
                }
            }
            out[v as usize * w + u as usize] = true;
        }
    }
    out
}

fn dilate(mask: &[bool], w: usize, h: usize, se: &[(isize, isize)]) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for v in 0..h as isize {
        for u in 0..w as isize {
            if !mask[v as usize * w + u as usize] {
                continue;
            }
            for &(du, dv) in se {
                let (cu, cv) = (u + du, v + dv);
                if cu >= 0 && cv >= 0 && cu < w as isize && cv < h as isize {
                    out[cv as usize * w + cu as usize] = true;
                }
            }
        }
    }
    out
}

/// Morphological opening (erosion then dilation) with a disc of `radius`.
/// Radius 0 is the identity.
pub fn opening(mask: &[bool], w: usize, h: usize, radius: usize) -> Vec<bool> {
    if radius == 0 {
        return mask.to_vec();
    }
    let se = disc_offsets(radius);
    dilate(&erode(mask, w, h, &se), w, h, &se)
}

/// Per-joint binary masks: union of the joint's associated part labels,
/// then opening with a disc of `radius`.
pub fn joint_masks(
    seg: &LabelMap,
    table: &JointLabelTable,
    radius: usize,
) -> [Vec<bool>; NUM_JOINTS] {
    std::array::from_fn(|j| {
        let labels = table.labels_for(JointId::ALL[j]);
        let raw: Vec<bool> = seg.labels.iter().map(|l| labels.contains(l)).collect();
        opening(&raw, seg.width, seg.height, radius)
    })
}
