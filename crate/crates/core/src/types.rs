//! Shared image and pose types: depth maps, part-label maps and joint sets.
//!
//! The label alphabet is fixed across the whole pipeline: 0 is background,
//! 1 is the palm, 2..=4 are the thumb segments (proximal to tip) and each
//! remaining finger occupies four consecutive labels (5..=8 index, 9..=12
//! middle, 13..=16 ring, 17..=20 little).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of foreground part labels (palm + 19 finger segments).
pub const NUM_PARTS: usize = 20;
/// Background label.
pub const BACKGROUND: u8 = 0;
/// Palm label.
pub const PALM: u8 = 1;
/// Number of regressed joints.
pub const NUM_JOINTS: usize = 14;

/// Per-pixel depth in normalized units, with an explicit foreground mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub foreground: Vec<bool>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            values: vec![0.0; width * height],
            foreground: vec![false; width * height],
        }
    }

    #[inline]
    pub fn idx(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }

    #[inline]
    pub fn is_foreground(&self, u: usize, v: usize) -> bool {
        self.foreground[v * self.width + u]
    }

    pub fn foreground_count(&self) -> usize {
        self.foreground.iter().filter(|&&f| f).count()
    }
}

/// Per-pixel part labels in `0..=20`; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize) -> Self {
        LabelMap {
            width,
            height,
            labels: vec![BACKGROUND; width * height],
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> u8 {
        self.labels[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, label: u8) {
        self.labels[v * self.width + u] = label;
    }

    /// Label at `(u, v)` reading out-of-bounds cells as background.
    #[inline]
    pub fn get_padded(&self, u: isize, v: isize) -> u8 {
        if u < 0 || v < 0 || u as usize >= self.width || v as usize >= self.height {
            BACKGROUND
        } else {
            self.labels[v as usize * self.width + u as usize]
        }
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != BACKGROUND).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.width * self.height {
            return Err(Error::Contract("label buffer size mismatch".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l as usize > NUM_PARTS) {
            return Err(Error::Contract(format!("label {bad} out of range 0..=20")));
        }
        Ok(())
    }
}

/// Identities of the 14 regressed joints, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum JointId {
    ThumbTip = 0,
    ThumbKnuckle = 1,
    IndexTip = 2,
    IndexKnuckle = 3,
    MiddleTip = 4,
    MiddleKnuckle = 5,
    RingTip = 6,
    RingKnuckle = 7,
    LittleTip = 8,
    LittleKnuckle = 9,
    WristCenter = 10,
    PalmCenter = 11,
    ThumbBase = 12,
    LittleBase = 13,
}

impl JointId {
    pub const ALL: [JointId; NUM_JOINTS] = [
        JointId::ThumbTip,
        JointId::ThumbKnuckle,
        JointId::IndexTip,
        JointId::IndexKnuckle,
        JointId::MiddleTip,
        JointId::MiddleKnuckle,
        JointId::RingTip,
        JointId::RingKnuckle,
        JointId::LittleTip,
        JointId::LittleKnuckle,
        JointId::WristCenter,
        JointId::PalmCenter,
        JointId::ThumbBase,
        JointId::LittleBase,
    ];

    pub fn name(self) -> &'static str {
        match self {
            JointId::ThumbTip => "thumb_tip",
            JointId::ThumbKnuckle => "thumb_knuckle",
            JointId::IndexTip => "index_tip",
            JointId::IndexKnuckle => "index_knuckle",
            JointId::MiddleTip => "middle_tip",
            JointId::MiddleKnuckle => "middle_knuckle",
            JointId::RingTip => "ring_tip",
            JointId::RingKnuckle => "ring_knuckle",
            JointId::LittleTip => "little_tip",
            JointId::LittleKnuckle => "little_knuckle",
            JointId::WristCenter => "wrist_center",
            JointId::PalmCenter => "palm_center",
            JointId::ThumbBase => "thumb_base",
            JointId::LittleBase => "little_base",
        }
    }
}

/// One joint position: pixel coordinates plus depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub u: f64,
    pub v: f64,
    pub z: f64,
}

/// The 14 joint positions of one frame, indexed by [`JointId`].
#[derive(Debug, Clone, PartialEq)]
pub struct JointSet {
    pub joints: [Joint; NUM_JOINTS],
}

impl JointSet {
    pub fn zeroed() -> Self {
        JointSet {
            joints: [Joint {
                u: 0.0,
                v: 0.0,
                z: 0.0,
            }; NUM_JOINTS],
        }
    }

    #[inline]
    pub fn get(&self, id: JointId) -> Joint {
        self.joints[id as usize]
    }

    #[inline]
    pub fn set(&mut self, id: JointId, j: Joint) {
        self.joints[id as usize] = j;
    }
}

/// Finger index, in label-table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Finger {
    Thumb = 0,
    Index = 1,
    Middle = 2,
    Ring = 3,
    Little = 4,
}

impl Finger {
    pub const ALL: [Finger; 5] = [
        Finger::Thumb,
        Finger::Index,
        Finger::Middle,
        Finger::Ring,
        Finger::Little,
    ];

    /// Number of rasterized segments: 3 for the thumb, 4 otherwise.
    pub fn segment_count(self) -> usize {
        match self {
            Finger::Thumb => 3,
            _ => 4,
        }
    }

    /// Label of segment `seg` (0 = proximal) of this finger.
    pub fn segment_label(self, seg: usize) -> u8 {
        debug_assert!(seg < self.segment_count());
        match self {
            Finger::Thumb => 2 + seg as u8,
            Finger::Index => 5 + seg as u8,
            Finger::Middle => 9 + seg as u8,
            Finger::Ring => 13 + seg as u8,
            Finger::Little => 17 + seg as u8,
        }
    }

    /// Label of this finger's tip segment.
    pub fn tip_label(self) -> u8 {
        self.segment_label(self.segment_count() - 1)
    }

    /// Label of this finger's proximal segment.
    pub fn proximal_label(self) -> u8 {
        self.segment_label(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_labels_cover_2_to_20() {
        let mut seen = vec![false; NUM_PARTS + 1];
        seen[PALM as usize] = true;
        for f in Finger::ALL {
            for s in 0..f.segment_count() {
                let l = f.segment_label(s) as usize;
                assert!(!seen[l], "label {l} assigned twice");
                seen[l] = true;
            }
        }
        assert!(seen[1..].iter().all(|&s| s));
        assert!(!seen[0]);
    }

    #[test]
    fn padded_reads_are_background_outside() {
        let mut m = LabelMap::new(4, 4);
        m.set(0, 0, 7);
        assert_eq!(m.get_padded(-1, 0), BACKGROUND);
        assert_eq!(m.get_padded(0, 4), BACKGROUND);
        assert_eq!(m.get_padded(0, 0), 7);
    }

    #[test]
    fn label_validation_rejects_out_of_range() {
        let mut m = LabelMap::new(2, 2);
        m.set(0, 0, 21);
        assert!(m.validate().is_err());
    }
}
