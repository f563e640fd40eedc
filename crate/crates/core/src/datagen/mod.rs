//! Procedural generation of paired (depth, part labels, joints) samples.
//!
//! The hand model is a flat articulated rig: an elliptical palm plus five
//! finger chains made of capsule segments. Primitives carry depth values and
//! are composited with a painter's algorithm, so flexed fingers occlude the
//! palm and each other the way a real depth sensor would see them. A separate
//! degradation pass ([`apply_sensor_noise`]) turns clean renders into a
//! "real-proxy" domain with noise, quantization, holes and silhouette erosion.

mod hand;
mod io;

pub use hand::render_hand;
pub use io::{
    load_sample, read_depth_pgm, read_joints_csv, read_label_pgm, write_depth_pgm,
    write_joints_csv, write_label_pgm, write_sample, DatasetManifest, Sample, SampleRef, Split,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DepthMap, Finger};

/// Inclusive interval used for sampled pose parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !self.lo.is_finite() || !self.hi.is_finite() || self.lo > self.hi {
            return Err(Error::Config(format!(
                "empty or non-finite interval for {name}: [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// Physiological sampling bounds for [`sample_pose`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorBounds {
    /// Flexion bounds per segment index (0 = proximal). Fingers with fewer
    /// segments use a prefix.
    pub flexion: [Interval; 4],
    pub global_rotation: Interval,
    pub palm_scale: Interval,
    /// Width bounds per finger (thumb first), in pixels at the 48px reference.
    pub finger_widths: [Interval; 5],
    pub camera_depth_offset: Interval,
}

impl Default for GeneratorBounds {
    fn default() -> Self {
        GeneratorBounds {
            flexion: [
                Interval::new(-0.10, 0.55),
                Interval::new(0.0, 0.65),
                Interval::new(0.0, 0.55),
                Interval::new(0.0, 0.45),
            ],
            global_rotation: Interval::new(-0.35, 0.35),
            palm_scale: Interval::new(0.85, 1.1),
            finger_widths: [
                Interval::new(4.4, 5.4),
                Interval::new(3.4, 4.0),
                Interval::new(3.2, 3.8),
                Interval::new(3.0, 3.6),
                Interval::new(2.6, 3.2),
            ],
            camera_depth_offset: Interval::new(-0.08, 0.08),
        }
    }
}

impl GeneratorBounds {
    pub fn validate(&self) -> Result<()> {
        for (i, iv) in self.flexion.iter().enumerate() {
            iv.validate(&format!("flexion[{i}]"))?;
        }
        self.global_rotation.validate("global_rotation")?;
        self.palm_scale.validate("palm_scale")?;
        if self.palm_scale.lo <= 0.0 {
            return Err(Error::Config("palm_scale bound must be positive".into()));
        }
        for (i, iv) in self.finger_widths.iter().enumerate() {
            iv.validate(&format!("finger_widths[{i}]"))?;
            if iv.lo <= 0.0 {
                return Err(Error::Config(format!(
                    "finger_widths[{i}] bound must be positive"
                )));
            }
        }
        self.camera_depth_offset.validate("camera_depth_offset")
    }
}

/// One sampled hand configuration; a pure function of bounds and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandPoseParams {
    /// Flexion angle per finger and segment, radians. Thumb uses 3 entries.
    pub finger_angles: [[f64; 4]; 5],
    pub global_rotation: f64,
    pub palm_scale: f64,
    pub finger_widths: [f64; 5],
    pub camera_depth_offset: f64,
    pub seed: u64,
}

/// Draws pose parameters uniformly inside `bounds`, deterministically per seed.
pub fn sample_pose(bounds: &GeneratorBounds, seed: u64) -> Result<HandPoseParams> {
    bounds.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut finger_angles = [[0.0; 4]; 5];
    for (f, finger) in Finger::ALL.iter().enumerate() {
        for s in 0..finger.segment_count() {
            finger_angles[f][s] = bounds.flexion[s].sample(&mut rng);
        }
    }
    let global_rotation = bounds.global_rotation.sample(&mut rng);
    let palm_scale = bounds.palm_scale.sample(&mut rng);
    let mut finger_widths = [0.0; 5];
    for f in 0..5 {
        finger_widths[f] = bounds.finger_widths[f].sample(&mut rng);
    }
    let camera_depth_offset = bounds.camera_depth_offset.sample(&mut rng);
    Ok(HandPoseParams {
        finger_angles,
        global_rotation,
        palm_scale,
        finger_widths,
        camera_depth_offset,
        seed,
    })
}

/// Sensor degradation applied to clean renders to build the real-proxy domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainShiftConfig {
    pub gaussian_depth_sigma: f64,
    pub hole_probability: f64,
    pub quantization_step: f64,
    pub edge_erosion_radius: usize,
    pub seed: u64,
}

impl DomainShiftConfig {
    pub fn identity(seed: u64) -> Self {
        DomainShiftConfig {
            gaussian_depth_sigma: 0.0,
            hole_probability: 0.0,
            quantization_step: 0.0,
            edge_erosion_radius: 0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gaussian_depth_sigma < 0.0
            || self.quantization_step < 0.0
            || !(0.0..=1.0).contains(&self.hole_probability)
        {
            return Err(Error::Config("invalid domain shift config".into()));
        }
        Ok(())
    }
}

impl Default for DomainShiftConfig {
    fn default() -> Self {
        DomainShiftConfig {
            gaussian_depth_sigma: 0.02,
            hole_probability: 0.03,
            quantization_step: 0.01,
            edge_erosion_radius: 0,
            seed: 0,
        }
    }
}

/// Degrades a clean depth map. The paired label map is left untouched.
pub fn apply_sensor_noise(d: &DepthMap, cfg: &DomainShiftConfig) -> DepthMap {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = d.clone();
    // Additive Gaussian noise (Box-Muller to stay independent of distr crates).
    for i in 0..out.values.len() {
        if !out.foreground[i] {
            continue;
        }
        if cfg.gaussian_depth_sigma > 0.0 {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let g = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            out.values[i] = (out.values[i] + cfg.gaussian_depth_sigma * g).clamp(0.0, 1.0);
        }
        if cfg.quantization_step > 0.0 {
            out.values[i] = (out.values[i] / cfg.quantization_step).round() * cfg.quantization_step;
        }
    }
    // Random holes.
    if cfg.hole_probability > 0.0 {
        for i in 0..out.values.len() {
            if out.foreground[i] && rng.gen_range(0.0..1.0) < cfg.hole_probability {
                out.foreground[i] = false;
                out.values[i] = 0.0;
            }
        }
    }
    // Erode the silhouette: drop foreground pixels within radius of background.
    if cfg.edge_erosion_radius > 0 {
        let r = cfg.edge_erosion_radius as isize;
        let (w, h) = (out.width as isize, out.height as isize);
        let before = out.foreground.clone();
        for v in 0..h {
            for u in 0..w {
                let i = (v * w + u) as usize;
                if !before[i] {
                    continue;
                }
                'scan: for dv in -r..=r {
                    for du in -r..=r {
                        let (uu, vv) = (u + du, v + dv);
                        if uu < 0 || vv < 0 || uu >= w || vv >= h {
                            continue;
                        }
                        if !before[(vv * w + uu) as usize] {
                            out.foreground[i] = false;
                            out.values[i] = 0.0;
                            break 'scan;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Standard-deviation floor for contrast normalization, in normalized depth.
pub const CONTRAST_EPS: f64 = 1e-2;

/// Subtracts the windowed foreground mean and divides by the windowed
/// standard deviation (floored at [`CONTRAST_EPS`]) at every foreground pixel.
pub fn local_contrast_normalize(d: &DepthMap, kernel: usize) -> Result<DepthMap> {
    if kernel < 3 || kernel % 2 == 0 {
        return Err(Error::Config(format!(
            "contrast kernel must be odd and >= 3, got {kernel}"
        )));
    }
    let r = (kernel / 2) as isize;
    let (w, h) = (d.width as isize, d.height as isize);
    let mut out = d.clone();
    for v in 0..h {
        for u in 0..w {
            let i = (v * w + u) as usize;
            if !d.foreground[i] {
                out.values[i] = 0.0;
                continue;
            }
            let mut sum = 0.0;
            let mut sum2 = 0.0;
            let mut n = 0.0;
            for dv in -r..=r {
                for du in -r..=r {
                    let (uu, vv) = (u + du, v + dv);
                    if uu < 0 || vv < 0 || uu >= w || vv >= h {
                        continue;
                    }
                    let j = (vv * w + uu) as usize;
                    if d.foreground[j] {
                        sum += d.values[j];
                        sum2 += d.values[j] * d.values[j];
                        n += 1.0;
                    }
                }
            }
            let mean = sum / n;
            let var = (sum2 / n - mean * mean).max(0.0);
            out.values[i] = (d.values[i] - mean) / var.sqrt().max(CONTRAST_EPS);
        }
    }
    Ok(out)
}

/// Full generator configuration for [`generate_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub image_size: usize,
    pub bounds: GeneratorBounds,
    pub shift: DomainShiftConfig,
    pub master_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            image_size: 48,
            bounds: GeneratorBounds::default(),
            shift: DomainShiftConfig::default(),
            master_seed: 1,
        }
    }
}

/// Generates one clean sample for a sample seed, retrying nearby seeds when a
/// pose lands out of frame.
pub fn generate_sample(cfg: &DatasetConfig, sample_seed: u64) -> Result<Sample> {
    // Seeds are spaced so retry probes never collide with other samples.
    for attempt in 0..16u64 {
        let seed = sample_seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(attempt);
        let params = sample_pose(&cfg.bounds, seed)?;
        match render_hand(&params, cfg.image_size) {
            Ok((depth, labels, joints)) => {
                return Ok(Sample {
                    depth,
                    labels,
                    joints,
                    params,
                })
            }
            Err(Error::Generation(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Generation(format!(
        "no in-frame pose found for sample seed {sample_seed}"
    )))
}

/// Writes the three splits (synthetic clean, real-proxy degraded, held-out
/// degraded test) plus a manifest under `root`.
pub fn generate_dataset(
    root: &std::path::Path,
    n_synth: usize,
    n_real_proxy: usize,
    n_test: usize,
    cfg: &DatasetConfig,
) -> Result<DatasetManifest> {
    if n_synth < 1 || n_real_proxy < 1 || n_test < 1 {
        return Err(Error::Config("split counts must be >= 1".into()));
    }
    let mut manifest = DatasetManifest::new(cfg.clone(), n_synth, n_real_proxy, n_test);
    let plan = [
        (Split::Synth, 0u64, n_synth, false),
        (Split::Real, 1_000_000, n_real_proxy, true),
        (Split::Test, 2_000_000, n_test, true),
    ];
    for (split, seed_base, count, degrade) in plan {
        let dir = root.join(split.dir_name());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..count {
            let sample_seed = cfg
                .master_seed
                .wrapping_mul(0x0100_0000_0000)
                .wrapping_add(seed_base + i as u64);
            let mut sample = generate_sample(cfg, sample_seed)?;
            if degrade {
                let shift = DomainShiftConfig {
                    seed: sample_seed ^ 0x5EED,
                    ..cfg.shift.clone()
                };
                sample.depth = apply_sensor_noise(&sample.depth, &shift);
            }
            let id = format!("{:06}", i);
            write_sample(&dir, &id, &sample)?;
            manifest.samples.push(SampleRef {
                split,
                id,
                seed: sample_seed,
            });
        }
    }
    manifest.write(&root.join("manifest.json"))?;
    Ok(manifest)
}
