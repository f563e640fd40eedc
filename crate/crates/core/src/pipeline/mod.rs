//! Run orchestration: a single TOML configuration drives every stage, and a
//! hash-based run manifest makes re-runs idempotent (unchanged stages are
//! skipped, corrupted artifacts force exactly their dependents to re-run).

pub mod stages;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{DatasetConfig, DomainShiftConfig};
use crate::error::{Error, Result};
use crate::metrics::PoseUnits;
use crate::models::TrainConfig;
use crate::restoration::{PairwiseKind, RestorationConfig};

pub use stages::{ablation, run_all, run_stage, Pipeline, StageOutcome, STAGES};

/// Sensor-degradation knobs exposed in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub gaussian_depth_sigma: f64,
    pub hole_probability: f64,
    pub quantization_step: f64,
    pub edge_erosion_radius: usize,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let d = DomainShiftConfig::default();
        NoiseSection {
            gaussian_depth_sigma: d.gaussian_depth_sigma,
            hole_probability: d.hole_probability,
            quantization_step: d.quantization_step,
            edge_erosion_radius: d.edge_erosion_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub n_synth: usize,
    pub n_real: usize,
    pub n_test: usize,
    pub image_size: usize,
    pub master_seed: u64,
    /// Box kernel for local contrast normalization of depth.
    pub contrast_kernel: usize,
    pub noise: NoiseSection,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            n_synth: 500,
            n_real: 100,
            n_test: 100,
            image_size: 48,
            master_seed: 1,
            contrast_kernel: 9,
            noise: NoiseSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DictionarySection {
    pub patch_size: usize,
    pub stride: usize,
    /// Fraction of the synthetic split whose label maps seed the dictionary.
    pub source_fraction: f64,
    /// Restrict patch centers to foreground pixels.
    pub foreground_only: bool,
}

impl Default for DictionarySection {
    fn default() -> Self {
        DictionarySection {
            patch_size: 27,
            stride: 1,
            source_fraction: 1.0 / 3.0,
            foreground_only: true,
        }
    }
}

/// Which label-transfer rule the restore stage applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RestoreMethod {
    Center,
    Vote,
    CrfPotts,
    CrfOverlap,
}

impl RestoreMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "center" => Ok(RestoreMethod::Center),
            "vote" => Ok(RestoreMethod::Vote),
            "crf-potts" => Ok(RestoreMethod::CrfPotts),
            "crf-overlap" => Ok(RestoreMethod::CrfOverlap),
            other => Err(Error::Config(format!(
                "unknown restoration method '{other}' \
                 (expected center | vote | crf-potts | crf-overlap)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RestoreMethod::Center => "center",
            RestoreMethod::Vote => "vote",
            RestoreMethod::CrfPotts => "crf-potts",
            RestoreMethod::CrfOverlap => "crf-overlap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RestorationSection {
    pub method: RestoreMethod,
    pub window: usize,
    /// Ranked neighbors fetched per pixel.
    pub neighbors: usize,
    pub crf_alpha: f64,
    pub crf_ranks: usize,
    pub crf_max_sweeps: usize,
}

impl Default for RestorationSection {
    fn default() -> Self {
        RestorationSection {
            method: RestoreMethod::Vote,
            window: 17,
            neighbors: 10,
            crf_alpha: 1.0,
            crf_ranks: 10,
            crf_max_sweeps: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub mm_per_pixel: f64,
    pub mm_per_depth_unit: f64,
    pub threshold_max_mm: f64,
    pub threshold_step_mm: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        let u = PoseUnits::default();
        MetricsSection {
            mm_per_pixel: u.mm_per_pixel,
            mm_per_depth_unit: u.mm_per_depth_unit,
            threshold_max_mm: 80.0,
            threshold_step_mm: 4.0,
        }
    }
}

/// Full pipeline configuration (one TOML file).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub dataset: DatasetSection,
    pub dictionary: DictionarySection,
    pub restoration: RestorationSection,
    pub training: TrainConfig,
    pub metrics: MetricsSection,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.n_synth == 0 || d.n_real == 0 || d.n_test == 0 {
            return Err(Error::Config("split sizes must be >= 1".into()));
        }
        if d.image_size < 24 {
            return Err(Error::Config("image_size must be >= 24".into()));
        }
        if d.contrast_kernel == 0 || d.contrast_kernel % 2 == 0 {
            return Err(Error::Config("contrast_kernel must be odd".into()));
        }
        let k = &self.dictionary;
        if k.patch_size == 0 || k.patch_size % 2 == 0 || k.patch_size > d.image_size {
            return Err(Error::Config(
                "dictionary patch_size must be odd and fit the image".into(),
            ));
        }
        if k.stride == 0 {
            return Err(Error::Config("dictionary stride must be >= 1".into()));
        }
        if !(k.source_fraction > 0.0 && k.source_fraction <= 1.0) {
            return Err(Error::Config("source_fraction must lie in (0, 1]".into()));
        }
        let r = &self.restoration;
        self.restoration_config().validate()?;
        if r.neighbors == 0 {
            return Err(Error::Config("restoration neighbors must be >= 1".into()));
        }
        if matches!(r.method, RestoreMethod::CrfPotts | RestoreMethod::CrfOverlap)
            && r.neighbors < r.crf_ranks
        {
            return Err(Error::Config(format!(
                "crf needs neighbors >= crf_ranks ({} < {})",
                r.neighbors, r.crf_ranks
            )));
        }
        self.training.validate()?;
        let m = &self.metrics;
        if m.mm_per_pixel <= 0.0 || m.mm_per_depth_unit <= 0.0 {
            return Err(Error::Config("metric scales must be positive".into()));
        }
        if m.threshold_step_mm <= 0.0 || m.threshold_max_mm < m.threshold_step_mm {
            return Err(Error::Config("bad threshold grid".into()));
        }
        if self.training.seg.patch > d.image_size {
            return Err(Error::Config("seg patch exceeds image".into()));
        }
        Ok(())
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        let d = &self.dataset;
        DatasetConfig {
            image_size: d.image_size,
            master_seed: d.master_seed,
            shift: DomainShiftConfig {
                gaussian_depth_sigma: d.noise.gaussian_depth_sigma,
                hole_probability: d.noise.hole_probability,
                quantization_step: d.noise.quantization_step,
                edge_erosion_radius: d.noise.edge_erosion_radius,
                seed: 0,
            },
            ..DatasetConfig::default()
        }
    }

    pub fn restoration_config(&self) -> RestorationConfig {
        let r = &self.restoration;
        RestorationConfig {
            window: r.window,
            crf_alpha: r.crf_alpha,
            crf_ranks: r.crf_ranks,
            crf_pairwise_kind: match r.method {
                RestoreMethod::CrfOverlap => PairwiseKind::OverlapHamming,
                _ => PairwiseKind::PottsCenter,
            },
            crf_max_sweeps: r.crf_max_sweeps,
        }
    }

    pub fn pose_units(&self) -> PoseUnits {
        PoseUnits {
            mm_per_pixel: self.metrics.mm_per_pixel,
            mm_per_depth_unit: self.metrics.mm_per_depth_unit,
        }
    }

    pub fn threshold_grid(&self) -> Vec<f64> {
        let mut grid = vec![0.0];
        let mut t = self.metrics.threshold_step_mm;
        while t <= self.metrics.threshold_max_mm + 1e-9 {
            grid.push(t);
            t += self.metrics.threshold_step_mm;
        }
        grid
    }

    /// Number of synthetic label maps feeding the dictionary.
    pub fn dict_source_count(&self) -> usize {
        ((self.dataset.n_synth as f64 * self.dictionary.source_fraction).ceil() as usize)
            .clamp(1, self.dataset.n_synth)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// All regular files under `dir`, as paths relative to `root`, sorted.
pub fn files_under(root: &Path, dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        if !d.exists() {
            continue;
        }
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let entry = entry.map_err(|e| Error::io(&d, e))?;
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p
                    .strip_prefix(root)
                    .unwrap_or(&p)
                    .to_string_lossy()
                    .replace('\\', "/");
                out.push(rel);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// One executed stage in the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seed: u64,
    pub duration_s: f64,
    /// Relative path -> sha256 of every file the stage read.
    pub inputs: BTreeMap<String, String>,
    /// Relative path -> sha256 of every file the stage wrote.
    pub outputs: BTreeMap<String, String>,
}

/// Hash ledger for a whole run, stored as `run_manifest.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_sha256: String,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn path(root: &Path) -> PathBuf {
        root.join("run_manifest.json")
    }

    pub fn load_or_default(root: &Path) -> Result<Self> {
        let p = Self::path(root);
        if !p.exists() {
            return Ok(RunManifest {
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                ..RunManifest::default()
            });
        }
        let raw = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::from_slice(&raw).map_err(|e| Error::format(&p, &e.to_string()))
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        let p = Self::path(root);
        let raw = serde_json::to_vec_pretty(self).expect("manifest serializes");
        fs::write(&p, raw).map_err(|e| Error::io(&p, e))
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn upsert(&mut self, record: StageRecord) {
        if let Some(s) = self.stages.iter_mut().find(|s| s.name == record.name) {
            *s = record;
        } else {
            self.stages.push(record);
        }
    }
}
