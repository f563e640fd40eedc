//! The eight pipeline stages (generate, train-seg, build-dict, restore,
//! gate, finetune-seg, train-reg, eval) plus the ablation driver. Every
//! stage hashes its inputs and outputs into the run manifest and is skipped
//! when nothing changed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::datagen::{
    generate_dataset, load_sample, local_contrast_normalize, read_label_pgm, write_label_pgm,
    DatasetManifest, Split,
};
use crate::error::{Error, Result};
use crate::metrics::{
    comparison_report, curve_csv, pose_csv, pose_error, pose_score, seg_accuracy, seg_csv,
    FramePoseError, PoseScore, SegScore, VariantResult,
};
use crate::models::io::{load_reg_model, load_seg_model, save_reg_model, save_seg_model};
use crate::models::reg::{build_reg_example, predict_pose, train_regressor, RegInputMode, RegModel};
use crate::models::seg::{finetune_segmenter, predict_labelmap, train_segmenter, SegItem, SegModel};
use crate::patchdict::{extract_patches, load_dictionary, save_dictionary};
use crate::restoration::crf::{crf_icm, CrfModel};
use crate::restoration::{query_field, restore_center, restore_vote};
use crate::supervision::{
    build_finetune_stream, gate_sample, JointLabelTable, PseudoLabelSet, StreamSource,
};
use crate::types::{DepthMap, JointSet, LabelMap};

use super::{
    files_under, hash_file, sha256_hex, PipelineConfig, RestoreMethod, RunManifest, StageRecord,
};

/// Stage names in dependency order.
pub const STAGES: [&str; 8] = [
    "generate",
    "train-seg",
    "build-dict",
    "restore",
    "gate",
    "finetune-seg",
    "train-reg",
    "eval",
];

/// Result of asking a stage to run.
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub name: String,
    pub skipped: bool,
    pub duration_s: f64,
}

/// One run rooted at an output directory.
pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub root: PathBuf,
    /// Ignore the manifest and re-run stages unconditionally.
    pub force: bool,
    manifest: RunManifest,
    config_hash: String,
}

impl Pipeline {
    /// Prepares the output root: writes the resolved config and loads any
    /// existing run manifest.
    pub fn new(cfg: PipelineConfig, root: &Path) -> Result<Self> {
        cfg.validate()?;
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let resolved = cfg.to_toml();
        let cfg_path = root.join("config.resolved.toml");
        fs::write(&cfg_path, &resolved).map_err(|e| Error::io(&cfg_path, e))?;
        let config_hash = sha256_hex(resolved.as_bytes());
        let mut manifest = RunManifest::load_or_default(root)?;
        manifest.tool_version = env!("CARGO_PKG_VERSION").to_string();
        manifest.config_sha256 = config_hash.clone();
        Ok(Pipeline {
            cfg,
            root: root.to_path_buf(),
            force: false,
            manifest,
            config_hash,
        })
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    fn seed(&self, salt: u64) -> u64 {
        self.cfg.dataset.master_seed.wrapping_mul(0x100_0000).wrapping_add(salt)
    }

    fn table(&self) -> JointLabelTable {
        JointLabelTable::default_table()
    }

    // ---- path helpers -------------------------------------------------

    fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    fn dict_path(&self) -> PathBuf {
        self.root.join("dict/dictionary.pdct")
    }

    fn seg_pretrained_path(&self) -> PathBuf {
        self.root.join("models/seg_pretrained.model")
    }

    fn seg_finetuned_path(&self) -> PathBuf {
        self.root.join("models/seg_finetuned.model")
    }

    fn reg_path(&self) -> PathBuf {
        self.root.join("models/regressor.model")
    }

    fn restored_dir(&self) -> PathBuf {
        self.root.join("restored")
    }

    fn gate_dir(&self) -> PathBuf {
        self.root.join("gate")
    }

    fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    fn rel(&self, p: &Path) -> String {
        p.strip_prefix(&self.root)
            .unwrap_or(p)
            .to_string_lossy()
            .replace('\\', "/")
    }

    // ---- manifest bookkeeping ----------------------------------------

    fn hash_rels(&self, rels: &[String]) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        out.insert("config.resolved.toml".to_string(), self.config_hash.clone());
        for r in rels {
            if r == "config.resolved.toml" {
                continue;
            }
            out.insert(r.clone(), hash_file(&self.root.join(r))?);
        }
        Ok(out)
    }

    /// A stage is current when its recorded inputs and outputs all still
    /// hash-match what is on disk.
    fn up_to_date(&self, name: &str, inputs: &BTreeMap<String, String>) -> bool {
        if self.force {
            return false;
        }
        let Some(rec) = self.manifest.stage(name) else {
            return false;
        };
        if &rec.inputs != inputs {
            return false;
        }
        rec.outputs.iter().all(|(rel, hash)| {
            let p = self.root.join(rel);
            p.exists() && hash_file(&p).map(|h| &h == hash).unwrap_or(false)
        })
    }

    fn require(&self, stage: &str, producer: &str, path: &Path) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::Dependency {
                stage: stage.to_string(),
                producer: producer.to_string(),
                path: path.to_path_buf(),
            })
        }
    }

    fn finish(
        &mut self,
        name: &str,
        seed: u64,
        inputs: BTreeMap<String, String>,
        output_rels: Vec<String>,
        start: Instant,
    ) -> Result<StageOutcome> {
        let mut outputs = BTreeMap::new();
        for rel in output_rels {
            outputs.insert(rel.clone(), hash_file(&self.root.join(&rel))?);
        }
        let duration_s = start.elapsed().as_secs_f64();
        self.manifest.upsert(StageRecord {
            name: name.to_string(),
            seed,
            duration_s,
            inputs,
            outputs,
        });
        self.manifest.write(&self.root)?;
        Ok(StageOutcome {
            name: name.to_string(),
            skipped: false,
            duration_s,
        })
    }

    fn skipped(name: &str) -> StageOutcome {
        StageOutcome {
            name: name.to_string(),
            skipped: true,
            duration_s: 0.0,
        }
    }

    // ---- data loading helpers ----------------------------------------

    fn dataset_manifest(&self, stage: &str) -> Result<DatasetManifest> {
        let p = self.data_dir().join("manifest.json");
        self.require(stage, "generate", &p)?;
        DatasetManifest::read(&p)
    }

    fn load_split(
        &self,
        stage: &str,
        split: Split,
    ) -> Result<Vec<(String, DepthMap, LabelMap, JointSet)>> {
        let manifest = self.dataset_manifest(stage)?;
        let dir = self.data_dir().join(split.dir_name());
        manifest
            .ids(split)
            .into_iter()
            .map(|id| {
                let (d, l, j) = load_sample(&dir, &id)?;
                Ok((id, d, l, j))
            })
            .collect()
    }

    fn normalize(&self, d: &DepthMap) -> Result<DepthMap> {
        local_contrast_normalize(d, self.cfg.dataset.contrast_kernel)
    }

    // ---- stages -------------------------------------------------------

    pub fn run_stage(&mut self, name: &str) -> Result<StageOutcome> {
        match name {
            "generate" => self.stage_generate(),
            "train-seg" => self.stage_train_seg(),
            "build-dict" => self.stage_build_dict(),
            "restore" => self.stage_restore(),
            "gate" => self.stage_gate(),
            "finetune-seg" => self.stage_finetune_seg(),
            "train-reg" => self.stage_train_reg(),
            "eval" => self.stage_eval(),
            other => Err(Error::Config(format!("unknown stage '{other}'"))),
        }
    }

    pub fn run_all(&mut self) -> Result<Vec<StageOutcome>> {
        STAGES.iter().map(|s| self.run_stage(s)).collect()
    }

    fn stage_generate(&mut self) -> Result<StageOutcome> {
        let name = "generate";
        let inputs = self.hash_rels(&[])?;
        if self.up_to_date(name, &inputs) {
            return Ok(Self::skipped(name));
        }
        let start = Instant::now();
        let d = &self.cfg.dataset;
        let dir = self.data_dir();
        generate_dataset(&dir, d.n_synth, d.n_real, d.n_test, &self.cfg.dataset_config())?;
        let outputs = files_under(&self.root, &dir)?;
        self.finish(name, d.master_seed, inputs, outputs, start)
    }

    fn stage_train_seg(&mut self) -> Result<StageOutcome> {
        let name = "train-seg";
        self.require(name, "generate", &self.data_dir().join("manifest.json"))?;
        let input_rels = files_under(&self.root, &self.data_dir())?;
        let inputs = self.hash_rels(&input_rels)?;
        if self.up_to_date(name, &inputs) {
            return Ok(Self::skipped(name));
        }
        let start = Instant::now();
        let seed = self.seed(11);
        let synth = self.load_split(name, Split::Synth)?;
        let normalized: Vec<(DepthMap, LabelMap)> = synth
            .into_iter()
            .map(|(_, d, l, _)| Ok((self.normalize(&d)?, l)))
            .collect::<Result<_>>()?;
        let items: Vec<SegItem> = normalized
            .iter()
            .map(|(d, l)| SegItem { depth: d, labels: l })
            .collect();
        let (model, curve) = train_segmenter(&items, &self.cfg.training.seg, seed)?;
        let model_path = self.seg_pretrained_path();
        fs::create_dir_all(model_path.parent().unwrap())
            .map_err(|e| Error::io(model_path.parent().unwrap(), e))?;
        save_seg_model(&model, &model_path)?;
        let curve_path = self.root.join("models/seg_pretrain_curve.csv");
        fs::write(&curve_path, curve.to_csv()).map_err(|e| Error::io(&curve_path, e))?;
        let outputs = vec![
            self.rel(&model_path),
            format!("{}.json", self.rel(&model_path)),
            self.rel(&curve_path),
        ];
        self.finish(name, seed, inputs, outputs, start)
    }

    fn stage_build_dict(&mut self) -> Result<StageOutcome> {
        let name = "build-dict";
        self.require(name, "generate", &self.data_dir().join("manifest.json"))?;
        let input_rels = files_under(&self.root, &self.data_dir())?;
        let inputs = self.hash_rels(&input_rels)?;
        if self.up_to_date(name, &inputs) {
            return Ok(Self::skipped(name));
        }
        let start = Instant::now();
        let seed = self.seed(23);
        let synth = self.load_split(name, Split::Synth)?;
        let take = self.cfg.dict_source_count();
        let maps: Vec<LabelMap> = synth.into_iter().take(take).map(|(_, _, l, _)| l).collect();
        let k = &self.cfg.dictionary;
        let mut dict = extract_patches(&maps, k.patch_size, k.stride, k.foreground_only)?;
        dict.build_index(seed);
        let path = self.dict_path();
        fs::create_dir_all(path.parent().unwrap())
            .map_err(|e| Error::io(path.parent().unwrap(), e))?;
        save_dictionary(&dict, &path)?;
        let outputs = vec![self.rel(&path)];
        self.finish(name, seed, inputs, outputs, start)
    }

    /// Applies the configured transfer rule to one predicted map.
    fn restore_one(
        &self,
        pred: &LabelMap,
        dict: &crate::patchdict::PatchDictionary,
    ) -> Result<LabelMap> {
        let r = &self.cfg.restoration;
        let rcfg = self.cfg.restoration_config();
        let field = query_field(pred, dict, r.neighbors)?;
        match r.method {
            RestoreMethod::Center => Ok(restore_center(&field, dict)),
            RestoreMethod::Vote => restore_vote(&field, dict, &rcfg),
            RestoreMethod::CrfPotts | RestoreMethod::CrfOverlap => {
                let model = CrfModel::build(&field, dict, &rcfg)?;
                Ok(crf_icm(&model)?.labels)
            }
        }
    }

    fn stage_restore(&mut self) -> Result<StageOutcome> {
        let name = "restore";
        self.require(name, "train-seg", &self.seg_pretrained_path())?;
        self.require(name, "build-dict", &self.dict_path())?;
        self.require(name, "generate", &self.data_dir().join("manifest.json"))?;
        let mut input_rels = files_under(&self.root, &self.data_dir().join("real"))?;
        input_rels.push(self.rel(&self.seg_pretrained_path()));
        input_rels.push(format!("{}.json", self.rel(&self.seg_pretrained_path())));
        input_rels.push(self.rel(&self.dict_path()));
        input_rels.push(self.rel(&self.data_dir().join("manifest.json")));
        let inputs = self.hash_rels(&input_rels)?;
        if self.up_to_date(name, &inputs) {
            return Ok(Self::skipped(name));
        }
        let start = Instant::now();
        let seed = self.seed(31);
        let model = load_seg_model(&self.seg_pretrained_path())?;
        let dict = load_dictionary(&self.dict_path())?;
        let real = self.load_split(name, Split::Real)?;
        let dir = self.restored_dir();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut outputs = Vec::new();
        for (id, depth, _, _) in &real {
            let norm = self.normalize(depth)?;
            let pred = predict_labelmap(&model, &norm);
            let restored = self.restore_one(&pred, &dict)?;
            let pred_path = dir.join(format!("{id}.pred.pgm"));
            let rest_path = dir.join(format!("{id}.restored.pgm"));
            write_label_pgm(&pred_path, &pred)?;
            write_label_pgm(&rest_path, &restored)?;
            outputs.push(self.rel(&pred_path));
            outputs.push(self.rel(&rest_path));
        }
        self.finish(name, seed, inputs, outputs, start)
    }

    fn stage_gate(&mut self) -> Result<StageOutcome> {
        let name = "gate";
        self.require(name, "restore", &self.restored_dir())?;
        self.require(name, "generate", &self.data_dir().join("manifest.json"))?;
        let mut input_rels = files_under(&self.root, &self.restored_dir())?;
        input_rels.extend(files_under(&self.root, &self.data_dir().join("real"))?);
        input_rels.push(self.rel(&self.data_dir().join("manifest.json")));
        let inputs = self.hash_rels(&input_rels)?;
        if self.up_to_date(name, &inputs) {
            return Ok(Self::skipped(name));
        }
        let start = Instant::now();
        let table = self.table();
        let real = self.load_split(name, Split::Real)?;
        let dir = self.gate_dir();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut csv = String::from("sample_id,sum_before,sum_after,accepted,reason\n");
        let mut accepted_ids = Vec::new();
        let mut n_accept = 0usize;
        for (id, _, _, joints) in &real {
            let pred = read_label_pgm(&self.restored_dir().join(format!("{id}.pred.pgm")))?;
            let restored = read_label_pgm(&self.restored_dir().join(format!("{id}.restored.pgm")))?;
            let report = gate_sample(&pred, &restored, joints, &table)?;
            let reason = if report.accepted {
                "quality_improved"
            } else {
                "quality_not_improved"
            };
            csv.push_str(&format!(
                "{id},{:.17e},{:.17e},{},{reason}\n",
                report.sum_before, report.sum_after, report.accepted
            ));
            if report.accepted {
                accepted_ids.push(id.clone());
                n_accept += 1;
            }
        }
        let rejection_rate = 1.0 - n_accept as f64 / real.len() as f64;
        let csv_path = dir.join("gate.csv");
        fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
        let acc_path = dir.join("accepted.txt");
        fs::write(&acc_path, accepted_ids.join("\n") + "\n").map_err(|e| Error::io(&acc_path, e))?;
        let rate_path = dir.join("rejection_rate.txt");
        fs::write(&rate_path, format!("{rejection_rate:.6}\n"))
            .map_err(|e| Error::io(&rate_path, e))?;
        let outputs = vec![self.rel(&csv_path), self.rel(&acc_path), self.rel(&rate_path)];
        self.finish(name, self.seed(37), inputs, outputs, start)
    }

    fn read_accepted_ids(&self, stage: &str) -> Result<Vec<String>> {
        let p = self.gate_dir().join("accepted.txt");
        self.require(stage, "gate", &p)?;
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect())
    }

    fn stage_finetune_seg(&mut self) -> Result<StageOutcome> {
        let name = "finetune-seg";
        self.require(name, "train-seg", &self.seg_pretrained_path())?;
        self.require(name, "gate", &self.gate_dir().join("accepted.txt"))?;
        let mut input_rels = files_under(&self.root, &self.data_dir())?;
        input_rels.extend(files_under(&self.root, &self.restored_dir())?);
        input_rels.extend(files_under(&self.root, &self.gate_dir())?);
        input_rels.push(self.rel(&self.seg_pretrained_path()));
        input_rels.push(format!("{}.json", self.rel(&self.seg_pretrained_path())));
        let inputs = self.hash_rels(&input_rels)?;
        if self.up_to_date(name, &inputs) {
            return Ok(Self::skipped(name));
        }
        let start = Instant::now();
        let seed = self.seed(41);
        let model = load_seg_model(&self.seg_pretrained_path())?;

        let synth = self.load_split(name, Split::Synth)?;
        let mut synth_store: BTreeMap<String, (DepthMap, LabelMap)> = BTreeMap::new();
        let mut synth_ids = Vec::new();
        for (id, d, l, _) in synth {
            synth_ids.push(id.clone());
            synth_store.insert(id, (self.normalize(&d)?, l));
        }
        let real = self.load_split(name, Split::Real)?;
        let accepted = self.read_accepted_ids(name)?;
        let mut pseudo = PseudoLabelSet::default();
        let mut pseudo_store: BTreeMap<String, (DepthMap, LabelMap)> = BTreeMap::new();
        for (id, d, _, _) in &real {
            let restored = read_label_pgm(&self.restored_dir().join(format!("{id}.restored.pgm")))?;
            if accepted.contains(id) {
                pseudo.accepted.push((id.clone(), restored.clone()));
                pseudo_store.insert(id.clone(), (self.normalize(d)?, restored));
            } else {
                pseudo.rejected.push((id.clone(), "gate".to_string()));
            }
        }
        let stream = build_finetune_stream(
            &synth_ids,
            &pseudo,
            self.cfg.training.finetune.synth_per_pseudo,
            seed,
        )?;
        let items: Vec<SegItem> = stream
            .entries
            .iter()
            .map(|e| {
                let (d, l) = match e.source {
                    StreamSource::Synth => &synth_store[&e.sample_id],
                    StreamSource::Pseudo => &pseudo_store[&e.sample_id],
                };
                SegItem { depth: d, labels: l }
            })
            .collect();
        let (tuned, curve) = finetune_segmenter(
            model,
            &items,
            &self.cfg.training.seg,
            self.cfg.training.finetune.epochs,
            seed,
        )?;
        let model_path = self.seg_finetuned_path();
        save_seg_model(&tuned, &model_path)?;
        let curve_path = self.root.join("models/seg_finetune_curve.csv");
        fs::write(&curve_path, curve.to_csv()).map_err(|e| Error::io(&curve_path, e))?;
        let outputs = vec![
            self.rel(&model_path),
            format!("{}.json", self.rel(&model_path)),
            self.rel(&curve_path),
        ];
        self.finish(name, seed, inputs, outputs, start)
    }

    /// Trains one regressor variant on the real-proxy split.
    fn train_reg_variant(
        &self,
        stage: &str,
        mode: RegInputMode,
        seg_model: Option<&SegModel>,
        seed: u64,
    ) -> Result<RegModel> {
        let table = self.table();
        let real = self.load_split(stage, Split::Real)?;
        let examples = real
            .iter()
            .map(|(_, d, _, joints)| {
                let norm = self.normalize(d)?;
                let seg = match seg_model {
                    Some(m) => predict_labelmap(m, &norm),
                    None => LabelMap::new(d.width, d.height),
                };
                Ok(build_reg_example(
                    d,
                    &norm,
                    &seg,
                    joints,
                    &table,
                    mode,
                    self.cfg.training.reg.opening_radius,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        train_regressor(&examples, mode, &self.cfg.training.reg, seed)
    }

    fn stage_train_reg(&mut self) -> Result<StageOutcome> {
        let name = "train-reg";
        self.require(name, "finetune-seg", &self.seg_finetuned_path())?;
        let mut input_rels = files_under(&self.root, &self.data_dir().join("real"))?;
        input_rels.push(self.rel(&self.seg_finetuned_path()));
        input_rels.push(format!("{}.json", self.rel(&self.seg_finetuned_path())));
        input_rels.push(self.rel(&self.data_dir().join("manifest.json")));
        let inputs = self.hash_rels(&input_rels)?;
        if self.up_to_date(name, &inputs) {
            return Ok(Self::skipped(name));
        }
        let start = Instant::now();
        let seed = self.seed(43);
        let seg = load_seg_model(&self.seg_finetuned_path())?;
        let reg = self.train_reg_variant(name, RegInputMode::Fused, Some(&seg), seed)?;
        let path = self.reg_path();
        save_reg_model(&reg, &path)?;
        let outputs = vec![self.rel(&path), format!("{}.json", self.rel(&path))];
        self.finish(name, seed, inputs, outputs, start)
    }

    /// Dataset-level segmentation score: confusion counts pooled over frames
    /// by stacking all maps into one tall image.
    fn seg_score_on_test(
        &self,
        stage: &str,
        model: &SegModel,
        test: &[(String, DepthMap, LabelMap, JointSet)],
    ) -> Result<SegScore> {
        let _ = stage;
        let w = test[0].1.width;
        let mut pred_all = Vec::new();
        let mut truth_all = Vec::new();
        for (_, d, l, _) in test {
            let norm = self.normalize(d)?;
            pred_all.extend(predict_labelmap(model, &norm).labels);
            truth_all.extend(l.labels.iter().cloned());
        }
        let h = truth_all.len() / w;
        seg_accuracy(
            &LabelMap {
                width: w,
                height: h,
                labels: pred_all,
            },
            &LabelMap {
                width: w,
                height: h,
                labels: truth_all,
            },
        )
    }

    fn pose_score_on_test(
        &self,
        reg: &RegModel,
        seg_model: Option<&SegModel>,
        test: &[(String, DepthMap, LabelMap, JointSet)],
    ) -> Result<PoseScore> {
        let table = self.table();
        let units = self.cfg.pose_units();
        let frames: Vec<FramePoseError> = test
            .iter()
            .map(|(_, d, _, joints)| {
                let norm = self.normalize(d)?;
                let seg = match seg_model {
                    Some(m) => predict_labelmap(m, &norm),
                    None => LabelMap::new(d.width, d.height),
                };
                let pred = predict_pose(reg, d, &norm, &seg, &table);
                Ok(pose_error(&pred, joints, units))
            })
            .collect::<Result<_>>()?;
        pose_score(&frames, &self.cfg.threshold_grid())
    }

    fn stage_eval(&mut self) -> Result<StageOutcome> {
        let name = "eval";
        self.require(name, "train-seg", &self.seg_pretrained_path())?;
        self.require(name, "finetune-seg", &self.seg_finetuned_path())?;
        self.require(name, "train-reg", &self.reg_path())?;
        let mut input_rels = files_under(&self.root, &self.data_dir().join("test"))?;
        for p in [
            self.seg_pretrained_path(),
            self.seg_finetuned_path(),
            self.reg_path(),
        ] {
            input_rels.push(self.rel(&p));
            input_rels.push(format!("{}.json", self.rel(&p)));
        }
        input_rels.push(self.rel(&self.data_dir().join("manifest.json")));
        let inputs = self.hash_rels(&input_rels)?;
        if self.up_to_date(name, &inputs) {
            return Ok(Self::skipped(name));
        }
        let start = Instant::now();
        let pretrained = load_seg_model(&self.seg_pretrained_path())?;
        let finetuned = load_seg_model(&self.seg_finetuned_path())?;
        let reg = load_reg_model(&self.reg_path())?;
        let test = self.load_split(name, Split::Test)?;

        let score_pre = self.seg_score_on_test(name, &pretrained, &test)?;
        let score_fine = self.seg_score_on_test(name, &finetuned, &test)?;
        let pose = self.pose_score_on_test(&reg, Some(&finetuned), &test)?;

        let dir = self.eval_dir();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let seg_path = dir.join("seg_scores.csv");
        fs::write(
            &seg_path,
            seg_csv(&[
                ("pretrained".to_string(), score_pre.clone()),
                ("finetuned".to_string(), score_fine.clone()),
            ]),
        )
        .map_err(|e| Error::io(&seg_path, e))?;
        let pose_path = dir.join("pose_scores.csv");
        fs::write(&pose_path, pose_csv(&pose)).map_err(|e| Error::io(&pose_path, e))?;
        let curve_path = dir.join("threshold_curve.csv");
        fs::write(&curve_path, curve_csv(&pose)).map_err(|e| Error::io(&curve_path, e))?;
        let variants = vec![
            VariantResult {
                name: "pretrained".into(),
                seg: Some(score_pre),
                pose: None,
            },
            VariantResult {
                name: "finetuned".into(),
                seg: Some(score_fine),
                pose: Some(pose),
            },
        ];
        let report = comparison_report(&variants, "pretrained")?;
        let cmp_csv = dir.join("comparison.csv");
        fs::write(&cmp_csv, &report.csv).map_err(|e| Error::io(&cmp_csv, e))?;
        let cmp_txt = dir.join("comparison.txt");
        fs::write(&cmp_txt, &report.text).map_err(|e| Error::io(&cmp_txt, e))?;
        let outputs = vec![
            self.rel(&seg_path),
            self.rel(&pose_path),
            self.rel(&curve_path),
            self.rel(&cmp_csv),
            self.rel(&cmp_txt),
        ];
        self.finish(name, self.seed(47), inputs, outputs, start)
    }

    /// Trains and evaluates the three regressor variants: (a) depth only,
    /// (c) fused with the pre-trained segmenter, (d) fused with the
    /// fine-tuned segmenter. Requires the pipeline through finetune-seg.
    pub fn ablation(&mut self) -> Result<crate::metrics::ComparisonReport> {
        for stage in &STAGES[..6] {
            self.run_stage(stage)?;
        }
        let name = "ablation";
        let pretrained = load_seg_model(&self.seg_pretrained_path())?;
        let finetuned = load_seg_model(&self.seg_finetuned_path())?;
        let test = self.load_split(name, Split::Test)?;
        let dir = self.root.join("ablation");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

        let plan: [(&str, RegInputMode, Option<&SegModel>); 3] = [
            ("a", RegInputMode::DepthOnly, None),
            ("c", RegInputMode::Fused, Some(&pretrained)),
            ("d", RegInputMode::Fused, Some(&finetuned)),
        ];
        let mut variants = Vec::new();
        for (tag, mode, seg) in plan {
            let reg = self.train_reg_variant(name, mode, seg, self.seed(53))?;
            save_reg_model(&reg, &dir.join(format!("reg_{tag}.model")))?;
            let pose = self.pose_score_on_test(&reg, seg, &test)?;
            let pcsv = dir.join(format!("pose_{tag}.csv"));
            fs::write(&pcsv, pose_csv(&pose)).map_err(|e| Error::io(&pcsv, e))?;
            variants.push(VariantResult {
                name: tag.to_string(),
                seg: None,
                pose: Some(pose),
            });
        }
        variants.push(VariantResult {
            name: "seg-pretrained".into(),
            seg: Some(self.seg_score_on_test(name, &pretrained, &test)?),
            pose: None,
        });
        variants.push(VariantResult {
            name: "seg-finetuned".into(),
            seg: Some(self.seg_score_on_test(name, &finetuned, &test)?),
            pose: None,
        });
        let report = comparison_report(&variants, "a")?;
        let csv_path = dir.join("ablation.csv");
        fs::write(&csv_path, &report.csv).map_err(|e| Error::io(&csv_path, e))?;
        let txt_path = dir.join("ablation.txt");
        fs::write(&txt_path, &report.text).map_err(|e| Error::io(&txt_path, e))?;
        Ok(report)
    }
}

/// Convenience wrapper: run one named stage under `root`.
pub fn run_stage(cfg: PipelineConfig, root: &Path, name: &str, force: bool) -> Result<StageOutcome> {
    let mut p = Pipeline::new(cfg, root)?;
    p.force = force;
    p.run_stage(name)
}

/// Convenience wrapper: run all stages in order.
pub fn run_all(cfg: PipelineConfig, root: &Path, force: bool) -> Result<Vec<StageOutcome>> {
    let mut p = Pipeline::new(cfg, root)?;
    p.force = force;
    p.run_all()
}

/// Convenience wrapper: run the ablation study.
pub fn ablation(cfg: PipelineConfig, root: &Path) -> Result<crate::metrics::ComparisonReport> {
    let mut p = Pipeline::new(cfg, root)?;
    p.ablation()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{RegTrainConfig, SegTrainConfig};

    /// A configuration small enough for unit tests.
    fn tiny_config(seed: u64) -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.dataset.n_synth = 8;
        cfg.dataset.n_real = 4;
        cfg.dataset.n_test = 3;
        cfg.dataset.master_seed = seed;
        cfg.dictionary.patch_size = 9;
        cfg.dictionary.stride = 4;
        cfg.dictionary.source_fraction = 0.5;
        cfg.restoration.window = 5;
        cfg.restoration.neighbors = 3;
        cfg.training.seg = SegTrainConfig {
            epochs: 1,
            pixels_per_image: 30,
            hidden: 8,
            ..SegTrainConfig::default()
        };
        cfg.training.finetune.epochs = 1;
        cfg.training.reg = RegTrainConfig {
            epochs: 2,
            hidden: 8,
            ..RegTrainConfig::default()
        };
        cfg
    }

    #[test]
    fn run_all_emits_artifacts_and_reruns_are_skipped() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("run");
        let outcomes = run_all(tiny_config(5), &root, false).unwrap();
        assert_eq!(outcomes.len(), STAGES.len());
        assert!(outcomes.iter().all(|o| !o.skipped));
        for artifact in [
            "data/manifest.json",
            "models/seg_pretrained.model",
            "dict/dictionary.pdct",
            "gate/gate.csv",
            "models/seg_finetuned.model",
            "models/regressor.model",
            "eval/seg_scores.csv",
            "eval/pose_scores.csv",
            "eval/threshold_curve.csv",
            "eval/comparison.txt",
            "run_manifest.json",
            "config.resolved.toml",
        ] {
            assert!(root.join(artifact).exists(), "missing {artifact}");
        }
        let again = run_all(tiny_config(5), &root, false).unwrap();
        assert!(again.iter().all(|o| o.skipped), "{again:?}");
    }

    #[test]
    fn corrupting_an_upstream_artifact_reruns_its_dependents() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("run");
        run_all(tiny_config(6), &root, false).unwrap();
        // Corrupt the dictionary: its producing stage must re-run while
        // unrelated upstream stages stay skipped. The rebuild is
        // deterministic, so downstream stages see identical inputs again
        // and may skip.
        let dict = root.join("dict/dictionary.pdct");
        let bytes = std::fs::read(&dict).unwrap();
        std::fs::write(&dict, &bytes[..bytes.len() / 2]).unwrap();
        let outcomes = run_all(tiny_config(6), &root, false).unwrap();
        let by_name: std::collections::HashMap<_, _> = outcomes
            .iter()
            .map(|o| (o.name.as_str(), o.skipped))
            .collect();
        assert!(by_name["generate"], "generate should be skipped");
        assert!(by_name["train-seg"], "train-seg should be skipped");
        assert!(!by_name["build-dict"], "build-dict must re-run");
        // The regenerated dictionary is byte-identical to the original.
        assert_eq!(std::fs::read(&dict).unwrap(), bytes);
    }

    #[test]
    fn missing_upstream_is_a_dependency_error() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("run");
        let err = run_stage(tiny_config(7), &root, "restore", false).unwrap_err();
        match err {
            Error::Dependency { stage, producer, .. } => {
                assert_eq!(stage, "restore");
                assert_eq!(producer, "train-seg");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn identical_runs_produce_byte_identical_metrics() {
        let tmp = tempfile::tempdir().unwrap();
        let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
        run_all(tiny_config(9), &a, false).unwrap();
        run_all(tiny_config(9), &b, false).unwrap();
        for f in [
            "eval/seg_scores.csv",
            "eval/pose_scores.csv",
            "eval/threshold_curve.csv",
            "eval/comparison.csv",
        ] {
            let x = std::fs::read(a.join(f)).unwrap();
            let y = std::fs::read(b.join(f)).unwrap();
            assert_eq!(x, y, "{f} differs between identical runs");
        }
    }
}
