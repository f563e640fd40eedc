//! Acceptance suite: one test per shipped acceptance criterion. Each test
//! prints a single `criterion NN: PASS/FAIL ...` line (run with
//! `--nocapture` to see them) and asserts the criterion.
//!
//! Criteria 4-7 share a 5-seed benchmark fixture built once per process:
//! per seed, 500 synthetic training images, 100 sensor-degraded real-proxy
//! images, 100 held-out degraded test images, a ~5k-patch dictionary, and
//! the full restore / gate / fine-tune / regression chain run in memory.

use std::collections::HashSet;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use handparts::datagen::{
    apply_sensor_noise, generate_sample, load_sample, local_contrast_normalize, write_sample,
    DatasetConfig, DomainShiftConfig,
};
use handparts::metrics::{pose_error, PoseUnits};
use handparts::models::io::{load_reg_model, load_seg_model, save_reg_model, save_seg_model};
use handparts::models::reg::{build_reg_example, reg_loss_grad, RegExample, RegModel};
use handparts::models::{
    finetune_segmenter, grad_check, predict_labelmap, predict_pose, seg_loss_grad,
    train_regressor, train_segmenter, Mlp, RegInputMode, RegTrainConfig, SegModel, SegTrainConfig,
};
use handparts::patchdict::{
    extract_patches, load_dictionary, save_dictionary, LabelPatch, PatchDictionary,
};
use handparts::pipeline::{hash_file, run_all, PipelineConfig, RunManifest, STAGES};
use handparts::restoration::crf::{crf_icm, CrfModel};
use handparts::restoration::{
    query_field, restore_center, restore_vote, PairwiseKind, RankedNeighborField,
    RestorationConfig,
};
use handparts::supervision::{
    build_finetune_stream, gate_sample, JointLabelTable, PseudoLabelSet, StreamSource,
};
use handparts::types::{DepthMap, JointSet, LabelMap, NUM_PARTS};

/// Process CPU seconds, immune to host-level contention and frequency
/// throttling (falls back to wall time off Linux).
fn cpu_seconds() -> Option<f64> {
    let stat = std::fs::read_to_string("/proc/self/stat").ok()?;
    let rest = stat.rsplit(')').next()?;
    let fields: Vec<&str> = rest.split_whitespace().collect();
    let utime: f64 = fields.get(11)?.parse().ok()?;
    let stime: f64 = fields.get(12)?.parse().ok()?;
    Some((utime + stime) / 100.0)
}

struct BudgetClock {
    wall: Instant,
    cpu: Option<f64>,
}

impl BudgetClock {
    fn start() -> Self {
        BudgetClock {
            wall: Instant::now(),
            cpu: cpu_seconds(),
        }
    }

    fn elapsed(&self) -> f64 {
        match (self.cpu, cpu_seconds()) {
            (Some(a), Some(b)) => b - a,
            _ => self.wall.elapsed().as_secs_f64(),
        }
    }
}

fn report(criterion: u32, ok: bool, detail: &str) {
    println!(
        "criterion {criterion:02}: {} {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {criterion} failed: {detail}");
}

// ---------------------------------------------------------------------------
// Criterion 1: indexed NN search == brute force, including tie order.
// ---------------------------------------------------------------------------

fn random_label_map(rng: &mut ChaCha8Rng, w: usize, h: usize, bg_prob: f64) -> LabelMap {
    let mut m = LabelMap::new(w, h);
    for l in m.labels.iter_mut() {
        *l = if rng.gen_bool(bg_prob) {
            0
        } else {
            rng.gen_range(1..=NUM_PARTS as u8)
        };
    }
    m
}

fn random_dictionary(rng: &mut ChaCha8Rng, patch_size: usize, n_maps: usize) -> PatchDictionary {
    let extra = rng.gen_range(4..=16);
    let side = patch_size + extra;
    let maps: Vec<LabelMap> = (0..n_maps)
        .map(|_| random_label_map(rng, side, side, 0.2))
        .collect();
    let mut dict = extract_patches(&maps, patch_size, 1, false).unwrap();
    dict.build_index(rng.gen());
    dict
}

/// Cell-wise mismatch count, computed without the packed-word kernel.
fn naive_distance(a: &[u8], b: &[u8]) -> u32 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u32
}

#[test]
fn criterion_01_nn_search_matches_brute_force() {
    let clock = BudgetClock::start();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC1);
    for round in 0..50 {
        let p = [3usize, 9, 27][round % 3];
        let n_maps = rng.gen_range(1..=3);
        let dict = random_dictionary(&mut rng, p, n_maps);
        assert!(dict.count() <= 10_000);
        let cells: Vec<Vec<u8>> = (0..dict.count())
            .map(|id| dict.patch(id as u32).cells().to_vec())
            .collect();
        for _ in 0..200 {
            let q_cells: Vec<u8> = if rng.gen_bool(0.5) {
                // Mutated copy of a stored patch: guarantees near-duplicates
                // and distance ties.
                let mut c = cells[rng.gen_range(0..cells.len())].clone();
                for _ in 0..rng.gen_range(0..4) {
                    let i = rng.gen_range(0..c.len());
                    c[i] = rng.gen_range(0..=NUM_PARTS as u8);
                }
                c
            } else {
                (0..p * p).map(|_| rng.gen_range(0..=NUM_PARTS as u8)).collect()
            };
            let q = LabelPatch::new(p, q_cells.clone()).unwrap();
            let k = rng.gen_range(1..=5).min(dict.count());
            let got = dict.nn_search(&q, k).unwrap();
            let mut all: Vec<(u32, u32)> = cells
                .iter()
                .enumerate()
                .map(|(id, c)| (naive_distance(c, &q_cells), id as u32))
                .collect();
            all.sort();
            let expect: Vec<(u32, u32)> = all[..k].iter().map(|&(d, id)| (id, d)).collect();
            assert_eq!(got.hits, expect, "tie-order mismatch at P={p}");
        }
    }
    let secs = clock.elapsed();
    report(
        1,
        secs < 60.0,
        &format!("indexed search equals brute force on 50 dictionaries x 200 queries ({secs:.1} CPU-s)"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: windowed voting == exhaustive double-loop oracle; W=1 == center.
// ---------------------------------------------------------------------------

/// Independent re-statement of the voting rule: pixel j tallies, over every
/// in-image foreground neighbor k in the window, the label that k's best
/// patch stores at j's position; majority wins, ties to the smaller label.
fn double_loop_vote(
    pred: &LabelMap,
    field: &RankedNeighborField,
    dict: &PatchDictionary,
    window: usize,
) -> LabelMap {
    let p = dict.patch_size() as isize;
    let pr = p / 2;
    let wr = (window / 2) as isize;
    let (w, h) = (pred.width as isize, pred.height as isize);
    let mut out = LabelMap::new(pred.width, pred.height);
    for jv in 0..h {
        for ju in 0..w {
            if pred.get(ju as usize, jv as usize) == 0 {
                continue;
            }
            let mut tally = [0u32; NUM_PARTS + 1];
            for kv in (jv - wr)..=(jv + wr) {
                for ku in (ju - wr)..=(ju + wr) {
                    if ku < 0 || kv < 0 || ku >= w || kv >= h {
                        continue;
                    }
                    let Some(res) = field.get(ku as usize, kv as usize) else {
                        continue;
                    };
                    let (cu, cv) = (pr + ju - ku, pr + jv - kv);
                    if cu < 0 || cv < 0 || cu >= p || cv >= p {
                        continue;
                    }
                    let label = dict.cell(res.hits[0].0, (cv * p + cu) as usize);
                    tally[label as usize] += 1;
                }
            }
            let mut best = 0usize;
            for l in 1..=NUM_PARTS {
                if tally[l] > tally[best] {
                    best = l;
                }
            }
            out.set(ju as usize, jv as usize, best as u8);
        }
    }
    out
}

#[test]
fn criterion_02_vote_matches_double_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC2);
    for _ in 0..20 {
        let dict = random_dictionary(&mut rng, 3, 1);
        let pred = random_label_map(&mut rng, 16, 16, 0.3);
        let field = query_field(&pred, &dict, 1).unwrap();
        for window in [1usize, 3, 5] {
            let cfg = RestorationConfig {
                window,
                ..RestorationConfig::default()
            };
            let got = restore_vote(&field, &dict, &cfg).unwrap();
            let want = double_loop_vote(&pred, &field, &dict, window);
            assert_eq!(got, want, "vote mismatch at W={window}");
            if window == 1 {
                assert_eq!(got, restore_center(&field, &dict), "W=1 != center transfer");
            }
        }
    }
    report(
        2,
        true,
        "windowed voting equals the double-loop oracle on 20 instances; W=1 equals center transfer",
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: CRF energy descent, alpha=0 degeneracy, tiny global optimum.
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_crf_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC3);
    // Energy descent + final-energy consistency on 20 random instances.
    for round in 0..20 {
        let dict = random_dictionary(&mut rng, 3, 1);
        let pred = random_label_map(&mut rng, 12, 12, 0.4);
        let ranks = 3.min(dict.count());
        let field = query_field(&pred, &dict, ranks).unwrap();
        let cfg = RestorationConfig {
            window: 5,
            crf_alpha: rng.gen_range(0.0..2.0),
            crf_ranks: ranks,
            crf_pairwise_kind: if round % 2 == 0 {
                PairwiseKind::PottsCenter
            } else {
                PairwiseKind::OverlapHamming
            },
            crf_max_sweeps: 20,
        };
        let model = CrfModel::build(&field, &dict, &cfg).unwrap();
        let res = crf_icm(&model).unwrap();
        for pair in res.energy_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "energy increased: {pair:?}");
        }
        let recomputed = model.energy(&res.assignment).unwrap();
        assert!(
            (recomputed - res.energy_trace.last().unwrap()).abs() < 1e-9,
            "trace end {} != recomputed energy {recomputed}",
            res.energy_trace.last().unwrap()
        );
    }
    // alpha = 0 reduces to rank-0 center transfer.
    for _ in 0..5 {
        let dict = random_dictionary(&mut rng, 3, 1);
        let pred = random_label_map(&mut rng, 12, 12, 0.4);
        let field = query_field(&pred, &dict, 3).unwrap();
        let cfg = RestorationConfig {
            window: 5,
            crf_alpha: 0.0,
            crf_ranks: 3,
            ..RestorationConfig::default()
        };
        let model = CrfModel::build(&field, &dict, &cfg).unwrap();
        let res = crf_icm(&model).unwrap();
        assert_eq!(res.labels, restore_center(&field, &dict), "alpha=0 != center transfer");
    }
    // Two variables, two ranks: enumerate all four assignments. Coordinate
    // descent always stops at an assignment no single flip improves; when the
    // instance has exactly one such stopping point (the generic case), that
    // point is the enumerated global optimum and ICM must reach it.
    let mut single_basin = 0;
    let mut round = 0;
    while single_basin < 10 {
        round += 1;
        assert!(round <= 200, "too few single-basin instances drawn");
        let dict = random_dictionary(&mut rng, 3, 1);
        let mut pred = LabelMap::new(8, 8);
        pred.set(3, 3, rng.gen_range(1..=NUM_PARTS as u8));
        pred.set(4, 3, rng.gen_range(1..=NUM_PARTS as u8));
        let field = query_field(&pred, &dict, 2).unwrap();
        let cfg = RestorationConfig {
            window: 5,
            crf_alpha: rng.gen_range(0.0..3.0),
            crf_ranks: 2,
            crf_pairwise_kind: if round % 2 == 0 {
                PairwiseKind::PottsCenter
            } else {
                PairwiseKind::OverlapHamming
            },
            crf_max_sweeps: 20,
        };
        let model = CrfModel::build(&field, &dict, &cfg).unwrap();
        assert_eq!(model.num_variables(), 2);
        let res = crf_icm(&model).unwrap();
        let assignments = [[0usize, 0], [0, 1], [1, 0], [1, 1]];
        let energy_of = |x: &[usize; 2]| model.energy(x).unwrap();
        let stuck = |x: &[usize; 2]| {
            energy_of(&[1 - x[0], x[1]]) >= energy_of(x)
                && energy_of(&[x[0], 1 - x[1]]) >= energy_of(x)
        };
        let reached: [usize; 2] = [res.assignment[0], res.assignment[1]];
        assert!(stuck(&reached), "ICM stopped where a single flip still improves");
        let stopping: Vec<&[usize; 2]> = assignments.iter().filter(|x| stuck(x)).collect();
        if stopping.len() == 1 {
            single_basin += 1;
            let best = assignments.iter().map(|x| energy_of(x)).fold(f64::INFINITY, f64::min);
            assert!(
                (energy_of(&reached) - best).abs() < 1e-12,
                "ICM energy {} != global optimum {best}",
                energy_of(&reached)
            );
        }
    }
    report(
        3,
        true,
        "ICM energy nonincreasing with consistent trace; alpha=0 equals center transfer; 2-variable instances stop only where no flip improves and reach the enumerated optimum whenever it is the unique stopping point",
    );
}

// ---------------------------------------------------------------------------
// Shared 5-seed benchmark fixture for criteria 4-7.
// ---------------------------------------------------------------------------

const BENCH_SEEDS: [u64; 5] = [101, 202, 303, 404, 505];
const N_SYNTH: usize = 500;
const N_REAL: usize = 100;
const N_TEST: usize = 100;

struct SeedRun {
    acc_unrestored: f64,
    acc_restored: f64,
    acc_pre_test: f64,
    acc_fine_test: f64,
    err_a: f64,
    err_c: f64,
    err_d: f64,
    gate_total: usize,
    gate_accepted: usize,
    gate_violations: usize,
    stream_audit_ok: bool,
    rejection_rate: f64,
    dict_count: usize,
    /// Seconds spent on generate + pre-train + dictionary + restore, the
    /// phases covered by the benchmark runtime budget.
    bench_secs: f64,
}

struct Fixture {
    runs: Vec<SeedRun>,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| Fixture {
        runs: BENCH_SEEDS.iter().map(|&s| run_seed(s)).collect(),
    })
}

fn pooled_acc(pairs: &[(LabelMap, &LabelMap)]) -> f64 {
    let (mut correct, mut total) = (0u64, 0u64);
    for (pred, truth) in pairs {
        for i in 0..truth.labels.len() {
            if truth.labels[i] != 0 {
                total += 1;
                if pred.labels[i] == truth.labels[i] {
                    correct += 1;
                }
            }
        }
    }
    correct as f64 / total as f64
}

struct BenchSample {
    /// Depth as the model sees it (degraded for real/test splits).
    depth: DepthMap,
    norm: DepthMap,
    labels: LabelMap,
    joints: JointSet,
}

fn gen_split(cfg: &DatasetConfig, base: u64, count: usize, degrade: bool) -> Vec<BenchSample> {
    (0..count)
        .map(|i| {
            let sample_seed = cfg
                .master_seed
                .wrapping_mul(0x0100_0000_0000)
                .wrapping_add(base + i as u64);
            let mut s = generate_sample(cfg, sample_seed).unwrap();
            if degrade {
                let shift = DomainShiftConfig {
                    seed: sample_seed ^ 0x5EED,
                    ..cfg.shift.clone()
                };
                s.depth = apply_sensor_noise(&s.depth, &shift);
            }
            let norm = local_contrast_normalize(&s.depth, 9).unwrap();
            BenchSample {
                depth: s.depth,
                norm,
                labels: s.labels,
                joints: s.joints,
            }
        })
        .collect()
}

fn run_seed(master: u64) -> SeedRun {
    let table = JointLabelTable::default_table();
    let cfg = DatasetConfig {
        master_seed: master,
        ..DatasetConfig::default()
    };

    let bench_clock = BudgetClock::start();
    let synth = gen_split(&cfg, 0, N_SYNTH, false);
    let real = gen_split(&cfg, 1_000_000, N_REAL, true);
    let test = gen_split(&cfg, 2_000_000, N_TEST, true);

    // Supervised pre-training on clean synthetic data.
    let seg_cfg = SegTrainConfig {
        epochs: 3,
        pixels_per_image: 100,
        ..SegTrainConfig::default()
    };
    let items: Vec<handparts::models::seg::SegItem> = synth
        .iter()
        .map(|s| handparts::models::seg::SegItem {
            depth: &s.norm,
            labels: &s.labels,
        })
        .collect();
    let (pre, _) = train_segmenter(&items, &seg_cfg, master ^ 0x11).unwrap();

    // ~5k-patch dictionary from the synthetic label maps.
    let maps: Vec<LabelMap> = synth.iter().map(|s| s.labels.clone()).collect();
    let mut prefix = 40;
    let mut dict = loop {
        let d = extract_patches(&maps[..prefix], 27, 2, true).unwrap();
        if d.count() >= 4_800 || prefix + 20 > maps.len() {
            break d;
        }
        prefix += 20;
    };
    dict.build_index(master ^ 0x23);

    // Restore every real-proxy prediction by windowed voting.
    let vote_cfg = RestorationConfig::default();
    let preds: Vec<LabelMap> = real.iter().map(|s| predict_labelmap(&pre, &s.norm)).collect();
    let restored: Vec<LabelMap> = preds
        .iter()
        .map(|p| {
            let field = query_field(p, &dict, 1).unwrap();
            restore_vote(&field, &dict, &vote_cfg).unwrap()
        })
        .collect();
    let bench_secs = bench_clock.elapsed();

    let acc_unrestored = pooled_acc(
        &preds.iter().zip(&real).map(|(p, s)| (p.clone(), &s.labels)).collect::<Vec<_>>(),
    );
    let acc_restored = pooled_acc(
        &restored.iter().zip(&real).map(|(r, s)| (r.clone(), &s.labels)).collect::<Vec<_>>(),
    );

    // Barycenter quality gate.
    let mut pseudo = PseudoLabelSet::default();
    let mut gate_violations = 0;
    for (i, (p, r)) in preds.iter().zip(&restored).enumerate() {
        let rep = gate_sample(p, r, &real[i].joints, &table).unwrap();
        if rep.accepted && rep.sum_after >= rep.sum_before {
            gate_violations += 1;
        }
        let id = format!("r{i:03}");
        if rep.accepted {
            pseudo.accepted.push((id, r.clone()));
        } else {
            pseudo.rejected.push((id, "quality_not_improved".into()));
        }
    }
    let gate_accepted = pseudo.accepted.len();
    let rejection_rate = pseudo.rejection_rate();

    // Mixed fine-tune stream, with a source-tag audit: rejected ids must
    // never enter as pseudo entries.
    let synth_ids: Vec<String> = (0..N_SYNTH).map(|i| format!("s{i:03}")).collect();
    let stream = build_finetune_stream(&synth_ids, &pseudo, 9, master ^ 0x41).unwrap();
    let accepted_ids: HashSet<&str> = pseudo.accepted.iter().map(|(id, _)| id.as_str()).collect();
    let rejected_ids: HashSet<&str> = pseudo.rejected.iter().map(|(id, _)| id.as_str()).collect();
    let stream_audit_ok = stream.entries.iter().all(|e| match e.source {
        StreamSource::Synth => e.sample_id.starts_with('s'),
        StreamSource::Pseudo => {
            accepted_ids.contains(e.sample_id.as_str())
                && !rejected_ids.contains(e.sample_id.as_str())
        }
    });
    let restored_of: std::collections::HashMap<&str, &LabelMap> =
        pseudo.accepted.iter().map(|(id, m)| (id.as_str(), m)).collect();
    let stream_items: Vec<handparts::models::seg::SegItem> = stream
        .entries
        .iter()
        .map(|e| {
            let idx: usize = e.sample_id[1..].parse().unwrap();
            match e.source {
                StreamSource::Synth => handparts::models::seg::SegItem {
                    depth: &synth[idx].norm,
                    labels: &synth[idx].labels,
                },
                StreamSource::Pseudo => handparts::models::seg::SegItem {
                    depth: &real[idx].norm,
                    labels: restored_of[e.sample_id.as_str()],
                },
            }
        })
        .collect();
    let (fine, _) =
        finetune_segmenter(pre.clone(), &stream_items, &seg_cfg, 1, master ^ 0x43).unwrap();

    // Held-out segmentation accuracy before/after fine-tuning.
    let acc_pre_test = pooled_acc(
        &test.iter().map(|s| (predict_labelmap(&pre, &s.norm), &s.labels)).collect::<Vec<_>>(),
    );
    let acc_fine_test = pooled_acc(
        &test.iter().map(|s| (predict_labelmap(&fine, &s.norm), &s.labels)).collect::<Vec<_>>(),
    );

    // Regression variants: (a) depth only, (c) fused with the pre-trained
    // segmenter, (d) fused with the fine-tuned segmenter.
    let reg_cfg = RegTrainConfig {
        epochs: 15,
        hidden: 48,
        ..RegTrainConfig::default()
    };
    let blank = LabelMap::new(cfg.image_size, cfg.image_size);
    let train_variant = |seg_model: Option<&SegModel>, mode: RegInputMode, salt: u64| {
        let examples: Vec<RegExample> = synth
            .iter()
            .map(|s| {
                let seg = match seg_model {
                    Some(m) => predict_labelmap(m, &s.norm),
                    None => blank.clone(),
                };
                build_reg_example(&s.depth, &s.norm, &seg, &s.joints, &table, mode, 1)
            })
            .collect();
        train_regressor(&examples, mode, &reg_cfg, master ^ salt).unwrap()
    };
    let eval_variant = |model: &RegModel, seg_model: Option<&SegModel>| {
        let mut sum = 0.0;
        for s in &test {
            let seg = match seg_model {
                Some(m) => predict_labelmap(m, &s.norm),
                None => blank.clone(),
            };
            let pose = predict_pose(model, &s.depth, &s.norm, &seg, &table);
            sum += pose_error(&pose, &s.joints, PoseUnits::default()).mean_3d();
        }
        sum / test.len() as f64
    };
    let model_a = train_variant(None, RegInputMode::DepthOnly, 0xA5);
    let model_c = train_variant(Some(&pre), RegInputMode::Fused, 0xC5);
    let model_d = train_variant(Some(&fine), RegInputMode::Fused, 0xD5);
    let err_a = eval_variant(&model_a, None);
    let err_c = eval_variant(&model_c, Some(&pre));
    let err_d = eval_variant(&model_d, Some(&fine));

    SeedRun {
        acc_unrestored,
        acc_restored,
        acc_pre_test,
        acc_fine_test,
        err_a,
        err_c,
        err_d,
        gate_total: N_REAL,
        gate_accepted,
        gate_violations,
        stream_audit_ok,
        rejection_rate,
        dict_count: dict.count(),
        bench_secs,
    }
}

#[test]
fn criterion_04_restoration_improves_accuracy() {
    let f = fixture();
    let wins = f.runs.iter().filter(|r| r.acc_restored > r.acc_unrestored).count();
    let bench_secs: f64 = f.runs.iter().map(|r| r.bench_secs).sum();
    let mean_gain: f64 = f
        .runs
        .iter()
        .map(|r| r.acc_restored - r.acc_unrestored)
        .sum::<f64>()
        / f.runs.len() as f64;
    let dicts: Vec<usize> = f.runs.iter().map(|r| r.dict_count).collect();
    report(
        4,
        wins >= 4 && bench_secs < 600.0,
        &format!(
            "vote-restored > unrestored for {wins}/5 seeds (mean {:+.2} pp, dictionaries {dicts:?} patches, benchmark {bench_secs:.0} CPU-s)",
            100.0 * mean_gain
        ),
    );
}

#[test]
fn criterion_05_finetuning_improves_heldout_accuracy() {
    let f = fixture();
    let wins = f.runs.iter().filter(|r| r.acc_fine_test > r.acc_pre_test).count();
    let mean_gain: f64 = f
        .runs
        .iter()
        .map(|r| r.acc_fine_test - r.acc_pre_test)
        .sum::<f64>()
        / f.runs.len() as f64;
    report(
        5,
        wins >= 4,
        &format!("fine-tuned > pre-trained on held-out data for {wins}/5 seeds (mean {:+.2} pp)", 100.0 * mean_gain),
    );
}

#[test]
fn criterion_06_fusion_ordering() {
    let f = fixture();
    let n = f.runs.len() as f64;
    let mean_a: f64 = f.runs.iter().map(|r| r.err_a).sum::<f64>() / n;
    let mean_c: f64 = f.runs.iter().map(|r| r.err_c).sum::<f64>() / n;
    let mean_d: f64 = f.runs.iter().map(|r| r.err_d).sum::<f64>() / n;
    let rel_gain = 100.0 * (mean_a - mean_d) / mean_a;
    report(
        6,
        mean_d < mean_a && mean_d <= mean_c,
        &format!(
            "mean 3-D error: fused+fine-tuned {mean_d:.2}mm <= fused+pre-trained {mean_c:.2}mm, < depth-only {mean_a:.2}mm ({rel_gain:+.1}% vs depth-only)"
        ),
    );
}

#[test]
fn criterion_07_gate_soundness() {
    let f = fixture();
    let violations: usize = f.runs.iter().map(|r| r.gate_violations).sum();
    let audits_ok = f.runs.iter().all(|r| r.stream_audit_ok);
    let total: usize = f.runs.iter().map(|r| r.gate_total).sum();
    let accepted: usize = f.runs.iter().map(|r| r.gate_accepted).sum();
    let mean_rejection: f64 =
        f.runs.iter().map(|r| r.rejection_rate).sum::<f64>() / f.runs.len() as f64;
    report(
        7,
        violations == 0 && audits_ok,
        &format!(
            "0 gate violations over {total} samples ({accepted} accepted, mean rejection rate {:.1}%), no rejected sample entered any fine-tune stream",
            100.0 * mean_rejection
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: gradient checks.
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_gradient_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC8);
    let mut worst = 0.0f64;
    for t in 0..10 {
        let patch = [3usize, 5, 9][t % 3];
        let hidden = rng.gen_range(4..=16);
        let model = SegModel::init(patch, hidden, rng.gen());
        let batch: Vec<(Vec<f64>, u8)> = (0..rng.gen_range(1..=6))
            .map(|_| {
                let x: Vec<f64> = (0..patch * patch).map(|_| rng.gen_range(-1.0..1.0)).collect();
                (x, rng.gen_range(1..=NUM_PARTS as u8))
            })
            .collect();
        let (_, g) = seg_loss_grad(&model, &batch).unwrap();
        let rep = grad_check(
            &model.mlp,
            |m| {
                let probe = SegModel {
                    patch: model.patch,
                    mlp: m.clone(),
                    steps: 0,
                };
                seg_loss_grad(&probe, &batch).unwrap().0
            },
            &g,
            1e-5,
            1e-4,
        );
        worst = worst.max(rep.max_error());
        assert!(rep.pass, "segmenter gradient check failed: {:?}", rep.blocks);
    }
    for _ in 0..10 {
        let input = rng.gen_range(8..=24);
        let hidden = rng.gen_range(4..=12);
        let net = Mlp::init(input, hidden, 3, rng.gen());
        let batch_data: Vec<(Vec<f64>, [f64; 3])> = (0..rng.gen_range(1..=6))
            .map(|_| {
                let x: Vec<f64> = (0..input).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let t = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
                (x, t)
            })
            .collect();
        let batch: Vec<(&Vec<f64>, &[f64; 3])> =
            batch_data.iter().map(|(x, t)| (x, t)).collect();
        let (_, g) = reg_loss_grad(&net, &batch).unwrap();
        let rep = grad_check(
            &net,
            |m| {
                let b: Vec<(&Vec<f64>, &[f64; 3])> =
                    batch_data.iter().map(|(x, t)| (x, t)).collect();
                reg_loss_grad(m, &b).unwrap().0
            },
            &g,
            1e-5,
            1e-4,
        );
        worst = worst.max(rep.max_error());
        assert!(rep.pass, "regressor gradient check failed: {:?}", rep.blocks);
    }
    // A zero-weight segmenter is exactly the uniform model over 20 classes.
    let mut uniform = SegModel::init(5, 8, 0);
    for p in uniform.mlp.params_mut() {
        *p = 0.0;
    }
    let batch = vec![(vec![0.3; 25], 7u8)];
    let (loss, _) = seg_loss_grad(&uniform, &batch).unwrap();
    let ln20_err = (loss - (NUM_PARTS as f64).ln()).abs();
    report(
        8,
        ln20_err < 1e-12,
        &format!(
            "analytic gradients within 1e-4 of central differences on 20 settings (worst {worst:.2e}); uniform-model loss = ln 20 within {ln20_err:.1e}"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: determinism and lossless round-trips.
// ---------------------------------------------------------------------------

fn small_pipeline_config(dir: &std::path::Path) -> PipelineConfig {
    let toml = "\
[dataset]
n_synth = 8
n_real = 4
n_test = 3
master_seed = 5

[dictionary]
patch_size = 9
stride = 4
source_fraction = 0.5

[restoration]
method = \"vote\"
window = 5
neighbors = 3
crf_ranks = 3

[training.seg]
epochs = 1
pixels_per_image = 30
hidden = 8

[training.finetune]
epochs = 1

[training.reg]
epochs = 2
hidden = 8
";
    let p = dir.join("config.toml");
    std::fs::write(&p, toml).unwrap();
    PipelineConfig::load(&p).unwrap()
}

#[test]
fn criterion_09_determinism_and_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_pipeline_config(tmp.path());

    // Identical config + seed => byte-identical metric CSVs.
    let run_a = tmp.path().join("run_a");
    let run_b = tmp.path().join("run_b");
    run_all(cfg.clone(), &run_a, false).unwrap();
    run_all(cfg, &run_b, false).unwrap();
    let metric_files = [
        "eval/seg_scores.csv",
        "eval/pose_scores.csv",
        "eval/threshold_curve.csv",
        "eval/comparison.csv",
        "gate/gate.csv",
    ];
    for rel in metric_files {
        let a = std::fs::read(run_a.join(rel)).unwrap();
        let b = std::fs::read(run_b.join(rel)).unwrap();
        assert_eq!(a, b, "{rel} differs between identical runs");
    }

    // Dictionary file round-trip.
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC9);
    let dict = random_dictionary(&mut rng, 9, 2);
    let d1 = tmp.path().join("d1.pdct");
    let d2 = tmp.path().join("d2.pdct");
    save_dictionary(&dict, &d1).unwrap();
    let reloaded = load_dictionary(&d1).unwrap();
    save_dictionary(&reloaded, &d2).unwrap();
    assert_eq!(std::fs::read(&d1).unwrap(), std::fs::read(&d2).unwrap());

    // Model file round-trips (binary + sidecar).
    let seg = SegModel::init(9, 8, 42);
    let s1 = tmp.path().join("s1.model");
    let s2 = tmp.path().join("s2.model");
    save_seg_model(&seg, &s1).unwrap();
    save_seg_model(&load_seg_model(&s1).unwrap(), &s2).unwrap();
    assert_eq!(std::fs::read(&s1).unwrap(), std::fs::read(&s2).unwrap());
    let reg = RegModel::init(8, RegInputMode::Fused, 1, 42);
    let r1 = tmp.path().join("r1.model");
    let r2 = tmp.path().join("r2.model");
    save_reg_model(&reg, &r1).unwrap();
    save_reg_model(&load_reg_model(&r1).unwrap(), &r2).unwrap();
    assert_eq!(std::fs::read(&r1).unwrap(), std::fs::read(&r2).unwrap());

    // Dataset sample round-trip: a rewrite of what was read is byte-stable.
    let sample = generate_sample(&DatasetConfig::default(), 9).unwrap();
    let dir_a = tmp.path().join("samples_a");
    let dir_b = tmp.path().join("samples_b");
    std::fs::create_dir_all(&dir_a).unwrap();
    std::fs::create_dir_all(&dir_b).unwrap();
    write_sample(&dir_a, "x", &sample).unwrap();
    let (depth, labels, joints) = load_sample(&dir_a, "x").unwrap();
    let rewritten = handparts::datagen::Sample {
        depth,
        labels,
        joints,
        params: sample.params.clone(),
    };
    write_sample(&dir_b, "x", &rewritten).unwrap();
    for name in ["x.depth.pgm", "x.labels.pgm", "x.joints.csv"] {
        assert_eq!(
            std::fs::read(dir_a.join(name)).unwrap(),
            std::fs::read(dir_b.join(name)).unwrap(),
            "{name} not byte-stable across a read/write cycle"
        );
    }

    report(
        9,
        true,
        "identical runs emit byte-identical metric CSVs; dictionary, model, and dataset files round-trip byte-stably",
    );
}

// ---------------------------------------------------------------------------
// Criterion 10: end-to-end smoke on the shipped tiny config.
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_end_to_end_smoke() {
    let clock = BudgetClock::start();
    let cfg_path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/tiny.toml");
    let cfg = PipelineConfig::load(&cfg_path).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("out");
    let outcomes = run_all(cfg, &root, false).unwrap();
    assert_eq!(outcomes.len(), STAGES.len());

    // Every artifact class must exist.
    let required = [
        "config.resolved.toml",
        "run_manifest.json",
        "data/manifest.json",
        "dict/dictionary.pdct",
        "models/seg_pretrained.model",
        "models/seg_finetuned.model",
        "models/regressor.model",
        "models/seg_pretrain_curve.csv",
        "gate/gate.csv",
        "gate/accepted.txt",
        "gate/rejection_rate.txt",
        "eval/seg_scores.csv",
        "eval/pose_scores.csv",
        "eval/threshold_curve.csv",
        "eval/comparison.csv",
        "eval/comparison.txt",
    ];
    for rel in required {
        assert!(root.join(rel).is_file(), "missing artifact {rel}");
    }
    let restored_files = std::fs::read_dir(root.join("restored")).unwrap().count();
    assert!(restored_files > 0, "no restored label maps emitted");

    // Manifest completeness: a record per stage, every recorded hash valid.
    let manifest = RunManifest::load_or_default(&root).unwrap();
    let mut hashed_files = 0;
    for stage in STAGES {
        let rec = manifest
            .stage(stage)
            .unwrap_or_else(|| panic!("stage {stage} missing from run manifest"));
        for (rel, digest) in rec.inputs.iter().chain(rec.outputs.iter()) {
            assert_eq!(
                &hash_file(&root.join(rel)).unwrap(),
                digest,
                "stale hash for {rel} in stage {stage}"
            );
            hashed_files += 1;
        }
    }
    let secs = clock.elapsed();
    report(
        10,
        secs < 900.0,
        &format!(
            "full run on the shipped tiny config in {secs:.0} CPU-s with all artifact classes and a consistent manifest ({hashed_files} audited hashes)"
        ),
    );
}
