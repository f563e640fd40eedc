//! Command-line driver for the hand-part pipeline: dataset generation,
//! segmenter training, dictionary construction, restoration, pseudo-label
//! gating, fine-tuning, joint regression, evaluation, and ablations.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use handparts::error::Result;
use handparts::models::mlp::{grad_check, Mlp};
use handparts::models::reg::reg_loss_grad;
use handparts::models::seg::{seg_loss_grad, SegExample, SegModel};
use handparts::models::GradCheckReport;
use handparts::pipeline::{Pipeline, PipelineConfig, RestoreMethod, STAGES};

#[derive(Parser)]
#[command(
    name = "handparts",
    version,
    about = "Depth-based hand part segmentation and joint regression pipeline"
)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output root directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Override the dataset master seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread cap (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Re-run stages even when their inputs are unchanged.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic, real-proxy, and test splits.
    Generate,
    /// Pre-train the part segmenter on the synthetic split.
    TrainSeg {
        /// Verify analytic gradients against finite differences and print
        /// the report before training.
        #[arg(long)]
        grad_check: bool,
    },
    /// Extract the label-patch dictionary from synthetic maps.
    BuildDict,
    /// Restore predicted label maps via dictionary transfer.
    Restore {
        /// Transfer rule: center | vote | crf-potts | crf-overlap.
        #[arg(long)]
        method: Option<String>,
        /// Voting window side length (odd).
        #[arg(long)]
        window: Option<usize>,
        /// CRF pairwise weight alpha.
        #[arg(long)]
        alpha: Option<f64>,
        /// CRF ranks per pixel.
        #[arg(long)]
        ranks: Option<usize>,
    },
    /// Gate restored maps by the barycenter quality measure.
    Gate,
    /// Fine-tune the segmenter on the mixed pseudo-label stream.
    FinetuneSeg,
    /// Train the per-joint regressors.
    TrainReg {
        #[arg(long)]
        grad_check: bool,
    },
    /// Evaluate segmentation and pose metrics on the test split.
    Eval,
    /// Train and compare the regressor variants (a)/(c)/(d).
    Ablation,
    /// Run pipeline stages in order ("all" or a stage name).
    Run {
        /// "all" or one of: generate, train-seg, build-dict, restore, gate,
        /// finetune-seg, train-reg, eval.
        target: String,
    },
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.dataset.master_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_outcome(o: &handparts::pipeline::StageOutcome) {
    if o.skipped {
        println!("[{}] up to date, skipped", o.name);
    } else {
        println!("[{}] done in {:.2}s", o.name, o.duration_s);
    }
}

fn run_stages(cfg: PipelineConfig, common: &Common, names: &[&str]) -> Result<()> {
    let mut p = Pipeline::new(cfg, &common.out)?;
    p.force = common.force;
    for name in names {
        let o = p.run_stage(name)?;
        print_outcome(&o);
    }
    Ok(())
}

fn print_grad_report(label: &str, report: &GradCheckReport) {
    println!(
        "gradient check ({label}): step {:.0e}, tolerance {:.0e}",
        report.step, report.tolerance
    );
    for (block, err) in &report.blocks {
        println!("  {block}: max relative error {err:.3e}");
    }
    println!("  result: {}", if report.pass { "PASS" } else { "FAIL" });
}

fn seg_grad_check() -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let model = SegModel::init(9, 16, 2024);
    let batch: Vec<SegExample> = (0..6)
        .map(|_| {
            let x: Vec<f64> = (0..81).map(|_| rng.gen_range(-1.5..1.5)).collect();
            (x, rng.gen_range(1u8..=20))
        })
        .collect();
    let (_, g) = seg_loss_grad(&model, &batch).expect("gradient");
    let loss_of = |m: &Mlp| {
        let probe = SegModel {
            patch: model.patch,
            mlp: m.clone(),
            steps: 0,
        };
        seg_loss_grad(&probe, &batch).expect("loss").0
    };
    grad_check(&model.mlp, loss_of, &g, 1e-5, 1e-4)
}

fn reg_grad_check() -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(4048);
    let net = Mlp::init(20, 12, 3, 4048);
    let xs: Vec<Vec<f64>> = (0..6)
        .map(|_| (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let ts: Vec<[f64; 3]> = (0..6)
        .map(|_| std::array::from_fn(|_| rng.gen_range(-10.0..10.0)))
        .collect();
    let batch: Vec<(&Vec<f64>, &[f64; 3])> = xs.iter().zip(&ts).collect();
    let (_, g) = reg_loss_grad(&net, &batch).expect("gradient");
    let loss_of = |m: &Mlp| {
        let b: Vec<(&Vec<f64>, &[f64; 3])> = xs.iter().zip(&ts).collect();
        reg_loss_grad(m, &b).expect("loss").0
    };
    grad_check(&net, loss_of, &g, 1e-5, 1e-4)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.common.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .ok();
    }
    let mut cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Generate => run_stages(cfg, &cli.common, &["generate"]),
        Command::TrainSeg { grad_check } => {
            if grad_check {
                let report = seg_grad_check();
                print_grad_report("segmenter NLL", &report);
            }
            run_stages(cfg, &cli.common, &["train-seg"])
        }
        Command::BuildDict => run_stages(cfg, &cli.common, &["build-dict"]),
        Command::Restore {
            method,
            window,
            alpha,
            ranks,
        } => {
            if let Some(m) = method {
                cfg.restoration.method = RestoreMethod::parse(&m)?;
            }
            if let Some(w) = window {
                cfg.restoration.window = w;
            }
            if let Some(a) = alpha {
                cfg.restoration.crf_alpha = a;
            }
            if let Some(r) = ranks {
                cfg.restoration.crf_ranks = r;
                cfg.restoration.neighbors = cfg.restoration.neighbors.max(r);
            }
            cfg.validate()?;
            run_stages(cfg, &cli.common, &["restore"])
        }
        Command::Gate => run_stages(cfg, &cli.common, &["gate"]),
        Command::FinetuneSeg => run_stages(cfg, &cli.common, &["finetune-seg"]),
        Command::TrainReg { grad_check } => {
            if grad_check {
                let report = reg_grad_check();
                print_grad_report("regressor L2", &report);
            }
            run_stages(cfg, &cli.common, &["train-reg"])
        }
        Command::Eval => run_stages(cfg, &cli.common, &["eval"]),
        Command::Ablation => {
            let mut p = Pipeline::new(cfg, &cli.common.out)?;
            p.force = cli.common.force;
            let report = p.ablation()?;
            println!("{}", report.text);
            Ok(())
        }
        Command::Run { target } => {
            if target == "all" {
                run_stages(cfg, &cli.common, &STAGES)
            } else if STAGES.contains(&target.as_str()) {
                run_stages(cfg, &cli.common, &[target.as_str()])
            } else {
                Err(handparts::error::Error::Config(format!(
                    "unknown run target '{target}' (expected 'all' or a stage name)"
                )))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
