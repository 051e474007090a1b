//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 runtime
//! error. Runtime errors are printed as `error: kind=<kind> msg=<message>`.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::ablation::{ablation_csv, run_ablation};
use crate::eval::{detections, evaluate_seeded, training_counts, write_records};
use crate::export::{matrix_csv, matrix_pgm, normalised_confusion};
use crate::gradcheck::{reports_csv, run_default};
use crate::graph_file::write_graph_file;
use crate::model::{GpnnModel, ReadoutActivation};
use crate::synth::{generate, Dataset};
use crate::train::{
    class_weights, metrics_csv, units, worker_count, Trainer, METRICS_HEADER, WORKERS_ENV,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "gpnn",
    version,
    about = "Graph parsing neural network: data, training and evaluation"
)]
#[command(after_help = format!("Worker threads: set {WORKERS_ENV} (default: all cores)."))]
pub struct Cli {
    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic graph file (seeded by --seed when given).
    Gen(Common),
    /// Train a model; writes checkpoint.bin, metrics.csv and config.toml into --out.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint up to the configured epoch count.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test data; writes reports into --out.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train every configured variant over the seed range; writes a CSV table to --out.
    Ablate(Common),
    /// Finite-difference gradient check; writes a CSV report to --out and fails above tolerance.
    Gradcheck(Common),
    /// Write the inferred adjacency of one test scene as CSV and PGM into --out.
    DumpAdjacency {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Index into the test units; temporal tasks dump the last frame.
        #[arg(long, default_value_t = 0)]
        scene: usize,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Gen(c) | Command::Ablate(c) | Command::Gradcheck(c) => c,
            Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::DumpAdjacency { common, .. } => common,
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: kind={} msg={}", e.kind(), e);
            EXIT_RUNTIME
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let common = cli.command.common();
    let cfg = load_config(common)?;
    worker_count()?;
    if cli.print_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    match &cli.command {
        Command::Gen(c) => cmd_gen(&cfg, c),
        Command::Train { common, resume } => cmd_train(&cfg, &common.out, resume.as_deref()),
        Command::Eval { common, checkpoint } => cmd_eval(&cfg, &common.out, checkpoint),
        Command::Ablate(c) => cmd_ablate(&cfg, &c.out),
        Command::Gradcheck(c) => cmd_gradcheck(&cfg, &c.out),
        Command::DumpAdjacency {
            common,
            checkpoint,
            scene,
        } => cmd_dump_adjacency(&cfg, &common.out, checkpoint, *scene),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn cmd_gen(cfg: &RunConfig, common: &Common) -> Result<()> {
    let mut spec = cfg.synth.clone();
    if let Some(s) = common.seed {
        spec.seed = s;
    }
    let data = generate(&spec)?;
    if let Some(parent) = common.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_graph_file(&common.out, &data)?;
    println!(
        "wrote {} sequences ({} scenes) to {}",
        data.sequences.len(),
        data.scene_count(),
        common.out.display()
    );
    Ok(())
}

fn check_heads(model: &GpnnModel, data: &Dataset) -> Result<()> {
    if model.config.heads != data.heads
        || model.config.node_dim != data.node_dim
        || model.config.edge_dim != data.edge_dim
    {
        return Err(Error::Config(
            "checkpoint does not match the data's widths or heads".into(),
        ));
    }
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<()> {
    let data = cfg.train_data()?;
    let train_units = units(&data, cfg.task)?;
    let mut train_cfg = cfg.train_config();
    let mut trainer = match resume {
        Some(p) => {
            let ckpt = Checkpoint::load(p)?;
            let model = ckpt.model()?;
            check_heads(&model, &data)?;
            if train_cfg.inverse_frequency {
                train_cfg.loss.class_weights = class_weights(&model, &train_units);
            }
            Trainer::resume(&ckpt, train_cfg)?
        }
        None => {
            let model = GpnnModel::new(
                cfg.model_config(&data),
                &mut ChaCha8Rng::seed_from_u64(cfg.seed),
            )?;
            if train_cfg.inverse_frequency {
                train_cfg.loss.class_weights = class_weights(&model, &train_units);
            }
            Trainer::new(model, train_cfg)?
        }
    };
    create_dir(out)?;
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let metrics_path = out.join("metrics.csv");
    let appending = resume.is_some() && metrics_path.is_file();
    let mut metrics = fs::OpenOptions::new()
        .create(true)
        .append(appending)
        .write(true)
        .truncate(!appending)
        .open(&metrics_path)?;
    if !appending {
        writeln!(metrics, "{METRICS_HEADER}")?;
    }
    let mut emit = |rows: &[crate::train::EpochMetrics], trainer: &Trainer| -> Result<()> {
        let csv = metrics_csv(rows);
        metrics.write_all(csv.split_once('\n').map_or("", |(_, body)| body).as_bytes())?;
        trainer.checkpoint().save(out.join("checkpoint.bin"))?;
        for r in rows {
            println!(
                "epoch {} lr {} loss {:.6} accuracy {:.4}",
                r.epoch, r.lr, r.loss, r.accuracy
            );
        }
        Ok(())
    };
    if trainer.epoch == 0 {
        let rows = trainer.fit(&train_units, 0)?;
        emit(&rows, &trainer)?;
    }
    while trainer.epoch < cfg.optim.epochs {
        let row = trainer.run_epoch(&train_units)?;
        emit(&[row], &trainer)?;
    }
    trainer.checkpoint().save(out.join("checkpoint.bin"))?;
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, out: &Path, checkpoint: &Path) -> Result<()> {
    let model = Checkpoint::load(checkpoint)?.model()?;
    let test = cfg.test_data()?;
    check_heads(&model, &test)?;
    let sigmoid = model
        .heads()
        .position(|h| h.activation == ReadoutActivation::Sigmoid);
    // Rare classes are defined by training counts when training data with
    // boxes is at hand.
    let counts = match sigmoid {
        Some(h) => cfg
            .train_data()
            .ok()
            .and_then(|d| training_counts(&d, h).ok()),
        None => None,
    };
    let report = evaluate_seeded(&model, &test, cfg.task, counts.as_deref(), cfg.seed)?;
    create_dir(out)?;
    fs::write(out.join("report.csv"), report.to_csv())?;
    if let (Some(h), Some(_)) = (sigmoid, &report.detection) {
        let (dets, _) = detections(&model, &units(&test, cfg.task)?, h)?;
        fs::write(out.join("detections.csv"), write_records(&dets))?;
    }
    for head in &report.heads {
        let m = normalised_confusion(&head.confusion);
        let stem = format!("confusion_{}", head.name);
        fs::write(out.join(format!("{stem}.csv")), matrix_csv(&m)?)?;
        fs::write(out.join(format!("{stem}.pgm")), matrix_pgm(&m)?)?;
        println!("{} macro-F1 {:.4}", head.name, head.f1.macro_f1);
    }
    if let Some(d) = &report.detection {
        println!("mAP full {:.4}", d.map.full);
    }
    if let Some(a) = report.adjacency_auc {
        println!("adjacency AUC {a:.4}");
    }
    println!("primary {:.4}", report.primary());
    Ok(())
}

pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let train = cfg.train_data()?;
    let test = cfg.test_data()?;
    let rows = run_ablation(
        &cfg.variants()?,
        &train,
        &test,
        &cfg.ablation_setup(&train),
        &cfg.ablation_seeds(),
    )?;
    let csv = ablation_csv(&rows);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(out, &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn cmd_gradcheck(cfg: &RunConfig, out: &Path) -> Result<()> {
    let reports = run_default(cfg.seed, &cfg.gradcheck)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(out, reports_csv(&reports))?;
    let mut worst = 0.0f64;
    for r in &reports {
        let e = r.max_rel_err();
        worst = worst.max(e);
        let verdict = if e <= cfg.gradcheck.tolerance {
            "pass"
        } else {
            "FAIL"
        };
        println!("{} max relative error {e:.3e} {verdict}", r.case);
    }
    if worst > cfg.gradcheck.tolerance {
        return Err(Error::CheckFailed(format!(
            "max relative error {worst:.3e} exceeds tolerance {:.1e}",
            cfg.gradcheck.tolerance
        )));
    }
    Ok(())
}

pub fn cmd_dump_adjacency(
    cfg: &RunConfig,
    out: &Path,
    checkpoint: &Path,
    scene: usize,
) -> Result<()> {
    let model = Checkpoint::load(checkpoint)?.model()?;
    let test = cfg.test_data()?;
    check_heads(&model, &test)?;
    let all = units(&test, cfg.task)?;
    let unit = all.get(scene).ok_or(Error::IndexOutOfRange {
        op: "dump-adjacency",
        index: scene,
        len: all.len(),
    })?;
    let results = model.parse_sequence(unit)?;
    let last = results
        .last()
        .ok_or_else(|| Error::Config("empty unit".into()))?;
    create_dir(out)?;
    let write = |stem: &str, m: &crate::tensor::Tensor| -> Result<()> {
        fs::write(out.join(format!("{stem}.csv")), matrix_csv(m)?)?;
        fs::write(out.join(format!("{stem}.pgm")), matrix_pgm(m)?)?;
        Ok(())
    };
    write("adjacency", &last.adjacency)?;
    for (s, t) in last.trace.iter().enumerate() {
        write(&format!("adjacency_s{}", s + 1), &t.adjacency)?;
    }
    if let Some(g) = &unit.last().and_then(|f| f.gt_adjacency.clone()) {
        write("adjacency_gt", g)?;
    }
    println!("wrote adjacency of unit {scene} to {}", out.display());
    Ok(())
}
