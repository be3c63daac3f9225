//! `graphmark` — few-shot landmark localization on procedurally generated
//! shape images: dataset generation, supervised warm-up, semi-supervised
//! training, evaluation, SVG overlays, gradient verification, and the full
//! results table.
//!
//! Exit codes: 0 on success, 1 on any configuration or runtime failure
//! (one-line diagnostic on stderr), 2 on command-line usage errors.
//! Log verbosity is controlled by `RUST_LOG` (error/warn/info/debug).

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use graphmark::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use graphmark::data::{load_dataset, write_dataset, Dataset, Sample, Split};
use graphmark::eval::evaluate;
use graphmark::experiment::{
    build_split_dataset, build_standard_dataset, run_experiment, ExperimentPlan,
};
use graphmark::model::ModelParams;
use graphmark::overlay::write_overlay;
use graphmark::train::{pretrain, train_ssl, Strategy, TrainData, TrainOutcome};
use graphmark::verification::run_gradcheck_suite;

use config::load_config;

#[derive(Parser)]
#[command(
    name = "graphmark",
    version,
    about = "Few-shot landmark localization on synthetic shape images",
    long_about = "Few-shot landmark localization on synthetic shape images.\n\
                  All commands read an optional strict-JSON configuration \
                  (--config); an empty object {} is valid and every resolved \
                  run writes its effective settings to resolved_config.json \
                  next to its outputs. RUST_LOG controls log verbosity."
)]
struct Cli {
    /// JSON run configuration; omitted means all defaults ({} is valid).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with labeled/unlabeled/validation/test
    /// splits.
    GenData(GenDataArgs),
    /// Supervised warm-up on the labeled split; writes a checkpoint.
    Pretrain(PretrainArgs),
    /// Strategy training (teacher-student or a baseline) from a checkpoint
    /// or fresh weights.
    TrainSsl(TrainSslArgs),
    /// Evaluate a checkpoint on an annotated split and write a report.
    Eval(EvalArgs),
    /// Render SVG overlays of predictions (and ground truth when present).
    Overlay(OverlayArgs),
    /// Finite-difference gradient verification of every primitive and the
    /// composed losses; exits nonzero if any exceeds the tolerance.
    Gradcheck(GradcheckArgs),
    /// Train all strategies across several seeds and print the results
    /// table (long-running).
    ReproduceTable(ReproduceArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Generation spec (alias for --config, kept for symmetry with other
    /// tools' conventions).
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    /// Generator seed (default: dataset_seed from the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Destination directory (default: dataset_dir from the config).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PretrainArgs {
    /// Dataset directory (default: dataset_dir from the config).
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Output directory (default: <output_dir>/pretrain).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Training seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Epoch count override.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct TrainSslArgs {
    /// Dataset directory (default: dataset_dir from the config).
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Checkpoint to start from (default: fresh weights from model_seed).
    #[arg(long, value_name = "FILE")]
    init: Option<PathBuf>,
    /// Output directory (default: <output_dir>/<strategy>).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Training seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Epoch count override.
    #[arg(long)]
    epochs: Option<usize>,
    /// Strategy override: supervised, mean_teacher, pi_model, pseudo_label,
    /// or temporal_ensemble.
    #[arg(long)]
    strategy: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset directory (default: dataset_dir from the config).
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Checkpoint to evaluate.
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Split to evaluate on: test, validation, or labeled.
    #[arg(long, default_value = "test")]
    split: String,
    /// Output directory (default: <output_dir>/eval).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OverlayArgs {
    /// Dataset directory (default: dataset_dir from the config).
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Checkpoint to visualize.
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Split to draw samples from.
    #[arg(long, default_value = "test")]
    split: String,
    /// Number of samples (from the start of the split) when --id is not
    /// given.
    #[arg(long, default_value_t = 8)]
    count: usize,
    /// Specific sample ids to render (repeatable).
    #[arg(long = "id", value_name = "ID")]
    ids: Vec<String>,
    /// Output directory (default: <output_dir>/overlay).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Base seed for the randomized instances.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Randomized instances per operation.
    #[arg(long, default_value_t = 50)]
    instances: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Maximum acceptable relative error.
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
    /// Optional directory for a JSON copy of the results.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReproduceArgs {
    /// Only the supervised / mean_teacher / mean_teacher_js rows instead of
    /// all strategies.
    #[arg(long)]
    trend_only: bool,
    /// Run seeds (default: the plan's 1,2,3).
    #[arg(long, value_delimiter = ',', value_name = "S1,S2,..")]
    seeds: Option<Vec<u64>>,
    /// Output directory (default: <output_dir>/table).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap exits 2 on usage errors and 0 for --help/--version.
            let _ = e.print();
            return ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(2));
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Some(jobs) = cli.jobs {
        if let Err(e) =
            rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()
        {
            eprintln!("error: cannot configure {jobs} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(args) => gen_data(cli.config.as_deref(), args),
        Command::Pretrain(args) => cmd_pretrain(cli.config.as_deref(), args),
        Command::TrainSsl(args) => cmd_train_ssl(cli.config.as_deref(), args),
        Command::Eval(args) => cmd_eval(cli.config.as_deref(), args),
        Command::Overlay(args) => cmd_overlay(cli.config.as_deref(), args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::ReproduceTable(args) => cmd_reproduce(cli.config.as_deref(), args),
    }
}

/// Split names accepted on the command line.
fn parse_split(name: &str) -> Result<Split> {
    match name {
        "labeled" => Ok(Split::Labeled),
        "unlabeled" => Ok(Split::Unlabeled),
        "validation" => Ok(Split::Validation),
        "test" => Ok(Split::Test),
        other => bail!("unknown split {other:?} (expected labeled, unlabeled, validation, or test)"),
    }
}

fn load_data(dir: &Path) -> Result<Dataset> {
    load_dataset(dir).with_context(|| format!("cannot load dataset from {}", dir.display()))
}

/// Image/annotation pairs of one split, erroring on unannotated samples.
fn annotated_pairs(ds: &Dataset, split: Split) -> Result<Vec<(&graphmark::Tensor, &graphmark::graph::LandmarkSet)>> {
    let samples = ds.split(split);
    if samples.is_empty() {
        bail!("dataset has no {split} samples");
    }
    samples
        .into_iter()
        .map(|s| match &s.landmarks {
            Some(lm) => Ok((&s.image, lm)),
            None => bail!("sample {} in split {split} has no landmark annotations", s.id),
        })
        .collect()
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).context("serialize output")?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

fn summarize_training(tag: &str, out: &TrainOutcome, elapsed: std::time::Duration) {
    match (out.best_epoch, out.best_val_error_px) {
        (Some(e), Some(v)) => println!(
            "{tag}: {} steps in {:.1?}; best epoch {e} with validation error {v:.3} px",
            out.steps, elapsed
        ),
        _ => {
            let last_val = out.history.iter().rev().find_map(|h| h.val_error_px);
            match last_val {
                Some(v) => println!(
                    "{tag}: {} steps in {:.1?}; final validation error {v:.3} px",
                    out.steps, elapsed
                ),
                None => println!("{tag}: {} steps in {:.1?}", out.steps, elapsed),
            }
        }
    }
}

fn gen_data(config: Option<&Path>, args: GenDataArgs) -> Result<()> {
    if args.spec.is_some() && config.is_some() {
        bail!("--spec and --config are aliases; give only one");
    }
    let mut cfg = load_config(args.spec.as_deref().or(config))?;
    if let Some(seed) = args.seed {
        cfg.dataset_seed = seed;
    }
    if let Some(out) = args.out {
        cfg.dataset_dir = out;
    }
    let t = Instant::now();
    let ds = build_split_dataset(
        &cfg.generator,
        cfg.dataset_seed,
        cfg.n_labeled,
        cfg.n_unlabeled,
        cfg.n_validation,
        cfg.n_test,
    )?;
    write_dataset(&cfg.dataset_dir, &ds)
        .with_context(|| format!("cannot write dataset to {}", cfg.dataset_dir.display()))?;
    cfg.write_snapshot(&cfg.dataset_dir)?;
    println!(
        "wrote {} samples ({} labeled / {} unlabeled / {} validation / {} test, \
         {}x{} px, {} landmarks) to {} in {:.1?}",
        ds.samples.len(),
        cfg.n_labeled,
        cfg.n_unlabeled,
        cfg.n_validation,
        cfg.n_test,
        ds.image_w,
        ds.image_h,
        ds.k,
        cfg.dataset_dir.display(),
        t.elapsed()
    );
    Ok(())
}

fn cmd_pretrain(config: Option<&Path>, args: PretrainArgs) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(data) = args.data {
        cfg.dataset_dir = data;
    }
    if let Some(seed) = args.seed {
        cfg.pretrain.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.pretrain.epochs = epochs;
    }
    cfg.pretrain.strategy = Strategy::Supervised;
    cfg.validate()?;
    let out_dir = args.out.unwrap_or_else(|| cfg.output_dir.join("pretrain"));

    let ds = load_data(&cfg.dataset_dir)?;
    let arch = cfg.arch_for_dataset(&ds)?;
    let data = TrainData::from_dataset(&ds)?;
    let init = ModelParams::init(&arch, cfg.model_seed)?;

    let t = Instant::now();
    let out = pretrain(init, &data, &cfg.pretrain)?;
    summarize_training("pretrain", &out, t.elapsed());

    let ckpt = Checkpoint {
        t: out.steps,
        student: out.params.clone(),
        teacher: None,
        optimizer: None,
        mean_shape: data.mean_shape.clone(),
        topology: data.topology.clone(),
    };
    cfg.arch = Some(arch);
    cfg.write_snapshot(&out_dir)?;
    let ckpt_path = out_dir.join("checkpoint.bin");
    save_checkpoint(&ckpt_path, &ckpt)?;
    write_json(&out_dir, "history.json", &out.history)?;
    println!("checkpoint: {}", ckpt_path.display());
    Ok(())
}

fn cmd_train_ssl(config: Option<&Path>, args: TrainSslArgs) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(data) = args.data {
        cfg.dataset_dir = data;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.train.epochs = epochs;
    }
    if let Some(name) = &args.strategy {
        cfg.train.strategy = name.parse()?;
    }
    cfg.validate()?;
    let out_dir =
        args.out.unwrap_or_else(|| cfg.output_dir.join(cfg.train.strategy.name()));

    let ds = load_data(&cfg.dataset_dir)?;
    let data = TrainData::from_dataset(&ds)?;
    let (initial, arch) = match &args.init {
        Some(path) => {
            let ckpt = load_checkpoint(path)
                .with_context(|| format!("cannot load checkpoint {}", path.display()))?;
            let arch = ckpt.student.desc.clone();
            if arch.k != ds.k || arch.image_h != ds.image_h || arch.image_w != ds.image_w {
                bail!(
                    "checkpoint {} was trained for {}x{} px with {} landmarks, dataset has {}x{} px with {} landmarks",
                    path.display(), arch.image_w, arch.image_h, arch.k,
                    ds.image_w, ds.image_h, ds.k
                );
            }
            (ckpt.student, arch)
        }
        None => {
            let arch = cfg.arch_for_dataset(&ds)?;
            (ModelParams::init(&arch, cfg.model_seed)?, arch)
        }
    };

    let t = Instant::now();
    let out = train_ssl(initial, &data, &cfg.train)?;
    summarize_training(cfg.train.strategy.name(), &out, t.elapsed());

    let ckpt = Checkpoint {
        t: out.steps,
        student: out.params.clone(),
        teacher: out.teacher.clone(),
        optimizer: None,
        mean_shape: data.mean_shape.clone(),
        topology: data.topology.clone(),
    };
    cfg.arch = Some(arch);
    cfg.write_snapshot(&out_dir)?;
    let ckpt_path = out_dir.join("checkpoint.bin");
    save_checkpoint(&ckpt_path, &ckpt)?;
    write_json(&out_dir, "history.json", &out.history)?;
    println!("checkpoint: {}", ckpt_path.display());
    Ok(())
}

fn cmd_eval(config: Option<&Path>, args: EvalArgs) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(data) = args.data {
        cfg.dataset_dir = data;
    }
    let split = parse_split(&args.split)?;
    let out_dir = args.out.unwrap_or_else(|| cfg.output_dir.join("eval"));

    let ds = load_data(&cfg.dataset_dir)?;
    let ckpt = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", args.checkpoint.display()))?;
    let pairs = annotated_pairs(&ds, split)?;
    let report = evaluate(
        &ckpt.student,
        &pairs,
        &ckpt.mean_shape,
        &ckpt.topology,
        cfg.failure_fraction,
    )?;

    cfg.arch = Some(ckpt.student.desc.clone());
    cfg.write_snapshot(&out_dir)?;
    let path = write_json(&out_dir, "report.json", &report)?;
    println!(
        "{split}: mean error {:.3} px ({:.1}% of width, std {:.3}), \
         failure rate {:.3} at {:.1} px, {} images",
        report.mean_error_px,
        100.0 * report.mean_error_frac,
        report.std_error_px,
        report.failure_rate,
        report.threshold_px,
        report.n_images
    );
    println!("report: {}", path.display());
    Ok(())
}

fn cmd_overlay(config: Option<&Path>, args: OverlayArgs) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(data) = args.data {
        cfg.dataset_dir = data;
    }
    let split = parse_split(&args.split)?;
    let out_dir = args.out.unwrap_or_else(|| cfg.output_dir.join("overlay"));

    let ds = load_data(&cfg.dataset_dir)?;
    let ckpt = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", args.checkpoint.display()))?;

    let chosen: Vec<&Sample> = if args.ids.is_empty() {
        let samples = ds.split(split);
        if samples.is_empty() {
            bail!("dataset has no {split} samples");
        }
        samples.into_iter().take(args.count.max(1)).collect()
    } else {
        args.ids
            .iter()
            .map(|id| {
                ds.samples
                    .iter()
                    .find(|s| &s.id == id)
                    .ok_or_else(|| anyhow::anyhow!("no sample with id {id:?}"))
            })
            .collect::<Result<_>>()?
    };

    cfg.arch = Some(ckpt.student.desc.clone());
    cfg.write_snapshot(&out_dir)?;
    for sample in &chosen {
        // Ids name output files; keep them from escaping the output
        // directory even if the manifest was edited by hand.
        if sample.id.contains(['/', '\\']) || sample.id.contains("..") {
            bail!("sample id {:?} is not a safe file name", sample.id);
        }
        let pred = graphmark::model::predict(
            &ckpt.student,
            &sample.image,
            &ckpt.mean_shape,
            &ckpt.topology,
        )?;
        let path = out_dir.join(format!("{}.svg", sample.id));
        write_overlay(
            &path,
            &sample.image,
            pred.v_local(),
            sample.landmarks.as_ref(),
            &ckpt.topology,
            cfg.overlay_scale,
        )?;
    }
    println!("wrote {} overlays to {}", chosen.len(), out_dir.display());
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    if args.instances == 0 {
        bail!("gradcheck needs at least one instance per operation");
    }
    let t = Instant::now();
    let suite = run_gradcheck_suite(args.seed, args.instances, args.eps)?;
    println!("{:<28} {:>8} {:>8} {:>12}", "operation", "checked", "skipped", "max rel err");
    for entry in &suite.entries {
        println!(
            "{:<28} {:>8} {:>8} {:>12.3e}",
            entry.name, entry.checked, entry.skipped, entry.max_rel_err
        );
    }
    println!(
        "{} operations, {} coordinates checked ({} kink-adjacent skipped) in {:.1?}",
        suite.entries.len(),
        suite.total_checked(),
        suite.total_skipped(),
        t.elapsed()
    );
    if let Some(dir) = &args.out {
        let path = write_json(dir, "gradcheck.json", &suite)?;
        println!("report: {}", path.display());
    }
    if suite.passes(args.tolerance) {
        println!("PASS: all gradients within {:.1e} of finite differences", args.tolerance);
        Ok(())
    } else {
        bail!(
            "gradient check failed: max relative error {:.3e} exceeds {:.1e}",
            suite.max_rel_err(),
            args.tolerance
        );
    }
}

fn cmd_reproduce(config: Option<&Path>, args: ReproduceArgs) -> Result<()> {
    let cfg = load_config(config)?;
    let out_dir = args.out.unwrap_or_else(|| cfg.output_dir.join("table"));
    let mut plan =
        if args.trend_only { ExperimentPlan::trend() } else { ExperimentPlan::full_table() };
    if let Some(seeds) = args.seeds {
        plan.run_seeds = seeds;
    }
    plan.validate()?;

    log::info!(
        "reproducing the results table: {} strategies x {} seeds (this trains {} models)",
        plan.strategies.len(),
        plan.run_seeds.len(),
        plan.run_seeds.len() * (plan.strategies.len() + 1)
    );
    let t = Instant::now();
    let ds = build_standard_dataset(&plan)?;
    let report = run_experiment(&plan, &ds)?;

    write_json(&out_dir, "plan.json", &plan)?;
    write_json(&out_dir, "report.json", &report)?;
    let table = report.text_table();
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    let table_path = out_dir.join("table.txt");
    fs::write(&table_path, &table)
        .with_context(|| format!("cannot write {}", table_path.display()))?;

    print!("{table}");
    println!("finished in {:.1?}; report in {}", t.elapsed(), out_dir.display());
    Ok(())
}
