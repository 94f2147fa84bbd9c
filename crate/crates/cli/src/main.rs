use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stscl_core::corpus::synthetic::{generate, SyntheticConfig};
use stscl_core::corpus::{load_jsonl, save_jsonl};
use stscl_core::objectives::ViewMode;
use stscl_core::train::{
    annotation_from_document, export_embeddings, gradcheck, probe, run_pretrain, score_trees, GradCheckSetup, Model,
    ProbeConfig, RunConfig, GRADCHECK_TOLERANCE,
};
use stscl_core::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// Tree-structured semi-supervised contrastive pre-training for dialog encoders.
///
/// Every global flag can also be set through an environment variable with
/// the STSCL_ prefix, e.g. STSCL_SEED=3. Precedence: command-line flag,
/// then environment, then --config file, then built-in defaults.
#[derive(Debug, Parser)]
#[command(name = "stscl", version)]
struct Cli {
    /// Seed for initialization, batching, masking and dropout.
    #[arg(long, global = true, env = "STSCL_SEED")]
    seed: Option<u64>,

    /// Run configuration: JSON, or `key = value` lines with dotted keys.
    #[arg(long, global = true, env = "STSCL_CONFIG")]
    config: Option<PathBuf>,

    /// Supervised target form: one averaged score (single) or one head per view (multi).
    #[arg(long, global = true, env = "STSCL_VIEW_MODE")]
    view_mode: Option<ViewMode>,

    /// Report raw loss sums instead of per-term means.
    #[arg(long, global = true, env = "STSCL_PAPER_LITERAL")]
    paper_literal: bool,

    /// Contrastive temperature.
    #[arg(long, global = true, env = "STSCL_TEMPERATURE")]
    temperature: Option<f64>,

    /// Extra configuration override, repeatable: --set encoder.hidden=32.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", env = "STSCL_SET", value_delimiter = ';')]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pre-train an encoder; writes a checkpoint directory and a JSON-lines metrics log.
    Pretrain(PretrainArgs),
    /// Per-view similarity of two annotation documents.
    Score {
        file_a: PathBuf,
        file_b: PathBuf,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Linear intent probe on frozen pooled embeddings.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Labeled JSONL; every sample needs exactly one intent.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = ProbeConfig::default().epochs)]
        epochs: usize,
        /// Also probe a freshly initialized encoder with the same vocabulary.
        #[arg(long)]
        baseline: bool,
    },
    /// Write one TSV row per sample and view: dialog id, view, unit vector.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients of the total loss with central differences.
    Gradcheck {
        /// Modes to check; both by default.
        #[arg(long, value_delimiter = ',', default_value = "multi,single")]
        modes: Vec<ViewMode>,
        /// Coordinates sampled per mode.
        #[arg(long, default_value_t = 256)]
        coords: usize,
    },
    /// Write a synthetic labeled/unlabeled corpus pair.
    GenSynthetic {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 200)]
        labeled: usize,
        #[arg(long, default_value_t = 200)]
        unlabeled: usize,
        #[arg(long, default_value_t = 5)]
        domains: usize,
        #[arg(long, default_value_t = 4)]
        intents_per_domain: usize,
        #[arg(long, default_value_t = 4)]
        slots_per_domain: usize,
    },
}

#[derive(Debug, Args)]
struct PretrainArgs {
    #[arg(long)]
    labeled: Option<PathBuf>,
    #[arg(long)]
    unlabeled: Option<PathBuf>,
    /// Distinct samples per batch, each encoded twice. Default 16.
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// Initial learning rate, decayed linearly over the run. Default 1e-4.
    #[arg(long)]
    lr: Option<f64>,
    /// Checkpoint directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metrics log, one JSON object per step.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Also checkpoint every this many steps.
    #[arg(long)]
    checkpoint_interval: Option<usize>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => EXIT_USAGE,
            Error::Numerical(_) | Error::Tensor(_) => EXIT_NUMERICAL,
            Error::Schema { .. }
            | Error::Batch(_)
            | Error::Encoding(_)
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::Checkpoint(_) => EXIT_DATA,
        };
        Failure { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: message.into() }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Error::io(path, e).into()
}

impl Cli {
    fn run_config(&self) -> Result<RunConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let pairs = self
            .overrides
            .iter()
            .map(|kv| {
                kv.split_once('=')
                    .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                    .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        cfg = cfg.with_overrides(&pairs)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(mode) = self.view_mode {
            cfg.view_mode = mode;
        }
        if self.paper_literal {
            cfg.loss.paper_literal = true;
        }
        if let Some(t) = self.temperature {
            cfg.loss.temperature = t;
        }
        Ok(cfg)
    }
}

fn pretrain_cmd(cli: &Cli, args: &PretrainArgs) -> Result<(), Failure> {
    let mut cfg = cli.run_config()?;
    if let Some(p) = &args.labeled {
        cfg.labeled = Some(p.clone());
    }
    if let Some(p) = &args.unlabeled {
        cfg.unlabeled = Some(p.clone());
    }
    if let Some(n) = args.batch_size {
        cfg.batch_size = n;
    }
    if let Some(n) = args.steps {
        cfg.steps = n;
    }
    if let Some(lr) = args.lr {
        cfg.optimizer.lr = lr;
    }
    if let Some(p) = &args.out {
        cfg.checkpoint_dir = Some(p.clone());
    }
    if let Some(p) = &args.metrics {
        cfg.metrics_path = Some(p.clone());
    }
    if let Some(n) = args.checkpoint_interval {
        cfg.checkpoint_interval = n;
    }
    if cfg.labeled.is_none() || cfg.unlabeled.is_none() {
        return Err(usage("pretrain needs --labeled and --unlabeled (or both paths in --config)"));
    }
    let (_, metrics) = run_pretrain(&cfg)?;
    if let (Some(first), Some(last)) = (metrics.first(), metrics.last()) {
        println!(
            "{} steps: l_total {:.4} -> {:.4}, align_cos {:.4} -> {:.4}",
            metrics.len(),
            first.l_total,
            last.l_total,
            first.align_cos,
            last.align_cos
        );
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        println!("checkpoint: {}", dir.display());
    }
    Ok(())
}

fn read_document(path: &Path) -> Result<serde_json::Value, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    // A whole JSON document, or the first line of a JSONL corpus.
    serde_json::from_str(&text).or_else(|_| serde_json::from_str(first)).map_err(|e| {
        Failure::from(Error::Parse { path: path.to_path_buf(), line: 1, reason: e.to_string() })
    })
}

fn score_cmd(a: &Path, b: &Path, json: bool) -> Result<(), Failure> {
    let ta = annotation_from_document(&read_document(a)?)?;
    let tb = annotation_from_document(&read_document(b)?)?;
    let report = score_trees(&ta, &tb);
    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        return Ok(());
    }
    println!("view\tscore\tdefined");
    for row in &report.views {
        println!("{}\t{:.6}\t{}", row.view, row.score, row.defined);
    }
    match report.mean {
        Some(m) => println!("mean\t{m:.6}\t{} defined views", report.views.iter().filter(|r| r.defined).count()),
        None => println!("mean\t-\tno defined views"),
    }
    Ok(())
}

fn probe_cmd(cli: &Cli, checkpoint: &Path, data: &Path, epochs: usize, baseline: bool) -> Result<(), Failure> {
    let model = Model::load(checkpoint)?;
    let samples = load_jsonl(data)?;
    let cfg = ProbeConfig { epochs, seed: cli.seed.unwrap_or(0), ..Default::default() };
    let report = probe(&model, &samples, &cfg)?;
    println!(
        "accuracy {:.4} ({}/{} held out, {} train, {} classes)",
        report.accuracy,
        report.correct,
        report.test_size,
        report.train_size,
        report.classes.len()
    );
    if baseline {
        let fresh = Model::init(model.config().clone(), model.vocab.clone(), cfg.seed, Default::default())?;
        let base = probe(&fresh, &samples, &cfg)?;
        println!("untrained accuracy {:.4}; gain {:+.4}", base.accuracy, report.accuracy - base.accuracy);
    }
    Ok(())
}

fn export_cmd(checkpoint: &Path, data: &Path, out: &Path) -> Result<(), Failure> {
    let model = Model::load(checkpoint)?;
    let samples = load_jsonl(data)?;
    let file = File::create(out).map_err(|e| io_failure(out, e))?;
    let rows = export_embeddings(&model, &samples, BufWriter::new(file))?;
    println!("{rows} rows -> {}", out.display());
    Ok(())
}

fn gradcheck_cmd(cli: &Cli, modes: &[ViewMode], coords: usize) -> Result<(), Failure> {
    let cfg = cli.run_config()?;
    let mut setup = GradCheckSetup { loss: cfg.loss.clone(), seed: cfg.seed, ..Default::default() };
    setup.check.coords = coords;
    setup.check.seed = cfg.seed;
    let checks = gradcheck(&setup, modes)?;
    let mut worst: f64 = 0.0;
    for c in &checks {
        println!("mode {}: loss {:.6}, {} coordinates", c.mode.as_str(), c.loss, c.report.checked);
        for p in &c.report.params {
            println!("  {:<28} {:>5}  {:.3e}", p.name, p.checked, p.max_rel_error);
        }
        println!("  max relative error {:.3e}", c.report.max_rel_error);
        worst = worst.max(c.report.max_rel_error);
    }
    if worst >= GRADCHECK_TOLERANCE {
        return Err(Failure {
            code: EXIT_NUMERICAL,
            message: format!("max relative error {worst:.3e} exceeds {GRADCHECK_TOLERANCE:e}"),
        });
    }
    println!("ok: below {GRADCHECK_TOLERANCE:e}");
    Ok(())
}

fn gen_cmd(cli: &Cli, out_dir: &Path, cfg: SyntheticConfig) -> Result<(), Failure> {
    let corpus = generate(&SyntheticConfig { seed: cli.seed.unwrap_or(0), ..cfg })?;
    std::fs::create_dir_all(out_dir).map_err(|e| io_failure(out_dir, e))?;
    let (lab, unl) = (out_dir.join("labeled.jsonl"), out_dir.join("unlabeled.jsonl"));
    save_jsonl(&lab, &corpus.labeled)?;
    save_jsonl(&unl, &corpus.unlabeled)?;
    println!("{} labeled -> {}", corpus.labeled.len(), lab.display());
    println!("{} unlabeled -> {}", corpus.unlabeled.len(), unl.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Pretrain(args) => pretrain_cmd(cli, args),
        Command::Score { file_a, file_b, json } => score_cmd(file_a, file_b, *json),
        Command::Probe { checkpoint, data, epochs, baseline } => probe_cmd(cli, checkpoint, data, *epochs, *baseline),
        Command::ExportEmbeddings { checkpoint, data, out } => export_cmd(checkpoint, data, out),
        Command::Gradcheck { modes, coords } => gradcheck_cmd(cli, modes, *coords),
        Command::GenSynthetic { out_dir, labeled, unlabeled, domains, intents_per_domain, slots_per_domain } => gen_cmd(
            cli,
            out_dir,
            SyntheticConfig {
                labeled: *labeled,
                unlabeled: *unlabeled,
                domains: *domains,
                intents_per_domain: *intents_per_domain,
                slots_per_domain: *slots_per_domain,
                ..Default::default()
            },
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
