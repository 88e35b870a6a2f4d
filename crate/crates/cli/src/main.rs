use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use uavad::config::PipelineConfig;
use uavad::evaluation::Variant;
use uavad::ingest::{FlightRole, FrameSeries};
use uavad::pipeline::{self, EvalModels, TrainedModel};
use uavad::synth::{self, CorpusSpec, SyntheticFlightSpec};
use uavad::thresholding::ThresholdMode;
use uavad::Error;

/// Stacked LSTM autoencoder anomaly detection for UAV sensor logs.
#[derive(Parser, Debug)]
#[command(name = "uavad", version)]
struct Cli {
    /// TOML pipeline configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for generation, training and sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. Computation is currently sequential, so only 1 changes nothing.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus with a manifest.
    Synth(SynthArgs),
    /// Select, pool, normalize and project the flights of a manifest.
    Preprocess(PreprocessArgs),
    /// Train a stacked autoencoder on preprocessed training flights.
    Train(TrainArgs),
    /// Classify flights and write loss/threshold traces and plots.
    Detect(DetectArgs),
    /// Score ST, DT and DT+DW on the test flights.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    flights_clean: usize,
    #[arg(long, default_value_t = 5)]
    flights_faulty: usize,
    /// TOML flight spec used as the base for every flight.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Override the base flight duration in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Override the base fault onset in seconds (validated against the duration).
    #[arg(long)]
    onset: Option<f64>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Preprocess output directory.
    #[arg(long)]
    frames: PathBuf,
    #[arg(long, value_enum)]
    weighted_loss: Option<Switch>,
    /// Epochs per phase, comma separated.
    #[arg(long, value_delimiter = ',')]
    epochs: Option<Vec<usize>>,
    /// Learning rate per phase, comma separated.
    #[arg(long, value_delimiter = ',')]
    learning_rates: Option<Vec<f64>>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Static,
    Dynamic,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    /// Preprocess output directory.
    #[arg(long)]
    frames: PathBuf,
    /// Flight ids to classify; defaults to every test flight.
    #[arg(long)]
    flight: Vec<String>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Model trained with plain MSE (ST and DT).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Model trained with the weighted loss (DT+DW).
    #[arg(long)]
    weighted_model: Option<PathBuf>,
    /// Preprocess output directory.
    #[arg(long)]
    frames: PathBuf,
    /// `all` or a comma separated subset of st, dt, dt+dw.
    #[arg(long)]
    variants: Option<String>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(short, long)]
    output: PathBuf,
}

enum Failure {
    Usage(String),
    Uavad(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Uavad(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    Ok(match cli.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    })
}

fn parse_variants(s: &str) -> Result<Vec<Variant>, Failure> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(Variant::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in s.split(',') {
        let v: Variant = part.trim().parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    Ok(out)
}

fn run_synth(cli: &Cli, args: &SynthArgs) -> Result<(), Failure> {
    let mut base = match &args.spec {
        Some(path) => SyntheticFlightSpec::load(path)?,
        None => SyntheticFlightSpec::default(),
    };
    if let Some(d) = args.duration {
        base.duration_s = d;
    }
    if let Some(o) = args.onset {
        base.fault.onset_s = o;
    }
    base.validate()?;
    let corpus = CorpusSpec::new(args.flights_clean, args.flights_faulty, base, cli.seed.unwrap_or(0));
    let manifest = synth::generate_corpus(&corpus, &args.output)?;
    println!(
        "wrote {} flights and {}",
        manifest.flights.len(),
        args.output.join(uavad::ingest::MANIFEST_FILE).display()
    );
    Ok(())
}

fn run_preprocess(cfg: &PipelineConfig, args: &PreprocessArgs) -> Result<(), Failure> {
    let meta = pipeline::preprocess(&args.manifest, cfg, &args.output)?;
    println!(
        "{} features kept, {} rejected, {} components, {} flights written",
        meta.features.len(),
        meta.rejections.len(),
        meta.components,
        meta.flights.len()
    );
    Ok(())
}

fn run_train(mut cfg: PipelineConfig, args: &TrainArgs) -> Result<(), Failure> {
    if let Some(w) = args.weighted_loss {
        cfg.weighted_loss.enabled = matches!(w, Switch::On);
    }
    if let Some(e) = &args.epochs {
        cfg.training.stage_epochs = e.clone();
    }
    if let Some(lr) = &args.learning_rates {
        cfg.training.stage_learning_rates = lr.clone();
    }
    cfg.validate()?;
    let meta = pipeline::train(&args.frames, &cfg, &args.output)?;
    println!(
        "model {} (dims {:?}, weighted loss {}), training loss {:.6} ± {:.6}",
        &meta.model_hash[..12],
        meta.dims,
        if meta.weighted_loss { "on" } else { "off" },
        meta.train_loss_mean,
        meta.train_loss_std
    );
    Ok(())
}

fn read_flights(frames_dir: &Path, ids: &[String]) -> Result<Vec<FrameSeries>, Failure> {
    let meta = pipeline::PreprocessMeta::load(frames_dir)?;
    let records: Vec<_> = if ids.is_empty() {
        meta.flights_with_role(FlightRole::Test).cloned().collect()
    } else {
        ids.iter()
            .map(|id| {
                meta.flights
                    .iter()
                    .find(|f| &f.id == id)
                    .cloned()
                    .ok_or_else(|| Failure::Usage(format!("unknown flight `{id}`")))
            })
            .collect::<Result<_, _>>()?
    };
    Ok(records
        .iter()
        .map(|r| FrameSeries::read_csv(&frames_dir.join(&r.file)))
        .collect::<Result<_, _>>()?)
}

fn run_detect(mut cfg: PipelineConfig, args: &DetectArgs) -> Result<(), Failure> {
    if let Some(m) = args.mode {
        cfg.threshold.mode = match m {
            Mode::Static => ThresholdMode::Static,
            Mode::Dynamic => ThresholdMode::Dynamic,
        };
    }
    let model = TrainedModel::load(&args.model)?;
    for series in read_flights(&args.frames, &args.flight)? {
        let trace = pipeline::detect(&model, &series, &cfg.threshold, &args.output)?;
        let flagged = trace.verdicts.iter().filter(|&&v| v).count();
        println!("{}: {} frames, {} flagged", series.flight_id, trace.len(), flagged);
    }
    Ok(())
}

fn run_evaluate(mut cfg: PipelineConfig, args: &EvaluateArgs) -> Result<(), Failure> {
    if let Some(v) = &args.variants {
        cfg.evaluation.variants = parse_variants(v)?;
    }
    if let Some(r) = args.runs {
        cfg.evaluation.runs = r;
    }
    cfg.validate()?;
    let plain = args.model.as_deref().map(TrainedModel::load).transpose()?;
    let weighted = args.weighted_model.as_deref().map(TrainedModel::load).transpose()?;
    let models = EvalModels {
        plain: plain.as_ref(),
        weighted: weighted.as_ref(),
    };
    let outcome = pipeline::evaluate(&args.frames, &models, &cfg, &args.output)?;
    print!("{}", outcome.aggregate.to_table());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if cli.threads == 0 {
        return Err(Failure::Usage("--threads must be at least 1".into()));
    }
    if let Command::Synth(args) = &cli.command {
        return run_synth(cli, args);
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Synth(_) => unreachable!(),
        Command::Preprocess(args) => run_preprocess(&cfg, args),
        Command::Train(args) => run_train(cfg, args),
        Command::Detect(args) => run_detect(cfg, args),
        Command::Evaluate(args) => run_evaluate(cfg, args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Uavad(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
