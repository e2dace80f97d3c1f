use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dpsqlp::accountant::SplitRatios;
use dpsqlp::baselines::{baseline_incremental, baseline_repeated};
use dpsqlp::bench::experiment::baseline_config;
use dpsqlp::bench::ingest::write_records;
use dpsqlp::bench::{
    evaluate_final, generate_synthetic, ingest, sweep_contribution_bound, ColumnMapping, EngineKind, ErrorPolicy, Format,
    SynthParams, ZipfParams,
};
use dpsqlp::bounding::Record;
use dpsqlp::engine::{Engine, JsonLinesSink, MemorySink, PipelineConfig, StateStore, WindowSpec};
use dpsqlp::perturb::Release;
use dpsqlp::{Error, Result};

#[derive(Parser)]
#[command(name = "dpsqlp", version, about = "Differentially private streaming GROUP-BY aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Process a record file and write released histograms as JSON lines.
    Run(RunArgs),
    /// Write a synthetic Zipf-Mandelbrot record stream.
    Generate(GenerateArgs),
    /// Score released histograms against the exact totals of a record file.
    Evaluate(EvaluateArgs),
    /// Measure utility across contribution bounds.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct InputArgs {
    /// Input format; guessed from the extension when omitted.
    #[arg(long)]
    format: Option<Format>,
    #[arg(long, default_value = "key")]
    key_field: String,
    /// Field holding the value; `none` counts every record as 1.
    #[arg(long, default_value = "value")]
    value_field: String,
    #[arg(long, default_value = "timestamp")]
    timestamp_field: String,
    #[arg(long, default_value = "user_id")]
    user_field: String,
    /// Skip malformed rows instead of aborting.
    #[arg(long)]
    skip_bad_rows: bool,
}

impl InputArgs {
    fn load(&self, path: &Path) -> Result<Vec<Record>> {
        let mapping = ColumnMapping {
            key: self.key_field.clone(),
            value: (self.value_field != "none").then(|| self.value_field.clone()),
            timestamp: self.timestamp_field.clone(),
            user_id: self.user_field.clone(),
        };
        let policy = if self.skip_bad_rows { ErrorPolicy::Skip } else { ErrorPolicy::Abort };
        let format = self.format.unwrap_or_else(|| Format::from_path(path));
        let out = ingest(path, format, &mapping, policy)?;
        for (line, msg) in &out.skipped {
            eprintln!("skipped line {line}: {msg}");
        }
        Ok(out.records)
    }
}

#[derive(Args, Clone)]
struct PipelineArgs {
    #[arg(long, default_value_t = 6.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-9)]
    delta: f64,
    /// Per-key selection failure probability; derived from delta if omitted.
    #[arg(long)]
    beta: Option<f64>,
    /// Share of epsilon spent on key selection.
    #[arg(long, default_value_t = 0.5)]
    key_selection_fraction: f64,
    /// Share of delta spent on key selection.
    #[arg(long, default_value_t = 2.0 / 3.0)]
    key_selection_delta_fraction: f64,
    /// Maximum records per user per window.
    #[arg(long, default_value_t = 32)]
    c: u32,
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    /// Per-record value clamp.
    #[arg(long, default_value_t = 1.0)]
    clamp: f64,
    #[arg(long, default_value_t = 100)]
    triggers: u64,
    #[arg(long, default_value_t = 1)]
    window_days: u32,
    /// Seconds a window stays open after its end.
    #[arg(long, default_value_t = 0)]
    allowed_lateness: i64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = EngineKind::DpSqlp, value_parser = parse_engine)]
    engine: EngineKind,
    /// Scan every tracked key at each trigger instead of using predictions.
    #[arg(long)]
    no_prediction: bool,
}

fn parse_engine(s: &str) -> std::result::Result<EngineKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl PipelineArgs {
    fn config(&self) -> PipelineConfig {
        PipelineConfig {
            epsilon: self.epsilon,
            delta: self.delta,
            beta: self.beta,
            c: self.c,
            mu: self.mu,
            l_m: self.clamp,
            triggers: self.triggers,
            window: WindowSpec { allowed_lateness: self.allowed_lateness, ..WindowSpec::days(self.window_days) },
            seed: self.seed,
            split: SplitRatios {
                key_selection_epsilon: self.key_selection_fraction,
                key_selection_delta: self.key_selection_delta_fraction,
            },
            prediction: !self.no_prediction,
            ..PipelineConfig::default()
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    input: PathBuf,
    /// State directory; enables crash recovery for the streaming engine.
    #[arg(long)]
    state: Option<PathBuf>,
    /// Release file (JSON lines); stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Run report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    input_args: InputArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 10_000)]
    users: u64,
    #[arg(long, default_value_t = 1_000)]
    key_space: u64,
    #[arg(long, default_value_t = 26.0)]
    record_q: f64,
    #[arg(long, default_value_t = 6.738)]
    record_s: f64,
    #[arg(long, default_value_t = 100_000)]
    record_max: u64,
    #[arg(long, default_value_t = 1.0)]
    key_q: f64,
    #[arg(long, default_value_t = 1.4)]
    key_s: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Epoch second of the first day.
    #[arg(long, default_value_t = 0)]
    start: i64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    format: Option<Format>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Released histograms (JSON lines).
    #[arg(long)]
    dp: PathBuf,
    /// The record file the releases were computed from.
    #[arg(long)]
    truth: PathBuf,
    /// Report (JSON); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    triggers: u64,
    #[arg(long, default_value_t = 1)]
    window_days: u32,
    #[arg(long, default_value = "value")]
    column: String,
    #[command(flatten)]
    input_args: InputArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// Record file; a desk-scale synthetic stream when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,17,25,32,50")]
    c_values: Vec<u32>,
    #[arg(long, default_value_t = 1)]
    repetitions: u32,
    /// Report (JSON); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a CSV table of the mean metrics.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    input_args: InputArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

fn writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut w = writer(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_releases(path: Option<&Path>, releases: &[Release]) -> Result<()> {
    let mut w = writer(path)?;
    for r in releases {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let records = args.input_args.load(&args.input)?;
    let cfg = args.pipeline.config();
    match args.pipeline.engine {
        EngineKind::DpSqlp => {
            let store = match &args.state {
                Some(dir) => StateStore::open(dir)?,
                None => StateStore::in_memory(),
            };
            let report = match &args.output {
                Some(out) => {
                    let mut engine = Engine::new(cfg, store, JsonLinesSink::open(out)?)?;
                    let report = engine.run(&records)?;
                    engine.into_parts().0.close()?;
                    report
                }
                None if args.state.is_some() => {
                    return Err(Error::invalid("--state needs --output so releases survive a restart"));
                }
                None => {
                    let mut engine = Engine::new(cfg, store, MemorySink::new())?;
                    let report = engine.run(&records)?;
                    write_releases(None, &engine.into_parts().1.into_releases())?;
                    report
                }
            };
            match &args.report {
                Some(p) => write_json(Some(p), &report)?,
                None => eprintln!("{}", serde_json::to_string(&report)?),
            }
        }
        kind => {
            let bcfg = baseline_config(&cfg);
            let releases = match kind {
                EngineKind::Baseline1 => baseline_repeated(&records, &bcfg)?,
                _ => baseline_incremental(&records, &bcfg)?,
            };
            write_releases(args.output.as_deref(), &releases)?;
            if let Some(p) = &args.report {
                write_json(Some(p), &serde_json::json!({ "engine": kind, "records_in": records.len(), "releases": releases.len() }))?;
            }
        }
    }
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let params = SynthParams {
        users: args.users,
        records: ZipfParams { q: args.record_q, s: args.record_s },
        record_max: args.record_max,
        keys: ZipfParams { q: args.key_q, s: args.key_s },
        key_space: args.key_space,
        seed: args.seed,
        start: args.start,
        ..SynthParams::desk_scale(args.seed)
    };
    let records = generate_synthetic(&params)?;
    let format = args.format.unwrap_or_else(|| Format::from_path(&args.out));
    write_records(&args.out, format, &records)?;
    eprintln!("wrote {} records to {}", records.len(), args.out.display());
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let releases = JsonLinesSink::read_all(&args.dp)?;
    let records = args.input_args.load(&args.truth)?;
    let cfg = PipelineConfig {
        triggers: args.triggers,
        window: WindowSpec::days(args.window_days),
        columns: vec![dpsqlp::perturb::Column::Sum(args.column.clone())],
        ..PipelineConfig::default()
    };
    write_json(args.out.as_deref(), &evaluate_final(&releases, &records, &cfg))
}

fn sweep(args: SweepArgs) -> Result<()> {
    let records = match &args.input {
        Some(p) => args.input_args.load(p)?,
        None => generate_synthetic(&SynthParams::desk_scale(args.pipeline.seed))?,
    };
    let cfg = args.pipeline.config();
    let rows = sweep_contribution_bound(&records, &cfg, args.pipeline.engine, &args.c_values, args.repetitions)?;
    if let Some(p) = &args.csv {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["c", "retained_keys", "l_inf", "l1", "l2"])?;
        for r in &rows {
            let m = r.mean;
            w.write_record([r.c.to_string(), m.retained_keys.to_string(), m.l_inf.to_string(), m.l1.to_string(), m.l2.to_string()])?;
        }
        w.flush()?;
    }
    write_json(args.out.as_deref(), &rows)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Generate(a) => generate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
