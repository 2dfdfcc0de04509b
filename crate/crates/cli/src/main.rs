use clap::{Args, Parser, Subcommand};
use lxspline::error::{Error, Result};
use lxspline::model::{curve_eval, Dataset, Hyperparameters};
use lxspline::sampler::{run_tempered, write_diagnostics, write_draws, ChainConfig, Draw};
use lxspline::shape::{parse_pair, shape_report};
use lxspline::sim::{run_replicates, summarize, Scenario};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Bayesian local extrema splines: shape-constrained curve fitting and
/// shape tests.
#[derive(Parser)]
#[command(name = "lxspline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a curve and write draws, diagnostics and a pointwise summary.
    Fit(FitArgs),
    /// Fit, then compare two shape hypotheses by Bayes factor.
    Test {
        #[command(flatten)]
        fit: FitArgs,
        /// First hypothesis, e.g. monotone, has-extrema(1), exactly(2),
        /// pattern(max,min) or signatures like 0,2,0;1,1,0.
        #[arg(long)]
        hyp1: String,
        /// Second hypothesis; `complement` means every other signature.
        #[arg(long)]
        hyp2: String,
    },
    /// Run the replicates of a simulation scenario.
    Simulate {
        /// Scenario id such as f4-lownoise or g7-n300.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct FitArgs {
    /// CSV file with header `x,y`.
    #[arg(long)]
    data: PathBuf,
    /// JSON with optional "model", "chain" and "interval" entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    model: Option<Hyperparameters>,
    chain: Option<ChainConfig>,
    /// Predictor interval; defaults to the range of the data.
    interval: Option<[f64; 2]>,
    /// Replicate count for `simulate`.
    replicates: Option<usize>,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

/// Reads `x,y` rows. Line numbers in errors count the header as line 1.
fn read_csv(path: &Path, interval: Option<[f64; 2]>, needed: usize) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_error)?;
    let headers = reader.headers().map_err(csv_error)?.clone();
    if !headers.is_empty() && (headers.len() != 2 || &headers[0] != "x" || &headers[1] != "y") {
        return Err(Error::Parse { line: 1, message: format!("expected header \"x,y\", found {:?}", headers.as_slice()) });
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for rec in reader.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 2 {
            return Err(Error::Parse { line, message: format!("expected 2 fields, found {}", rec.len()) });
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse { line, message: format!("not a finite number: {s:?}") })
        };
        xs.push(num(&rec[0])?);
        ys.push(num(&rec[1])?);
    }
    match interval {
        Some([lo, hi]) => Dataset::with_interval(xs, ys, lo, hi),
        None if xs.is_empty() => Err(Error::InsufficientData { n: 0, needed }),
        None => Dataset::new(xs, ys),
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { line, message: format!("{other:?}") },
    }
}

/// Type-7 sample quantile of sorted values.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

const GRID_POINTS: usize = 200;

fn write_summary(path: &Path, draws: &[Draw], hp: &Hyperparameters, data: &Dataset) -> Result<()> {
    let (lo, hi) = data.interval();
    let grid: Vec<f64> = (0..GRID_POINTS).map(|i| lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64).collect();
    let curves = draws.iter().map(|d| curve_eval(&d.to_state(), hp, data, &grid)).collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(["x", "mean", "lower", "upper"]).map_err(csv_error)?;
    for (i, &x) in grid.iter().enumerate() {
        let mut vals: Vec<f64> = curves.iter().map(|c| c[i]).collect();
        vals.sort_by(f64::total_cmp);
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let row = [x, mean, quantile(&vals, 0.025), quantile(&vals, 0.975)];
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

struct Fitted {
    draws: Vec<Draw>,
    hp: Hyperparameters,
}

fn fit(args: &FitArgs) -> Result<Fitted> {
    let cfg = load_config(args.config.as_deref())?;
    let hp = cfg.model.unwrap_or_default();
    let mut chain = cfg.chain.unwrap_or_default();
    if let Some(s) = args.seed {
        chain.seed = s;
    }
    let data = read_csv(&args.data, cfg.interval, hp.order + 2)?;
    fs::create_dir_all(&args.out)?;
    let (draws, diag) = run_tempered(&data, &hp, &chain)?;
    if draws.is_empty() {
        return Err(Error::Config("no draws retained; check n_iters, burn_in and thin".into()));
    }
    write_draws(&args.out.join("draws.jsonl"), &draws)?;
    write_diagnostics(&args.out.join("diagnostics.json"), &diag)?;
    write_summary(&args.out.join("summary.csv"), &draws, &hp, &data)?;
    println!("{} draws written to {}", draws.len(), args.out.display());
    Ok(Fitted { draws, hp })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(args) => fit(&args).map(|_| ()),
        Command::Test { fit: args, hyp1, hyp2 } => {
            // reject bad hypotheses before spending time on the fit
            let cfg = load_config(args.config.as_deref())?;
            let hp = cfg.model.unwrap_or_default();
            parse_pair(&hyp1, &hyp2, hp.h, hp.m)?;
            let fitted = fit(&args)?;
            let (h1, h2) = parse_pair(&hyp1, &hyp2, fitted.hp.h, fitted.hp.m)?;
            let report = shape_report(&fitted.draws, &h1, &h2, &fitted.hp)?;
            write_json(&args.out.join("report.json"), &report)?;
            println!("Bayes factor {} vs {}: {}", report.hyp1, report.hyp2, report.bayes_factor);
            Ok(())
        }
        Command::Simulate { scenario, config, out, seed } => {
            let cfg = load_config(config.as_deref())?;
            if cfg.interval.is_some() {
                return Err(Error::Config("\"interval\" does not apply to simulate".into()));
            }
            let mut sc = Scenario::from_id(&scenario)?;
            if let Some(hp) = cfg.model {
                sc.hp = hp;
            }
            if let Some(chain) = cfg.chain {
                sc.chain = chain;
            }
            if let Some(r) = cfg.replicates {
                sc.replicates = r;
            }
            let base = seed.unwrap_or(sc.chain.seed);
            fs::create_dir_all(&out)?;
            let records = run_replicates(&sc, base)?;
            let mut w = csv::Writer::from_path(out.join("replicates.csv")).map_err(csv_error)?;
            for r in &records {
                w.serialize(r).map_err(csv_error)?;
            }
            w.flush()?;
            write_json(&out.join("summary.json"), &summarize(&sc.id, &records))?;
            println!("{} replicates of {} written to {}", records.len(), sc.id, out.display());
            Ok(())
        }
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::BasisIndex { .. } => "basis_index",
        Error::Domain(_) => "domain",
        Error::DegenerateAlpha { .. } => "degenerate_alpha",
        Error::ConstraintViolation { .. } => "constraint_violation",
        Error::Label(_) => "label",
        Error::Matrix(_) => "matrix",
        Error::Lookup(_) => "lookup",
        Error::InsufficientData { .. } => "insufficient_data",
        Error::Parse { .. } => "parse",
        Error::Indeterminate(_) => "indeterminate",
        Error::Spec(_) => "spec",
        Error::Config(_) => "config",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({ "error": { "kind": kind(&e), "message": e.to_string() } });
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}
