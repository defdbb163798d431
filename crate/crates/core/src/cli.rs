//! The `drbench` command line: `simulate`, `summarize`, `estimate`, `plot`.
//!
//! Exit codes: 0 success, 2 partial completion, 64 usage, 65 data,
//! 70 internal.

use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::harness::{self, fmt_f64, AnalysisOptions, ScenarioConfig, PAPER_SIZES};
use crate::learners::{default_library_specs, reduced_library_specs, LearnerSpec, DEFAULT_FOLDS};
use crate::nuisance::{CovariateSet, FitMode, ModelTerms, NuisanceOptions, ObservedData};
use crate::plot::{self, Metric};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATA: i32 = 65;
pub const EXIT_INTERNAL: i32 = 70;

pub const THREADS_ENV: &str = "DRBENCH_THREADS";

#[derive(Debug, Parser)]
#[command(name = "drbench", version, about = "Average treatment effect estimators and their Monte Carlo comparison")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a simulation grid and write results.csv and summary.csv.
    Simulate(SimulateArgs),
    /// Recompute summary.csv from a results file.
    Summarize(SummarizeArgs),
    /// Estimate the treatment effect on a CSV file.
    Estimate(EstimateArgs),
    /// Draw a summary metric against sample size.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Library {
    Default,
    Reduced,
}

impl Library {
    fn specs(self) -> Vec<LearnerSpec> {
        match self {
            Library::Default => default_library_specs(),
            Library::Reduced => reduced_library_specs(),
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// JSON file with one scenario object or a list of them.
    #[arg(long, conflicts_with_all = ["covariates", "fit", "n", "reps", "seed", "estimators", "truncate",
        "fast_bootstrap", "bootstrap_reps", "correct_arm", "library", "folds"])]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = parse_text::<CovariateSet>)]
    covariates: Vec<CovariateSet>,
    #[arg(long, value_delimiter = ',', value_parser = parse_text::<FitMode>)]
    fit: Vec<FitMode>,
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// Replicates per cell [default: 1000 parametric, 200 nonparametric].
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_text::<EstimatorKind>)]
    estimators: Vec<EstimatorKind>,
    /// Clamp propensities to `lo,hi`.
    #[arg(long, value_parser = parse_bounds)]
    truncate: Option<(f64, f64)>,
    /// Bootstrap g-computation with a parametric outcome refit.
    #[arg(long)]
    fast_bootstrap: bool,
    #[arg(long)]
    bootstrap_reps: Option<usize>,
    /// Parametric terms for the raw-confounder arm.
    #[arg(long, value_parser = parse_text::<ModelTerms>)]
    correct_arm: Option<ModelTerms>,
    #[arg(long, value_enum)]
    library: Option<Library>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SummarizeArgs {
    #[arg(long)]
    results: PathBuf,
    /// Defaults to summary.csv next to the results file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// True effect used for bias, MSE and coverage.
    #[arg(long, default_value_t = 6.0)]
    psi: f64,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    outcome: String,
    #[arg(long)]
    exposure: String,
    /// Covariate columns [default: every other column].
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    #[arg(long, value_delimiter = ',', value_parser = parse_text::<EstimatorKind>)]
    estimator: Vec<EstimatorKind>,
    #[arg(long, default_value = "parametric", value_parser = parse_text::<FitMode>)]
    fit: FitMode,
    #[arg(long, default_value = "main-effects", value_parser = parse_text::<ModelTerms>)]
    terms: ModelTerms,
    #[arg(long, value_enum, default_value = "default")]
    library: Library,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    folds: usize,
    #[arg(long, value_parser = parse_bounds)]
    truncate: Option<(f64, f64)>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = crate::inference::DEFAULT_BOOTSTRAP_REPS)]
    bootstrap_reps: usize,
    #[arg(long)]
    fast_bootstrap: bool,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long)]
    summary: PathBuf,
    /// bias or rmse.
    #[arg(long, default_value = "bias")]
    metric: String,
    #[arg(long)]
    out: PathBuf,
}

fn parse_text<T: std::str::FromStr<Err = Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_bounds(s: &str) -> std::result::Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [lo, hi] = parts[..] else {
        return Err(format!("expected lo,hi, got {s:?}"));
    };
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad bound {lo:?}"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad bound {hi:?}"))?;
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(format!("bounds {lo},{hi} need 0 <= lo < hi <= 1"));
    }
    Ok((lo, hi))
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Data(_) | Error::Csv(_) | Error::Json(_) | Error::Domain(_) | Error::Dimension(_) => EXIT_DATA,
        _ => EXIT_INTERNAL,
    }
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a, out),
        Command::Summarize(a) => summarize(a, out),
        Command::Estimate(a) => estimate(a, out, err),
        Command::Plot(a) => plot_cmd(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn threads(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{THREADS_ENV}={v:?} is not a thread count"))),
        _ => Ok(None),
    }
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<i32> {
    let threads = threads(a.threads)?;
    let grid = match &a.config {
        Some(path) => harness::load_grid(path)?,
        None => inline_grid(&a),
    };
    let report = harness::run_grid(&grid, &a.out, threads)?;
    writeln!(
        out,
        "{} replicates run, {} resumed; results in {}, summary in {}",
        report.computed_reps,
        report.resumed_reps,
        report.results_path.display(),
        report.summary_path.display()
    )?;
    if report.failed_rows > 0 {
        writeln!(out, "{} estimator rows failed; see the status column", report.failed_rows)?;
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}

fn inline_grid(a: &SimulateArgs) -> Vec<ScenarioConfig> {
    let covariates =
        if a.covariates.is_empty() { vec![CovariateSet::Correct, CovariateSet::Transformed] } else { a.covariates.clone() };
    let fits = if a.fit.is_empty() { vec![FitMode::Parametric, FitMode::Nonparametric] } else { a.fit.clone() };
    let sizes = if a.n.is_empty() { PAPER_SIZES.to_vec() } else { a.n.clone() };
    let mut grid = harness::cross_grid(&covariates, &fits, &sizes, a.reps, a.seed.unwrap_or(1));
    for c in &mut grid {
        if !a.estimators.is_empty() {
            c.estimators = a.estimators.clone();
        }
        c.truncate = a.truncate;
        c.fast_bootstrap = a.fast_bootstrap;
        if let Some(b) = a.bootstrap_reps {
            c.bootstrap_reps = b;
        }
        if let Some(t) = a.correct_arm {
            c.correct_arm = t;
        }
        if let Some(l) = a.library {
            c.learners = l.specs();
        }
        if let Some(k) = a.folds {
            c.folds = k;
        }
    }
    grid
}

fn summarize(a: SummarizeArgs, out: &mut dyn Write) -> Result<i32> {
    let target = a.out.clone().unwrap_or_else(|| {
        a.results.parent().unwrap_or_else(|| Path::new(".")).join(harness::SUMMARY_FILE)
    });
    let rows = harness::summarize_file(&a.results, &target, a.psi)?;
    writeln!(out, "{} summary rows written to {}", rows.len(), target.display())?;
    Ok(EXIT_OK)
}

/// Read named columns of a CSV file.
pub fn read_observed(path: &Path, outcome: &str, exposure: &str, covariates: &[String]) -> Result<ObservedData> {
    let f = File::open(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut rdr = csv::Reader::from_reader(f);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("column {name:?} not found; columns are {}", header.join(","))))
    };
    let yi = find(outcome)?;
    let xi = find(exposure)?;
    let ci: Vec<usize> = if covariates.is_empty() {
        (0..header.len()).filter(|&j| j != yi && j != xi).collect()
    } else {
        covariates.iter().map(|c| find(c)).collect::<Result<_>>()?
    };

    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut cov = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |j: usize| -> Result<f64> {
            let raw = rec.get(j).unwrap_or("").trim();
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Data(format!("row {}: column {:?} value {raw:?} is not a finite number", r + 1, header[j]))),
            }
        };
        let xv = num(xi)?;
        if xv != 0.0 && xv != 1.0 {
            return Err(Error::Data(format!("row {}: exposure {xv} is not 0 or 1", r + 1)));
        }
        x.push(xv as u8);
        y.push(num(yi)?);
        for &j in &ci {
            cov.push(num(j)?);
        }
    }
    let n = x.len();
    ObservedData::new(x, y, DMatrix::from_row_slice(n, ci.len(), &cov)).map_err(|e| Error::Data(e.to_string()))
}

fn estimate(a: EstimateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let threads = threads(a.threads)?;
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(Error::Config(format!("level {} outside (0, 1)", a.level)));
    }
    let data = read_observed(&a.data, &a.outcome, &a.exposure, &a.covariates)?;
    let opts = AnalysisOptions {
        nuisance: NuisanceOptions {
            fit_mode: a.fit,
            terms: a.terms,
            library: a.library.specs(),
            folds: a.folds,
            truncate: a.truncate,
        },
        estimators: if a.estimator.is_empty() { EstimatorKind::ALL.to_vec() } else { a.estimator.clone() },
        bootstrap_reps: a.bootstrap_reps,
        fast_bootstrap: a.fast_bootstrap,
        level: a.level,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results = pool.install(|| harness::analyse(&data, &opts, a.seed));
    let mut failed = 0;
    for (kind, r) in results {
        match r {
            Ok(e) => writeln!(
                out,
                "{kind},{},{},{},{}",
                fmt_f64(e.psi_hat),
                fmt_f64(e.se),
                fmt_f64(e.ci.lo),
                fmt_f64(e.ci.hi)
            )?,
            Err((_, reason)) => {
                failed += 1;
                writeln!(err, "{kind}: {reason}")?;
            }
        }
    }
    Ok(match failed {
        0 => EXIT_OK,
        f if f == opts.estimators.len() => EXIT_DATA,
        _ => EXIT_PARTIAL,
    })
}

fn plot_cmd(a: PlotArgs, out: &mut dyn Write) -> Result<i32> {
    let metric: Metric = a.metric.parse()?;
    let written = plot::plot_summary(&a.summary, metric, &a.out)?;
    for p in &written.svgs {
        writeln!(out, "{}", p.display())?;
    }
    writeln!(out, "{}", written.points_csv.display())?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("drbench").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn usage_errors() {
        assert_eq!(run_args(&[]).0, EXIT_USAGE);
        assert_eq!(run_args(&["simulate", "--n", "abc", "--out", "x"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["simulate", "--fit", "semi", "--out", "x"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["simulate", "--truncate", "0.9,0.1", "--out", "x"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn bounds() {
        assert_eq!(parse_bounds("0.01, 0.99"), Ok((0.01, 0.99)));
        assert!(parse_bounds("0.5").is_err());
        assert!(parse_bounds("0.2,0.1").is_err());
    }

    #[test]
    fn inline_grid_defaults_to_full_cross() {
        let a = SimulateArgs::try_parse_from_args(&["--out", "x"]);
        let g = inline_grid(&a);
        assert_eq!(g.len(), 20);
    }

    impl SimulateArgs {
        fn try_parse_from_args(args: &[&str]) -> SimulateArgs {
            #[derive(Parser)]
            struct Wrap {
                #[command(flatten)]
                a: SimulateArgs,
            }
            Wrap::try_parse_from(std::iter::once("x").chain(args.iter().copied())).unwrap().a
        }
    }
}
