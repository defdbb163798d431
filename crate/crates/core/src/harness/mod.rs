//! Monte Carlo engine: scenario configs, replicate execution, result files
//! and per-cell summaries.

mod config;
mod results;

use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::dgp::gen_trial;
use crate::error::{Error, Result};
use crate::estimators::{self, EstimatorKind, NuisanceFit};
use crate::inference::{self, ConfidenceInterval};
use crate::nuisance::{self, FitMode, NuisanceOptions, ObservedData};
use crate::rng;

pub use config::{
    cross_grid, default_reps, load_grid, paper_grid, parse_grid, validate_grid, ScenarioConfig, PAPER_SIZES,
};
pub use results::{
    cell_metrics, fmt_f64, lower_median, read_results, summarize, write_result_row, write_results_header,
    write_summary, CellKey, ResultRow, SummaryRow, RESULTS_HEADER, STATUS_OK, SUMMARY_HEADER,
};

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Replicates computed between two flushes of the results file.
const CHUNK: usize = 32;

/// How one dataset is analysed.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub nuisance: NuisanceOptions,
    pub estimators: Vec<EstimatorKind>,
    pub bootstrap_reps: usize,
    pub fast_bootstrap: bool,
    pub level: f64,
}

impl AnalysisOptions {
    pub fn from_config(c: &ScenarioConfig) -> Self {
        AnalysisOptions {
            nuisance: c.nuisance_options(),
            estimators: c.estimators.clone(),
            bootstrap_reps: c.bootstrap_reps,
            fast_bootstrap: c.fast_bootstrap,
            level: c.level,
        }
    }
}

/// Point estimate with its standard error and Wald interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub estimator: EstimatorKind,
    pub psi_hat: f64,
    pub se: f64,
    pub ci: ConfidenceInterval,
}

/// Estimator outcome on one dataset. A failure keeps the point estimate
/// when only the standard error could not be computed.
pub type EstimateOutcome = std::result::Result<Estimate, (Option<f64>, String)>;

fn needs_propensity(k: EstimatorKind) -> bool {
    k != EstimatorKind::Gcomp
}

fn needs_outcome(k: EstimatorKind) -> bool {
    k != EstimatorKind::Ipw
}

/// Fit the nuisances required by `opts.estimators` and run each estimator
/// with its paired variance: robust influence SE for IPW, bootstrap for
/// g-computation, influence-function SE for AIPW and TMLE.
pub fn analyse(data: &ObservedData, opts: &AnalysisOptions, seed: u64) -> Vec<(EstimatorKind, EstimateOutcome)> {
    let nuis = &opts.nuisance;
    let fhat = opts
        .estimators
        .iter()
        .any(|&k| needs_propensity(k))
        .then(|| nuisance::fit_propensity(data, nuis, seed).map_err(|e| format!("propensity model: {e}")));
    let outcome = opts
        .estimators
        .iter()
        .any(|&k| needs_outcome(k))
        .then(|| nuisance::fit_outcome(data, nuis, seed).map_err(|e| format!("outcome model: {e}")));

    opts.estimators
        .iter()
        .map(|&kind| {
            let run = || -> EstimateOutcome {
                let fhat = fhat.as_ref().map(|r| r.as_ref().map_err(|e| (None, e.clone())));
                let outcome = outcome.as_ref().map(|r| r.as_ref().map_err(|e| (None, e.clone())));
                let (psi_hat, se) = match kind {
                    EstimatorKind::Ipw => {
                        let f = fhat.expect("propensity requested")?;
                        let res = estimators::ipw_estimate(&data.x, &data.y, f).map_err(|e| (None, e.to_string()))?;
                        let se = inference::ipw_robust_se(&data.x, &data.y, f, res.psi_hat)
                            .map_err(|e| (Some(res.psi_hat), e.to_string()))?;
                        (res.psi_hat, se)
                    }
                    EstimatorKind::Gcomp => {
                        let (g1, g0) = outcome.expect("outcome requested")?;
                        let psi = estimators::gcomp_estimate(g1, g0).map_err(|e| (None, e.to_string()))?.psi_hat;
                        let se = gcomp_bootstrap_se(data, opts, seed).map_err(|e| (Some(psi), e.to_string()))?;
                        (psi, se)
                    }
                    EstimatorKind::Aipw | EstimatorKind::Tmle => {
                        let f = fhat.expect("propensity requested")?;
                        let (g1, g0) = outcome.expect("outcome requested")?;
                        let nf = NuisanceFit::from_arms(&data.x, f.clone(), g1.clone(), g0.clone())
                            .map_err(|e| (None, e.to_string()))?;
                        let res = estimators::estimate(kind, &data.x, &data.y, &nf).map_err(|e| (None, e.to_string()))?;
                        let influence = res.influence.as_deref().unwrap_or_default();
                        let se = inference::if_se(influence).map_err(|e| (Some(res.psi_hat), e.to_string()))?;
                        (res.psi_hat, se)
                    }
                };
                if !psi_hat.is_finite() || !se.is_finite() {
                    return Err((Some(psi_hat), format!("non-finite estimate {psi_hat} or se {se}")));
                }
                let ci = inference::wald_ci(psi_hat, se, opts.level).map_err(|e| (Some(psi_hat), e.to_string()))?;
                Ok(Estimate { estimator: kind, psi_hat, se, ci })
            };
            (kind, run())
        })
        .collect()
}

/// Bootstrap SE of g-computation, refitting the outcome model on every
/// resample. With `fast_bootstrap` the refit is parametric.
fn gcomp_bootstrap_se(data: &ObservedData, opts: &AnalysisOptions, seed: u64) -> Result<f64> {
    let mut boot = opts.nuisance.clone();
    if opts.fast_bootstrap {
        boot.fit_mode = FitMode::Parametric;
    }
    let inner = rng::derive_seed(seed, &[rng::label::NUISANCE, 2]);
    let pipeline = |d: &ObservedData| -> Result<f64> {
        let (g1, g0) = nuisance::fit_outcome(d, &boot, inner)?;
        Ok(estimators::gcomp_estimate(&g1, &g0)?.psi_hat)
    };
    let b_seed = rng::derive_seed(seed, &[rng::label::BOOTSTRAP]);
    inference::bootstrap_se(data, pipeline, opts.bootstrap_reps, b_seed)
}

/// Seed of the dataset for replicate `rep` at sample size `n`. Scenarios
/// with the same base seed share datasets, so their comparisons are paired.
pub fn dataset_seed(base_seed: u64, n: usize, rep: usize) -> u64 {
    rng::derive_seed(base_seed, &[rng::label::DATA, n as u64, rep as u64])
}

/// Seed of the nuisance fits and bootstrap for one replicate of one scenario.
pub fn analysis_seed(config: &ScenarioConfig, rep: usize) -> u64 {
    rng::derive_seed(
        config.base_seed,
        &[rng::label::NUISANCE, rng::hash_label(&config.scenario()), config.n as u64, rep as u64],
    )
}

pub fn cell_key(config: &ScenarioConfig) -> CellKey {
    CellKey { scenario: config.scenario(), covariates: config.covariate_set, fit_mode: config.fit_mode, n: config.n }
}

/// One result row per requested estimator, in request order.
pub fn run_replicate(config: &ScenarioConfig, rep: usize) -> Vec<ResultRow> {
    let cell = cell_key(config);
    let data = match gen_trial(config.n, &config.params, dataset_seed(config.base_seed, config.n, rep)) {
        Ok(d) => ObservedData::from_dataset(&d, config.covariate_set),
        Err(e) => {
            let reason = format!("data generation: {e}");
            return config
                .estimators
                .iter()
                .map(|&k| ResultRow::failed(cell.clone(), rep, k, f64::NAN, &reason))
                .collect();
        }
    };
    analyse(&data, &AnalysisOptions::from_config(config), analysis_seed(config, rep))
        .into_iter()
        .map(|(kind, outcome)| match outcome {
            Ok(e) => ResultRow {
                cell: cell.clone(),
                rep,
                estimator: kind,
                psi_hat: e.psi_hat,
                se: e.se,
                ci_lo: e.ci.lo,
                ci_hi: e.ci.hi,
                status: STATUS_OK.to_string(),
            },
            Err((psi, reason)) => {
                log::debug!("{} n={} rep {rep} {kind}: {reason}", cell.scenario, cell.n);
                ResultRow::failed(cell.clone(), rep, kind, psi.unwrap_or(f64::NAN), &reason)
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GridReport {
    pub results_path: PathBuf,
    pub summary_path: PathBuf,
    /// Replicates carried over from an earlier, interrupted run.
    pub resumed_reps: usize,
    pub computed_reps: usize,
    pub failed_rows: usize,
    pub summaries: Vec<SummaryRow>,
}

fn open_for_write(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

/// Run every cell of `grid`, writing `results.csv` and `summary.csv` into
/// `out_dir`.
///
/// Replicates are computed in parallel on `threads` workers (all cores when
/// `None`) and written in grid order, so the results file does not depend on
/// the thread count. Replicates already complete in an existing results file
/// are kept and skipped.
pub fn run_grid(grid: &[ScenarioConfig], out_dir: &Path, threads: Option<usize>) -> Result<GridReport> {
    validate_grid(grid)?;
    fs::create_dir_all(out_dir)
        .map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", out_dir.display())))?;
    let results_path = out_dir.join(RESULTS_FILE);
    let summary_path = out_dir.join(SUMMARY_FILE);

    let by_cell: HashMap<(String, usize), &ScenarioConfig> = grid.iter().map(|c| ((c.scenario(), c.n), c)).collect();
    let kept = match File::open(&results_path) {
        Ok(f) => completed_rows(read_results(f, true)?, &by_cell)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let done: HashSet<(String, usize, usize)> =
        kept.iter().map(|r| (r.cell.scenario.clone(), r.cell.n, r.rep)).collect();

    let mut writer = csv::Writer::from_writer(BufWriter::new(open_for_write(&results_path)?));
    write_results_header(&mut writer)?;
    for r in &kept {
        write_result_row(&mut writer, r)?;
    }
    writer.flush()?;

    let tasks: Vec<(usize, usize)> = grid
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| (0..c.reps).map(move |rep| (ci, rep)))
        .filter(|&(ci, rep)| !done.contains(&(grid[ci].scenario(), grid[ci].n, rep)))
        .collect();
    if !done.is_empty() {
        log::info!("resuming: {} replicates already complete, {} to run", done.len(), tasks.len());
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let mut finished = 0;
    for chunk in tasks.chunks(CHUNK) {
        let rows: Vec<Vec<ResultRow>> =
            pool.install(|| chunk.par_iter().map(|&(ci, rep)| run_replicate(&grid[ci], rep)).collect());
        for r in rows.iter().flatten() {
            write_result_row(&mut writer, r)?;
        }
        writer.flush()?;
        finished += chunk.len();
        log::info!("{finished}/{} replicates", tasks.len());
    }
    writer.flush()?;
    drop(writer);

    let all = read_results(File::open(&results_path)?, false)?;
    let failed_rows = all.iter().filter(|r| !r.is_ok()).count();
    let summaries = summarize(&all, |cell| {
        by_cell.get(&(cell.scenario.clone(), cell.n)).map_or(f64::NAN, |c| c.params.psi_true)
    });
    write_summary(BufWriter::new(open_for_write(&summary_path)?), &summaries)?;
    Ok(GridReport {
        results_path,
        summary_path,
        resumed_reps: done.len(),
        computed_reps: tasks.len(),
        failed_rows,
        summaries,
    })
}

/// Rows of replicates whose every requested estimator is present, in file
/// order.
fn completed_rows(rows: Vec<ResultRow>, grid: &HashMap<(String, usize), &ScenarioConfig>) -> Result<Vec<ResultRow>> {
    let mut seen: HashMap<(String, usize, usize), Vec<EstimatorKind>> = HashMap::new();
    for r in &rows {
        let Some(c) = grid.get(&(r.cell.scenario.clone(), r.cell.n)) else {
            return Err(Error::Config(format!(
                "existing results file has cell {} n={} outside this grid; use a fresh output directory",
                r.cell.scenario, r.cell.n
            )));
        };
        if r.cell.covariates != c.covariate_set || r.cell.fit_mode != c.fit_mode {
            return Err(Error::Config(format!("existing results for {} disagree with the config", r.cell.scenario)));
        }
        seen.entry((r.cell.scenario.clone(), r.cell.n, r.rep)).or_default().push(r.estimator);
    }
    let complete = |r: &ResultRow| {
        let c = grid[&(r.cell.scenario.clone(), r.cell.n)];
        r.rep < c.reps && seen[&(r.cell.scenario.clone(), r.cell.n, r.rep)] == c.estimators
    };
    Ok(rows.iter().filter(|r| complete(r)).cloned().collect())
}

/// Recompute summaries from a results file.
pub fn summarize_file(results: &Path, summary: &Path, psi_true: f64) -> Result<Vec<SummaryRow>> {
    let f = File::open(results).map_err(|e| Error::Config(format!("cannot read {}: {e}", results.display())))?;
    let rows = read_results(f, false)?;
    let s = summarize(&rows, |_| psi_true);
    let mut w = BufWriter::new(open_for_write(summary)?);
    write_summary(&mut w, &s)?;
    w.flush()?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::CovariateSet;

    fn small(n: usize, reps: usize) -> ScenarioConfig {
        let mut c = ScenarioConfig::new(CovariateSet::Correct, FitMode::Parametric, n, reps, 7);
        c.bootstrap_reps = 20;
        c
    }

    #[test]
    fn replicate_shape_and_determinism() {
        let c = small(200, 1);
        let a = run_replicate(&c, 0);
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|r| r.is_ok() && r.psi_hat.is_finite() && r.se > 0.0));
        let b = run_replicate(&c, 0);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.psi_hat.to_bits(), y.psi_hat.to_bits());
            assert_eq!(x.se.to_bits(), y.se.to_bits());
        }
        assert_ne!(run_replicate(&c, 1)[0].psi_hat, a[0].psi_hat);
    }

    #[test]
    fn scenarios_share_datasets() {
        let a = small(100, 1);
        let mut b = small(100, 1);
        b.label = Some("other".into());
        // same data, different analysis seed; IPW has no randomness beyond the data
        assert_eq!(run_replicate(&a, 0)[0].psi_hat, run_replicate(&b, 0)[0].psi_hat);
    }

    #[test]
    fn grid_files_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let grid = vec![small(60, 3)];
        let rep = run_grid(&grid, dir.path(), Some(1)).unwrap();
        assert_eq!(rep.computed_reps, 3);
        let first = fs::read_to_string(&rep.results_path).unwrap();
        assert_eq!(first.lines().count(), 1 + 12);
        let summary = fs::read_to_string(&rep.summary_path).unwrap();

        // drop the last replicate plus a torn line, then resume
        let lines: Vec<&str> = first.lines().collect();
        let partial = format!("{}\n{}", lines[..lines.len() - 3].join("\n"), &lines[lines.len() - 3][..10]);
        fs::write(&rep.results_path, partial).unwrap();
        fs::remove_file(&rep.summary_path).unwrap();
        let again = run_grid(&grid, dir.path(), Some(2)).unwrap();
        assert_eq!((again.resumed_reps, again.computed_reps), (2, 1));
        assert_eq!(fs::read_to_string(&again.results_path).unwrap(), first);
        assert_eq!(fs::read_to_string(&again.summary_path).unwrap(), summary);
    }

    #[test]
    fn foreign_results_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        run_grid(&[small(60, 1)], dir.path(), Some(1)).unwrap();
        assert!(matches!(run_grid(&[small(70, 1)], dir.path(), Some(1)), Err(Error::Config(_))));
    }

    #[test]
    fn unwritable_output_is_a_startup_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        fs::write(&file, "x").unwrap();
        assert!(matches!(run_grid(&[small(60, 1)], &file.join("sub"), Some(1)), Err(Error::Config(_))));
    }

    #[test]
    fn estimator_subset_and_failures_are_reported() {
        let mut c = small(60, 1);
        c.estimators = vec![EstimatorKind::Tmle, EstimatorKind::Ipw];
        let rows = run_replicate(&c, 0);
        assert_eq!(rows.iter().map(|r| r.estimator).collect::<Vec<_>>(), c.estimators);

        let mut flat = small(60, 1);
        flat.params.beta = vec![0.0; 11];
        flat.params.psi_true = 0.0;
        flat.params.sigma = 0.0;
        // constant outcome: TMLE falls back, the SEs are zero and still valid
        let rows = run_replicate(&flat, 0);
        assert!(rows.iter().all(|r| r.is_ok()), "{rows:?}");
        assert!(rows.iter().all(|r| r.psi_hat.abs() < 1e-9));
    }
}
