//! A small Monte Carlo grid written to disk, summarised, and plotted.
//!
//! cargo run --release --example simulate_grid -- [out_dir] [reps]

use std::path::PathBuf;

use drbench::harness::{cross_grid, run_grid};
use drbench::nuisance::{CovariateSet, FitMode};
use drbench::plot::{plot_summary, Metric};

fn main() -> drbench::Result<()> {
    let mut args = std::env::args().skip(1);
    let out: PathBuf = args.next().map_or_else(|| std::env::temp_dir().join("drbench-grid"), PathBuf::from);
    let reps: usize = args.next().map_or(50, |s| s.parse().expect("reps"));

    let grid = cross_grid(
        &[CovariateSet::Correct, CovariateSet::Transformed],
        &[FitMode::Parametric],
        &[100, 200, 600],
        Some(reps),
        1,
    );
    let report = run_grid(&grid, &out, None)?;
    eprintln!(
        "{} replicates computed, {} resumed, {} failed rows",
        report.computed_reps, report.resumed_reps, report.failed_rows
    );
    println!("scenario,n,estimator,bias,rmse,coverage");
    for s in &report.summaries {
        println!("{},{},{},{:.3},{:.3},{:.3}", s.cell.scenario, s.cell.n, s.estimator, s.bias, s.rmse, s.coverage);
    }
    for metric in [Metric::Bias, Metric::Rmse] {
        let plots = plot_summary(&report.summary_path, metric, &out.join("plots"))?;
        for svg in plots.svgs {
            eprintln!("wrote {}", svg.display());
        }
    }
    Ok(())
}
