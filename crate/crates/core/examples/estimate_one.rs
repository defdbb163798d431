//! All four estimators with standard errors and 95% intervals on a single
//! cohort, for each covariate set and fitting mode.
//!
//! cargo run --release --example estimate_one -- [n] [seed]

use drbench::dgp::{default_params, gen_trial};
use drbench::harness::{analyse, AnalysisOptions, ScenarioConfig};
use drbench::learners::reduced_library_specs;
use drbench::nuisance::{CovariateSet, FitMode, ObservedData};

fn main() -> drbench::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(1200, |s| s.parse().expect("n"));
    let seed: u64 = args.next().map_or(11, |s| s.parse().expect("seed"));
    let data = gen_trial(n, &default_params(), seed)?;

    println!("covariates,fit,estimator,psi_hat,se,ci_lo,ci_hi");
    for set in [CovariateSet::Correct, CovariateSet::Transformed] {
        for fit in [FitMode::Parametric, FitMode::Nonparametric] {
            let mut config = ScenarioConfig::new(set, fit, n, 1, seed);
            config.learners = reduced_library_specs();
            config.fast_bootstrap = true;
            let obs = ObservedData::from_dataset(&data, set);
            for (kind, outcome) in analyse(&obs, &AnalysisOptions::from_config(&config), seed) {
                match outcome {
                    Ok(e) => println!("{set},{fit},{kind},{:.3},{:.3},{:.3},{:.3}", e.psi_hat, e.se, e.ci.lo, e.ci.hi),
                    Err((psi, why)) => println!("{set},{fit},{kind},{psi:?},,,failed: {why}"),
                }
            }
        }
    }
    Ok(())
}
