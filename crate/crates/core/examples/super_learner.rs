//! Cross-validated ensemble for the outcome regression on the transformed
//! covariates, printing each learner's out-of-fold risk and weight.
//!
//! cargo run --release --example super_learner -- [n] [seed] [reduced|default]

use drbench::dgp::{default_params, gen_trial};
use drbench::learners::{default_library_specs, reduced_library_specs, write_risk_table};
use drbench::nuisance::{outcome_ensemble, propensity_ensemble, CovariateSet, FitMode, NuisanceOptions, ObservedData};

fn main() -> drbench::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(1200, |s| s.parse().expect("n"));
    let seed: u64 = args.next().map_or(3, |s| s.parse().expect("seed"));
    let library = match args.next().as_deref() {
        Some("default") => default_library_specs(),
        _ => reduced_library_specs(),
    };
    let data = gen_trial(n, &default_params(), seed)?;
    let obs = ObservedData::from_dataset(&data, CovariateSet::Transformed);
    let opts = NuisanceOptions { fit_mode: FitMode::Nonparametric, library, ..NuisanceOptions::default() };

    let stdout = std::io::stdout();
    println!("# propensity");
    let prop = propensity_ensemble(&obs, &opts, seed)?;
    write_risk_table(&prop, stdout.lock())?;
    println!("ensemble,{},1", prop.ensemble_risk);
    println!("# outcome");
    let out = outcome_ensemble(&obs, &opts, seed)?;
    write_risk_table(&out, stdout.lock())?;
    println!("ensemble,{},1", out.ensemble_risk);
    Ok(())
}
