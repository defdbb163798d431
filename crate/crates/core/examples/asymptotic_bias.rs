//! Large-sample estimates under each parametric specification, showing
//! where the estimators settle when the models use the transformed
//! covariates.
//!
//! cargo run --release --example asymptotic_bias -- [n] [seed]

use drbench::dgp::{default_params, gen_trial};
use drbench::estimators::{estimate, EstimatorKind};
use drbench::harness::ScenarioConfig;
use drbench::nuisance::{fit_nuisance, CovariateSet, FitMode, ObservedData};

fn main() -> drbench::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(100_000, |s| s.parse().expect("n"));
    let seed: u64 = args.next().map_or(20_240_101, |s| s.parse().expect("seed"));
    let params = default_params();
    let data = gen_trial(n, &params, seed)?;

    println!("covariates,estimator,psi_hat,bias");
    for set in [CovariateSet::Correct, CovariateSet::Transformed] {
        let config = ScenarioConfig::new(set, FitMode::Parametric, n, 1, seed);
        let obs = ObservedData::from_dataset(&data, set);
        let nf = fit_nuisance(&obs, &config.nuisance_options(), seed)?;
        for kind in EstimatorKind::ALL {
            let psi = estimate(kind, &obs.x, &obs.y, &nf)?.psi_hat;
            println!("{set},{kind},{psi:.4},{:.4}", psi - params.psi_true);
        }
    }
    Ok(())
}
