//! Bootstrap standard error of the parametric g-computation estimate as the
//! number of resamples grows.
//!
//! cargo run --release --example bootstrap_se -- [n] [seed]

use drbench::dgp::{default_params, gen_trial};
use drbench::estimators::gcomp_estimate;
use drbench::inference::bootstrap;
use drbench::nuisance::{fit_outcome, CovariateSet, NuisanceOptions, ObservedData};

fn main() -> drbench::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(600, |s| s.parse().expect("n"));
    let seed: u64 = args.next().map_or(5, |s| s.parse().expect("seed"));
    let data = gen_trial(n, &default_params(), seed)?;
    let obs = ObservedData::from_dataset(&data, CovariateSet::Correct);
    let opts = NuisanceOptions::default();

    let pipeline = |d: &ObservedData| {
        let (g1, g0) = fit_outcome(d, &opts, seed)?;
        Ok(gcomp_estimate(&g1, &g0)?.psi_hat)
    };
    println!("point estimate {:.4}", pipeline(&obs)?);
    println!("resamples,se,failed");
    for b in [25, 50, 100, 200, 400] {
        let s = bootstrap(&obs, pipeline, b, seed)?;
        println!("{b},{:.4},{}", s.se, s.failed);
    }
    Ok(())
}
