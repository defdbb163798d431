//! Least-squares and logistic fits on one simulated cohort, compared with
//! the generating coefficients.
//!
//! cargo run --release --example glm_fits -- [n] [seed]

use drbench::dgp::{default_params, design_matrix, gen_trial};
use drbench::glm::{fit_linear, fit_logistic};
use nalgebra::DMatrix;

fn main() -> drbench::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(20_000, |s| s.parse().expect("n"));
    let seed: u64 = args.next().map_or(7, |s| s.parse().expect("seed"));
    let params = default_params();
    let data = gen_trial(n, &params, seed)?;
    let design = design_matrix(&data.c);

    let xf: Vec<f64> = data.x.iter().map(|&v| f64::from(v)).collect();
    let prop = fit_logistic(&design, &xf, None, None)?;
    println!("propensity: converged = {} after {} iterations", prop.converged, prop.iterations);
    println!("term,theta,theta_hat");
    for (j, (t, h)) in params.theta.iter().zip(&prop.coef).enumerate() {
        println!("{j},{t},{h:.4}");
    }

    let (rows, cols) = design.shape();
    let outcome_design = DMatrix::from_fn(rows, cols + 1, |i, j| if j < cols { design[(i, j)] } else { xf[i] });
    let out = fit_linear(&outcome_design, &data.y, None)?;
    println!("outcome: residual sd = {:.3} (sigma = {})", out.residual_variance.sqrt(), params.sigma);
    println!("term,beta,beta_hat");
    for (j, (b, h)) in params.beta.iter().chain([&params.psi_true]).zip(&out.coef).enumerate() {
        println!("{j},{b},{h:.4}");
    }
    Ok(())
}
