//! Draw one synthetic cohort and write it as CSV to stdout.
//!
//! cargo run --release --example generate_data -- [n] [seed] > cohort.csv

use drbench::dgp::{default_params, gen_trial, true_propensity};

fn main() -> drbench::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(1200, |s| s.parse().expect("n"));
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed"));
    let params = default_params();
    let data = gen_trial(n, &params, seed)?;

    let f = true_propensity(&data.c, &params);
    let treated = data.x.iter().filter(|&&x| x == 1).count();
    let (lo, hi) = f.iter().fold((1.0f64, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    eprintln!("n = {n}, exposed = {treated}, true propensity range [{lo:.4}, {hi:.4}]");

    data.write_csv(std::io::stdout().lock())
}
