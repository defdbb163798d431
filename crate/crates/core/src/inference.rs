//! Standard errors and Wald intervals: influence-function variance, the
//! IPW sandwich, and the nonparametric bootstrap.

use rand::Rng;
use rayon::prelude::*;

use crate::dgp::Dataset;
use crate::error::{Error, Result};
use crate::estimators::ipw_terms;
use crate::rng;

pub const DEFAULT_BOOTSTRAP_REPS: usize = 100;
/// Redraws allowed per resample before it counts as failed.
pub const BOOTSTRAP_ATTEMPTS: usize = 5;
/// Largest tolerated fraction of failed resamples.
pub const BOOTSTRAP_MAX_FAILED: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceInterval {
    pub level: f64,
    pub lo: f64,
    pub hi: f64,
}

impl ConfidenceInterval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// `sd(influence) / sqrt(n)` with the `n - 1` divisor.
pub fn if_se(influence: &[f64]) -> Result<f64> {
    if influence.len() < 2 {
        return Err(Error::domain("influence-based standard error needs n >= 2"));
    }
    Ok(sample_sd(influence) / (influence.len() as f64).sqrt())
}

/// Sandwich standard error of the IPW estimator with the propensity scores
/// held fixed. This ignores the estimation of the weights and so tends to
/// over-cover.
pub fn ipw_robust_se(x: &[u8], y: &[f64], fhat: &[f64], psi_hat: f64) -> Result<f64> {
    let dev: Vec<f64> = ipw_terms(x, y, fhat)?.into_iter().map(|t| t - psi_hat).collect();
    if_se(&dev)
}

/// Standard normal quantile (Wichura's AS 241, PPND16), accurate to about
/// 1e-16 relative.
pub fn normal_quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((r * 2509.080_928_730_122_7 + 33430.575_583_588_128) * r + 67265.770_927_008_7) * r
                + 45921.953_931_549_871)
                * r
                + 13731.693_765_509_461)
                * r
                + 1971.590_950_306_551_3)
                * r
                + 133.141_667_891_784_38)
                * r
                + 3.387_132_872_796_366_5)
            / (((((((r * 5226.495_278_852_545_4 + 28729.085_735_721_943) * r + 39307.895_800_092_71) * r
                + 21213.794_301_586_597)
                * r
                + 5394.196_021_424_751)
                * r
                + 687.187_007_492_057_9)
                * r
                + 42.313_330_701_600_911)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((r * 7.745_450_142_783_414_1e-4 + 0.022_723_844_989_269_184) * r + 0.241_780_725_177_450_6) * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691_4)
            * r
            + 4.630_337_846_156_545_3)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((r * 1.050_750_071_644_416_9e-9 + 5.475_938_084_995_344_9e-4) * r
                + 0.015_198_666_563_616_457)
                * r
                + 0.148_103_976_427_480_08)
                * r
                + 0.689_767_334_985_100_0)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_759)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((r * 2.010_334_399_292_288_1e-7 + 2.711_555_568_743_487_6e-5) * r + 0.001_242_660_947_388_078_4)
            * r
            + 0.026_532_189_526_576_124)
            * r
            + 0.296_560_571_828_504_89)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114_4)
            * r
            + 6.657_904_643_501_103_8)
            / (((((((r * 2.044_263_103_389_939_7e-15 + 1.421_511_758_316_446e-7) * r
                + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_132_6e-4)
                * r
                + 0.014_875_361_290_850_615)
                * r
                + 0.136_929_880_922_735_8)
                * r
                + 0.599_832_206_555_888)
                * r
                + 1.0)
    };
    if q < 0.0 { -val } else { val }
}

/// `psi_hat +/- z * se` at the given two-sided level.
pub fn wald_ci(psi_hat: f64, se: f64, level: f64) -> Result<ConfidenceInterval> {
    if !(se >= 0.0) {
        return Err(Error::domain(format!("standard error {se} must be >= 0")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("confidence level {level} outside (0, 1)")));
    }
    let z = normal_quantile(0.5 * (1.0 + level));
    Ok(ConfidenceInterval { level, lo: psi_hat - z * se, hi: psi_hat + z * se })
}

/// Data that can be resampled by rows.
pub trait Resample: Sync {
    fn n_rows(&self) -> usize;
    fn take_rows(&self, idx: &[usize]) -> Self;
}

impl Resample for Dataset {
    fn n_rows(&self) -> usize {
        self.len()
    }

    fn take_rows(&self, idx: &[usize]) -> Self {
        self.select_rows(idx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSummary {
    pub se: f64,
    pub estimates: Vec<f64>,
    /// Resamples that failed on every attempt.
    pub failed: usize,
    /// Total redraws caused by pipeline failures.
    pub redraws: usize,
}

/// Standard deviation of `b` pipeline estimates on row resamples.
///
/// Resample `r`, attempt `a` draws from substream `(seed, r, a)`, so the
/// result does not depend on execution order.
pub fn bootstrap_se<D, F>(data: &D, pipeline: F, b: usize, seed: u64) -> Result<f64>
where
    D: Resample,
    F: Fn(&D) -> Result<f64> + Sync,
{
    bootstrap(data, pipeline, b, seed).map(|s| s.se)
}

pub fn bootstrap<D, F>(data: &D, pipeline: F, b: usize, seed: u64) -> Result<BootstrapSummary>
where
    D: Resample,
    F: Fn(&D) -> Result<f64> + Sync,
{
    if b < 2 {
        return Err(Error::domain("bootstrap needs at least 2 resamples"));
    }
    let n = data.n_rows();
    if n == 0 {
        return Err(Error::domain("cannot resample an empty dataset"));
    }
    let draws: Vec<(Option<f64>, usize, Option<String>)> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut last_err = None;
            for attempt in 0..BOOTSTRAP_ATTEMPTS {
                let mut stream = rng::substream(seed, &[rng::label::BOOTSTRAP, r as u64, attempt as u64]);
                let idx: Vec<usize> = (0..n).map(|_| stream.random_range(0..n)).collect();
                match pipeline(&data.take_rows(&idx)) {
                    Ok(v) if v.is_finite() => return (Some(v), attempt, None),
                    Ok(v) => last_err = Some(format!("non-finite estimate {v}")),
                    Err(e) => last_err = Some(e.to_string()),
                }
            }
            (None, BOOTSTRAP_ATTEMPTS, last_err)
        })
        .collect();
    let estimates: Vec<f64> = draws.iter().filter_map(|d| d.0).collect();
    let failed = b - estimates.len();
    let redraws = draws.iter().map(|d| d.1).sum();
    if failed as f64 > BOOTSTRAP_MAX_FAILED * b as f64 || estimates.len() < 2 {
        let reason = draws.iter().find_map(|d| d.2.clone()).unwrap_or_default();
        return Err(Error::Inference(format!("{failed} of {b} bootstrap resamples failed; last error: {reason}")));
    }
    if failed > 0 {
        log::warn!("{failed} of {b} bootstrap resamples failed after {BOOTSTRAP_ATTEMPTS} attempts");
    }
    Ok(BootstrapSummary { se: sample_sd(&estimates), estimates, failed, redraws })
}
