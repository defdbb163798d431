//! Synthetic cohorts: four independent standard-normal confounders, a
//! logistic exposure model and a Gaussian outcome model, both with every
//! two-way confounder interaction.
//!
//! Interaction terms are laid out as `C1C2, C1C3, C1C4, C2C3, C2C4, C3C4`
//! after the intercept and the four main effects.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Number of confounders.
pub const N_CONFOUNDERS: usize = 4;
/// Intercept + 4 main effects + 6 two-way interactions.
pub const DESIGN_WIDTH: usize = 11;

/// Column header of the dataset text format.
pub const DATASET_HEADER: &str = "y,x,c1,c2,c3,c4,z1,z2,z3,z4";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpParams {
    /// Exposure coefficients on the log-odds scale.
    pub theta: Vec<f64>,
    /// Outcome coefficients; `beta[0]` is the outcome intercept.
    pub beta: Vec<f64>,
    pub psi_true: f64,
    pub sigma: f64,
}

impl Default for DgpParams {
    fn default() -> Self {
        default_params()
    }
}

impl DgpParams {
    pub fn validate(&self) -> Result<()> {
        if self.theta.len() != DESIGN_WIDTH || self.beta.len() != DESIGN_WIDTH {
            return Err(Error::dimension(format!(
                "theta and beta need {DESIGN_WIDTH} entries, got {} and {}",
                self.theta.len(),
                self.beta.len()
            )));
        }
        // sigma = 0 is accepted for noise-free checks.
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::domain(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if self.theta.iter().chain(&self.beta).any(|v| !v.is_finite()) || !self.psi_true.is_finite() {
            return Err(Error::domain("non-finite coefficient"));
        }
        Ok(())
    }
}

/// The simulation study's coefficients: effect 6, residual sd 20.
pub fn default_params() -> DgpParams {
    let ln = f64::ln;
    DgpParams {
        theta: vec![
            -0.5,
            ln(2.0),
            ln(2.5),
            ln(0.5),
            ln(1.5),
            ln(1.75),
            ln(1.5),
            ln(1.25),
            ln(1.25),
            ln(1.25),
            ln(1.25),
        ],
        beta: vec![120.0, 3.5, 2.5, -1.0, 5.0, 2.0, 2.5, 1.5, 1.5, 1.5, 1.0],
        psi_true: 6.0,
        sigma: 20.0,
    }
}

/// `[1, C1..C4, C1C2, C1C3, C1C4, C2C3, C2C4, C3C4]`.
pub fn expand_design(c: &[f64; N_CONFOUNDERS]) -> Result<[f64; DESIGN_WIDTH]> {
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain(format!("non-finite confounder value in {c:?}")));
    }
    Ok(expand_unchecked(c))
}

fn expand_unchecked(c: &[f64; N_CONFOUNDERS]) -> [f64; DESIGN_WIDTH] {
    [
        1.0,
        c[0],
        c[1],
        c[2],
        c[3],
        c[0] * c[1],
        c[0] * c[2],
        c[0] * c[3],
        c[1] * c[2],
        c[1] * c[3],
        c[2] * c[3],
    ]
}

/// One transformed row.
pub fn transform_row(c: &[f64; N_CONFOUNDERS]) -> [f64; N_CONFOUNDERS] {
    let [c1, c2, c3, c4] = *c;
    [
        (c1 / 2.0).exp(),
        c2 / (1.0 + c1.exp()) + 10.0,
        (c1 * c3 / 25.0 + 0.6).powi(3),
        (c2 * c4 + 20.0).powi(2),
    ]
}

/// Apply [`transform_row`] to every row of an `n x 4` matrix.
pub fn transform_confounders(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if c.ncols() != N_CONFOUNDERS {
        return Err(Error::dimension(format!("expected 4 columns, got {}", c.ncols())));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite confounder value"));
    }
    let mut z = DMatrix::zeros(c.nrows(), N_CONFOUNDERS);
    for i in 0..c.nrows() {
        let row = transform_row(&row4(c, i));
        for (j, v) in row.into_iter().enumerate() {
            z[(i, j)] = v;
        }
    }
    Ok(z)
}

fn row4(m: &DMatrix<f64>, i: usize) -> [f64; N_CONFOUNDERS] {
    [m[(i, 0)], m[(i, 1)], m[(i, 2)], m[(i, 3)]]
}

#[inline]
pub fn expit(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A simulated (or imported) cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<u8>,
    pub y: Vec<f64>,
    /// Raw confounders, `n x 4`.
    pub c: DMatrix<f64>,
    /// Transformed confounders, `n x 4`.
    pub z: DMatrix<f64>,
}

impl Dataset {
    pub fn new(x: Vec<u8>, y: Vec<f64>, c: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        let n = x.len();
        if n == 0 {
            return Err(Error::domain("dataset needs at least one row"));
        }
        if y.len() != n || c.nrows() != n || z.nrows() != n {
            return Err(Error::dimension("dataset columns differ in length"));
        }
        if c.ncols() != N_CONFOUNDERS || z.ncols() != N_CONFOUNDERS {
            return Err(Error::dimension("confounder matrices need 4 columns"));
        }
        if x.iter().any(|&v| v > 1) {
            return Err(Error::Data("exposure must be 0 or 1".into()));
        }
        Ok(Dataset { x, y, c, z })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Copy the given rows (with repetition) into a new dataset.
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: idx.iter().map(|&i| self.x[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            c: self.c.select_rows(idx),
            z: self.z.select_rows(idx),
        }
    }

    /// Write the comma-separated form with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{DATASET_HEADER}")?;
        for i in 0..self.len() {
            write!(w, "{:.16e},{}", self.y[i], self.x[i])?;
            for m in [&self.c, &self.z] {
                for j in 0..N_CONFOUNDERS {
                    write!(w, ",{:.16e}", m[(i, j)])?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Dataset> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
        if header.join(",") != DATASET_HEADER {
            return Err(Error::Data(format!("unexpected header {:?}", header.join(","))));
        }
        let (mut x, mut y, mut c, mut z) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            let parse = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Data(format!("row {}: bad value in column {}", line + 1, k + 1)))
            };
            y.push(parse(0)?);
            let xv = parse(1)?;
            if xv != 0.0 && xv != 1.0 {
                return Err(Error::Data(format!("row {}: exposure {xv} is not binary", line + 1)));
            }
            x.push(xv as u8);
            for k in 0..N_CONFOUNDERS {
                c.push(parse(2 + k)?);
            }
            for k in 0..N_CONFOUNDERS {
                z.push(parse(6 + k)?);
            }
        }
        let n = x.len();
        Dataset::new(
            x,
            y,
            DMatrix::from_row_slice(n, N_CONFOUNDERS, &c),
            DMatrix::from_row_slice(n, N_CONFOUNDERS, &z),
        )
    }
}

/// Draw `n` rows from the data-generating mechanism on stream `seed`.
///
/// Per row: four standard normals, one uniform for the exposure, one normal
/// for the outcome noise.
pub fn gen_trial(n: usize, params: &DgpParams, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::domain("n must be at least 1"));
    }
    params.validate()?;
    let mut rng = rng::substream(seed, &[rng::label::DATA]);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut c = DMatrix::zeros(n, N_CONFOUNDERS);
    let mut z = DMatrix::zeros(n, N_CONFOUNDERS);
    for i in 0..n {
        let mut row = [0.0; N_CONFOUNDERS];
        for v in row.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let design = expand_unchecked(&row);
        let p = expit(dot(&params.theta, &design));
        let xi = u8::from(rng.random::<f64>() < p);
        let eps: f64 = rng.sample(StandardNormal);
        let yi = dot(&params.beta, &design) + params.psi_true * f64::from(xi) + params.sigma * eps;
        for (j, v) in transform_row(&row).into_iter().enumerate() {
            c[(i, j)] = row[j];
            z[(i, j)] = v;
        }
        x.push(xi);
        y.push(yi);
    }
    Ok(Dataset { x, y, c, z })
}

/// Rows of [`expand_design`] for every row of `c`.
pub fn design_matrix(c: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(c.nrows(), DESIGN_WIDTH);
    for i in 0..c.nrows() {
        for (j, v) in expand_unchecked(&row4(c, i)).into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    out
}

/// True propensity `expit(theta . design)` for each row of `c`.
pub fn true_propensity(c: &DMatrix<f64>, params: &DgpParams) -> Vec<f64> {
    (0..c.nrows())
        .map(|i| expit(dot(&params.theta, &expand_unchecked(&row4(c, i)))))
        .collect()
}

/// True outcome mean under exposure level `x` for each row of `c`.
pub fn true_outcome(c: &DMatrix<f64>, x: u8, params: &DgpParams) -> Vec<f64> {
    (0..c.nrows())
        .map(|i| dot(&params.beta, &expand_unchecked(&row4(c, i))) + params.psi_true * f64::from(x))
        .collect()
}
