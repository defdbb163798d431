use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::nuisance::{CovariateSet, FitMode};

pub const RESULTS_HEADER: [&str; 11] =
    ["scenario", "covariates", "fit_mode", "n", "rep", "estimator", "psi_hat", "se", "ci_lo", "ci_hi", "status"];
pub const SUMMARY_HEADER: [&str; 11] = [
    "scenario",
    "covariates",
    "fit_mode",
    "n",
    "estimator",
    "n_reps",
    "bias",
    "mse",
    "rmse",
    "coverage",
    "median_ci_width",
];

pub const STATUS_OK: &str = "ok";

/// `(scenario, covariates, fit_mode, n)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellKey {
    pub scenario: String,
    pub covariates: CovariateSet,
    pub fit_mode: FitMode,
    pub n: usize,
}

/// One estimator on one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub cell: CellKey,
    pub rep: usize,
    pub estimator: EstimatorKind,
    pub psi_hat: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }

    pub fn failed(cell: CellKey, rep: usize, estimator: EstimatorKind, psi_hat: f64, reason: &str) -> Self {
        let reason: String = reason.chars().map(|c| if c == '\n' || c == '\r' { ' ' } else { c }).collect();
        ResultRow {
            cell,
            rep,
            estimator,
            psi_hat,
            se: f64::NAN,
            ci_lo: f64::NAN,
            ci_hi: f64::NAN,
            status: format!("failed: {reason}"),
        }
    }
}

/// Shortest round-trip text for a float.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_results_header<W: Write>(w: &mut csv::Writer<W>) -> Result<()> {
    w.write_record(RESULTS_HEADER)?;
    Ok(())
}

pub fn write_result_row<W: Write>(w: &mut csv::Writer<W>, r: &ResultRow) -> Result<()> {
    w.write_record([
        r.cell.scenario.clone(),
        r.cell.covariates.to_string(),
        r.cell.fit_mode.to_string(),
        r.cell.n.to_string(),
        r.rep.to_string(),
        r.estimator.to_string(),
        fmt_f64(r.psi_hat),
        fmt_f64(r.se),
        fmt_f64(r.ci_lo),
        fmt_f64(r.ci_hi),
        r.status.clone(),
    ])?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: u64) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.trim()
        .parse()
        .map_err(|_| Error::Data(format!("line {line}: cannot parse {} from {raw:?}", RESULTS_HEADER[i])))
}

/// Read a results file. Records after the first malformed one are dropped
/// when `tolerate_tail` is set, which is how a partially written file from an
/// interrupted run is recovered.
pub fn read_results<R: Read>(r: R, tolerate_tail: bool) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != RESULTS_HEADER {
        return Err(Error::Data(format!("unexpected results header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let parsed = rec.map_err(Error::from).and_then(|rec| {
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != RESULTS_HEADER.len() {
                return Err(Error::Data(format!("line {line}: expected {} fields", RESULTS_HEADER.len())));
            }
            Ok(ResultRow {
                cell: CellKey {
                    scenario: rec[0].to_string(),
                    covariates: parse_field(&rec, 1, line)?,
                    fit_mode: parse_field(&rec, 2, line)?,
                    n: parse_field(&rec, 3, line)?,
                },
                rep: parse_field(&rec, 4, line)?,
                estimator: parse_field(&rec, 5, line)?,
                psi_hat: parse_field(&rec, 6, line)?,
                se: parse_field(&rec, 7, line)?,
                ci_lo: parse_field(&rec, 8, line)?,
                ci_hi: parse_field(&rec, 9, line)?,
                status: rec[10].to_string(),
            })
        });
        match parsed {
            Ok(row) => rows.push(row),
            Err(e) if tolerate_tail => {
                log::warn!("ignoring unreadable tail of results file: {e}");
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub cell: CellKey,
    pub estimator: EstimatorKind,
    pub n_reps: usize,
    pub bias: f64,
    pub mse: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub median_ci_width: f64,
}

/// Lower median: the `floor((m - 1) / 2)`-th order statistic.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

/// Metrics over one cell's estimates and intervals.
pub fn cell_metrics(estimates: &[f64], intervals: &[(f64, f64)], psi_true: f64) -> Option<(f64, f64, f64, f64, f64)> {
    if estimates.is_empty() {
        return None;
    }
    let m = estimates.len() as f64;
    let bias = estimates.iter().sum::<f64>() / m - psi_true;
    let mse = estimates.iter().map(|e| (e - psi_true).powi(2)).sum::<f64>() / m;
    let covered = intervals.iter().filter(|(lo, hi)| *lo <= psi_true && psi_true <= *hi).count();
    let coverage = covered as f64 / intervals.len().max(1) as f64;
    let widths: Vec<f64> = intervals.iter().map(|(lo, hi)| hi - lo).collect();
    Some((bias, mse, mse.sqrt(), coverage, lower_median(&widths).unwrap_or(f64::NAN)))
}

/// One summary row per `(cell, estimator)` in order of first appearance.
/// Failed rows are excluded; a cell with no completed replicate yields a row
/// with `n_reps = 0` and NaN metrics.
pub fn summarize<F: Fn(&CellKey) -> f64>(rows: &[ResultRow], psi_true: F) -> Vec<SummaryRow> {
    let mut order: Vec<(CellKey, EstimatorKind)> = Vec::new();
    let mut groups: HashMap<(CellKey, EstimatorKind), Vec<&ResultRow>> = HashMap::new();
    for r in rows {
        let key = (r.cell.clone(), r.estimator);
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let ok: Vec<&ResultRow> = groups[&key].iter().copied().filter(|r| r.is_ok()).collect();
            let psi = psi_true(&key.0);
            let est: Vec<f64> = ok.iter().map(|r| r.psi_hat).collect();
            let ci: Vec<(f64, f64)> = ok.iter().map(|r| (r.ci_lo, r.ci_hi)).collect();
            let (bias, mse, rmse, coverage, width) = cell_metrics(&est, &ci, psi).unwrap_or_else(|| {
                log::warn!("{} n={} {}: no completed replicates", key.0.scenario, key.0.n, key.1);
                (f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN)
            });
            SummaryRow {
                cell: key.0,
                estimator: key.1,
                n_reps: ok.len(),
                bias,
                mse,
                rmse,
                coverage,
                median_ci_width: width,
            }
        })
        .collect()
}

pub fn write_summary<W: Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(SUMMARY_HEADER)?;
    for s in rows {
        w.write_record([
            s.cell.scenario.clone(),
            s.cell.covariates.to_string(),
            s.cell.fit_mode.to_string(),
            s.cell.n.to_string(),
            s.estimator.to_string(),
            s.n_reps.to_string(),
            fmt_f64(s.bias),
            fmt_f64(s.mse),
            fmt_f64(s.rmse),
            fmt_f64(s.coverage),
            fmt_f64(s.median_ci_width),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell() -> CellKey {
        CellKey { scenario: "s".into(), covariates: CovariateSet::Correct, fit_mode: FitMode::Parametric, n: 10 }
    }

    fn row(rep: usize, psi: f64, ci: (f64, f64)) -> ResultRow {
        ResultRow {
            cell: cell(),
            rep,
            estimator: EstimatorKind::Gcomp,
            psi_hat: psi,
            se: 1.0,
            ci_lo: ci.0,
            ci_hi: ci.1,
            status: STATUS_OK.into(),
        }
    }

    #[test]
    fn hand_metrics() {
        let s = summarize(&[row(0, 7.0, (5.0, 7.0)), row(1, 5.0, (8.0, 9.0))], |_| 6.0);
        assert_eq!(s.len(), 1);
        let s = &s[0];
        assert_eq!((s.bias, s.mse, s.rmse, s.coverage), (0.0, 1.0, 1.0, 0.5));
        assert_eq!(s.median_ci_width, 1.0);
        assert_eq!(s.n_reps, 2);
    }

    #[test]
    fn exact_estimates() {
        let s = summarize(&[row(0, 6.0, (5.0, 7.0)), row(1, 6.0, (4.0, 8.0)), row(2, 6.0, (5.5, 6.5))], |_| 6.0);
        assert_eq!((s[0].bias, s[0].mse, s[0].coverage), (0.0, 0.0, 1.0));
        assert_eq!(s[0].median_ci_width, 2.0);
    }

    #[test]
    fn failures_are_excluded_and_empty_cells_kept() {
        let mut bad = row(1, f64::NAN, (f64::NAN, f64::NAN));
        bad.status = "failed: x".into();
        let s = summarize(&[row(0, 7.0, (5.0, 7.0)), bad.clone()], |_| 6.0);
        assert_eq!(s[0].n_reps, 1);
        assert_eq!(s[0].bias, 1.0);
        let s = summarize(&[bad], |_| 6.0);
        assert_eq!(s[0].n_reps, 0);
        assert!(s[0].bias.is_nan());
    }

    #[test]
    fn lower_median_convention() {
        assert_eq!(lower_median(&[4.0, 1.0, 3.0, 2.0]), Some(2.0));
        assert_eq!(lower_median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(lower_median(&[]), None);
    }

    #[test]
    fn results_round_trip() {
        let mut bad = ResultRow::failed(cell(), 1, EstimatorKind::Tmle, 3.5, "bracket, failed\nbadly");
        bad.cell.scenario = "other".into();
        let rows = vec![row(0, 6.25, (1.0 / 3.0, 1e-300)), bad];
        let mut w = csv::Writer::from_writer(Vec::new());
        write_results_header(&mut w).unwrap();
        for r in &rows {
            write_result_row(&mut w, r).unwrap();
        }
        let bytes = w.into_inner().unwrap();
        let back = read_results(&bytes[..], false).unwrap();
        assert_eq!(back[0], rows[0]);
        assert_eq!(back[1].status, "failed: bracket, failed badly");
        assert!(back[1].se.is_nan());
    }

    #[test]
    fn truncated_tail_is_dropped() {
        let text = "scenario,covariates,fit_mode,n,rep,estimator,psi_hat,se,ci_lo,ci_hi,status\n\
                    s,correct,parametric,10,0,ipw,6.0,1.0,4.0,8.0,ok\n\
                    s,correct,parametric,10,0,gc";
        assert_eq!(read_results(text.as_bytes(), true).unwrap().len(), 1);
        assert!(read_results(text.as_bytes(), false).is_err());
    }
}
