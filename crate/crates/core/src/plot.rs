//! Line charts of a summary metric against sample size, one SVG per
//! scenario.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::harness::SUMMARY_HEADER;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Bias,
    Rmse,
}

impl Metric {
    pub fn column(self) -> &'static str {
        match self {
            Metric::Bias => "bias",
            Metric::Rmse => "rmse",
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bias" => Ok(Metric::Bias),
            "rmse" => Ok(Metric::Rmse),
            other => Err(Error::Config(format!("unknown metric {other:?}; expected bias or rmse"))),
        }
    }
}

/// One plotted point. `value` is the summary text, unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub scenario: String,
    pub estimator: String,
    pub n: usize,
    pub value: String,
}

/// Metric column of a summary file as plot points, in file order.
pub fn read_points<R: Read>(r: R, metric: Metric) -> Result<Vec<PlotPoint>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != SUMMARY_HEADER {
        return Err(Error::Data("file is not a summary table".into()));
    }
    let col = SUMMARY_HEADER.iter().position(|h| *h == metric.column()).expect("metric column");
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let n = rec[3].parse().map_err(|_| Error::Data(format!("bad sample size {:?}", &rec[3])))?;
        points.push(PlotPoint { scenario: rec[0].into(), estimator: rec[4].into(), n, value: rec[col].into() });
    }
    Ok(points)
}

/// Estimator series of one facet, each sorted by `n`; non-finite values are
/// left out of the drawing.
fn series<'a>(points: &[&'a PlotPoint]) -> Vec<(&'a str, Vec<(usize, f64)>)> {
    let mut out: Vec<(&str, Vec<(usize, f64)>)> = Vec::new();
    for p in points {
        let v: f64 = p.value.parse().unwrap_or(f64::NAN);
        if !v.is_finite() {
            continue;
        }
        match out.iter_mut().find(|(e, _)| *e == p.estimator) {
            Some((_, s)) => s.push((p.n, v)),
            None => out.push((&p.estimator, vec![(p.n, v)])),
        }
    }
    for (_, s) in &mut out {
        s.sort_by_key(|&(n, _)| n);
    }
    out
}

const COLORS: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#a6761d"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 130.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Self-contained SVG for one facet: log-scaled `n` on the x axis.
pub fn render_svg(title: &str, metric: Metric, points: &[&PlotPoint]) -> String {
    let lines = series(points);
    let ns: Vec<f64> = lines.iter().flat_map(|(_, s)| s.iter().map(|p| (p.0 as f64).ln())).collect();
    let vs: Vec<f64> = lines.iter().flat_map(|(_, s)| s.iter().map(|p| p.1)).collect();
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (xlo, xhi) = span(&ns);
    let (mut ylo, mut yhi) = span(&vs);
    if metric == Metric::Bias {
        ylo = ylo.min(0.0);
        yhi = yhi.max(0.0);
    }
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |n: usize| LEFT + ((n as f64).ln() - xlo) / (xhi - xlo) * pw;
    let sy = |v: f64| TOP + (yhi - v) / (yhi - ylo) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black" stroke-width="1"/>"#
    );
    if metric == Metric::Bias {
        let y0 = sy(0.0);
        let _ = writeln!(
            s,
            r#"<line x1="{LEFT}" y1="{y0:.2}" x2="{:.2}" y2="{y0:.2}" stroke="gray" stroke-dasharray="4 3"/>"#,
            LEFT + pw
        );
    }
    let mut ticks: Vec<usize> = lines.iter().flat_map(|(_, s)| s.iter().map(|p| p.0)).collect();
    ticks.sort_unstable();
    ticks.dedup();
    for n in ticks {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{n}</text>"#,
            sx(n),
            TOP + ph + 16.0
        );
    }
    for i in 0..=4 {
        let v = ylo + (yhi - ylo) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
            LEFT - 6.0,
            sy(v) + 4.0,
            format_tick(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">sample size (log scale)</text>"#,
        LEFT + pw / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        metric.column()
    );
    for (k, (name, pts)) in lines.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let coords: Vec<String> = pts.iter().map(|&(n, v)| format!("{:.2},{:.2}", sx(n), sy(v))).collect();
        let _ = writeln!(
            s,
            r#"<polyline data-estimator="{}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            escape(name),
            coords.join(" ")
        );
        let ly = TOP + 14.0 + 18.0 * k as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn format_tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Files written by [`plot_summary`].
#[derive(Debug, Clone)]
pub struct PlotOutput {
    pub svgs: Vec<PathBuf>,
    pub points_csv: PathBuf,
}

/// Write `{metric}_{scenario}.svg` per scenario and `{metric}_points.csv`
/// with the plotted values into `out_dir`.
pub fn plot_summary(summary: &Path, metric: Metric, out_dir: &Path) -> Result<PlotOutput> {
    let f = fs::File::open(summary).map_err(|e| Error::Config(format!("cannot read {}: {e}", summary.display())))?;
    let points = read_points(f, metric)?;
    fs::create_dir_all(out_dir)?;

    let mut facets: Vec<&str> = Vec::new();
    for p in &points {
        if !facets.contains(&p.scenario.as_str()) {
            facets.push(&p.scenario);
        }
    }
    let mut svgs = Vec::new();
    for facet in facets {
        let pts: Vec<&PlotPoint> = points.iter().filter(|p| p.scenario == facet).collect();
        let file: String =
            facet.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
        let path = out_dir.join(format!("{}_{file}.svg", metric.column()));
        fs::write(&path, render_svg(&format!("{facet}: {}", metric.column()), metric, &pts))?;
        svgs.push(path);
    }

    let points_csv = out_dir.join(format!("{}_points.csv", metric.column()));
    let mut w = csv::Writer::from_path(&points_csv)?;
    w.write_record(["scenario", "estimator", "n", "metric", "value"])?;
    for p in &points {
        w.write_record([p.scenario.as_str(), &p.estimator, &p.n.to_string(), metric.column(), &p.value])?;
    }
    w.flush()?;
    Ok(PlotOutput { svgs, points_csv })
}
