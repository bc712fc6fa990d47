use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::run::ResultRow;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slope {
    pub slope: f64,
    /// `None` with only two points.
    pub standard_error: Option<f64>,
    pub n_points: usize,
}

/// OLS slope of `ln y` on `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<Slope> {
    if x.len() != y.len() {
        return Err(Error::Dimension("x and y differ in length".into()));
    }
    if x.len() < 2 {
        return Err(Error::Degenerate("a slope needs at least two points".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Degenerate("log-log slope needs positive finite values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all x values coincide".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let standard_error = (lx.len() > 2).then(|| {
        let ssr: f64 = lx
            .iter()
            .zip(&ly)
            .map(|(a, b)| (b - my - slope * (a - mx)).powi(2))
            .sum();
        (ssr / (n - 2.0) / sxx).sqrt()
    });
    Ok(Slope {
        slope,
        standard_error,
        n_points: lx.len(),
    })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub app: String,
    pub estimator: String,
    pub metric: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub median: f64,
    pub mean: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeEntry {
    pub app: String,
    pub estimator: String,
    pub metric: String,
    pub slope: Option<Slope>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEntry {
    pub app: String,
    pub metric: String,
    /// `None` for the rate pooled over every K.
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub rate: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_rows: usize,
    pub cells: Vec<CellStats>,
    pub slopes: Vec<SlopeEntry>,
    pub rates: Vec<RateEntry>,
}

const SLOPE_METRICS: [&str; 2] = ["subopt", "pmse"];
const RATE_METRICS: [&str; 2] = ["coverage_hit", "pessimism_hit"];

pub fn summarize(rows: &[ResultRow]) -> Result<Summary> {
    if rows.is_empty() {
        return Err(Error::Config("results file has no rows".into()));
    }
    let mut groups: BTreeMap<(String, String, String), BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.app.clone(), r.estimator.clone(), r.metric.clone()))
            .or_default()
            .entry(r.k)
            .or_default()
            .push(r.value);
    }
    let mut cells = Vec::new();
    let mut slopes = Vec::new();
    let mut rates = Vec::new();
    for ((app, estimator, metric), by_k) in &groups {
        let mut ks = Vec::new();
        let mut meds = Vec::new();
        for (&k, vals) in by_k {
            let m = median(vals);
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            cells.push(CellStats {
                app: app.clone(),
                estimator: estimator.clone(),
                metric: metric.clone(),
                k,
                median: m,
                mean,
                n: vals.len(),
            });
            ks.push(k as f64);
            meds.push(m);
            if RATE_METRICS.contains(&metric.as_str()) {
                rates.push(RateEntry {
                    app: app.clone(),
                    metric: metric.clone(),
                    k: Some(k),
                    rate: mean,
                    n: vals.len(),
                });
            }
        }
        if SLOPE_METRICS.contains(&metric.as_str()) {
            let slope = match loglog_slope(&ks, &meds) {
                Ok(s) => Some(s),
                Err(e) => {
                    log::info!("no slope for {app}/{estimator}/{metric}: {e}");
                    None
                }
            };
            slopes.push(SlopeEntry {
                app: app.clone(),
                estimator: estimator.clone(),
                metric: metric.clone(),
                slope,
            });
        }
        if RATE_METRICS.contains(&metric.as_str()) {
            let all: Vec<f64> = by_k.values().flatten().copied().collect();
            rates.push(RateEntry {
                app: app.clone(),
                metric: metric.clone(),
                k: None,
                rate: all.iter().sum::<f64>() / all.len() as f64,
                n: all.len(),
            });
        }
    }
    Ok(Summary {
        n_rows: rows.len(),
        cells,
        slopes,
        rates,
    })
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_path(path)?;
    let rows = rd.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?;
    Ok(rows)
}

/// Writes `summary.json` and `plot_data.tsv` under `out`.
pub fn cmd_report(results: &Path, out: &Path) -> Result<Summary> {
    let summary = summarize(&read_results(results)?)?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(out.join("summary.json"))?), &summary)?;
    let mut tsv = BufWriter::new(File::create(out.join("plot_data.tsv"))?);
    writeln!(tsv, "app\testimator\tmetric\tK\tmedian\tmean\tn")?;
    for c in &summary.cells {
        writeln!(
            tsv,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            c.app, c.estimator, c.metric, c.k, c.median, c.mean, c.n
        )?;
    }
    tsv.flush()?;
    Ok(summary)
}
