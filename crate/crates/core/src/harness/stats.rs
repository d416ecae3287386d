//! Aggregation of result rows and log-log slope fits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ResultRow;
use crate::error::{config, Error, Result};

/// Conjunction of `column=value` tests on result rows.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RowFilter {
    clauses: Vec<(String, String)>,
}

impl RowFilter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, column: &str, value: impl ToString) -> Self {
        self.clauses.push((column.to_string(), value.to_string()));
        self
    }

    /// Parses `learner=mm,instance=mm-lb`. An empty string matches all rows.
    pub fn parse(text: &str) -> Result<Self> {
        let mut f = Self::new();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| config(format!("filter clause '{part}' is not column=value")))?;
            let k = k.trim();
            if column_value(&dummy_row(), k).is_none() {
                return Err(config(format!("unknown filter column '{k}'")));
            }
            f = f.with(k, v.trim());
        }
        Ok(f)
    }

    pub fn matches(&self, row: &ResultRow) -> bool {
        self.clauses
            .iter()
            .all(|(k, v)| column_value(row, k).map_or(false, |x| &x == v))
    }
}

fn dummy_row() -> ResultRow {
    ResultRow {
        instance: String::new(),
        learner: String::new(),
        horizon: 0,
        num_states: 0,
        num_actions: 0,
        n_exp: 0,
        seed: 0,
        gap: 0.0,
        status: super::RunStatus::Ok,
        component: String::new(),
        wall_time_ms: 0.0,
    }
}

fn column_value(row: &ResultRow, column: &str) -> Option<String> {
    Some(match column {
        "instance" => row.instance.clone(),
        "learner" => row.learner.clone(),
        "H" => row.horizon.to_string(),
        "S" => row.num_states.to_string(),
        "A" => row.num_actions.to_string(),
        "n_exp" => row.n_exp.to_string(),
        "seed" => row.seed.to_string(),
        "component" => row.component.clone(),
        "status" => serde_json::to_value(row.status).ok()?.as_str()?.to_string(),
        _ => return None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum XAxis {
    #[serde(rename = "n_exp")]
    NExp,
    #[serde(rename = "H")]
    Horizon,
}

impl std::str::FromStr for XAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n_exp" => Ok(XAxis::NExp),
            "H" => Ok(XAxis::Horizon),
            _ => Err(config(format!("x axis must be n_exp or H, got '{s}'"))),
        }
    }
}

impl XAxis {
    fn of(self, row: &ResultRow) -> usize {
        match self {
            XAxis::NExp => row.n_exp,
            XAxis::Horizon => row.horizon,
        }
    }
}

/// Gap statistics at one x value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointSummary {
    pub x: usize,
    pub n: usize,
    pub failures: usize,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

impl PointSummary {
    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        self.std / (self.n as f64).sqrt()
    }
}

/// Per-x mean, median and standard deviation of the gap over successful
/// rows matching `filter`.
pub fn aggregate(rows: &[ResultRow], filter: &RowFilter, x: XAxis) -> Vec<PointSummary> {
    let mut groups: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for row in rows.iter().filter(|r| filter.matches(r)) {
        let entry = groups.entry(x.of(row)).or_default();
        if row.is_ok() {
            entry.0.push(row.gap);
        } else {
            entry.1 += 1;
        }
    }
    groups
        .into_iter()
        .map(|(x, (mut gaps, failures))| {
            let n = gaps.len();
            let mean = if n == 0 {
                f64::NAN
            } else {
                gaps.iter().sum::<f64>() / n as f64
            };
            let var = if n < 2 {
                0.0
            } else {
                gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            };
            gaps.sort_by(f64::total_cmp);
            let median = match n {
                0 => f64::NAN,
                _ if n % 2 == 1 => gaps[n / 2],
                _ => 0.5 * (gaps[n / 2 - 1] + gaps[n / 2]),
            };
            PointSummary {
                x,
                n,
                failures,
                mean,
                median,
                std: var.sqrt(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub min_points: usize,
    pub min_seeds: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            min_points: 3,
            min_seeds: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub points: Vec<PointSummary>,
}

/// Ordinary least squares of `log(mean gap)` on `log(x)`; the standard error
/// comes from the residuals.
pub fn fit_slope(
    rows: &[ResultRow],
    filter: &RowFilter,
    x: XAxis,
    opts: FitOptions,
) -> Result<SlopeFit> {
    let points = aggregate(rows, filter, x);
    if points.len() < opts.min_points.max(3) {
        return Err(Error::Insufficient(format!(
            "{} grid points after filtering, need {}",
            points.len(),
            opts.min_points.max(3)
        )));
    }
    if let Some(p) = points.iter().find(|p| p.n < opts.min_seeds) {
        return Err(Error::Insufficient(format!(
            "x = {} has {} successful seeds, need {}",
            p.x, p.n, opts.min_seeds
        )));
    }
    if let Some(p) = points.iter().find(|p| !(p.mean > 0.0)) {
        return Err(Error::Insufficient(format!(
            "mean gap {} at x = {} has no logarithm",
            p.mean, p.x
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.x as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean.ln()).collect();
    let (slope, intercept, stderr) = ols(&xs, &ys);
    Ok(SlopeFit {
        slope,
        intercept,
        stderr,
        points,
    })
}

/// `(slope, intercept, stderr of slope)`.
pub fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let stderr = if xs.len() > 2 {
        (ssr / (k - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    (slope, intercept, stderr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::RunStatus;

    fn synthetic(f: impl Fn(f64) -> f64) -> Vec<ResultRow> {
        let mut rows = Vec::new();
        for n in [64usize, 256, 1024, 4096] {
            for seed in 0..100 {
                rows.push(ResultRow {
                    n_exp: n,
                    seed,
                    gap: f(n as f64),
                    learner: "mm".into(),
                    ..dummy_row()
                });
            }
        }
        rows
    }

    #[test]
    fn exact_power_laws() {
        let f = RowFilter::new();
        let fit = fit_slope(
            &synthetic(|n| 3.0 / n),
            &f,
            XAxis::NExp,
            FitOptions::default(),
        )
        .unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-9);
        let fit = fit_slope(
            &synthetic(|n| 0.7 / n.sqrt()),
            &f,
            XAxis::NExp,
            FitOptions::default(),
        )
        .unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-9);
        assert!(fit.stderr < 1e-9);
    }

    #[test]
    fn insufficient_points() {
        let rows: Vec<_> = synthetic(|n| 1.0 / n)
            .into_iter()
            .filter(|r| r.n_exp < 1024)
            .collect();
        assert!(matches!(
            fit_slope(&rows, &RowFilter::new(), XAxis::NExp, FitOptions::default()),
            Err(Error::Insufficient(_))
        ));
        let few: Vec<_> = synthetic(|n| 1.0 / n)
            .into_iter()
            .filter(|r| r.seed < 10)
            .collect();
        assert!(fit_slope(&few, &RowFilter::new(), XAxis::NExp, FitOptions::default()).is_err());
    }

    #[test]
    fn filters_and_failures() {
        let mut rows = synthetic(|n| 1.0 / n);
        rows[0].status = RunStatus::SolverFailure;
        rows[0].gap = f64::NAN;
        let pts = aggregate(&rows, &RowFilter::parse("learner=mm").unwrap(), XAxis::NExp);
        assert_eq!(pts[0].failures, 1);
        assert_eq!(pts[0].n, 99);
        assert!(aggregate(&rows, &RowFilter::parse("learner=bc").unwrap(), XAxis::NExp).is_empty());
        assert!(RowFilter::parse("nope=1").is_err());
        assert!(RowFilter::parse("learner").is_err());
    }

    #[test]
    fn median_is_reported() {
        let rows: Vec<_> = [1.0, 5.0, 2.0]
            .iter()
            .enumerate()
            .map(|(i, &g)| ResultRow {
                n_exp: 4,
                seed: i as u64,
                gap: g,
                ..dummy_row()
            })
            .collect();
        let p = &aggregate(&rows, &RowFilter::new(), XAxis::NExp)[0];
        assert_eq!(p.median, 2.0);
        assert!((p.mean - 8.0 / 3.0).abs() < 1e-15);
    }
}
