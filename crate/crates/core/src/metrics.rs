//! Probabilistic interval metrics.
//!
//! All width-like scores are divided by each line's target range over the
//! evaluated set (max − min) and multiplied by 100, then averaged over
//! lines. With the default 0.1/0.9 quantiles the nominal coverage is 80%
//! and the interval score uses `α = 0.2`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::pinball_value;
use crate::error::{Error, Result};
use crate::graph::LineId;
use crate::tensor::Matrix;

/// Scores of one set of intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalScores {
    /// Share of covered targets, percent.
    pub picp: f64,
    /// `|picp − nominal|`.
    pub ace: f64,
    pub pinaw: f64,
    pub interval_score: f64,
    pub qs: f64,
}

/// Nominal coverage (percent) implied by a quantile pair.
pub fn nominal_coverage(quantiles: [f64; 2]) -> f64 {
    (quantiles[1] - quantiles[0]) * 100.0
}

/// Winkler interval score of one target at miscoverage `alpha`.
pub fn winkler(y: f64, lower: f64, upper: f64, alpha: f64) -> f64 {
    let mut s = upper - lower;
    if y < lower {
        s += 2.0 / alpha * (lower - y);
    } else if y > upper {
        s += 2.0 / alpha * (y - upper);
    }
    s
}

fn check_lengths(y: &[f64], lower: &[f64], upper: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::InsufficientData("no targets to score".into()));
    }
    if lower.len() != y.len() || upper.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "{} targets, {} lower and {} upper bounds",
            y.len(),
            lower.len(),
            upper.len()
        )));
    }
    Ok(())
}

/// Scores one series against intervals, normalizing by `range`.
pub fn score_series(
    y: &[f64],
    lower: &[f64],
    upper: &[f64],
    range: f64,
    quantiles: [f64; 2],
) -> Result<IntervalScores> {
    check_lengths(y, lower, upper)?;
    let range = if range > 0.0 { range } else { 1.0 };
    let n = y.len() as f64;
    let alpha = 1.0 - (quantiles[1] - quantiles[0]);
    let (mut covered, mut width, mut is, mut qs) = (0usize, 0.0, 0.0, 0.0);
    for ((&y, &l), &u) in y.iter().zip(lower).zip(upper) {
        if l <= y && y <= u {
            covered += 1;
        }
        width += u - l;
        is += winkler(y, l, u, alpha);
        qs += 0.5 * (pinball_value(l, y, quantiles[0]) + pinball_value(u, y, quantiles[1]));
    }
    let picp = covered as f64 / n * 100.0;
    Ok(IntervalScores {
        picp,
        ace: (picp - nominal_coverage(quantiles)).abs(),
        pinaw: width / n / range * 100.0,
        interval_score: is / n / range * 100.0,
        qs: qs / n / range * 100.0,
    })
}

/// Per-line scores over a set of forecast windows, plus their line average.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowScores {
    pub overall: IntervalScores,
    pub per_line: Vec<IntervalScores>,
    pub ranges: Vec<f64>,
}

/// Scores `|E|×horizon` forecasts of many windows. Each line is normalized
/// by its own target range across all windows.
pub fn score_windows(
    targets: &[Matrix],
    lower: &[Matrix],
    upper: &[Matrix],
    quantiles: [f64; 2],
) -> Result<WindowScores> {
    let first = targets
        .first()
        .ok_or_else(|| Error::InsufficientData("no windows to score".into()))?;
    let shape = first.shape();
    if lower.len() != targets.len() || upper.len() != targets.len() {
        return Err(Error::InvalidInput("forecast and target window counts differ".into()));
    }
    if targets.iter().chain(lower).chain(upper).any(|m| m.shape() != shape) {
        return Err(Error::InvalidInput("forecast windows have inconsistent shapes".into()));
    }
    let gather = |set: &[Matrix], line: usize| -> Vec<f64> { set.iter().flat_map(|m| m.row(line).to_vec()).collect() };
    let mut per_line = Vec::with_capacity(shape.0);
    let mut ranges = Vec::with_capacity(shape.0);
    for line in 0..shape.0 {
        let y = gather(targets, line);
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ranges.push(hi - lo);
        per_line.push(score_series(
            &y,
            &gather(lower, line),
            &gather(upper, line),
            hi - lo,
            quantiles,
        )?);
    }
    let mean = |f: fn(&IntervalScores) -> f64| per_line.iter().map(f).sum::<f64>() / per_line.len() as f64;
    let picp = mean(|s| s.picp);
    let overall = IntervalScores {
        picp,
        ace: (picp - nominal_coverage(quantiles)).abs(),
        pinaw: mean(|s| s.pinaw),
        interval_score: mean(|s| s.interval_score),
        qs: mean(|s| s.qs),
    };
    Ok(WindowScores {
        overall,
        per_line,
        ranges,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineScore {
    pub line_id: LineId,
    pub qs: f64,
    pub picp: f64,
    pub range_a: f64,
}

/// Evaluation summary of one model on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub normalization: String,
    pub nominal_coverage: f64,
    pub picp: f64,
    pub ace: f64,
    pub pinaw: f64,
    pub interval_score: f64,
    pub qs: f64,
    /// Percentage of (line, hour) pairs whose raw bounds were crossed.
    pub crossing_rate: f64,
    pub windows: usize,
    pub lines: usize,
    pub params: usize,
    pub per_line: Vec<LineScore>,
}

pub const NORMALIZATION_NOTE: &str =
    "widths and scores divided by each line's test target range (max - min), x100, averaged over lines";

impl MetricReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        crate::datagen::io::write_json(path, self)
    }

    /// Summary row followed by the per-line table.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "scope",
            "method",
            "picp",
            "ace",
            "pinaw",
            "is",
            "qs",
            "crossing_rate",
            "range_a",
        ])?;
        w.write_record([
            "all".to_string(),
            self.method.clone(),
            self.picp.to_string(),
            self.ace.to_string(),
            self.pinaw.to_string(),
            self.interval_score.to_string(),
            self.qs.to_string(),
            self.crossing_rate.to_string(),
            String::new(),
        ])?;
        for l in &self.per_line {
            w.write_record([
                format!("line:{}", l.line_id.0),
                self.method.clone(),
                l.picp.to_string(),
                String::new(),
                String::new(),
                String::new(),
                l.qs.to_string(),
                String::new(),
                l.range_a.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One row of a model comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub ace: f64,
    pub pinaw: f64,
    pub is: f64,
    pub qs: f64,
    pub params: usize,
}

impl From<&MetricReport> for BenchRow {
    fn from(r: &MetricReport) -> Self {
        BenchRow {
            method: r.method.clone(),
            ace: r.ace,
            pinaw: r.pinaw,
            is: r.interval_score,
            qs: r.qs,
            params: r.params,
        }
    }
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_bench_csv(path: &Path) -> Result<Vec<BenchRow>> {
    csv::Reader::from_path(path)?
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const Q: [f64; 2] = [0.1, 0.9];

    #[test]
    fn hand_example() {
        let y = [1.0, 2.0, 3.0, 4.0];
        let l = [0.0, 2.0, 2.0, 5.0];
        let u = [2.0, 3.0, 3.0, 6.0];
        let s = score_series(&y, &l, &u, 3.0, Q).unwrap();
        assert_eq!(s.picp, 75.0);
        assert!((s.ace - 5.0).abs() < 1e-12);
        assert!((s.pinaw - 125.0 / 3.0).abs() < 1e-12);
        assert!((s.interval_score - 125.0).abs() < 1e-12);
        assert!((s.qs - 6.25).abs() < 1e-12);
    }

    #[test]
    fn exact_intervals_score_zero() {
        let y = [3.0, 1.0, 2.0];
        let s = score_series(&y, &y, &y, 2.0, Q).unwrap();
        assert_eq!(s.picp, 100.0);
        assert_eq!((s.pinaw, s.interval_score, s.qs), (0.0, 0.0, 0.0));
    }

    #[test]
    fn data_range_interval() {
        let y = [3.0, 1.0, 2.0, 5.0];
        let s = score_series(&y, &[1.0; 4], &[5.0; 4], 4.0, Q).unwrap();
        assert_eq!(s.picp, 100.0);
        assert!((s.ace - 20.0).abs() < 1e-12);
        assert!((s.pinaw - 100.0).abs() < 1e-12);
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        assert!(matches!(
            score_series(&[], &[], &[], 1.0, Q),
            Err(Error::InsufficientData(_))
        ));
        assert!(score_series(&[1.0], &[0.0, 1.0], &[2.0], 1.0, Q).is_err());
        assert!(score_windows(&[], &[], &[], Q).is_err());
    }

    #[test]
    fn windows_average_over_lines() {
        let t = Matrix::from_vec(2, 2, vec![1.0, 2.0, 10.0, 30.0]).unwrap();
        let l = Matrix::from_vec(2, 2, vec![0.0, 2.5, 10.0, 30.0]).unwrap();
        let u = Matrix::from_vec(2, 2, vec![2.0, 3.0, 10.0, 30.0]).unwrap();
        let w = score_windows(&[t], &[l], &[u], Q).unwrap();
        assert_eq!(w.ranges, vec![1.0, 20.0]);
        assert_eq!(w.per_line[0].picp, 50.0);
        assert_eq!(w.per_line[1].picp, 100.0);
        assert_eq!(w.overall.picp, 75.0);
        assert!((w.overall.pinaw - (1.25 / 1.0 * 100.0) / 2.0).abs() < 1e-12);
    }
}
