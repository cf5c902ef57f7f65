//! Sliding history/horizon windows, chronological split, normalization.

use std::sync::Arc;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::features::FeatureTimeline;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Window geometry in hours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub history: usize,
    pub horizon: usize,
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            history: 168,
            horizon: 24,
            stride: 24,
        }
    }
}

impl WindowSpec {
    /// Start hours of every window that fits in `total_hours`.
    pub fn starts(&self, total_hours: usize) -> Vec<usize> {
        let span = self.history + self.horizon;
        if total_hours < span || self.stride == 0 {
            return Vec::new();
        }
        (0..=total_hours - span).step_by(self.stride).collect()
    }
}

/// Normalization constants fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_min: Vec<f64>,
    pub target_max: Vec<f64>,
}

impl NormStats {
    fn target_span(&self, line: usize) -> f64 {
        let span = self.target_max[line] - self.target_min[line];
        if span > 0.0 {
            span
        } else {
            1.0
        }
    }

    pub fn normalize_target(&self, line: usize, y: f64) -> f64 {
        (y - self.target_min[line]) / self.target_span(line)
    }

    pub fn denormalize_target(&self, line: usize, y: f64) -> f64 {
        y * self.target_span(line) + self.target_min[line]
    }

    /// Applies [`NormStats::denormalize_target`] to every row of a
    /// `|E| × horizon` matrix.
    pub fn denormalize_rows(&self, m: &Matrix) -> Matrix {
        Matrix::from_fn(m.rows(), m.cols(), |r, c| self.denormalize_target(r, m[(r, c)]))
    }

    pub fn normalize_rows(&self, m: &Matrix) -> Matrix {
        Matrix::from_fn(m.rows(), m.cols(), |r, c| self.normalize_target(r, m[(r, c)]))
    }

    fn normalize_features(&self, x: &Matrix) -> Matrix {
        Matrix::from_fn(x.rows(), x.cols(), |r, c| {
            (x[(r, c)] - self.feature_mean[c]) / self.feature_std[c]
        })
    }
}

/// Windows over a shared normalized feature timeline.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    features: Arc<Vec<Matrix>>,
    /// `targets[line][hour]`, amperes.
    targets: Arc<Vec<Vec<f64>>>,
    starts: Vec<usize>,
    spec: WindowSpec,
    stats: Arc<NormStats>,
    origin: NaiveDateTime,
}

impl WindowedDataset {
    /// Builds a dataset from already-normalized features. Mostly useful for
    /// toy problems and tests.
    pub fn from_parts(
        features: Vec<Matrix>,
        targets: Vec<Vec<f64>>,
        starts: Vec<usize>,
        spec: WindowSpec,
        stats: NormStats,
        origin: NaiveDateTime,
    ) -> Result<Self> {
        let hours = features.len();
        if starts.iter().any(|s| s + spec.history + spec.horizon > hours) {
            return Err(Error::InvalidInput("window extends past the timeline".into()));
        }
        if targets.iter().any(|t| t.len() != hours) {
            return Err(Error::InvalidInput("targets and features cover different hours".into()));
        }
        Ok(WindowedDataset {
            features: Arc::new(features),
            targets: Arc::new(targets),
            starts,
            spec,
            stats: Arc::new(stats),
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn spec(&self) -> WindowSpec {
        self.spec
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    pub fn line_count(&self) -> usize {
        self.targets.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Matrix::cols)
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    /// Normalized features of the history of window `k`.
    pub fn history(&self, k: usize) -> &[Matrix] {
        let s = self.starts[k];
        &self.features[s..s + self.spec.history]
    }

    /// First hour of the forecast horizon of window `k`.
    pub fn horizon_start(&self, k: usize) -> usize {
        self.starts[k] + self.spec.history
    }

    pub fn horizon_start_time(&self, k: usize) -> NaiveDateTime {
        self.origin + chrono::Duration::hours(self.horizon_start(k) as i64)
    }

    /// Target ratings of window `k`, `|E| × horizon`, amperes.
    pub fn target(&self, k: usize) -> Matrix {
        let h0 = self.horizon_start(k);
        Matrix::from_fn(self.line_count(), self.spec.horizon, |e, t| self.targets[e][h0 + t])
    }

    pub fn target_normalized(&self, k: usize) -> Matrix {
        self.stats.normalize_rows(&self.target(k))
    }

    /// Windows `range`, sharing storage with `self`.
    pub fn subset(&self, range: std::ops::Range<usize>) -> WindowedDataset {
        WindowedDataset {
            starts: self.starts[range].to_vec(),
            ..self.clone()
        }
    }
}

/// Splits a timeline into chronological train/test window sets (4:1 by
/// window count), fitting normalization on the training windows only.
///
/// Feature means and standard deviations are taken over every history row
/// of every training window (hours shared by overlapping windows count once
/// per window). Targets are scaled per line to `[0, 1]` by the training
/// targets' min and max.
pub fn window_split(
    timeline: &FeatureTimeline,
    ratings: &[Vec<f64>],
    spec: WindowSpec,
) -> Result<(WindowedDataset, WindowedDataset)> {
    let hours = timeline.hours();
    let starts = spec.starts(hours);
    if starts.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{hours} hours yield {} window(s) of {}+{} hours; at least 2 are needed",
            starts.len(),
            spec.history,
            spec.horizon
        )));
    }
    if ratings.iter().any(|r| r.len() != hours) {
        return Err(Error::InvalidInput("ratings and features cover different hours".into()));
    }
    let n_train = (starts.len() * 4 / 5).clamp(1, starts.len() - 1);
    let train_starts = &starts[..n_train];

    let dim = timeline.rows[0].cols();
    let mut multiplicity = vec![0usize; hours];
    for &s in train_starts {
        for m in &mut multiplicity[s..s + spec.history] {
            *m += 1;
        }
    }
    let mut count = 0.0;
    let mut sum = vec![0.0; dim];
    for (t, &m) in multiplicity.iter().enumerate() {
        if m == 0 {
            continue;
        }
        let x = &timeline.rows[t];
        count += (m * x.rows()) as f64;
        for r in 0..x.rows() {
            for (s, v) in sum.iter_mut().zip(x.row(r)) {
                *s += m as f64 * v;
            }
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let mut var = vec![0.0; dim];
    for (t, &m) in multiplicity.iter().enumerate() {
        if m == 0 {
            continue;
        }
        let x = &timeline.rows[t];
        for r in 0..x.rows() {
            for ((acc, v), mu) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *acc += m as f64 * (v - mu) * (v - mu);
            }
        }
    }
    // constant columns (e.g. a season absent from training) are centred only
    let std: Vec<f64> = var
        .iter()
        .map(|v| {
            let s = (v / count).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        })
        .collect();

    let lines = ratings.len();
    let mut tmin = vec![f64::INFINITY; lines];
    let mut tmax = vec![f64::NEG_INFINITY; lines];
    for &s in train_starts {
        let h0 = s + spec.history;
        for e in 0..lines {
            for &y in &ratings[e][h0..h0 + spec.horizon] {
                tmin[e] = tmin[e].min(y);
                tmax[e] = tmax[e].max(y);
            }
        }
    }
    let stats = NormStats {
        feature_mean: mean,
        feature_std: std,
        target_min: tmin,
        target_max: tmax,
    };
    let features: Vec<Matrix> = timeline.rows.iter().map(|x| stats.normalize_features(x)).collect();

    let all = WindowedDataset::from_parts(features, ratings.to_vec(), starts.clone(), spec, stats, timeline.start)?;
    Ok((all.subset(0..n_train), all.subset(n_train..starts.len())))
}
