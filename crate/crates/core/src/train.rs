//! Pinball-loss training, evaluation and model comparison.

use std::path::Path;

use chrono::NaiveDateTime;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{pinball_value, Tape, Var};
use crate::datagen::WindowedDataset;
use crate::error::{shape_err, Error, Result};
use crate::exec::{worker_threads, Execution};
use crate::graph::{LineGraphIndex, LineId};
use crate::metrics::{nominal_coverage, score_windows, LineScore, MetricReport, NORMALIZATION_NOTE};
use crate::model::{operator_for, order_bounds, Model, ModelConfig, ModelDims, QuantileVars, Variant};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Falls back to [`default_batch_size`] of the variant.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub clip_norm: f64,
    /// Trailing share of the training windows held out for checkpoint
    /// selection.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 1e-3,
            weight_decay: 1e-3,
            batch_size: None,
            seed: 0,
            clip_norm: 5.0,
            val_fraction: 0.1,
        }
    }
}

pub fn default_batch_size(variant: Variant) -> usize {
    match variant {
        Variant::DLgclstm => 128,
        Variant::Lstm | Variant::Lgclstm => 64,
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.clip_norm];
        if self.epochs == 0 || self.batch_size == Some(0) || positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput(
                "epochs, batch size, learning rate and clip norm must be positive".into(),
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidInput("weight decay must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidInput("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn batch_size_for(&self, variant: Variant) -> usize {
        self.batch_size.unwrap_or_else(|| default_batch_size(variant))
    }
}

/// Sum of pinball terms over both bounds, every line and every horizon
/// step.
pub fn total_loss(tape: &mut Tape, q: QuantileVars, target: Var, quantiles: [f64; 2]) -> Result<Var> {
    let lower = tape.pinball(q.lower, target, quantiles[0])?;
    let upper = tape.pinball(q.upper, target, quantiles[1])?;
    let lower = tape.sum(lower)?;
    let upper = tape.sum(upper)?;
    tape.add(lower, upper)
}

/// [`total_loss`] on plain matrices.
pub fn total_loss_value(lower: &Matrix, upper: &Matrix, target: &Matrix, quantiles: [f64; 2]) -> Result<f64> {
    if lower.shape() != target.shape() || upper.shape() != target.shape() {
        return shape_err(
            "total_loss",
            format!(
                "{:?}/{:?} bounds for {:?} targets",
                lower.shape(),
                upper.shape(),
                target.shape()
            ),
        );
    }
    Ok(lower
        .as_slice()
        .iter()
        .zip(upper.as_slice())
        .zip(target.as_slice())
        .map(|((&l, &u), &y)| pinball_value(l, y, quantiles[0]) + pinball_value(u, y, quantiles[1]))
        .sum())
}

/// Decoupled-weight-decay Adam.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamW {
    pub fn new(params: &[Matrix], learning_rate: f64, weight_decay: f64) -> Self {
        let zeros = || params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        AdamW {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (lr, wd) = (self.learning_rate, self.weight_decay);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let slots = p.as_mut_slice().iter_mut().zip(g.as_slice());
            for ((p, &g), (m, v)) in slots.zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice())) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let update = (*m / c1) / ((*v / c2).sqrt() + self.eps);
                *p -= lr * (update + wd * *p);
            }
        }
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Matrix::frobenius_sq).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.scale_in_place(s));
    }
    norm
}

fn sample_loss_and_grad(model: &Model, data: &WindowedDataset, k: usize) -> Result<(f64, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);
    let q = model.forward(&mut tape, &vars, data.history(k))?;
    let y = tape.constant(data.target_normalized(k));
    let loss = total_loss(&mut tape, q, y, model.config().quantiles)?;
    let value = tape.scalar(loss);
    Ok((value, tape.backward(loss)?.take_all(&vars)))
}

/// Mean loss and mean gradient over the windows `indices`.
///
/// Per-window gradients are computed independently (in parallel when
/// enabled) and summed in index order, so the result does not depend on
/// the execution mode.
pub fn batch_gradient(
    model: &Model,
    data: &WindowedDataset,
    indices: &[usize],
    exec: Execution,
) -> Result<(f64, Vec<Matrix>)> {
    if indices.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    let mut acc: Vec<Matrix> = model
        .params()
        .iter()
        .map(|p| Matrix::zeros(p.rows(), p.cols()))
        .collect();
    let mut loss = 0.0;
    let chunk = if exec.is_parallel() { 2 * worker_threads() } else { 1 };
    for part in indices.chunks(chunk.max(1)) {
        let results = exec.try_map(part.len(), |i| sample_loss_and_grad(model, data, part[i]))?;
        for (l, grads) in results {
            loss += l;
            for (a, g) in acc.iter_mut().zip(&grads) {
                a.add_assign(g);
            }
        }
    }
    let scale = 1.0 / indices.len() as f64;
    acc.iter_mut().for_each(|g| g.scale_in_place(scale));
    Ok((loss * scale, acc))
}

/// Mean [`total_loss`] over `indices` without gradients.
pub fn mean_loss(model: &Model, data: &WindowedDataset, indices: &[usize], exec: Execution) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::InsufficientData("no windows to evaluate".into()));
    }
    let losses = exec.try_map(indices.len(), |i| {
        let k = indices[i];
        let (lower, upper) = model.predict(data.history(k))?;
        total_loss_value(&lower, &upper, &data.target_normalized(k), model.config().quantiles)
    })?;
    Ok(losses.iter().sum::<f64>() / indices.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Largest pre-clipping gradient norm seen during the epoch.
    pub max_grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub model: Model,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train_windows: usize,
    pub val_windows: usize,
}

/// Number of trailing windows held out for validation.
pub fn validation_windows(n: usize, fraction: f64) -> usize {
    if n < 2 || fraction <= 0.0 {
        return 0;
    }
    ((n as f64 * fraction).ceil() as usize).clamp(1, n - 1)
}

/// Trains `model` on `data`, returning the best-by-validation parameters.
///
/// Every epoch visits the training windows in an order drawn from a
/// generator seeded by `cfg.seed`. Without validation windows the training
/// loss selects the checkpoint.
pub fn train(
    mut model: Model,
    data: &WindowedDataset,
    cfg: &TrainConfig,
    exec: Execution,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData("training set is empty".into()));
    }
    let n_val = validation_windows(data.len(), cfg.val_fraction);
    let n_fit = data.len() - n_val;
    let fit: Vec<usize> = (0..n_fit).collect();
    let val: Vec<usize> = (n_fit..data.len()).collect();
    let batch = cfg.batch_size_for(model.config().variant);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = AdamW::new(model.params(), cfg.learning_rate, cfg.weight_decay);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0, model.params().to_vec());

    for epoch in 1..=cfg.epochs {
        let mut order = fit.clone();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut max_norm) = (0.0, 0.0f64);
        for (b, idx) in order.chunks(batch).enumerate() {
            let (loss, mut grads) = batch_gradient(&model, data, idx, exec).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Diverged {
                    epoch,
                    batch: b,
                    loss: f64::NAN,
                },
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b, loss });
            }
            loss_sum += loss * idx.len() as f64;
            max_norm = max_norm.max(clip_global_norm(&mut grads, cfg.clip_norm));
            opt.step(model.params_mut(), &grads);
        }
        let train_loss = loss_sum / n_fit as f64;
        let val_loss = if val.is_empty() {
            mean_loss(&model, data, &fit, exec)?
        } else {
            mean_loss(&model, data, &val, exec)?
        };
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: 0,
                loss: val_loss,
            });
        }
        if val_loss < best.0 {
            best = (val_loss, epoch, model.params().to_vec());
        }
        let stats = EpochStats {
            epoch,
            train_loss,
            val_loss,
            max_grad_norm: max_norm,
        };
        log::info!("epoch {epoch:>3}: train {train_loss:.5} val {val_loss:.5} |g| {max_norm:.3}");
        on_epoch(&stats);
        history.push(stats);
    }
    let (best_val_loss, best_epoch, params) = best;
    model.params_mut().clone_from_slice(&params);
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_val_loss,
        train_windows: n_fit,
        val_windows: n_val,
    })
}

pub fn write_loss_curve(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in history {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

/// De-normalized, ordered forecast of one test window.
#[derive(Debug, Clone)]
pub struct WindowForecast {
    pub horizon_start: NaiveDateTime,
    /// `|E|×horizon`, amperes.
    pub target: Matrix,
    pub lower: Matrix,
    pub upper: Matrix,
    /// Entries whose raw bounds were crossed and have been swapped.
    pub crossings: usize,
}

pub fn forecast_windows(model: &Model, data: &WindowedDataset, exec: Execution) -> Result<Vec<WindowForecast>> {
    if data.is_empty() {
        return Err(Error::InsufficientData("test set is empty".into()));
    }
    exec.try_map(data.len(), |k| {
        let (lower, upper) = model.predict(data.history(k))?;
        let stats = data.stats();
        let (lower, upper, crossings) = order_bounds(&stats.denormalize_rows(&lower), &stats.denormalize_rows(&upper));
        Ok(WindowForecast {
            horizon_start: data.horizon_start_time(k),
            target: data.target(k),
            lower,
            upper,
            crossings,
        })
    })
}

/// Scores a model on every window of `data`.
pub fn evaluate(
    model: &Model,
    data: &WindowedDataset,
    line_ids: &[LineId],
    method: &str,
    exec: Execution,
) -> Result<(MetricReport, Vec<WindowForecast>)> {
    if line_ids.len() != data.line_count() {
        return Err(Error::InvalidInput(format!(
            "{} line ids for {} lines",
            line_ids.len(),
            data.line_count()
        )));
    }
    let forecasts = forecast_windows(model, data, exec)?;
    let pick = |f: fn(&WindowForecast) -> &Matrix| forecasts.iter().map(|w| f(w).clone()).collect::<Vec<_>>();
    let quantiles = model.config().quantiles;
    let scores = score_windows(
        &pick(|w| &w.target),
        &pick(|w| &w.lower),
        &pick(|w| &w.upper),
        quantiles,
    )?;
    let entries: usize = forecasts.iter().map(|w| w.target.len()).sum();
    let crossings: usize = forecasts.iter().map(|w| w.crossings).sum();
    let report = MetricReport {
        method: method.to_string(),
        normalization: NORMALIZATION_NOTE.to_string(),
        nominal_coverage: nominal_coverage(quantiles),
        picp: scores.overall.picp,
        ace: scores.overall.ace,
        pinaw: scores.overall.pinaw,
        interval_score: scores.overall.interval_score,
        qs: scores.overall.qs,
        crossing_rate: crossings as f64 / entries as f64 * 100.0,
        windows: forecasts.len(),
        lines: data.line_count(),
        params: model.param_count().total(),
        per_line: line_ids
            .iter()
            .zip(&scores.per_line)
            .zip(&scores.ranges)
            .map(|((&line_id, s), &range_a)| LineScore {
                line_id,
                qs: s.qs,
                picp: s.picp,
                range_a,
            })
            .collect(),
    };
    Ok((report, forecasts))
}

/// Fresh model of `config.variant` sized for `data`.
pub fn build_model(config: &ModelConfig, data: &WindowedDataset, lg: &LineGraphIndex, seed: u64) -> Result<Model> {
    if lg.node_count() != data.line_count() {
        return Err(Error::InvalidInput(format!(
            "line graph has {} nodes but the dataset has {} lines",
            lg.node_count(),
            data.line_count()
        )));
    }
    let dims = ModelDims {
        lines: data.line_count(),
        input_dim: data.feature_dim(),
        horizon: data.spec().horizon,
    };
    Model::new(config.clone(), dims, operator_for(config.variant, lg), seed)
}

/// Result of training and evaluating one variant.
#[derive(Debug, Clone)]
pub struct BenchEntry {
    pub variant: Variant,
    pub report: MetricReport,
    pub outcome: TrainOutcome,
}

/// Trains and evaluates each variant with identical data and seeds.
#[allow(clippy::too_many_arguments)]
pub fn benchmark(
    variants: &[Variant],
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &WindowedDataset,
    test_set: &WindowedDataset,
    lg: &LineGraphIndex,
    exec: Execution,
) -> Result<Vec<BenchEntry>> {
    variants
        .iter()
        .map(|&variant| {
            let config = ModelConfig {
                variant,
                ..base.clone()
            };
            let model = build_model(&config, train_set, lg, train_cfg.seed)?;
            log::info!("benchmark: training {}", variant.display_name());
            let outcome = train(model, train_set, train_cfg, exec, |_| {})?;
            let (report, _) = evaluate(&outcome.model, test_set, &lg.node_origin, variant.display_name(), exec)?;
            Ok(BenchEntry {
                variant,
                report,
                outcome,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upper_bound_term() {
        let one = |v| Matrix::filled(1, 1, v);
        let l = total_loss_value(&one(2.0), &one(1.0), &one(2.0), [0.1, 0.9]).unwrap();
        assert!((l - 0.9).abs() < 1e-15);
        assert_eq!(
            total_loss_value(&one(2.0), &one(2.0), &one(2.0), [0.1, 0.9]).unwrap(),
            0.0
        );
        assert!(total_loss_value(&one(2.0), &Matrix::zeros(1, 2), &one(2.0), [0.1, 0.9]).is_err());
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let p = vec![Matrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap()];
        let mut q = p.clone();
        let mut opt = AdamW::new(&q, 0.1, 0.0);
        for _ in 0..3 {
            opt.step(&mut q, &[Matrix::zeros(1, 3)]);
        }
        assert_eq!(p, q);
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let mut p = vec![Matrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap()];
        let mut opt = AdamW::new(&p, 0.01, 0.0);
        opt.step(&mut p, &[Matrix::from_vec(1, 2, vec![3.0, -0.5]).unwrap()]);
        assert!((p[0].as_slice()[0] - 0.99).abs() < 1e-9);
        assert!((p[0].as_slice()[1] - 1.01).abs() < 1e-9);
    }

    #[test]
    fn decoupled_decay_shrinks_weights() {
        let mut p = vec![Matrix::filled(1, 1, 2.0)];
        let mut opt = AdamW::new(&p, 0.1, 0.5);
        opt.step(&mut p, &[Matrix::zeros(1, 1)]);
        assert!((p[0].as_slice()[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn clipping_caps_the_joint_norm() {
        let mut g = vec![Matrix::filled(1, 1, 3.0), Matrix::filled(1, 1, 4.0)];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        let n: f64 = g.iter().map(Matrix::frobenius_sq).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
        let mut small = vec![Matrix::filled(1, 1, 0.1)];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].as_slice(), &[0.1]);
    }

    #[test]
    fn validation_share() {
        assert_eq!(validation_windows(26, 0.1), 3);
        assert_eq!(validation_windows(10, 0.1), 1);
        assert_eq!(validation_windows(2, 0.9), 1);
        assert_eq!(validation_windows(1, 0.1), 0);
        assert_eq!(validation_windows(10, 0.0), 0);
    }
}
