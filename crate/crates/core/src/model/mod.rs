//! Bidirectional (graph-convolutional) LSTM encoders with quantile heads.
//!
//! Gate weights are stored fused: `W` is `d×4h`, `U` is `h×4h` and `b` is
//! `1×4h`, with column blocks in the order forget, input, output, candidate.

mod checkpoint;
mod config;

pub use checkpoint::{Checkpoint, CheckpointMeta, ParamEntry, TrainingRecord, CHECKPOINT_FORMAT};
pub use config::{CellActivation, ModelConfig, ModelDims, Variant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::graph::LineGraphIndex;
use crate::tensor::Matrix;

/// Gate block order inside fused weights.
pub const GATES: [&str; 4] = ["forget", "input", "output", "candidate"];

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Uniform(f64),
    Zeros,
    /// Zeros with the forget block set to one.
    ForgetBias(usize),
}

#[derive(Debug, Clone)]
struct ParamSpec {
    name: String,
    rows: usize,
    cols: usize,
    init: Init,
}

fn layout(cfg: &ModelConfig, dims: &ModelDims) -> Vec<ParamSpec> {
    let h = cfg.hidden;
    let mut specs = Vec::new();
    let mut push = |name: String, rows, cols, init| specs.push(ParamSpec { name, rows, cols, init });
    for dir in ["fwd", "bwd"].iter().take(cfg.directions()) {
        for layer in 0..cfg.variant.layers() {
            let input = if layer == 0 { dims.input_dim } else { h };
            let bound = 1.0 / (input as f64).sqrt();
            push(format!("{dir}.l{layer}.w"), input, 4 * h, Init::Uniform(bound));
            push(
                format!("{dir}.l{layer}.u"),
                h,
                4 * h,
                Init::Uniform(1.0 / (h as f64).sqrt()),
            );
            push(format!("{dir}.l{layer}.b"), 1, 4 * h, Init::ForgetBias(h));
        }
    }
    let (k, m, tau) = (cfg.head_input(), cfg.head_hidden, dims.horizon);
    let groups = if cfg.shared_heads { 1 } else { dims.lines };
    for bound in ["lower", "upper"] {
        push(
            format!("head.{bound}.w1"),
            groups * k,
            m,
            Init::Uniform(1.0 / (k as f64).sqrt()),
        );
        push(format!("head.{bound}.b1"), groups, m, Init::Zeros);
        push(
            format!("head.{bound}.w2"),
            groups * m,
            tau,
            Init::Uniform(1.0 / (m as f64).sqrt()),
        );
        push(format!("head.{bound}.b2"), groups, tau, Init::Zeros);
    }
    specs
}

/// Trainable scalar counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    /// Recurrent parameters of one direction (all layers).
    pub cell_per_direction: usize,
    pub directions: usize,
    /// Both quantile heads, all lines.
    pub heads: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.cell_per_direction * self.directions + self.heads
    }
}

pub fn count_params(cfg: &ModelConfig, dims: &ModelDims) -> ParamCount {
    let specs = layout(cfg, dims);
    let size = |s: &ParamSpec| s.rows * s.cols;
    let cells: usize = specs.iter().filter(|s| !s.name.starts_with("head.")).map(size).sum();
    ParamCount {
        cell_per_direction: cells / cfg.directions(),
        directions: cfg.directions(),
        heads: specs.iter().filter(|s| s.name.starts_with("head.")).map(size).sum(),
    }
}

/// Graph operator a variant mixes its inputs with.
pub fn operator_for(variant: Variant, lg: &LineGraphIndex) -> Option<Matrix> {
    match variant {
        Variant::Lstm => None,
        Variant::Lgclstm => Some(lg.single_hop_operator()),
        Variant::DLgclstm => Some(lg.a_tilde.clone()),
    }
}

/// Tape handles of one fused LSTM cell.
#[derive(Debug, Clone, Copy)]
pub struct CellVars {
    pub w: Var,
    pub u: Var,
    pub b: Var,
}

#[derive(Debug, Clone, Copy)]
struct HeadVars {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

/// Pre-activations → `(h, c)` given the input projection `xw` (bias
/// included) of one step.
fn gates_step(tape: &mut Tape, xw: Var, u: Var, h_prev: Var, c_prev: Var, act: CellActivation) -> Result<(Var, Var)> {
    let h = tape.shape(h_prev).1;
    let hu = tape.matmul(h_prev, u)?;
    let z = tape.add(xw, hu)?;
    let sig_part = tape.slice_cols(z, 0, 3 * h)?;
    let sig = tape.sigmoid(sig_part)?;
    let f = tape.slice_cols(sig, 0, h)?;
    let i = tape.slice_cols(sig, h, 2 * h)?;
    let o = tape.slice_cols(sig, 2 * h, 3 * h)?;
    let g_part = tape.slice_cols(z, 3 * h, 4 * h)?;
    let g = tape.tanh(g_part)?;
    let keep = tape.hadamard(f, c_prev)?;
    let write = tape.hadamard(i, g)?;
    let c = tape.add(keep, write)?;
    let squashed = match act {
        CellActivation::Sigmoid => tape.sigmoid(c)?,
        CellActivation::Tanh => tape.tanh(c)?,
    };
    let h_new = tape.hadamard(o, squashed)?;
    Ok((h_new, c))
}

/// One recurrent step: mixes the `|E|×d` input `x` with `a_tilde` (when
/// given), then applies the gated update.
pub fn cell_step(
    tape: &mut Tape,
    cell: CellVars,
    a_tilde: Option<Var>,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    act: CellActivation,
) -> Result<(Var, Var)> {
    let mixed = match a_tilde {
        Some(a) => tape.matmul(a, x)?,
        None => x,
    };
    let xw = tape.matmul(mixed, cell.w)?;
    let xw = tape.add_bias(xw, cell.b)?;
    gates_step(tape, xw, cell.u, h_prev, c_prev, act)
}

/// Quantile forecasts of one sample as tape handles, `|E|×horizon`,
/// normalized target units.
#[derive(Debug, Clone, Copy)]
pub struct QuantileVars {
    pub lower: Var,
    pub upper: Var,
}

/// A model with its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    dims: ModelDims,
    operator: Option<Matrix>,
    names: Vec<String>,
    params: Vec<Matrix>,
}

impl Model {
    /// Freshly initialized model: weights uniform in `±1/√fan_in`, biases
    /// zero except the forget gate's, which start at one.
    pub fn new(config: ModelConfig, dims: ModelDims, operator: Option<Matrix>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = layout(&config, &dims);
        let params = specs
            .iter()
            .map(|s| match s.init {
                Init::Uniform(b) => Matrix::from_fn(s.rows, s.cols, |_, _| rng.random_range(-b..=b)),
                Init::Zeros => Matrix::zeros(s.rows, s.cols),
                Init::ForgetBias(h) => Matrix::from_fn(s.rows, s.cols, |_, c| if c < h { 1.0 } else { 0.0 }),
            })
            .collect();
        Self::from_params(config, dims, operator, params)
    }

    /// Model from explicit parameter values in layout order.
    pub fn from_params(
        config: ModelConfig,
        dims: ModelDims,
        operator: Option<Matrix>,
        params: Vec<Matrix>,
    ) -> Result<Self> {
        config.validate()?;
        if dims.lines == 0 || dims.input_dim == 0 || dims.horizon == 0 {
            return Err(Error::InvalidInput(format!("degenerate model dimensions {dims:?}")));
        }
        match (&operator, config.variant) {
            (None, Variant::Lstm) => {}
            (Some(a), Variant::Lgclstm | Variant::DLgclstm) if a.shape() == (dims.lines, dims.lines) => {}
            (Some(a), Variant::Lgclstm | Variant::DLgclstm) => {
                return shape_err("graph operator", format!("{:?} for {} lines", a.shape(), dims.lines))
            }
            (op, v) => {
                return Err(Error::InvalidInput(format!(
                    "{v} {} a graph operator",
                    if op.is_some() { "does not take" } else { "needs" }
                )))
            }
        }
        let specs = layout(&config, &dims);
        if specs.len() != params.len() {
            return shape_err(
                "parameters",
                format!("expected {} tensors, got {}", specs.len(), params.len()),
            );
        }
        for (s, p) in specs.iter().zip(&params) {
            if p.shape() != (s.rows, s.cols) {
                return shape_err(
                    "parameters",
                    format!("{} is {:?}, expected {:?}", s.name, p.shape(), (s.rows, s.cols)),
                );
            }
        }
        Ok(Model {
            config,
            dims,
            operator,
            names: specs.into_iter().map(|s| s.name).collect(),
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn operator(&self) -> Option<&Matrix> {
        self.operator.as_ref()
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    pub fn param_count(&self) -> ParamCount {
        count_params(&self.config, &self.dims)
    }

    /// Records every parameter as a trainable leaf.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.clone())).collect()
    }

    /// Records every parameter as a constant (inference only).
    pub fn register_frozen(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.constant(p.clone())).collect()
    }

    fn cell_vars(&self, vars: &[Var], direction: usize, layer: usize) -> CellVars {
        let k = 3 * (direction * self.config.variant.layers() + layer);
        CellVars {
            w: vars[k],
            u: vars[k + 1],
            b: vars[k + 2],
        }
    }

    fn head_vars(&self, vars: &[Var], bound: usize) -> HeadVars {
        let k = 3 * self.config.directions() * self.config.variant.layers() + 4 * bound;
        HeadVars {
            w1: vars[k],
            b1: vars[k + 1],
            w2: vars[k + 2],
            b2: vars[k + 3],
        }
    }

    fn check_history(&self, history: &[Matrix]) -> Result<()> {
        if history.is_empty() {
            return Err(Error::InvalidInput("empty history".into()));
        }
        let want = (self.dims.lines, self.dims.input_dim);
        if let Some(x) = history.iter().find(|x| x.shape() != want) {
            return shape_err("history", format!("step is {:?}, expected {want:?}", x.shape()));
        }
        Ok(())
    }

    /// Final hidden state of one direction. The backward direction consumes
    /// the history from the last step to the first.
    fn encode_direction(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        direction: usize,
        mixed: Var,
        steps: usize,
    ) -> Result<Var> {
        let (e, h) = (self.dims.lines, self.config.hidden);
        let act = self.config.cell_activation;
        let order: Vec<usize> = if direction == 0 {
            (0..steps).collect()
        } else {
            (0..steps).rev().collect()
        };
        let zeros = tape.constant(Matrix::zeros(e, h));
        let layers = self.config.variant.layers();

        let cell = self.cell_vars(vars, direction, 0);
        let xw = tape.matmul(mixed, cell.w)?;
        let xw = tape.add_bias(xw, cell.b)?;
        let (mut hs, mut c) = (zeros, zeros);
        let mut outputs = vec![zeros; if layers > 1 { steps } else { 0 }];
        for &t in &order {
            let x_t = tape.slice_rows(xw, t * e, (t + 1) * e)?;
            (hs, c) = gates_step(tape, x_t, cell.u, hs, c, act)?;
            if layers > 1 {
                outputs[t] = hs;
            }
        }

        let a = self.operator.as_ref().map(|a| tape.constant(a.clone()));
        for layer in 1..layers {
            let cell = self.cell_vars(vars, direction, layer);
            let (mut hl, mut cl) = (zeros, zeros);
            for &t in &order {
                (hl, cl) = cell_step(tape, cell, a, outputs[t], hl, cl, act)?;
                if layer + 1 < layers {
                    outputs[t] = hl;
                }
            }
            hs = hl;
        }
        Ok(hs)
    }

    fn head(&self, tape: &mut Tape, rep: Var, hv: HeadVars) -> Result<Var> {
        if self.config.shared_heads {
            let a = tape.matmul(rep, hv.w1)?;
            let a = tape.add_bias(a, hv.b1)?;
            let a = tape.relu(a)?;
            let y = tape.matmul(a, hv.w2)?;
            tape.add_bias(y, hv.b2)
        } else {
            let a = tape.grouped_matmul(rep, hv.w1)?;
            let a = tape.add(a, hv.b1)?;
            let a = tape.relu(a)?;
            let y = tape.grouped_matmul(a, hv.w2)?;
            tape.add(y, hv.b2)
        }
    }

    /// Per-line representation `[←h ‖ →h]` (or `→h` when unidirectional).
    pub fn encode(&self, tape: &mut Tape, vars: &[Var], history: &[Matrix]) -> Result<Var> {
        self.check_history(history)?;
        let mixed_steps;
        let steps: Vec<&Matrix> = match &self.operator {
            Some(a) => {
                mixed_steps = history.iter().map(|x| a.matmul(x)).collect::<Result<Vec<_>>>()?;
                mixed_steps.iter().collect()
            }
            None => history.iter().collect(),
        };
        let stacked = Matrix::vstack(&steps)?;
        let mixed = tape.constant(stacked);
        let fwd = self.encode_direction(tape, vars, 0, mixed, history.len())?;
        if !self.config.bidirectional {
            return Ok(fwd);
        }
        let bwd = self.encode_direction(tape, vars, 1, mixed, history.len())?;
        tape.concat_cols(bwd, fwd)
    }

    /// Lower and upper quantile forecasts for one history window.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], history: &[Matrix]) -> Result<QuantileVars> {
        let rep = self.encode(tape, vars, history)?;
        let lower = self.head(tape, rep, self.head_vars(vars, 0))?;
        let upper = self.head(tape, rep, self.head_vars(vars, 1))?;
        Ok(QuantileVars { lower, upper })
    }

    /// Raw (possibly crossed) lower and upper forecasts in normalized units.
    pub fn predict(&self, history: &[Matrix]) -> Result<(Matrix, Matrix)> {
        let mut tape = Tape::new();
        let vars = self.register_frozen(&mut tape);
        let q = self.forward(&mut tape, &vars, history)?;
        Ok((tape.value(q.lower).clone(), tape.value(q.upper).clone()))
    }
}

/// Swaps any lower/upper pair where lower exceeds upper. Returns the ordered
/// bounds and the number of swapped entries.
pub fn order_bounds(lower: &Matrix, upper: &Matrix) -> (Matrix, Matrix, usize) {
    let mut lo = lower.clone();
    let mut hi = upper.clone();
    let mut crossed = 0;
    for (l, u) in lo.as_mut_slice().iter_mut().zip(hi.as_mut_slice()) {
        if *l > *u {
            std::mem::swap(l, u);
            crossed += 1;
        }
    }
    (lo, hi, crossed)
}
