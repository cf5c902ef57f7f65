//! Finite-difference verification of every differentiable op and of the
//! full models.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{check_gradients, GradCheckEntry, OpKind, Tape, Var, GRADCHECK_TOL};
use crate::error::Result;
use crate::exec::Execution;
use crate::graph::{Bus, BusId, Grid, Line, LineId};
use crate::model::{operator_for, CellActivation, Model, ModelConfig, ModelDims, Variant};
use crate::tensor::Matrix;
use crate::train::total_loss;

/// Outcome of one gradient-check case.
#[derive(Debug, Clone)]
pub struct CaseResult {
    pub case: String,
    pub entries: Vec<GradCheckEntry>,
}

impl CaseResult {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(GradCheckEntry::passed)
    }
}

#[derive(Debug, Clone)]
pub struct GradientReport {
    pub seed: u64,
    pub cases: Vec<CaseResult>,
}

impl GradientReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(CaseResult::passed)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.cases
            .iter()
            .filter(|c| !c.passed())
            .map(|c| c.case.as_str())
            .collect()
    }

    /// Stable plain-text report, one line per case.
    pub fn render(&self) -> String {
        let mut s = format!("gradient check (seed {}, tolerance {GRADCHECK_TOL:e})\n", self.seed);
        for c in &self.cases {
            let checked: usize = c.entries.iter().map(|e| e.checked).sum();
            let skipped: usize = c.entries.iter().map(|e| e.skipped).sum();
            let _ = write!(
                s,
                "{:<6} {:<28} max rel err {:.3e} over {} entries",
                if c.passed() { "ok" } else { "FAIL" },
                c.case,
                c.max_rel_error(),
                checked - skipped
            );
            if skipped > 0 {
                let _ = write!(s, " ({skipped} on kinks skipped)");
            }
            s.push('\n');
        }
        let failing = self.failing();
        if failing.is_empty() {
            s.push_str("all gradients match\n");
        } else {
            let _ = writeln!(s, "failing: {}", failing.join(", "));
        }
        s
    }
}

struct Gen(ChaCha8Rng);

impl Gen {
    fn normal(&mut self, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| self.0.sample(StandardNormal))
    }

    /// Normal entries pushed at least `gap` away from zero.
    fn away_from_zero(&mut self, r: usize, c: usize, gap: f64) -> Matrix {
        Matrix::from_fn(r, c, |_, _| {
            let v: f64 = self.0.sample(StandardNormal);
            v + gap * v.signum()
        })
    }
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var> + Sync + Send>;

/// Weighted sum `Σ out ⊙ r`, turning any output into a scalar with
/// non-uniform upstream gradient.
fn weighted(tape: &mut Tape, out: Var, r: &Matrix) -> Result<Var> {
    let r = tape.constant(r.clone());
    let p = tape.hadamard(out, r)?;
    tape.sum(p)
}

fn op_case(kind: OpKind, g: &mut Gen) -> (Vec<(String, Matrix)>, Build) {
    let named = |v: Vec<(&str, Matrix)>| v.into_iter().map(|(n, m)| (n.to_string(), m)).collect::<Vec<_>>();
    match kind {
        OpKind::MatMul => {
            let r = g.normal(2, 4);
            (
                named(vec![("a", g.normal(2, 3)), ("b", g.normal(3, 4))]),
                Box::new(move |t, v| {
                    let o = t.matmul(v[0], v[1])?;
                    weighted(t, o, &r)
                }),
            )
        }
        OpKind::GroupedMatMul => {
            let r = g.normal(3, 4);
            (
                named(vec![("a", g.normal(3, 2)), ("w", g.normal(6, 4))]),
                Box::new(move |t, v| {
                    let o = t.grouped_matmul(v[0], v[1])?;
                    weighted(t, o, &r)
                }),
            )
        }
        OpKind::Add | OpKind::Hadamard => {
            let r = g.normal(2, 3);
            (
                named(vec![("a", g.normal(2, 3)), ("b", g.normal(2, 3))]),
                Box::new(move |t, v| {
                    let o = if kind == OpKind::Add {
                        t.add(v[0], v[1])?
                    } else {
                        t.hadamard(v[0], v[1])?
                    };
                    weighted(t, o, &r)
                }),
            )
        }
        OpKind::AddBias => {
            let r = g.normal(3, 4);
            (
                named(vec![("a", g.normal(3, 4)), ("bias", g.normal(1, 4))]),
                Box::new(move |t, v| {
                    let o = t.add_bias(v[0], v[1])?;
                    weighted(t, o, &r)
                }),
            )
        }
        OpKind::Sigmoid | OpKind::Tanh | OpKind::Relu | OpKind::Scale => {
            let r = g.normal(2, 3);
            (
                named(vec![("x", g.away_from_zero(2, 3, 0.1))]),
                Box::new(move |t, v| {
                    let o = match kind {
                        OpKind::Sigmoid => t.sigmoid(v[0])?,
                        OpKind::Tanh => t.tanh(v[0])?,
                        OpKind::Relu => t.relu(v[0])?,
                        _ => t.scale(v[0], -2.5)?,
                    };
                    weighted(t, o, &r)
                }),
            )
        }
        OpKind::ConcatCols => {
            let r = g.normal(2, 5);
            (
                named(vec![("a", g.normal(2, 2)), ("b", g.normal(2, 3))]),
                Box::new(move |t, v| {
                    let o = t.concat_cols(v[0], v[1])?;
                    weighted(t, o, &r)
                }),
            )
        }
        OpKind::SliceCols | OpKind::SliceRows => {
            let r = g.normal(2, 3);
            let x = if kind == OpKind::SliceCols {
                g.normal(2, 5)
            } else {
                g.normal(5, 3)
            };
            (
                named(vec![("x", x)]),
                Box::new(move |t, v| {
                    let o = if kind == OpKind::SliceCols {
                        t.slice_cols(v[0], 1, 4)?
                    } else {
                        t.slice_rows(v[0], 2, 4)?
                    };
                    weighted(t, o, &r)
                }),
            )
        }
        OpKind::Sum => (named(vec![("x", g.normal(3, 2))]), Box::new(|t, v| t.sum(v[0]))),
        OpKind::Mean => {
            let r = g.normal(3, 2);
            (
                named(vec![("x", g.normal(3, 2))]),
                Box::new(move |t, v| {
                    let r = t.constant(r.clone());
                    let p = t.hadamard(v[0], r)?;
                    t.mean(p)
                }),
            )
        }
        OpKind::Leaf => unreachable!("leaves have no backward rule"),
        OpKind::Pinball => {
            let pred = g.normal(2, 4);
            let gaps = g.away_from_zero(2, 4, 0.1);
            let mut target = pred.clone();
            target.add_assign(&gaps);
            (
                named(vec![("pred", pred), ("target", target)]),
                Box::new(|t, v| {
                    let o = t.pinball(v[0], v[1], 0.3)?;
                    t.sum(o)
                }),
            )
        }
    }
}

/// Four lines in a path (five buses), whose line graph has both single-
/// and double-hop neighbours.
fn tiny_grid() -> Grid {
    let buses = (1..=5)
        .map(|i| Bus {
            id: BusId(i),
            lat: 30.0 + 0.1 * i as f64,
            lon: -97.0,
        })
        .collect();
    let lines = (1..=4)
        .map(|i| Line {
            id: LineId(i),
            from: BusId(i),
            to: BusId(i + 1),
            length_km: 10.0,
        })
        .collect();
    Grid::new(buses, lines).expect("valid tiny grid")
}

/// Small model setups covered by the suite: `(name, config)`.
fn model_cases() -> Vec<(String, ModelConfig)> {
    let base = ModelConfig {
        hidden: 3,
        head_hidden: 3,
        ..ModelConfig::default()
    };
    let mut cases: Vec<(String, ModelConfig)> = Variant::ALL
        .into_iter()
        .map(|v| {
            (
                format!("model:{}", v.name()),
                ModelConfig {
                    variant: v,
                    ..base.clone()
                },
            )
        })
        .collect();
    cases.push((
        "model:d-lgclstm/tanh-cell".into(),
        ModelConfig {
            cell_activation: CellActivation::Tanh,
            ..base.clone()
        },
    ));
    cases.push((
        "model:d-lgclstm/shared-heads".into(),
        ModelConfig {
            shared_heads: true,
            ..base
        },
    ));
    cases
}

/// Runs every op case and end-to-end model case (`|E| = 4`, `T = 3`,
/// hidden 3). With `fault`, the backward rule of that op is scaled by 1.5
/// on the analytic pass.
pub fn gradient_suite(seed: u64, fault: Option<OpKind>, exec: Execution) -> Result<GradientReport> {
    let mut g = Gen(ChaCha8Rng::seed_from_u64(seed));
    let mut cases = Vec::new();
    for kind in OpKind::DIFFERENTIABLE {
        let (params, build) = op_case(kind, &mut g);
        let entries = check_gradients(&params, fault, exec, build)?;
        cases.push(CaseResult {
            case: format!("op:{}", kind.name()),
            entries,
        });
    }

    let lg = crate::graph::to_line_graph(&tiny_grid());
    let dims = ModelDims {
        lines: 4,
        input_dim: 5,
        horizon: 2,
    };
    let history: Vec<Matrix> = (0..3).map(|_| g.normal(dims.lines, dims.input_dim)).collect();
    for (name, cfg) in model_cases() {
        let op = operator_for(cfg.variant, &lg);
        let model = Model::new(cfg.clone(), dims, op.clone(), g.0.random())?;
        let params: Vec<(String, Matrix)> = model
            .param_names()
            .iter()
            .cloned()
            .zip(model.params().iter().cloned())
            .collect();
        // Each target lies a short way outside both predicted bounds, on a
        // random side, so no finite-difference step straddles a pinball kink.
        let (lo, hi) = model.predict(&history)?;
        let target = Matrix::from_fn(dims.lines, dims.horizon, |i, j| {
            let margin = 0.1 + 0.2 * g.0.random::<f64>();
            let (a, b) = (lo[(i, j)], hi[(i, j)]);
            if g.0.random::<bool>() {
                a.max(b) + margin
            } else {
                a.min(b) - margin
            }
        });
        let history = history.clone();
        let quantiles = cfg.quantiles;
        let entries = check_gradients(&params, fault, exec, move |t, v| {
            let q = model.forward(t, v, &history)?;
            let y = t.constant(target.clone());
            total_loss(t, q, y, quantiles)
        })?;
        cases.push(CaseResult { case: name, entries });
    }
    Ok(GradientReport { seed, cases })
}
