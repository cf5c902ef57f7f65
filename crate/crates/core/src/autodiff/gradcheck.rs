//! Central finite-difference verification of backward rules.

use super::{OpKind, Tape, Var};
use crate::error::Result;
use crate::exec::Execution;
use crate::tensor::Matrix;

/// Finite-difference step.
pub const GRADCHECK_STEP: f64 = 1e-5;
/// Largest accepted relative error.
pub const GRADCHECK_TOL: f64 = 1e-4;
/// Magnitude below which errors are measured in absolute terms; keeps
/// round-off on near-zero gradients from registering as relative error.
pub const GRADCHECK_FLOOR: f64 = 1e-6;
/// One-sided slopes further apart than this (relative) mark a probe that
/// sits on a kink (relu, pinball); such probes are skipped.
pub const KINK_TOL: f64 = 1e-2;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR)
}

/// Worst agreement found for one parameter.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Elements skipped because the loss is not smooth there.
    pub skipped: usize,
}

impl GradCheckEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOL
    }
}

/// Compares analytic gradients of `build` against central differences for
/// every element of every parameter.
///
/// A probe whose forward and backward one-sided slopes disagree is lying on
/// a kink of the loss; it is counted in `skipped` instead of compared.
///
/// `build` records a scalar loss on the tape it is given, reading the
/// parameters through the supplied vars. The analytic pass runs on a tape
/// configured with `fault` so broken rules can be injected.
pub fn check_gradients<F>(
    params: &[(String, Matrix)],
    fault: Option<OpKind>,
    exec: Execution,
    build: F,
) -> Result<Vec<GradCheckEntry>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Sync + Send,
{
    let mut tape = match fault {
        Some(kind) => Tape::with_fault(kind),
        None => Tape::new(),
    };
    let vars: Vec<Var> = params.iter().map(|(_, m)| tape.param(m.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let analytic = tape.backward(loss)?.take_all(&vars);

    let eval = |p: usize, e: usize, delta: f64| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = params
            .iter()
            .enumerate()
            .map(|(i, (_, m))| {
                let mut m = m.clone();
                if i == p {
                    m.as_mut_slice()[e] += delta;
                }
                t.param(m)
            })
            .collect();
        let l = build(&mut t, &vs)?;
        Ok(t.scalar(l))
    };

    let probes: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(p, (_, m))| (0..m.len()).map(move |e| (p, e)))
        .collect();
    let h = GRADCHECK_STEP;
    let base = eval(0, 0, 0.0)?;
    let numeric = exec.try_map(probes.len(), |k| {
        let (p, e) = probes[k];
        let (up, down) = (eval(p, e, h)?, eval(p, e, -h)?);
        let (fwd, bwd) = ((up - base) / h, (base - down) / h);
        let kink = (fwd - bwd).abs() > KINK_TOL * fwd.abs().max(bwd.abs()).max(GRADCHECK_FLOOR * 1e2);
        Ok::<Option<f64>, crate::Error>((!kink).then_some((up - down) / (2.0 * h)))
    })?;

    let mut entries: Vec<GradCheckEntry> = params
        .iter()
        .map(|(name, m)| GradCheckEntry {
            name: name.clone(),
            max_rel_error: 0.0,
            analytic: 0.0,
            numeric: 0.0,
            checked: m.len(),
            skipped: 0,
        })
        .collect();
    for (&(p, e), num) in probes.iter().zip(numeric) {
        let entry = &mut entries[p];
        let Some(num) = num else {
            entry.skipped += 1;
            continue;
        };
        let ana = analytic[p].as_slice()[e];
        let err = relative_error(ana, num);
        if err.is_nan() || err > entry.max_rel_error {
            entry.max_rel_error = err;
            entry.analytic = ana;
            entry.numeric = num;
        }
    }
    Ok(entries)
}
