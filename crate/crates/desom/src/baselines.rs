//! Dynamic first- and second-order baselines: EXTRA, Network Newton-0, and
//! plain decentralized gradient descent. All three share the
//! bulk-synchronous locality contract of the ESOM stepper: per round each
//! node reads only its own and its neighbors' previous-round state.

use nalgebra::DVector;

use crate::esom::CommLog;
use crate::objective::DynamicObjective;
use crate::topology::{NetworkTopology, WeightMatrix};
use crate::{DesomError, Result};

/// Which comparator method a [`BaselineConfig`] selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    Extra,
    Nn0,
    Dgd,
}

/// Baseline hyperparameters: `step` is the gradient step size η for EXTRA
/// and DGD, and the penalty constant c for NN-0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    pub step: f64,
}

impl BaselineConfig {
    pub fn new(method: BaselineMethod, step: f64) -> Result<Self> {
        if step <= 0.0 {
            return Err(DesomError::InvalidParameter("step size must be positive".into()));
        }
        Ok(Self { method, step })
    }
}

/// EXTRA carries the previous iterate and the gradient observed at it; the
/// first step is special-cased.
#[derive(Debug, Clone)]
pub struct ExtraState {
    pub x: DVector<f64>,
    pub x_prev: Option<DVector<f64>>,
    /// Gradient evaluated at `x` on the function that was current when `x`
    /// was produced.
    pub grad_prev: Option<DVector<f64>>,
}

impl ExtraState {
    pub fn new(x0: DVector<f64>) -> Self {
        Self { x: x0, x_prev: None, grad_prev: None }
    }
}

/// One EXTRA step with mixing matrix W̃ = (I+W)/2:
///
/// ```text
/// x_t = (I+Z) x_{t−1} − W̃_lift x_{t−2} − η [∇f_t(x_{t−1}) − ∇f_{t−1}(x_{t−2})]
/// ```
///
/// first step `x_1 = Z x_0 − η ∇f_t(x_0)`. Each gradient is evaluated once,
/// on the function observed at that round, and carried in the state. This
/// keeps the telescoped gradient sum consistent across objective changes;
/// re-evaluating the history gradient on the current function would inject
/// a permanent offset into the implicit dual at every change point, leaving
/// a consensus-violating bias that no amount of further iteration removes.
pub fn extra_step(
    obj: &dyn DynamicObjective,
    g: &NetworkTopology,
    w: &WeightMatrix,
    eta: f64,
    state: &ExtraState,
    t: usize,
    log: Option<&mut CommLog>,
) -> ExtraState {
    let p = obj.p();
    record_neighbor_round(log, g);
    let grad = obj.stacked_gradient(t, &state.x);
    let x_next = match (&state.x_prev, &state.grad_prev) {
        (Some(x_prev), Some(grad_prev)) => {
            let zx = w.apply_lifted(g, &state.x, p);
            // W̃_lift x = (x + Zx)/2.
            let w_tilde_prev = (x_prev + w.apply_lifted(g, x_prev, p)) * 0.5;
            &state.x + zx - w_tilde_prev - (&grad - grad_prev) * eta
        }
        _ => w.apply_lifted(g, &state.x, p) - &grad * eta,
    };
    ExtraState { x: x_next, x_prev: Some(state.x.clone()), grad_prev: Some(grad) }
}

/// One Network Newton-0 step on the penalized objective
/// `φ_t(x) = c f_t(x) + (1/2) xᵀ(I−Z)x`, using only the block-diagonal part
/// of its Hessian: `x_t = x_{t−1} − D̂⁻¹ ∇φ_t(x_{t−1})` with
/// `D̂_ii = c ∇²f_{i,t} + 2(1−w_ii)I`.
pub fn nn0_step(
    obj: &dyn DynamicObjective,
    g: &NetworkTopology,
    w: &WeightMatrix,
    c: f64,
    x_prev: &DVector<f64>,
    t: usize,
    log: Option<&mut CommLog>,
) -> Result<DVector<f64>> {
    let (n, p) = (obj.n(), obj.p());
    record_neighbor_round(log, g);
    let penalty_grad = w.apply_i_minus_z(g, x_prev, p);
    let mut x_next = DVector::zeros(n * p);
    for i in 0..n {
        let xi = x_prev.rows(i * p, p).into_owned();
        let grad_i = obj.gradient(i, t, &xi) * c + penalty_grad.rows(i * p, p);
        let mut block = obj.hessian(i, t, &xi) * c;
        let shift = 2.0 * (1.0 - w.entry(i, i));
        for d in 0..p {
            block[(d, d)] += shift;
        }
        let step = block
            .cholesky()
            .ok_or_else(|| {
                DesomError::NotPositiveDefinite(format!("NN-0 block of node {i} at t={t}"))
            })?
            .solve(&grad_i);
        x_next.rows_mut(i * p, p).copy_from(&(xi - step));
    }
    Ok(x_next)
}

/// Plain dynamic decentralized gradient descent:
/// `x_t = Z x_{t−1} − η ∇f_t(x_{t−1})`.
pub fn dgd_step(
    obj: &dyn DynamicObjective,
    g: &NetworkTopology,
    w: &WeightMatrix,
    eta: f64,
    x_prev: &DVector<f64>,
    t: usize,
    log: Option<&mut CommLog>,
) -> DVector<f64> {
    record_neighbor_round(log, g);
    w.apply_lifted(g, x_prev, obj.p()) - obj.stacked_gradient(t, x_prev) * eta
}

fn record_neighbor_round(log: Option<&mut CommLog>, g: &NetworkTopology) {
    if let Some(l) = log {
        let mut reads = Vec::new();
        for i in 0..g.n() {
            for &j in g.neighbors(i) {
                reads.push((i, j));
            }
        }
        l.rounds.push(reads);
    }
}
