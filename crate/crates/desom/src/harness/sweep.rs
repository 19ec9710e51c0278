//! Hyperparameter grids: auto-tuning on the static version of an instance
//! and the exhaustive `sweep` command behind the CLI.

use nalgebra::DVector;
use serde::Serialize;

use crate::baselines::{dgd_step, extra_step, nn0_step, BaselineMethod, ExtraState};
use crate::esom::{esom_step, EsomConfig, SolverState};
use crate::objective::{DynamicObjective, FrozenObjective};
use crate::oracle::{solve_instantaneous_optimum, stack_consensus};
use crate::topology::{NetworkTopology, WeightMatrix};
use crate::{DesomError, Result};

/// Step-size grid for EXTRA and DGD.
pub const ETA_GRID: [f64; 8] = [0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.35, 0.5];
/// Penalty-constant grid for NN-0.
pub const NN0_GRID: [f64; 8] = [0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0];
/// Grids for ESOM's augmented-Lagrangian and proximal constants.
pub const ALPHA_GRID: [f64; 6] = [0.1, 0.3, 1.0, 3.0, 10.0, 30.0];
pub const EPSILON_GRID: [f64; 5] = [0.01, 0.05, 0.2, 1.0, 5.0];

/// Steps used when scoring a candidate on the static problem.
pub const TUNE_STEPS: usize = 400;

fn static_score_baseline(
    obj: &dyn DynamicObjective,
    g: &NetworkTopology,
    w: &WeightMatrix,
    method: BaselineMethod,
    step: f64,
    x0: &DVector<f64>,
    x_star: &DVector<f64>,
    steps: usize,
) -> f64 {
    match method {
        BaselineMethod::Extra => {
            let mut state = ExtraState::new(x0.clone());
            for _ in 0..steps {
                state = extra_step(obj, g, w, step, &state, 0, None);
                if !state.x.iter().all(|v| v.is_finite()) {
                    return f64::INFINITY;
                }
            }
            (state.x - x_star).norm()
        }
        BaselineMethod::Nn0 => {
            let mut x = x0.clone();
            for _ in 0..steps {
                match nn0_step(obj, g, w, step, &x, 0, None) {
                    Ok(next) if next.iter().all(|v| v.is_finite()) => x = next,
                    _ => return f64::INFINITY,
                }
            }
            (x - x_star).norm()
        }
        BaselineMethod::Dgd => {
            let mut x = x0.clone();
            for _ in 0..steps {
                x = dgd_step(obj, g, w, step, &x, 0, None);
                if !x.iter().all(|v| v.is_finite()) {
                    return f64::INFINITY;
                }
            }
            (x - x_star).norm()
        }
    }
}

/// Coarse grid tune of a baseline's hyperparameter on the problem frozen at
/// time `t_freeze`: best final primal error wins.
pub fn tune_baseline(
    obj: &dyn DynamicObjective,
    g: &NetworkTopology,
    w: &WeightMatrix,
    method: BaselineMethod,
    x0: &DVector<f64>,
    t_freeze: usize,
) -> Result<f64> {
    let frozen = FrozenObjective::new(obj, t_freeze);
    let x_star = stack_consensus(&solve_instantaneous_optimum(&frozen, 0)?, obj.n());
    let grid: &[f64] = match method {
        BaselineMethod::Nn0 => &NN0_GRID,
        _ => &ETA_GRID,
    };
    let mut best: Option<(f64, f64)> = None;
    for &step in grid {
        let score = static_score_baseline(&frozen, g, w, method, step, x0, &x_star, TUNE_STEPS);
        if score.is_finite() && best.map_or(true, |(s, _)| score < s) {
            best = Some((score, step));
        }
    }
    best.map(|(_, step)| step).ok_or_else(|| {
        DesomError::NonConvergence("every candidate step size diverged during tuning".into())
    })
}

fn static_score_esom(
    obj: &dyn DynamicObjective,
    g: &NetworkTopology,
    w: &WeightMatrix,
    config: &EsomConfig,
    x0: &DVector<f64>,
    x_star: &DVector<f64>,
    steps: usize,
) -> f64 {
    let mut state = SolverState::from_x(x0.clone());
    for _ in 0..steps {
        match esom_step(obj, g, w, config, &state, 0) {
            Ok(next) if next.x.iter().all(|v| v.is_finite()) => state = next,
            _ => return f64::INFINITY,
        }
    }
    (state.x - x_star).norm()
}

/// Coarse grid tune of (α, ε) for ESOM-K on the frozen problem.
pub fn tune_esom(
    obj: &dyn DynamicObjective,
    g: &NetworkTopology,
    w: &WeightMatrix,
    k: usize,
    x0: &DVector<f64>,
    t_freeze: usize,
) -> Result<(f64, f64)> {
    let frozen = FrozenObjective::new(obj, t_freeze);
    let x_star = stack_consensus(&solve_instantaneous_optimum(&frozen, 0)?, obj.n());
    let mut best: Option<(f64, f64, f64)> = None;
    for &alpha in &ALPHA_GRID {
        for &epsilon in &EPSILON_GRID {
            let config = EsomConfig { alpha, epsilon, k };
            let score = static_score_esom(&frozen, g, w, &config, x0, &x_star, TUNE_STEPS);
            if score.is_finite() && best.map_or(true, |(s, _, _)| score < s) {
                best = Some((score, alpha, epsilon));
            }
        }
    }
    best.map(|(_, a, e)| (a, e)).ok_or_else(|| {
        DesomError::NonConvergence("every (alpha, epsilon) candidate diverged during tuning".into())
    })
}

/// One row of a sweep report.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub solver: String,
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub step: Option<f64>,
    pub final_primal_err: f64,
}

/// Exhaustive static grid over (α, ε, K) for ESOM and the step grids for
/// the baselines. Returns one row per candidate, unsorted.
pub fn run_sweep(
    obj: &dyn DynamicObjective,
    g: &NetworkTopology,
    w: &WeightMatrix,
    ks: &[usize],
    x0: &DVector<f64>,
    t_freeze: usize,
) -> Result<Vec<SweepRow>> {
    let frozen = FrozenObjective::new(obj, t_freeze);
    let x_star = stack_consensus(&solve_instantaneous_optimum(&frozen, 0)?, obj.n());
    let mut rows = Vec::new();
    for &k in ks {
        for &alpha in &ALPHA_GRID {
            for &epsilon in &EPSILON_GRID {
                let config = EsomConfig { alpha, epsilon, k };
                let score = static_score_esom(&frozen, g, w, &config, x0, &x_star, TUNE_STEPS);
                rows.push(SweepRow {
                    solver: format!("esom-{k}"),
                    k: Some(k),
                    alpha: Some(alpha),
                    epsilon: Some(epsilon),
                    step: None,
                    final_primal_err: score,
                });
            }
        }
    }
    for (name, method, grid) in [
        ("extra", BaselineMethod::Extra, &ETA_GRID[..]),
        ("nn0", BaselineMethod::Nn0, &NN0_GRID[..]),
        ("dgd", BaselineMethod::Dgd, &ETA_GRID[..]),
    ] {
        for &step in grid {
            let score =
                static_score_baseline(&frozen, g, w, method, step, x0, &x_star, TUNE_STEPS);
            rows.push(SweepRow {
                solver: name.into(),
                k: None,
                alpha: None,
                epsilon: None,
                step: Some(step),
                final_primal_err: score,
            });
        }
    }
    Ok(rows)
}
