//! The experiment runner: builds topology and problem from seeds, resolves
//! solver hyperparameters (auto-tuning absent ones on the static version of
//! the instance), runs every selected solver over the horizon, and records
//! per-step metrics. Deterministic for a fixed config.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::baselines::{dgd_step, extra_step, nn0_step, BaselineMethod, ExtraState};
use crate::esom::{esom_step, EsomConfig, SolverState, DENSE_SIZE_LIMIT};
use crate::harness::config::{ExperimentConfig, SolverSpec};
use crate::harness::metrics::{drift_metric, error_metric, lyapunov_metric};
use crate::harness::sweep::{tune_baseline, tune_esom};
use crate::objective::{estimate_bounds, CurvatureBounds, DynamicLeastSquares, DynamicObjective};
use crate::oracle::{
    dense_i_minus_z, pinv_sqrt_psd, solve_instantaneous_optimum, sqrt_psd, stack_consensus,
};
use crate::topology::{NetworkTopology, WeightMatrix};
use crate::{DesomError, Result};

/// Divergence cutoff on the tracking error.
const DIVERGENCE_CUTOFF: f64 = 1e12;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TrajectoryRow {
    pub t: usize,
    pub e_t: f64,
    pub lyapunov: f64,
    pub primal_err: f64,
    pub drift: f64,
    pub wall_ms: f64,
}

/// Fully resolved solver hyperparameters, echoed into run metadata.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedSolver {
    pub name: String,
    pub label: String,
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub step: Option<f64>,
    pub auto_tuned: bool,
}

#[derive(Debug, Clone)]
pub struct SolverTrajectory {
    pub label: String,
    pub rows: Vec<TrajectoryRow>,
    pub diverged_at: Option<usize>,
    pub resolved: ResolvedSolver,
    /// First coordinate of node 0's iterate, one entry per recorded step.
    pub node0_coord0: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub trajectories: Vec<SolverTrajectory>,
    /// First coordinate of the instantaneous optimum, per step.
    pub target_coord0: Vec<f64>,
    pub gamma: f64,
    pub bounds: CurvatureBounds,
    pub edge_count: usize,
}

enum SolverInstance {
    Esom { config: EsomConfig, state: SolverState },
    Extra { eta: f64, state: ExtraState },
    Nn0 { c: f64, x: DVector<f64> },
    Dgd { eta: f64, x: DVector<f64> },
}

impl SolverInstance {
    fn step(
        &mut self,
        obj: &dyn DynamicObjective,
        g: &NetworkTopology,
        w: &WeightMatrix,
        t: usize,
    ) -> Result<()> {
        match self {
            Self::Esom { config, state } => {
                *state = esom_step(obj, g, w, config, state, t)?;
            }
            Self::Extra { eta, state } => {
                *state = extra_step(obj, g, w, *eta, state, t, None);
            }
            Self::Nn0 { c, x } => {
                *x = nn0_step(obj, g, w, *c, x, t, None)?;
            }
            Self::Dgd { eta, x } => {
                *x = dgd_step(obj, g, w, *eta, x, t, None);
            }
        }
        Ok(())
    }

    fn x(&self) -> &DVector<f64> {
        match self {
            Self::Esom { state, .. } => &state.x,
            Self::Extra { state, .. } => &state.x,
            Self::Nn0 { x, .. } => x,
            Self::Dgd { x, .. } => x,
        }
    }

    fn esom_parts(&self) -> Option<(&EsomConfig, &DVector<f64>)> {
        match self {
            Self::Esom { config, state } => Some((config, &state.q)),
            _ => None,
        }
    }
}

/// Per-epoch oracle cache: the instantaneous optimum is constant between
/// change points, so it is solved once per epoch.
struct EpochOracle {
    x_star: DVector<f64>,
    v_star: DVector<f64>,
    grad_at_opt: DVector<f64>,
    coord0: f64,
    block: DVector<f64>,
}

struct OracleCache<'a> {
    obj: &'a DynamicLeastSquares,
    pinv_sqrt: Option<&'a DMatrix<f64>>,
    entries: Vec<Option<EpochOracle>>,
}

impl<'a> OracleCache<'a> {
    fn get(&mut self, t: usize) -> Result<&EpochOracle> {
        let e = t / self.obj.change_period();
        if self.entries.len() <= e {
            self.entries.resize_with(e + 1, || None);
        }
        if self.entries[e].is_none() {
            let block = solve_instantaneous_optimum(self.obj, t)?;
            let x_star = stack_consensus(&block, self.obj.n());
            let grad_at_opt = self.obj.stacked_gradient(t, &x_star);
            let v_star = match self.pinv_sqrt {
                Some(pinv) => -(pinv * &grad_at_opt),
                None => DVector::zeros(x_star.len()),
            };
            self.entries[e] = Some(EpochOracle {
                coord0: block[0],
                block,
                x_star,
                v_star,
                grad_at_opt,
            });
        }
        Ok(self.entries[e].as_ref().unwrap())
    }
}

fn resolve_solver(
    spec: &SolverSpec,
    obj: &DynamicLeastSquares,
    g: &NetworkTopology,
    w: &WeightMatrix,
    x0: &DVector<f64>,
) -> Result<(SolverInstance, ResolvedSolver)> {
    let label = spec.resolved_label();
    match spec.name.as_str() {
        "esom" => {
            let (alpha, epsilon, tuned) = match (spec.alpha, spec.epsilon) {
                (Some(a), Some(e)) => (a, e, false),
                _ => {
                    let (a, e) = tune_esom(obj, g, w, spec.k, x0, 0)?;
                    (spec.alpha.unwrap_or(a), spec.epsilon.unwrap_or(e), true)
                }
            };
            let config = EsomConfig::new(alpha, epsilon, spec.k)?;
            let mut state = SolverState::from_x(x0.clone());
            state.t = 0;
            Ok((
                SolverInstance::Esom { config, state },
                ResolvedSolver {
                    name: spec.name.clone(),
                    label,
                    k: Some(spec.k),
                    alpha: Some(alpha),
                    epsilon: Some(epsilon),
                    step: None,
                    auto_tuned: tuned,
                },
            ))
        }
        name @ ("extra" | "nn0" | "dgd") => {
            let method = match name {
                "extra" => BaselineMethod::Extra,
                "nn0" => BaselineMethod::Nn0,
                _ => BaselineMethod::Dgd,
            };
            let (step, tuned) = match spec.step {
                Some(s) => (s, false),
                None => (tune_baseline(obj, g, w, method, x0, 0)?, true),
            };
            let instance = match method {
                BaselineMethod::Extra => {
                    SolverInstance::Extra { eta: step, state: ExtraState::new(x0.clone()) }
                }
                BaselineMethod::Nn0 => SolverInstance::Nn0 { c: step, x: x0.clone() },
                BaselineMethod::Dgd => SolverInstance::Dgd { eta: step, x: x0.clone() },
            };
            Ok((
                instance,
                ResolvedSolver {
                    name: spec.name.clone(),
                    label,
                    k: None,
                    alpha: None,
                    epsilon: None,
                    step: Some(step),
                    auto_tuned: tuned,
                },
            ))
        }
        other => Err(DesomError::UnknownSolver(other.into())),
    }
}

/// Prescribed initialization: `x_{i,0} = x̃_0* + d · u_i` with `u_i` a
/// seeded random unit vector, so every node starts at distance `d` from
/// the initial target.
pub fn initial_iterate(
    target0: &DVector<f64>,
    n: usize,
    init_distance: f64,
    seed: u64,
) -> DVector<f64> {
    let p = target0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x0 = DVector::zeros(n * p);
    for i in 0..n {
        let mut u: DVector<f64> = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
        let norm = u.norm();
        if norm < 1e-12 {
            u = DVector::from_element(p, 1.0 / (p as f64).sqrt());
        } else {
            u /= norm;
        }
        x0.rows_mut(i * p, p).copy_from(&(target0 + u * init_distance));
    }
    x0
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let pc = &config.problem;
    let instance = DynamicLeastSquares::make_with_noise(
        pc.n,
        pc.p,
        pc.horizon + 1,
        pc.change_period,
        pc.trajectory_scale,
        config.seeds.problem,
        pc.noise_std,
    )?;
    run_experiment_on_instance(config, &instance)
}

/// Runs an experiment against a pre-built (e.g. replayed) instance. The
/// instance's dimensions override the config's problem block.
pub fn run_experiment_on_instance(
    config: &ExperimentConfig,
    instance: &DynamicLeastSquares,
) -> Result<ExperimentResult> {
    let (n, p) = (instance.n(), instance.p());
    let np = n * p;
    let horizon = instance.horizon().saturating_sub(1).max(1);

    let g = NetworkTopology::generate_random(n, config.problem.r_c, config.seeds.graph)?;
    let w = WeightMatrix::metropolis(&g);
    let report = w.validate(&g)?;
    if !report.pass() {
        return Err(DesomError::DegenerateWeights(format!("{report}")));
    }
    let gamma = w.gamma()?;
    let sample_times: Vec<usize> =
        (0..3).map(|k| (k * instance.change_period().min(horizon)).min(horizon)).collect();
    let bounds = estimate_bounds(instance, &sample_times, 2, config.seeds.problem)?;

    // Dense dual-recovery operators, only when Lyapunov metrics are on and
    // the size guard admits them.
    let want_lyapunov = config.metrics.lyapunov && np <= DENSE_SIZE_LIMIT;
    let dense_ops = if want_lyapunov {
        let imz = dense_i_minus_z(&w, p)?;
        Some((sqrt_psd(&imz)?, pinv_sqrt_psd(&imz)?))
    } else {
        None
    };

    let target0 = instance.target(0);
    let x0 = initial_iterate(&target0, n, config.problem.init_distance, config.seeds.init);

    let mut solvers = Vec::new();
    for spec in &config.solvers {
        solvers.push(resolve_solver(spec, instance, &g, &w, &x0)?);
    }

    let mut oracle = OracleCache {
        obj: instance,
        pinv_sqrt: dense_ops.as_ref().map(|(_, pinv)| pinv),
        entries: Vec::new(),
    };

    let mut trajectories: Vec<SolverTrajectory> = solvers
        .iter()
        .map(|(_, resolved)| SolverTrajectory {
            label: resolved.label.clone(),
            rows: Vec::new(),
            diverged_at: None,
            resolved: resolved.clone(),
            node0_coord0: Vec::new(),
        })
        .collect();
    let mut target_coord0 = Vec::with_capacity(horizon);

    for t in 1..=horizon {
        // Cur/prev oracle quantities for the drift term.
        let (x_star, v_star, grad_cur, block, coord0) = {
            let cur = oracle.get(t)?;
            (
                cur.x_star.clone(),
                cur.v_star.clone(),
                cur.grad_at_opt.clone(),
                cur.block.clone(),
                cur.coord0,
            )
        };
        let (x_star_prev, grad_prev) = {
            let prev = oracle.get(t - 1)?;
            (prev.x_star.clone(), prev.grad_at_opt.clone())
        };
        target_coord0.push(coord0);

        for ((solver, resolved), traj) in solvers.iter_mut().zip(trajectories.iter_mut()) {
            if traj.diverged_at.is_some() {
                continue;
            }
            let started = Instant::now();
            let step_result = solver.step(instance, &g, &w, t);
            let wall_ms = if config.metrics.record_wall_ms {
                started.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            };
            let x = solver.x();
            let finite = x.iter().all(|v| v.is_finite());
            let e_t = if finite { error_metric(x, &block) } else { f64::INFINITY };
            if step_result.is_err() || !finite || e_t > DIVERGENCE_CUTOFF {
                traj.diverged_at = Some(t);
                continue;
            }
            let primal_err = (x - &x_star).norm();
            let (alpha, epsilon) = resolved
                .alpha
                .zip(resolved.epsilon)
                .unwrap_or((1.0, 1.0));
            let lyapunov = match (solver.esom_parts(), dense_ops.as_ref()) {
                (Some((cfg, q)), Some((sqrt, pinv))) => {
                    let v = pinv * q;
                    let recovery_residual = (sqrt * &v - q).norm();
                    if recovery_residual > 1e-6 * q.norm().max(1.0) {
                        return Err(DesomError::NonConvergence(format!(
                            "q left the column space of I-Z at t={t} (residual {recovery_residual:.3e})"
                        )));
                    }
                    lyapunov_metric(x, &v, &x_star, &v_star, cfg.alpha, cfg.epsilon)
                }
                // Without a dual, the G-norm reduces to the primal error.
                _ => primal_err,
            };
            let drift = if config.metrics.drift {
                drift_metric(&x_star_prev, &x_star, &grad_prev, &grad_cur, alpha, epsilon, gamma)
            } else {
                0.0
            };
            traj.rows.push(TrajectoryRow { t, e_t, lyapunov, primal_err, drift, wall_ms });
            traj.node0_coord0.push(x[0]);
        }
    }

    Ok(ExperimentResult {
        config: config.clone(),
        trajectories,
        target_coord0,
        gamma,
        bounds,
        edge_count: g.edges().len(),
    })
}

/// Lyapunov series ‖u_t − u*‖_G of an ESOM run on the problem frozen at
/// `t_freeze`, for contraction fitting.
pub fn static_lyapunov_series(
    obj: &dyn DynamicObjective,
    g: &NetworkTopology,
    w: &WeightMatrix,
    config: &EsomConfig,
    x0: &DVector<f64>,
    steps: usize,
    t_freeze: usize,
) -> Result<Vec<f64>> {
    let p = obj.p();
    let frozen = crate::objective::FrozenObjective::new(obj, t_freeze);
    let imz = dense_i_minus_z(w, p)?;
    let sqrt = sqrt_psd(&imz)?;
    let pinv = pinv_sqrt_psd(&imz)?;
    let block = solve_instantaneous_optimum(&frozen, 0)?;
    let x_star = stack_consensus(&block, obj.n());
    let grad = frozen.stacked_gradient(0, &x_star);
    let v_star = -(&pinv * &grad);

    let mut state = SolverState::from_x(x0.clone());
    let mut series = Vec::with_capacity(steps);
    for _ in 0..steps {
        state = esom_step(&frozen, g, w, config, &state, 0)?;
        let v = &pinv * &state.q;
        if (&sqrt * &v - &state.q).norm() > 1e-6 * state.q.norm().max(1.0) {
            return Err(DesomError::NonConvergence("q left the column space of I-Z".into()));
        }
        series.push(lyapunov_metric(&state.x, &v, &x_star, &v_star, config.alpha, config.epsilon));
    }
    Ok(series)
}
