//! Time-varying decentralized objectives.
//!
//! Each node `i` holds an instantaneous local function `f_{i,t}` observed at
//! discrete time `t`; the network tracks the minimizer of their sum. The
//! [`DynamicObjective`] trait exposes value/gradient/Hessian access; the
//! concrete family here is the dynamic least-squares problem with
//! time-invariant regressors and a piecewise-constant target trajectory.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{DesomError, Result};

/// Per-node, per-time differentiable function family.
///
/// Accessors are pure; instances are immutable after construction and safe
/// for concurrent evaluation across nodes.
pub trait DynamicObjective {
    fn n(&self) -> usize;
    fn p(&self) -> usize;
    fn value(&self, i: usize, t: usize, x: &DVector<f64>) -> f64;
    fn gradient(&self, i: usize, t: usize, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, i: usize, t: usize, x: &DVector<f64>) -> DMatrix<f64>;

    /// Gradient of the stacked global function, block i being
    /// ∇f_{i,t}(x_i).
    fn stacked_gradient(&self, t: usize, x: &DVector<f64>) -> DVector<f64> {
        let (n, p) = (self.n(), self.p());
        assert_eq!(x.len(), n * p);
        let mut g = DVector::zeros(n * p);
        for i in 0..n {
            let gi = self.gradient(i, t, &x.rows(i * p, p).into_owned());
            g.rows_mut(i * p, p).copy_from(&gi);
        }
        g
    }

    /// Sum of local values at a stacked point.
    fn stacked_value(&self, t: usize, x: &DVector<f64>) -> f64 {
        let p = self.p();
        (0..self.n()).map(|i| self.value(i, t, &x.rows(i * p, p).into_owned())).sum()
    }
}

/// Wraps an objective with its time index pinned, yielding the static
/// version of the problem as seen at one instant.
pub struct FrozenObjective<'a> {
    inner: &'a dyn DynamicObjective,
    t: usize,
}

impl<'a> FrozenObjective<'a> {
    pub fn new(inner: &'a dyn DynamicObjective, t: usize) -> Self {
        Self { inner, t }
    }
}

impl DynamicObjective for FrozenObjective<'_> {
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn p(&self) -> usize {
        self.inner.p()
    }

    fn value(&self, i: usize, _t: usize, x: &DVector<f64>) -> f64 {
        self.inner.value(i, self.t, x)
    }

    fn gradient(&self, i: usize, _t: usize, x: &DVector<f64>) -> DVector<f64> {
        self.inner.gradient(i, self.t, x)
    }

    fn hessian(&self, i: usize, _t: usize, x: &DVector<f64>) -> DMatrix<f64> {
        self.inner.hessian(i, self.t, x)
    }
}

/// Curvature constants of an objective family: eigenvalues of every local
/// Hessian lie in `[m, M]` and Hessians are `L`-Lipschitz in the argument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureBounds {
    pub m: f64,
    pub big_m: f64,
    pub l: f64,
}

/// Dynamic least-squares instance: `f_{i,t}(x) = (1/2)‖H_i x − y_{i,t}‖²`
/// with time-invariant regressors `H_i` and observations that jump every
/// `change_period` steps so the global minimizer follows
/// `x̃_t* = |sin(πt/500)| x̃_0*` at change points.
///
/// By default the construction is noise-free (`y_{i,t} = H_i x̃_t*`), which
/// pins the global minimizer to the target trajectory exactly. A nonzero
/// `noise_std` adds a per-epoch Gaussian offset to each node's observation;
/// this breaks the exact-trajectory identity and the oracle must then be
/// used to recover the true minimizer.
#[derive(Debug, Clone)]
pub struct DynamicLeastSquares {
    n: usize,
    p: usize,
    horizon: usize,
    change_period: usize,
    regressors: Vec<DMatrix<f64>>,
    grams: Vec<DMatrix<f64>>,
    base_target: DVector<f64>,
    /// Per-epoch observation vectors, `observations[e][i]`.
    observations: Vec<Vec<DVector<f64>>>,
    noise_std: f64,
    params: Option<LsParams>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LsParams {
    n: usize,
    p: usize,
    horizon: usize,
    change_period: usize,
    trajectory_scale: f64,
    seed: u64,
    noise_std: f64,
}

const SINGULAR_VALUE_FLOOR: f64 = 1e-6;
const MAX_REGRESSOR_REDRAWS: usize = 100;
/// Period of the sine modulating the target trajectory.
const TARGET_SINE_PERIOD: f64 = 500.0;

impl DynamicLeastSquares {
    pub fn make(
        n: usize,
        p: usize,
        horizon: usize,
        change_period: usize,
        trajectory_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        Self::make_with_noise(n, p, horizon, change_period, trajectory_scale, seed, 0.0)
    }

    pub fn make_with_noise(
        n: usize,
        p: usize,
        horizon: usize,
        change_period: usize,
        trajectory_scale: f64,
        seed: u64,
        noise_std: f64,
    ) -> Result<Self> {
        if n < 1 || p < 1 || horizon < 1 || change_period < 1 {
            return Err(DesomError::InvalidParameter(
                "n, p, horizon, change_period must all be >= 1".into(),
            ));
        }
        if noise_std < 0.0 {
            return Err(DesomError::InvalidParameter("noise_std must be >= 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut regressors = Vec::with_capacity(n);
        for i in 0..n {
            regressors.push(draw_regressor(p, &mut rng, i)?);
        }
        let mut base_target: DVector<f64> = draw_normal_vector(p, &mut rng);
        let norm = base_target.norm();
        if norm < 1e-12 {
            base_target = DVector::from_element(p, trajectory_scale / (p as f64).sqrt());
        } else {
            base_target *= trajectory_scale / norm;
        }
        let epochs = horizon.div_ceil(change_period);
        let mut observations = Vec::with_capacity(epochs);
        for e in 0..epochs {
            let target = epoch_target(e, change_period, &base_target);
            let mut per_node = Vec::with_capacity(n);
            for h in &regressors {
                let mut y = h * &target;
                if noise_std > 0.0 {
                    y += draw_normal_vector(p, &mut rng) * noise_std;
                }
                per_node.push(y);
            }
            observations.push(per_node);
        }
        let grams = regressors.iter().map(|h| h.transpose() * h).collect();
        Ok(Self {
            n,
            p,
            horizon,
            change_period,
            regressors,
            grams,
            base_target,
            observations,
            noise_std,
            params: Some(LsParams {
                n,
                p,
                horizon,
                change_period,
                trajectory_scale,
                seed,
                noise_std,
            }),
        })
    }

    /// Builds a static instance from explicit regressors and observations;
    /// the "trajectory" is the single global minimizer of the stacked
    /// normal equations. Mostly useful in tests and for custom quadratics.
    pub fn from_static_parts(
        regressors: Vec<DMatrix<f64>>,
        observations: Vec<DVector<f64>>,
        horizon: usize,
    ) -> Result<Self> {
        let n = regressors.len();
        if n == 0 || observations.len() != n {
            return Err(DesomError::InvalidParameter(
                "need one observation vector per regressor".into(),
            ));
        }
        let p = regressors[0].ncols();
        for h in &regressors {
            if h.ncols() != p || h.nrows() < p {
                return Err(DesomError::InvalidParameter(
                    "regressors must share the column count and have rows >= columns".into(),
                ));
            }
        }
        let grams: Vec<DMatrix<f64>> = regressors.iter().map(|h| h.transpose() * h).collect();
        // Global minimizer from the stacked normal equations.
        let mut lhs = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        for (h, y) in regressors.iter().zip(&observations) {
            lhs += h.transpose() * h;
            rhs += h.transpose() * y;
        }
        let base_target = lhs
            .cholesky()
            .ok_or_else(|| DesomError::NotPositiveDefinite("stacked Gram matrix".into()))?
            .solve(&rhs);
        Ok(Self {
            n,
            p,
            horizon: horizon.max(1),
            change_period: usize::MAX,
            regressors,
            grams,
            base_target,
            observations: vec![observations],
            noise_std: 0.0,
            params: None,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn change_period(&self) -> usize {
        self.change_period
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn regressor(&self, i: usize) -> &DMatrix<f64> {
        &self.regressors[i]
    }

    fn epoch(&self, t: usize) -> usize {
        if self.change_period == usize::MAX {
            0
        } else {
            (t / self.change_period).min(self.observations.len() - 1)
        }
    }

    /// Target trajectory point x̃_t*. Equals the global minimizer only in
    /// the noise-free construction.
    pub fn target(&self, t: usize) -> DVector<f64> {
        epoch_target(self.epoch(t), self.change_period, &self.base_target)
    }

    /// True if `t` is a change point, i.e. the first step of a new epoch.
    pub fn is_change_point(&self, t: usize) -> bool {
        t > 0 && self.change_period != usize::MAX && t % self.change_period == 0
    }

    pub fn observation(&self, i: usize, t: usize) -> &DVector<f64> {
        &self.observations[self.epoch(t)][i]
    }

    pub fn to_json(&self) -> Result<String> {
        let params = self.params.clone().ok_or_else(|| {
            DesomError::Config("instance was not built from parameters; cannot serialize".into())
        })?;
        serde_json::to_string_pretty(&params).map_err(|e| DesomError::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: LsParams =
            serde_json::from_str(text).map_err(|e| DesomError::Parse(e.to_string()))?;
        Self::make_with_noise(
            params.n,
            params.p,
            params.horizon,
            params.change_period,
            params.trajectory_scale,
            params.seed,
            params.noise_std,
        )
    }
}

fn epoch_target(epoch: usize, change_period: usize, base: &DVector<f64>) -> DVector<f64> {
    if epoch == 0 || change_period == usize::MAX {
        return base.clone();
    }
    let t = (epoch * change_period) as f64;
    base * (std::f64::consts::PI * t / TARGET_SINE_PERIOD).sin().abs()
}

fn draw_regressor(p: usize, rng: &mut ChaCha8Rng, node: usize) -> Result<DMatrix<f64>> {
    for _ in 0..MAX_REGRESSOR_REDRAWS {
        let h = DMatrix::from_fn(p, p, |_, _| StandardNormal.sample(rng));
        let sigma_min = h.clone().svd(false, false).singular_values.min();
        if sigma_min >= SINGULAR_VALUE_FLOOR {
            return Ok(h);
        }
    }
    Err(DesomError::NonConvergence(format!(
        "could not draw a well-conditioned regressor for node {node}"
    )))
}

fn draw_normal_vector(p: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(p, |_, _| StandardNormal.sample(rng))
}

impl DynamicObjective for DynamicLeastSquares {
    fn n(&self) -> usize {
        self.n
    }

    fn p(&self) -> usize {
        self.p
    }

    fn value(&self, i: usize, t: usize, x: &DVector<f64>) -> f64 {
        let r = &self.regressors[i] * x - self.observation(i, t);
        0.5 * r.norm_squared()
    }

    fn gradient(&self, i: usize, t: usize, x: &DVector<f64>) -> DVector<f64> {
        self.regressors[i].transpose() * (&self.regressors[i] * x - self.observation(i, t))
    }

    fn hessian(&self, i: usize, _t: usize, _x: &DVector<f64>) -> DMatrix<f64> {
        self.grams[i].clone()
    }
}

/// Empirically estimates curvature bounds by sampling Hessians over the
/// given times and random evaluation points. For quadratics the Lipschitz
/// estimate comes out exactly 0.
pub fn estimate_bounds(
    obj: &dyn DynamicObjective,
    sample_times: &[usize],
    points_per_sample: usize,
    seed: u64,
) -> Result<CurvatureBounds> {
    if sample_times.is_empty() || points_per_sample == 0 {
        return Err(DesomError::InvalidParameter("empty sample set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = obj.p();
    let mut m = f64::INFINITY;
    let mut big_m = f64::NEG_INFINITY;
    let mut l: f64 = 0.0;
    for &t in sample_times {
        for i in 0..obj.n() {
            let mut prev: Option<(DVector<f64>, DMatrix<f64>)> = None;
            for _ in 0..points_per_sample {
                let x = draw_normal_vector(p, &mut rng);
                let h = obj.hessian(i, t, &x);
                let sym = (h.clone() + h.transpose()) * 0.5;
                let eigs = sym.symmetric_eigen().eigenvalues;
                m = m.min(eigs.min());
                big_m = big_m.max(eigs.max());
                if let Some((px, ph)) = prev.take() {
                    let dx = (&x - &px).norm();
                    if dx > 1e-12 {
                        // Spectral norm of the Hessian difference.
                        let diff = &h - &ph;
                        let sigma = diff.svd(false, false).singular_values.max();
                        l = l.max(sigma / dx);
                    }
                }
                prev = Some((x, h));
            }
        }
    }
    if m < 1e-9 {
        return Err(DesomError::LostStrongConvexity(m));
    }
    Ok(CurvatureBounds { m, big_m, l })
}
