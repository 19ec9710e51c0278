//! Centralized ground truth for tests and metrics.
//!
//! Everything here is deliberately dense and desk-scale: instantaneous
//! optima, minimum-norm KKT duals, the matrix square root of I−Z, the exact
//! proximal-method-of-multipliers stepper, and the global-form ESOM stepper
//! that carries the dual variable `v` explicitly. The decentralized solver
//! never needs any of this; the harness uses it for metrics and the test
//! suites use it as an independent reference.

use nalgebra::{DMatrix, DVector};

use crate::esom::{build_split_operators, EsomConfig, DENSE_SIZE_LIMIT};
use crate::objective::DynamicObjective;
use crate::topology::{NetworkTopology, WeightMatrix, ZERO_EIG_THRESHOLD};
use crate::{DesomError, Result};

/// Negative eigenvalues of a PSD input above this magnitude are treated as
/// genuine indefiniteness; smaller ones are clipped to zero.
const NEGATIVE_EIG_SLACK: f64 = 1e-12;

fn check_dense_limit(np: usize) -> Result<()> {
    if np > DENSE_SIZE_LIMIT {
        return Err(DesomError::DenseSizeLimit { np, limit: DENSE_SIZE_LIMIT });
    }
    Ok(())
}

/// Dense lifted I−Z = (I−W) ⊗ I_p. Oracle-only materialization.
pub fn dense_i_minus_z(w: &WeightMatrix, p: usize) -> Result<DMatrix<f64>> {
    let n = w.n();
    check_dense_limit(n * p)?;
    let mut out = DMatrix::zeros(n * p, n * p);
    for i in 0..n {
        for j in 0..n {
            let entry = if i == j { 1.0 - w.entry(i, j) } else { -w.entry(i, j) };
            if entry != 0.0 {
                for d in 0..p {
                    out[(i * p + d, j * p + d)] = entry;
                }
            }
        }
    }
    Ok(out)
}

/// Symmetric PSD square root via eigendecomposition. Eigenvalues in
/// `[-1e-12, 0)` are clipped to zero; anything more negative is rejected.
/// Eigenvalues below the zero-eigenvalue threshold are also treated as
/// exact zeros: taking the square root of an eigenvalue that is only
/// round-off away from zero would amplify it to ~1e-8 and leak a spurious
/// component along the null space.
pub fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (q, lambda) = psd_eigen(m)?;
    rebuild(&q, &lambda, |l| if l > ZERO_EIG_THRESHOLD { l.sqrt() } else { 0.0 })
}

/// Moore–Penrose pseudo-inverse of the PSD square root of `m`: the linear
/// map sending w in the column space of `m` to the least-norm solution of
/// `m^{1/2} v = w`.
pub fn pinv_sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (q, lambda) = psd_eigen(m)?;
    rebuild(&q, &lambda, |l| if l > ZERO_EIG_THRESHOLD { 1.0 / l.sqrt() } else { 0.0 })
}

fn psd_eigen(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if m.nrows() != m.ncols() {
        return Err(DesomError::DimensionMismatch { expected: m.nrows(), actual: m.ncols() });
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-10 {
        return Err(DesomError::InvalidParameter(format!(
            "matrix is not symmetric (defect {asym:.3e})"
        )));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut lambda = eig.eigenvalues;
    for l in lambda.iter_mut() {
        if *l < 0.0 {
            if *l < -NEGATIVE_EIG_SLACK {
                return Err(DesomError::NotPositiveDefinite(format!(
                    "eigenvalue {l:.3e} below the PSD clipping slack"
                )));
            }
            *l = 0.0;
        }
    }
    Ok((eig.eigenvectors, lambda))
}

fn rebuild(
    q: &DMatrix<f64>,
    lambda: &DVector<f64>,
    f: impl Fn(f64) -> f64,
) -> Result<DMatrix<f64>> {
    let n = q.nrows();
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        let col = q.column(k);
        let fl = f(lambda[k]);
        if fl != 0.0 {
            out += (&col * col.transpose()) * fl;
        }
    }
    Ok(out)
}

/// Instantaneous global optimum of Σ_i f_{i,t} over the shared p-vector.
/// Damped Newton to gradient norm < 1e-12; exact in one step for
/// quadratics, where it coincides with solving the stacked normal
/// equations.
pub fn solve_instantaneous_optimum(
    obj: &dyn DynamicObjective,
    t: usize,
) -> Result<DVector<f64>> {
    let p = obj.p();
    let mut x = DVector::zeros(p);
    let aggregate_grad = |x: &DVector<f64>| -> DVector<f64> {
        (0..obj.n()).map(|i| obj.gradient(i, t, x)).fold(DVector::zeros(p), |a, b| a + b)
    };
    let mut grad = aggregate_grad(&x);
    for _ in 0..200 {
        if grad.norm() < 1e-12 {
            return Ok(x);
        }
        let mut hess = DMatrix::zeros(p, p);
        for i in 0..obj.n() {
            hess += obj.hessian(i, t, &x);
        }
        let step = hess
            .cholesky()
            .ok_or_else(|| DesomError::NotPositiveDefinite("aggregate Hessian".into()))?
            .solve(&grad);
        // Backtrack on the gradient norm if the full step overshoots.
        let mut scale = 1.0;
        for _ in 0..40 {
            let candidate = &x - &step * scale;
            let cg = aggregate_grad(&candidate);
            if cg.norm() < grad.norm() || cg.norm() < 1e-12 {
                x = candidate;
                grad = cg;
                break;
            }
            scale *= 0.5;
        }
    }
    if grad.norm() < 1e-12 {
        Ok(x)
    } else {
        Err(DesomError::NonConvergence(format!(
            "Newton stalled with gradient norm {:.3e} at t={t}",
            grad.norm()
        )))
    }
}

/// Stacks `n` copies of a p-block into an np-vector.
pub fn stack_consensus(block: &DVector<f64>, n: usize) -> DVector<f64> {
    let p = block.len();
    let mut out = DVector::zeros(n * p);
    for i in 0..n {
        out.rows_mut(i * p, p).copy_from(block);
    }
    out
}

/// Instantaneous optimum with its minimum-norm KKT dual.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    /// Stacked optimum; all p-blocks equal.
    pub x_star: DVector<f64>,
    /// Minimum-norm dual: the column-space solution of
    /// ∇f_t(x*) + (I−Z)^{1/2} v* = 0.
    pub v_star: DVector<f64>,
    pub kkt_residual: f64,
}

/// Minimum-norm dual at a consensus-feasible optimum:
/// `v* = −pinv((I−Z)^{1/2}) ∇f_t(x*)`. Errors if the KKT residual exceeds
/// 1e-8, which signals that `x_star` is not actually optimal.
pub fn optimal_dual(
    obj: &dyn DynamicObjective,
    w: &WeightMatrix,
    x_star: &DVector<f64>,
    t: usize,
) -> Result<(DVector<f64>, f64)> {
    let p = obj.p();
    let imz = dense_i_minus_z(w, p)?;
    let sqrt = sqrt_psd(&imz)?;
    let pinv = pinv_sqrt_psd(&imz)?;
    let grad = obj.stacked_gradient(t, x_star);
    let v_star = -(&pinv * &grad);
    let residual = (&grad + &sqrt * &v_star).norm();
    if residual > 1e-8 {
        return Err(DesomError::NonConvergence(format!(
            "KKT residual {residual:.3e}: point is not optimal"
        )));
    }
    Ok((v_star, residual))
}

/// Full oracle solve at time `t`: instantaneous optimum, consensus stack,
/// and minimum-norm dual.
pub fn solve_oracle(
    obj: &dyn DynamicObjective,
    w: &WeightMatrix,
    t: usize,
) -> Result<OracleSolution> {
    let block = solve_instantaneous_optimum(obj, t)?;
    let x_star = stack_consensus(&block, obj.n());
    let (v_star, kkt_residual) = optimal_dual(obj, w, &x_star, t)?;
    Ok(OracleSolution { x_star, v_star, kkt_residual })
}

/// One step of the exact proximal method of multipliers:
/// `x_t = argmin_x { L_t(x, v_{t−1}) + (ε/2)‖x − x_{t−1}‖² }`,
/// `v_t = v_{t−1} + α(I−Z)^{1/2} x_t`.
/// The inner minimization runs Newton to first-order residual 1e-12
/// (a single linear solve for quadratics).
pub fn pmm_step(
    obj: &dyn DynamicObjective,
    w: &WeightMatrix,
    config: &EsomConfig,
    x_prev: &DVector<f64>,
    v_prev: &DVector<f64>,
    t: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (n, p) = (obj.n(), obj.p());
    let np = n * p;
    check_dense_limit(np)?;
    let imz = dense_i_minus_z(w, p)?;
    let sqrt = sqrt_psd(&imz)?;
    let sv = &sqrt * v_prev;

    let residual = |x: &DVector<f64>| -> DVector<f64> {
        obj.stacked_gradient(t, x) + &sv + (&imz * x) * config.alpha + (x - x_prev) * config.epsilon
    };
    let mut x = x_prev.clone();
    let mut r = residual(&x);
    for _ in 0..200 {
        if r.norm() < 1e-12 {
            break;
        }
        let mut jac = imz.clone() * config.alpha;
        for i in 0..n {
            let xi = x.rows(i * p, p).into_owned();
            let h = obj.hessian(i, t, &xi);
            let current = jac.view((i * p, i * p), (p, p)).clone_owned();
            jac.view_mut((i * p, i * p), (p, p)).copy_from(&(h + current));
        }
        for d in 0..np {
            jac[(d, d)] += config.epsilon;
        }
        let step = jac
            .lu()
            .solve(&r)
            .ok_or_else(|| DesomError::NonConvergence("singular PMM inner system".into()))?;
        x -= step;
        r = residual(&x);
    }
    if r.norm() >= 1e-10 {
        return Err(DesomError::NonConvergence(format!(
            "PMM inner solve stalled at residual {:.3e}",
            r.norm()
        )));
    }
    let v_next = v_prev + (&sqrt * &x) * config.alpha;
    Ok((x, v_next))
}

/// How the global-form ESOM stepper applies the Hessian inverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HinvMode {
    /// Exact dense `H_t⁻¹`.
    Exact,
    /// Truncated series `Ĥ_t⁻¹(K)`.
    Truncated(usize),
}

/// One step of the global-matrix ESOM recursion carrying the dual `v`:
/// `x_t = x_{t−1} − Hinv [∇f_t(x_{t−1}) + (I−Z)^{1/2} v_{t−1} + α(I−Z)x_{t−1}]`,
/// `v_t = v_{t−1} + α(I−Z)^{1/2} x_t` (the same dual rule as [`pmm_step`]).
pub fn exact_esom_step(
    obj: &dyn DynamicObjective,
    g: &NetworkTopology,
    w: &WeightMatrix,
    config: &EsomConfig,
    mode: HinvMode,
    x_prev: &DVector<f64>,
    v_prev: &DVector<f64>,
    t: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (n, p) = (obj.n(), obj.p());
    check_dense_limit(n * p)?;
    let imz = dense_i_minus_z(w, p)?;
    let sqrt = sqrt_psd(&imz)?;
    let grad = obj.stacked_gradient(t, x_prev) + &sqrt * v_prev + (&imz * x_prev) * config.alpha;
    let split = build_split_operators(obj, g, w, config, x_prev, t)?;
    let step = match mode {
        HinvMode::Exact => {
            let mut h = split.dense_d()? - split.dense_b()?;
            // Symmetrize away assembly round-off before factoring.
            h = (h.clone() + h.transpose()) * 0.5;
            h.cholesky()
                .ok_or_else(|| DesomError::NotPositiveDefinite("dense H_t".into()))?
                .solve(&grad)
        }
        HinvMode::Truncated(k) => split.dense_truncated_inverse(k)? * &grad,
    };
    let x_next = x_prev - step;
    let v_next = v_prev + (&sqrt * &x_next) * config.alpha;
    Ok((x_next, v_next))
}
