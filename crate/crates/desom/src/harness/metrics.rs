//! Tracking-error metrics and the empirical contraction-constant fit.

use nalgebra::DVector;

use crate::{DesomError, Result};

/// Tracking error `e_t = max_i ‖x_{i,t} − x̃_t*‖_∞`: the worst coordinate
/// deviation across all nodes from the instantaneous target.
pub fn error_metric(x_stacked: &DVector<f64>, x_tilde_star: &DVector<f64>) -> f64 {
    let p = x_tilde_star.len();
    assert_eq!(x_stacked.len() % p, 0, "stacked length must be a multiple of p");
    let n = x_stacked.len() / p;
    let mut worst = 0.0f64;
    for i in 0..n {
        for s in 0..p {
            worst = worst.max((x_stacked[i * p + s] - x_tilde_star[s]).abs());
        }
    }
    worst
}

/// Lyapunov norm `‖u − u*‖_G = (‖x − x*‖² + αε‖v − v*‖²)^{1/2}` with
/// `G = diag(I, εα I)`.
pub fn lyapunov_metric(
    x: &DVector<f64>,
    v: &DVector<f64>,
    x_star: &DVector<f64>,
    v_star: &DVector<f64>,
    alpha: f64,
    epsilon: f64,
) -> f64 {
    ((x - x_star).norm_squared() + alpha * epsilon * (v - v_star).norm_squared()).sqrt()
}

/// Dynamic optimality drift
/// `d_t = ‖x*_{t−1} − x*_t‖ + (√(αε)/√γ) ‖∇f_t(x*_t) − ∇f_{t−1}(x*_{t−1})‖`
/// over stacked quantities.
pub fn drift_metric(
    x_star_prev: &DVector<f64>,
    x_star_cur: &DVector<f64>,
    grad_prev: &DVector<f64>,
    grad_cur: &DVector<f64>,
    alpha: f64,
    epsilon: f64,
    gamma: f64,
) -> f64 {
    (x_star_prev - x_star_cur).norm()
        + ((alpha * epsilon).sqrt() / gamma.sqrt()) * (grad_cur - grad_prev).norm()
}

/// Values below this are treated as numerical floor when fitting the
/// contraction constant.
pub const CONTRACTION_FLOOR: f64 = 1e-12;

/// Fraction of leading samples discarded before fitting.
pub const CONTRACTION_BURN_IN: f64 = 0.2;

/// Fits the contraction constant from a static-run Lyapunov series:
/// `δ̂ = median over steps of (‖u_{t−1} − u*‖ / ‖u_t − u*‖)² − 1`.
/// The first 20% of the series is discarded as burn-in and steps at the
/// numerical floor are skipped; the median makes the fit robust to
/// floor effects.
pub fn fit_contraction(lyapunov: &[f64]) -> Result<f64> {
    let burn = ((lyapunov.len() as f64) * CONTRACTION_BURN_IN).ceil() as usize;
    let mut ratios = Vec::new();
    for t in (burn + 1)..lyapunov.len() {
        let (prev, cur) = (lyapunov[t - 1], lyapunov[t]);
        if prev > CONTRACTION_FLOOR && cur > CONTRACTION_FLOOR {
            let r = prev / cur;
            ratios.push(r * r - 1.0);
        }
    }
    if ratios.is_empty() {
        return Err(DesomError::NotContracting(
            "no usable steps above the numerical floor after burn-in".into(),
        ));
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = ratios.len() / 2;
    let delta = if ratios.len() % 2 == 1 {
        ratios[mid]
    } else {
        0.5 * (ratios[mid - 1] + ratios[mid])
    };
    if delta <= 0.0 {
        return Err(DesomError::NotContracting(format!(
            "fitted delta {delta:.3e} is not positive"
        )));
    }
    Ok(delta)
}
