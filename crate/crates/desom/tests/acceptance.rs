//! End-to-end acceptance suite. Each test checks one advertised property
//! and prints a single pass/fail line (visible with `--nocapture`); the
//! assertions carry the same condition so `cargo test` enforces them.

use desom::baselines::BaselineMethod;
use desom::esom::{
    build_split_operators, descent_direction, esom_step, EsomConfig, SolverState,
};
use desom::harness::config::{ExperimentConfig, SolverSpec};
use desom::harness::export::export_csv;
use desom::harness::metrics::{error_metric, fit_contraction, lyapunov_metric};
use desom::harness::runner::{initial_iterate, run_experiment, static_lyapunov_series};
use desom::harness::sweep::tune_baseline;
use desom::objective::{DynamicLeastSquares, DynamicObjective};
use desom::oracle::{dense_i_minus_z, pinv_sqrt_psd, solve_oracle, stack_consensus};
use desom::topology::{NetworkTopology, WeightMatrix};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_setup(
    n: usize,
    p: usize,
    seed: u64,
) -> (DynamicLeastSquares, NetworkTopology, WeightMatrix) {
    let g = NetworkTopology::generate_random(n, 0.6, seed).unwrap();
    let w = WeightMatrix::metropolis(&g);
    let obj = DynamicLeastSquares::make_with_noise(n, p, 100, 100, 1.0, seed + 1, 0.3).unwrap();
    (obj, g, w)
}

fn random_vec(len: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}

/// Dense quadratic-approximation Hessian `∇²f_t + εI + α(I−Z)`, assembled
/// directly from the objective and the weight matrix, independently of the
/// split-operator code under test.
fn dense_hessian_reference(
    obj: &dyn DynamicObjective,
    w: &WeightMatrix,
    config: &EsomConfig,
    x: &DVector<f64>,
    t: usize,
) -> DMatrix<f64> {
    let (n, p) = (obj.n(), obj.p());
    let np = n * p;
    let mut h = DMatrix::zeros(np, np);
    for i in 0..n {
        let xi = x.rows(i * p, p).into_owned();
        h.view_mut((i * p, i * p), (p, p)).copy_from(&obj.hessian(i, t, &xi));
    }
    for i in 0..n {
        for j in 0..n {
            let imz = if i == j { 1.0 - w.entry(i, j) } else { -w.entry(i, j) };
            for d in 0..p {
                h[(i * p + d, j * p + d)] += config.alpha * imz;
            }
        }
    }
    for d in 0..np {
        h[(d, d)] += config.epsilon;
    }
    h
}

fn report(id: usize, name: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {:>2} ({name}): {} [{detail}]",
        id,
        if pass { "pass" } else { "fail" }
    );
}

#[test]
fn criterion_01_splitting_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_rel = 0.0f64;
    let mut worst_rho = 0.0f64;
    for inst in 0..20 {
        let n = rng.random_range(2..=10usize);
        let p = rng.random_range(1..=4usize);
        let (obj, g, w) = random_setup(n, p, 200 + inst);
        let config = EsomConfig::new(
            0.2 + rng.random::<f64>() * 2.0,
            0.05 + rng.random::<f64>(),
            0,
        )
        .unwrap();
        let x = random_vec(n * p, &mut rng);
        let split = build_split_operators(&obj, &g, &w, &config, &x, 0).unwrap();
        let h_ref = dense_hessian_reference(&obj, &w, &config, &x, 0);
        for _ in 0..10 {
            let v = random_vec(n * p, &mut rng);
            let rel = (split.apply_h(&v) - &h_ref * &v).norm() / v.norm();
            worst_rel = worst_rel.max(rel);
        }
        worst_rho = worst_rho.max(split.spectral_radius_dbd().unwrap());
    }
    let pass = worst_rel < 1e-12 && worst_rho < 1.0;
    report(
        1,
        "splitting exactness",
        pass,
        &format!("worst relative error {worst_rel:.3e}, worst spectral radius {worst_rho:.6}"),
    );
    assert!(pass);
}

#[test]
fn criterion_02_recursion_matches_truncated_series() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0f64;
    for inst in 0..10 {
        let n = rng.random_range(3..=8usize);
        let p = rng.random_range(1..=3usize);
        let (obj, g, w) = random_setup(n, p, 300 + inst);
        let config = EsomConfig::new(1.0, 0.3, 0).unwrap();
        let x = random_vec(n * p, &mut rng);
        let split = build_split_operators(&obj, &g, &w, &config, &x, 0).unwrap();
        let grad = random_vec(n * p, &mut rng);
        for k in 0..=3usize {
            let recursion = descent_direction(&split, &grad, k);
            let dense = -(split.dense_truncated_inverse(k).unwrap() * &grad);
            let rel = (recursion - &dense).norm() / dense.norm();
            worst = worst.max(rel);
        }
    }
    let pass = worst < 1e-10;
    report(
        2,
        "recursion matches truncated series",
        pass,
        &format!("worst relative error {worst:.3e} over K in 0..=3"),
    );
    assert!(pass);
}

#[test]
fn criterion_03_decentralized_matches_global_form() {
    use desom::oracle::{exact_esom_step, sqrt_psd, HinvMode};
    let (obj, g, w) = random_setup(10, 3, 500);
    let mut worst = 0.0f64;
    for k in [0usize, 2] {
        let config = EsomConfig::new(1.0, 0.5, k).unwrap();
        let imz = dense_i_minus_z(&w, 3).unwrap();
        let s = sqrt_psd(&imz).unwrap();
        let mut state = SolverState::zero(10, 3);
        let (mut x, mut v) = (DVector::zeros(30), DVector::zeros(30));
        for t in 1..=50 {
            state = esom_step(&obj, &g, &w, &config, &state, t).unwrap();
            (x, v) =
                exact_esom_step(&obj, &g, &w, &config, HinvMode::Truncated(k), &x, &v, t).unwrap();
            worst = worst.max((&state.x - &x).amax());
            worst = worst.max((&state.q - &s * &v).amax());
        }
    }
    let pass = worst < 1e-9;
    report(
        3,
        "decentralized matches global form",
        pass,
        &format!("worst x/q deviation {worst:.3e} over 50 steps, K in {{0, 2}}"),
    );
    assert!(pass);
}

#[test]
fn criterion_04_truncated_inverse_is_k_hop_sparse() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst = 0.0f64;
    for inst in 0..5 {
        let n = 9;
        let p = 2;
        let g = NetworkTopology::generate_random(n, 0.45, 700 + inst).unwrap();
        let w = WeightMatrix::metropolis(&g);
        let obj =
            DynamicLeastSquares::make_with_noise(n, p, 10, 10, 1.0, 800 + inst, 0.3).unwrap();
        let config = EsomConfig::new(1.0, 0.3, 0).unwrap();
        let x = random_vec(n * p, &mut rng);
        let split = build_split_operators(&obj, &g, &w, &config, &x, 0).unwrap();
        let hops = g.hop_distances();
        for k in 0..=2usize {
            let hinv = split.dense_truncated_inverse(k).unwrap();
            for i in 0..n {
                for j in 0..n {
                    if hops[i][j] > k {
                        let block = hinv.view((i * p, j * p), (p, p));
                        worst = worst.max(block.amax());
                    }
                }
            }
        }
    }
    let pass = worst < 1e-14;
    report(
        4,
        "K-hop block sparsity",
        pass,
        &format!("largest beyond-K-hop block entry {worst:.3e}"),
    );
    assert!(pass);
}

/// Reference (α, ε) pair shared by criteria 5 and 8. Both truncation levels
/// converge on the reference static instance at this pair, so the fitted
/// contraction constants are directly comparable.
const REF_ALPHA: f64 = 3.0;
const REF_EPSILON: f64 = 0.5;

/// Shared static setup for criteria 5 and 8: a 20-node, 5-dimensional
/// least-squares problem frozen at t = 0.
fn static_reference() -> (DynamicLeastSquares, NetworkTopology, WeightMatrix, DVector<f64>) {
    let g = NetworkTopology::generate_random(20, 0.25, 3).unwrap();
    let w = WeightMatrix::metropolis(&g);
    let obj = DynamicLeastSquares::make(20, 5, 10, 10, 1.0, 2).unwrap();
    let x0 = initial_iterate(&obj.target(0), 20, 100.0, 3);
    (obj, g, w, x0)
}

/// Lyapunov series and fitted contraction constant on the reference static
/// instance at the reference (α, ε), for one truncation level.
fn reference_contraction(k: usize) -> (f64, Vec<f64>) {
    let (obj, g, w, x0) = static_reference();
    let config = EsomConfig::new(REF_ALPHA, REF_EPSILON, k).unwrap();
    let series = static_lyapunov_series(&obj, &g, &w, &config, &x0, 2000, 0).unwrap();
    let delta = fit_contraction(&series).unwrap();
    (delta, series)
}

#[test]
fn criterion_05_static_linear_convergence() {
    let (delta0, series0) = reference_contraction(0);
    let (delta2, series2) = reference_contraction(2);
    let min0 = series0.iter().cloned().fold(f64::INFINITY, f64::min);
    let min2 = series2.iter().cloned().fold(f64::INFINITY, f64::min);
    let pass = min0 < 1e-8 && min2 < 1e-8 && delta0 > 0.0 && delta2 >= delta0;
    report(
        5,
        "static linear convergence",
        pass,
        &format!(
            "K=0: floor {min0:.3e}, delta {delta0:.4}; K=2: floor {min2:.3e}, delta {delta2:.4}"
        ),
    );
    assert!(pass);
}

/// Shared dynamic setup for criteria 6-8: the reference tracking problem.
fn dynamic_reference_config() -> ExperimentConfig {
    let mut config = ExperimentConfig::default();
    config.solvers = vec![
        SolverSpec::esom(0, None, None),
        SolverSpec::esom(2, None, None),
        SolverSpec::baseline("extra", None),
        SolverSpec::baseline("nn0", None),
    ];
    config
}

#[test]
fn criterion_06_per_step_contraction_in_dynamic_run() {
    let config = EsomConfig::new(1.0, 1.0, 0).unwrap();
    let pc = ExperimentConfig::default().problem;
    let g = NetworkTopology::generate_random(pc.n, pc.r_c, 1).unwrap();
    let w = WeightMatrix::metropolis(&g);
    let obj = DynamicLeastSquares::make(pc.n, pc.p, pc.horizon + 1, pc.change_period, 1.0, 2)
        .unwrap();
    let x0 = initial_iterate(&obj.target(0), pc.n, pc.init_distance, 3);
    let imz = dense_i_minus_z(&w, pc.p).unwrap();
    let pinv = pinv_sqrt_psd(&imz).unwrap();

    let mut state = SolverState::from_x(x0.clone());
    let mut violations = 0usize;
    let mut checked = 0usize;
    let mut worst_ratio = 0.0f64;
    for t in 1..=pc.horizon {
        let sol = solve_oracle(&obj, &w, t).unwrap();
        let v_prev = &pinv * &state.q;
        let prev_err = lyapunov_metric(
            &state.x,
            &v_prev,
            &sol.x_star,
            &sol.v_star,
            config.alpha,
            config.epsilon,
        );
        state = esom_step(&obj, &g, &w, &config, &state, t).unwrap();
        let v = &pinv * &state.q;
        let err =
            lyapunov_metric(&state.x, &v, &sol.x_star, &sol.v_star, config.alpha, config.epsilon);
        if prev_err > 1e-8 {
            checked += 1;
            worst_ratio = worst_ratio.max(err / prev_err);
            if err >= prev_err {
                violations += 1;
            }
        }
    }
    let pass = violations == 0 && checked > 0;
    report(
        6,
        "per-step contraction",
        pass,
        &format!("{checked} steps checked, {violations} violations, worst ratio {worst_ratio:.6}"),
    );
    assert!(pass);
}

#[test]
fn criterion_07_tracking_error_ordering_and_epoch_shapes() {
    let mut config = dynamic_reference_config();
    // Noisy observations move the instantaneous optimum off the consensus
    // trajectory, so NN-0's penalty bias is visible; without noise every
    // node's gradient vanishes at the optimum and NN-0 is exact.
    config.problem.noise_std = 0.5;
    // Auto-tuning minimizes final error, which for NN-0 favors a vanishing
    // penalty weight that mixes too slowly to settle within an epoch; the
    // comparison uses a fixed weight that reaches its biased solution fast.
    config.solvers.last_mut().unwrap().step = Some(0.2);
    let result = run_experiment(&config).unwrap();
    let pc = &config.problem;
    let burn_in = 2 * pc.change_period;

    let series = |label: &str| -> Vec<f64> {
        let traj = result.trajectories.iter().find(|t| t.label == label).unwrap();
        assert!(traj.diverged_at.is_none(), "{label} diverged");
        traj.rows.iter().map(|r| r.e_t).collect()
    };
    let mean_tail = |s: &[f64]| -> f64 {
        let tail = &s[burn_in..];
        tail.iter().sum::<f64>() / tail.len() as f64
    };
    let esom2 = series("esom-2");
    let esom0 = series("esom-0");
    let extra = series("extra");
    let nn0 = series("nn0");
    let (m2, m0, mx, mn) =
        (mean_tail(&esom2), mean_tail(&esom0), mean_tail(&extra), mean_tail(&nn0));
    let ordering_ok = m2 < m0 && m0 < mx && mx < mn;

    // Per post-burn-in epoch: NN-0 plateaus over the last 50 steps; the
    // second-order and EXTRA solvers keep shrinking the error within the
    // epoch. Row index i holds step t = i + 1, so epoch e (steps
    // cp*e ..= cp*e + cp - 1) occupies indices cp*e - 1 ..= cp*e + cp - 2.
    let mut plateau_ok = true;
    let mut decrease_ok = true;
    let cp = pc.change_period;
    let mut epoch = burn_in / cp;
    loop {
        let start = cp * epoch - 1;
        let end = cp * epoch + cp - 2;
        if end >= nn0.len() {
            break;
        }
        let rel_change = (nn0[end] - nn0[end - 50]).abs() / nn0[end];
        plateau_ok &= rel_change < 0.01;
        for s in [&esom2, &esom0, &extra] {
            if s[start] > 1e-10 {
                decrease_ok &= s[end] < 0.5 * s[start];
            }
        }
        epoch += 1;
    }
    let pass = ordering_ok && plateau_ok && decrease_ok;
    report(
        7,
        "tracking-error ordering",
        pass,
        &format!(
            "mean e_t: esom-2 {m2:.3e} < esom-0 {m0:.3e} < extra {mx:.3e} < nn0 {mn:.3e}; \
             nn0 plateau {plateau_ok}, within-epoch decrease {decrease_ok}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_steady_state_bound() {
    let (delta, _) = reference_contraction(0);

    // Dynamic run on the same topology and problem seeds as the static
    // instance the contraction constant was fitted on.
    let mut run_config = dynamic_reference_config();
    run_config.seeds.graph = 3;
    run_config.problem.r_c = 0.25;
    run_config.solvers = vec![SolverSpec::esom(0, Some(REF_ALPHA), Some(REF_EPSILON))];
    let result = run_experiment(&run_config).unwrap();
    let traj = &result.trajectories[0];
    assert!(traj.diverged_at.is_none());
    let burn_in = 2 * run_config.problem.change_period;
    let max_lyapunov = traj.rows[burn_in..]
        .iter()
        .map(|r| r.lyapunov)
        .fold(0.0f64, f64::max);
    let d_max = traj.rows[burn_in..].iter().map(|r| r.drift).fold(0.0f64, f64::max);
    let bound = d_max / ((1.0 + delta).sqrt() - 1.0);
    let pass = max_lyapunov <= bound;
    report(
        8,
        "steady-state bound",
        pass,
        &format!(
            "max ||u - u*||_G = {max_lyapunov:.6e} vs d_max/(sqrt(1+delta)-1) = {bound:.6e} \
             (d_max {d_max:.3e}, delta {delta:.4})"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_oracle_kkt_at_change_points() {
    let pc = ExperimentConfig::default().problem;
    let g = NetworkTopology::generate_random(pc.n, pc.r_c, 1).unwrap();
    let w = WeightMatrix::metropolis(&g);
    let obj = DynamicLeastSquares::make(pc.n, pc.p, pc.horizon + 1, pc.change_period, 1.0, 2)
        .unwrap();
    let mut worst_x = 0.0f64;
    let mut worst_res = 0.0f64;
    for t in (pc.change_period..=pc.horizon).step_by(pc.change_period) {
        let sol = solve_oracle(&obj, &w, t).unwrap();
        let target = stack_consensus(&obj.target(t), pc.n);
        worst_x = worst_x.max((&sol.x_star - &target).amax());
        let imz = dense_i_minus_z(&w, pc.p).unwrap();
        let sqrt = desom::oracle::sqrt_psd(&imz).unwrap();
        let grad = obj.stacked_gradient(t, &sol.x_star);
        worst_res = worst_res.max((&grad + &sqrt * &sol.v_star).norm());
    }
    let pass = worst_x < 1e-10 && worst_res < 1e-9;
    report(
        9,
        "oracle KKT at change points",
        pass,
        &format!("worst optimum deviation {worst_x:.3e}, worst dual residual {worst_res:.3e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_10_determinism_and_bit_exact_error_metric() {
    let mut config = dynamic_reference_config();
    // Fixed hyperparameters keep this criterion fast; determinism of the
    // auto-tuner is covered by its own grid being deterministic.
    config.problem.horizon = 200;
    config.solvers = vec![
        SolverSpec::esom(1, Some(1.0), Some(0.2)),
        SolverSpec::baseline("extra", Some(0.05)),
    ];
    let a = export_csv(&run_experiment(&config).unwrap());
    let b = export_csv(&run_experiment(&config).unwrap());
    let csv_identical = a == b;

    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let mut bit_exact = true;
    for _ in 0..100 {
        let n = rng.random_range(1..10usize);
        let p = rng.random_range(1..6usize);
        let x = random_vec(n * p, &mut rng);
        let target = random_vec(p, &mut rng);
        let mut expected = 0.0f64;
        for i in 0..n {
            for s in 0..p {
                let diff = (x[i * p + s] - target[s]).abs();
                if diff > expected {
                    expected = diff;
                }
            }
        }
        bit_exact &= error_metric(&x, &target).to_bits() == expected.to_bits();
    }
    let pass = csv_identical && bit_exact;
    report(
        10,
        "determinism",
        pass,
        &format!("identical CSVs: {csv_identical}, bit-exact e_t oracle: {bit_exact}"),
    );
    assert!(pass);
}

#[test]
fn baseline_tuning_is_deterministic_and_reasonable() {
    // Supporting check for the auto-tuned path used by criterion 7.
    let (obj, g, w, x0) = static_reference();
    let eta_a = tune_baseline(&obj, &g, &w, BaselineMethod::Extra, &x0, 0).unwrap();
    let eta_b = tune_baseline(&obj, &g, &w, BaselineMethod::Extra, &x0, 0).unwrap();
    assert_eq!(eta_a, eta_b);
    assert!(eta_a > 0.0);
}
