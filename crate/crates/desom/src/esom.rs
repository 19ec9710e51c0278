//! The decentralized ESOM-K stepper.
//!
//! Each time step performs one primal descent / dual ascent move on the
//! quadratic approximation of the time-varying augmented Lagrangian
//!
//! ```text
//! L_t(x, v) = f_t(x) + vᵀ(I−Z)^{1/2}x + (α/2) xᵀ(I−Z)x
//! ```
//!
//! The primal Hessian `H_t = ∇²f_t + α(I−Z) + εI` is split as `H_t = D_t − B`
//! with `D_t` block diagonal and `B` neighbor sparse, and `H_t⁻¹` is applied
//! through the K-term truncated series
//! `Ĥ⁻¹(K) = D^{-1/2} Σ_{u=0}^K (D^{-1/2} B D^{-1/2})^u D^{-1/2}`.
//! Every extra series term costs one neighbor exchange, so a step of ESOM-K
//! takes K+1 exchange rounds plus one primal exchange. The dual is carried
//! as the locally computable image `q_t = (I−Z)^{1/2} v_t`.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::objective::DynamicObjective;
use crate::topology::{NetworkTopology, WeightMatrix};
use crate::{DesomError, Result};

/// Dense test-support operations refuse to run above this stacked size.
pub const DENSE_SIZE_LIMIT: usize = 2000;

/// ESOM hyperparameters: augmented-Lagrangian / dual step constant `alpha`,
/// proximal constant `epsilon`, series truncation level `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsomConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub k: usize,
}

impl EsomConfig {
    pub fn new(alpha: f64, epsilon: f64, k: usize) -> Result<Self> {
        if alpha <= 0.0 || epsilon <= 0.0 {
            return Err(DesomError::InvalidParameter(
                "alpha and epsilon must be positive".into(),
            ));
        }
        Ok(Self { alpha, epsilon, k })
    }
}

impl Default for EsomConfig {
    fn default() -> Self {
        Self { alpha: 1.0, epsilon: 1.0, k: 0 }
    }
}

/// Stacked primal iterate `x`, dual-image iterate `q = (I−Z)^{1/2} v`, and
/// the time index of the last completed step.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub x: DVector<f64>,
    pub q: DVector<f64>,
    pub t: usize,
}

impl SolverState {
    /// The prescribed initialization: x_0 = 0, q_0 = 0.
    pub fn zero(n: usize, p: usize) -> Self {
        Self { x: DVector::zeros(n * p), q: DVector::zeros(n * p), t: 0 }
    }

    pub fn from_x(x: DVector<f64>) -> Self {
        let q = DVector::zeros(x.len());
        Self { x, q, t: 0 }
    }

    /// Mean of the per-node blocks of q. Zero (up to round-off) whenever q
    /// stays in the column space of I−Z, which holds by induction from
    /// q_0 = 0.
    pub fn q_block_mean(&self, n: usize, p: usize) -> DVector<f64> {
        let mut mean = DVector::zeros(p);
        for i in 0..n {
            mean += self.q.rows(i * p, p);
        }
        mean / n as f64
    }

    /// Checkpoint layout: `t` as a little-endian u64, then x and q each as a
    /// little-endian u64 length prefix followed by that many f64 values.
    pub fn write_checkpoint(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(24 + 8 * (self.x.len() + self.q.len()));
        bytes.extend_from_slice(&(self.t as u64).to_le_bytes());
        for v in [&self.x, &self.q] {
            bytes.extend_from_slice(&(v.len() as u64).to_le_bytes());
            for &val in v.iter() {
                bytes.extend_from_slice(&val.to_le_bytes());
            }
        }
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn read_checkpoint(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut cursor = 0usize;
        let take_u64 = |bytes: &[u8], cursor: &mut usize| -> Result<u64> {
            let end = *cursor + 8;
            if end > bytes.len() {
                return Err(DesomError::Parse("checkpoint truncated".into()));
            }
            let val = u64::from_le_bytes(bytes[*cursor..end].try_into().unwrap());
            *cursor = end;
            Ok(val)
        };
        let t = take_u64(&bytes, &mut cursor)? as usize;
        let mut vectors = Vec::with_capacity(2);
        for _ in 0..2 {
            let len = take_u64(&bytes, &mut cursor)? as usize;
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let end = cursor + 8;
                if end > bytes.len() {
                    return Err(DesomError::Parse("checkpoint truncated".into()));
                }
                data.push(f64::from_le_bytes(bytes[cursor..end].try_into().unwrap()));
                cursor = end;
            }
            vectors.push(DVector::from_vec(data));
        }
        let q = vectors.pop().unwrap();
        let x = vectors.pop().unwrap();
        Ok(Self { x, q, t })
    }
}

/// Record of which node states were read, one entry per exchange round.
/// `rounds[r]` holds `(reader, read_from)` pairs with `reader != read_from`.
#[derive(Debug, Default, Clone)]
pub struct CommLog {
    pub rounds: Vec<Vec<(usize, usize)>>,
}

impl CommLog {
    fn record_neighbor_round(&mut self, g: &NetworkTopology) {
        let mut reads = Vec::new();
        for i in 0..g.n() {
            for &j in g.neighbors(i) {
                reads.push((i, j));
            }
        }
        self.rounds.push(reads);
    }

    /// True when every recorded read stays within the reader's neighborhood.
    pub fn all_reads_local(&self, g: &NetworkTopology) -> bool {
        self.rounds
            .iter()
            .flatten()
            .all(|&(i, j)| i == j || g.neighbors(i).contains(&j))
    }
}

/// The Hessian splitting `H_t = D_t − B`: per-node positive definite blocks
/// `D_ii,t = ∇²f_{i,t}(x_{i,t−1}) + εI + 2α(1−w_ii)I` and the neighbor
/// sparse `B` with `B_ii = α(1−w_ii)I`, `B_ij = α w_ij I`.
///
/// `B` depends only on the topology and `α`, so the coefficients may be
/// cached across time steps; the `D` blocks are rebuilt whenever the
/// objective or linearization point changes.
#[derive(Debug, Clone)]
pub struct SplitOperators {
    n: usize,
    p: usize,
    d_blocks: Vec<DMatrix<f64>>,
    d_chol: Vec<Cholesky<f64, Dyn>>,
    /// b_diag[i] = α(1−w_ii); b_off[i] lists (j, α w_ij) for j ∈ N_i.
    b_diag: Vec<f64>,
    b_off: Vec<Vec<(usize, f64)>>,
}

/// Assembles the split at the linearization point `x_prev` for time `t`.
pub fn build_split_operators(
    obj: &dyn DynamicObjective,
    g: &NetworkTopology,
    w: &WeightMatrix,
    config: &EsomConfig,
    x_prev: &DVector<f64>,
    t: usize,
) -> Result<SplitOperators> {
    let (n, p) = (obj.n(), obj.p());
    if x_prev.len() != n * p {
        return Err(DesomError::DimensionMismatch { expected: n * p, actual: x_prev.len() });
    }
    let mut d_blocks = Vec::with_capacity(n);
    let mut d_chol = Vec::with_capacity(n);
    for i in 0..n {
        let xi = x_prev.rows(i * p, p).into_owned();
        let mut block = obj.hessian(i, t, &xi);
        let shift = config.epsilon + 2.0 * config.alpha * (1.0 - w.entry(i, i));
        for d in 0..p {
            block[(d, d)] += shift;
        }
        let chol = Cholesky::new(block.clone()).ok_or_else(|| {
            DesomError::NotPositiveDefinite(format!("D block of node {i} at t={t}"))
        })?;
        d_blocks.push(block);
        d_chol.push(chol);
    }
    let b_diag = (0..n).map(|i| config.alpha * (1.0 - w.entry(i, i))).collect();
    let b_off = (0..n)
        .map(|i| g.neighbors(i).iter().map(|&j| (j, config.alpha * w.entry(i, j))).collect())
        .collect();
    Ok(SplitOperators { n, p, d_blocks, d_chol, b_diag, b_off })
}

impl SplitOperators {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn d_block(&self, i: usize) -> &DMatrix<f64> {
        &self.d_blocks[i]
    }

    /// Applies B to a stacked vector; block i touches only self and
    /// neighbor blocks.
    pub fn apply_b(&self, v: &DVector<f64>) -> DVector<f64> {
        let p = self.p;
        let mut out = DVector::zeros(self.n * p);
        for i in 0..self.n {
            let mut block = v.rows(i * p, p) * self.b_diag[i];
            for &(j, coeff) in &self.b_off[i] {
                block += v.rows(j * p, p) * coeff;
            }
            out.rows_mut(i * p, p).copy_from(&block);
        }
        out
    }

    /// Solves D u = v blockwise.
    pub fn solve_d(&self, v: &DVector<f64>) -> DVector<f64> {
        let p = self.p;
        let mut out = DVector::zeros(self.n * p);
        for i in 0..self.n {
            let sol = self.d_chol[i].solve(&v.rows(i * p, p).into_owned());
            out.rows_mut(i * p, p).copy_from(&sol);
        }
        out
    }

    /// Applies D−B, i.e. the full split Hessian, to a stacked vector.
    pub fn apply_h(&self, v: &DVector<f64>) -> DVector<f64> {
        let p = self.p;
        let mut dv = DVector::zeros(self.n * p);
        for i in 0..self.n {
            let block = &self.d_blocks[i] * v.rows(i * p, p);
            dv.rows_mut(i * p, p).copy_from(&block);
        }
        dv - self.apply_b(v)
    }

    fn check_dense_limit(&self) -> Result<()> {
        let np = self.n * self.p;
        if np > DENSE_SIZE_LIMIT {
            return Err(DesomError::DenseSizeLimit { np, limit: DENSE_SIZE_LIMIT });
        }
        Ok(())
    }

    /// Dense D (block diagonal). Test support.
    pub fn dense_d(&self) -> Result<DMatrix<f64>> {
        self.check_dense_limit()?;
        let (n, p) = (self.n, self.p);
        let mut d = DMatrix::zeros(n * p, n * p);
        for i in 0..n {
            d.view_mut((i * p, i * p), (p, p)).copy_from(&self.d_blocks[i]);
        }
        Ok(d)
    }

    /// Dense B. Test support.
    pub fn dense_b(&self) -> Result<DMatrix<f64>> {
        self.check_dense_limit()?;
        let (n, p) = (self.n, self.p);
        let mut b = DMatrix::zeros(n * p, n * p);
        for i in 0..n {
            for d in 0..p {
                b[(i * p + d, i * p + d)] = self.b_diag[i];
            }
            for &(j, coeff) in &self.b_off[i] {
                for d in 0..p {
                    b[(i * p + d, j * p + d)] = coeff;
                }
            }
        }
        Ok(b)
    }

    fn dense_d_inv_sqrt(&self) -> Result<DMatrix<f64>> {
        self.check_dense_limit()?;
        let (n, p) = (self.n, self.p);
        let mut out = DMatrix::zeros(n * p, n * p);
        for i in 0..n {
            let sym = (self.d_blocks[i].clone() + self.d_blocks[i].transpose()) * 0.5;
            let eig = sym.symmetric_eigen();
            if eig.eigenvalues.min() <= 0.0 {
                return Err(DesomError::NotPositiveDefinite(format!("D block of node {i}")));
            }
            let mut inv_sqrt = DMatrix::zeros(p, p);
            for k in 0..p {
                let col = eig.eigenvectors.column(k);
                inv_sqrt += (&col * col.transpose()) / eig.eigenvalues[k].sqrt();
            }
            out.view_mut((i * p, i * p), (p, p)).copy_from(&inv_sqrt);
        }
        Ok(out)
    }

    /// Spectral radius of the symmetric `D^{-1/2} B D^{-1/2}`. Strictly
    /// below 1 whenever the split is valid. Test support (dense).
    pub fn spectral_radius_dbd(&self) -> Result<f64> {
        let dm = self.dense_d_inv_sqrt()?;
        let b = self.dense_b()?;
        let s = &dm * b * &dm;
        let sym = (s.clone() + s.transpose()) * 0.5;
        Ok(sym.symmetric_eigen().eigenvalues.iter().fold(0.0f64, |acc, &l| acc.max(l.abs())))
    }

    /// Dense `Ĥ⁻¹(K) = D^{-1/2} Σ_{u=0}^K (D^{-1/2} B D^{-1/2})^u D^{-1/2}`.
    /// Symmetric positive definite and K-hop block neighbor sparse.
    /// Test support (dense, size guarded).
    pub fn dense_truncated_inverse(&self, k: usize) -> Result<DMatrix<f64>> {
        let dm = self.dense_d_inv_sqrt()?;
        let b = self.dense_b()?;
        let s = &dm * b * &dm;
        let np = self.n * self.p;
        let mut sum = DMatrix::identity(np, np);
        let mut power = DMatrix::identity(np, np);
        for _ in 0..k {
            power = &power * &s;
            sum += &power;
        }
        Ok(&dm * sum * &dm)
    }
}

/// Local augmented-Lagrangian gradient of node `i` at time `t`:
/// `g_{i,t} = ∇f_{i,t}(x_{i,t−1}) + q_{i,t−1} + α(1−w_ii)x_{i,t−1}
///            − α Σ_{j∈N_i} w_ij x_{j,t−1}`.
pub fn local_gradient(
    obj: &dyn DynamicObjective,
    g: &NetworkTopology,
    w: &WeightMatrix,
    alpha: f64,
    state: &SolverState,
    i: usize,
    t: usize,
) -> DVector<f64> {
    let p = obj.p();
    let xi = state.x.rows(i * p, p).into_owned();
    let mut gi = obj.gradient(i, t, &xi);
    gi += state.q.rows(i * p, p);
    gi += &xi * (alpha * (1.0 - w.entry(i, i)));
    for &j in g.neighbors(i) {
        gi -= state.x.rows(j * p, p) * (alpha * w.entry(i, j));
    }
    gi
}

/// Stacked augmented-Lagrangian gradient, assembled node by node.
pub fn stacked_gradient(
    obj: &dyn DynamicObjective,
    g: &NetworkTopology,
    w: &WeightMatrix,
    alpha: f64,
    state: &SolverState,
    t: usize,
) -> DVector<f64> {
    let p = obj.p();
    let mut out = DVector::zeros(obj.n() * p);
    for i in 0..obj.n() {
        let gi = local_gradient(obj, g, w, alpha, state, i, t);
        out.rows_mut(i * p, p).copy_from(&gi);
    }
    out
}

/// One level of the descent-direction recursion:
/// `d_i^{(k+1)} = D_ii⁻¹ (B_ii d_i^{(k)} + Σ_{j∈N_i} B_ij d_j^{(k)}) − D_ii⁻¹ g_i`.
/// Reads only self and neighbor blocks of `d_k`.
pub fn descent_recursion_round(
    split: &SplitOperators,
    grad: &DVector<f64>,
    d_k: &DVector<f64>,
) -> DVector<f64> {
    split.solve_d(&(split.apply_b(d_k) - grad))
}

/// Runs the full recursion: `d^{(0)} = −D⁻¹ g`, then `k` rounds.
pub fn descent_direction(
    split: &SplitOperators,
    grad: &DVector<f64>,
    k: usize,
) -> DVector<f64> {
    let mut d = -split.solve_d(grad);
    for _ in 0..k {
        d = descent_recursion_round(split, grad, &d);
    }
    d
}

/// One full time step of ESOM-K from `(x_{t−1}, q_{t−1})` to
/// `(x_t, q_t)` under the function observed at time `t`.
pub fn esom_step(
    obj: &dyn DynamicObjective,
    g: &NetworkTopology,
    w: &WeightMatrix,
    config: &EsomConfig,
    state: &SolverState,
    t: usize,
) -> Result<SolverState> {
    esom_step_logged(obj, g, w, config, state, t, None)
}

/// [`esom_step`] with communication instrumentation. Logged rounds per
/// step: one for the gradient, K for the direction recursion, and one
/// primal exchange for the dual update.
pub fn esom_step_logged(
    obj: &dyn DynamicObjective,
    g: &NetworkTopology,
    w: &WeightMatrix,
    config: &EsomConfig,
    state: &SolverState,
    t: usize,
    mut log: Option<&mut CommLog>,
) -> Result<SolverState> {
    let (n, p) = (obj.n(), obj.p());
    let split = build_split_operators(obj, g, w, config, &state.x, t)?;

    if let Some(l) = log.as_deref_mut() {
        l.record_neighbor_round(g);
    }
    let grad = stacked_gradient(obj, g, w, config.alpha, state, t);

    let mut d = -split.solve_d(&grad);
    for _ in 0..config.k {
        if let Some(l) = log.as_deref_mut() {
            l.record_neighbor_round(g);
        }
        d = descent_recursion_round(&split, &grad, &d);
    }

    let x_next = &state.x + &d;

    // Primal exchange, then the dual update reads neighbors' x_t snapshots.
    if let Some(l) = log.as_deref_mut() {
        l.record_neighbor_round(g);
    }
    let mut q_next = state.q.clone();
    for i in 0..n {
        let mut delta = x_next.rows(i * p, p) * (config.alpha * (1.0 - w.entry(i, i)));
        for &j in g.neighbors(i) {
            delta -= x_next.rows(j * p, p) * (config.alpha * w.entry(i, j));
        }
        let mut qi = q_next.rows_mut(i * p, p);
        qi += delta;
    }

    Ok(SolverState { x: x_next, q: q_next, t })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::DynamicLeastSquares;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_setup(
        n: usize,
        p: usize,
        seed: u64,
    ) -> (DynamicLeastSquares, NetworkTopology, WeightMatrix) {
        let g = NetworkTopology::generate_random(n, 0.5, seed).unwrap();
        let w = WeightMatrix::metropolis(&g);
        let obj = DynamicLeastSquares::make(n, p, 100, 100, 1.0, seed + 1).unwrap();
        (obj, g, w)
    }

    fn random_vec(len: usize, seed: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DVector::from_fn(len, |_, _| rng.random::<f64>() - 0.5)
    }

    /// Dense H_t = ∇²f_t + α(I−Z) + εI assembled independently of the split.
    fn dense_hessian(
        obj: &DynamicLeastSquares,
        _g: &NetworkTopology,
        w: &WeightMatrix,
        config: &EsomConfig,
        x: &DVector<f64>,
        t: usize,
    ) -> DMatrix<f64> {
        use crate::objective::DynamicObjective;
        let (n, p) = (obj.n(), obj.p());
        let np = n * p;
        let mut h = DMatrix::zeros(np, np);
        for i in 0..n {
            let xi = x.rows(i * p, p).into_owned();
            h.view_mut((i * p, i * p), (p, p)).copy_from(&obj.hessian(i, t, &xi));
        }
        for i in 0..n {
            for j in 0..n {
                let z_entry = w.entry(i, j);
                let im_z = if i == j { 1.0 - z_entry } else { -z_entry };
                for d in 0..p {
                    h[(i * p + d, j * p + d)] += config.alpha * im_z;
                }
            }
        }
        for d in 0..np {
            h[(d, d)] += config.epsilon;
        }
        h
    }

    #[test]
    fn split_reconstructs_hessian() {
        let (obj, g, w) = small_setup(6, 3, 2);
        let config = EsomConfig::new(0.7, 1.3, 0).unwrap();
        let x = random_vec(18, 9);
        let split = build_split_operators(&obj, &g, &w, &config, &x, 0).unwrap();
        let h = dense_hessian(&obj, &g, &w, &config, &x, 0);
        for s in 0..10 {
            let v = random_vec(18, 100 + s);
            let lhs = split.apply_h(&v);
            let rhs = &h * &v;
            assert!((lhs - rhs).amax() / v.norm() < 1e-12);
        }
    }

    #[test]
    fn single_node_split_is_exact_at_k0() {
        let g = NetworkTopology::from_edges(1, &[]).unwrap();
        let w = WeightMatrix::metropolis(&g);
        assert_eq!(w.entry(0, 0), 1.0);
        let obj = DynamicLeastSquares::make(1, 3, 10, 10, 1.0, 4).unwrap();
        let config = EsomConfig::default();
        let x = random_vec(3, 1);
        let split = build_split_operators(&obj, &g, &w, &config, &x, 0).unwrap();
        // B = 0, so d^(k) = -D^{-1} g for every k.
        let grad = random_vec(3, 2);
        let d0 = descent_direction(&split, &grad, 0);
        let d3 = descent_direction(&split, &grad, 3);
        assert!((d0.clone() - d3).amax() < 1e-15);
        // And D - B = H exactly: the truncated inverse at K=0 is H^{-1}.
        let hinv = split.dense_truncated_inverse(0).unwrap();
        let sol = &hinv * &grad;
        assert!((split.apply_h(&sol) - grad).amax() < 1e-12);
    }

    #[test]
    fn recursion_matches_dense_truncated_series() {
        for seed in 0..3 {
            let (obj, g, w) = small_setup(5, 2, 30 + seed);
            let config = EsomConfig::new(1.1, 0.9, 0).unwrap();
            let x = random_vec(10, seed);
            let split = build_split_operators(&obj, &g, &w, &config, &x, 0).unwrap();
            let grad = random_vec(10, 50 + seed);
            for k in 0..4 {
                let d = descent_direction(&split, &grad, k);
                let hinv = split.dense_truncated_inverse(k).unwrap();
                let expected = -(&hinv * &grad);
                let rel = (d - &expected).amax() / expected.amax().max(1e-30);
                assert!(rel < 1e-10, "seed {seed} K={k}: rel {rel}");
            }
        }
    }

    #[test]
    fn recursion_converges_geometrically_to_exact_inverse() {
        let (obj, g, w) = small_setup(5, 2, 77);
        let config = EsomConfig::default();
        let x = random_vec(10, 3);
        let split = build_split_operators(&obj, &g, &w, &config, &x, 0).unwrap();
        let grad = random_vec(10, 4);
        let h = dense_hessian(&obj, &g, &w, &config, &x, 0);
        let exact = -h.clone().lu().solve(&grad).unwrap();
        let rho = split.spectral_radius_dbd().unwrap();
        assert!(rho < 1.0);
        let mut errors = Vec::new();
        for k in 0..12 {
            let d = descent_direction(&split, &grad, k);
            errors.push((d - &exact).norm());
        }
        // Tail ratio approaches the spectral radius.
        let ratio = errors[11] / errors[10];
        assert!(
            (ratio - rho).abs() < 0.15,
            "tail ratio {ratio} vs spectral radius {rho}"
        );
        assert!(errors[11] < errors[0] * 1e-2);
    }

    #[test]
    fn truncated_inverse_is_symmetric_positive_definite() {
        let (obj, g, w) = small_setup(6, 2, 8);
        let config = EsomConfig::default();
        let x = random_vec(12, 5);
        let split = build_split_operators(&obj, &g, &w, &config, &x, 0).unwrap();
        for k in [0, 2] {
            let hinv = split.dense_truncated_inverse(k).unwrap();
            assert!((hinv.clone() - hinv.transpose()).amax() < 1e-12);
            let eigs = hinv.symmetric_eigen().eigenvalues;
            assert!(eigs.min() > 0.0);
        }
    }

    #[test]
    fn truncated_inverse_is_k_hop_sparse() {
        let (obj, g, w) = small_setup(8, 2, 13);
        let config = EsomConfig::default();
        let x = random_vec(16, 6);
        let split = build_split_operators(&obj, &g, &w, &config, &x, 0).unwrap();
        let dist = g.hop_distances();
        for k in [0usize, 1, 2] {
            let hinv = split.dense_truncated_inverse(k).unwrap();
            for i in 0..8 {
                for j in 0..8 {
                    if dist[i][j] > k {
                        let block = hinv.view((i * 2, j * 2), (2, 2));
                        assert!(block.amax() < 1e-14, "K={k} block ({i},{j}) nonzero");
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_on_consensus_state_reduces_to_objective_gradient() {
        use crate::objective::DynamicObjective;
        let (obj, g, w) = small_setup(5, 3, 21);
        let block = random_vec(3, 7);
        let mut x = DVector::zeros(15);
        for i in 0..5 {
            x.rows_mut(i * 3, 3).copy_from(&block);
        }
        let state = SolverState { x, q: DVector::zeros(15), t: 0 };
        for i in 0..5 {
            let gi = local_gradient(&obj, &g, &w, 1.0, &state, i, 0);
            let expected = obj.gradient(i, 0, &block);
            assert!((gi - expected).amax() < 1e-12);
        }
    }

    #[test]
    fn stacked_gradient_matches_dense_operator() {
        let (obj, g, w) = small_setup(6, 2, 31);
        use crate::objective::DynamicObjective;
        let alpha = 0.8;
        let state = SolverState { x: random_vec(12, 1), q: random_vec(12, 2), t: 0 };
        let grad = stacked_gradient(&obj, &g, &w, alpha, &state, 0);
        let dense =
            obj.stacked_gradient(0, &state.x) + &state.q + w.apply_i_minus_z(&g, &state.x, 2) * alpha;
        assert!((grad - dense).amax() < 1e-12);
    }

    #[test]
    fn first_step_from_zero_state_is_truncated_newton_on_f() {
        use crate::objective::DynamicObjective;
        let (obj, g, w) = small_setup(5, 2, 44);
        let config = EsomConfig::new(1.0, 1.0, 2).unwrap();
        let state = SolverState::zero(5, 2);
        let next = esom_step(&obj, &g, &w, &config, &state, 1).unwrap();
        let split = build_split_operators(&obj, &g, &w, &config, &state.x, 1).unwrap();
        let hinv = split.dense_truncated_inverse(2).unwrap();
        let expected = -(&hinv * obj.stacked_gradient(1, &state.x));
        assert!((next.x - expected).amax() < 1e-12);
    }

    #[test]
    fn q_stays_orthogonal_to_consensus_direction() {
        let (obj, g, w) = small_setup(6, 3, 55);
        let config = EsomConfig::new(1.0, 1.0, 1).unwrap();
        let mut state = SolverState::zero(6, 3);
        for t in 1..30 {
            state = esom_step(&obj, &g, &w, &config, &state, t.min(99)).unwrap();
            assert!(state.q_block_mean(6, 3).amax() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn locality_instrumentation_counts_rounds() {
        let (obj, g, w) = small_setup(6, 2, 66);
        for k in [0usize, 2] {
            let config = EsomConfig::new(1.0, 1.0, k).unwrap();
            let state = SolverState::zero(6, 2);
            let mut log = CommLog::default();
            esom_step_logged(&obj, &g, &w, &config, &state, 1, Some(&mut log)).unwrap();
            // K+1 exchange rounds (gradient + K recursion) plus one primal.
            assert_eq!(log.rounds.len(), k + 2);
            assert!(log.all_reads_local(&g));
        }
    }

    #[test]
    fn static_run_converges_linearly() {
        // Well-conditioned static instance: identity-plus-noise regressors.
        let g = NetworkTopology::generate_random(8, 0.4, 5).unwrap();
        let w = WeightMatrix::metropolis(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut regs = Vec::new();
        let mut obs = Vec::new();
        for _ in 0..8 {
            let noise = DMatrix::from_fn(3, 3, |_, _| 0.2 * (rng.random::<f64>() - 0.5));
            regs.push(DMatrix::identity(3, 3) + noise);
            obs.push(DVector::from_fn(3, |_, _| rng.random::<f64>() - 0.5));
        }
        let obj = DynamicLeastSquares::from_static_parts(regs, obs, 1).unwrap();
        let x_star_block = obj.target(0);
        let config = EsomConfig::new(0.5, 0.5, 1).unwrap();
        let mut state = SolverState::zero(8, 3);
        let mut errors = Vec::new();
        for _ in 0..300 {
            state = esom_step(&obj, &g, &w, &config, &state, 0).unwrap();
            let mut err = 0.0f64;
            for i in 0..8 {
                err += (state.x.rows(i * 3, 3) - &x_star_block).norm_squared();
            }
            errors.push(err.sqrt());
        }
        assert!(errors[299] < 1e-8, "final error {}", errors[299]);
        // Monotone decrease after burn-in, until the numerical floor.
        for t in 50..299 {
            if errors[t] < 1e-12 {
                break;
            }
            assert!(errors[t + 1] <= errors[t] * (1.0 + 1e-9), "t={t}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        let state = SolverState { x: random_vec(10, 1), q: random_vec(10, 2), t: 17 };
        state.write_checkpoint(&path).unwrap();
        let back = SolverState::read_checkpoint(&path).unwrap();
        assert_eq!(state, back);
    }

    #[test]
    fn dense_ops_respect_size_guard() {
        // 800 nodes x 3 dims > 2000 stacked entries.
        let n = 800;
        let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        let g = NetworkTopology::from_edges(n, &edges).unwrap();
        let w = WeightMatrix::metropolis(&g);
        let obj = DynamicLeastSquares::make(n, 3, 1, 1, 1.0, 0).unwrap();
        let config = EsomConfig::default();
        let x = DVector::zeros(n * 3);
        let split = build_split_operators(&obj, &g, &w, &config, &x, 0).unwrap();
        assert!(matches!(
            split.dense_truncated_inverse(0),
            Err(DesomError::DenseSizeLimit { .. })
        ));
    }
}
