//! Levenberg–Marquardt over block-structured variables with block-sparse
//! normal equations solved by preconditioned conjugate gradients.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Residual vector of one cost term and its Jacobian blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    /// Cost term name, used in diagnostics.
    pub name: &'static str,
    /// Term-specific index (e.g. a timestep), used in diagnostics.
    pub index: usize,
    pub residual: Vec<f64>,
    /// Distinct variable blocks this residual depends on.
    pub blocks: Vec<usize>,
    /// `jacobians[i]` is `residual.len() × dim(blocks[i])`, row-major. Empty
    /// when Jacobians were not requested.
    pub jacobians: Vec<Vec<f64>>,
}

impl ResidualBlock {
    pub fn squared_norm(&self) -> f64 {
        self.residual.iter().map(|r| r * r).sum()
    }
}

/// A nonlinear least-squares problem `min Σ ‖r_i(x)‖²` whose variables live
/// in blocks, each updated by a problem-defined retraction.
pub trait LeastSquares: Sync {
    type State: Clone;
    /// Tangent dimension of each variable block.
    fn block_dims(&self) -> Vec<usize>;
    fn evaluate(&self, x: &Self::State, jacobians: bool) -> Result<Vec<ResidualBlock>>;
    /// Applies a tangent step (concatenated over blocks in order).
    fn retract(&self, x: &Self::State, delta: &[f64]) -> Self::State;
    /// Sizes (in blocks) of consecutive block groups whose diagonal
    /// sub-matrices are inverted exactly by the CG preconditioner.
    fn block_groups(&self) -> Vec<usize> {
        vec![1; self.block_dims().len()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearSolver {
    ConjugateGradient,
    /// Dense Cholesky; only for small problems.
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub min_relative_decrease: f64,
    pub gradient_tolerance: f64,
    pub cg_max_iterations: usize,
    pub cg_tolerance: f64,
    pub solver: LinearSolver,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            initial_damping: 1e-4,
            min_relative_decrease: 1e-8,
            gradient_tolerance: 1e-10,
            cg_max_iterations: 500,
            cg_tolerance: 1e-12,
            solver: LinearSolver::ConjugateGradient,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxIterations,
    SmallDecrease,
    SmallGradient,
    DampingOverflow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport {
    /// Cost at the start and after every accepted step.
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
    pub accepted: usize,
    pub termination: Termination,
}

impl LmReport {
    pub fn initial_cost(&self) -> f64 {
        self.cost_trace[0]
    }

    pub fn final_cost(&self) -> f64 {
        *self.cost_trace.last().expect("trace starts with the initial cost")
    }
}

/// Symmetric block-sparse matrix storing the upper block triangle.
#[derive(Debug, Clone)]
pub struct BlockSparse {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    /// Per block row: sorted `(column block, data offset)` with column ≥ row.
    rows: Vec<Vec<(usize, usize)>>,
    data: Vec<f64>,
}

impl BlockSparse {
    /// Pattern = union over residuals of all pairs of referenced blocks.
    pub fn from_pattern(dims: &[usize], residuals: &[ResidualBlock]) -> Self {
        let mut pairs = BTreeSet::new();
        for (i, d) in dims.iter().enumerate() {
            if *d > 0 {
                pairs.insert((i, i));
            }
        }
        for rb in residuals {
            for &a in &rb.blocks {
                for &b in &rb.blocks {
                    if a <= b {
                        pairs.insert((a, b));
                    }
                }
            }
        }
        let mut offsets = vec![0; dims.len() + 1];
        for i in 0..dims.len() {
            offsets[i + 1] = offsets[i] + dims[i];
        }
        let mut rows = vec![Vec::new(); dims.len()];
        let mut size = 0;
        for (a, b) in pairs {
            rows[a].push((b, size));
            size += dims[a] * dims[b];
        }
        Self { dims: dims.to_vec(), offsets, rows, data: vec![0.0; size] }
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn stored_blocks(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    fn slot(&self, a: usize, b: usize) -> Option<usize> {
        let row = &self.rows[a];
        row.binary_search_by_key(&b, |e| e.0).ok().map(|i| row[i].1)
    }

    /// Accumulates `JᵀJ` and `Jᵀr` from residual blocks. Fails when a residual
    /// references a pair outside the pattern.
    pub fn assemble(&mut self, residuals: &[ResidualBlock], gradient: &mut [f64]) -> Result<()> {
        self.data.fill(0.0);
        gradient.fill(0.0);
        for rb in residuals {
            let m = rb.residual.len();
            for (i, &a) in rb.blocks.iter().enumerate() {
                let (da, ja) = (self.dims[a], &rb.jacobians[i]);
                let ga = &mut gradient[self.offsets[a]..self.offsets[a] + da];
                for r in 0..m {
                    for c in 0..da {
                        ga[c] += ja[r * da + c] * rb.residual[r];
                    }
                }
                for (j, &b) in rb.blocks.iter().enumerate() {
                    if a > b {
                        continue;
                    }
                    let (db, jb) = (self.dims[b], &rb.jacobians[j]);
                    let off = self.slot(a, b).ok_or_else(|| {
                        Error::InvalidInput(format!("residual {}[{}] outside sparsity pattern", rb.name, rb.index))
                    })?;
                    let blk = &mut self.data[off..off + da * db];
                    for r in 0..m {
                        for x in 0..da {
                            let v = ja[r * da + x];
                            if v == 0.0 {
                                continue;
                            }
                            for y in 0..db {
                                blk[x * db + y] += v * jb[r * db + y];
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim()];
        for a in 0..self.dims.len() {
            if let Some(off) = self.slot(a, a) {
                let n = self.dims[a];
                for i in 0..n {
                    d[self.offsets[a] + i] = self.data[off + i * n + i];
                }
            }
        }
        d
    }

    /// `y = (A + diag(extra)) x`.
    pub fn multiply(&self, x: &[f64], extra: &[f64], y: &mut [f64]) {
        for i in 0..y.len() {
            y[i] = extra[i] * x[i];
        }
        for a in 0..self.dims.len() {
            let (oa, da) = (self.offsets[a], self.dims[a]);
            for &(b, off) in &self.rows[a] {
                let (ob, db) = (self.offsets[b], self.dims[b]);
                let blk = &self.data[off..off + da * db];
                if da == 3 && db == 3 {
                    let (xa, xb) = ([x[oa], x[oa + 1], x[oa + 2]], [x[ob], x[ob + 1], x[ob + 2]]);
                    for i in 0..3 {
                        y[oa + i] += blk[3 * i] * xb[0] + blk[3 * i + 1] * xb[1] + blk[3 * i + 2] * xb[2];
                    }
                    if a != b {
                        for j in 0..3 {
                            y[ob + j] += blk[j] * xa[0] + blk[3 + j] * xa[1] + blk[6 + j] * xa[2];
                        }
                    }
                    continue;
                }
                for i in 0..da {
                    let mut acc = 0.0;
                    for j in 0..db {
                        acc += blk[i * db + j] * x[ob + j];
                    }
                    y[oa + i] += acc;
                }
                if a != b {
                    for j in 0..db {
                        let mut acc = 0.0;
                        for i in 0..da {
                            acc += blk[i * db + j] * x[oa + i];
                        }
                        y[ob + j] += acc;
                    }
                }
            }
        }
    }

    /// Dense diagonal sub-matrix over blocks `[start, end)`, plus `extra` on
    /// its diagonal (indexed like the full system).
    pub fn dense_diagonal_block(&self, start: usize, end: usize, extra: &[f64]) -> DMatrix<f64> {
        let base = self.offsets[start];
        let n = self.offsets[end] - base;
        let mut m = DMatrix::zeros(n, n);
        for a in start..end {
            let (oa, da) = (self.offsets[a] - base, self.dims[a]);
            for &(b, off) in &self.rows[a] {
                if b >= end {
                    break;
                }
                let (ob, db) = (self.offsets[b] - base, self.dims[b]);
                for i in 0..da {
                    for j in 0..db {
                        let v = self.data[off + i * db + j];
                        m[(oa + i, ob + j)] = v;
                        m[(ob + j, oa + i)] = v;
                    }
                }
            }
        }
        for i in 0..n {
            m[(i, i)] += extra[base + i];
        }
        m
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for a in 0..self.dims.len() {
            let (oa, da) = (self.offsets[a], self.dims[a]);
            for &(b, off) in &self.rows[a] {
                let (ob, db) = (self.offsets[b], self.dims[b]);
                for i in 0..da {
                    for j in 0..db {
                        let v = self.data[off + i * db + j];
                        m[(oa + i, ob + j)] = v;
                        m[(ob + j, oa + i)] = v;
                    }
                }
            }
        }
        m
    }
}

/// Exact inverse of each diagonal group of a block-sparse system; groups
/// whose factorization fails fall back to their diagonal.
pub struct GroupPreconditioner {
    groups: Vec<(usize, GroupFactor)>,
}

enum GroupFactor {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Diagonal(Vec<f64>),
}

impl GroupPreconditioner {
    pub fn new(system: &BlockSparse, groups: &[usize], extra: &[f64]) -> Result<Self> {
        if groups.iter().sum::<usize>() != system.dims.len() {
            return Err(Error::ShapeMismatch("block groups do not cover every block".into()));
        }
        let mut ranges = Vec::with_capacity(groups.len());
        let mut start = 0;
        for &g in groups {
            ranges.push((start, start + g));
            start += g;
        }
        let groups = ranges
            .into_par_iter()
            .map(|(a, b)| {
                let m = system.dense_diagonal_block(a, b, extra);
                let diag: Vec<f64> = m.diagonal().iter().map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 }).collect();
                let f = match m.cholesky() {
                    Some(c) => GroupFactor::Cholesky(c),
                    None => GroupFactor::Diagonal(diag),
                };
                (system.offsets[a], f)
            })
            .collect();
        Ok(Self { groups })
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        for (off, f) in &self.groups {
            match f {
                GroupFactor::Cholesky(c) => {
                    let n = c.l_dirty().nrows();
                    let mut v = DVector::from_column_slice(&r[*off..off + n]);
                    c.solve_mut(&mut v);
                    z[*off..off + n].copy_from_slice(v.as_slice());
                }
                GroupFactor::Diagonal(inv) => {
                    for (i, d) in inv.iter().enumerate() {
                        z[off + i] = r[off + i] * d;
                    }
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients for an SPD operator. Stops when
/// `‖b − A x‖ ≤ tol · ‖b‖`; returns the solution and the iteration count.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    diag: &[f64],
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, usize) {
    let inv: Vec<f64> = diag.iter().map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    preconditioned_cg(
        apply,
        |r, z| {
            for i in 0..r.len() {
                z[i] = r[i] * inv[i];
            }
        },
        b,
        tol,
        max_iter,
    )
}

/// Conjugate gradients with preconditioner `precondition(r, z)` computing
/// `z = M⁻¹ r`.
pub fn preconditioned_cg(
    apply: impl Fn(&[f64], &mut [f64]),
    precondition: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, usize) {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return (x, 0);
    }
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return (x, it);
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= tol * bnorm {
            return (x, it + 1);
        }
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    (x, max_iter)
}

fn check_finite(residuals: &[ResidualBlock], dims: &[usize], jacobians: bool) -> Result<()> {
    for rb in residuals {
        if rb.blocks.is_empty() || rb.blocks.iter().any(|&b| b >= dims.len()) {
            return Err(Error::InvalidInput(format!("residual {}[{}] references no valid block", rb.name, rb.index)));
        }
        if rb.residual.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("residual {}[{}]", rb.name, rb.index)));
        }
        if jacobians {
            for (blk, j) in rb.blocks.iter().zip(&rb.jacobians) {
                if j.len() != rb.residual.len() * dims[*blk] {
                    return Err(Error::ShapeMismatch(format!("Jacobian of {}[{}] w.r.t. block {blk}", rb.name, rb.index)));
                }
                if j.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("Jacobian of {}[{}] w.r.t. block {blk}", rb.name, rb.index)));
                }
            }
        }
    }
    Ok(())
}

fn total_cost(residuals: &[ResidualBlock]) -> f64 {
    residuals.iter().map(ResidualBlock::squared_norm).sum()
}

const MAX_DAMPING: f64 = 1e32;
const DIAG_FLOOR: f64 = 1e-12;

/// Minimizes the problem from `init`. Steps solve
/// `(JᵀJ + μ·diag(JᵀJ)) δ = −Jᵀr` and are accepted only when the cost drops.
pub fn lm_solve<P: LeastSquares>(problem: &P, init: &P::State, config: &LmConfig) -> Result<(P::State, LmReport)> {
    let dims = problem.block_dims();
    let groups = problem.block_groups();
    let mut x = init.clone();
    let mut residuals = problem.evaluate(&x, true)?;
    check_finite(&residuals, &dims, true)?;
    let mut cost = total_cost(&residuals);
    let mut system = BlockSparse::from_pattern(&dims, &residuals);
    let n = system.dim();
    let mut grad = vec![0.0; n];
    system.assemble(&residuals, &mut grad)?;
    let mut mu = config.initial_damping;
    let mut report = LmReport { cost_trace: vec![cost], iterations: 0, accepted: 0, termination: Termination::MaxIterations };
    while report.iterations < config.max_iterations {
        if dot(&grad, &grad).sqrt() < config.gradient_tolerance {
            report.termination = Termination::SmallGradient;
            return Ok((x, report));
        }
        report.iterations += 1;
        let diag = system.diagonal();
        let damping: Vec<f64> = diag.iter().map(|d| mu * d.max(DIAG_FLOOR)).collect();
        let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
        let delta = match config.solver {
            LinearSolver::ConjugateGradient => {
                let pre = GroupPreconditioner::new(&system, &groups, &damping)?;
                preconditioned_cg(
                    |v, out| system.multiply(v, &damping, out),
                    |r, z| pre.apply(r, z),
                    &rhs,
                    config.cg_tolerance,
                    config.cg_max_iterations.max(1),
                )
                .0
            }
            LinearSolver::Dense => {
                let mut h = system.to_dense();
                for i in 0..n {
                    h[(i, i)] += damping[i];
                }
                let b = DVector::from_vec(rhs);
                match h.clone().cholesky() {
                    Some(ch) => ch.solve(&b).iter().copied().collect(),
                    None => h.lu().solve(&b).map(|v| v.iter().copied().collect()).unwrap_or_else(|| vec![0.0; n]),
                }
            }
        };
        let candidate = problem.retract(&x, &delta);
        let trial = problem.evaluate(&candidate, true)?;
        check_finite(&trial, &dims, true)?;
        let new_cost = total_cost(&trial);
        if new_cost < cost {
            let rel = (cost - new_cost) / cost;
            x = candidate;
            cost = new_cost;
            residuals = trial;
            system.assemble(&residuals, &mut grad)?;
            report.accepted += 1;
            report.cost_trace.push(cost);
            mu = (mu / 3.0).max(1e-15);
            if rel < config.min_relative_decrease {
                report.termination = Termination::SmallDecrease;
                return Ok((x, report));
            }
        } else {
            mu *= 3.0;
            if mu > MAX_DAMPING {
                report.termination = Termination::DampingOverflow;
                return Ok((x, report));
            }
        }
    }
    if dot(&grad, &grad).sqrt() < config.gradient_tolerance {
        report.termination = Termination::SmallGradient;
    }
    Ok((x, report))
}

/// Problems over plain vectors, one scalar block per coordinate.
pub struct EuclideanProblem<F> {
    pub dim: usize,
    /// Residuals and Jacobian (row-major, `m × dim`) at `x`.
    pub f: F,
}

impl<F: Fn(&[f64]) -> (Vec<f64>, Vec<f64>) + Sync> LeastSquares for EuclideanProblem<F> {
    type State = Vec<f64>;

    fn block_dims(&self) -> Vec<usize> {
        vec![self.dim]
    }

    fn evaluate(&self, x: &Vec<f64>, jacobians: bool) -> Result<Vec<ResidualBlock>> {
        let (r, j) = (self.f)(x);
        Ok(vec![ResidualBlock { name: "euclidean", index: 0, residual: r, blocks: vec![0], jacobians: if jacobians { vec![j] } else { vec![] } }])
    }

    fn retract(&self, x: &Vec<f64>, delta: &[f64]) -> Vec<f64> {
        x.iter().zip(delta).map(|(a, b)| a + b).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear(a: DMatrix<f64>, b: DVector<f64>) -> EuclideanProblem<impl Fn(&[f64]) -> (Vec<f64>, Vec<f64>) + Sync> {
        let dim = a.ncols();
        EuclideanProblem {
            dim,
            f: move |x: &[f64]| {
                let r = &a * DVector::from_column_slice(x) - &b;
                let j: Vec<f64> = (0..a.nrows()).flat_map(|i| (0..a.ncols()).map(move |k| (i, k))).map(|(i, k)| a[(i, k)]).collect();
                (r.iter().copied().collect(), j)
            },
        }
    }

    #[test]
    fn linear_least_squares_in_three_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let a = DMatrix::from_fn(8, 4, |_, _| rng.random_range(-1.0..1.0));
            let b = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
            let exact = a.clone().svd(true, true).solve(&b, 1e-14).unwrap();
            let p = linear(a, b);
            let (x, rep) = lm_solve(&p, &vec![0.0; 4], &LmConfig::default()).unwrap();
            assert!(x.iter().zip(exact.iter()).all(|(u, v)| (u - v).abs() < 1e-8));
            assert!(rep.accepted <= 3, "{rep:?}");
        }
    }

    #[test]
    fn zero_residual_stops_immediately() {
        let p = EuclideanProblem { dim: 2, f: |x: &[f64]| (vec![x[0] - 1.0, x[1] + 2.0], vec![1.0, 0.0, 0.0, 1.0]) };
        let (x, rep) = lm_solve(&p, &vec![1.0, -2.0], &LmConfig::default()).unwrap();
        assert_eq!(x, vec![1.0, -2.0]);
        assert_eq!(rep.iterations, 0);
        assert_eq!(rep.termination, Termination::SmallGradient);
    }

    #[test]
    fn non_finite_residual_names_block() {
        let p = EuclideanProblem { dim: 1, f: |_: &[f64]| (vec![f64::NAN], vec![1.0]) };
        let err = lm_solve(&p, &vec![0.0], &LmConfig::default()).unwrap_err();
        assert!(err.to_string().contains("euclidean[0]"), "{err}");
    }

    #[test]
    fn cg_solves_spd_within_dimension_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in [1, 5, 20, 50] {
            let m = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
            let a = &m * m.transpose() / k as f64 + DMatrix::identity(k, k);
            let b: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let apply = |x: &[f64], y: &mut [f64]| {
                let v = &a * DVector::from_column_slice(x);
                y.copy_from_slice(v.as_slice());
            };
            let (x, iters) = conjugate_gradient(apply, &vec![1.0; k], &b, 1e-14, k);
            assert!(iters <= k);
            let r = &a * DVector::from_vec(x) - DVector::from_vec(b);
            assert!(r.norm() < 1e-8, "k={k} residual {}", r.norm());
        }
    }

    #[test]
    fn block_multiply_matches_dense() {
        let dims = vec![2, 3, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rand = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let residuals = vec![
            ResidualBlock { name: "a", index: 0, residual: rand(2), blocks: vec![2, 0], jacobians: vec![rand(2), rand(4)] },
            ResidualBlock { name: "b", index: 1, residual: rand(3), blocks: vec![1], jacobians: vec![rand(9)] },
        ];
        let mut sys = BlockSparse::from_pattern(&dims, &residuals);
        let mut g = vec![0.0; 6];
        sys.assemble(&residuals, &mut g).unwrap();
        // Dense Jacobian oracle.
        let mut j = DMatrix::zeros(5, 6);
        let r = DVector::from_iterator(5, residuals.iter().flat_map(|rb| rb.residual.clone()));
        let offs = [0, 2, 5];
        let mut row = 0;
        for rb in &residuals {
            for (b, jac) in rb.blocks.iter().zip(&rb.jacobians) {
                for i in 0..rb.residual.len() {
                    for c in 0..dims[*b] {
                        j[(row + i, offs[*b] + c)] = jac[i * dims[*b] + c];
                    }
                }
            }
            row += rb.residual.len();
        }
        let h = j.transpose() * &j;
        assert!((sys.to_dense() - &h).amax() < 1e-14);
        let gd = j.transpose() * r;
        assert!(g.iter().zip(gd.iter()).all(|(a, b)| (a - b).abs() < 1e-14));
        let x = rand(6);
        let extra = rand(6);
        let mut y = vec![0.0; 6];
        sys.multiply(&x, &extra, &mut y);
        let yd = (&h + DMatrix::from_diagonal(&DVector::from_vec(extra))) * DVector::from_vec(x);
        assert!(y.iter().zip(yd.iter()).all(|(a, b)| (a - b).abs() < 1e-13));
    }
}
