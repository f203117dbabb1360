//! Minimal reverse-mode differentiation over row-major `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! borrowed from a flat weight vector and their gradients are accumulated
//! into a matching flat gradient vector by [`Tape::backward`].

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Storage {
    Param(usize),
    Owned(Vec<f64>),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Rotary { x: Var, head_dim: usize },
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SqErr { x: Var, target: Vec<f64>, weight: f64 },
}

struct Node {
    rows: usize,
    cols: usize,
    storage: Storage,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p [f64],
    nodes: Vec<Node>,
}

const LN_EPS: f64 = 1e-5;
const ROTARY_BASE: f64 = 10000.0;

/// `c = alpha * op(a) * op(b) + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: usize, csa: usize, b: &[f64], rsb: usize, csb: usize, c: &mut [f64], beta: f64) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: slice lengths cover every index addressed by the given
    // dimensions and strides; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), rsa as isize, csa as isize,
            b.as_ptr(), rsb as isize, csb as isize,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

fn rotary_angles(rows: usize, head_dim: usize) -> (Vec<f64>, Vec<f64>) {
    let half = head_dim / 2;
    let mut cos = Vec::with_capacity(rows * half);
    let mut sin = Vec::with_capacity(rows * half);
    for t in 0..rows {
        for i in 0..half {
            let theta = t as f64 * ROTARY_BASE.powf(-2.0 * i as f64 / head_dim as f64);
            cos.push(theta.cos());
            sin.push(theta.sin());
        }
    }
    (cos, sin)
}

/// Rotates consecutive column pairs of every head block; `sign = -1`
/// applies the inverse rotation.
fn rotate_pairs(data: &[f64], rows: usize, cols: usize, head_dim: usize, sign: f64) -> Vec<f64> {
    let (cos, sin) = rotary_angles(rows, head_dim);
    let half = head_dim / 2;
    let mut out = vec![0.0; data.len()];
    for t in 0..rows {
        for c in (0..cols).step_by(2) {
            let i = (c % head_dim) / 2;
            let (co, si) = (cos[t * half + i], sign * sin[t * half + i]);
            let (a, b) = (data[t * cols + c], data[t * cols + c + 1]);
            out[t * cols + c] = a * co - b * si;
            out[t * cols + c + 1] = a * si + b * co;
        }
    }
    out
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Self { params, nodes: Vec::with_capacity(256) }
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(data.len(), rows * cols);
        self.nodes.push(Node { rows, cols, storage: Storage::Owned(data), op });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, offset: usize, rows: usize, cols: usize) -> Var {
        assert!(offset + rows * cols <= self.params.len(), "parameter slice out of range");
        self.nodes.push(Node { rows, cols, storage: Storage::Param(offset), op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, data: Vec<f64>, rows: usize, cols: usize) -> Var {
        assert_eq!(data.len(), rows * cols, "input shape mismatch");
        self.push(rows, cols, data, Op::Leaf)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let n = &self.nodes[v.0];
        match &n.storage {
            Storage::Param(off) => &self.params[*off..*off + n.rows * n.cols],
            Storage::Owned(d) => d,
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let ((m, k), (k2, n)) = (self.shape(a), self.shape(b));
        assert_eq!(k, k2, "matmul inner dimension");
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), k, 1, self.value(b), n, 1, &mut c, 0.0);
        self.push(m, n, c, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let ((m, k), (n, k2)) = (self.shape(a), self.shape(b));
        assert_eq!(k, k2, "matmul_nt inner dimension");
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), k, 1, self.value(b), 1, k, &mut c, 0.0);
        self.push(m, n, c, Op::MatMulNT(a, b))
    }

    /// Adds the single row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let ((m, n), (one, n2)) = (self.shape(a), self.shape(b));
        assert!(one == 1 && n == n2, "add_row shape");
        let bv = self.value(b).to_vec();
        let mut c = self.value(a).to_vec();
        for row in c.chunks_mut(n) {
            for (x, y) in row.iter_mut().zip(&bv) {
                *x += y;
            }
        }
        self.push(m, n, c, Op::AddRow(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!((m, n), self.shape(b), "add shape");
        let c = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push(m, n, c, Op::Add(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (m, n) = self.shape(a);
        let c = self.value(a).iter().map(|x| x * s).collect();
        self.push(m, n, c, Op::Scale(a, s))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let c = self.value(a).iter().map(|&x| silu(x)).collect();
        self.push(m, n, c, Op::Silu(a))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let mut c = self.value(a).to_vec();
        for row in c.chunks_mut(n) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        self.push(m, n, c, Op::Softmax(a))
    }

    /// Row-wise layer normalization with learned gain and bias rows.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (m, n) = self.shape(x);
        assert!(self.shape(gamma) == (1, n) && self.shape(beta) == (1, n), "layer_norm shape");
        let (g, b) = (self.value(gamma).to_vec(), self.value(beta).to_vec());
        let xv = self.value(x);
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &xv[r * n..(r + 1) * n];
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mu) * is;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        self.push(m, n, out, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    /// Rotary position embedding with the row index as position, applied
    /// independently to each block of `head_dim` columns.
    pub fn rotary(&mut self, x: Var, head_dim: usize) -> Var {
        let (m, n) = self.shape(x);
        assert!(head_dim % 2 == 0 && n % head_dim == 0, "rotary shape");
        let out = rotate_pairs(self.value(x), m, n, head_dim, 1.0);
        self.push(m, n, out, Op::Rotary { x, head_dim })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (m, n) = self.shape(x);
        assert!(start + len <= n, "slice out of range");
        let xv = self.value(x);
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&xv[r * n + start..r * n + start + len]);
        }
        self.push(m, len, out, Op::SliceCols(x, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let m = self.shape(parts[0]).0;
        assert!(parts.iter().all(|p| self.shape(*p).0 == m), "concat rows");
        let n: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            for p in parts {
                let w = self.shape(*p).1;
                out.extend_from_slice(&self.value(*p)[r * w..(r + 1) * w]);
            }
        }
        self.push(m, n, out, Op::ConcatCols(parts.to_vec()))
    }

    /// Scalar `weight · Σ (x − target)²`.
    pub fn sq_err(&mut self, x: Var, target: Vec<f64>, weight: f64) -> Var {
        let (m, n) = self.shape(x);
        assert_eq!(target.len(), m * n, "target shape");
        let s: f64 = self.value(x).iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum();
        self.push(1, 1, vec![weight * s], Op::SqErr { x, target, weight })
    }

    /// Propagates d(output)/d(node) from the scalar `output` and adds the
    /// parameter part into `param_grad`.
    pub fn backward(&self, output: Var, param_grad: &mut [f64]) {
        assert_eq!(self.shape(output), (1, 1), "backward needs a scalar");
        assert_eq!(param_grad.len(), self.params.len(), "gradient length");
        let mut grads: Vec<Option<Vec<f64>>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(vec![1.0]);
        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let (m, n) = (node.rows, node.cols);
            match &node.op {
                Op::Leaf => {
                    if let Storage::Param(off) = node.storage {
                        for (p, v) in param_grad[off..off + m * n].iter_mut().zip(&g) {
                            *p += v;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let k = self.shape(*a).1;
                    // dA = G·Bᵀ, dB = Aᵀ·G
                    let ga = accum(&mut grads, *a, m * k);
                    gemm(m, n, k, &g, n, 1, self.value(*b), 1, n, ga, 1.0);
                    let gb = accum(&mut grads, *b, k * n);
                    gemm(k, m, n, self.value(*a), 1, k, &g, n, 1, gb, 1.0);
                }
                Op::MatMulNT(a, b) => {
                    let k = self.shape(*a).1;
                    // C = A·Bᵀ: dA = G·B, dB = Gᵀ·A
                    let ga = accum(&mut grads, *a, m * k);
                    gemm(m, n, k, &g, n, 1, self.value(*b), k, 1, ga, 1.0);
                    let gb = accum(&mut grads, *b, n * k);
                    gemm(n, m, k, &g, 1, n, self.value(*a), k, 1, gb, 1.0);
                }
                Op::AddRow(a, b) => {
                    add_into(accum(&mut grads, *a, m * n), &g);
                    let gb = accum(&mut grads, *b, n);
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                }
                Op::Add(a, b) => {
                    add_into(accum(&mut grads, *a, m * n), &g);
                    add_into(accum(&mut grads, *b, m * n), &g);
                }
                Op::Scale(a, s) => {
                    for (x, v) in accum(&mut grads, *a, m * n).iter_mut().zip(&g) {
                        *x += s * v;
                    }
                }
                Op::Silu(a) => {
                    let av = self.value(*a);
                    let ga = accum(&mut grads, *a, m * n);
                    for i in 0..m * n {
                        let sig = 1.0 / (1.0 + (-av[i]).exp());
                        ga[i] += g[i] * sig * (1.0 + av[i] * (1.0 - sig));
                    }
                }
                Op::Softmax(a) => {
                    let p = self.value(Var(id));
                    let ga = accum(&mut grads, *a, m * n);
                    for r in 0..m {
                        let (pr, gr) = (&p[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                        let dot: f64 = pr.iter().zip(gr).map(|(x, y)| x * y).sum();
                        for c in 0..n {
                            ga[r * n + c] += pr[c] * (gr[c] - dot);
                        }
                    }
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let gv = self.value(*gamma).to_vec();
                    {
                        let gg = accum(&mut grads, *gamma, n);
                        for r in 0..m {
                            for c in 0..n {
                                gg[c] += g[r * n + c] * xhat[r * n + c];
                            }
                        }
                    }
                    {
                        let gb = accum(&mut grads, *beta, n);
                        for row in g.chunks(n) {
                            add_into(gb, row);
                        }
                    }
                    let gx = accum(&mut grads, *x, m * n);
                    let mut dh = vec![0.0; n];
                    for r in 0..m {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for c in 0..n {
                            dh[c] = g[r * n + c] * gv[c];
                            mean_dh += dh[c];
                            mean_dh_h += dh[c] * xhat[r * n + c];
                        }
                        mean_dh /= n as f64;
                        mean_dh_h /= n as f64;
                        for c in 0..n {
                            gx[r * n + c] += inv_std[r] * (dh[c] - mean_dh - xhat[r * n + c] * mean_dh_h);
                        }
                    }
                }
                Op::Rotary { x, head_dim } => {
                    let back = rotate_pairs(&g, m, n, *head_dim, -1.0);
                    add_into(accum(&mut grads, *x, m * n), &back);
                }
                Op::SliceCols(x, start) => {
                    let w = self.shape(*x).1;
                    let gx = accum(&mut grads, *x, m * w);
                    for r in 0..m {
                        add_into(&mut gx[r * w + start..r * w + start + n], &g[r * n..(r + 1) * n]);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        let gp = accum(&mut grads, *p, m * w);
                        for r in 0..m {
                            add_into(&mut gp[r * w..(r + 1) * w], &g[r * n + col..r * n + col + w]);
                        }
                        col += w;
                    }
                }
                Op::SqErr { x, target, weight } => {
                    let xv = self.value(*x);
                    let gx = accum(&mut grads, *x, xv.len());
                    for i in 0..xv.len() {
                        gx[i] += g[0] * 2.0 * weight * (xv[i] - target[i]);
                    }
                }
            }
        }
    }
}

fn accum(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
