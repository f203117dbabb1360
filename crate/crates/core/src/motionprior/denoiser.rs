//! Transformer denoiser: a conditioning encoder of self-attention blocks and
//! a decoder whose blocks add cross-attention to the encoder output. Rotary
//! embeddings carry the temporal position; attention is non-causal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub state_dim: usize,
    pub cond_dim: usize,
    pub width: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    pub enc_blocks: usize,
    pub dec_blocks: usize,
    pub max_len: usize,
}

impl Architecture {
    pub fn new(state_dim: usize, cond_dim: usize) -> Self {
        Self { state_dim, cond_dim, width: 64, heads: 4, ff_hidden: 256, enc_blocks: 2, dec_blocks: 2, max_len: 128 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.state_dim > 0
            && self.cond_dim > 0
            && self.heads > 0
            && self.width % self.heads == 0
            && (self.width / self.heads) % 2 == 0
            && self.width % 2 == 0
            && self.ff_hidden > 0
            && self.max_len > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid architecture {self:?}")))
        }
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Zero,
    One,
    /// Uniform Glorot with the given fan-in and fan-out.
    Glorot,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    pub init: Init,
}

/// Parameter tensors in declaration order.
pub fn layout(arch: &Architecture) -> Vec<ParamSpec> {
    let (w, f, d, c) = (arch.width, arch.ff_hidden, arch.state_dim, arch.cond_dim);
    let mut specs = Vec::new();
    let mut offset = 0;
    let mut add = |name: String, rows: usize, cols: usize, init: Init| {
        specs.push(ParamSpec { name, rows, cols, offset, init });
        offset += rows * cols;
    };
    let ln = |add: &mut dyn FnMut(String, usize, usize, Init), p: &str| {
        add(format!("{p}.gain"), 1, w, Init::One);
        add(format!("{p}.bias"), 1, w, Init::Zero);
    };
    let linear = |add: &mut dyn FnMut(String, usize, usize, Init), p: &str, i: usize, o: usize| {
        add(format!("{p}.weight"), i, o, Init::Glorot);
        add(format!("{p}.bias"), 1, o, Init::Zero);
    };
    linear(&mut add, "enc.input", c, w);
    for b in 0..arch.enc_blocks {
        let p = format!("enc.{b}");
        ln(&mut add, &format!("{p}.ln1"));
        linear(&mut add, &format!("{p}.qkv"), w, 3 * w);
        linear(&mut add, &format!("{p}.attn_out"), w, w);
        ln(&mut add, &format!("{p}.ln2"));
        linear(&mut add, &format!("{p}.ff1"), w, f);
        linear(&mut add, &format!("{p}.ff2"), f, w);
    }
    ln(&mut add, "enc.final_ln");
    linear(&mut add, "noise.fc1", w, w);
    linear(&mut add, "noise.fc2", w, w);
    linear(&mut add, "dec.input", d, w);
    for b in 0..arch.dec_blocks {
        let p = format!("dec.{b}");
        ln(&mut add, &format!("{p}.ln1"));
        linear(&mut add, &format!("{p}.qkv"), w, 3 * w);
        linear(&mut add, &format!("{p}.attn_out"), w, w);
        ln(&mut add, &format!("{p}.ln2"));
        linear(&mut add, &format!("{p}.cross_q"), w, w);
        linear(&mut add, &format!("{p}.cross_kv"), w, 2 * w);
        linear(&mut add, &format!("{p}.cross_out"), w, w);
        ln(&mut add, &format!("{p}.ln3"));
        linear(&mut add, &format!("{p}.ff1"), w, f);
        linear(&mut add, &format!("{p}.ff2"), f, w);
    }
    ln(&mut add, "dec.final_ln");
    add("out.weight".into(), w, d, Init::Zero);
    add("out.bias".into(), 1, d, Init::Zero);
    specs
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub arch: Architecture,
    pub weights: Vec<f64>,
}

impl DenoiserParams {
    /// Glorot weights, unit gains, and a zero output head.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = layout(&arch);
        let total = specs.last().map_or(0, |s| s.offset + s.rows * s.cols);
        let mut weights = vec![0.0; total];
        for s in &specs {
            let slot = &mut weights[s.offset..s.offset + s.rows * s.cols];
            match s.init {
                Init::Zero => {}
                Init::One => slot.fill(1.0),
                Init::Glorot => {
                    let limit = (6.0 / (s.rows + s.cols) as f64).sqrt();
                    for v in slot.iter_mut() {
                        *v = rng.random_range(-limit..limit);
                    }
                }
            }
        }
        Ok(Self { arch, weights })
    }

    pub fn from_weights(arch: Architecture, weights: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let expected = param_count(&arch);
        if weights.len() != expected {
            return Err(Error::ShapeMismatch(format!("{} weights, architecture needs {expected}", weights.len())));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("denoiser weights".into()));
        }
        Ok(Self { arch, weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

pub fn param_count(arch: &Architecture) -> usize {
    layout(arch).last().map_or(0, |s| s.offset + s.rows * s.cols)
}

/// Sinusoidal embedding of the noise level.
fn step_embedding(n: usize, width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut e = vec![0.0; width];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        e[i] = (n as f64 * freq).sin();
        e[half + i] = (n as f64 * freq).cos();
    }
    e
}

struct Cursor<'a> {
    specs: &'a [ParamSpec],
    next: usize,
}

impl Cursor<'_> {
    fn take(&mut self, tape: &mut Tape) -> Var {
        let s = &self.specs[self.next];
        self.next += 1;
        tape.param(s.offset, s.rows, s.cols)
    }

    fn linear(&mut self, tape: &mut Tape, x: Var) -> Var {
        let w = self.take(tape);
        let b = self.take(tape);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }

    fn layer_norm(&mut self, tape: &mut Tape, x: Var) -> Var {
        let g = self.take(tape);
        let b = self.take(tape);
        tape.layer_norm(x, g, b)
    }

    fn feed_forward(&mut self, tape: &mut Tape, x: Var) -> Var {
        let h = self.linear(tape, x);
        let h = tape.silu(h);
        self.linear(tape, h)
    }
}

/// Multi-head attention of rotary-embedded queries over keys and values.
fn attention(tape: &mut Tape, q: Var, k: Var, v: Var, arch: &Architecture) -> Var {
    let hd = arch.head_dim();
    let q = tape.rotary(q, hd);
    let k = tape.rotary(k, hd);
    let scale = 1.0 / (hd as f64).sqrt();
    let heads: Vec<Var> = (0..arch.heads)
        .map(|h| {
            let qh = tape.slice_cols(q, h * hd, hd);
            let kh = tape.slice_cols(k, h * hd, hd);
            let vh = tape.slice_cols(v, h * hd, hd);
            let s = tape.matmul_nt(qh, kh);
            let s = tape.scale(s, scale);
            let p = tape.softmax(s);
            tape.matmul(p, vh)
        })
        .collect();
    tape.concat_cols(&heads)
}

fn self_attention(tape: &mut Tape, cur: &mut Cursor, x: Var, arch: &Architecture) -> Var {
    let w = arch.width;
    let qkv = cur.linear(tape, x);
    let q = tape.slice_cols(qkv, 0, w);
    let k = tape.slice_cols(qkv, w, w);
    let v = tape.slice_cols(qkv, 2 * w, w);
    let a = attention(tape, q, k, v, arch);
    cur.linear(tape, a)
}

/// Records the denoiser on `tape`: noised state `xn` (T×D) and
/// conditioning `cond` (T×C) to a predicted clean state (T×D).
pub fn forward(tape: &mut Tape, arch: &Architecture, xn: Var, cond: Var, n: usize) -> Var {
    let specs = layout(arch);
    let mut cur = Cursor { specs: &specs, next: 0 };
    let w = arch.width;

    let mut h = cur.linear(tape, cond);
    for _ in 0..arch.enc_blocks {
        let a = cur.layer_norm(tape, h);
        let a = self_attention(tape, &mut cur, a, arch);
        h = tape.add(h, a);
        let f = cur.layer_norm(tape, h);
        let f = cur.feed_forward(tape, f);
        h = tape.add(h, f);
    }
    let enc = cur.layer_norm(tape, h);

    let e = tape.input(step_embedding(n, w), 1, w);
    let e = cur.linear(tape, e);
    let e = tape.silu(e);
    let e = cur.linear(tape, e);

    let x = cur.linear(tape, xn);
    let x = tape.add_row(x, e);
    let mut h = tape.add(x, enc);
    for _ in 0..arch.dec_blocks {
        let a = cur.layer_norm(tape, h);
        let a = self_attention(tape, &mut cur, a, arch);
        h = tape.add(h, a);
        let c = cur.layer_norm(tape, h);
        let q = cur.linear(tape, c);
        let kv = cur.linear(tape, enc);
        let k = tape.slice_cols(kv, 0, w);
        let v = tape.slice_cols(kv, w, w);
        let c = attention(tape, q, k, v, arch);
        let c = cur.linear(tape, c);
        h = tape.add(h, c);
        let f = cur.layer_norm(tape, h);
        let f = cur.feed_forward(tape, f);
        h = tape.add(h, f);
    }
    let h = cur.layer_norm(tape, h);
    let out = cur.linear(tape, h);
    debug_assert_eq!(cur.next, specs.len());
    out
}

fn check_inputs(params: &DenoiserParams, xn: &[f64], len: usize, cond: &[f64]) -> Result<()> {
    let a = &params.arch;
    if len == 0 || len > a.max_len {
        return Err(Error::InvalidInput(format!("sequence length {len} outside 1..={}", a.max_len)));
    }
    if xn.len() != len * a.state_dim || cond.len() != len * a.cond_dim {
        return Err(Error::ShapeMismatch(format!(
            "expected {len}×{} state and {len}×{} conditioning, got {} and {} values",
            a.state_dim,
            a.cond_dim,
            xn.len(),
            cond.len()
        )));
    }
    Ok(())
}

/// Predicted clean state (normalized space) for `len` timesteps.
pub fn denoise(params: &DenoiserParams, xn: &[f64], len: usize, n: usize, cond: &[f64]) -> Result<Vec<f64>> {
    check_inputs(params, xn, len, cond)?;
    let a = &params.arch;
    let mut tape = Tape::new(&params.weights);
    let x = tape.input(xn.to_vec(), len, a.state_dim);
    let c = tape.input(cond.to_vec(), len, a.cond_dim);
    let out = forward(&mut tape, a, x, c, n);
    Ok(tape.value(out).to_vec())
}

/// `weight · Σ‖denoise(xn) − target‖²` and its gradient w.r.t. the weights.
pub fn sample_loss(
    params: &DenoiserParams,
    xn: &[f64],
    len: usize,
    n: usize,
    cond: &[f64],
    target: &[f64],
    weight: f64,
) -> Result<(f64, Vec<f64>)> {
    check_inputs(params, xn, len, cond)?;
    if target.len() != xn.len() {
        return Err(Error::ShapeMismatch("target shape differs from state".into()));
    }
    let a = &params.arch;
    let mut tape = Tape::new(&params.weights);
    let x = tape.input(xn.to_vec(), len, a.state_dim);
    let c = tape.input(cond.to_vec(), len, a.cond_dim);
    let out = forward(&mut tape, a, x, c, n);
    let loss = tape.sq_err(out, target.to_vec(), weight);
    let mut grad = vec![0.0; params.len()];
    tape.backward(loss, &mut grad);
    Ok((tape.value(loss)[0], grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch() -> Architecture {
        Architecture { state_dim: 5, cond_dim: 3, width: 16, heads: 2, ff_hidden: 32, enc_blocks: 1, dec_blocks: 1, max_len: 128 }
    }

    fn randomized(arch: Architecture, seed: u64) -> DenoiserParams {
        let mut p = DenoiserParams::init(arch, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        for w in p.weights.iter_mut() {
            *w += rng.random_range(-0.3..0.3);
        }
        p
    }

    fn rand_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn layout_is_contiguous() {
        let arch = Architecture::new(329, 18);
        let specs = layout(&arch);
        let mut off = 0;
        for s in &specs {
            assert_eq!(s.offset, off, "{}", s.name);
            off += s.rows * s.cols;
        }
        assert_eq!(off, param_count(&arch));
        let names: std::collections::HashSet<_> = specs.iter().map(|s| &s.name).collect();
        assert_eq!(names.len(), specs.len());
    }

    #[test]
    fn zero_head_outputs_zero_for_any_length() {
        let arch = Architecture::new(329, 18);
        let params = DenoiserParams::init(arch, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for len in [1, 32, 128] {
            let out = denoise(&params, &rand_vec(&mut rng, len * 329), len, 500, &rand_vec(&mut rng, len * 18)).unwrap();
            assert_eq!(out.len(), len * 329);
            assert!(out.iter().all(|v| *v == 0.0));
        }
        assert!(denoise(&params, &vec![0.0; 129 * 329], 129, 1, &vec![0.0; 129 * 18]).is_err());
        assert!(denoise(&params, &[0.0; 10], 1, 1, &[0.0; 18]).is_err());
    }

    #[test]
    fn deterministic_outputs() {
        let params = randomized(small_arch(), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (x, c) = (rand_vec(&mut rng, 7 * 5), rand_vec(&mut rng, 7 * 3));
        let a = denoise(&params, &x, 7, 10, &c).unwrap();
        let b = denoise(&params, &x, 7, 10, &c).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn exact_prediction_has_zero_loss_and_gradient() {
        let params = randomized(small_arch(), 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (x, c) = (rand_vec(&mut rng, 4 * 5), rand_vec(&mut rng, 4 * 3));
        let target = denoise(&params, &x, 4, 3, &c).unwrap();
        let (loss, grad) = sample_loss(&params, &x, 4, 3, &c, &target, 1.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn temporal_order_matters() {
        // Rotary embeddings make the encoder position-aware.
        let params = randomized(small_arch(), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = vec![0.2; 3 * 5];
        let c = rand_vec(&mut rng, 3 * 3);
        let mut swapped = c.clone();
        swapped[..3].copy_from_slice(&c[6..9]);
        swapped[6..9].copy_from_slice(&c[..3]);
        let a = denoise(&params, &x, 3, 10, &c).unwrap();
        let b = denoise(&params, &x, 3, 10, &swapped).unwrap();
        assert!((a[5] - b[5]).abs() > 1e-9);
    }
}
