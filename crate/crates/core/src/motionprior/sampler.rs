//! Deterministic DDIM sampling and MultiDiffusion window fusion.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};

pub const WINDOW_LEN: usize = 128;
pub const WINDOW_STRIDE: usize = 96;

/// Anything that predicts a clean sequence from a noised one.
pub trait Denoise: Sync {
    fn state_dim(&self) -> usize;
    fn cond_dim(&self) -> usize;
    fn max_len(&self) -> usize;
    /// `xn` is `len × state_dim`, `cond` is `len × cond_dim`, row-major.
    fn denoise(&self, xn: &[f64], len: usize, n: usize, cond: &[f64]) -> Result<Vec<f64>>;
}

/// Post-processes the clean-sample prediction `x0_hat` (`len × state_dim`)
/// at DDIM step `step` of `steps`.
pub trait GuidanceHook {
    fn guide(&mut self, step: usize, steps: usize, x0_hat: &mut [f64]) -> Result<()>;
}

impl<F: FnMut(usize, usize, &mut [f64]) -> Result<()>> GuidanceHook for F {
    fn guide(&mut self, step: usize, steps: usize, x0_hat: &mut [f64]) -> Result<()> {
        self(step, steps, x0_hat)
    }
}

/// Windows of length `min(T, 128)` every 96 steps; the last one is shifted
/// left to end at `T`.
pub fn split_windows(len: usize) -> Vec<(usize, usize)> {
    split_windows_with(len, WINDOW_LEN, WINDOW_STRIDE)
}

pub fn split_windows_with(len: usize, window: usize, stride: usize) -> Vec<(usize, usize)> {
    if len <= window {
        return vec![(0, len)];
    }
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        if start + window >= len {
            out.push((len - window, len));
            break;
        }
        out.push((start, start + window));
        start += stride;
    }
    out
}

/// Averages per-window predictions (`preds[i]` covers `windows[i]`) into a
/// full sequence of `len × dim` values.
pub fn fuse_windows(len: usize, dim: usize, windows: &[(usize, usize)], preds: &[Vec<f64>]) -> Vec<f64> {
    let mut sum = vec![0.0; len * dim];
    let mut count = vec![0u32; len];
    for (&(s, e), p) in windows.iter().zip(preds) {
        for t in s..e {
            count[t] += 1;
            let src = &p[(t - s) * dim..(t - s + 1) * dim];
            for (d, v) in sum[t * dim..(t + 1) * dim].iter_mut().zip(src) {
                *d += v;
            }
        }
    }
    for t in 0..len {
        if count[t] > 1 {
            let c = count[t] as f64;
            for v in &mut sum[t * dim..(t + 1) * dim] {
                *v /= c;
            }
        }
    }
    sum
}

/// `x_{n'} = √ᾱ_{n'} x̂0 + √(1−ᾱ_{n'}) ε̂` with `ε̂` implied by `(x_n, x̂0)`.
pub fn ddim_update(schedule: &NoiseSchedule, xn: &[f64], x0_hat: &[f64], n: usize, next: usize) -> Vec<f64> {
    let (ab, ab_next) = (schedule.alpha_bar[n], schedule.alpha_bar[next]);
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (na, nb) = (ab_next.sqrt(), (1.0 - ab_next).sqrt());
    xn.iter()
        .zip(x0_hat)
        .map(|(x, x0)| {
            let eps = if sb > 0.0 { (x - sa * x0) / sb } else { 0.0 };
            na * x0 + nb * eps
        })
        .collect()
}

/// Single-window DDIM sampling; `len` must fit the denoiser's window.
pub fn ddim_sample<R: Rng>(
    model: &dyn Denoise,
    schedule: &NoiseSchedule,
    cond: &[f64],
    len: usize,
    steps: usize,
    guidance: Option<&mut dyn GuidanceHook>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if len > model.max_len() {
        return Err(Error::InvalidInput(format!("length {len} exceeds window {}", model.max_len())));
    }
    fused_sample(model, schedule, cond, len, steps, guidance, rng)
}

/// DDIM over overlapping windows, fusing their clean-sample predictions
/// after every step so the whole sequence shares one trajectory.
pub fn fused_sample<R: Rng>(
    model: &dyn Denoise,
    schedule: &NoiseSchedule,
    cond: &[f64],
    len: usize,
    steps: usize,
    mut guidance: Option<&mut dyn GuidanceHook>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let (d, c) = (model.state_dim(), model.cond_dim());
    if len == 0 {
        return Err(Error::InvalidInput("cannot sample an empty sequence".into()));
    }
    if steps == 0 {
        return Err(Error::InvalidInput("need at least one sampling step".into()));
    }
    if cond.len() != len * c {
        return Err(Error::ShapeMismatch(format!("conditioning has {} values, expected {}", cond.len(), len * c)));
    }
    let windows = split_windows_with(len, model.max_len(), model.max_len() * 3 / 4);
    let order = schedule.ddim_steps(steps);
    let mut x: Vec<f64> = (0..len * d).map(|_| StandardNormal.sample(rng)).collect();
    for (k, &n) in order.iter().enumerate() {
        let preds: Vec<Vec<f64>> = windows
            .par_iter()
            .map(|&(s, e)| model.denoise(&x[s * d..e * d], e - s, n, &cond[s * c..e * c]))
            .collect::<Result<_>>()?;
        let mut x0 = fuse_windows(len, d, &windows, &preds);
        if let Some(g) = guidance.as_deref_mut() {
            g.guide(k, order.len(), &mut x0)?;
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("clean-sample prediction at step {n}")));
        }
        let next = order.get(k + 1).copied().unwrap_or(0);
        x = ddim_update(schedule, &x, &x0, n, next);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motionprior::schedule::COSINE_OFFSET;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Oracle {
        x0: Vec<f64>,
        dim: usize,
        offset: std::sync::Mutex<Vec<(usize, usize)>>,
    }

    // Returns the slice of the true x0 matching the queried window, found by
    // matching the window start recorded per call order.
    impl Denoise for Oracle {
        fn state_dim(&self) -> usize {
            self.dim
        }
        fn cond_dim(&self) -> usize {
            1
        }
        fn max_len(&self) -> usize {
            128
        }
        fn denoise(&self, _xn: &[f64], len: usize, _n: usize, cond: &[f64]) -> Result<Vec<f64>> {
            // The conditioning carries the absolute timestep.
            let s = cond[0] as usize;
            self.offset.lock().unwrap().push((s, s + len));
            Ok(self.x0[s * self.dim..(s + len) * self.dim].to_vec())
        }
    }

    fn oracle(len: usize, dim: usize, seed: u64) -> (Oracle, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0: Vec<f64> = (0..len * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let cond = (0..len).map(|t| t as f64).collect();
        (Oracle { x0, dim, offset: Default::default() }, cond)
    }

    #[test]
    fn window_examples() {
        assert_eq!(split_windows(128), vec![(0, 128)]);
        assert_eq!(split_windows(50), vec![(0, 50)]);
        assert_eq!(split_windows(224), vec![(0, 128), (96, 224)]);
        assert_eq!(split_windows(300), vec![(0, 128), (96, 224), (172, 300)]);
        for len in 1..700 {
            let w = split_windows(len);
            assert_eq!(w[0].0, 0);
            assert_eq!(w.last().unwrap().1, len);
            assert!(w.windows(2).all(|p| p[1].0 <= p[0].1 && p[1].0 > p[0].0));
            assert!(w.iter().all(|(s, e)| e - s == len.min(128)));
        }
    }

    #[test]
    fn oracle_chain_recovers_x0() {
        let schedule = NoiseSchedule::cosine(1000, COSINE_OFFSET).unwrap();
        let (model, cond) = oracle(100, 6, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = ddim_sample(&model, &schedule, &cond, 100, 30, None, &mut rng).unwrap();
        assert!(out.iter().zip(&model.x0).all(|(a, b)| (a - b).abs() < 1e-8));

        let (model, cond) = oracle(300, 6, 3);
        let out = fused_sample(&model, &schedule, &cond, 300, 30, None, &mut rng).unwrap();
        assert!(out.iter().zip(&model.x0).all(|(a, b)| (a - b).abs() < 1e-8));
        let calls = model.offset.lock().unwrap();
        assert_eq!(calls.len(), 90);
    }

    #[test]
    fn single_step_returns_first_prediction() {
        struct Const;
        impl Denoise for Const {
            fn state_dim(&self) -> usize {
                2
            }
            fn cond_dim(&self) -> usize {
                1
            }
            fn max_len(&self) -> usize {
                128
            }
            fn denoise(&self, xn: &[f64], _: usize, n: usize, _: &[f64]) -> Result<Vec<f64>> {
                assert_eq!(n, 1000);
                Ok(xn.iter().map(|v| 0.5 * v + 1.0).collect())
            }
        }
        let schedule = NoiseSchedule::cosine(1000, COSINE_OFFSET).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = ddim_sample(&Const, &schedule, &[0.0; 3], 3, 1, None, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..6).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert_eq!(out, x.iter().map(|v| 0.5 * v + 1.0).collect::<Vec<_>>());
    }

    #[test]
    fn fusion_examples() {
        let windows = [(0, 4), (2, 6)];
        let a = vec![1.0; 4];
        let b = vec![1.0; 4];
        assert_eq!(fuse_windows(6, 1, &windows, &[a.clone(), b]), vec![1.0; 6]);
        let b = vec![3.0; 4];
        assert_eq!(fuse_windows(6, 1, &windows, &[a, b]), vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn guidance_sees_every_step() {
        let schedule = NoiseSchedule::cosine(1000, COSINE_OFFSET).unwrap();
        let (model, cond) = oracle(10, 2, 4);
        let mut seen = Vec::new();
        let mut hook = |k: usize, total: usize, x0: &mut [f64]| {
            seen.push((k, total));
            x0.fill(0.25);
            Ok(())
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = ddim_sample(&model, &schedule, &cond, 10, 5, Some(&mut hook), &mut rng).unwrap();
        assert_eq!(seen, (0..5).map(|k| (k, 5)).collect::<Vec<_>>());
        assert!(out.iter().all(|v| (v - 0.25).abs() < 1e-12));
    }
}
