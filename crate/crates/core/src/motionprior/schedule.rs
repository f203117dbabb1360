use crate::error::{Error, Result};

/// Default cosine offset.
pub const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    /// `alpha_bar[n]` for `n = 0..=N`, with `alpha_bar[0] = 1`.
    pub alpha_bar: Vec<f64>,
    /// Posterior standard deviation per step; `sigma[0] = 0`.
    pub sigma: Vec<f64>,
    /// Loss weight per step; `weights[0]` is unused.
    pub weights: Vec<f64>,
}

impl NoiseSchedule {
    /// Cosine ᾱ schedule with per-step betas clipped at 0.999.
    pub fn cosine(steps: usize, offset: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidInput("schedule needs at least one step".into()));
        }
        let f = |n: usize| ((n as f64 / steps as f64 + offset) / (1.0 + offset) * std::f64::consts::FRAC_PI_2).cos().powi(2);
        let f0 = f(0);
        let mut alpha_bar = vec![1.0];
        let mut sigma = vec![0.0];
        for n in 1..=steps {
            let beta = (1.0 - (f(n) / f0) / (f(n - 1) / f0)).clamp(0.0, MAX_BETA);
            let prev = alpha_bar[n - 1];
            let ab = prev * (1.0 - beta);
            alpha_bar.push(ab);
            sigma.push((beta * (1.0 - prev) / (1.0 - ab)).sqrt());
        }
        Ok(Self { alpha_bar, sigma, weights: vec![1.0; steps + 1] })
    }

    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.alpha_bar.len() {
            return Err(Error::ShapeMismatch(format!("{} weights for {} steps", weights.len(), self.steps())));
        }
        self.weights = weights;
        Ok(self)
    }

    /// `x_n = √ᾱ_n x_0 + √(1−ᾱ_n) ε`, elementwise.
    pub fn noise_sample(&self, x0: &[f64], n: usize, eps: &[f64]) -> Result<Vec<f64>> {
        if x0.len() != eps.len() {
            return Err(Error::ShapeMismatch(format!("x0 has {} values, eps {}", x0.len(), eps.len())));
        }
        if n == 0 || n > self.steps() {
            return Err(Error::InvalidInput(format!("step {n} outside 1..={}", self.steps())));
        }
        let (a, b) = (self.alpha_bar[n].sqrt(), (1.0 - self.alpha_bar[n]).sqrt());
        Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
    }

    /// Strided DDIM visiting order, starting at N and strictly decreasing.
    pub fn ddim_steps(&self, count: usize) -> Vec<usize> {
        let total = self.steps();
        let count = count.clamp(1, total);
        (0..count).map(|k| total - k * total / count).collect()
    }
}
