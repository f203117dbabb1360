//! Training: random crops, uniform noise levels, Adam on the weighted
//! clean-sample regression loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::denoiser::{sample_loss, Architecture, DenoiserParams};
use super::schedule::{NoiseSchedule, COSINE_OFFSET};
use super::{MotionPrior, Normalizer, STATE_DIM};
use crate::conditioning::{self, ConditioningVariant};
use crate::error::{Error, Result};
use crate::geometry::PoseSE3;

/// One training sequence: the world CPF trajectory and raw states
/// (`T × STATE_DIM`).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSequence {
    pub cpf: Vec<PoseSE3>,
    pub states: Vec<f64>,
}

impl TrainingSequence {
    pub fn len(&self) -> usize {
        self.cpf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cpf.is_empty()
    }
}

/// Indexed access to training sequences; implementations may generate them
/// on demand.
pub trait SequenceSource: Sync {
    fn len(&self) -> usize;
    fn get(&self, index: usize) -> Result<TrainingSequence>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SequenceSource for Vec<TrainingSequence> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn get(&self, index: usize) -> Result<TrainingSequence> {
        self.as_slice().get(index).cloned().ok_or_else(|| Error::InvalidInput(format!("no sequence {index}")))
    }
}

/// A normalized clean crop with its conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub x0: Vec<f64>,
    pub cond: Vec<f64>,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: ConditioningVariant,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub crop_min: usize,
    pub crop_max: usize,
    pub seed: u64,
    pub width: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    pub enc_blocks: usize,
    pub dec_blocks: usize,
    pub diffusion_steps: usize,
    pub grad_clip: f64,
    /// Sequences used to fit the normalization statistics.
    pub normalizer_sequences: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: ConditioningVariant::EgoAllo,
            steps: 2000,
            batch_size: 8,
            learning_rate: 1e-3,
            crop_min: 32,
            crop_max: 128,
            seed: 0,
            width: 64,
            heads: 4,
            ff_hidden: 256,
            enc_blocks: 2,
            dec_blocks: 2,
            diffusion_steps: 1000,
            grad_clip: 1.0,
            normalizer_sequences: 256,
        }
    }
}

impl TrainConfig {
    pub fn architecture(&self) -> Architecture {
        Architecture {
            state_dim: STATE_DIM,
            cond_dim: self.variant.feature_dim(),
            width: self.width,
            heads: self.heads,
            ff_hidden: self.ff_hidden,
            enc_blocks: self.enc_blocks,
            dec_blocks: self.dec_blocks,
            max_len: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.crop_min == 0 || self.crop_min > self.crop_max || self.crop_max > 128 {
            return Err(Error::Config("crop lengths must satisfy 1 <= crop_min <= crop_max <= 128".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        self.architecture().validate().map_err(|e| Error::Config(e.to_string()))
    }
}

/// Mean over the batch of `w_n · (1/T) Σ_t ‖denoise(x_n) − x_0‖²` with
/// `n` uniform in `1..=N` and `x_n` freshly noised; returns the loss and its
/// exact gradient.
pub fn training_loss<R: Rng>(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    batch: &[TrainExample],
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let draws: Vec<(usize, Vec<f64>)> = batch
        .iter()
        .map(|ex| {
            let n = rng.random_range(1..=schedule.steps());
            let eps = (0..ex.x0.len()).map(|_| StandardNormal.sample(&mut *rng)).collect();
            (n, eps)
        })
        .collect();
    let b = batch.len() as f64;
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .zip(draws.par_iter())
        .map(|(ex, (n, eps))| {
            let xn = schedule.noise_sample(&ex.x0, *n, eps)?;
            let weight = schedule.weights[*n] / (ex.len as f64 * b);
            sample_loss(params, &xn, ex.len, *n, &ex.cond, &ex.x0, weight)
        })
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.len()];
    for (l, g) in parts {
        loss += l;
        for (a, v) in grad.iter_mut().zip(&g) {
            *a += v;
        }
    }
    Ok((loss, grad))
}

pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step(&mut self, weights: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..weights.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            weights[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Linear warmup followed by cosine decay to a tenth of the peak rate.
pub fn learning_rate(config: &TrainConfig, step: usize) -> f64 {
    let warmup = (config.steps / 10).clamp(1, 100);
    if step < warmup {
        return config.learning_rate * (step + 1) as f64 / warmup as f64;
    }
    let progress = (step - warmup) as f64 / (config.steps - warmup).max(1) as f64;
    config.learning_rate * (0.1 + 0.9 * 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos()))
}

/// Crops a sequence and builds a normalized example.
pub fn make_example(
    seq: &TrainingSequence,
    start: usize,
    len: usize,
    variant: ConditioningVariant,
    normalizer: &Normalizer,
) -> Result<TrainExample> {
    if start + len > seq.len() || len == 0 {
        return Err(Error::InvalidInput(format!("crop {start}+{len} outside sequence of {}", seq.len())));
    }
    let mut x0 = seq.states[start * STATE_DIM..(start + len) * STATE_DIM].to_vec();
    normalizer.normalize(&mut x0);
    let cond = conditioning::encode_flat(variant, &seq.cpf[start..start + len])?;
    Ok(TrainExample { x0, cond, len })
}

pub fn fit_normalizer(source: &dyn SequenceSource, count: usize) -> Result<Normalizer> {
    let seqs: Vec<TrainingSequence> = (0..count.min(source.len()).max(1)).map(|i| source.get(i)).collect::<Result<_>>()?;
    Normalizer::fit(STATE_DIM, seqs.iter().map(|s| s.states.as_slice()))
}

/// Trains a prior from scratch. `progress` receives `(step, loss)`.
pub fn train(config: &TrainConfig, source: &dyn SequenceSource, progress: &mut dyn FnMut(usize, f64)) -> Result<MotionPrior> {
    config.validate()?;
    if source.is_empty() {
        return Err(Error::InsufficientData("no training sequences".into()));
    }
    let normalizer = fit_normalizer(source, config.normalizer_sequences)?;
    let schedule = NoiseSchedule::cosine(config.diffusion_steps, COSINE_OFFSET)?;
    let mut params = DenoiserParams::init(config.architecture(), config.seed)?;
    let mut adam = Adam::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_7a11);
    for step in 0..config.steps {
        let picks: Vec<(usize, usize, u64)> = (0..config.batch_size)
            .map(|_| (rng.random_range(0..source.len()), rng.random_range(config.crop_min..=config.crop_max), rng.random()))
            .collect();
        let batch: Vec<TrainExample> = picks
            .par_iter()
            .map(|&(idx, want, crop_seed)| {
                let seq = source.get(idx)?;
                let len = want.min(seq.len());
                let start = ChaCha8Rng::seed_from_u64(crop_seed).random_range(0..=seq.len() - len);
                make_example(&seq, start, len, config.variant, &normalizer)
            })
            .collect::<Result<_>>()?;
        let (loss, mut grad) = training_loss(&params, &schedule, &batch, &mut rng)?;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("loss became {loss} at step {step}")));
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > config.grad_clip {
            let s = config.grad_clip / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        adam.step(&mut params.weights, &grad, learning_rate(config, step));
        progress(step, loss);
    }
    Ok(MotionPrior { params, normalizer, variant: config.variant, schedule, cosine_offset: COSINE_OFFSET })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_params(seed: u64) -> DenoiserParams {
        let arch = Architecture { state_dim: 6, cond_dim: 4, width: 16, heads: 2, ff_hidden: 16, enc_blocks: 1, dec_blocks: 1, max_len: 128 };
        let mut p = DenoiserParams::init(arch, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        p.weights.iter_mut().for_each(|w| *w += rng.random_range(-0.2..0.2));
        p
    }

    fn batch(seed: u64) -> Vec<TrainExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        [3usize, 5]
            .iter()
            .map(|&len| TrainExample {
                x0: (0..len * 6).map(|_| rng.random_range(-1.0..1.0)).collect(),
                cond: (0..len * 4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                len,
            })
            .collect()
    }

    #[test]
    fn zero_weights_give_zero_loss() {
        let params = small_params(1);
        let schedule = NoiseSchedule::cosine(50, COSINE_OFFSET).unwrap().with_weights(vec![0.0; 51]).unwrap();
        let (loss, grad) = training_loss(&params, &schedule, &batch(2), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
        assert!(training_loss(&params, &schedule, &[], &mut ChaCha8Rng::seed_from_u64(3)).is_err());
    }

    #[test]
    fn loss_is_reproducible_and_nonnegative() {
        let params = small_params(4);
        let schedule = NoiseSchedule::cosine(50, COSINE_OFFSET).unwrap();
        let a = training_loss(&params, &schedule, &batch(5), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let b = training_loss(&params, &schedule, &batch(5), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(a, b);
        assert!(a.0 > 0.0);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut w = vec![3.0, -2.0];
        let mut opt = Adam::new(2);
        for _ in 0..2000 {
            let g = w.clone();
            opt.step(&mut w, &g, 0.01);
        }
        assert!(w.iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn schedule_warms_up_and_decays() {
        let cfg = TrainConfig { steps: 1000, ..TrainConfig::default() };
        assert!(learning_rate(&cfg, 0) < learning_rate(&cfg, 50));
        assert!((learning_rate(&cfg, 100) - cfg.learning_rate).abs() < 1e-12);
        assert!((learning_rate(&cfg, 999) - 0.1 * cfg.learning_rate).abs() < 1e-5);
    }
}
