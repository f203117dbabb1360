//! Conditional diffusion prior over local body motion.
//!
//! Each timestep's state holds 51 joint rotations in the 6D encoding, the
//! shape coefficients, and 21 contact scores. States are normalized per
//! dimension with training-set statistics before noising.

pub mod checkpoint;
pub mod denoiser;
pub mod sampler;
pub mod schedule;
pub mod tape;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::body::{LocalPose, ShapeParams, NUM_BODY, NUM_LOCAL, SHAPE_DIM};
use crate::conditioning::{self, ConditioningVariant};
use crate::error::{Error, Result};
use crate::geometry::{PoseSE3, Rot6D};

pub use denoiser::{Architecture, DenoiserParams};
pub use sampler::{ddim_sample, fused_sample, split_windows, Denoise, GuidanceHook};
pub use schedule::NoiseSchedule;

pub const ROT_DIMS: usize = NUM_LOCAL * 6;
pub const STATE_DIM: usize = ROT_DIMS + SHAPE_DIM + NUM_BODY;
pub const SHAPE_OFFSET: usize = ROT_DIMS;
pub const CONTACT_OFFSET: usize = ROT_DIMS + SHAPE_DIM;

#[derive(Debug, Clone, PartialEq)]
pub struct MotionState {
    pub rotations: Vec<Rot6D>,
    pub shape: [f64; SHAPE_DIM],
    pub contacts: [f64; NUM_BODY],
}

impl MotionState {
    pub fn from_pose(pose: &LocalPose, shape: &ShapeParams, contacts: &[bool; NUM_BODY]) -> Self {
        Self {
            rotations: pose.joint_rotations.iter().map(Rot6D::from_rotation).collect(),
            shape: shape.beta,
            contacts: contacts.map(f64::from),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(STATE_DIM);
        for r in &self.rotations {
            v.extend_from_slice(&r.0);
        }
        v.extend_from_slice(&self.shape);
        v.extend_from_slice(&self.contacts);
        v
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() != STATE_DIM {
            return Err(Error::ShapeMismatch(format!("state has {} values, expected {STATE_DIM}", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("motion state".into()));
        }
        let rotations = v[..ROT_DIMS].chunks(6).map(|c| Rot6D(c.try_into().expect("chunk of 6"))).collect();
        Ok(Self {
            rotations,
            shape: v[SHAPE_OFFSET..CONTACT_OFFSET].try_into().expect("shape slice"),
            contacts: v[CONTACT_OFFSET..].try_into().expect("contact slice"),
        })
    }

    pub fn local_pose(&self) -> Result<LocalPose> {
        LocalPose::new(self.rotations.iter().map(Rot6D::to_rotation).collect::<Result<_>>()?)
    }

    pub fn shape_params(&self) -> ShapeParams {
        ShapeParams::clamped(self.shape)
    }

    pub fn contact_flags(&self) -> [bool; NUM_BODY] {
        self.contacts.map(|c| c >= 0.5)
    }
}

pub fn flatten_states(states: &[MotionState]) -> Vec<f64> {
    states.iter().flat_map(MotionState::flatten).collect()
}

/// Splits a raw `T × STATE_DIM` array into states, averaging shape over the
/// sequence and clamping contacts to `[0, 1]`.
pub fn states_from_flat(flat: &[f64]) -> Result<Vec<MotionState>> {
    if flat.len() % STATE_DIM != 0 || flat.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} values is not a whole number of states", flat.len())));
    }
    let mut states: Vec<MotionState> = flat.chunks(STATE_DIM).map(MotionState::from_flat).collect::<Result<_>>()?;
    let t = states.len() as f64;
    let mut beta = [0.0; SHAPE_DIM];
    for s in &states {
        for (b, v) in beta.iter_mut().zip(&s.shape) {
            *b += v / t;
        }
    }
    for s in &mut states {
        s.shape = beta;
        for c in &mut s.contacts {
            *c = c.clamp(0.0, 1.0);
        }
    }
    Ok(states)
}

/// Per-dimension affine normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Smallest standard deviation used, so constant dimensions stay finite.
pub const MIN_STD: f64 = 1e-2;

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Statistics over all rows of the given `T × dim` arrays.
    pub fn fit<'a>(dim: usize, data: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let mut count = 0usize;
        for seq in data {
            for row in seq.chunks(dim) {
                for i in 0..dim {
                    sum[i] += row[i];
                    sq[i] += row[i] * row[i];
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::InsufficientData("no frames to fit normalization".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq.iter().zip(&mean).map(|(s, m)| (s / n - m * m).max(0.0).sqrt().max(MIN_STD)).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, data: &mut [f64]) {
        let d = self.dim();
        for row in data.chunks_mut(d) {
            for i in 0..d {
                row[i] = (row[i] - self.mean[i]) / self.std[i];
            }
        }
    }

    pub fn denormalize(&self, data: &mut [f64]) {
        let d = self.dim();
        for row in data.chunks_mut(d) {
            for i in 0..d {
                row[i] = row[i] * self.std[i] + self.mean[i];
            }
        }
    }
}

/// A trained prior: denoiser weights, normalization, conditioning variant,
/// and the noise schedule it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionPrior {
    pub params: DenoiserParams,
    pub normalizer: Normalizer,
    pub variant: ConditioningVariant,
    pub schedule: NoiseSchedule,
    pub cosine_offset: f64,
}

impl Denoise for MotionPrior {
    fn state_dim(&self) -> usize {
        self.params.arch.state_dim
    }

    fn cond_dim(&self) -> usize {
        self.params.arch.cond_dim
    }

    fn max_len(&self) -> usize {
        self.params.arch.max_len
    }

    fn denoise(&self, xn: &[f64], len: usize, n: usize, cond: &[f64]) -> Result<Vec<f64>> {
        denoiser::denoise(&self.params, xn, len, n, cond)
    }
}

impl MotionPrior {
    pub fn encode(&self, cpf: &[PoseSE3]) -> Result<Vec<f64>> {
        conditioning::encode_flat(self.variant, cpf)
    }

    /// Samples raw (denormalized) states for a CPF trajectory of any length.
    /// The guidance hook receives normalized clean-sample predictions.
    pub fn sample(
        &self,
        cpf: &[PoseSE3],
        steps: usize,
        guidance: Option<&mut dyn GuidanceHook>,
        seed: u64,
    ) -> Result<Vec<MotionState>> {
        let cond = self.encode(cpf)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = fused_sample(self, &self.schedule, &cond, cpf.len(), steps, guidance, &mut rng)?;
        self.normalizer.denormalize(&mut x);
        states_from_flat(&x)
    }
}
