#![allow(dead_code)]

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use egokit::body::{LocalPose, ShapeParams, NUM_BODY};
use egokit::data::{self, Corruption, GeneratorConfig, MotionSequence, SyntheticSource};
use egokit::geometry::{PoseSE3, Rotation3};
use egokit::guidance::{GuidanceWeights, HandObservation};
use egokit::motionprior::train::{self, TrainConfig};
use egokit::motionprior::MotionPrior;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rotation(rng: &mut impl Rng, max_angle: f64) -> Rotation3 {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let axis = if axis.norm() < 1e-3 { Vector3::z() } else { axis.normalize() };
    Rotation3::exp(&(axis * rng.random_range(0.0..max_angle)))
}

/// Rotation about z plus a horizontal translation.
pub fn random_txy(rng: &mut impl Rng) -> PoseSE3 {
    PoseSE3::new(
        Rotation3::rz(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)),
        Vector3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), 0.0),
    )
}

/// A head-like trajectory: smooth random walk at standing height with a
/// gaze that never points straight up or down.
pub fn random_head_trajectory(rng: &mut impl Rng, len: usize) -> Vec<PoseSE3> {
    let mut yaw: f64 = rng.random_range(-3.0..3.0);
    let mut pos = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(1.3..1.8));
    (0..len)
        .map(|_| {
            yaw += rng.random_range(-0.08..0.08);
            let pitch: f64 = rng.random_range(-0.5..0.3);
            let roll: f64 = rng.random_range(-0.1..0.1);
            pos += Vector3::new(-yaw.sin(), yaw.cos(), 0.0) * rng.random_range(0.0..0.05);
            pos.z += rng.random_range(-0.01..0.01);
            let gaze = Vector3::new(-yaw.sin() * pitch.cos(), yaw.cos() * pitch.cos(), pitch.sin());
            let left = Vector3::z().cross(&gaze).normalize();
            let up = gaze.cross(&left);
            // CPF columns: +x left, +y up, +z forward.
            let base = Rotation3::try_from_matrix(Matrix3::from_columns(&[left, up, gaze])).unwrap();
            PoseSE3::new(base * Rotation3::exp(&(gaze.normalize() * roll)), pos)
        })
        .collect()
}

pub fn sequence(index: u64, len: usize) -> MotionSequence {
    data::generate_one(&GeneratorConfig::default(), index).unwrap().slice(0, len).unwrap()
}

pub fn perturb(pose: &LocalPose, rng: &mut impl Rng, angle: f64) -> LocalPose {
    LocalPose { joint_rotations: pose.joint_rotations.iter().map(|r| *r * random_rotation(rng, angle)).collect() }
}

/// A small guidance problem touching every residual type.
pub struct GuidanceFixture {
    pub theta: Vec<LocalPose>,
    pub theta_hat: Vec<LocalPose>,
    pub shape: ShapeParams,
    pub contacts: Vec<[f64; NUM_BODY]>,
    pub cpf: Vec<PoseSE3>,
    pub obs: Vec<HandObservation>,
    pub weights: GuidanceWeights,
}

pub fn guidance_fixture(seed: u64, len: usize) -> GuidanceFixture {
    let seq = sequence(seed, len);
    let mut r = rng(seed);
    let obs = data::synthesize_hand_observations(&seq, &Corruption { depth_scale: 1.2, noise_px: 3.0, dropout: 0.0, seed }).unwrap();
    let theta_hat: Vec<LocalPose> = seq.local.iter().map(|p| perturb(p, &mut r, 0.15)).collect();
    let theta: Vec<LocalPose> = seq.local.iter().map(|p| perturb(p, &mut r, 0.15)).collect();
    let contacts = seq.contacts.iter().map(|c| c.map(|v| if v { 1.0 } else { 0.25 })).collect();
    GuidanceFixture {
        theta,
        theta_hat,
        shape: seq.shape,
        contacts,
        cpf: seq.cpf_trajectory(),
        obs,
        weights: GuidanceWeights {
            lambda_hands3d: 1.0,
            lambda_reproj: 0.01,
            lambda_skate: 10.0,
            lambda_prior_abs: 1.0,
            lambda_prior_vel: 10.0,
            lambda_prior_fk: 1.0,
        },
    }
}

/// A very small egoallo prior trained for a few steps.
pub fn tiny_prior(steps: usize, seed: u64) -> MotionPrior {
    let config = TrainConfig {
        steps,
        batch_size: 2,
        crop_min: 16,
        crop_max: 32,
        width: 16,
        heads: 2,
        ff_hidden: 32,
        enc_blocks: 1,
        dec_blocks: 1,
        normalizer_sequences: 8,
        seed,
        ..TrainConfig::default()
    };
    let source = SyntheticSource::train(GeneratorConfig::default(), 8).unwrap();
    train::train(&config, &source, &mut |_, _| {}).unwrap()
}

/// Relative error of two vectors, guarded against tiny magnitudes.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}
