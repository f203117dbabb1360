//! End-to-end estimation: floor, conditioning, sampling with optional hand
//! guidance, and placement of the sampled bodies along the input trajectory.

use nalgebra::Vector3;

use crate::body::{self, BodyFrame, LocalPose, ShapeParams, NUM_BODY};
use crate::data::MotionSequence;
use crate::error::{Error, Result};
use crate::geometry::{to_rot6d, PoseSE3};
use crate::guidance::{self, GuidanceConfig, HandObservation, LmReport};
use crate::metrics::{self, MetricRow};
use crate::motionprior::{split_windows, states_from_flat, MotionPrior, MotionState, STATE_DIM};
use crate::scene::{self, FloorConfig, SparsePointCloud};

pub const DEFAULT_DDIM_STEPS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateConfig {
    pub ddim_steps: usize,
    pub seed: u64,
    pub guidance: GuidanceConfig,
    pub floor: FloorConfig,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self { ddim_steps: DEFAULT_DDIM_STEPS, seed: 0, guidance: GuidanceConfig::default(), floor: FloorConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EstimateInput<'a> {
    /// World-frame CPF poses, one per timestep.
    pub cpf: &'a [PoseSE3],
    pub observations: Option<&'a [HandObservation]>,
    pub point_cloud: Option<&'a SparsePointCloud>,
}

#[derive(Debug, Clone)]
pub struct Estimate {
    pub floor_z: f64,
    pub windows: Vec<(usize, usize)>,
    pub shape: ShapeParams,
    pub poses: Vec<LocalPose>,
    pub contacts: Vec<[f64; NUM_BODY]>,
    pub frames: Vec<BodyFrame>,
    pub guidance_reports: Vec<LmReport>,
}

impl Estimate {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn cpf_trajectory(&self) -> Vec<PoseSE3> {
        self.frames.iter().map(|f| body::cpf_pose(f, &self.shape)).collect()
    }

    /// Largest position (m) and rotation (rad) gap between the body CPF and
    /// the input trajectory.
    pub fn alignment_error(&self, cpf: &[PoseSE3]) -> Result<(f64, f64)> {
        if cpf.len() != self.len() {
            return Err(Error::ShapeMismatch(format!("{} CPF poses for {} frames", cpf.len(), self.len())));
        }
        Ok(self.cpf_trajectory().iter().zip(cpf).fold((0.0f64, 0.0f64), |(p, r), (a, b)| {
            (p.max((a.position - b.position).norm()), r.max(a.rotation.angle_to(&b.rotation)))
        }))
    }

    pub fn to_sequence(&self, id: &str) -> MotionSequence {
        MotionSequence {
            id: id.to_string(),
            fps: crate::data::FPS,
            shape: self.shape,
            root: self.frames.iter().map(|f| f.root).collect(),
            local: self.poses.clone(),
            contacts: self.contacts.iter().map(|c| c.map(|v| v >= 0.5)).collect(),
        }
    }
}

fn shift_z(traj: &[PoseSE3], dz: f64) -> Vec<PoseSE3> {
    traj.iter().map(|p| PoseSE3::new(p.rotation, p.position + Vector3::new(0.0, 0.0, dz))).collect()
}

fn split_states(states: &[MotionState]) -> Result<(Vec<LocalPose>, ShapeParams, Vec<[f64; NUM_BODY]>)> {
    let poses = states.iter().map(MotionState::local_pose).collect::<Result<Vec<_>>>()?;
    let shape = states.first().map(MotionState::shape_params).ok_or_else(|| Error::InvalidInput("no states".into()))?;
    Ok((poses, shape, states.iter().map(|s| s.contacts).collect()))
}

/// Samples a body for every CPF pose and places it so the body's CPF
/// coincides with the input pose. Guidance runs when observations are given.
pub fn estimate(prior: &MotionPrior, input: &EstimateInput<'_>, config: &EstimateConfig) -> Result<Estimate> {
    if input.cpf.is_empty() {
        return Err(Error::InvalidInput("empty CPF trajectory".into()));
    }
    if input.cpf.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("CPF trajectory".into()));
    }
    let floor_z = match input.point_cloud {
        Some(cloud) => scene::estimate_floor(cloud, &config.floor)?.z,
        None => 0.0,
    };
    // The prior expects the floor at z = 0.
    let local_cpf = shift_z(input.cpf, -floor_z);
    let observations = input.observations.filter(|o| !o.is_empty());
    if let Some(obs) = observations {
        for o in obs {
            o.validate(input.cpf.len())?;
        }
        config.guidance.weights.validate()?;
    }

    let mut reports = Vec::new();
    let mut hook = |step: usize, steps: usize, x0: &mut [f64]| -> Result<()> {
        let Some(obs) = observations else { return Ok(()) };
        if !config.guidance.is_active(step, steps) {
            return Ok(());
        }
        let mut raw = x0.to_vec();
        prior.normalizer.denormalize(&mut raw);
        let (theta_hat, shape, contacts) = split_states(&states_from_flat(&raw)?)?;
        let (theta, report) = guidance::guide(&theta_hat, &shape, &contacts, input.cpf, obs, &config.guidance.weights, &config.guidance.lm)?;
        for (t, pose) in theta.iter().enumerate() {
            for (k, r) in pose.joint_rotations.iter().enumerate() {
                raw[t * STATE_DIM + 6 * k..t * STATE_DIM + 6 * k + 6].copy_from_slice(&to_rot6d(r).0);
            }
        }
        prior.normalizer.normalize(&mut raw);
        // Only rotations change; shape and contacts keep the denoiser's values.
        for t in 0..theta.len() {
            let row = t * STATE_DIM;
            x0[row..row + crate::motionprior::ROT_DIMS].copy_from_slice(&raw[row..row + crate::motionprior::ROT_DIMS]);
        }
        reports.push(report);
        Ok(())
    };
    let states = prior.sample(&local_cpf, config.ddim_steps, Some(&mut hook), config.seed)?;
    let (poses, shape, contacts) = split_states(&states)?;
    let paired: Vec<(LocalPose, ShapeParams)> = poses.iter().map(|p| (p.clone(), shape)).collect();
    let frames = body::globalize(&paired, input.cpf)?;
    Ok(Estimate { floor_z, windows: split_windows(input.cpf.len()), shape, poses, contacts, frames, guidance_reports: reports })
}

/// MPJPE, PA-MPJPE, GND and T_head of an estimate against ground truth.
pub fn evaluate(estimate: &Estimate, truth: &MotionSequence) -> Result<Vec<MetricRow>> {
    metrics::evaluate_sequence(&estimate.frames, &truth.frames(), estimate.floor_z)
}

/// Mean wrist position error in millimeters over the observed
/// (timestep, side) pairs.
pub fn wrist_error_mm(frames: &[BodyFrame], truth: &[BodyFrame], obs: &[HandObservation]) -> Result<f64> {
    if obs.is_empty() {
        return Err(Error::InsufficientData("no observations".into()));
    }
    let mut total = 0.0;
    for o in obs {
        let (a, b) = (frames.get(o.t), truth.get(o.t));
        let (Some(a), Some(b)) = (a, b) else {
            return Err(Error::InvalidInput(format!("observation at t={} outside sequence", o.t)));
        };
        let j = o.side.wrist();
        total += (a.joints_world[j].position - b.joints_world[j].position).norm();
    }
    Ok(1000.0 * total / obs.len() as f64)
}

/// Mean error in millimeters of the observed wrist positions themselves.
pub fn observation_wrist_error_mm(truth: &[BodyFrame], obs: &[HandObservation]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for o in obs {
        if let Some(w) = &o.wrist_pose_world {
            let b = truth.get(o.t).ok_or_else(|| Error::InvalidInput(format!("observation at t={} outside sequence", o.t)))?;
            total += (w.position - b.joints_world[o.side.wrist()].position).norm();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InsufficientData("no wrist observations".into()));
    }
    Ok(1000.0 * total / n as f64)
}

/// Mean ± standard error of the standard metrics for one prior at one
/// sequence length.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub variant: String,
    pub seqlen: usize,
    pub n: usize,
    pub mpjpe: f64,
    pub mpjpe_se: f64,
    pub pampjpe: f64,
    pub pampjpe_se: f64,
    pub gnd: f64,
    pub gnd_se: f64,
}

pub const EVAL_CSV_HEADER: &str = "variant,seqlen,mpjpe,mpjpe_se,pampjpe,pampjpe_se,gnd,gnd_se";

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut s = format!("{EVAL_CSV_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.variant, r.seqlen, r.mpjpe, r.mpjpe_se, r.pampjpe, r.pampjpe_se, r.gnd, r.gnd_se
        ));
    }
    s
}

/// Per-sequence MPJPE, PA-MPJPE and GND of unguided estimates on the first
/// `seqlen` frames of every sequence at least that long. Sequence `i` is
/// sampled with seed `derive_seed(seed, i)`.
pub fn evaluate_prior(
    prior: &MotionPrior,
    sequences: &[MotionSequence],
    seqlen: usize,
    ddim_steps: usize,
    seed: u64,
) -> Result<Vec<[f64; 3]>> {
    use rayon::prelude::*;
    let usable: Vec<(usize, &MotionSequence)> = sequences.iter().enumerate().filter(|(_, s)| s.len() >= seqlen).collect();
    if usable.is_empty() {
        return Err(Error::InsufficientData(format!("no evaluation sequence has {seqlen} frames")));
    }
    usable
        .par_iter()
        .map(|&(i, seq)| {
            let seq = seq.slice(0, seqlen)?;
            let cpf = seq.cpf_trajectory();
            let config = EstimateConfig { ddim_steps, seed: crate::data::derive_seed(seed, i as u64), ..EstimateConfig::default() };
            let est = estimate(prior, &EstimateInput { cpf: &cpf, ..EstimateInput::default() }, &config)?;
            let rows = evaluate(&est, &seq)?;
            Ok([rows[0].value, rows[1].value, rows[2].value])
        })
        .collect()
}

/// Summarizes `evaluate_prior` samples into one row.
pub fn summarize(variant: &str, seqlen: usize, samples: &[[f64; 3]]) -> EvalRow {
    let col = |k: usize| samples.iter().map(|s| s[k]).collect::<Vec<_>>();
    let (m, p, g) = (col(0), col(1), col(2));
    EvalRow {
        variant: variant.to_string(),
        seqlen,
        n: samples.len(),
        mpjpe: metrics::mean(&m),
        mpjpe_se: metrics::stderr(&m),
        pampjpe: metrics::mean(&p),
        pampjpe_se: metrics::stderr(&p),
        gnd: metrics::mean(&g),
        gnd_se: metrics::stderr(&g),
    }
}
