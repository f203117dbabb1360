//! Test-time guidance: hand, reprojection, skating, and prior costs over
//! the local joint rotations, minimized with Levenberg–Marquardt.
//!
//! The direct `cost_*` functions evaluate each term from world-frame forward
//! kinematics; [`GuidanceProblem`] produces the same terms as residual
//! blocks with analytic Jacobians for the solver.

pub mod lm;
mod problem;

use nalgebra::Vector3;

use crate::body::{self, LocalPose, ShapeParams, NUM_BODY};
use crate::error::{Error, Result};
use crate::geometry::{PoseSE3, Rotation3};

pub use lm::{lm_solve, LeastSquares, LinearSolver, LmConfig, LmReport, ResidualBlock, Termination};
pub use problem::GuidanceProblem;

/// Smallest camera-frame depth that still projects.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite() && cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidInput(format!("invalid intrinsics fx={fx} fy={fy}")));
        }
        Ok(Self { fx, fy, cx, cy })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn name(&self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }

    pub fn wrist(&self) -> usize {
        match self {
            Side::Left => body::LEFT_WRIST,
            Side::Right => body::RIGHT_WRIST,
        }
    }

    /// First finger joint of this hand.
    pub fn finger_start(&self) -> usize {
        match self {
            Side::Left => body::LEFT_HAND_START,
            Side::Right => body::RIGHT_HAND_START,
        }
    }

    /// Keypoint joints: the wrist followed by the 15 finger joints.
    pub fn keypoint_joints(&self) -> Vec<usize> {
        std::iter::once(self.wrist()).chain(self.finger_start()..self.finger_start() + body::FINGERS_PER_HAND).collect()
    }
}

impl std::str::FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            other => Err(Error::InvalidInput(format!("unknown hand side '{other}'"))),
        }
    }
}

/// One detected hand at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct HandObservation {
    pub t: usize,
    pub side: Side,
    /// Detected `(joint, pixel)` pairs; undetected joints are absent.
    pub keypoints2d: Vec<(usize, [f64; 2])>,
    pub wrist_pose_world: Option<PoseSE3>,
    /// Local rotations of the 15 finger joints.
    pub local_hand_rotations: Option<Vec<Rotation3>>,
    pub intrinsics: CameraIntrinsics,
    pub camera_from_cpf: PoseSE3,
}

impl HandObservation {
    pub fn validate(&self, len: usize) -> Result<()> {
        if self.t >= len {
            return Err(Error::InvalidInput(format!("observation at t={} beyond sequence of {len}", self.t)));
        }
        if self.keypoints2d.is_empty() && self.wrist_pose_world.is_none() {
            return Err(Error::InvalidInput(format!("observation at t={} has neither keypoints nor a wrist pose", self.t)));
        }
        let joints = self.side.keypoint_joints();
        if self.keypoints2d.iter().any(|(j, _)| !joints.contains(j)) {
            return Err(Error::InvalidInput(format!("keypoint joint outside the {} hand", self.side.name())));
        }
        if self.local_hand_rotations.as_ref().is_some_and(|r| r.len() != body::FINGERS_PER_HAND) {
            return Err(Error::ShapeMismatch("hand rotations need 15 entries".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceWeights {
    pub lambda_hands3d: f64,
    pub lambda_reproj: f64,
    pub lambda_skate: f64,
    pub lambda_prior_abs: f64,
    pub lambda_prior_vel: f64,
    pub lambda_prior_fk: f64,
}

impl Default for GuidanceWeights {
    fn default() -> Self {
        Self {
            lambda_hands3d: 1.0,
            lambda_reproj: 0.002,
            lambda_skate: 10.0,
            lambda_prior_abs: 1.0,
            lambda_prior_vel: 10.0,
            lambda_prior_fk: 1.0,
        }
    }
}

impl GuidanceWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_hands3d,
            self.lambda_reproj,
            self.lambda_skate,
            self.lambda_prior_abs,
            self.lambda_prior_vel,
            self.lambda_prior_fk,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("guidance weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// When and how hard guidance runs inside sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    pub weights: GuidanceWeights,
    pub lm: LmConfig,
    /// Guidance runs on this many final DDIM steps.
    pub final_steps: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { weights: GuidanceWeights::default(), lm: LmConfig { max_iterations: 8, cg_tolerance: 1e-8, ..LmConfig::default() }, final_steps: 10 }
    }
}

impl GuidanceConfig {
    pub fn is_active(&self, step: usize, steps: usize) -> bool {
        step + self.final_steps >= steps
    }
}

pub fn project(k: &CameraIntrinsics, p: &Vector3<f64>) -> Option<[f64; 2]> {
    if p.z <= MIN_DEPTH {
        return None;
    }
    Some([k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy])
}

/// World pose of the body's CPF → camera transform chain for one timestep.
pub fn camera_point(world_point: &Vector3<f64>, world_cpf: &PoseSE3, camera_from_cpf: &PoseSE3) -> Vector3<f64> {
    camera_from_cpf.transform_point(&world_cpf.inverse().transform_point(world_point))
}

fn frames(theta: &[LocalPose], shape: &ShapeParams, cpf: &[PoseSE3]) -> Result<Vec<body::BodyFrame>> {
    let poses: Vec<(LocalPose, ShapeParams)> = theta.iter().map(|p| (p.clone(), *shape)).collect();
    body::globalize(&poses, cpf)
}

/// Σ over detected keypoints of squared pixel error.
pub fn cost_reproj(theta: &[LocalPose], shape: &ShapeParams, cpf: &[PoseSE3], obs: &[HandObservation]) -> Result<f64> {
    let f = frames(theta, shape, cpf)?;
    let mut total = 0.0;
    for o in obs {
        o.validate(theta.len())?;
        for (j, uv) in &o.keypoints2d {
            let p = camera_point(&f[o.t].joints_world[*j].position, &cpf[o.t], &o.camera_from_cpf);
            if let Some(px) = project(&o.intrinsics, &p) {
                total += (px[0] - uv[0]).powi(2) + (px[1] - uv[1]).powi(2);
            }
        }
    }
    Ok(total)
}

/// Squared wrist position error plus squared geodesic angles of the wrist
/// orientation and the finger rotations.
pub fn cost_hands3d(theta: &[LocalPose], shape: &ShapeParams, cpf: &[PoseSE3], obs: &[HandObservation]) -> Result<f64> {
    let f = frames(theta, shape, cpf)?;
    let mut total = 0.0;
    for o in obs {
        o.validate(theta.len())?;
        let wrist = &f[o.t].joints_world[o.side.wrist()];
        if let Some(w) = &o.wrist_pose_world {
            total += (wrist.position - w.position).norm_squared();
            total += wrist.rotation.angle_to(&w.rotation).powi(2);
        }
        if let Some(rots) = &o.local_hand_rotations {
            for (i, r) in rots.iter().enumerate() {
                total += theta[o.t].joint(o.side.finger_start() + i).angle_to(r).powi(2);
            }
        }
    }
    Ok(total)
}

/// `λ Σ ‖½(ψ_t + ψ_{t−1})(p_t − p_{t−1})‖²` over the 21 body joints.
pub fn cost_skate(
    theta: &[LocalPose],
    shape: &ShapeParams,
    cpf: &[PoseSE3],
    contacts: &[[f64; NUM_BODY]],
    lambda: f64,
) -> Result<f64> {
    if contacts.len() != theta.len() {
        return Err(Error::ShapeMismatch("contacts and poses differ in length".into()));
    }
    let f = frames(theta, shape, cpf)?;
    let mut total = 0.0;
    for t in 1..f.len() {
        for j in 1..=NUM_BODY {
            let w = 0.5 * (contacts[t][j - 1] + contacts[t - 1][j - 1]);
            total += lambda * (w * (f[t].joints_world[j].position - f[t - 1].joints_world[j].position)).norm_squared();
        }
    }
    Ok(total)
}

/// Absolute, velocity, and forward-kinematics deviation from the denoiser's
/// rotations.
pub fn cost_prior(theta: &[LocalPose], theta_hat: &[LocalPose], shape: &ShapeParams, weights: &GuidanceWeights) -> Result<f64> {
    if theta.len() != theta_hat.len() {
        return Err(Error::ShapeMismatch("pose sequences differ in length".into()));
    }
    let mut total = 0.0;
    for t in 0..theta.len() {
        for (a, b) in theta[t].joint_rotations.iter().zip(&theta_hat[t].joint_rotations) {
            total += weights.lambda_prior_abs * a.angle_to(b).powi(2);
        }
        if t > 0 {
            for k in 0..theta[t].joint_rotations.len() {
                let d = (theta[t - 1].joint_rotations[k].transpose() * theta[t].joint_rotations[k]).log();
                let dh = (theta_hat[t - 1].joint_rotations[k].transpose() * theta_hat[t].joint_rotations[k]).log();
                total += weights.lambda_prior_vel * (d - dh).norm_squared();
            }
        }
        let fa = body::forward_kinematics(&PoseSE3::identity(), &theta[t], shape);
        let fb = body::forward_kinematics(&PoseSE3::identity(), &theta_hat[t], shape);
        for (a, b) in fa.joints_world.iter().zip(&fb.joints_world) {
            total += weights.lambda_prior_fk * (a.position - b.position).norm_squared();
        }
    }
    Ok(total)
}

/// Refines `theta_hat` against all cost terms; shape and contacts stay fixed.
#[allow(clippy::too_many_arguments)]
pub fn guide(
    theta_hat: &[LocalPose],
    shape: &ShapeParams,
    contacts: &[[f64; NUM_BODY]],
    cpf: &[PoseSE3],
    obs: &[HandObservation],
    weights: &GuidanceWeights,
    config: &LmConfig,
) -> Result<(Vec<LocalPose>, LmReport)> {
    let problem = GuidanceProblem::new(theta_hat, *shape, contacts, cpf, obs, *weights)?;
    lm_solve(&problem, &theta_hat.to_vec(), config)
}

/// Total guidance cost of `theta` (sum of all weighted terms).
pub fn total_cost(
    theta: &[LocalPose],
    theta_hat: &[LocalPose],
    shape: &ShapeParams,
    contacts: &[[f64; NUM_BODY]],
    cpf: &[PoseSE3],
    obs: &[HandObservation],
    weights: &GuidanceWeights,
) -> Result<f64> {
    Ok(weights.lambda_reproj * cost_reproj(theta, shape, cpf, obs)?
        + weights.lambda_hands3d * cost_hands3d(theta, shape, cpf, obs)?
        + cost_skate(theta, shape, cpf, contacts, weights.lambda_skate)?
        + cost_prior(theta, theta_hat, shape, weights)?)
}
