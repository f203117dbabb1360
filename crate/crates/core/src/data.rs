//! Synthetic motion data and file formats.
//!
//! Sequences are generated procedurally (walking, turning, squatting,
//! reaching, idling) with planted footsteps and two-bone leg IK. Each
//! generated sequence is a pure function of the generator config and its
//! index, so datasets can be produced lazily.
//!
//! Sequence file (text):
//!
//! ```text
//! egokit-sequence v1 id=<id> fps=30 frames=<T> beta=<b0>,<b1> skeleton=<hash>
//! <t> <root: 9 rotation entries row-major, 3 position> <51 × 9 rotation entries> <21 contacts (0/1)>
//! ...
//! ```
//!
//! Hand-observation file (text, one record per line):
//!
//! ```text
//! intrinsics <fx> <fy> <cx> <cy>
//! camera_from_cpf <9 rotation entries> <x> <y> <z>
//! kp <t> <side> <joint> <u> <v>
//! wrist <t> <side> <9 rotation entries> <x> <y> <z>
//! handrot <t> <side> <15 × 9 rotation entries>
//! ```
//!
//! `intrinsics` and `camera_from_cpf` apply to all following records.
//! Numbers are written with 17 significant digits.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::body::{self, BodyFrame, LocalPose, ShapeParams, NUM_BODY, NUM_LOCAL};
use crate::error::{Error, Result};
use crate::geometry::{PoseSE3, Rotation3};
use crate::guidance::{self, CameraIntrinsics, HandObservation, Side};
use crate::motionprior::train::{SequenceSource, TrainingSequence};
use crate::motionprior::MotionState;

pub const FPS: f64 = 30.0;
/// Contact when below this height, meters.
pub const CONTACT_HEIGHT: f64 = 0.05;
/// Contact when moving less than this per frame, meters.
pub const CONTACT_DISPLACEMENT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Walk,
    Turn,
    Squat,
    Reach,
    Idle,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Walk, Family::Turn, Family::Squat, Family::Reach, Family::Idle];

    pub fn name(&self) -> &'static str {
        match self {
            Family::Walk => "walk",
            Family::Turn => "turn",
            Family::Squat => "squat",
            Family::Reach => "reach",
            Family::Idle => "idle",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown motion family '{s}' (expected walk, turn, squat, reach, idle)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub families: Vec<Family>,
    pub height_range: (f64, f64),
    pub arm_range: (f64, f64),
    /// Sequence length range in frames, inclusive.
    pub frames_range: (usize, usize),
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { families: Family::ALL.to_vec(), height_range: (0.85, 1.15), arm_range: (0.9, 1.1), frames_range: (160, 160), seed: 0 }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let (h0, h1) = self.height_range;
        let (a0, a1) = self.arm_range;
        let (f0, f1) = self.frames_range;
        if self.families.is_empty() {
            return Err(Error::Config("at least one motion family is required".into()));
        }
        if !(ShapeParams::MIN <= h0 && h0 <= h1 && h1 <= 1.2) {
            return Err(Error::Config(format!("height range {h0}..{h1} must lie within [0.5, 1.2]")));
        }
        if !(ShapeParams::MIN <= a0 && a0 <= a1 && a1 <= ShapeParams::MAX) {
            return Err(Error::Config(format!("arm range {a0}..{a1} must lie within [0.5, 2]")));
        }
        if f0 == 0 || f0 > f1 {
            return Err(Error::Config(format!("frame range {f0}..{f1} is empty")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub id: String,
    pub fps: f64,
    pub shape: ShapeParams,
    pub root: Vec<PoseSE3>,
    pub local: Vec<LocalPose>,
    pub contacts: Vec<[bool; NUM_BODY]>,
}

impl MotionSequence {
    pub fn len(&self) -> usize {
        self.root.len()
    }

    pub fn is_empty(&self) -> bool {
        self.root.is_empty()
    }

    pub fn frames(&self) -> Vec<BodyFrame> {
        self.root.iter().zip(&self.local).map(|(r, p)| body::forward_kinematics(r, p, &self.shape)).collect()
    }

    pub fn cpf_trajectory(&self) -> Vec<PoseSE3> {
        self.frames().iter().map(|f| body::cpf_pose(f, &self.shape)).collect()
    }

    pub fn family(&self) -> Option<Family> {
        self.id.split('-').next().and_then(|f| f.parse().ok())
    }

    pub fn states(&self) -> Vec<MotionState> {
        self.local.iter().zip(&self.contacts).map(|(p, c)| MotionState::from_pose(p, &self.shape, c)).collect()
    }

    pub fn training_sequence(&self) -> TrainingSequence {
        TrainingSequence { cpf: self.cpf_trajectory(), states: crate::motionprior::flatten_states(&self.states()) }
    }

    /// Contiguous sub-sequence `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.len() {
            return Err(Error::InvalidInput(format!("slice {start}+{len} outside sequence of {}", self.len())));
        }
        Ok(Self {
            id: self.id.clone(),
            fps: self.fps,
            shape: self.shape,
            root: self.root[start..start + len].to_vec(),
            local: self.local[start..start + len].to_vec(),
            contacts: self.contacts[start..start + len].to_vec(),
        })
    }

    fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidInput("sequence has no frames".into()));
        }
        if self.local.len() != self.len() || self.contacts.len() != self.len() {
            return Err(Error::ShapeMismatch("sequence arrays differ in length".into()));
        }
        Ok(())
    }
}

/// Contact labels: joint `j ∈ 1..=21` is in contact at `t` when its height
/// is below 5 cm and it moved less than 1 cm since `t − 1` (frame 0 uses
/// the displacement to frame 1).
pub fn label_contacts(frames: &[BodyFrame]) -> Vec<[bool; NUM_BODY]> {
    let n = frames.len();
    (0..n)
        .map(|t| {
            let (a, b) = if n < 2 {
                (0, 0)
            } else if t == 0 {
                (0, 1)
            } else {
                (t - 1, t)
            };
            let mut c = [false; NUM_BODY];
            for j in 1..=NUM_BODY {
                let p = frames[t].joints_world[j].position;
                let d = (frames[b].joints_world[j].position - frames[a].joints_world[j].position).norm();
                c[j - 1] = p.z < CONTACT_HEIGHT && d < CONTACT_DISPLACEMENT;
            }
            c
        })
        .collect()
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of item `index` in a stream derived from `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix(splitmix(seed) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Held-out membership: about one id in ten, decided by the id's hash.
pub fn is_held_out(id: &str) -> bool {
    Sha256::digest(id.as_bytes())[0] % 10 == 0
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Smooth periodic bump in `[0, 1]`.
fn bump(t: f64, period: f64, phase: f64) -> f64 {
    0.5 * (1.0 - (TAU * t / period + phase).cos())
}

struct MotionParams {
    family: Family,
    beta: [f64; 2],
    start: Vector3<f64>,
    heading: f64,
    speed: f64,
    turn_rate: f64,
    period: f64,
    stance: f64,
    look_yaw_amp: f64,
    look_yaw_freq: f64,
    look_yaw_phase: f64,
    look_pitch: f64,
    look_pitch_amp: f64,
    look_pitch_freq: f64,
    arm_swing: f64,
    elbow: f64,
    curl: f64,
    curl_phase: f64,
    squat_depth: f64,
    squat_period: f64,
    squat_phase: f64,
    reach_side: Side,
    reach_period: f64,
    reach_phase: f64,
    reach_height: f64,
    sway: f64,
    sway_period: f64,
    lean: f64,
}

fn sample_params(config: &GeneratorConfig, rng: &mut ChaCha8Rng) -> MotionParams {
    let family = config.families[rng.random_range(0..config.families.len())];
    let h = if config.height_range.0 < config.height_range.1 { rng.random_range(config.height_range.0..=config.height_range.1) } else { config.height_range.0 };
    let a = if config.arm_range.0 < config.arm_range.1 { rng.random_range(config.arm_range.0..=config.arm_range.1) } else { config.arm_range.0 };
    let (speed, turn_rate) = match family {
        Family::Walk => (rng.random_range(0.6..1.3), rng.random_range(-0.15..0.15)),
        Family::Turn => {
            let w = rng.random_range(0.4..1.0);
            (rng.random_range(0.4..1.0), if rng.random_bool(0.5) { w } else { -w })
        }
        Family::Reach => (if rng.random_bool(0.3) { rng.random_range(0.2..0.5) } else { 0.0 }, 0.0),
        Family::Squat | Family::Idle => (0.0, 0.0),
    };
    MotionParams {
        family,
        beta: [h, a],
        start: Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.0),
        heading: rng.random_range(-PI..PI),
        speed,
        turn_rate,
        period: rng.random_range(0.95..1.15),
        stance: 0.58,
        look_yaw_amp: rng.random_range(0.0..0.6),
        look_yaw_freq: rng.random_range(0.1..0.4),
        look_yaw_phase: rng.random_range(0.0..TAU),
        look_pitch: rng.random_range(-0.1..0.35),
        look_pitch_amp: rng.random_range(0.0..0.2),
        look_pitch_freq: rng.random_range(0.1..0.3),
        arm_swing: if speed > 0.0 { 0.15 + 0.3 * speed } else { rng.random_range(0.0..0.08) },
        elbow: rng.random_range(0.1..0.5),
        curl: rng.random_range(0.1..0.7),
        curl_phase: rng.random_range(0.0..TAU),
        squat_depth: rng.random_range(0.15..0.4),
        squat_period: rng.random_range(2.0..4.0),
        squat_phase: rng.random_range(0.0..TAU),
        reach_side: if rng.random_bool(0.5) { Side::Left } else { Side::Right },
        reach_period: rng.random_range(2.0..4.0),
        reach_phase: rng.random_range(0.0..TAU),
        reach_height: rng.random_range(0.6..1.6),
        sway: if family == Family::Idle { rng.random_range(0.01..0.04) } else { 0.0 },
        sway_period: rng.random_range(2.0..5.0),
        lean: rng.random_range(0.0..0.1),
    }
}

impl MotionParams {
    fn heading_at(&self, t: f64) -> f64 {
        self.heading + self.turn_rate * t
    }

    /// Pelvis ground-plane position along the constant-curvature path.
    fn path(&self, t: f64) -> Vector3<f64> {
        let (psi0, w, v) = (self.heading, self.turn_rate, self.speed);
        let d = if w.abs() < 1e-9 {
            Vector3::new(-psi0.sin() * v * t, psi0.cos() * v * t, 0.0)
        } else {
            let psi = psi0 + w * t;
            Vector3::new(v * (psi.cos() - psi0.cos()) / w, v * (psi.sin() - psi0.sin()) / w, 0.0)
        };
        self.start + d
    }

    /// Planted footprint `k` of a foot: position and yaw.
    fn footprint(&self, k: f64, phase: f64, lateral: f64) -> (Vector3<f64>, f64) {
        let tk = (k - phase + self.stance / 2.0) * self.period;
        let psi = self.heading_at(tk);
        let mut p = self.path(tk) + Rotation3::rz(psi).apply(&Vector3::new(lateral, 0.0, 0.0));
        p.z = 0.0;
        (p, psi)
    }

    /// Ankle target (world) and foot yaw at time `t`.
    fn foot(&self, t: f64, side: Side) -> (Vector3<f64>, f64) {
        let phase = if side == Side::Left { 0.0 } else { 0.5 };
        let lateral = 0.09 * self.beta[0] * if side == Side::Left { -1.0 } else { 1.0 };
        let ankle_h = 0.04 * self.beta[0];
        let u = t / self.period + phase;
        let k = u.floor();
        let frac = u - k;
        let (p0, y0) = self.footprint(k, phase, lateral);
        if frac < self.stance {
            return (p0 + Vector3::new(0.0, 0.0, ankle_h), y0);
        }
        let (p1, y1) = self.footprint(k + 1.0, phase, lateral);
        let s = (frac - self.stance) / (1.0 - self.stance);
        let e = smoothstep(s);
        let lift = 0.08 * (PI * s).sin() * ((p1 - p0).norm() / 0.15).min(1.0);
        (p0 + (p1 - p0) * e + Vector3::new(0.0, 0.0, ankle_h + lift), y0 + (y1 - y0) * e)
    }
}

/// Two-bone leg IK in the pelvis frame: hip-relative ankle target `v`,
/// thigh and shin lengths. Returns local hip and knee rotations.
fn leg_ik(v: Vector3<f64>, l1: f64, l2: f64) -> (Rotation3, Rotation3) {
    let d = v.norm().clamp((l1 - l2).abs() + 1e-6, (l1 + l2) * 0.9999);
    let v = if v.norm() > 1e-12 { v * (d / v.norm()) } else { Vector3::new(0.0, 0.0, -d) };
    let cos_g = ((l1 * l1 + l2 * l2 - d * d) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let knee = -(PI - cos_g.acos());
    let u = Vector3::new(0.0, l2 * knee.sin(), -l1 - l2 * knee.cos());
    let wz = -(v.x * v.x + v.z * v.z).sqrt();
    let roll = (-v.x).atan2(-v.z);
    let a = wz.atan2(v.y) - u.z.atan2(u.y);
    (Rotation3::ry(roll) * Rotation3::rx(a), Rotation3::rx(knee))
}

/// Generates sequence `index` of the dataset described by `config`.
pub fn generate_one(config: &GeneratorConfig, index: u64) -> Result<MotionSequence> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, index));
    let p = sample_params(config, &mut rng);
    let frames = if config.frames_range.0 < config.frames_range.1 {
        rng.random_range(config.frames_range.0..=config.frames_range.1)
    } else {
        config.frames_range.0
    };
    let shape = ShapeParams::new(p.beta)?;
    let sk = body::skeleton();
    let hb = p.beta[0];
    let (l1, l2) = (0.42 * hb, 0.41 * hb);
    let mut root = Vec::with_capacity(frames);
    let mut local = Vec::with_capacity(frames);
    for f in 0..frames {
        let t = f as f64 / FPS;
        let psi = p.heading_at(t);
        let forward = Rotation3::rz(psi).apply(&Vector3::new(0.0, 1.0, 0.0));
        let right = Rotation3::rz(psi).apply(&Vector3::new(1.0, 0.0, 0.0));

        let squat = if p.family == Family::Squat { bump(t, p.squat_period, p.squat_phase) } else { 0.0 };
        let reach = if p.family == Family::Reach { bump(t, p.reach_period, p.reach_phase).powf(1.5) } else { 0.0 };
        let lean = p.lean + 0.5 * squat + 0.25 * reach;
        let sway = p.sway * (TAU * t / p.sway_period).sin();

        let feet = [p.foot(t, Side::Left), p.foot(t, Side::Right)];
        let mut pelvis = p.path(t) + right * sway - forward * (0.12 * squat * p.squat_depth / 0.3);
        let mut height = body::standing_root_height(&shape) - 0.015 * hb - squat * p.squat_depth * hb;
        let pelvis_rot = Rotation3::rz(psi) * Rotation3::rx(-0.3 * lean);
        for (side, (ankle, _)) in [Side::Left, Side::Right].iter().zip(&feet) {
            let hip_j = if *side == Side::Left { body::LEFT_HIP } else { body::RIGHT_HIP };
            let hip_off = pelvis_rot.apply(&sk.scaled_offset(hip_j, &shape));
            let horiz = (pelvis + hip_off - ankle).xy().norm();
            let reach_len = (l1 + l2) * 0.985;
            if horiz < reach_len {
                let max_h = ankle.z + (reach_len * reach_len - horiz * horiz).sqrt() - hip_off.z;
                height = height.min(max_h);
            }
        }
        pelvis.z = height;
        let pelvis_pose = PoseSE3::new(pelvis_rot, pelvis);

        let mut pose = LocalPose::neutral();
        for (side, (ankle, foot_yaw)) in [Side::Left, Side::Right].iter().zip(&feet) {
            let (hip_j, knee_j, ankle_j) = if *side == Side::Left {
                (body::LEFT_HIP, body::LEFT_KNEE, body::LEFT_ANKLE)
            } else {
                (body::RIGHT_HIP, body::RIGHT_KNEE, body::RIGHT_ANKLE)
            };
            let hip_world = pelvis_pose.transform_point(&sk.scaled_offset(hip_j, &shape));
            let v = pelvis_rot.inverse().apply(&(ankle - hip_world));
            let (r_hip, r_knee) = leg_ik(v, l1, l2);
            let chain = pelvis_rot * r_hip * r_knee;
            *pose.joint_mut(hip_j) = r_hip;
            *pose.joint_mut(knee_j) = r_knee;
            *pose.joint_mut(ankle_j) = chain.inverse() * Rotation3::rz(*foot_yaw);
        }

        let twist = 0.1 * p.arm_swing * (TAU * t / p.period).sin();
        for j in [body::SPINE1, body::SPINE2, body::SPINE3] {
            *pose.joint_mut(j) = Rotation3::rz(twist / 3.0) * Rotation3::rx(-0.7 * lean / 3.0);
        }
        let torso_lean = 0.3 * lean + 0.7 * lean;
        let mut look_yaw = p.look_yaw_amp * (TAU * p.look_yaw_freq * t + p.look_yaw_phase).sin() - twist;
        let mut look_pitch = p.look_pitch + p.look_pitch_amp * (TAU * p.look_pitch_freq * t).sin() + 0.3 * squat;
        if reach > 0.0 {
            let toward = if p.reach_side == Side::Left { 0.3 } else { -0.3 };
            look_yaw = look_yaw * (1.0 - reach) + toward * reach;
            look_pitch -= 0.3 * reach * (p.reach_height - 1.0);
        }
        let neck_pitch = look_pitch - torso_lean;
        for j in [body::NECK, body::HEAD] {
            *pose.joint_mut(j) = Rotation3::rz(look_yaw / 2.0) * Rotation3::rx(-neck_pitch / 2.0);
        }

        for side in [Side::Left, Side::Right] {
            let (sign, shoulder, elbow, phase) = if side == Side::Left {
                (1.0, body::LEFT_SHOULDER, body::LEFT_ELBOW, 0.0)
            } else {
                (-1.0, body::RIGHT_SHOULDER, body::RIGHT_ELBOW, PI)
            };
            let swing = p.arm_swing * (TAU * t / p.period + phase).sin();
            let r = if side == p.reach_side { reach } else { 0.0 };
            let raise = swing * (1.0 - r) + r * (0.4 + 0.7 * p.reach_height);
            let bend = (p.elbow + 0.3 * swing.max(0.0)) * (1.0 - r) + 0.15 * r;
            *pose.joint_mut(shoulder) = Rotation3::ry(sign * (0.12 + 0.1 * squat)) * Rotation3::rx(raise + 0.4 * squat);
            *pose.joint_mut(elbow) = Rotation3::rx(bend + 0.6 * squat);
            let wrist = if side == Side::Left { body::LEFT_WRIST } else { body::RIGHT_WRIST };
            *pose.joint_mut(wrist) = Rotation3::rx(0.15 * (TAU * t / p.period + phase).cos()) * Rotation3::rz(-sign * 0.2 * r);

            let curl = (p.curl + 0.15 * (TAU * 0.3 * t + p.curl_phase + phase).sin()).max(0.0) * (1.0 - 0.7 * r);
            let start = side.finger_start();
            for finger in 0..5 {
                let c = if finger == 4 { 0.4 * curl } else { curl };
                for seg in 0..3 {
                    *pose.joint_mut(start + finger * 3 + seg) = Rotation3::ry(-sign * c * (1.0 - 0.2 * seg as f64));
                }
            }
        }
        root.push(pelvis_pose);
        local.push(pose);
    }
    let frames_world: Vec<BodyFrame> = root.iter().zip(&local).map(|(r, l)| body::forward_kinematics(r, l, &shape)).collect();
    let contacts = label_contacts(&frames_world);
    Ok(MotionSequence { id: format!("{}-{:06}", p.family, index), fps: FPS, shape, root, local, contacts })
}

pub fn generate(config: &GeneratorConfig, count: usize) -> Result<Vec<MotionSequence>> {
    (0..count as u64).into_par_iter().map(|i| generate_one(config, i)).collect()
}

/// Lazily generated training split of a synthetic dataset.
pub struct SyntheticSource {
    pub config: GeneratorConfig,
    pub indices: Vec<u64>,
}

impl SyntheticSource {
    /// The first `count` non-held-out indices.
    pub fn train(config: GeneratorConfig, count: usize) -> Result<Self> {
        config.validate()?;
        let indices = split_indices(&config, count, false)?;
        Ok(Self { config, indices })
    }
}

/// The first `count` indices on one side of the split.
pub fn split_indices(config: &GeneratorConfig, count: usize, held_out: bool) -> Result<Vec<u64>> {
    let mut out = Vec::with_capacity(count);
    let mut i = 0u64;
    while out.len() < count {
        // Ids depend on the family draw, so generate the header cheaply.
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, i));
        let family = config.families[rng.random_range(0..config.families.len())];
        if is_held_out(&format!("{family}-{i:06}")) == held_out {
            out.push(i);
        }
        i += 1;
    }
    Ok(out)
}

impl SequenceSource for SyntheticSource {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn get(&self, index: usize) -> Result<TrainingSequence> {
        let i = *self.indices.get(index).ok_or_else(|| Error::InvalidInput(format!("no sequence {index}")))?;
        Ok(generate_one(&self.config, i)?.training_sequence())
    }
}

fn push_f(s: &mut String, v: f64) {
    let _ = write!(s, " {v:.16e}");
}

fn push_rot(s: &mut String, r: &Rotation3) {
    for v in r.to_row_major() {
        push_f(s, v);
    }
}

fn push_pose(s: &mut String, p: &PoseSE3) {
    push_rot(s, &p.rotation);
    for v in p.position.iter() {
        push_f(s, *v);
    }
}

pub fn sequence_to_text(seq: &MotionSequence) -> String {
    let mut s = format!(
        "egokit-sequence v1 id={} fps={} frames={} beta={:.16e},{:.16e} skeleton={}\n",
        seq.id,
        seq.fps,
        seq.len(),
        seq.shape.beta[0],
        seq.shape.beta[1],
        body::skeleton().hash()
    );
    for t in 0..seq.len() {
        let _ = write!(s, "{t}");
        push_pose(&mut s, &seq.root[t]);
        for r in &seq.local[t].joint_rotations {
            push_rot(&mut s, r);
        }
        for c in &seq.contacts[t] {
            s.push_str(if *c { " 1" } else { " 0" });
        }
        s.push('\n');
    }
    s
}

fn parse_rotation(v: &[f64], path: &Path, line: usize) -> Result<Rotation3> {
    Rotation3::from_row_major(v).map_err(|e| Error::parse(path, line, e.to_string()))
}

fn parse_pose(v: &[f64], path: &Path, line: usize) -> Result<PoseSE3> {
    Ok(PoseSE3::new(parse_rotation(&v[..9], path, line)?, Vector3::new(v[9], v[10], v[11])))
}

fn parse_numbers(fields: &[&str], path: &Path, line: usize) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| f.parse::<f64>().map_err(|e| Error::parse(path, line, format!("bad number '{f}': {e}"))))
        .collect()
}

pub fn parse_sequence(text: &str, path: &Path) -> Result<MotionSequence> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("egokit-sequence") || fields.next() != Some("v1") {
        return Err(Error::parse(path, 1, "missing 'egokit-sequence v1' header"));
    }
    let mut kv = BTreeMap::new();
    for f in fields {
        let (k, v) = f.split_once('=').ok_or_else(|| Error::parse(path, 1, format!("bad header field '{f}'")))?;
        kv.insert(k, v);
    }
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::parse(path, 1, format!("header lacks '{k}'")));
    let id = get("id")?.to_string();
    let fps: f64 = get("fps")?.parse().map_err(|_| Error::parse(path, 1, "bad fps"))?;
    let frames: usize = get("frames")?.parse().map_err(|_| Error::parse(path, 1, "bad frame count"))?;
    let beta: Vec<f64> = get("beta")?.split(',').map(|b| b.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| Error::parse(path, 1, "bad beta"))?;
    if beta.len() != 2 {
        return Err(Error::parse(path, 1, "beta needs two values"));
    }
    let shape = ShapeParams::new([beta[0], beta[1]]).map_err(|e| Error::parse(path, 1, e.to_string()))?;
    let hash = get("skeleton")?;
    if hash != body::skeleton().hash() {
        return Err(Error::parse(path, 1, format!("skeleton hash {hash} does not match this build")));
    }
    let per_line = 1 + 12 + NUM_LOCAL * 9 + NUM_BODY;
    let mut seq = MotionSequence { id, fps, shape, root: Vec::new(), local: Vec::new(), contacts: Vec::new() };
    for (i, line) in lines {
        let ln = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != per_line {
            return Err(Error::parse(path, ln, format!("expected {per_line} fields, got {}", fields.len())));
        }
        let t: usize = fields[0].parse().map_err(|_| Error::parse(path, ln, "bad timestep"))?;
        if t != seq.len() {
            return Err(Error::parse(path, ln, format!("expected timestep {}, got {t}", seq.len())));
        }
        let v = parse_numbers(&fields[1..], path, ln)?;
        seq.root.push(parse_pose(&v[..12], path, ln)?);
        let rots = (0..NUM_LOCAL).map(|k| parse_rotation(&v[12 + 9 * k..21 + 9 * k], path, ln)).collect::<Result<_>>()?;
        seq.local.push(LocalPose::new(rots)?);
        let mut c = [false; NUM_BODY];
        for (k, x) in v[12 + 9 * NUM_LOCAL..].iter().enumerate() {
            c[k] = match *x {
                0.0 => false,
                1.0 => true,
                _ => return Err(Error::parse(path, ln, format!("contact must be 0 or 1, got {x}"))),
            };
        }
        seq.contacts.push(c);
    }
    if seq.len() != frames {
        return Err(Error::parse(path, text.lines().count(), format!("header promises {frames} frames, found {}", seq.len())));
    }
    seq.validate().map_err(|e| Error::parse(path, 1, e.to_string()))?;
    Ok(seq)
}

pub fn save_sequence(seq: &MotionSequence, path: &Path) -> Result<()> {
    std::fs::write(path, sequence_to_text(seq)).map_err(|e| Error::io(path, e))
}

pub fn load_sequence(path: &Path) -> Result<MotionSequence> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sequence(&text, path)
}

/// CPF trajectory file: one pose per line as 9 rotation entries row-major
/// followed by the position; `#` starts a comment.
pub fn trajectory_to_text(traj: &[PoseSE3]) -> String {
    let mut s = String::from("# r00 r01 r02 r10 r11 r12 r20 r21 r22 x y z\n");
    for p in traj {
        let mut line = String::new();
        push_pose(&mut line, p);
        s.push_str(line.trim_start());
        s.push('\n');
    }
    s
}

pub fn parse_trajectory(text: &str, path: &Path) -> Result<Vec<PoseSE3>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 12 {
            return Err(Error::parse(path, i + 1, format!("expected 12 fields, got {}", fields.len())));
        }
        out.push(parse_pose(&parse_numbers(&fields, path, i + 1)?, path, i + 1)?);
    }
    if out.is_empty() {
        return Err(Error::parse(path, 1, "trajectory has no poses"));
    }
    Ok(out)
}

pub fn load_trajectory(path: &Path) -> Result<Vec<PoseSE3>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory(&text, path)
}

/// Default head-mounted camera: 400×400 pixels, looking 45° below the CPF
/// forward axis.
pub fn default_camera() -> (CameraIntrinsics, PoseSE3) {
    let k = CameraIntrinsics { fx: 150.0, fy: 150.0, cx: 200.0, cy: 200.0 };
    let (s, c) = (std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2);
    // Camera axes in CPF coordinates: x right (= −CPF x), z forward and
    // down, y completing a right-handed frame (image down).
    let x = Vector3::new(-1.0, 0.0, 0.0);
    let z = Vector3::new(0.0, -s, c);
    let y = z.cross(&x);
    let cpf_from_camera = Rotation3::try_from_matrix(Matrix3::from_columns(&[x, y, z])).expect("orthonormal camera frame");
    (k, PoseSE3::from_rotation(cpf_from_camera).inverse())
}

pub const IMAGE_SIZE: f64 = 400.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corruption {
    /// Multiplies camera-frame depth of the 3D hand estimate.
    pub depth_scale: f64,
    /// Pixel noise standard deviation.
    pub noise_px: f64,
    /// Probability that a hand detection is dropped entirely.
    pub dropout: f64,
    pub seed: u64,
}

impl Default for Corruption {
    fn default() -> Self {
        Self { depth_scale: 1.0, noise_px: 0.0, dropout: 0.0, seed: 0 }
    }
}

/// Hand detections from the sequence's own forward kinematics, seen by the
/// default camera. Joints outside the image or behind the camera are
/// missing; a hand with no visible keypoints is not detected.
pub fn synthesize_hand_observations(seq: &MotionSequence, corruption: &Corruption) -> Result<Vec<HandObservation>> {
    if !(corruption.depth_scale > 0.0 && corruption.noise_px >= 0.0 && (0.0..=1.0).contains(&corruption.dropout)) {
        return Err(Error::InvalidInput("invalid corruption parameters".into()));
    }
    let (k, cam_from_cpf) = default_camera();
    let frames = seq.frames();
    let mut rng = ChaCha8Rng::seed_from_u64(corruption.seed);
    let noise = Normal::new(0.0, corruption.noise_px.max(0.0)).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut out = Vec::new();
    for (t, frame) in frames.iter().enumerate() {
        let cpf = body::cpf_pose(frame, &seq.shape);
        let cam_from_world = cam_from_cpf.compose(&cpf.inverse());
        for side in [Side::Left, Side::Right] {
            let drop = rng.random::<f64>() < corruption.dropout;
            let mut keypoints = Vec::new();
            for j in side.keypoint_joints() {
                let p = cam_from_world.transform_point(&frame.joints_world[j].position);
                let (nu, nv) = (noise.sample(&mut rng), noise.sample(&mut rng));
                if let Some(px) = guidance::project(&k, &p) {
                    if (0.0..IMAGE_SIZE).contains(&px[0]) && (0.0..IMAGE_SIZE).contains(&px[1]) {
                        keypoints.push((j, [px[0] + nu, px[1] + nv]));
                    }
                }
            }
            if drop || keypoints.is_empty() {
                continue;
            }
            let wrist = &frame.joints_world[side.wrist()];
            let wrist_cam = cam_from_world.transform_point(&wrist.position) * corruption.depth_scale;
            let wrist_world = PoseSE3::new(wrist.rotation, cam_from_world.inverse().transform_point(&wrist_cam));
            let rots = (0..body::FINGERS_PER_HAND).map(|i| *seq.local[t].joint(side.finger_start() + i)).collect();
            out.push(HandObservation {
                t,
                side,
                keypoints2d: keypoints,
                wrist_pose_world: Some(wrist_world),
                local_hand_rotations: Some(rots),
                intrinsics: k,
                camera_from_cpf: cam_from_cpf,
            });
        }
    }
    Ok(out)
}

pub fn observations_to_text(obs: &[HandObservation]) -> String {
    let mut s = String::from("# egokit hand observations\n");
    let mut current: Option<(CameraIntrinsics, PoseSE3)> = None;
    for o in obs {
        if current != Some((o.intrinsics, o.camera_from_cpf)) {
            let k = &o.intrinsics;
            let _ = write!(s, "intrinsics");
            for v in [k.fx, k.fy, k.cx, k.cy] {
                push_f(&mut s, v);
            }
            s.push_str("\ncamera_from_cpf");
            push_pose(&mut s, &o.camera_from_cpf);
            s.push('\n');
            current = Some((o.intrinsics, o.camera_from_cpf));
        }
        let side = o.side.name();
        for (j, uv) in &o.keypoints2d {
            let _ = write!(s, "kp {} {side} {j}", o.t);
            push_f(&mut s, uv[0]);
            push_f(&mut s, uv[1]);
            s.push('\n');
        }
        if let Some(w) = &o.wrist_pose_world {
            let _ = write!(s, "wrist {} {side}", o.t);
            push_pose(&mut s, w);
            s.push('\n');
        }
        if let Some(rots) = &o.local_hand_rotations {
            let _ = write!(s, "handrot {} {side}", o.t);
            for r in rots {
                push_rot(&mut s, r);
            }
            s.push('\n');
        }
    }
    s
}

pub fn parse_observations(text: &str, path: &Path) -> Result<Vec<HandObservation>> {
    let mut intrinsics: Option<CameraIntrinsics> = None;
    let mut camera: Option<PoseSE3> = None;
    let mut out: Vec<HandObservation> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let expect = |n: usize| {
            if fields.len() == n {
                Ok(())
            } else {
                Err(Error::parse(path, ln, format!("'{}' record needs {} fields, got {}", fields[0], n, fields.len())))
            }
        };
        match fields[0] {
            "intrinsics" => {
                expect(5)?;
                let v = parse_numbers(&fields[1..], path, ln)?;
                intrinsics = Some(CameraIntrinsics::new(v[0], v[1], v[2], v[3]).map_err(|e| Error::parse(path, ln, e.to_string()))?);
            }
            "camera_from_cpf" => {
                expect(13)?;
                camera = Some(parse_pose(&parse_numbers(&fields[1..], path, ln)?, path, ln)?);
            }
            kind @ ("kp" | "wrist" | "handrot") => {
                let (Some(k), Some(c)) = (intrinsics, camera) else {
                    return Err(Error::parse(path, ln, "record before intrinsics/camera_from_cpf"));
                };
                if fields.len() < 3 {
                    return Err(Error::parse(path, ln, "record too short"));
                }
                let t: usize = fields[1].parse().map_err(|_| Error::parse(path, ln, "bad timestep"))?;
                let side: Side = fields[2].parse().map_err(|e: Error| Error::parse(path, ln, e.to_string()))?;
                let idx = match out.iter().rposition(|o| o.t == t && o.side == side && o.intrinsics == k && o.camera_from_cpf == c) {
                    Some(i) => i,
                    None => {
                        out.push(HandObservation {
                            t,
                            side,
                            keypoints2d: Vec::new(),
                            wrist_pose_world: None,
                            local_hand_rotations: None,
                            intrinsics: k,
                            camera_from_cpf: c,
                        });
                        out.len() - 1
                    }
                };
                let o = &mut out[idx];
                match kind {
                    "kp" => {
                        expect(6)?;
                        let j: usize = fields[3].parse().map_err(|_| Error::parse(path, ln, "bad joint id"))?;
                        let v = parse_numbers(&fields[4..], path, ln)?;
                        o.keypoints2d.push((j, [v[0], v[1]]));
                    }
                    "wrist" => {
                        expect(15)?;
                        o.wrist_pose_world = Some(parse_pose(&parse_numbers(&fields[3..], path, ln)?, path, ln)?);
                    }
                    _ => {
                        expect(3 + 9 * body::FINGERS_PER_HAND)?;
                        let v = parse_numbers(&fields[3..], path, ln)?;
                        let rots = v.chunks(9).map(|c| parse_rotation(c, path, ln)).collect::<Result<_>>()?;
                        o.local_hand_rotations = Some(rots);
                    }
                }
            }
            other => return Err(Error::parse(path, ln, format!("unknown record '{other}'"))),
        }
    }
    Ok(out)
}

pub fn save_observations(obs: &[HandObservation], path: &Path) -> Result<()> {
    std::fs::write(path, observations_to_text(obs)).map_err(|e| Error::io(path, e))
}

pub fn load_observations(path: &Path) -> Result<Vec<HandObservation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_observations(&text, path)
}

/// Sparse SLAM-like points: floor samples around the walked path plus
/// clutter above it.
pub fn synthesize_point_cloud(seq: &MotionSequence, floor_z: f64, seed: u64) -> crate::scene::SparsePointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = seq.root.iter().map(|r| r.position).sum::<Vector3<f64>>() / seq.len().max(1) as f64;
    let mut points = Vec::new();
    let mut confidence = Vec::new();
    for i in 0..600 {
        let (x, y) = (center.x + rng.random_range(-4.0..4.0), center.y + rng.random_range(-4.0..4.0));
        let z = if i < 400 { floor_z + rng.random_range(-0.004..0.004) } else { floor_z + rng.random_range(0.05..2.5) };
        points.push(Vector3::new(x, y, z));
        confidence.push(rng.random_range(0.3..1.0));
    }
    crate::scene::SparsePointCloud { points, confidence }
}
