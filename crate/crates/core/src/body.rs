//! Rigid 52-joint kinematic body: shape-scaled skeleton, forward kinematics,
//! the central pupil frame (CPF) attachment, and global alignment of local
//! poses to a world CPF trajectory.
//!
//! Body frame convention: +z up, +y forward, +x to the body's right. The CPF
//! has +z forward, +y up and +x to the wearer's left.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{compose, inverse, PoseSE3, Rotation3};

pub const NUM_JOINTS: usize = 52;
/// Local rotations carried by the pose (every joint except the root).
pub const NUM_LOCAL: usize = 51;
/// Non-root body joints, the ones that carry contact labels.
pub const NUM_BODY: usize = 21;
pub const SHAPE_DIM: usize = 2;

pub const PELVIS: usize = 0;
pub const LEFT_HIP: usize = 1;
pub const RIGHT_HIP: usize = 2;
pub const SPINE1: usize = 3;
pub const LEFT_KNEE: usize = 4;
pub const RIGHT_KNEE: usize = 5;
pub const SPINE2: usize = 6;
pub const LEFT_ANKLE: usize = 7;
pub const RIGHT_ANKLE: usize = 8;
pub const SPINE3: usize = 9;
pub const LEFT_FOOT: usize = 10;
pub const RIGHT_FOOT: usize = 11;
pub const NECK: usize = 12;
pub const LEFT_COLLAR: usize = 13;
pub const RIGHT_COLLAR: usize = 14;
pub const HEAD: usize = 15;
pub const LEFT_SHOULDER: usize = 16;
pub const RIGHT_SHOULDER: usize = 17;
pub const LEFT_ELBOW: usize = 18;
pub const RIGHT_ELBOW: usize = 19;
pub const LEFT_WRIST: usize = 20;
pub const RIGHT_WRIST: usize = 21;
/// First finger joint of each hand; 15 finger joints follow contiguously.
pub const LEFT_HAND_START: usize = 22;
pub const RIGHT_HAND_START: usize = 37;
pub const FINGERS_PER_HAND: usize = 15;

/// Height of the crown above the head joint at unit height scale.
pub const CROWN_ABOVE_HEAD: f64 = 0.14;
/// Root height above the floor in the neutral standing pose at unit scale.
pub const STANDING_ROOT_HEIGHT: f64 = 0.94;

const FINGER_NAMES: [&str; 5] = ["index", "middle", "pinky", "ring", "thumb"];

// Finger base offsets from the wrist in the hanging-hand rest pose (palm
// facing the body midline, fingers pointing down).
const FINGER_BASE: [[f64; 3]; 5] = [
    [0.0, 0.03, -0.09],
    [0.0, 0.01, -0.095],
    [0.0, -0.03, -0.08],
    [0.0, -0.01, -0.09],
    [0.0, 0.04, -0.03],
];
const FINGER_SEGMENTS: [[[f64; 3]; 2]; 5] = [
    [[0.0, 0.0, -0.035], [0.0, 0.0, -0.025]],
    [[0.0, 0.0, -0.038], [0.0, 0.0, -0.027]],
    [[0.0, 0.0, -0.025], [0.0, 0.0, -0.02]],
    [[0.0, 0.0, -0.035], [0.0, 0.0, -0.025]],
    [[0.0, 0.03, -0.03], [0.0, 0.02, -0.02]],
];

/// Fixed joint tree with rest offsets, following the SMPL-H joint ordering.
#[derive(Debug, Clone)]
pub struct SkeletonTopology {
    pub names: Vec<String>,
    pub parent: Vec<Option<usize>>,
    pub rest_offset: Vec<Vector3<f64>>,
    /// Bones additionally scaled by the arm-length coefficient.
    pub arm_bone: Vec<bool>,
    pub head_joint: usize,
    pub foot_joints: [usize; 4],
    pub wrist_joints: [usize; 2],
    pub cpf_offset: Vector3<f64>,
    pub cpf_rotation: Rotation3,
    /// `ancestor_or_self[k][j]` is true when joint `k` lies on the path from
    /// the root to `j` (inclusive).
    ancestor_or_self: Vec<Vec<bool>>,
}

static SKELETON: std::sync::LazyLock<SkeletonTopology> = std::sync::LazyLock::new(SkeletonTopology::build);

pub fn skeleton() -> &'static SkeletonTopology {
    &SKELETON
}

impl SkeletonTopology {
    fn build() -> Self {
        let mut names: Vec<String> = [
            "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2", "left_ankle",
            "right_ankle", "spine3", "left_foot", "right_foot", "neck", "left_collar", "right_collar", "head",
            "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let mut parent: Vec<Option<usize>> = vec![
            None,
            Some(0),
            Some(0),
            Some(0),
            Some(1),
            Some(2),
            Some(3),
            Some(4),
            Some(5),
            Some(6),
            Some(7),
            Some(8),
            Some(9),
            Some(9),
            Some(9),
            Some(12),
            Some(13),
            Some(14),
            Some(16),
            Some(17),
            Some(18),
            Some(19),
        ];
        let v = Vector3::new;
        let mut rest_offset = vec![
            v(0.0, 0.0, 0.0),
            v(-0.09, 0.0, -0.07),
            v(0.09, 0.0, -0.07),
            v(0.0, 0.0, 0.10),
            v(0.0, 0.0, -0.42),
            v(0.0, 0.0, -0.42),
            v(0.0, 0.0, 0.13),
            v(0.0, 0.0, -0.41),
            v(0.0, 0.0, -0.41),
            v(0.0, 0.0, 0.12),
            v(0.0, 0.12, -0.04),
            v(0.0, 0.12, -0.04),
            v(0.0, 0.0, 0.17),
            v(-0.07, 0.0, 0.11),
            v(0.07, 0.0, 0.11),
            v(0.0, 0.0, 0.10),
            v(-0.12, 0.0, 0.02),
            v(0.12, 0.0, 0.02),
            v(0.0, 0.0, -0.27),
            v(0.0, 0.0, -0.27),
            v(0.0, 0.0, -0.25),
            v(0.0, 0.0, -0.25),
        ];
        for (side, wrist) in [("left", LEFT_WRIST), ("right", RIGHT_WRIST)] {
            let mirror = if side == "left" { 1.0 } else { -1.0 };
            for (f, fname) in FINGER_NAMES.iter().enumerate() {
                let base = names.len();
                for seg in 0..3 {
                    names.push(format!("{side}_{fname}{}", seg + 1));
                    parent.push(Some(if seg == 0 { wrist } else { base + seg - 1 }));
                    let o = if seg == 0 { FINGER_BASE[f] } else { FINGER_SEGMENTS[f][seg - 1] };
                    // Thumbs splay toward the body midline.
                    let x = if f == 4 { 0.015 * mirror } else { o[0] };
                    rest_offset.push(v(x, o[1], o[2]));
                }
            }
        }
        let arm_bone = (0..NUM_JOINTS).map(|j| j >= LEFT_ELBOW).collect();
        let mut ancestor_or_self = vec![vec![false; NUM_JOINTS]; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            let mut k = Some(j);
            while let Some(a) = k {
                ancestor_or_self[a][j] = true;
                k = parent[a];
            }
        }
        // Columns: CPF +x = body left, +y = up, +z = forward.
        let cpf_rotation = Rotation3::from_matrix_unchecked(Matrix3::new(-1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0));
        Self {
            names,
            parent,
            rest_offset,
            arm_bone,
            head_joint: HEAD,
            foot_joints: [LEFT_ANKLE, RIGHT_ANKLE, LEFT_FOOT, RIGHT_FOOT],
            wrist_joints: [LEFT_WRIST, RIGHT_WRIST],
            cpf_offset: v(0.0, 0.10, 0.07),
            cpf_rotation,
            ancestor_or_self,
        }
    }

    pub fn joint_count(&self) -> usize {
        self.parent.len()
    }

    /// True when rotating joint `k` moves or re-orients joint `j`'s frame.
    pub fn is_ancestor_or_self(&self, k: usize, j: usize) -> bool {
        self.ancestor_or_self[k][j]
    }

    /// True when rotating joint `k` moves joint `j`'s position.
    pub fn is_strict_ancestor(&self, k: usize, j: usize) -> bool {
        k != j && self.ancestor_or_self[k][j]
    }

    /// Rest offset of joint `j` scaled by the shape coefficients.
    pub fn scaled_offset(&self, j: usize, shape: &ShapeParams) -> Vector3<f64> {
        let mut s = shape.height_scale();
        if self.arm_bone[j] {
            s *= shape.arm_scale();
        }
        self.rest_offset[j] * s
    }

    /// Fixed transform from the head joint to the CPF.
    pub fn head_to_cpf(&self, shape: &ShapeParams) -> PoseSE3 {
        PoseSE3::new(self.cpf_rotation, self.cpf_offset * shape.height_scale())
    }

    /// Neutral-pose standing stature (floor to crown) for a shape.
    pub fn standing_height(&self, shape: &ShapeParams) -> f64 {
        let head = (0..NUM_JOINTS)
            .filter(|&k| self.is_ancestor_or_self(k, HEAD))
            .map(|k| self.scaled_offset(k, shape).z)
            .sum::<f64>();
        (STANDING_ROOT_HEIGHT + CROWN_ABOVE_HEAD) * shape.height_scale() + head
    }

    /// Text dump: one `index name parent x y z` record per joint.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# egokit skeleton v1");
        let _ = writeln!(
            s,
            "# joints={} head={} feet={:?} wrists={:?}",
            self.joint_count(),
            self.head_joint,
            self.foot_joints,
            self.wrist_joints
        );
        let _ = writeln!(
            s,
            "# cpf_offset {} {} {} (head frame, meters, scaled by height)",
            self.cpf_offset.x, self.cpf_offset.y, self.cpf_offset.z
        );
        let _ = writeln!(s, "# index name parent x y z");
        for j in 0..self.joint_count() {
            let p = self.parent[j].map(|p| p as i64).unwrap_or(-1);
            let o = self.rest_offset[j];
            let _ = writeln!(s, "{j} {} {p} {} {} {}", self.names[j], o.x, o.y, o.z);
        }
        s
    }

    /// Short content hash of the dump, stored in sequence headers.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.dump().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Multiplicative bone-scale coefficients: overall height, then arm length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeParams {
    pub beta: [f64; SHAPE_DIM],
}

impl Default for ShapeParams {
    fn default() -> Self {
        Self { beta: [1.0, 1.0] }
    }
}

impl ShapeParams {
    pub const MIN: f64 = 0.5;
    pub const MAX: f64 = 2.0;

    pub fn new(beta: [f64; SHAPE_DIM]) -> Result<Self> {
        if beta.iter().any(|b| !b.is_finite() || *b < Self::MIN || *b > Self::MAX) {
            return Err(Error::InvalidInput(format!("shape coefficients {beta:?} outside [0.5, 2.0]")));
        }
        Ok(Self { beta })
    }

    /// Clamps raw (e.g. sampled) coefficients into the valid range.
    pub fn clamped(beta: [f64; SHAPE_DIM]) -> Self {
        let c = |b: f64| if b.is_finite() { b.clamp(Self::MIN, Self::MAX) } else { 1.0 };
        Self { beta: [c(beta[0]), c(beta[1])] }
    }

    pub fn height_scale(&self) -> f64 {
        self.beta[0]
    }

    pub fn arm_scale(&self) -> f64 {
        self.beta[1]
    }
}

/// Local joint rotations for joints 1..52, each relative to its parent.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPose {
    pub joint_rotations: Vec<Rotation3>,
}

impl Default for LocalPose {
    fn default() -> Self {
        Self::neutral()
    }
}

impl LocalPose {
    pub fn neutral() -> Self {
        Self { joint_rotations: vec![Rotation3::identity(); NUM_LOCAL] }
    }

    pub fn new(joint_rotations: Vec<Rotation3>) -> Result<Self> {
        if joint_rotations.len() != NUM_LOCAL {
            return Err(Error::ShapeMismatch(format!(
                "expected {NUM_LOCAL} local rotations, got {}",
                joint_rotations.len()
            )));
        }
        Ok(Self { joint_rotations })
    }

    /// Rotation of joint `j` (1-based joint index; the root has none).
    pub fn joint(&self, j: usize) -> &Rotation3 {
        &self.joint_rotations[j - 1]
    }

    pub fn joint_mut(&mut self, j: usize) -> &mut Rotation3 {
        &mut self.joint_rotations[j - 1]
    }
}

/// World poses of every joint for one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyFrame {
    pub root: PoseSE3,
    pub joints_world: Vec<PoseSE3>,
}

impl BodyFrame {
    pub fn joint_positions(&self) -> Vec<Vector3<f64>> {
        self.joints_world.iter().map(|p| p.position).collect()
    }
}

pub fn forward_kinematics(root: &PoseSE3, pose: &LocalPose, shape: &ShapeParams) -> BodyFrame {
    let sk = skeleton();
    let mut joints: Vec<PoseSE3> = Vec::with_capacity(NUM_JOINTS);
    joints.push(*root);
    for j in 1..NUM_JOINTS {
        let parent = sk.parent[j].expect("non-root joint has a parent");
        let local = PoseSE3::new(*pose.joint(j), sk.scaled_offset(j, shape));
        let world = compose(&joints[parent], &local);
        joints.push(world);
    }
    BodyFrame { root: *root, joints_world: joints }
}

pub fn cpf_pose(frame: &BodyFrame, shape: &ShapeParams) -> PoseSE3 {
    compose(&frame.joints_world[HEAD], &skeleton().head_to_cpf(shape))
}

/// Root pose that puts the body's CPF exactly at `world_cpf`.
pub fn root_from_cpf(pose: &LocalPose, shape: &ShapeParams, world_cpf: &PoseSE3) -> PoseSE3 {
    let from_identity = forward_kinematics(&PoseSE3::identity(), pose, shape);
    let root_cpf = cpf_pose(&from_identity, shape);
    compose(world_cpf, &inverse(&root_cpf))
}

/// Root height that puts the neutral pose's feet on the floor.
pub fn standing_root_height(shape: &ShapeParams) -> f64 {
    STANDING_ROOT_HEIGHT * shape.height_scale()
}

/// Places local poses into the world frame of a CPF trajectory.
pub fn globalize(poses: &[(LocalPose, ShapeParams)], cpf_traj: &[PoseSE3]) -> Result<Vec<BodyFrame>> {
    if poses.len() != cpf_traj.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} poses but {} CPF poses",
            poses.len(),
            cpf_traj.len()
        )));
    }
    Ok(poses
        .iter()
        .zip(cpf_traj)
        .map(|((pose, shape), cpf)| {
            let root = root_from_cpf(pose, shape, cpf);
            forward_kinematics(&root, pose, shape)
        })
        .collect())
}
