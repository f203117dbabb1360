//! Head-motion conditioning: maps a world CPF trajectory to per-timestep
//! feature vectors for the motion prior.
//!
//! Every SE(3) quantity is serialized as a 6D rotation followed by the
//! position in meters (9 reals).

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{compose, inverse, PoseSE3, Rot6D, Rotation3};

/// Below this horizontal gaze magnitude the heading is undefined.
pub const GAZE_DEGENERACY: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConditioningVariant {
    /// Local relative motion plus the CPF pose in a per-timestep
    /// floor-projected canonical frame.
    EgoAllo,
    AbsoluteLocalRelative,
    AbsoluteGlobalDeltas,
    SequenceCanonicalization,
    Absolute,
}

impl ConditioningVariant {
    pub const ALL: [ConditioningVariant; 5] = [
        ConditioningVariant::EgoAllo,
        ConditioningVariant::AbsoluteLocalRelative,
        ConditioningVariant::AbsoluteGlobalDeltas,
        ConditioningVariant::SequenceCanonicalization,
        ConditioningVariant::Absolute,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ConditioningVariant::EgoAllo => "egoallo",
            ConditioningVariant::AbsoluteLocalRelative => "abs-local-rel",
            ConditioningVariant::AbsoluteGlobalDeltas => "abs-global-deltas",
            ConditioningVariant::SequenceCanonicalization => "seq-canonical",
            ConditioningVariant::Absolute => "absolute",
        }
    }

    /// Feature count per timestep.
    pub fn feature_dim(&self) -> usize {
        match self {
            ConditioningVariant::SequenceCanonicalization | ConditioningVariant::Absolute => 9,
            _ => 18,
        }
    }

    /// Stable numeric tag used in checkpoints and the C interface.
    pub fn tag(&self) -> u32 {
        match self {
            ConditioningVariant::EgoAllo => 0,
            ConditioningVariant::AbsoluteLocalRelative => 1,
            ConditioningVariant::AbsoluteGlobalDeltas => 2,
            ConditioningVariant::SequenceCanonicalization => 3,
            ConditioningVariant::Absolute => 4,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Self::ALL.iter().copied().find(|v| v.tag() == tag)
    }
}

impl fmt::Display for ConditioningVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConditioningVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown conditioning variant '{s}'")))
    }
}

/// Features for one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionVector {
    pub features: Vec<f64>,
}

fn heading_angle(dir: &Vector3<f64>) -> Option<f64> {
    if dir.x.hypot(dir.y) < GAZE_DEGENERACY {
        None
    } else {
        Some(-dir.x.atan2(dir.y))
    }
}

fn floor_frame(world_cpf: &PoseSE3, heading: f64) -> PoseSE3 {
    let p = world_cpf.position;
    PoseSE3::new(Rotation3::rz(heading), Vector3::new(p.x, p.y, 0.0))
}

/// Floor-projected frame under the CPF with +y along its horizontal gaze.
/// `None` when the gaze is vertical.
pub fn canonical_frame(world_cpf: &PoseSE3) -> Option<PoseSE3> {
    heading_angle(&world_cpf.rotation.column(2)).map(|h| floor_frame(world_cpf, h))
}

/// Canonical frames for a trajectory. Vertical-gaze timesteps reuse the
/// previous heading; at the first timestep the CPF up axis stands in for the
/// gaze, then world +y.
pub fn canonical_frames(traj: &[PoseSE3]) -> Vec<PoseSE3> {
    let mut prev: Option<f64> = None;
    traj.iter()
        .map(|pose| {
            let heading = heading_angle(&pose.rotation.column(2))
                .or(prev)
                .or_else(|| heading_angle(&pose.rotation.column(1)))
                .unwrap_or(0.0);
            prev = Some(heading);
            floor_frame(pose, heading)
        })
        .collect()
}

/// `(T^{t-1})⁻¹ T^t`, identity at the first timestep.
pub fn relative_motion(traj: &[PoseSE3]) -> Vec<PoseSE3> {
    traj.iter()
        .enumerate()
        .map(|(t, pose)| if t == 0 { PoseSE3::identity() } else { compose(&inverse(&traj[t - 1]), pose) })
        .collect()
}

pub fn encode(variant: ConditioningVariant, traj: &[PoseSE3]) -> Result<Vec<ConditionVector>> {
    if traj.is_empty() {
        return Err(Error::InvalidInput("cannot encode an empty trajectory".into()));
    }
    let mut out = Vec::with_capacity(traj.len());
    match variant {
        ConditioningVariant::EgoAllo => {
            let deltas = relative_motion(traj);
            let canon = canonical_frames(traj);
            for t in 0..traj.len() {
                let local = compose(&inverse(&canon[t]), &traj[t]);
                out.push(concat(&[&deltas[t].to_features(), &local.to_features()]));
            }
        }
        ConditioningVariant::AbsoluteLocalRelative => {
            let deltas = relative_motion(traj);
            for t in 0..traj.len() {
                out.push(concat(&[&traj[t].to_features(), &deltas[t].to_features()]));
            }
        }
        ConditioningVariant::AbsoluteGlobalDeltas => {
            for t in 0..traj.len() {
                let (rel, dp) = if t == 0 {
                    (Rotation3::identity(), Vector3::zeros())
                } else {
                    (traj[t - 1].rotation.transpose() * traj[t].rotation, traj[t].position - traj[t - 1].position)
                };
                let r6 = Rot6D::from_rotation(&rel).0;
                out.push(concat(&[&traj[t].to_features(), &r6, dp.as_slice()]));
            }
        }
        ConditioningVariant::SequenceCanonicalization => {
            let first = canonical_frames(&traj[..1])[0];
            let to_canonical = inverse(&first);
            for pose in traj {
                out.push(concat(&[&compose(&to_canonical, pose).to_features()]));
            }
        }
        ConditioningVariant::Absolute => {
            for pose in traj {
                out.push(concat(&[&pose.to_features()]));
            }
        }
    }
    Ok(out)
}

/// Row-major `T × F` matrix of an encoding.
pub fn encode_flat(variant: ConditioningVariant, traj: &[PoseSE3]) -> Result<Vec<f64>> {
    Ok(encode(variant, traj)?.into_iter().flat_map(|c| c.features).collect())
}

fn concat(parts: &[&[f64]]) -> ConditionVector {
    ConditionVector { features: parts.iter().flat_map(|p| p.iter().copied()).collect() }
}
