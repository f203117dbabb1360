//! Guidance cost terms as residual blocks with analytic Jacobians.
//!
//! Variables are the 51 local joint rotations per timestep, each perturbed
//! on the right: `R ← R·exp(δ)`. Perturbing joint `k` rotates its subtree
//! about `p_k` with root-frame angular velocity `R_k δ`. World positions
//! are obtained by aligning the body CPF with the input CPF pose, so every
//! joint on the head chain also moves the whole body rigidly.

use nalgebra::{Matrix2x3, Matrix3, Vector3};
use rayon::prelude::*;

use super::lm::{LeastSquares, ResidualBlock};
use super::{GuidanceWeights, HandObservation, MIN_DEPTH};
use crate::body::{self, LocalPose, ShapeParams, HEAD, NUM_BODY, NUM_JOINTS, NUM_LOCAL};
use crate::error::{Error, Result};
use crate::geometry::{right_jacobian_inv, skew, PoseSE3, Rotation3};

/// Root-frame kinematics of one timestep.
struct Kinematics {
    rot: Vec<Matrix3<f64>>,
    pos: Vec<Vector3<f64>>,
    cpf_rot: Matrix3<f64>,
    cpf_pos: Vector3<f64>,
}

fn kinematics(pose: &LocalPose, shape: &ShapeParams) -> Kinematics {
    let fk = body::forward_kinematics(&PoseSE3::identity(), pose, shape);
    let cpf = body::cpf_pose(&fk, shape);
    Kinematics {
        rot: fk.joints_world.iter().map(|p| *p.rotation.matrix()).collect(),
        pos: fk.joints_world.iter().map(|p| p.position).collect(),
        cpf_rot: *cpf.rotation.matrix(),
        cpf_pos: cpf.position,
    }
}

pub struct GuidanceProblem<'a> {
    theta_hat: &'a [LocalPose],
    shape: ShapeParams,
    contacts: &'a [[f64; NUM_BODY]],
    cpf: &'a [PoseSE3],
    observations: &'a [HandObservation],
    obs_by_t: Vec<Vec<usize>>,
    weights: GuidanceWeights,
    hat_pos: Vec<Vec<Vector3<f64>>>,
}

fn block(t: usize, k: usize) -> usize {
    t * NUM_LOCAL + k - 1
}

fn flat3(m: &Matrix3<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..3).flat_map(move |r| (0..3).map(move |c| m[(r, c)]))
}

/// Accumulates per-block Jacobians of a residual block.
struct Builder {
    rows: usize,
    blocks: Vec<usize>,
    jac: Vec<Vec<f64>>,
}

impl Builder {
    fn new(rows: usize) -> Self {
        Self { rows, blocks: Vec::new(), jac: Vec::new() }
    }

    /// Adds `rows × 3` values (row-major) for `blk`, merging duplicates.
    fn add(&mut self, blk: usize, values: impl Iterator<Item = f64>) {
        let values: Vec<f64> = values.collect();
        debug_assert_eq!(values.len(), self.rows * 3);
        if let Some(i) = self.blocks.iter().position(|b| *b == blk) {
            for (a, v) in self.jac[i].iter_mut().zip(values) {
                *a += v;
            }
        } else {
            self.blocks.push(blk);
            self.jac.push(values);
        }
    }

    fn finish(self, name: &'static str, index: usize, residual: Vec<f64>, with_jac: bool) -> ResidualBlock {
        ResidualBlock { name, index, residual, blocks: self.blocks, jacobians: if with_jac { self.jac } else { Vec::new() } }
    }
}

impl<'a> GuidanceProblem<'a> {
    pub fn new(
        theta_hat: &'a [LocalPose],
        shape: ShapeParams,
        contacts: &'a [[f64; NUM_BODY]],
        cpf: &'a [PoseSE3],
        observations: &'a [HandObservation],
        weights: GuidanceWeights,
    ) -> Result<Self> {
        weights.validate()?;
        let len = theta_hat.len();
        if len == 0 {
            return Err(Error::InvalidInput("guidance needs at least one timestep".into()));
        }
        if contacts.len() != len || cpf.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "{len} poses, {} contact rows, {} CPF poses",
                contacts.len(),
                cpf.len()
            )));
        }
        let mut obs_by_t = vec![Vec::new(); len];
        for (i, o) in observations.iter().enumerate() {
            o.validate(len)?;
            obs_by_t[o.t].push(i);
        }
        let hat_pos = theta_hat.par_iter().map(|p| kinematics(p, &shape).pos).collect();
        Ok(Self { theta_hat, shape, contacts, cpf, observations, obs_by_t, weights, hat_pos })
    }

    pub fn len(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta_hat.is_empty()
    }

    /// `∂(M·(point j relative to the CPF or root))/∂δ_k` for every joint `k`
    /// with a nonzero effect, scaled by `scale`.
    fn point_jacobians(kin: &Kinematics, t: usize, j: usize, m: &Matrix3<f64>, cpf_relative: bool, scale: f64, b: &mut Builder) {
        let sk = body::skeleton();
        for k in 1..NUM_JOINTS {
            let s_j = f64::from(u8::from(sk.is_strict_ancestor(k, j)));
            let s_c = f64::from(u8::from(cpf_relative && sk.is_ancestor_or_self(k, HEAD)));
            let coeff = s_j - s_c;
            if coeff == 0.0 {
                continue;
            }
            let jm = m * (-skew(&(kin.pos[j] - kin.pos[k]))) * kin.rot[k] * (coeff * scale);
            b.add(block(t, k), flat3(&jm));
        }
    }

    /// `∂ log(W_obsᵀ W_j)/∂δ_k` for the world orientation of joint `j`.
    fn orientation_jacobians(kin: &Kinematics, t: usize, j: usize, jr_inv: &Matrix3<f64>, scale: f64, b: &mut Builder) {
        let sk = body::skeleton();
        for k in 1..NUM_JOINTS {
            let o_j = f64::from(u8::from(sk.is_ancestor_or_self(k, j)));
            let s_c = f64::from(u8::from(sk.is_ancestor_or_self(k, HEAD)));
            let coeff = o_j - s_c;
            if coeff == 0.0 {
                continue;
            }
            let jm = jr_inv * kin.rot[j].transpose() * kin.rot[k] * (coeff * scale);
            b.add(block(t, k), flat3(&jm));
        }
    }

    fn world_point(&self, kin: &Kinematics, t: usize, j: usize) -> (Vector3<f64>, Matrix3<f64>) {
        let m = self.cpf[t].rotation.matrix() * kin.cpf_rot.transpose();
        (m * (kin.pos[j] - kin.cpf_pos) + self.cpf[t].position, m)
    }

    fn timestep_residuals(&self, x: &[LocalPose], kins: &[Kinematics], t: usize, with_jac: bool) -> Vec<ResidualBlock> {
        let w = &self.weights;
        let kin = &kins[t];
        let mut out = Vec::new();

        if w.lambda_prior_abs > 0.0 {
            let s = w.lambda_prior_abs.sqrt();
            for k in 1..NUM_JOINTS {
                let phi = (self.theta_hat[t].joint(k).transpose() * *x[t].joint(k)).log();
                let mut b = Builder::new(3);
                if with_jac {
                    b.add(block(t, k), flat3(&(right_jacobian_inv(&phi) * s)));
                } else {
                    b.blocks.push(block(t, k));
                }
                out.push(b.finish("prior_abs", t, (phi * s).iter().copied().collect(), with_jac));
            }
        }

        if w.lambda_prior_vel > 0.0 && t > 0 {
            let s = w.lambda_prior_vel.sqrt();
            for k in 1..NUM_JOINTS {
                let delta = x[t - 1].joint(k).transpose() * *x[t].joint(k);
                let phi = delta.log();
                let phi_hat = (self.theta_hat[t - 1].joint(k).transpose() * *self.theta_hat[t].joint(k)).log();
                let mut b = Builder::new(3);
                let jr = right_jacobian_inv(&phi) * s;
                let jprev = -jr * delta.matrix().transpose();
                b.add(block(t - 1, k), flat3(&jprev));
                b.add(block(t, k), flat3(&jr));
                out.push(b.finish("prior_vel", t, ((phi - phi_hat) * s).iter().copied().collect(), with_jac));
            }
        }

        if w.lambda_prior_fk > 0.0 {
            let s = w.lambda_prior_fk.sqrt();
            for j in 1..NUM_JOINTS {
                let mut b = Builder::new(3);
                Self::point_jacobians(kin, t, j, &Matrix3::identity(), false, s, &mut b);
                // Children of the pelvis sit at fixed root-frame offsets.
                if b.blocks.is_empty() {
                    continue;
                }
                let r = (kin.pos[j] - self.hat_pos[t][j]) * s;
                out.push(b.finish("prior_fk", t, r.iter().copied().collect(), with_jac));
            }
        }

        if w.lambda_skate > 0.0 && t > 0 {
            let prev = &kins[t - 1];
            for j in 1..=NUM_BODY {
                let c = 0.5 * (self.contacts[t][j - 1] + self.contacts[t - 1][j - 1]);
                if c == 0.0 {
                    continue;
                }
                let s = w.lambda_skate.sqrt() * c;
                let (q1, m1) = self.world_point(kin, t, j);
                let (q0, m0) = self.world_point(prev, t - 1, j);
                let mut b = Builder::new(3);
                Self::point_jacobians(prev, t - 1, j, &m0, true, -s, &mut b);
                Self::point_jacobians(kin, t, j, &m1, true, s, &mut b);
                out.push(b.finish("skate", t, ((q1 - q0) * s).iter().copied().collect(), with_jac));
            }
        }

        for &oi in &self.obs_by_t[t] {
            let o = &self.observations[oi];
            let wrist = o.side.wrist();
            if w.lambda_hands3d > 0.0 {
                let s = w.lambda_hands3d.sqrt();
                if let Some(target) = &o.wrist_pose_world {
                    let (q, m) = self.world_point(kin, t, wrist);
                    let mut b = Builder::new(3);
                    Self::point_jacobians(kin, t, wrist, &m, true, s, &mut b);
                    out.push(b.finish("hand_wrist_position", t, ((q - target.position) * s).iter().copied().collect(), with_jac));

                    let world_rot = m * kin.rot[wrist];
                    let phi = Rotation3::from_matrix_unchecked(target.rotation.matrix().transpose() * world_rot).log();
                    let mut b = Builder::new(3);
                    Self::orientation_jacobians(kin, t, wrist, &right_jacobian_inv(&phi), s, &mut b);
                    out.push(b.finish("hand_wrist_orientation", t, (phi * s).iter().copied().collect(), with_jac));
                }
                if let Some(rots) = &o.local_hand_rotations {
                    for (i, target) in rots.iter().enumerate() {
                        let k = o.side.finger_start() + i;
                        let phi = (target.transpose() * *x[t].joint(k)).log();
                        let mut b = Builder::new(3);
                        if with_jac {
                            b.add(block(t, k), flat3(&(right_jacobian_inv(&phi) * s)));
                        } else {
                            b.blocks.push(block(t, k));
                        }
                        out.push(b.finish("hand_rotation", t, (phi * s).iter().copied().collect(), with_jac));
                    }
                }
            }
            if w.lambda_reproj > 0.0 {
                let s = w.lambda_reproj.sqrt();
                let cam_r = o.camera_from_cpf.rotation.matrix();
                let m = cam_r * kin.cpf_rot.transpose();
                for (j, uv) in &o.keypoints2d {
                    let p = m * (kin.pos[*j] - kin.cpf_pos) + o.camera_from_cpf.position;
                    let k = &o.intrinsics;
                    let mut b = Builder::new(2);
                    let mut pts = Builder::new(3);
                    Self::point_jacobians(kin, t, *j, &m, true, 1.0, &mut pts);
                    let residual = if p.z > MIN_DEPTH {
                        let d = Matrix2x3::new(
                            k.fx / p.z, 0.0, -k.fx * p.x / (p.z * p.z),
                            0.0, k.fy / p.z, -k.fy * p.y / (p.z * p.z),
                        ) * s;
                        for (blk, jv) in pts.blocks.iter().zip(&pts.jac) {
                            let jm = Matrix3::from_row_slice(jv);
                            let jj = d * jm;
                            b.add(*blk, (0..2).flat_map(|r| (0..3).map(move |c| (r, c))).map(|(r, c)| jj[(r, c)]));
                        }
                        vec![s * (k.fx * p.x / p.z + k.cx - uv[0]), s * (k.fy * p.y / p.z + k.cy - uv[1])]
                    } else {
                        // Behind the camera: keep the block (fixed pattern) but
                        // contribute nothing.
                        for blk in &pts.blocks {
                            b.add(*blk, std::iter::repeat_n(0.0, 6));
                        }
                        vec![0.0, 0.0]
                    };
                    out.push(b.finish("reprojection", t, residual, with_jac));
                }
            }
        }
        out
    }
}

impl LeastSquares for GuidanceProblem<'_> {
    type State = Vec<LocalPose>;

    fn block_dims(&self) -> Vec<usize> {
        vec![3; self.len() * NUM_LOCAL]
    }

    fn block_groups(&self) -> Vec<usize> {
        vec![NUM_LOCAL; self.len()]
    }

    fn evaluate(&self, x: &Vec<LocalPose>, jacobians: bool) -> Result<Vec<ResidualBlock>> {
        if x.len() != self.len() {
            return Err(Error::ShapeMismatch("state length differs from problem".into()));
        }
        let kins: Vec<Kinematics> = x.par_iter().map(|p| kinematics(p, &self.shape)).collect();
        let per_t: Vec<Vec<ResidualBlock>> =
            (0..self.len()).into_par_iter().map(|t| self.timestep_residuals(x, &kins, t, jacobians)).collect();
        Ok(per_t.into_iter().flatten().collect())
    }

    fn retract(&self, x: &Vec<LocalPose>, delta: &[f64]) -> Vec<LocalPose> {
        x.iter()
            .enumerate()
            .map(|(t, pose)| {
                let rots = pose
                    .joint_rotations
                    .iter()
                    .enumerate()
                    .map(|(i, r)| {
                        let o = (t * NUM_LOCAL + i) * 3;
                        *r * Rotation3::exp(&Vector3::new(delta[o], delta[o + 1], delta[o + 2]))
                    })
                    .collect();
                LocalPose { joint_rotations: rots }
            })
            .collect()
    }
}
