//! Body-estimation metrics: MPJPE, PA-MPJPE, ground contact (GND), and head
//! position error. Positions in meters, errors reported in millimeters.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};

use crate::body::{self, BodyFrame};
use crate::error::{Error, Result};

/// Foot-to-floor distance that still counts as touching, meters.
pub const GND_EPSILON: f64 = 0.05;
/// Joints scored by the body metrics: the root and the 21 body joints.
pub const BODY_METRIC_JOINTS: usize = 22;

#[derive(Debug, Clone, PartialEq)]
pub struct JointTrajectory {
    /// `frames[t][j]` is the world position of joint `j` at time `t`.
    pub frames: Vec<Vec<Vector3<f64>>>,
    pub head: Option<usize>,
    pub feet: Vec<usize>,
}

impl JointTrajectory {
    pub fn new(frames: Vec<Vec<Vector3<f64>>>, head: Option<usize>, feet: Vec<usize>) -> Result<Self> {
        if let Some(first) = frames.first() {
            if frames.iter().any(|f| f.len() != first.len()) {
                return Err(Error::ShapeMismatch("joint count varies across frames".into()));
            }
            let n = first.len();
            if head.is_some_and(|h| h >= n) || feet.iter().any(|&f| f >= n) {
                return Err(Error::InvalidInput("joint label out of range".into()));
            }
        }
        Ok(Self { frames, head, feet })
    }

    /// Root plus the 21 body joints, labeled with the head and feet.
    pub fn body_from_frames(frames: &[BodyFrame]) -> Self {
        Self {
            frames: frames.iter().map(|f| f.joints_world[..BODY_METRIC_JOINTS].iter().map(|p| p.position).collect()).collect(),
            head: Some(body::HEAD),
            feet: body::skeleton().foot_joints.to_vec(),
        }
    }

    /// Only the selected joints, without role labels.
    pub fn select_from_frames(frames: &[BodyFrame], joints: &[usize]) -> Self {
        Self {
            frames: frames.iter().map(|f| joints.iter().map(|&j| f.joints_world[j].position).collect()).collect(),
            head: None,
            feet: vec![],
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joint_count(&self) -> usize {
        self.frames.first().map_or(0, |f| f.len())
    }
}

fn check_shapes(pred: &JointTrajectory, gt: &JointTrajectory) -> Result<()> {
    if pred.len() != gt.len() || pred.joint_count() != gt.joint_count() {
        return Err(Error::ShapeMismatch(format!(
            "prediction is {}x{}, ground truth {}x{}",
            pred.len(),
            pred.joint_count(),
            gt.len(),
            gt.joint_count()
        )));
    }
    if pred.is_empty() || pred.joint_count() == 0 {
        return Err(Error::InsufficientData("empty trajectory".into()));
    }
    Ok(())
}

fn mean_distance(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).sum::<f64>() / a.len() as f64
}

/// Per-frame mean joint error in millimeters.
pub fn mpjpe_per_frame(pred: &JointTrajectory, gt: &JointTrajectory) -> Result<Vec<f64>> {
    check_shapes(pred, gt)?;
    Ok(pred.frames.iter().zip(&gt.frames).map(|(p, g)| 1000.0 * mean_distance(p, g)).collect())
}

pub fn mpjpe(pred: &JointTrajectory, gt: &JointTrajectory) -> Result<f64> {
    Ok(mean(&mpjpe_per_frame(pred, gt)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PaOptions {
    /// Include a uniform scale in the alignment.
    pub with_scale: bool,
}

impl Default for PaOptions {
    fn default() -> Self {
        Self { with_scale: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaResult {
    pub mm: f64,
    pub per_frame: Vec<f64>,
    /// Frames skipped because their joints were (nearly) collinear.
    pub excluded_frames: usize,
}

/// Similarity (or rigid) transform best mapping `src` onto `dst` in the
/// least-squares sense: `dst ≈ s R src + t`.
pub fn procrustes(src: &[Vector3<f64>], dst: &[Vector3<f64>], with_scale: bool) -> Option<(f64, Matrix3<f64>, Vector3<f64>)> {
    let n = src.len() as f64;
    let mu_s: Vector3<f64> = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d: Vector3<f64> = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut scatter_s = Matrix3::zeros();
    let mut scatter_d = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (cs, cd) = (s - mu_s, d - mu_d);
        cov += cd * cs.transpose();
        scatter_s += cs * cs.transpose();
        scatter_d += cd * cd.transpose();
        var_s += cs.norm_squared();
    }
    for sc in [&scatter_s, &scatter_d] {
        let mut ev: Vec<f64> = sc.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        if ev[0] <= 1e-18 || ev[1] < 1e-10 * ev[0] {
            return None;
        }
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    let s = if with_scale { (Matrix3::from_diagonal(&svd.singular_values) * d).trace() / var_s } else { 1.0 };
    let t = mu_d - r * mu_s * s;
    Some((s, r, t))
}

pub fn pa_mpjpe(pred: &JointTrajectory, gt: &JointTrajectory, options: PaOptions) -> Result<PaResult> {
    check_shapes(pred, gt)?;
    let mut per_frame = Vec::with_capacity(pred.len());
    let mut excluded = 0;
    for (p, g) in pred.frames.iter().zip(&gt.frames) {
        if p.len() < 3 {
            excluded += 1;
            continue;
        }
        match procrustes(p, g, options.with_scale) {
            Some((s, r, t)) => {
                let aligned: Vec<Vector3<f64>> = p.iter().map(|x| r * x * s + t).collect();
                per_frame.push(1000.0 * mean_distance(&aligned, g));
            }
            None => excluded += 1,
        }
    }
    if per_frame.is_empty() {
        return Err(Error::Degenerate(format!("all {excluded} frames are degenerate for alignment")));
    }
    Ok(PaResult { mm: mean(&per_frame), per_frame, excluded_frames: excluded })
}

/// 1 when any labeled foot joint comes within `epsilon` of the floor.
pub fn gnd(pred: &JointTrajectory, floor_z: f64, epsilon: f64) -> Result<u8> {
    if pred.feet.is_empty() {
        return Err(Error::InvalidInput("no foot joints labeled".into()));
    }
    let min_clearance = pred
        .frames
        .iter()
        .flat_map(|f| pred.feet.iter().map(move |&j| f[j].z - floor_z))
        .fold(f64::INFINITY, f64::min);
    Ok(u8::from(min_clearance <= epsilon))
}

pub fn t_head_per_frame(pred: &JointTrajectory, gt: &JointTrajectory) -> Result<Vec<f64>> {
    check_shapes(pred, gt)?;
    let (Some(hp), Some(hg)) = (pred.head, gt.head) else {
        return Err(Error::InvalidInput("head joint not labeled".into()));
    };
    Ok(pred.frames.iter().zip(&gt.frames).map(|(p, g)| 1000.0 * (p[hp] - g[hg]).norm()).collect())
}

pub fn t_head(pred: &JointTrajectory, gt: &JointTrajectory) -> Result<f64> {
    Ok(mean(&t_head_per_frame(pred, gt)?))
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Standard error of the mean (sample standard deviation over √n).
pub fn stderr(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (var / v.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
}

impl MetricRow {
    pub fn from_samples(metric: &str, samples: &[f64]) -> Self {
        Self { metric: metric.to_string(), value: mean(samples), stderr: stderr(samples), n: samples.len() }
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from("metric,value,stderr,n\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.6},{:.6},{}", r.metric, r.value, r.stderr, r.n);
    }
    s
}

/// Standard metric rows for one estimated sequence against ground truth.
pub fn evaluate_sequence(pred: &[BodyFrame], gt: &[BodyFrame], floor_z: f64) -> Result<Vec<MetricRow>> {
    let p = JointTrajectory::body_from_frames(pred);
    let g = JointTrajectory::body_from_frames(gt);
    let pa = pa_mpjpe(&p, &g, PaOptions::default())?;
    Ok(vec![
        MetricRow::from_samples("mpjpe", &mpjpe_per_frame(&p, &g)?),
        MetricRow::from_samples("pa_mpjpe", &pa.per_frame),
        MetricRow::from_samples("gnd", &[f64::from(gnd(&p, floor_z, GND_EPSILON)?)]),
        MetricRow::from_samples("t_head", &t_head_per_frame(&p, &g)?),
    ])
}
