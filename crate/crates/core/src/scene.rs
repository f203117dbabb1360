//! Floor height from sparse SLAM points.
//!
//! The floor is assumed horizontal, so each RANSAC hypothesis is a single
//! z-value drawn from one confident point.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparsePointCloud {
    pub points: Vec<Vector3<f64>>,
    pub confidence: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorConfig {
    /// Inlier band half-width, meters.
    pub tau: f64,
    pub iterations: usize,
    pub confidence_threshold: f64,
    pub min_points: usize,
    pub seed: u64,
}

impl Default for FloorConfig {
    fn default() -> Self {
        Self { tau: 0.01, iterations: 1000, confidence_threshold: 0.5, min_points: 50, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorEstimate {
    pub z: f64,
    pub inliers: usize,
}

impl SparsePointCloud {
    pub fn new(points: Vec<Vector3<f64>>, confidence: Vec<f64>) -> Result<Self> {
        if points.len() != confidence.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points but {} confidences",
                points.len(),
                confidence.len()
            )));
        }
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) || confidence.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidInput("point cloud has non-finite values or negative confidence".into()));
        }
        Ok(Self { points, confidence })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Parses `x y z confidence` records; `#` starts a comment line.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut points = Vec::new();
        let mut confidence = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, i + 1, format!("bad number: {e}")))?;
            if vals.len() != 4 {
                return Err(Error::parse(path, i + 1, format!("expected 4 fields, got {}", vals.len())));
            }
            points.push(Vector3::new(vals[0], vals[1], vals[2]));
            confidence.push(vals[3]);
        }
        Self::new(points, confidence).map_err(|e| Error::parse(path, 0, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# x y z confidence\n");
        for (p, c) in self.points.iter().zip(&self.confidence) {
            let _ = writeln!(s, "{:.17e} {:.17e} {:.17e} {:.17e}", p.x, p.y, p.z, c);
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub fn estimate_floor(cloud: &SparsePointCloud, config: &FloorConfig) -> Result<FloorEstimate> {
    let zs: Vec<f64> = cloud
        .points
        .iter()
        .zip(&cloud.confidence)
        .filter(|(_, c)| **c >= config.confidence_threshold)
        .map(|(p, _)| p.z)
        .collect();
    if zs.len() < config.min_points.max(1) {
        return Err(Error::InsufficientData(format!(
            "{} confident points, need at least {}",
            zs.len(),
            config.min_points
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best_count = 0usize;
    let mut best_hypothesis = zs[0];
    for _ in 0..config.iterations.max(1) {
        let z = zs[rng.random_range(0..zs.len())];
        let count = zs.iter().filter(|&&zi| (zi - z).abs() < config.tau).count();
        if count > best_count {
            best_count = count;
            best_hypothesis = z;
        }
    }
    let inliers: Vec<f64> = zs.iter().copied().filter(|zi| (zi - best_hypothesis).abs() < config.tau).collect();
    let z = inliers.iter().sum::<f64>() / inliers.len() as f64;
    Ok(FloorEstimate { z, inliers: inliers.len() })
}

/// The 70/30 benchmark: 700 points uniform in `floor ± 0.005` and 300
/// uniform outliers in `z ∈ [0, 3]`, scattered over a 10 m square.
pub fn synthetic_floor_cloud(floor: f64, seed: u64) -> SparsePointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(1000);
    for i in 0..1000 {
        let x = rng.random_range(-5.0..5.0);
        let y = rng.random_range(-5.0..5.0);
        let z = if i < 700 { floor + rng.random_range(-0.005..0.005) } else { rng.random_range(0.0..3.0) };
        points.push(Vector3::new(x, y, z));
    }
    SparsePointCloud { points, confidence: vec![1.0; 1000] }
}
