//! Command implementations behind the `egokit` binary.
//!
//! Every command takes a [`RunConfig`] and is deterministic given it.

pub mod config;
pub mod svg;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub use config::RunConfig;

use crate::body;
use crate::conditioning::ConditioningVariant;
use crate::data::{self, Corruption, Family, GeneratorConfig, MotionSequence};
use crate::error::{Error, Result};
use crate::guidance::{GuidanceConfig, GuidanceWeights};
use crate::metrics;
use crate::motionprior::checkpoint;
use crate::motionprior::train::{self, TrainConfig, TrainingSequence};
use crate::motionprior::MotionPrior;
use crate::pipeline::{self, EstimateConfig, EstimateInput, EvalRow};
use crate::scene::{self, FloorConfig, SparsePointCloud};

pub const MANIFEST: &str = "manifest.csv";
const MANIFEST_HEADER: &str = "id,family,frames,split,file";
const GEN_CHUNK: usize = 64;

/// Process exit code for an error: 1 for usage/configuration, 2 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        _ => 2,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub family: String,
    pub frames: usize,
    pub held_out: bool,
    pub file: String,
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == MANIFEST_HEADER => {}
        _ => return Err(Error::parse(&path, 1, format!("expected header '{MANIFEST_HEADER}'"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::parse(&path, i + 1, "expected 5 fields"));
        }
        let held_out = match f[3] {
            "train" => false,
            "test" => true,
            other => return Err(Error::parse(&path, i + 1, format!("unknown split '{other}'"))),
        };
        let frames = f[2].parse().map_err(|_| Error::parse(&path, i + 1, "bad frame count"))?;
        out.push(ManifestEntry { id: f[0].into(), family: f[1].into(), frames, held_out, file: f[4].into() });
    }
    Ok(out)
}

/// Loads the sequences of one split, at most `limit` of them (0 = all).
pub fn load_split(dir: &Path, held_out: bool, limit: usize) -> Result<Vec<MotionSequence>> {
    let entries: Vec<ManifestEntry> = read_manifest(dir)?.into_iter().filter(|e| e.held_out == held_out).collect();
    let take = if limit == 0 { entries.len() } else { limit.min(entries.len()) };
    entries[..take].iter().map(|e| data::load_sequence(&dir.join(&e.file))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSummary {
    pub count: usize,
    pub held_out: usize,
    pub families: BTreeMap<String, usize>,
}

fn parse_families(cfg: &RunConfig) -> Result<Vec<Family>> {
    let fams = cfg.list("gen.families")?.iter().map(|f| f.parse()).collect::<Result<Vec<Family>>>()?;
    if fams.is_empty() {
        return Err(Error::Config("gen.families is empty".into()));
    }
    Ok(fams)
}

fn corruption(cfg: &RunConfig, seed: u64) -> Result<Corruption> {
    Ok(Corruption { depth_scale: cfg.get("hands.depth_scale")?, noise_px: cfg.get("hands.noise_px")?, dropout: cfg.get("hands.dropout")?, seed })
}

/// Generates a synthetic dataset: one `.seq` file per sequence (plus
/// optional `.hands` and `.points` files) and a manifest.
pub fn cmd_gen(cfg: &RunConfig) -> Result<GenSummary> {
    cfg.validate(&["gen.out"])?;
    let out = cfg.path("gen.out")?;
    let count: usize = cfg.get("gen.count")?;
    let gen = GeneratorConfig {
        families: parse_families(cfg)?,
        height_range: (cfg.get("gen.height_min")?, cfg.get("gen.height_max")?),
        arm_range: (cfg.get("gen.arm_min")?, cfg.get("gen.arm_max")?),
        frames_range: (cfg.get("gen.min_frames")?, cfg.get("gen.max_frames")?),
        seed: cfg.get("gen.seed")?,
    };
    gen.validate()?;
    let (hands, points) = (cfg.flag("gen.hands")?, cfg.flag("gen.points")?);
    let corrupt = corruption(cfg, 0)?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let mut manifest = format!("{MANIFEST_HEADER}\n");
    let mut summary = GenSummary { count, held_out: 0, families: BTreeMap::new() };
    for start in (0..count).step_by(GEN_CHUNK) {
        let end = (start + GEN_CHUNK).min(count);
        let seqs: Vec<MotionSequence> = {
            use rayon::prelude::*;
            (start..end).into_par_iter().map(|i| data::generate_one(&gen, i as u64)).collect::<Result<_>>()?
        };
        for (i, seq) in (start..end).zip(&seqs) {
            let file = format!("{}.seq", seq.id);
            data::save_sequence(seq, &out.join(&file))?;
            if hands {
                let c = Corruption { seed: data::derive_seed(gen.seed ^ 0x68616e64, i as u64), ..corrupt };
                data::save_observations(&data::synthesize_hand_observations(seq, &c)?, &out.join(format!("{}.hands", seq.id)))?;
            }
            if points {
                let cloud = data::synthesize_point_cloud(seq, 0.0, data::derive_seed(gen.seed ^ 0x706f696e, i as u64));
                cloud.save(&out.join(format!("{}.points", seq.id)))?;
            }
            let held_out = data::is_held_out(&seq.id);
            let family = seq.family().map(|f| f.name().to_string()).unwrap_or_default();
            *summary.families.entry(family.clone()).or_default() += 1;
            summary.held_out += usize::from(held_out);
            let _ = writeln!(manifest, "{},{family},{},{},{file}", seq.id, seq.len(), if held_out { "test" } else { "train" });
        }
    }
    let path = out.join(MANIFEST);
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

pub fn train_config(cfg: &RunConfig) -> Result<TrainConfig> {
    let c = TrainConfig {
        variant: cfg.get::<ConditioningVariant>("train.variant")?,
        steps: cfg.get("train.steps")?,
        batch_size: cfg.get("train.batch")?,
        learning_rate: cfg.get("train.lr")?,
        crop_min: cfg.get("train.crop_min")?,
        crop_max: cfg.get("train.crop_max")?,
        seed: cfg.get("train.seed")?,
        width: cfg.get("train.width")?,
        heads: cfg.get("train.heads")?,
        ff_hidden: cfg.get("train.ff")?,
        enc_blocks: cfg.get("train.enc_blocks")?,
        dec_blocks: cfg.get("train.dec_blocks")?,
        diffusion_steps: cfg.get("train.diffusion_steps")?,
        grad_clip: cfg.get("train.grad_clip")?,
        ..TrainConfig::default()
    };
    c.validate()?;
    Ok(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub sequences: usize,
    pub losses: Vec<f64>,
    pub checkpoint: PathBuf,
}

impl TrainSummary {
    pub fn initial_loss(&self) -> f64 {
        self.losses.first().copied().unwrap_or(f64::NAN)
    }

    /// Mean of the last tenth of the loss curve.
    pub fn final_loss(&self) -> f64 {
        let k = (self.losses.len() / 10).max(1);
        metrics::mean(&self.losses[self.losses.len().saturating_sub(k)..])
    }
}

fn loss_csv(losses: &[f64]) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(s, "{i},{l:.9e}");
    }
    s
}

fn train_and_save(config: &TrainConfig, sequences: &Vec<TrainingSequence>, out: &Path, loss_path: &Path) -> Result<(MotionPrior, Vec<f64>)> {
    let mut losses = Vec::with_capacity(config.steps);
    let prior = train::train(config, sequences, &mut |_, loss| losses.push(loss))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    checkpoint::save(&prior, out)?;
    std::fs::write(loss_path, loss_csv(&losses)).map_err(|e| Error::io(loss_path, e))?;
    Ok((prior, losses))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Trains a prior on the training split; writes the checkpoint and a
/// `step,loss` CSV.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate(&["train.data", "train.out"])?;
    let config = train_config(cfg)?;
    let out = cfg.path("train.out")?;
    let loss_path = cfg.optional_path("train.loss_csv").unwrap_or_else(|| with_suffix(&out, ".loss.csv"));
    let seqs = load_split(&cfg.path("train.data")?, false, cfg.get("train.max_sequences")?)?;
    if seqs.is_empty() {
        return Err(Error::InsufficientData("dataset has no training sequences".into()));
    }
    let training: Vec<TrainingSequence> = seqs.iter().map(MotionSequence::training_sequence).collect();
    let (_, losses) = train_and_save(&config, &training, &out, &loss_path)?;
    Ok(TrainSummary { sequences: training.len(), losses, checkpoint: out })
}

pub fn guidance_config(cfg: &RunConfig) -> Result<GuidanceConfig> {
    let weights = GuidanceWeights {
        lambda_hands3d: cfg.get("guidance.hands3d")?,
        lambda_reproj: cfg.get("guidance.reproj")?,
        lambda_skate: cfg.get("guidance.skate")?,
        lambda_prior_abs: cfg.get("guidance.prior_abs")?,
        lambda_prior_vel: cfg.get("guidance.prior_vel")?,
        lambda_prior_fk: cfg.get("guidance.prior_fk")?,
    };
    weights.validate().map_err(|e| Error::Config(e.to_string()))?;
    let mut g = GuidanceConfig { weights, final_steps: cfg.get("guidance.final_steps")?, ..GuidanceConfig::default() };
    g.lm.max_iterations = cfg.get("guidance.max_iterations")?;
    Ok(g)
}

fn floor_config(cfg: &RunConfig, seed_key: &str) -> Result<FloorConfig> {
    Ok(FloorConfig {
        tau: cfg.get("floor.tau")?,
        iterations: cfg.get("floor.iterations")?,
        confidence_threshold: cfg.get("floor.confidence")?,
        min_points: cfg.get("floor.min_points")?,
        seed: cfg.get(seed_key)?,
    })
}

/// Reads a CPF trajectory from either a trajectory file or a sequence file.
pub fn load_cpf_input(path: &Path) -> Result<Vec<crate::geometry::PoseSE3>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.starts_with("egokit-sequence") {
        Ok(data::parse_sequence(&text, path)?.cpf_trajectory())
    } else {
        data::parse_trajectory(&text, path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSummary {
    pub frames: usize,
    pub windows: Vec<(usize, usize)>,
    pub floor_z: f64,
    pub guided: bool,
    pub metrics: Option<Vec<metrics::MetricRow>>,
    pub output: PathBuf,
}

/// Estimates a body sequence for a CPF trajectory and writes it as a
/// sequence file; with ground truth, also writes a metrics CSV.
pub fn cmd_estimate(cfg: &RunConfig) -> Result<EstimateSummary> {
    cfg.validate(&["estimate.checkpoint", "estimate.input", "estimate.out"])?;
    let prior = checkpoint::load(&cfg.path("estimate.checkpoint")?)?;
    let cpf = load_cpf_input(&cfg.path("estimate.input")?)?;
    let observations = cfg.optional_path("estimate.observations").map(|p| data::load_observations(&p)).transpose()?;
    let cloud = cfg.optional_path("estimate.points").map(|p| SparsePointCloud::load(&p)).transpose()?;
    let truth = cfg.optional_path("estimate.truth").map(|p| data::load_sequence(&p)).transpose()?;
    if let Some(t) = &truth {
        if t.len() != cpf.len() {
            return Err(Error::ShapeMismatch(format!("ground truth has {} frames, input has {}", t.len(), cpf.len())));
        }
    }
    let config = EstimateConfig {
        ddim_steps: cfg.get("estimate.steps")?,
        seed: cfg.get("estimate.seed")?,
        guidance: guidance_config(cfg)?,
        floor: floor_config(cfg, "estimate.seed")?,
    };
    let input = EstimateInput { cpf: &cpf, observations: observations.as_deref(), point_cloud: cloud.as_ref() };
    let est = pipeline::estimate(&prior, &input, &config)?;
    let out = cfg.path("estimate.out")?;
    data::save_sequence(&est.to_sequence("estimate"), &out)?;
    let metrics = match &truth {
        Some(t) => {
            let rows = pipeline::evaluate(&est, t)?;
            let path = cfg.optional_path("estimate.metrics").unwrap_or_else(|| with_suffix(&out, ".metrics.csv"));
            std::fs::write(&path, metrics::metrics_csv(&rows)).map_err(|e| Error::io(&path, e))?;
            Some(rows)
        }
        None => None,
    };
    Ok(EstimateSummary {
        frames: est.len(),
        windows: est.windows.clone(),
        floor_z: est.floor_z,
        guided: !est.guidance_reports.is_empty(),
        metrics,
        output: out,
    })
}

fn seqlens(cfg: &RunConfig) -> Result<Vec<usize>> {
    cfg.list("eval.seqlens")?.iter().map(|s| s.parse().map_err(|_| Error::Config(format!("eval.seqlens: bad length '{s}'")))).collect()
}

fn eval_prior(cfg: &RunConfig, prior: &MotionPrior, held_out: &[MotionSequence]) -> Result<Vec<EvalRow>> {
    let (steps, seed): (usize, u64) = (cfg.get("eval.steps")?, cfg.get("eval.seed")?);
    seqlens(cfg)?
        .into_iter()
        .map(|len| Ok(pipeline::summarize(prior.variant.name(), len, &pipeline::evaluate_prior(prior, held_out, len, steps, seed)?)))
        .collect()
}

/// Evaluates a checkpoint on the held-out split.
pub fn cmd_eval(cfg: &RunConfig) -> Result<Vec<EvalRow>> {
    cfg.validate(&["eval.checkpoint", "eval.data"])?;
    let prior = checkpoint::load(&cfg.path("eval.checkpoint")?)?;
    let held_out = load_split(&cfg.path("eval.data")?, true, cfg.get("eval.count")?)?;
    let rows = eval_prior(cfg, &prior, &held_out)?;
    if let Some(out) = cfg.optional_path("eval.out") {
        std::fs::write(&out, pipeline::eval_csv(&rows)).map_err(|e| Error::io(&out, e))?;
    }
    Ok(rows)
}

/// Trains one prior per conditioning variant with shared settings and
/// evaluates each on the held-out split; writes `ablation.csv` and
/// `ablation.svg` into `ablate.out`.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<EvalRow>> {
    cfg.validate(&["ablate.data", "ablate.out"])?;
    let variants: Vec<ConditioningVariant> = if cfg.flag("ablate.quick")? {
        vec![ConditioningVariant::EgoAllo, ConditioningVariant::Absolute]
    } else {
        cfg.list("ablate.variants")?.iter().map(|v| v.parse()).collect::<Result<_>>()?
    };
    if variants.is_empty() {
        return Err(Error::Config("no variants to ablate".into()));
    }
    let dir = cfg.path("ablate.data")?;
    let out = cfg.path("ablate.out")?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let base = train_config(cfg)?;
    let train_seqs: Vec<TrainingSequence> =
        load_split(&dir, false, cfg.get("train.max_sequences")?)?.iter().map(MotionSequence::training_sequence).collect();
    if train_seqs.is_empty() {
        return Err(Error::InsufficientData("dataset has no training sequences".into()));
    }
    let held_out = load_split(&dir, true, cfg.get("eval.count")?)?;
    let mut rows = Vec::new();
    for v in variants {
        let config = TrainConfig { variant: v, ..base.clone() };
        let ckpt = out.join(format!("{}.ckpt", v.name()));
        let (prior, _) = train_and_save(&config, &train_seqs, &ckpt, &out.join(format!("{}.loss.csv", v.name())))?;
        rows.extend(eval_prior(cfg, &prior, &held_out)?);
    }
    let csv = out.join("ablation.csv");
    std::fs::write(&csv, pipeline::eval_csv(&rows)).map_err(|e| Error::io(&csv, e))?;
    let bars: Vec<svg::Bar> = rows
        .iter()
        .map(|r| svg::Bar { group: format!("T = {}", r.seqlen), series: r.variant.clone(), value: r.mpjpe, error: r.mpjpe_se })
        .collect();
    let chart = out.join("ablation.svg");
    std::fs::write(&chart, svg::bar_chart("MPJPE by conditioning", "MPJPE (mm)", &bars)).map_err(|e| Error::io(&chart, e))?;
    Ok(rows)
}

pub fn cmd_floor(cfg: &RunConfig) -> Result<scene::FloorEstimate> {
    cfg.validate(&["floor.points"])?;
    let cloud = SparsePointCloud::load(&cfg.path("floor.points")?)?;
    scene::estimate_floor(&cloud, &floor_config(cfg, "floor.seed")?)
}

pub fn cmd_skeleton_dump() -> String {
    let sk = body::skeleton();
    format!("{}# hash {}\n", sk.dump(), sk.hash())
}
