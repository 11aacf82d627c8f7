//! Command implementations behind the `navguard` binary. Each command reads
//! a resolved [`RunConfig`], writes its artifacts into the output directory,
//! records them in the manifest and returns a metrics JSON value that
//! depends only on (config, seed).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::agent::{correction_field, evaluate_survival, train, Actor, AgentError, PolicyCheckpoint};
use crate::config::{load_scene, set_path, ConfigError, Manifest, RunConfig};
use crate::env::{EnvError, FrameEncoder, NavEnv, Pose, VelocityCommand};
use crate::geometry::Scene;
use crate::mpc::mpc_bench;
use crate::render::{render_frame, RenderError};
use crate::vision::{collect_dataset, train_autoencoder, VisionDataset, VisionEncoder, VisionError, VisionWeights};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";
pub const DATASET_FILE: &str = "dataset.vds";
pub const VISION_WEIGHTS_FILE: &str = "vision_weights.json";
pub const VISION_LOG_FILE: &str = "vision_train.jsonl";
pub const POLICY_FILE: &str = "policy.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const SURVIVAL_FILE: &str = "survival.json";
pub const CORRECTIONS_FILE: &str = "corrections.json";
pub const MPC_BENCH_FILE: &str = "mpc_bench.json";

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: config, scene, missing or mismatched artifacts.
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::Config(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<VisionError> for CliError {
    fn from(e: VisionError) -> Self {
        match e {
            VisionError::TooSmall { .. }
            | VisionError::Resolution { .. }
            | VisionError::BadResolution(..)
            | VisionError::Format(_)
            | VisionError::Split(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<AgentError> for CliError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Config(_) | AgentError::Checkpoint(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<RenderError> for CliError {
    fn from(e: RenderError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Command-line values layered over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub trials: Option<usize>,
    pub steps: Option<usize>,
    pub threshold: Option<f64>,
}

/// Which config leaf `--steps` sets for a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepsTarget {
    None,
    CollectImages,
    TrainSteps,
    CorrectionSteps,
}

impl StepsTarget {
    fn path(self) -> Option<&'static str> {
        match self {
            StepsTarget::None => None,
            StepsTarget::CollectImages => Some("collect.images"),
            StepsTarget::TrainSteps => Some("agent.total_steps"),
            StepsTarget::CorrectionSteps => Some("eval.correction_steps"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub out: PathBuf,
}

/// Loads the config, applies overrides, propagates the run seed into stage
/// seeds the user did not pin, and writes `resolved_config.json`.
pub fn prepare(config_path: Option<&Path>, overrides: &Overrides, steps: StepsTarget) -> Result<Run, CliError> {
    let mut raw = match config_path {
        Some(p) => RunConfig::load(p)?.1,
        None => json!({}),
    };
    if let Some(seed) = overrides.seed {
        set_path(&mut raw, "seed", json!(seed));
    }
    if let Some(out) = &overrides.out {
        set_path(&mut raw, "out", json!(out));
    }
    if let Some(trials) = overrides.trials {
        set_path(&mut raw, "eval.trials", json!(trials));
    }
    if let Some(threshold) = overrides.threshold {
        set_path(&mut raw, "eval.threshold", json!(threshold));
    }
    if let (Some(n), Some(path)) = (overrides.steps, steps.path()) {
        set_path(&mut raw, path, json!(n));
    }
    let mut config: RunConfig = serde_json::from_value(raw.clone()).map_err(|e| CliError::Validation(format!("config: {e}")))?;
    if raw.pointer("/vision/seed").is_none() {
        config.vision.seed = config.seed;
    }
    if raw.pointer("/agent/seed").is_none() {
        config.agent.seed = config.seed;
    }
    config.env.validate()?;
    config.agent.validate()?;
    config.mpc.validate().map_err(|e| CliError::Validation(e.to_string()))?;

    let out = config.out.clone();
    std::fs::create_dir_all(&out)?;
    let resolved = config.resolved(&raw);
    std::fs::write(out.join(RESOLVED_CONFIG_FILE), serde_json::to_string_pretty(&resolved)?)?;
    Ok(Run { config, out })
}

/// Canonical metrics text: pretty JSON with a trailing newline.
pub fn metrics_text(metrics: &Value) -> String {
    let mut s = serde_json::to_string_pretty(metrics).expect("metrics serialize");
    s.push('\n');
    s
}

pub fn metrics_file(command: &str) -> String {
    format!("{command}_metrics.json")
}

fn finish(run: &Run, command: &str, artifacts: &[&str], metrics: Value) -> Result<Value, CliError> {
    std::fs::write(run.out.join(metrics_file(command)), metrics_text(&metrics))?;
    let mut manifest = Manifest::load_or_default(&run.out)?;
    for a in artifacts {
        manifest.record(&run.out, a)?;
    }
    if let Some(h) = metrics.get("encoder_hash").and_then(Value::as_str) {
        manifest.encoder_hash = Some(h.to_string());
    }
    manifest.save(&run.out)?;
    Ok(metrics)
}

fn require(run: &Run, relative: &str, producer: &str) -> Result<PathBuf, CliError> {
    let path = run.out.join(relative);
    if !path.exists() {
        return Err(CliError::Validation(format!(
            "missing {}; run `navguard {producer}` first",
            path.display()
        )));
    }
    Ok(path)
}

fn scene(run: &Run) -> Result<Arc<Scene>, CliError> {
    Ok(Arc::new(load_scene(&run.config.scene)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneReport {
    pub obstacles: usize,
    pub bounds: [f64; 4],
    pub max_range: f64,
    pub free_space_fraction: f64,
    pub samples: usize,
}

pub const FREE_SPACE_SAMPLES: usize = 100_000;

/// Loads and checks a scene (`builtin:<name>` or a path).
pub fn cmd_scene_validate(reference: &str, seed: u64) -> Result<SceneReport, CliError> {
    let scene = load_scene(reference)?;
    let b = scene.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(SceneReport {
        obstacles: scene.obstacles().len(),
        bounds: [b.min.x, b.min.y, b.max.x, b.max.y],
        max_range: scene.max_range(),
        free_space_fraction: scene.free_space_fraction(FREE_SPACE_SAMPLES, &mut rng),
        samples: FREE_SPACE_SAMPLES,
    })
}

pub fn cmd_collect(run: &Run) -> Result<Value, CliError> {
    let c = &run.config;
    let mut env = NavEnv::new(scene(run)?, c.env.clone(), None, c.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed ^ 0xc011_ec7);
    let dataset = collect_dataset(&mut env, c.collect.images, &mut rng)?;
    dataset.save(&run.out.join(DATASET_FILE))?;
    let metrics = json!({
        "command": "collect",
        "seed": c.seed,
        "images": dataset.len(),
        "width": dataset.width,
        "height": dataset.height,
        "dataset_sha256": crate::config::sha256_file(&run.out.join(DATASET_FILE))?,
    });
    finish(run, "collect", &[DATASET_FILE], metrics)
}

pub fn cmd_train_vision(run: &Run) -> Result<Value, CliError> {
    let c = &run.config;
    let dataset = VisionDataset::load(&require(run, DATASET_FILE, "collect")?)?;
    if (dataset.width, dataset.height) != (c.env.camera.width, c.env.camera.height) {
        return Err(CliError::Validation(format!(
            "dataset is {}x{}, camera is {}x{}",
            dataset.width, dataset.height, c.env.camera.width, c.env.camera.height
        )));
    }
    let d_max = scene(run)?.max_range();
    let (model, report) = train_autoencoder(&dataset, &c.vision, d_max)?;
    let weights = VisionWeights::from_model(&model, c.vision.d_min, d_max);
    weights.save(&run.out.join(VISION_WEIGHTS_FILE))?;
    report.write_jsonl(std::fs::File::create(run.out.join(VISION_LOG_FILE))?)?;
    let last = report.last().expect("at least one epoch");
    let metrics = json!({
        "command": "train-vision",
        "seed": c.vision.seed,
        "images": dataset.len(),
        "epochs": report.epochs.len(),
        "baseline_mse": report.baseline_mse,
        "train_mse": last.train_mse,
        "test_mse": last.test_mse,
        "baseline_over_train": report.baseline_mse / last.train_mse,
        "test_over_train": last.test_mse / last.train_mse,
        "encoder_hash": weights.encoder_hash(),
    });
    finish(run, "train-vision", &[VISION_WEIGHTS_FILE, VISION_LOG_FILE], metrics)
}

fn load_encoder(run: &Run, producer: &str) -> Result<VisionEncoder, CliError> {
    let weights = VisionWeights::load(&require(run, VISION_WEIGHTS_FILE, producer)?)?;
    let encoder = VisionEncoder::from_weights(&weights)?;
    let cam = run.config.env.camera;
    if encoder.resolution() != (cam.width, cam.height) {
        let (w, h) = encoder.resolution();
        return Err(CliError::Validation(format!("encoder expects {w}x{h}, camera is {}x{}", cam.width, cam.height)));
    }
    Ok(encoder)
}

fn encoded_env(run: &Run, encoder: VisionEncoder, seed: u64) -> Result<NavEnv, CliError> {
    let encoder: Arc<dyn FrameEncoder> = Arc::new(encoder);
    Ok(NavEnv::new(scene(run)?, run.config.env.clone(), Some(encoder), seed)?)
}

pub fn cmd_train_policy(run: &Run) -> Result<Value, CliError> {
    let c = &run.config;
    let encoder = load_encoder(run, "train-vision")?;
    let hash = encoder.hash().to_string();
    let mut env = encoded_env(run, encoder, c.seed)?;
    let (agent, log) = train(&mut env, c.agent.clone())?;
    PolicyCheckpoint::new(&agent, c.agent.total_steps, Some(hash.clone())).save(&run.out.join(POLICY_FILE))?;
    log.write_jsonl(std::fs::File::create(run.out.join(TRAIN_LOG_FILE))?)?;
    let tail: Vec<_> = log.episodes.iter().rev().take(20).collect();
    let tail_return = tail.iter().map(|e| e.episode_return).sum::<f64>() / tail.len().max(1) as f64;
    let tail_length = tail.iter().map(|e| e.length as f64).sum::<f64>() / tail.len().max(1) as f64;
    let last = log.episodes.iter().rev().find(|e| e.critic_loss.is_some());
    let metrics = json!({
        "command": "train-policy",
        "seed": c.agent.seed,
        "steps": c.agent.total_steps,
        "updates": log.updates,
        "episodes": log.episodes.len(),
        "collisions": log.episodes.iter().filter(|e| e.collided).count(),
        "last20_mean_return": tail_return,
        "last20_mean_length": tail_length,
        "critic_loss": last.and_then(|e| e.critic_loss),
        "actor_loss": last.and_then(|e| e.actor_loss),
        "alpha": agent.alpha(),
        "evals": log.evals,
        "encoder_hash": hash,
        "config_hash": c.agent.hash(),
    });
    finish(run, "train-policy", &[POLICY_FILE, TRAIN_LOG_FILE], metrics)
}

/// Encoder and actor, checked against the manifest and against each other.
pub fn load_policy(run: &Run) -> Result<(VisionEncoder, Actor), CliError> {
    let manifest = Manifest::load_or_default(&run.out)?;
    require(run, POLICY_FILE, "train-policy")?;
    manifest.verify(&run.out, VISION_WEIGHTS_FILE)?;
    manifest.verify(&run.out, POLICY_FILE)?;
    let encoder = load_encoder(run, "train-vision")?;
    let ckpt = PolicyCheckpoint::load(&run.out.join(POLICY_FILE))?;
    if ckpt.meta.encoder_hash.as_deref() != Some(encoder.hash()) {
        return Err(CliError::Validation(format!(
            "policy was trained against encoder {:?}, found {}",
            ckpt.meta.encoder_hash,
            encoder.hash()
        )));
    }
    Ok((encoder, ckpt.actor()?))
}

pub fn cmd_eval_survival(run: &Run) -> Result<Value, CliError> {
    let c = &run.config;
    let (encoder, actor) = load_policy(run)?;
    let mut env = encoded_env(run, encoder, c.seed)?;
    let report = evaluate_survival(&actor, &mut env, c.eval.trials, VelocityCommand::FULL_FORWARD, c.seed)?;
    std::fs::write(run.out.join(SURVIVAL_FILE), serde_json::to_string_pretty(&report)?)?;
    let mut metrics = serde_json::to_value(&report)?;
    let m = metrics.as_object_mut().expect("object");
    m.insert("command".into(), json!("eval-survival"));
    m.insert("seed".into(), json!(c.seed));
    m.insert("ratio".into(), json!(report.mean_policy / report.mean_baseline));
    finish(run, "eval-survival", &[SURVIVAL_FILE], metrics)
}

pub fn cmd_correction_field(run: &Run) -> Result<Value, CliError> {
    let c = &run.config;
    let (encoder, actor) = load_policy(run)?;
    let mut env = encoded_env(run, encoder, c.seed)?;
    let field = correction_field(&actor, &mut env, c.eval.correction_steps, c.eval.threshold, c.seed)?;
    std::fs::write(run.out.join(CORRECTIONS_FILE), serde_json::to_string(&field.points)?)?;
    let metrics = json!({
        "command": "correction-field",
        "seed": c.seed,
        "steps": field.steps,
        "threshold": field.threshold,
        "recorded": field.points.len(),
        "near_radius": field.near_radius,
        "near_fraction": field.near_fraction,
    });
    finish(run, "correction-field", &[CORRECTIONS_FILE], metrics)
}

pub fn cmd_mpc_bench(run: &Run) -> Result<Value, CliError> {
    let report = mpc_bench(&run.config.mpc);
    std::fs::write(run.out.join(MPC_BENCH_FILE), serde_json::to_string_pretty(&report)?)?;
    let mut metrics = serde_json::to_value(&report)?;
    let m = metrics.as_object_mut().expect("object");
    m.insert("command".into(), json!("mpc-bench"));
    m.insert("all_pass".into(), json!(report.all_pass()));
    finish(run, "mpc-bench", &[MPC_BENCH_FILE], metrics)
}

/// Writes `depth.pgm` and `rgb.ppm` seen from `pose`.
pub fn cmd_render(run: &Run, pose: Pose) -> Result<Value, CliError> {
    let c = &run.config;
    let scene = scene(run)?;
    let frame = render_frame(&scene, &pose, &c.env.camera)?;
    frame.depth.write_pnm(run.out.join("depth.pgm"), 1.0 / scene.max_range() as f32)?;
    frame.rgb.write_pnm(run.out.join("rgb.ppm"), 1.0)?;
    let metrics = json!({
        "command": "render",
        "pose": pose,
        "clearance": scene.point_clearance(&pose.position()),
        "min_depth": frame.depth.data.iter().copied().fold(f32::INFINITY, f32::min),
    });
    finish(run, "render", &["depth.pgm", "rgb.ppm"], metrics)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_run(dir: &Path) -> Run {
        let config = json!({
            "out": dir,
            "collect": {"images": 40},
            "vision": {"epochs": 1, "batch_size": 8},
            "agent": {"actor_hidden": [16, 16], "critic_hidden": [32, 32], "batch_size": 8,
                      "warmup_steps": 20, "total_steps": 60, "buffer_capacity": 1000},
            "eval": {"trials": 2, "correction_steps": 30},
            "env": {"camera": {"width": 32, "height": 32}}
        });
        let path = dir.join("config.json");
        std::fs::write(&path, config.to_string()).unwrap();
        prepare(Some(&path), &Overrides::default(), StepsTarget::None).unwrap()
    }

    #[test]
    fn missing_encoder_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let run = tiny_run(dir.path());
        let err = cmd_train_policy(&run).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains(VISION_WEIGHTS_FILE));
    }

    #[test]
    fn overrides_land_in_resolved_config() {
        let dir = tempfile::tempdir().unwrap();
        let o = Overrides { seed: Some(9), out: Some(dir.path().into()), steps: Some(123), ..Overrides::default() };
        let run = prepare(None, &o, StepsTarget::TrainSteps).unwrap();
        assert_eq!(run.config.agent.total_steps, 123);
        assert_eq!(run.config.agent.seed, 9);
        let r: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join(RESOLVED_CONFIG_FILE)).unwrap()).unwrap();
        assert_eq!(r["agent"]["total_steps"]["source"], "user");
        assert_eq!(r["agent"]["total_steps"]["value"], 123);
        assert_eq!(r["agent"]["critic_hidden"]["source"], "published");
    }

    #[test]
    fn invalid_config_value_exits_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"agent": {"batch_size": 1}}"#).unwrap();
        let o = Overrides { out: Some(dir.path().into()), ..Overrides::default() };
        assert_eq!(prepare(Some(&path), &o, StepsTarget::None).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn scene_validate_reports() {
        let r = cmd_scene_validate("builtin:test_room", 0).unwrap();
        assert_eq!(r.obstacles, 4);
        assert!(r.free_space_fraction > 0.5 && r.free_space_fraction < 1.0);
        assert_eq!(cmd_scene_validate("builtin:none", 0).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn tiny_pipeline_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let run = tiny_run(dir.path());
        cmd_collect(&run).unwrap();
        let v = cmd_train_vision(&run).unwrap();
        assert!(v["train_mse"].as_f64().unwrap().is_finite());
        cmd_train_policy(&run).unwrap();
        let s = cmd_eval_survival(&run).unwrap();
        assert!(s.get("mean_policy").is_some() && s.get("mean_baseline").is_some());
        cmd_correction_field(&run).unwrap();
        let manifest = Manifest::load_or_default(&run.out).unwrap();
        assert!(manifest.encoder_hash.is_some());
        assert!(manifest.artifacts.contains_key(POLICY_FILE));

        // tampering with the policy breaks the manifest check
        let mut text = std::fs::read_to_string(run.out.join(POLICY_FILE)).unwrap();
        text.push(' ');
        std::fs::write(run.out.join(POLICY_FILE), text).unwrap();
        assert_eq!(cmd_eval_survival(&run).unwrap_err().exit_code(), 1);
    }
}
