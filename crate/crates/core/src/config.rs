//! Run configuration, resolved-config provenance tags and the artifact
//! manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::AgentConfig;
use crate::env::EnvConfig;
use crate::geometry::{Scene, SceneError};
use crate::mpc::MpcConfig;
use crate::vision::VisionConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unknown builtin scene {0:?}")]
    UnknownScene(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("manifest: {0}")]
    Manifest(String),
}

pub const BUILTIN_PREFIX: &str = "builtin:";
const TEST_ROOM: &str = include_str!("../scenes/test_room.json");
const DEMO_HALL: &str = include_str!("../scenes/demo_hall.json");

/// Bundled scene JSON by name.
pub fn builtin_scene(name: &str) -> Option<&'static str> {
    match name {
        "test_room" => Some(TEST_ROOM),
        "demo_hall" => Some(DEMO_HALL),
        _ => None,
    }
}

/// Loads `builtin:<name>` or a path.
pub fn load_scene(reference: &str) -> Result<Scene, ConfigError> {
    match reference.strip_prefix(BUILTIN_PREFIX) {
        Some(name) => {
            let text = builtin_scene(name).ok_or_else(|| ConfigError::UnknownScene(name.to_string()))?;
            Ok(Scene::from_json_str(text)?)
        }
        None => Ok(Scene::load(reference)?),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectConfig {
    pub images: usize,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self { images: 8000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub trials: usize,
    pub correction_steps: usize,
    /// `|a|_1` above which a correction is recorded.
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { trials: 100, correction_steps: 10_000, threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// `builtin:test_room`, `builtin:demo_hall` or a path to a scene file.
    pub scene: String,
    pub out: PathBuf,
    pub env: EnvConfig,
    pub collect: CollectConfig,
    pub vision: VisionConfig,
    pub agent: AgentConfig,
    pub eval: EvalConfig,
    pub mpc: MpcConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scene: format!("{BUILTIN_PREFIX}test_room"),
            out: PathBuf::from("runs/default"),
            env: EnvConfig::default(),
            collect: CollectConfig::default(),
            vision: VisionConfig::default(),
            agent: AgentConfig::default(),
            eval: EvalConfig::default(),
            mpc: MpcConfig::default(),
        }
    }
}

/// Leaves whose default value is taken from the published system rather
/// than chosen here.
const PUBLISHED_LEAVES: &[&str] = &[
    "env.dt",
    "env.policy_rate_hz",
    "env.collision_margin",
    "env.spawn_clearance",
    "env.max_episode_steps",
    "env.crash_reward",
    "agent.actor_hidden",
    "agent.critic_hidden",
    "agent.total_steps",
    "eval.trials",
    "eval.correction_steps",
    "mpc.g",
    "mpc.plant_dt",
];

impl RunConfig {
    /// Parses a user config and returns it with the raw JSON the user wrote,
    /// which decides the `user` provenance tags.
    pub fn from_json_str(text: &str, path: &Path) -> Result<(Self, Value), ConfigError> {
        let parse = |e: serde_json::Error| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() };
        let raw: Value = serde_json::from_str(text).map_err(parse)?;
        let config: RunConfig = serde_json::from_value(raw.clone()).map_err(parse)?;
        Ok((config, raw))
    }

    pub fn load(path: &Path) -> Result<(Self, Value), ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Every leaf as `{"value": v, "source": "published" | "default" | "user"}`.
    /// `user` wins when the leaf appears in `user`.
    pub fn resolved(&self, user: &Value) -> Value {
        let full = serde_json::to_value(self).expect("config serializes");
        annotate(&full, Some(user), "")
    }
}

fn annotate(value: &Value, user: Option<&Value>, path: &str) -> Value {
    match value {
        Value::Object(map) => {
            let mut out = Map::new();
            for (k, v) in map {
                let child = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                let u = user.and_then(|u| u.get(k));
                out.insert(k.clone(), annotate(v, u, &child));
            }
            Value::Object(out)
        }
        leaf => {
            let source = if user.is_some() {
                "user"
            } else if PUBLISHED_LEAVES.contains(&path) {
                "published"
            } else {
                "default"
            };
            serde_json::json!({ "value": leaf, "source": source })
        }
    }
}

/// Sets `a.b.c` inside a JSON object, creating parents.
pub fn set_path(root: &mut Value, path: &str, value: Value) {
    let mut node = root;
    let mut parts = path.split('.').peekable();
    while let Some(part) = parts.next() {
        if !node.is_object() {
            *node = Value::Object(Map::new());
        }
        let map = node.as_object_mut().expect("object");
        if parts.peek().is_none() {
            map.insert(part.to_string(), value);
            return;
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
}

pub fn sha256_file(path: &Path) -> Result<String, std::io::Error> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Relative artifact paths inside an output directory and their content hashes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: BTreeMap<String, String>,
    /// Hash of the frozen encoder, once vision weights exist.
    pub encoder_hash: Option<String>,
}

impl Manifest {
    pub fn load_or_default(dir: &Path) -> Result<Self, ConfigError> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, dir: &Path) -> Result<(), ConfigError> {
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn record(&mut self, dir: &Path, relative: &str) -> Result<(), ConfigError> {
        self.artifacts.insert(relative.to_string(), sha256_file(&dir.join(relative))?);
        Ok(())
    }

    /// Fails if the file is unlisted or its content no longer matches.
    pub fn verify(&self, dir: &Path, relative: &str) -> Result<(), ConfigError> {
        let expected = self
            .artifacts
            .get(relative)
            .ok_or_else(|| ConfigError::Manifest(format!("{relative} is not listed in {MANIFEST_FILE}")))?;
        let actual = sha256_file(&dir.join(relative))?;
        if &actual != expected {
            return Err(ConfigError::Manifest(format!("{relative} hash {actual} does not match manifest {expected}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let config = RunConfig { seed: 7, ..RunConfig::default() };
        config.save(&path).unwrap();
        let (a, _) = RunConfig::load(&path).unwrap();
        a.save(&path).unwrap();
        let (b, _) = RunConfig::load(&path).unwrap();
        assert_eq!(a, config);
        assert_eq!(a, b);
    }

    #[test]
    fn provenance_tags() {
        let text = r#"{"seed": 3, "agent": {"total_steps": 50000}}"#;
        let (config, raw) = RunConfig::from_json_str(text, Path::new("x.json")).unwrap();
        let r = config.resolved(&raw);
        assert_eq!(r["seed"]["source"], "user");
        assert_eq!(r["seed"]["value"], 3);
        assert_eq!(r["agent"]["total_steps"]["source"], "user");
        assert_eq!(r["agent"]["critic_hidden"]["source"], "published");
        assert_eq!(r["agent"]["critic_hidden"]["value"], serde_json::json!([1024, 1024]));
        assert_eq!(r["mpc"]["w_phi"]["source"], "default");
        assert_eq!(r["env"]["camera"]["width"]["source"], "default");
        for leaf in PUBLISHED_LEAVES.iter().filter(|l| **l != "agent.total_steps") {
            let mut node = &r;
            for part in leaf.split('.') {
                node = &node[part];
            }
            assert_eq!(node["source"], "published", "{leaf}");
        }
    }

    #[test]
    fn unknown_fields_are_rejected_by_type() {
        let text = r#"{"seed": "three"}"#;
        assert!(matches!(RunConfig::from_json_str(text, Path::new("x.json")), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn set_path_creates_parents() {
        let mut v = serde_json::json!({"a": 1});
        set_path(&mut v, "eval.trials", serde_json::json!(5));
        assert_eq!(v["eval"]["trials"], 5);
        assert_eq!(v["a"], 1);
    }

    #[test]
    fn builtin_scenes_load() {
        assert!(load_scene("builtin:test_room").is_ok());
        assert!(load_scene("builtin:demo_hall").is_ok());
        assert!(matches!(load_scene("builtin:nope"), Err(ConfigError::UnknownScene(_))));
    }

    #[test]
    fn manifest_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.bin"), b"abc").unwrap();
        let mut m = Manifest::default();
        m.record(dir.path(), "a.bin").unwrap();
        m.verify(dir.path(), "a.bin").unwrap();
        std::fs::write(dir.path().join("a.bin"), b"abd").unwrap();
        assert!(m.verify(dir.path(), "a.bin").is_err());
        assert!(m.verify(dir.path(), "b.bin").is_err());
    }
}
