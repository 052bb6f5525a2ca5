//! Output-directory layout, per-directory `meta.json`, and the run log.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Profile};
use crate::CliError;

pub const META_FILE: &str = "meta.json";
pub const RUN_LOG: &str = "run_log.jsonl";
pub const CACHE_ENV: &str = "ARGAN_CACHE_DIR";

/// Artifact directories under the output root.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactDir {
    Data,
    Classifiers,
    Framework,
    Attacks,
    Evaluation,
    Sweep,
    Report,
}

impl ArtifactDir {
    pub const ALL: [ArtifactDir; 7] = [
        ArtifactDir::Data,
        ArtifactDir::Classifiers,
        ArtifactDir::Framework,
        ArtifactDir::Attacks,
        ArtifactDir::Evaluation,
        ArtifactDir::Sweep,
        ArtifactDir::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArtifactDir::Data => "data",
            ArtifactDir::Classifiers => "classifiers",
            ArtifactDir::Framework => "framework",
            ArtifactDir::Attacks => "attacks",
            ArtifactDir::Evaluation => "evaluation",
            ArtifactDir::Sweep => "sweep",
            ArtifactDir::Report => "report",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
    pub cache: PathBuf,
}

impl Layout {
    /// The cache lives under the output root unless `ARGAN_CACHE_DIR` is set.
    pub fn new(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        let cache = match std::env::var_os(CACHE_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => root.join("cache"),
        };
        Layout { root, cache }
    }

    pub fn dir(&self, d: ArtifactDir) -> PathBuf {
        self.root.join(d.name())
    }

    pub fn file(&self, d: ArtifactDir, name: &str) -> PathBuf {
        self.dir(d).join(name)
    }
}

/// Contents of `<dir>/meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub config_hash: String,
    pub profile: Profile,
    pub seed: u64,
    pub tool_version: String,
    /// Subcommands that finished against this hash, in completion order.
    pub completed: Vec<String>,
    /// File name relative to the directory → sha256.
    pub files: BTreeMap<String, String>,
    pub updated_at: f64,
    #[serde(default)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

pub fn now_secs() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Stage(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn read_meta(dir: &Path) -> Result<Option<Meta>, CliError> {
    let path = dir.join(META_FILE);
    if !path.is_file() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Stage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| CliError::Stage(format!("malformed {}: {e}", path.display())))
}

/// Whether `step` already ran against `hash` and its files are intact.
pub fn is_done(dir: &Path, hash: &str, step: &str) -> Result<bool, CliError> {
    let Some(meta) = read_meta(dir)? else {
        return Ok(false);
    };
    if meta.config_hash != hash || !meta.completed.iter().any(|s| s == step) {
        return Ok(false);
    }
    for (name, sha) in &meta.files {
        match file_sha256(&dir.join(name)) {
            Ok(s) if &s == sha => {}
            _ => return Ok(false),
        }
    }
    Ok(true)
}

/// Marks `step` complete in `dir`, hashing `files` (relative names). A meta
/// file written under another config hash is replaced.
pub fn record_step(
    dir: &Path,
    cfg: &ExperimentConfig,
    step: &str,
    files: &[String],
    extra: serde_json::Map<String, serde_json::Value>,
) -> Result<Meta, CliError> {
    let hash = cfg.hash();
    let mut meta = match read_meta(dir)? {
        Some(m) if m.config_hash == hash => m,
        _ => Meta {
            config_hash: hash,
            profile: cfg.profile,
            seed: cfg.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            completed: Vec::new(),
            files: BTreeMap::new(),
            updated_at: 0.0,
            extra: serde_json::Map::new(),
        },
    };
    meta.completed.retain(|s| s != step);
    meta.completed.push(step.to_string());
    for f in files {
        meta.files.insert(f.clone(), file_sha256(&dir.join(f))?);
    }
    meta.extra.extend(extra);
    meta.updated_at = now_secs();
    write_json(&dir.join(META_FILE), &meta)?;
    Ok(meta)
}

/// Fails with the artifact's path unless `step` completed in `dir` under
/// `hash`.
pub fn require(layout: &Layout, d: ArtifactDir, hash: &str, step: &str, artifact: &str) -> Result<(), CliError> {
    let dir = layout.dir(d);
    let path = dir.join(artifact);
    let meta = read_meta(&dir)?;
    match meta {
        Some(m) if m.completed.iter().any(|s| s == step) && path.exists() => {
            if m.config_hash != hash {
                return Err(CliError::Stage(format!(
                    "artifact {} was produced by config {} but the current config is {}; rerun `{step}`",
                    path.display(),
                    short(&m.config_hash),
                    short(hash)
                )));
            }
            Ok(())
        }
        _ => Err(CliError::MissingArtifact(format!("{} (run `{step}` first)", path.display()))),
    }
}

pub fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(|e| CliError::Stage(format!("{}: {e}", p.display())))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Stage(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Stage(format!("{}: {e}", path.display())))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| CliError::MissingArtifact(path.display().to_string()))?;
    serde_json::from_str(&text).map_err(|e| CliError::Stage(format!("malformed {}: {e}", path.display())))
}

/// Append-only JSON-lines log shared by every subcommand.
pub struct RunLog {
    path: PathBuf,
}

impl RunLog {
    pub fn new(root: &Path) -> Self {
        RunLog { path: root.join(RUN_LOG) }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Write failures are reported on stderr and otherwise ignored so that
    /// logging never masks the stage outcome.
    pub fn event(&self, event: &str, subcommand: &str, fields: serde_json::Value) {
        let mut rec = serde_json::Map::new();
        rec.insert("ts".into(), serde_json::json!(now_secs()));
        rec.insert("event".into(), serde_json::json!(event));
        rec.insert("subcommand".into(), serde_json::json!(subcommand));
        if let serde_json::Value::Object(m) = fields {
            rec.extend(m);
        }
        let line = serde_json::Value::Object(rec).to_string();
        let res = self
            .path
            .parent()
            .map_or(Ok(()), std::fs::create_dir_all)
            .and_then(|_| OpenOptions::new().create(true).append(true).open(&self.path))
            .and_then(|mut f| writeln!(f, "{line}"));
        if let Err(e) = res {
            eprintln!("warning: cannot write run log {}: {e}", self.path.display());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_are_done_only_under_the_same_hash_with_intact_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::preset(Profile::Desk);
        std::fs::write(dir.path().join("a.txt"), b"one").unwrap();
        assert!(!is_done(dir.path(), &cfg.hash(), "ingest").unwrap());
        record_step(dir.path(), &cfg, "ingest", &["a.txt".into()], Default::default()).unwrap();
        assert!(is_done(dir.path(), &cfg.hash(), "ingest").unwrap());
        assert!(!is_done(dir.path(), &cfg.hash(), "attack").unwrap());
        assert!(!is_done(dir.path(), "other", "ingest").unwrap());
        std::fs::write(dir.path().join("a.txt"), b"two").unwrap();
        assert!(!is_done(dir.path(), &cfg.hash(), "ingest").unwrap());

        // a new hash resets the completed list
        let other = ExperimentConfig { seed: 9, ..cfg.clone() };
        let m = record_step(dir.path(), &other, "attack", &[], Default::default()).unwrap();
        assert_eq!(m.completed, ["attack"]);
        assert!(m.files.is_empty());
    }

    #[test]
    fn require_names_the_missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout {
            root: dir.path().into(),
            cache: dir.path().join("cache"),
        };
        let err = require(&layout, ArtifactDir::Evaluation, "h", "evaluate", "evaluation.json").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("evaluation.json") && msg.contains("evaluate"), "{msg}");
        assert!(matches!(err, CliError::MissingArtifact(_)));
    }

    #[test]
    fn run_log_appends_json_lines() {
        let dir = tempfile::tempdir().unwrap();
        let log = RunLog::new(dir.path());
        log.event("start", "ingest", serde_json::json!({"config_hash": "x"}));
        log.event("finish", "ingest", serde_json::json!({}));
        let text = std::fs::read_to_string(log.path()).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["event"], "start");
        assert_eq!(lines[0]["config_hash"], "x");
    }
}
