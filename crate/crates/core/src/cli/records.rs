use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::ConfigError;

pub const RESULTS_FILE: &str = "results.jsonl";

/// Everything needed to re-execute a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub run_id: String,
    pub subcommand: String,
    pub argv: Vec<String>,
    pub params: Value,
    pub seed: u64,
    pub corpus_digest: Option<String>,
    pub version: String,
}

impl RunConfig {
    pub fn new(subcommand: &str, argv: Vec<String>, params: Value, seed: u64, corpus_digest: Option<String>) -> Self {
        let mut h = Sha256::new();
        h.update(subcommand.as_bytes());
        h.update(params.to_string().as_bytes());
        h.update(seed.to_le_bytes());
        h.update(corpus_digest.as_deref().unwrap_or("").as_bytes());
        let run_id = hex::encode(h.finalize())[..16].to_string();
        RunConfig {
            run_id,
            subcommand: subcommand.to_string(),
            argv,
            params,
            seed,
            corpus_digest,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    /// Write `run-<subcommand>-<run_id>.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(format!("run-{}-{}.json", self.subcommand, self.run_id));
        fs::write(&path, serde_json::to_string_pretty(self)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn record(&self, params: Value, metric: &str, value: f64) -> ResultRecord {
        ResultRecord {
            run_id: self.run_id.clone(),
            subcommand: self.subcommand.clone(),
            params,
            metric: metric.to_string(),
            value,
            seed: self.seed,
            corpus_digest: self.corpus_digest.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub run_id: String,
    pub subcommand: String,
    pub params: Value,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
    pub corpus_digest: Option<String>,
}

pub fn append_records(dir: &Path, records: &[ResultRecord]) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(RESULTS_FILE);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .with_context(|| format!("opening {}", path.display()))?;
    for r in records {
        writeln!(f, "{}", serde_json::to_string(r)?)?;
        println!("{}\t{}\t{}", r.subcommand, r.metric, r.value);
    }
    Ok(path)
}

pub fn read_records(path: &Path) -> Result<Vec<ResultRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).with_context(|| format!("{}:{}: malformed record", path.display(), i + 1))
        })
        .collect()
}

/// Optional sections of a `--config` TOML file.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<toml::Table>,
    pub pretrain: Option<toml::Table>,
    pub synth: Option<toml::Table>,
    pub probe: Option<toml::Table>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", p.display())).into())
            }
        }
    }
}

/// Replace fields of `base` by the keys present in `table`.
pub fn overlay<T: Serialize + DeserializeOwned>(base: T, table: Option<&toml::Table>, section: &str) -> Result<T> {
    let Some(table) = table else { return Ok(base) };
    let mut merged = toml::Table::try_from(&base).context("serializing defaults")?;
    for (k, v) in table {
        merged.insert(k.clone(), v.clone());
    }
    toml::Value::Table(merged)
        .try_into()
        .map_err(|e| ConfigError(format!("[{section}]: {e}")).into())
}
