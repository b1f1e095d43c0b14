use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use wakeline::engine::{Classifier, Engine, EngineConfig};
use wakeline::metrics::Metrics;
use wakeline::model::Checkpoint;
use wakeline::postprocess::GeoFenceSet;
use wakeline::serve::ServeConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub activity_checkpoint: Option<PathBuf>,
    pub entity_checkpoint: Option<PathBuf>,
    pub geofences: Option<PathBuf>,
    pub workers: usize,
    /// TCP address to accept line streams on; stdin when absent.
    pub listen: Option<String>,
    /// Address of the HTTP metrics endpoint; disabled when absent.
    pub metrics_addr: Option<String>,
    pub engine: EngineConfig,
    pub serve: ServeConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            activity_checkpoint: None,
            entity_checkpoint: None,
            geofences: None,
            workers: 1,
            listen: None,
            metrics_addr: None,
            engine: EngineConfig::default(),
            serve: ServeConfig::default(),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Set a dotted `path` such as `engine.cpd.sog_window_k` in `table`.
pub fn apply_override(table: &mut toml::Table, path: &str, raw: &str) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("bad override key `{path}`");
    }
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().with_context(|| format!("`{k}` in `{path}` is not a table"))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), parse_value(raw));
    Ok(())
}

impl ServiceConfig {
    /// Read the optional config file, then apply `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => std::fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))?
                .parse::<toml::Table>()
                .with_context(|| format!("parsing {}", p.display()))?,
            None => toml::Table::new(),
        };
        for o in overrides {
            let (k, v) = o.split_once('=').with_context(|| format!("override `{o}` is not key=value"))?;
            apply_override(&mut table, k.trim(), v.trim())?;
        }
        let cfg: Self = toml::Value::Table(table).try_into().context("invalid configuration")?;
        if cfg.workers == 0 {
            bail!("workers must be at least 1");
        }
        cfg.engine.validate()?;
        Ok(cfg)
    }

    /// One engine per worker, sharing models and metrics.
    pub fn build_engines(&self) -> Result<Vec<Engine>> {
        let path = self.activity_checkpoint.as_ref().context("an activity checkpoint is required")?;
        let activity = Arc::new(Classifier::new(
            Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?,
        ));
        let entity = match &self.entity_checkpoint {
            Some(p) => Some(Arc::new(Classifier::new(
                Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?,
            ))),
            None => None,
        };
        let mut engine_cfg = self.engine.clone();
        if let Some(p) = &self.geofences {
            engine_cfg.postprocess.geofences = GeoFenceSet::load(p).with_context(|| format!("loading {}", p.display()))?;
        }
        let metrics: Arc<Metrics> = engine_cfg.new_metrics();
        (0..self.workers)
            .map(|_| Ok(Engine::new(engine_cfg.clone(), activity.clone(), entity.clone(), metrics.clone())?))
            .collect()
    }
}
