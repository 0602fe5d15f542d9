//! The TOML configuration file behind every subcommand.
//!
//! Resolution order, later wins: built-in defaults, the `--config` file,
//! `LIFORGE_<SECTION>__<KEY>` environment variables, `--set key=value`
//! flags, then the typed per-subcommand flags. Unknown keys are rejected at
//! every level.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::eval::bm25::Bm25Params;
use crate::eval::metrics::{parse_metrics, Gain, MetricSpec};
use crate::harness::{AblationCell, SynthSpec};
use crate::training::{MixSpec, TrainConfig};

pub const ENV_PREFIX: &str = "LIFORGE_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainName {
    #[default]
    Linear,
    Exponential,
}

impl From<GainName> for Gain {
    fn from(g: GainName) -> Self {
        match g {
            GainName::Linear => Gain::Linear,
            GainName::Exponential => Gain::Exponential,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub metrics: Vec<String>,
    pub gain: GainName,
    /// Search depth for `search` when `-k` is not given.
    pub depth: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            metrics: ["ndcg@10", "mrr@10", "recall@100", "map@100", "hit_rate@10"]
                .map(String::from)
                .to_vec(),
            gain: GainName::Linear,
            depth: 100,
        }
    }
}

impl EvalSection {
    pub fn specs(&self) -> Result<Vec<MetricSpec>> {
        parse_metrics(&self.metrics.join(","))
    }
}

/// Grid for `ablate`. Each cell is a table of `[train]` overrides plus a
/// `name`; every cell runs once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    pub seeds: Vec<u64>,
    pub metrics: Vec<String>,
    pub cells: Vec<Table>,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            seeds: vec![0],
            metrics: vec!["ndcg@10".into(), "mrr@10".into(), "recall@10".into()],
            cells: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub synth: SynthSpec,
    pub train: TrainConfig,
    pub bm25: Bm25Params,
    pub eval: EvalSection,
    pub ablate: AblateSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mix: Option<MixSpec>,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            synth: SynthSpec::default(),
            train: TrainConfig::desk_scale(),
            bm25: Bm25Params::default(),
            eval: EvalSection::default(),
            ablate: AblateSection::default(),
            mix: None,
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Parses a scalar written on the command line or in the environment:
/// anything TOML accepts as a value, otherwise a bare string.
pub fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Sets `path` (dot-separated) inside `table`, creating sub-tables.
pub fn set_path(table: &mut Table, path: &[&str], value: Value) -> Result<()> {
    let (last, parents) = path
        .split_last()
        .filter(|(l, _)| !l.is_empty())
        .ok_or_else(|| config_err("empty override key"))?;
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("override path {} crosses non-table key {p}", path.join("."))))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn merge(base: &mut Table, over: &Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// Environment overrides: `LIFORGE_TRAIN__OPTIM__LR=0.01` sets `train.optim.lr`.
/// Variables without a `__` separator (such as `LIFORGE_THREADS`) are flags,
/// not config keys, and are ignored here.
pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Result<Table> {
    let mut table = Table::new();
    let mut vars: Vec<(String, String)> = vars
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX) && k.contains("__"))
        .collect();
    vars.sort();
    for (key, raw) in vars {
        let path = key[ENV_PREFIX.len()..].to_ascii_lowercase();
        let parts: Vec<&str> = path.split("__").collect();
        set_path(&mut table, &parts, parse_value(&raw))?;
    }
    Ok(table)
}

/// `key.path=value` overrides from `--set`.
pub fn set_overrides(items: &[String]) -> Result<Table> {
    let mut table = Table::new();
    for item in items {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| config_err(format!("--set expects key=value, got {item:?}")))?;
        let parts: Vec<&str> = key.trim().split('.').collect();
        set_path(&mut table, &parts, parse_value(raw.trim()))?;
    }
    Ok(table)
}

impl CliConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e| config_err(format!("{e}")))?;
        Self::from_table(table)
    }

    pub fn from_table(table: Table) -> Result<Self> {
        let config: CliConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| config_err(e.message().to_string()))?;
        Ok(config)
    }

    /// [`CliConfig::default`], then `file`, then each override table in order.
    /// Sections are merged key by key, so a partial `[train]` keeps the
    /// desk-scale values it does not mention.
    pub fn resolve(file: Option<&Path>, overrides: &[Table]) -> Result<Self> {
        let mut table = match Value::try_from(Self::default()).map_err(|e| config_err(e.to_string()))? {
            Value::Table(t) => t,
            _ => unreachable!("CliConfig serializes to a table"),
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let parsed = text
                .parse::<Table>()
                .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            merge(&mut table, &parsed);
        }
        for over in overrides {
            merge(&mut table, over);
        }
        Self::from_table(table)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        self.eval.specs()?;
        self.ablation_grid()?;
        if let Some(mix) = &self.mix {
            mix.validate()?;
        }
        Ok(())
    }

    /// Expands `[ablate]` into concrete cells, one per (cell, seed). With no
    /// cells listed, the `[train]` recipe is the only cell.
    pub fn ablation_grid(&self) -> Result<Vec<AblationCell>> {
        let base = match Value::try_from(&self.train).map_err(|e| config_err(e.to_string()))? {
            Value::Table(t) => t,
            _ => unreachable!("TrainConfig serializes to a table"),
        };
        let cells = if self.ablate.cells.is_empty() {
            vec![Table::from_iter([("name".to_string(), Value::String("train".into()))])]
        } else {
            self.ablate.cells.clone()
        };
        if self.ablate.seeds.is_empty() {
            return Err(config_err("ablate.seeds must not be empty"));
        }
        let mut grid = Vec::new();
        for mut cell in cells {
            let name = match cell.remove("name") {
                Some(Value::String(s)) if !s.is_empty() => s,
                _ => return Err(config_err("every ablate cell needs a non-empty string `name`")),
            };
            let mut table = base.clone();
            merge(&mut table, &cell);
            let config: TrainConfig = Value::Table(table)
                .try_into()
                .map_err(|e: toml::de::Error| config_err(format!("ablate cell {name}: {}", e.message())))?;
            for &seed in &self.ablate.seeds {
                let mut config = config.clone();
                config.seed = seed;
                config.validate()?;
                grid.push(AblationCell {
                    name: name.clone(),
                    config,
                });
            }
        }
        Ok(grid)
    }
}
