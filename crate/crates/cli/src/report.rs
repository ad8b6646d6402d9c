//! Run reports. Everything that varies between identical runs (timestamps,
//! wall-clock) sits in the `[header]` table.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use toml::Table;

use uwsl_core::fusion::AxisMetrics;

use crate::error::CliResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub created_unix_s: u64,
    /// Seconds per stage.
    pub wall_clock_s: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub stage: String,
    pub seed: u64,
    pub name: String,
    pub value: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub header: Header,
    pub config: Table,
    pub metrics: Vec<Metric>,
}

impl RunReport {
    pub fn new(command: &str, config: Table) -> Self {
        let created = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Self {
            header: Header {
                tool: "uwsl".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: command.into(),
                created_unix_s: created,
                wall_clock_s: BTreeMap::new(),
            },
            config,
            metrics: Vec::new(),
        }
    }

    /// Runs `f` as stage `name`, recording its wall-clock time.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> CliResult<T>) -> CliResult<T> {
        let t0 = Instant::now();
        let out = f(self);
        self.header.wall_clock_s.insert(name.into(), t0.elapsed().as_secs_f64());
        out
    }

    pub fn push(&mut self, stage: &str, seed: u64, name: &str, value: f64, unit: &str) {
        self.metrics.push(Metric { stage: stage.into(), seed, name: name.into(), value, unit: unit.into() });
    }

    /// MAE, ME, SD and RMSE per axis, named `<prefix>_<stat>_<axis>`.
    pub fn push_axis(&mut self, stage: &str, seed: u64, prefix: &str, m: &AxisMetrics, unit: &str) {
        for (stat, vals) in [("mae", m.mae), ("me", m.me), ("sd", m.sd), ("rmse", m.rmse)] {
            for (axis, v) in ["x", "y", "z"].iter().zip(vals) {
                self.push(stage, seed, &format!("{prefix}_{stat}_{axis}"), v, unit);
            }
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.name == name).map(|m| m.value)
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        crate::io::write_toml(path, self)
    }
}
