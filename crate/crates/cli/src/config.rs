//! Run configuration file (TOML, schema version 1).
//!
//! ```toml
//! version = 1
//! seed = 0
//! output_dir = "runs/heat"
//! library = ["u_t", "u_x", "u_xx", "u_xt"]
//!
//! [data]
//! kind = "heat"          # heat | wave | csv
//! noise_sd = 0.0
//! test_grid = [100, 100]
//!
//! [data.heat]
//! a2 = 1.0
//!
//! [network_u]
//! hidden_layers = 4
//! hidden_width = 20
//!
//! [train]
//! max_outer = 50
//!
//! [rp]                   # optional
//! lags = 1
//! dt = 0.1
//! ```

use std::path::{Path, PathBuf};

use pdedisc::data::{HeatConfig, SampleCounts, WaveConfig};
use pdedisc::network::NetworkConfig;
use pdedisc::operators::{validate_library, OperatorId};
use pdedisc::recurrent::RpConfig;
use pdedisc::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub library: Vec<OperatorId>,
    pub data: DataConfig,
    #[serde(default)]
    pub network_u: NetSpec,
    #[serde(default)]
    pub network_g: NetSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub rp: Option<RpConfig>,
    #[serde(default)]
    pub selection: SelectionOptions,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Heat,
    Wave,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub kind: SourceKind,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub samples: SampleCounts,
    /// Test grid `(nx, nt)` for generated fields.
    #[serde(default = "default_test_grid")]
    pub test_grid: [usize; 2],
    #[serde(default)]
    pub heat: Option<HeatConfig>,
    #[serde(default)]
    pub wave: Option<WaveConfig>,
    #[serde(default)]
    pub sensors: Option<SensorGrid>,
    #[serde(default)]
    pub csv: Option<CsvSource>,
}

fn default_test_grid() -> [usize; 2] {
    [100, 100]
}

/// Evenly spaced virtual sensors for the wave generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorGrid {
    pub count: usize,
    /// Readings per sensor, evenly spaced over `[0, t_end]`.
    pub readings: usize,
    /// Index (from `x = 0`) of the sensor withheld for testing.
    pub held_out: usize,
}

impl Default for SensorGrid {
    fn default() -> Self {
        Self {
            count: 9,
            readings: 41,
            held_out: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    /// `x,t,u` rows; relative paths resolve against the config file.
    pub path: PathBuf,
    /// Sensor layout JSON (`{"sensors": {...}, "held_out": "..."}`).
    pub layout: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSpec {
    pub hidden_layers: usize,
    pub hidden_width: usize,
}

impl Default for NetSpec {
    fn default() -> Self {
        Self {
            hidden_layers: 4,
            hidden_width: 20,
        }
    }
}

impl NetSpec {
    pub fn network(&self, seed: u64) -> NetworkConfig {
        NetworkConfig {
            input_width: 2,
            hidden_layers: self.hidden_layers,
            hidden_width: self.hidden_width,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionOptions {
    /// Combinations trained concurrently (overridden by `--parallel`).
    pub parallel: usize,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        Self { parallel: 1 }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves CSV paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(csv) = &mut cfg.data.csv {
            csv.path = base.join(&csv.path);
            csv.layout = base.join(&csv.layout);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported config version {} (expected {SCHEMA_VERSION})",
                self.version
            )));
        }
        if self.library.is_empty() {
            return Err(CliError::Config("operator library is empty".into()));
        }
        validate_library(&self.library)?;
        let d = &self.data;
        let present = [
            (SourceKind::Heat, d.heat.is_some()),
            (SourceKind::Wave, d.wave.is_some() || d.sensors.is_some()),
            (SourceKind::Csv, d.csv.is_some()),
        ];
        for (kind, given) in present {
            if given && kind != d.kind {
                return Err(CliError::Config(format!(
                    "data.kind is {:?} but a {:?} source table is also given; exactly one data source is allowed",
                    d.kind, kind
                )));
            }
        }
        if d.kind == SourceKind::Csv && d.csv.is_none() {
            return Err(CliError::Config("data.kind = \"csv\" needs a [data.csv] table".into()));
        }
        if !(d.noise_sd >= 0.0 && d.noise_sd.is_finite()) {
            return Err(CliError::Config("data.noise_sd must be finite and >= 0".into()));
        }
        if d.test_grid.iter().any(|&n| n < 2) {
            return Err(CliError::Config("data.test_grid needs at least 2 points per axis".into()));
        }
        if let Some(s) = &d.sensors {
            if s.count < 3 || s.held_out >= s.count || s.readings < 2 {
                return Err(CliError::Config(
                    "sensors need count >= 3, readings >= 2 and held_out < count".into(),
                ));
            }
        }
        for (name, n) in [("network_u", &self.network_u), ("network_g", &self.network_g)] {
            if n.hidden_width == 0 {
                return Err(CliError::Config(format!("{name}.hidden_width must be >= 1")));
            }
        }
        self.train.validate()?;
        if self.selection.parallel == 0 {
            return Err(CliError::Config("selection.parallel must be >= 1".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the config.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn heat(&self) -> HeatConfig {
        self.data.heat.unwrap_or_default()
    }

    pub fn wave(&self) -> WaveConfig {
        self.data.wave.unwrap_or_default()
    }

    pub fn sensors(&self) -> SensorGrid {
        self.data.sensors.unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEAT: &str = r#"
version = 1
library = ["u_t", "u_x", "u_xx", "u_xt"]
[data]
kind = "heat"
"#;

    #[test]
    fn minimal_heat_config_uses_defaults() {
        let c = RunConfig::from_toml(HEAT).unwrap();
        assert_eq!(c.data.samples.boundary + c.data.samples.interior, 260);
        assert_eq!(c.heat().a2, 1.0);
        assert_eq!(c.train, TrainConfig::default());
        assert!(c.rp.is_none());
    }

    #[test]
    fn rejects_bad_configs() {
        let cases = [
            HEAT.replace("version = 1", "version = 2"),
            HEAT.replace(r#"["u_t", "u_x", "u_xx", "u_xt"]"#, "[]"),
            HEAT.replace(r#""u_x", "u_xx""#, r#""u_x", "u_x""#),
            format!("{HEAT}[data.csv]\npath = \"a.csv\"\nlayout = \"l.json\"\n"),
            HEAT.replace("kind = \"heat\"", "kind = \"csv\""),
            format!("{HEAT}bogus = 1\n"),
            HEAT.replace("u_xt", "u_xxx"),
        ];
        for text in cases {
            assert!(RunConfig::from_toml(&text).is_err(), "{text}");
        }
    }

    #[test]
    fn hash_tracks_every_field() {
        let base = RunConfig::from_toml(HEAT).unwrap();
        let mut variants = Vec::new();
        let mut c = base.clone();
        c.seed = 1;
        variants.push(c);
        let mut c = base.clone();
        c.data.noise_sd = 1e-3;
        variants.push(c);
        let mut c = base.clone();
        c.train.adam.lr *= 2.0;
        variants.push(c);
        let mut c = base.clone();
        c.network_g.hidden_width = 21;
        variants.push(c);
        let mut c = base.clone();
        c.rp = Some(RpConfig::default());
        variants.push(c);
        let mut c = base.clone();
        c.library.pop();
        variants.push(c);
        let mut c = base.clone();
        c.data.samples.interior = 201;
        variants.push(c);
        let h = base.hash();
        assert_eq!(h, base.clone().hash());
        for v in variants {
            assert_ne!(v.hash(), h);
        }
    }
}
