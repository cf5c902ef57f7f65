use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use dlr_core::datagen::io::parse_timestamp;
use dlr_core::datagen::{ConductorAssignment, SyntheticGridConfig, WeatherConfig, WindowSpec, MIN_DAYS};
use dlr_core::graph::TopologyFile;
use dlr_core::model::{ModelConfig, Variant};
use dlr_core::train::TrainConfig;
use dlr_core::Execution;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Generate a random topology with these sizes.
    #[serde(default)]
    pub synthetic: Option<SyntheticGridConfig>,
    /// Read `{buses, lines}` JSON instead.
    #[serde(default)]
    pub topology_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub days: usize,
    /// First hour, `YYYY-MM-DDTHH:MM:SS`.
    pub start: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Variants compared by `bench`.
    pub variants: Vec<Variant>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            variants: Variant::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoSection {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

/// Complete description of a reproducible run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
    pub grid: GridSection,
    pub data: DataSection,
    #[serde(default)]
    pub weather: WeatherConfig,
    #[serde(default)]
    pub thermal: ConductorAssignment,
    #[serde(default)]
    pub window: WindowSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
    pub io: IoSection,
}

pub const BUILTINS: [&str; 2] = ["demo-20bus", "tx-123"];

fn demo_20bus() -> RunConfig {
    RunConfig {
        name: "demo-20bus".into(),
        seed: 7,
        execution: Execution::Parallel,
        grid: GridSection {
            synthetic: Some(SyntheticGridConfig {
                buses: 20,
                lines: 30,
                parallel_lines: 2,
                lat_range: [30.0, 33.0],
                lon_range: [-99.0, -95.0],
            }),
            topology_file: None,
        },
        data: DataSection {
            days: 60,
            start: "2021-05-01T00:00:00".into(),
        },
        weather: WeatherConfig::default(),
        thermal: ConductorAssignment::default(),
        window: WindowSpec::default(),
        model: ModelConfig {
            hidden: 32,
            head_hidden: 32,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            epochs: 20,
            learning_rate: 5e-3,
            batch_size: Some(8),
            seed: 7,
            ..TrainConfig::default()
        },
        eval: EvalSection::default(),
        io: IoSection {
            data_dir: "runs/demo-20bus/data".into(),
            out_dir: "runs/demo-20bus".into(),
        },
    }
}

fn tx_123() -> RunConfig {
    RunConfig {
        name: "tx-123".into(),
        seed: 2017,
        grid: GridSection {
            synthetic: Some(SyntheticGridConfig {
                buses: 123,
                lines: 173,
                parallel_lines: 71,
                lat_range: [26.0, 36.0],
                lon_range: [-106.0, -94.0],
            }),
            topology_file: None,
        },
        data: DataSection {
            days: 365,
            start: "2021-01-01T00:00:00".into(),
        },
        model: ModelConfig::default(),
        train: TrainConfig {
            seed: 2017,
            ..TrainConfig::default()
        },
        io: IoSection {
            data_dir: "runs/tx-123/data".into(),
            out_dir: "runs/tx-123".into(),
        },
        ..demo_20bus()
    }
}

pub fn builtin(name: &str) -> Option<RunConfig> {
    match name {
        "demo-20bus" => Some(demo_20bus()),
        "tx-123" => Some(tx_123()),
        _ => None,
    }
}

impl RunConfig {
    /// A built-in name or a JSON file path.
    pub fn load(spec: &str) -> Result<Self, CliError> {
        if let Some(cfg) = builtin(spec) {
            return Ok(cfg);
        }
        let path = Path::new(spec);
        if !path.is_file() {
            return Err(CliError::Usage(format!(
                "config `{spec}` is neither a file nor a built-in ({})",
                BUILTINS.join(", ")
            )));
        }
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{spec}: {e}")))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{spec}: invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |e: dlr_core::Error| CliError::Usage(format!("invalid config: {e}"));
        match (&self.grid.synthetic, &self.grid.topology_file) {
            (Some(g), None) => g.validate().map_err(bad)?,
            (None, Some(_)) => {}
            _ => {
                return Err(CliError::Usage(
                    "invalid config: grid needs exactly one of `synthetic` or `topology_file`".into(),
                ))
            }
        }
        if self.data.days < MIN_DAYS {
            return Err(CliError::Usage(format!(
                "invalid config: need ≥ {MIN_DAYS} days of data (one week of history plus a forecast day), got {}",
                self.data.days
            )));
        }
        self.start()?;
        self.weather.validate().map_err(bad)?;
        self.thermal.validate().map_err(bad)?;
        self.model.validate().map_err(bad)?;
        self.train.validate().map_err(bad)?;
        if self.window.history == 0 || self.window.horizon == 0 || self.window.stride == 0 {
            return Err(CliError::Usage("invalid config: window sizes must be positive".into()));
        }
        if self.eval.variants.is_empty() {
            return Err(CliError::Usage("invalid config: eval.variants is empty".into()));
        }
        Ok(())
    }

    pub fn start(&self) -> Result<NaiveDateTime, CliError> {
        parse_timestamp(&self.data.start).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn topology(&self) -> Result<TopologyFile, CliError> {
        match (&self.grid.synthetic, &self.grid.topology_file) {
            (Some(g), _) => Ok(dlr_core::datagen::synthetic_topology(g, self.seed)?),
            (None, Some(path)) => {
                let text =
                    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("{}: invalid topology: {e}", path.display())))
            }
            (None, None) => Err(CliError::Usage("grid section is empty".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_valid_and_serializable() {
        for name in BUILTINS {
            let cfg = builtin(name).unwrap();
            cfg.validate().unwrap();
            let json = serde_json::to_string(&cfg).unwrap();
            let back: RunConfig = serde_json::from_str(&json).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = serde_json::to_value(builtin("demo-20bus").unwrap()).unwrap();
        v["model"]["hiddn"] = 3.into();
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
        let mut v = serde_json::to_value(builtin("demo-20bus").unwrap()).unwrap();
        v["extra"] = 1.into();
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
    }

    #[test]
    fn short_horizon_of_days_is_a_usage_error() {
        let mut cfg = builtin("demo-20bus").unwrap();
        cfg.data.days = 5;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("need ≥ 8 days"));
    }
}
