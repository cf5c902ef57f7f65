use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Recurrent encoder family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Plain LSTM: every line is encoded independently.
    Lstm,
    /// Two stacked LSTM layers whose inputs are mixed over single-hop
    /// line-graph neighbours.
    Lgclstm,
    /// One LSTM layer whose input is mixed over the double-hop line graph.
    DLgclstm,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Lstm, Variant::Lgclstm, Variant::DLgclstm];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Lstm => "lstm",
            Variant::Lgclstm => "lgclstm",
            Variant::DLgclstm => "d-lgclstm",
        }
    }

    /// Label used in reports.
    pub fn display_name(self) -> &'static str {
        match self {
            Variant::Lstm => "LSTM",
            Variant::Lgclstm => "LGCLSTM",
            Variant::DLgclstm => "D-LGCLSTM",
        }
    }

    pub fn layers(self) -> usize {
        match self {
            Variant::Lgclstm => 2,
            Variant::Lstm | Variant::DLgclstm => 1,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == norm || v.name().replace('-', "") == norm)
            .ok_or_else(|| Error::InvalidInput(format!("unknown variant `{s}` (expected lstm, lgclstm or d-lgclstm)")))
    }
}

/// Squashing applied to the cell state before the output gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellActivation {
    #[default]
    Sigmoid,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub hidden: usize,
    pub head_hidden: usize,
    /// Lower and upper quantile levels.
    pub quantiles: [f64; 2],
    pub bidirectional: bool,
    pub cell_activation: CellActivation,
    /// One head pair for all lines instead of one per line.
    pub shared_heads: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::DLgclstm,
            hidden: 64,
            head_hidden: 64,
            quantiles: [0.1, 0.9],
            bidirectional: true,
            cell_activation: CellActivation::Sigmoid,
            shared_heads: false,
        }
    }
}

impl ModelConfig {
    pub fn for_variant(variant: Variant) -> Self {
        ModelConfig {
            variant,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.head_hidden == 0 {
            return Err(Error::InvalidInput("hidden sizes must be positive".into()));
        }
        let [lo, hi] = self.quantiles;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::InvalidInput(format!(
                "quantiles must satisfy 0 < lower < upper < 1, got [{lo}, {hi}]"
            )));
        }
        Ok(())
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    /// Width of the representation fed to the heads.
    pub fn head_input(&self) -> usize {
        self.hidden * self.directions()
    }

    /// Nominal coverage of the interval between the two quantiles, percent.
    pub fn nominal_coverage(&self) -> f64 {
        (self.quantiles[1] - self.quantiles[0]) * 100.0
    }
}

/// Data-dependent sizes of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub lines: usize,
    pub input_dim: usize,
    pub horizon: usize,
}
