//! Per-hour line-graph feature matrices and line rating labels.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::weather::WeatherField;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::graph::{assemble_line_features, EdgeFeatureSchema, Grid, LineId};
use crate::tensor::Matrix;
use crate::thermal::{dlr_series, ConductorParams};

pub const BUS_FEATURES: [&str; 7] = [
    "temp_c",
    "wind_speed_ms",
    "wind_dir_sin",
    "wind_dir_cos",
    "solar_wm2",
    "lat",
    "lon",
];
pub const LINE_FEATURES: [&str; 6] = [
    "prev_hour_rating_a",
    "length_km",
    "season_spring",
    "season_summer",
    "season_fall",
    "season_winter",
];

pub const SCHEMA: EdgeFeatureSchema = EdgeFeatureSchema {
    node_dim: BUS_FEATURES.len(),
    edge_dim: LINE_FEATURES.len(),
};

/// Column names of a line-graph feature row.
pub fn feature_names() -> Vec<String> {
    let mut names: Vec<String> = BUS_FEATURES.iter().map(|n| format!("bus_a.{n}")).collect();
    names.extend(BUS_FEATURES.iter().map(|n| format!("bus_b.{n}")));
    names.extend(LINE_FEATURES.iter().map(|n| format!("line.{n}")));
    names
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Season {
    Spring,
    Summer,
    Fall,
    Winter,
}

impl Season {
    /// Meteorological seasons: MAM, JJA, SON, DJF.
    pub fn of(t: NaiveDateTime) -> Season {
        match t.month() {
            3..=5 => Season::Spring,
            6..=8 => Season::Summer,
            9..=11 => Season::Fall,
            _ => Season::Winter,
        }
    }

    /// One-hot over (spring, summer, fall, winter).
    pub fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self as usize] = 1.0;
        v
    }
}

/// Conductor used for each line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConductorAssignment {
    #[serde(default)]
    pub conductor: ConductorParams,
    /// Overrides keyed by line id.
    #[serde(default)]
    pub per_line: BTreeMap<LineId, ConductorParams>,
}

impl ConductorAssignment {
    pub fn for_line(&self, id: LineId) -> &ConductorParams {
        self.per_line.get(&id).unwrap_or(&self.conductor)
    }

    pub fn validate(&self) -> Result<()> {
        self.conductor.validate()?;
        self.per_line.values().try_for_each(ConductorParams::validate)
    }
}

/// Hourly rating of every line: the smaller ampacity of its two endpoint
/// weather conditions, evaluated along the line's azimuth.
pub fn line_ratings(
    grid: &Grid,
    weather: &WeatherField,
    conductors: &ConductorAssignment,
    exec: Execution,
) -> Result<Vec<Vec<f64>>> {
    weather.validate(grid)?;
    exec.try_map(grid.line_count(), |e| {
        let (a, b) = grid.endpoints(e);
        let params = conductors.for_line(grid.lines()[e].id);
        let az = grid.line_azimuth(e);
        let series = [weather.series[a].clone(), weather.series[b].clone()];
        let r = dlr_series(params, &series, &[az, az], Execution::Sequential)?;
        Ok(r[0].iter().zip(&r[1]).map(|(x, y)| x.min(*y)).collect())
    })
}

/// Raw (unnormalized) line-graph features for every hour.
#[derive(Debug, Clone)]
pub struct FeatureTimeline {
    pub start: NaiveDateTime,
    /// `rows[hour]` is `|E| × total_dim`.
    pub rows: Vec<Matrix>,
}

impl FeatureTimeline {
    pub fn hours(&self) -> usize {
        self.rows.len()
    }

    pub fn timestamp(&self, hour: usize) -> NaiveDateTime {
        self.start + chrono::Duration::hours(hour as i64)
    }
}

pub fn bus_feature_row(sample: &crate::thermal::WeatherSample, lat: f64, lon: f64) -> [f64; 7] {
    let dir = sample.wind_direction.to_radians();
    [
        sample.ambient_temp,
        sample.wind_speed,
        dir.sin(),
        dir.cos(),
        sample.solar_radiation,
        lat,
        lon,
    ]
}

/// Assembles the per-hour feature matrices.
///
/// Line features at hour `t` carry the rating of hour `t − 1` (hour 0
/// repeats its own rating).
pub fn build_features(
    grid: &Grid,
    weather: &WeatherField,
    ratings: &[Vec<f64>],
    exec: Execution,
) -> Result<FeatureTimeline> {
    weather.validate(grid)?;
    let hours = weather.hours();
    if ratings.len() != grid.line_count() || ratings.iter().any(|r| r.len() != hours) {
        return Err(Error::InvalidInput(format!(
            "ratings must cover {} lines × {hours} hours",
            grid.line_count()
        )));
    }
    let rows = exec.try_map(hours, |t| {
        let when = weather.timestamp(t);
        let season = Season::of(when).one_hot();
        let nodes = Matrix::from_fn(grid.bus_count(), SCHEMA.node_dim, |b, c| {
            let bus = &grid.buses()[b];
            bus_feature_row(&weather.series[b][t], bus.lat, bus.lon)[c]
        });
        let edges = Matrix::from_fn(grid.line_count(), SCHEMA.edge_dim, |e, c| match c {
            0 => ratings[e][t.saturating_sub(1)],
            1 => grid.lines()[e].length_km,
            _ => season[c - 2],
        });
        assemble_line_features(grid, SCHEMA, &nodes, &edges)
    })?;
    Ok(FeatureTimeline {
        start: weather.start,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thermal::WeatherSample;
    use chrono::NaiveDate;

    #[test]
    fn wind_direction_encoding() {
        let s = WeatherSample {
            ambient_temp: 20.0,
            wind_speed: 3.0,
            wind_direction: 90.0,
            solar_radiation: 0.0,
        };
        let row = bus_feature_row(&s, 30.0, -97.0);
        assert!((row[2] - 1.0).abs() < 1e-15);
        assert!(row[3].abs() < 1e-15);
    }

    #[test]
    fn january_is_winter() {
        let t = NaiveDate::from_ymd_opt(2021, 1, 15)
            .unwrap()
            .and_hms_opt(12, 0, 0)
            .unwrap();
        assert_eq!(Season::of(t).one_hot(), [0.0, 0.0, 0.0, 1.0]);
        let t = NaiveDate::from_ymd_opt(2021, 7, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        assert_eq!(Season::of(t).one_hot(), [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn names_match_schema() {
        assert_eq!(feature_names().len(), SCHEMA.total_dim());
        assert_eq!(SCHEMA.total_dim(), 20);
    }
}
