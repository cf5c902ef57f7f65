//! CSV and JSON persistence of generated data.
//!
//! * weather: `bus_id,timestamp,ambient_temp_c,wind_speed_ms,wind_direction_deg,solar_radiation_wm2`
//! * ratings: `line_id,timestamp,rating_a`
//!
//! Rows are grouped by bus/line in grid order, then by hour. Values are
//! written in shortest round-trip form, so reading a file back reproduces
//! the in-memory data bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::{NormStats, WindowSpec};
use super::features::{feature_names, SCHEMA};
use super::weather::WeatherField;
use crate::error::{Error, Result};
use crate::graph::{BusId, EdgeFeatureSchema, Grid, LineId};
use crate::thermal::WeatherSample;

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

pub fn format_timestamp(t: NaiveDateTime) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .map_err(|e| Error::InvalidInput(format!("bad timestamp `{s}`: {e}")))
}

#[derive(Serialize, Deserialize)]
struct WeatherRow {
    bus_id: BusId,
    timestamp: String,
    ambient_temp_c: f64,
    wind_speed_ms: f64,
    wind_direction_deg: f64,
    solar_radiation_wm2: f64,
}

#[derive(Serialize, Deserialize)]
struct RatingRow {
    line_id: LineId,
    timestamp: String,
    rating_a: f64,
}

pub fn write_weather_csv(path: &Path, grid: &Grid, field: &WeatherField) -> Result<()> {
    field.validate(grid)?;
    let mut w = csv::Writer::from_path(path)?;
    for (bus, series) in grid.buses().iter().zip(&field.series) {
        for (t, s) in series.iter().enumerate() {
            w.serialize(WeatherRow {
                bus_id: bus.id,
                timestamp: format_timestamp(field.timestamp(t)),
                ambient_temp_c: s.ambient_temp,
                wind_speed_ms: s.wind_speed,
                wind_direction_deg: s.wind_direction,
                solar_radiation_wm2: s.solar_radiation,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads per-bus series and checks they share one gap-free hourly timeline.
fn read_series<R, T>(
    path: &Path,
    ids: &[u32],
    key: impl Fn(&R) -> (u32, &str),
    value: impl Fn(&R) -> T,
) -> Result<(NaiveDateTime, Vec<Vec<T>>)>
where
    R: for<'de> Deserialize<'de>,
{
    let mut by_id: BTreeMap<u32, Vec<(NaiveDateTime, T)>> = BTreeMap::new();
    for row in csv::Reader::from_path(path)?.deserialize::<R>() {
        let row = row?;
        let (id, ts) = key(&row);
        let ts = parse_timestamp(ts)?;
        by_id.entry(id).or_default().push((ts, value(&row)));
    }
    let mut start = None;
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let mut series = by_id
            .remove(id)
            .ok_or_else(|| Error::InvalidInput(format!("{}: no rows for id {id}", path.display())))?;
        series.sort_by_key(|(t, _)| *t);
        let first = series.first().map(|(t, _)| *t);
        let s0 = *start.get_or_insert(first.unwrap_or_default());
        for (k, (t, _)) in series.iter().enumerate() {
            if *t != s0 + chrono::Duration::hours(k as i64) {
                return Err(Error::InvalidInput(format!(
                    "{}: id {id} has a gap or misaligned timestamp at {}",
                    path.display(),
                    format_timestamp(*t)
                )));
            }
        }
        out.push(series.into_iter().map(|(_, v)| v).collect::<Vec<T>>());
    }
    if let Some(extra) = by_id.keys().next() {
        return Err(Error::InvalidInput(format!("{}: unknown id {extra}", path.display())));
    }
    if out.windows(2).any(|w| w[0].len() != w[1].len()) {
        return Err(Error::InvalidInput(format!(
            "{}: series lengths differ",
            path.display()
        )));
    }
    Ok((start.unwrap_or_default(), out))
}

pub fn read_weather_csv(path: &Path, grid: &Grid) -> Result<WeatherField> {
    let ids: Vec<u32> = grid.buses().iter().map(|b| b.id.0).collect();
    let (start, series) = read_series(
        path,
        &ids,
        |r: &WeatherRow| (r.bus_id.0, r.timestamp.as_str()),
        |r| WeatherSample {
            ambient_temp: r.ambient_temp_c,
            wind_speed: r.wind_speed_ms,
            wind_direction: r.wind_direction_deg,
            solar_radiation: r.solar_radiation_wm2,
        },
    )?;
    Ok(WeatherField { start, series })
}

pub fn write_ratings_csv(path: &Path, grid: &Grid, start: NaiveDateTime, ratings: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (line, series) in grid.lines().iter().zip(ratings) {
        for (t, &r) in series.iter().enumerate() {
            w.serialize(RatingRow {
                line_id: line.id,
                timestamp: format_timestamp(start + chrono::Duration::hours(t as i64)),
                rating_a: r,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_ratings_csv(path: &Path, grid: &Grid) -> Result<(NaiveDateTime, Vec<Vec<f64>>)> {
    let ids: Vec<u32> = grid.lines().iter().map(|l| l.id.0).collect();
    read_series(
        path,
        &ids,
        |r: &RatingRow| (r.line_id.0, r.timestamp.as_str()),
        |r| r.rating_a,
    )
}

/// Describes how to interpret a generated dataset and the model inputs
/// derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub start: String,
    pub hours: usize,
    pub bus_count: usize,
    pub line_count: usize,
    pub line_ids: Vec<LineId>,
    pub dropped_parallel_lines: Vec<LineId>,
    pub schema: EdgeFeatureSchema,
    pub feature_names: Vec<String>,
    pub endpoint_order: String,
    pub season_order: Vec<String>,
    pub window: WindowSpec,
    pub train_windows: usize,
    pub test_windows: usize,
    pub feature_normalization: String,
    pub target_normalization: String,
    pub normalization: NormStats,
    pub schema_hash: String,
}

/// Stable fingerprint of the feature layout.
pub fn schema_hash() -> String {
    let mut h = Sha256::new();
    for name in feature_names() {
        h.update(name.as_bytes());
        h.update(b"\n");
    }
    h.update(format!("{}:{}", SCHEMA.node_dim, SCHEMA.edge_dim).as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(
        path,
    )?))?)
}
