//! Synthetic weather, rating labels and windowed datasets.

mod dataset;
mod features;
pub mod io;
mod topology;
mod weather;

pub use dataset::{window_split, NormStats, WindowSpec, WindowedDataset};
pub use features::{
    build_features, bus_feature_row, feature_names, line_ratings, ConductorAssignment, FeatureTimeline, Season,
    BUS_FEATURES, LINE_FEATURES, SCHEMA,
};
pub use io::DatasetManifest;
pub use topology::{synthetic_topology, SyntheticGridConfig};
pub use weather::{generate_weather, WeatherConfig, WeatherField, MIN_DAYS};

use std::path::Path;

use chrono::NaiveDateTime;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::graph::{Grid, LineId, TopologyFile};

pub const TOPOLOGY_FILE: &str = "topology.json";
pub const WEATHER_FILE: &str = "weather.csv";
pub const RATINGS_FILE: &str = "ratings.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// A grid with its weather and per-line hourly ratings.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub grid: Grid,
    pub dropped_parallel_lines: Vec<LineId>,
    pub weather: WeatherField,
    /// `ratings[line][hour]`, amperes.
    pub ratings: Vec<Vec<f64>>,
}

impl GeneratedData {
    /// Removes parallel lines, generates weather and labels every line.
    pub fn generate(
        topology: TopologyFile,
        days: usize,
        start: NaiveDateTime,
        weather: &WeatherConfig,
        conductors: &ConductorAssignment,
        seed: u64,
        exec: Execution,
    ) -> Result<Self> {
        conductors.validate()?;
        let (grid, dropped) = Grid::dedup_parallel(topology.buses, topology.lines)?;
        let field = generate_weather(&grid, days, start, weather, seed)?;
        let ratings = line_ratings(&grid, &field, conductors, exec)?;
        Ok(GeneratedData {
            grid,
            dropped_parallel_lines: dropped,
            weather: field,
            ratings,
        })
    }

    pub fn hours(&self) -> usize {
        self.weather.hours()
    }

    pub fn features(&self, exec: Execution) -> Result<FeatureTimeline> {
        build_features(&self.grid, &self.weather, &self.ratings, exec)
    }

    /// Chronological train/test windows.
    pub fn split(&self, spec: WindowSpec, exec: Execution) -> Result<(WindowedDataset, WindowedDataset)> {
        window_split(&self.features(exec)?, &self.ratings, spec)
    }

    pub fn manifest(&self, spec: WindowSpec, train: &WindowedDataset, test: &WindowedDataset) -> DatasetManifest {
        DatasetManifest {
            start: io::format_timestamp(self.weather.start),
            hours: self.hours(),
            bus_count: self.grid.bus_count(),
            line_count: self.grid.line_count(),
            line_ids: self.grid.lines().iter().map(|l| l.id).collect(),
            dropped_parallel_lines: self.dropped_parallel_lines.clone(),
            schema: SCHEMA,
            feature_names: feature_names(),
            endpoint_order: "endpoint buses sorted by ascending bus id".into(),
            season_order: ["spring", "summer", "fall", "winter"].map(String::from).to_vec(),
            window: spec,
            train_windows: train.len(),
            test_windows: test.len(),
            feature_normalization: "z-score per feature column over all training-window history rows".into(),
            target_normalization: "per line (y - min) / (max - min) over training-window targets".into(),
            normalization: train.stats().clone(),
            schema_hash: io::schema_hash(),
        }
    }

    /// Writes topology, weather, ratings and the dataset manifest to `dir`.
    pub fn write(&self, dir: &Path, spec: WindowSpec, exec: Execution) -> Result<DatasetManifest> {
        let (train, test) = self.split(spec, exec)?;
        let manifest = self.manifest(spec, &train, &test);
        std::fs::create_dir_all(dir)?;
        self.grid.write_json(&dir.join(TOPOLOGY_FILE))?;
        io::write_weather_csv(&dir.join(WEATHER_FILE), &self.grid, &self.weather)?;
        io::write_ratings_csv(&dir.join(RATINGS_FILE), &self.grid, self.weather.start, &self.ratings)?;
        io::write_json(&dir.join(MANIFEST_FILE), &manifest)?;
        Ok(manifest)
    }

    /// Loads data written by [`GeneratedData::write`].
    pub fn load(dir: &Path) -> Result<Self> {
        for f in [TOPOLOGY_FILE, WEATHER_FILE, RATINGS_FILE, MANIFEST_FILE] {
            if !dir.join(f).is_file() {
                return Err(Error::InvalidInput(format!(
                    "dataset file {} is missing",
                    dir.join(f).display()
                )));
            }
        }
        let grid = Grid::read_json(&dir.join(TOPOLOGY_FILE))?;
        let manifest: DatasetManifest = io::read_json(&dir.join(MANIFEST_FILE))?;
        let weather = io::read_weather_csv(&dir.join(WEATHER_FILE), &grid)?;
        let (start, ratings) = io::read_ratings_csv(&dir.join(RATINGS_FILE), &grid)?;
        if start != weather.start || ratings.first().map_or(0, Vec::len) != weather.hours() {
            return Err(Error::InvalidInput("weather and ratings timelines differ".into()));
        }
        Ok(GeneratedData {
            grid,
            dropped_parallel_lines: manifest.dropped_parallel_lines,
            weather,
            ratings,
        })
    }
}
