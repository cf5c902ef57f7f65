//! Synthetic hourly weather with network-wide correlation.
//!
//! Every channel is a deterministic climatology (seasonal and diurnal
//! sinusoids, a latitude gradient for temperature) plus a standardized
//! anomaly. The anomaly at bus `b` mixes two stationary AR(1) processes:
//!
//! * a local process whose innovations are jointly Gaussian across buses
//!   with correlation `exp(−d_ij / length_scale)`, `d_ij` the great-circle
//!   distance;
//! * a regional process that drifts across the grid with the configured
//!   advection velocity, so a bus sees it with a delay proportional to its
//!   position along the direction of travel.
//!
//! Buses at identical coordinates therefore receive identical weather.

use chrono::{Datelike, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{haversine_km, Grid};
use crate::thermal::WeatherSample;

/// Minimum number of days that yields one history+horizon window.
pub const MIN_DAYS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeatherConfig {
    /// Correlation length of the local anomaly, km.
    pub length_scale_km: f64,
    /// Hourly AR(1) coefficient of the local anomaly.
    pub local_persistence: f64,
    /// Hourly AR(1) coefficient of the regional anomaly.
    pub regional_persistence: f64,
    /// Share of anomaly variance carried by the regional process.
    pub regional_share: f64,
    pub advection_speed_kmh: f64,
    /// Direction the regional pattern travels towards, degrees from north.
    pub advection_heading_deg: f64,
    pub temp_mean_c: f64,
    pub temp_lat_gradient_c_per_deg: f64,
    pub temp_seasonal_amp_c: f64,
    pub temp_diurnal_amp_c: f64,
    pub temp_anomaly_std_c: f64,
    pub wind_mean_ms: f64,
    pub wind_diurnal_amp_ms: f64,
    pub wind_anomaly_std_ms: f64,
    pub wind_dir_mean_deg: f64,
    pub wind_dir_anomaly_std_deg: f64,
    pub solar_peak_wm2: f64,
    /// Fraction of clear-sky irradiance removed per unit of positive cloud anomaly.
    pub cloud_attenuation: f64,
}

impl Default for WeatherConfig {
    fn default() -> Self {
        WeatherConfig {
            length_scale_km: 100.0,
            local_persistence: 0.9,
            regional_persistence: 0.98,
            regional_share: 0.6,
            advection_speed_kmh: 30.0,
            advection_heading_deg: 90.0,
            temp_mean_c: 20.0,
            temp_lat_gradient_c_per_deg: -0.8,
            temp_seasonal_amp_c: 9.0,
            temp_diurnal_amp_c: 5.0,
            temp_anomaly_std_c: 3.0,
            wind_mean_ms: 4.0,
            wind_diurnal_amp_ms: 1.2,
            wind_anomaly_std_ms: 1.8,
            wind_dir_mean_deg: 180.0,
            wind_dir_anomaly_std_deg: 50.0,
            solar_peak_wm2: 950.0,
            cloud_attenuation: 0.35,
        }
    }
}

impl WeatherConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64, closed_top: bool| {
            let ok = v >= 0.0 && if closed_top { v <= 1.0 } else { v < 1.0 };
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("weather.{name} = {v} out of range")))
            }
        };
        unit("local_persistence", self.local_persistence, false)?;
        unit("regional_persistence", self.regional_persistence, false)?;
        unit("regional_share", self.regional_share, true)?;
        unit("cloud_attenuation", self.cloud_attenuation, true)?;
        if [self.length_scale_km, self.advection_speed_kmh]
            .iter()
            .any(|v| v.is_nan() || *v <= 0.0)
        {
            return Err(Error::InvalidInput(
                "weather.length_scale_km and advection_speed_kmh must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-bus hourly weather on a shared gap-free timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherField {
    pub start: NaiveDateTime,
    /// `series[bus][hour]`, buses in grid order.
    pub series: Vec<Vec<WeatherSample>>,
}

impl WeatherField {
    pub fn hours(&self) -> usize {
        self.series.first().map_or(0, Vec::len)
    }

    pub fn timestamp(&self, hour: usize) -> NaiveDateTime {
        self.start + chrono::Duration::hours(hour as i64)
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if self.series.len() != grid.bus_count() {
            return Err(Error::InvalidInput(format!(
                "weather for {} buses, grid has {}",
                self.series.len(),
                grid.bus_count()
            )));
        }
        let hours = self.hours();
        if self.series.iter().any(|s| s.len() != hours) {
            return Err(Error::InvalidInput("bus weather series have different lengths".into()));
        }
        Ok(())
    }
}

const CHANNELS: usize = 4;
const TEMP: usize = 0;
const WIND: usize = 1;
const DIR: usize = 2;
const CLOUD: usize = 3;

/// Generates `days` of hourly weather for every bus of `grid`.
pub fn generate_weather(
    grid: &Grid,
    days: usize,
    start: NaiveDateTime,
    cfg: &WeatherConfig,
    seed: u64,
) -> Result<WeatherField> {
    if days < MIN_DAYS {
        return Err(Error::InsufficientData(format!(
            "need ≥ {MIN_DAYS} days of weather to form one 7-day history + 1-day horizon window, got {days}"
        )));
    }
    cfg.validate()?;
    let hours = days * 24;
    let n = grid.bus_count();
    let buses = grid.buses();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let corr = Matrixish::from_fn(n, |i, j| {
        let d = haversine_km(buses[i].lat, buses[i].lon, buses[j].lat, buses[j].lon);
        (-d / cfg.length_scale_km).exp()
    });
    let chol = psd_cholesky(&corr);

    // Position of each bus along the travel direction, km, relative to the
    // most upstream bus; converted to a delay in hours.
    let (lat0, lon0) = (
        buses.iter().map(|b| b.lat).sum::<f64>() / n as f64,
        buses.iter().map(|b| b.lon).sum::<f64>() / n as f64,
    );
    let heading = cfg.advection_heading_deg.to_radians();
    let along: Vec<f64> = buses
        .iter()
        .map(|b| {
            let north = (b.lat - lat0) * 111.19;
            let east = (b.lon - lon0) * 111.19 * lat0.to_radians().cos();
            north * heading.cos() + east * heading.sin()
        })
        .collect();
    let upstream = along.iter().copied().fold(f64::INFINITY, f64::min);
    let delays: Vec<f64> = along.iter().map(|a| (a - upstream) / cfg.advection_speed_kmh).collect();
    let max_delay = delays.iter().copied().fold(0.0, f64::max).ceil() as usize + 1;

    // Regional processes, padded in front so delayed reads stay in range.
    let reg_len = hours + max_delay;
    let rp = cfg.regional_persistence;
    let rs = (1.0 - rp * rp).sqrt();
    let mut regional = vec![vec![0.0; reg_len]; CHANNELS];
    for ch in regional.iter_mut() {
        ch[0] = rng.sample(StandardNormal);
    }
    for t in 1..reg_len {
        for ch in regional.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            ch[t] = rp * ch[t - 1] + rs * z;
        }
    }

    let lp = cfg.local_persistence;
    let ls = (1.0 - lp * lp).sqrt();
    let share = cfg.regional_share;
    let (w_reg, w_loc) = (share.sqrt(), (1.0 - share).sqrt());
    let mut local = vec![vec![0.0; n]; CHANNELS];
    let mut z = vec![0.0; n];
    let mut series = vec![Vec::with_capacity(hours); n];

    for t in 0..hours {
        for state in local.iter_mut() {
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let innov = chol.mul_vec(&z);
            for (s, e) in state.iter_mut().zip(&innov) {
                *s = if t == 0 { *e } else { lp * *s + ls * e };
            }
        }
        let when = start + chrono::Duration::hours(t as i64);
        let doy = when.ordinal0() as f64 + when.hour() as f64 / 24.0;
        let hour = when.hour() as f64;
        let season = -(2.0 * std::f64::consts::PI * (doy - 15.0) / 365.25).cos();

        for b in 0..n {
            let anomaly = |ch: usize| {
                // linear interpolation of the delayed regional signal
                let pos = (t + max_delay) as f64 - delays[b];
                let i0 = pos.floor() as usize;
                let frac = pos - i0 as f64;
                let r = &regional[ch];
                let reg = r[i0] * (1.0 - frac) + r[(i0 + 1).min(reg_len - 1)] * frac;
                w_reg * reg + w_loc * local[ch][b]
            };
            let bus = &buses[b];
            let diurnal = |peak: f64| (2.0 * std::f64::consts::PI * (hour - peak) / 24.0).cos();

            let temp = cfg.temp_mean_c
                + cfg.temp_lat_gradient_c_per_deg * (bus.lat - 31.0)
                + cfg.temp_seasonal_amp_c * season
                + cfg.temp_diurnal_amp_c * diurnal(15.0)
                + cfg.temp_anomaly_std_c * anomaly(TEMP);
            let wind =
                (cfg.wind_mean_ms + cfg.wind_diurnal_amp_ms * diurnal(14.0) + cfg.wind_anomaly_std_ms * anomaly(WIND))
                    .max(0.0);
            let dir = (cfg.wind_dir_mean_deg + cfg.wind_dir_anomaly_std_deg * anomaly(DIR)).rem_euclid(360.0);
            let dir = if dir >= 360.0 { 0.0 } else { dir };

            let sunrise = 6.0 - season;
            let sunset = 18.0 + season;
            let clear = if hour > sunrise && hour < sunset {
                cfg.solar_peak_wm2
                    * (0.8 + 0.2 * season)
                    * (std::f64::consts::PI * (hour - sunrise) / (sunset - sunrise)).sin()
            } else {
                0.0
            };
            let cloud = (1.0 - cfg.cloud_attenuation * anomaly(CLOUD).max(0.0)).clamp(0.1, 1.0);
            let solar = (clear * cloud).max(0.0);

            series[b].push(WeatherSample {
                ambient_temp: temp,
                wind_speed: wind,
                wind_direction: dir,
                solar_radiation: solar,
            });
        }
    }
    Ok(WeatherField { start, series })
}

/// Small dense symmetric matrix for the correlation factorization.
struct Matrixish {
    n: usize,
    data: Vec<f64>,
}

impl Matrixish {
    fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Matrixish { n, data }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..=i).map(|j| self.at(i, j) * v[j]).sum())
            .collect()
    }
}

/// Lower-triangular factor `L` with `L Lᵀ = C` for a positive semidefinite
/// `C`. Pivots that vanish (linearly dependent rows, e.g. co-located buses)
/// produce zero columns instead of failing.
fn psd_cholesky(c: &Matrixish) -> Matrixish {
    let n = c.n;
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = c.at(j, j);
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        let pivot = if d > 1e-12 { d.sqrt() } else { 0.0 };
        l[j * n + j] = pivot;
        for i in (j + 1)..n {
            let mut s = c.at(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = if pivot > 0.0 { s / pivot } else { 0.0 };
        }
    }
    Matrixish { n, data: l }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_reconstructs_and_tolerates_duplicates() {
        let c = Matrixish::from_fn(3, |i, j| {
            let pos = [0.0f64, 0.0, 50.0];
            (-(pos[i] - pos[j]).abs() / 100.0).exp()
        });
        let l = psd_cholesky(&c);
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| l.at(i, k) * l.at(j, k)).sum();
                assert!((v - c.at(i, j)).abs() < 1e-10);
            }
        }
        // rows 0 and 1 are identical
        for k in 0..3 {
            assert_eq!(l.at(0, k), l.at(1, k));
        }
    }
}
