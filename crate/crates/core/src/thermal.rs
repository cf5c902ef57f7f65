//! Steady-state conductor ampacity from a heat balance.
//!
//! The rating is the current `I` at which Joule heating at the maximum
//! allowed conductor temperature balances the net heat exchange:
//!
//! ```text
//! I² R(T_max) = q_c + q_r − q_s
//! ```
//!
//! Formula set (SI units, temperatures in °C, per metre of conductor):
//!
//! * film temperature `T_film = (T_max + T_a) / 2`
//! * air viscosity `μ = 1.458e-6 (T_film + 273)^1.5 / (T_film + 383.4)`
//! * air density `ρ = (1.293 − 1.525e-4 H + 6.379e-9 H²) / (1 + 0.00367 T_film)`
//! * air conductivity `k = 2.424e-2 + 7.477e-5 T_film − 4.407e-9 T_film²`
//! * Reynolds number `Re = D ρ V / μ`
//! * wind direction factor `K = 1.194 − cos φ + 0.194 cos 2φ + 0.368 sin 2φ`,
//!   `φ` the angle between wind and conductor axis folded to `[0°, 90°]`
//! * forced convection `q_c1 = K (1.01 + 1.35 Re^0.52) k ΔT`,
//!   `q_c2 = K 0.754 Re^0.6 k ΔT`
//! * natural convection `q_cn = 3.645 ρ^0.5 D^0.75 ΔT^1.25`
//! * `q_c = max(q_c1, q_c2, q_cn)`
//! * radiation `q_r = 17.8 D ε [((T_max + 273)/100)^4 − ((T_a + 273)/100)^4]`
//! * solar gain on the projected area `q_s = α S D`

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConductorParams {
    /// Outside diameter, m.
    pub diameter_m: f64,
    /// AC resistance at `max_conductor_temp_c`, Ω/m.
    pub resistance_ohm_per_m: f64,
    pub emissivity: f64,
    pub absorptivity: f64,
    pub max_conductor_temp_c: f64,
    /// Conductor elevation above sea level, m.
    #[serde(default)]
    pub elevation_m: f64,
}

impl ConductorParams {
    /// 795 kcmil 26/7 ACSR "Drake" rated at 100 °C.
    pub fn drake() -> Self {
        ConductorParams {
            diameter_m: 0.02814,
            resistance_ohm_per_m: 9.390e-5,
            emissivity: 0.8,
            absorptivity: 0.8,
            max_conductor_temp_c: 100.0,
            elevation_m: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("diameter_m", self.diameter_m),
            ("resistance_ohm_per_m", self.resistance_ohm_per_m),
            ("emissivity", self.emissivity),
            ("absorptivity", self.absorptivity),
            ("max_conductor_temp_c", self.max_conductor_temp_c),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "conductor {name} must be positive, got {v}"
                )));
            }
        }
        if self.emissivity > 1.0 || self.absorptivity > 1.0 {
            return Err(Error::InvalidInput(
                "emissivity and absorptivity must not exceed 1".into(),
            ));
        }
        if !self.elevation_m.is_finite() {
            return Err(Error::InvalidInput("conductor elevation must be finite".into()));
        }
        Ok(())
    }
}

impl Default for ConductorParams {
    fn default() -> Self {
        ConductorParams::drake()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherSample {
    /// °C
    pub ambient_temp: f64,
    /// m/s
    pub wind_speed: f64,
    /// Degrees in `[0, 360)`.
    pub wind_direction: f64,
    /// W/m²
    pub solar_radiation: f64,
}

impl WeatherSample {
    pub fn validate(&self) -> Result<()> {
        let ok = self.ambient_temp.is_finite()
            && self.wind_speed.is_finite()
            && self.wind_speed >= 0.0
            && (0.0..360.0).contains(&self.wind_direction)
            && self.solar_radiation.is_finite()
            && self.solar_radiation >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid weather sample {self:?}")))
        }
    }
}

/// Individual heat-balance terms, W/m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatBalance {
    pub forced_low: f64,
    pub forced_high: f64,
    pub natural: f64,
    pub convective: f64,
    pub radiative: f64,
    pub solar: f64,
}

/// Angle between wind and conductor axis folded to `[0°, 90°]`.
pub fn attack_angle_deg(wind_direction: f64, line_azimuth: f64) -> f64 {
    let d = (wind_direction - line_azimuth).rem_euclid(180.0);
    if d > 90.0 {
        180.0 - d
    } else {
        d
    }
}

pub fn heat_balance(params: &ConductorParams, w: &WeatherSample, line_azimuth: f64) -> HeatBalance {
    let ts = params.max_conductor_temp_c;
    let ta = w.ambient_temp;
    let dt = ts - ta;
    let t_film = 0.5 * (ts + ta);
    let h = params.elevation_m;
    let d = params.diameter_m;

    let mu = 1.458e-6 * (t_film + 273.0).powf(1.5) / (t_film + 383.4);
    let rho = (1.293 - 1.525e-4 * h + 6.379e-9 * h * h) / (1.0 + 0.00367 * t_film);
    let k = 2.424e-2 + 7.477e-5 * t_film - 4.407e-9 * t_film * t_film;
    let re = d * rho * w.wind_speed / mu;

    let phi = attack_angle_deg(w.wind_direction, line_azimuth).to_radians();
    let k_angle = 1.194 - phi.cos() + 0.194 * (2.0 * phi).cos() + 0.368 * (2.0 * phi).sin();

    let forced_low = k_angle * (1.01 + 1.35 * re.powf(0.52)) * k * dt;
    let forced_high = k_angle * 0.754 * re.powf(0.6) * k * dt;
    let natural = 3.645 * rho.sqrt() * d.powf(0.75) * dt.max(0.0).powf(1.25);
    let convective = forced_low.max(forced_high).max(natural);

    let radiative = 17.8 * d * params.emissivity * (((ts + 273.0) / 100.0).powi(4) - ((ta + 273.0) / 100.0).powi(4));
    let solar = params.absorptivity * w.solar_radiation * d;

    HeatBalance {
        forced_low,
        forced_high,
        natural,
        convective,
        radiative,
        solar,
    }
}

/// Steady-state ampacity in amperes.
pub fn ampacity(params: &ConductorParams, w: &WeatherSample, line_azimuth: f64) -> Result<f64> {
    if w.ambient_temp >= params.max_conductor_temp_c {
        return Err(Error::AmbientTooHot {
            ambient: w.ambient_temp,
            max: params.max_conductor_temp_c,
        });
    }
    let hb = heat_balance(params, w, line_azimuth);
    let net = (hb.convective + hb.radiative - hb.solar).max(0.0);
    Ok((net / params.resistance_ohm_per_m).sqrt())
}

/// Element-wise ampacity for per-line weather series.
pub fn dlr_series(
    params: &ConductorParams,
    weather: &[Vec<WeatherSample>],
    azimuths: &[f64],
    exec: Execution,
) -> Result<Vec<Vec<f64>>> {
    if weather.len() != azimuths.len() {
        return Err(Error::InvalidInput(format!(
            "{} weather series for {} azimuths",
            weather.len(),
            azimuths.len()
        )));
    }
    exec.try_map(weather.len(), |i| {
        weather[i].iter().map(|w| ampacity(params, w, azimuths[i])).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn still(temp: f64) -> WeatherSample {
        WeatherSample {
            ambient_temp: temp,
            wind_speed: 0.0,
            wind_direction: 0.0,
            solar_radiation: 0.0,
        }
    }

    #[test]
    fn rating_vanishes_near_max_temperature() {
        let p = ConductorParams::drake();
        let far = ampacity(&p, &still(40.0), 0.0).unwrap();
        let near = ampacity(&p, &still(99.0), 0.0).unwrap();
        let nearer = ampacity(&p, &still(99.99), 0.0).unwrap();
        assert!(far > near && near > nearer && nearer > 0.0);
        assert!(nearer < 0.02 * far);
    }

    #[test]
    fn rejects_ambient_at_or_above_max() {
        let p = ConductorParams::drake();
        assert!(matches!(
            ampacity(&p, &still(100.0), 0.0),
            Err(Error::AmbientTooHot { .. })
        ));
    }

    #[test]
    fn more_wind_more_ampacity() {
        let p = ConductorParams::drake();
        let mut w = still(30.0);
        w.wind_direction = 90.0;
        w.wind_speed = 0.6;
        let slow = ampacity(&p, &w, 0.0).unwrap();
        w.wind_speed = 5.0;
        assert!(ampacity(&p, &w, 0.0).unwrap() > slow);
    }

    #[test]
    fn attack_angle_folding() {
        assert_eq!(attack_angle_deg(90.0, 0.0), 90.0);
        assert_eq!(attack_angle_deg(270.0, 0.0), 90.0);
        assert_eq!(attack_angle_deg(10.0, 350.0), 20.0);
        assert_eq!(attack_angle_deg(180.0, 0.0), 0.0);
        assert_eq!(attack_angle_deg(135.0, 0.0), 45.0);
    }

    #[test]
    fn full_sun_without_wind_can_exhaust_capacity() {
        let p = ConductorParams::drake();
        let mut w = still(99.9);
        w.solar_radiation = 1000.0;
        assert_eq!(ampacity(&p, &w, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn series_edge_cases() {
        let p = ConductorParams::drake();
        let empty = dlr_series(&p, &[vec![]], &[0.0], Execution::Sequential).unwrap();
        assert_eq!(empty, vec![Vec::<f64>::new()]);
        let w = WeatherSample {
            ambient_temp: 25.0,
            wind_speed: 2.0,
            wind_direction: 45.0,
            solar_radiation: 500.0,
        };
        let s = dlr_series(&p, &[vec![w; 5]], &[10.0], Execution::Sequential).unwrap();
        assert!(s[0].windows(2).all(|p| p[0] == p[1]));
        assert!(dlr_series(&p, &[vec![w]], &[], Execution::Sequential).is_err());
    }

    #[test]
    fn conductor_validation() {
        assert!(ConductorParams::drake().validate().is_ok());
        let mut p = ConductorParams::drake();
        p.emissivity = 1.2;
        assert!(p.validate().is_err());
        p = ConductorParams::drake();
        p.diameter_m = 0.0;
        assert!(p.validate().is_err());
    }
}
