use dlr_core::thermal::{ampacity, ConductorParams, WeatherSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Ampacity of the reference Drake operating point (100 °C conductor, 40 °C
/// air, 0.61 m/s wind perpendicular to the line, 1000 W/m² sun, sea level),
/// evaluated term by term outside this crate and frozen here.
const DRAKE_REFERENCE_A: f64 = 1025.1188;

fn reference_weather() -> WeatherSample {
    WeatherSample {
        ambient_temp: 40.0,
        wind_speed: 0.61,
        wind_direction: 90.0,
        solar_radiation: 1000.0,
    }
}

#[test]
fn reference_operating_point() {
    let got = ampacity(&ConductorParams::drake(), &reference_weather(), 0.0).unwrap();
    assert!((got - DRAKE_REFERENCE_A).abs() / DRAKE_REFERENCE_A < 0.05, "{got}");
    assert!((got - DRAKE_REFERENCE_A).abs() < 1e-3, "{got}");
}

#[test]
fn reference_point_by_hand() {
    // Forced convection dominates at this wind speed; radiation and solar
    // gain use the simplified SI expressions.
    let (ts, ta, d, v) = (100.0f64, 40.0f64, 0.02814f64, 0.61f64);
    let tf = (ts + ta) / 2.0;
    let mu = 1.458e-6 * (tf + 273.0).powf(1.5) / (tf + 383.4);
    let rho = 1.293 / (1.0 + 0.00367 * tf);
    let k = 2.424e-2 + 7.477e-5 * tf - 4.407e-9 * tf * tf;
    let re = d * rho * v / mu;
    // perpendicular wind: K_angle = 1.194 - cos 90° + 0.194 cos 180° + 0.368 sin 180°
    let k_angle = 1.194 - 0.194;
    let qc = k_angle * (1.01 + 1.35 * re.powf(0.52)) * k * (ts - ta);
    let qr = 17.8 * d * 0.8 * (3.73f64.powi(4) - 3.13f64.powi(4));
    let qs = 0.8 * 1000.0 * d;
    let hand = ((qc + qr - qs) / 9.390e-5).sqrt();
    let got = ampacity(&ConductorParams::drake(), &reference_weather(), 0.0).unwrap();
    assert!((got - hand).abs() / hand < 1e-9, "{got} vs {hand}");
}

fn random_sample(rng: &mut ChaCha8Rng) -> WeatherSample {
    WeatherSample {
        ambient_temp: rng.random_range(-20.0..45.0),
        wind_speed: rng.random_range(0.0..15.0),
        wind_direction: rng.random_range(0.0..360.0),
        solar_radiation: rng.random_range(0.0..1100.0),
    }
}

#[test]
fn monotone_in_wind_and_ambient() {
    let p = ConductorParams::drake();
    let mut rng = ChaCha8Rng::seed_from_u64(738);
    for _ in 0..1000 {
        let w = random_sample(&mut rng);
        let az = rng.random_range(0.0..360.0);
        let base = ampacity(&p, &w, az).unwrap();

        let windier = WeatherSample {
            wind_speed: w.wind_speed + rng.random_range(0.05..3.0),
            ..w
        };
        let hotter = WeatherSample {
            ambient_temp: w.ambient_temp + rng.random_range(0.1..10.0),
            ..w
        };
        let a_wind = ampacity(&p, &windier, az).unwrap();
        let a_hot = ampacity(&p, &hotter, az).unwrap();
        assert!(a_wind >= base, "wind {w:?}: {a_wind} < {base}");
        assert!(a_hot <= base, "ambient {w:?}: {a_hot} > {base}");
        if base > 0.0 {
            assert!(a_hot < base);
        }
    }
}

#[test]
fn crosswind_cools_best() {
    let p = ConductorParams::drake();
    let w = |dir| WeatherSample {
        wind_direction: dir,
        ..reference_weather()
    };
    let cross = ampacity(&p, &w(90.0), 0.0).unwrap();
    let oblique = ampacity(&p, &w(45.0), 0.0).unwrap();
    let parallel = ampacity(&p, &w(0.0), 0.0).unwrap();
    assert!(cross > oblique && oblique > parallel);
    assert_eq!(ampacity(&p, &w(270.0), 0.0).unwrap(), cross);
}
