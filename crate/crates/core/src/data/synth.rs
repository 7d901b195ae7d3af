use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ExogenousMatrix, PanelDataset, StateId, StateSeries, TimeSeries};
use crate::error::{Error, Result};

const UF_CODES: [&str; 27] = [
    "AC", "AL", "AM", "AP", "BA", "CE", "DF", "ES", "GO", "MA", "MG", "MS", "MT", "PA", "PB", "PE", "PI", "PR", "RJ",
    "RN", "RO", "RR", "RS", "SC", "SE", "SP", "TO",
];

fn state_codes(n: usize) -> Vec<StateId> {
    let mut codes: Vec<String> = UF_CODES.iter().take(n).map(|s| s.to_string()).collect();
    let mut extra = (b'A'..=b'Z')
        .flat_map(|a| (b'A'..=b'Z').map(move |b| format!("{}{}", a as char, b as char)))
        .filter(|c| !UF_CODES.contains(&c.as_str()));
    while codes.len() < n {
        codes.push(extra.next().expect("at most 676 states"));
    }
    codes
        .iter()
        .map(|c| StateId::new(c).expect("generated codes are valid"))
        .collect()
}

/// Generates a deterministic synthetic panel.
///
/// Each state's log case intensity is a seasonal sinusoid with
/// state-specific level, amplitude and phase plus a seasonal AR(1)x(1)
/// disturbance; counts are the rounded exponential. Exogenous columns are
/// noisy, leading copies of the seasonal driver (weather and satellite
/// style), noisy copies of the current log intensity (search-trend style),
/// pure noise, and one constant column. States are joined in a ring.
pub fn synthesize_panel(seed: u64, n_states: usize, n_weeks: usize, season_length: usize) -> Result<PanelDataset> {
    if n_states == 0 || n_states > 676 {
        return Err(Error::InvalidInput(format!(
            "n_states must be in 1..=676, got {n_states}"
        )));
    }
    if season_length < 2 {
        return Err(Error::InvalidInput(format!(
            "season length must be at least 2, got {season_length}"
        )));
    }
    if n_weeks < 3 * season_length {
        return Err(Error::InvalidInput(format!(
            "n_weeks ({n_weeks}) must be at least three seasons ({})",
            3 * season_length
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = state_codes(n_states);
    let s = season_length as f64;
    let std_normal = Normal::new(0.0, 1.0).expect("valid");

    let mut states = BTreeMap::new();
    let mut population = BTreeMap::new();
    for id in &ids {
        let level: f64 = rng.random_range(3.5..6.5);
        let amplitude: f64 = rng.random_range(0.8..1.4);
        let phase: f64 = rng.random_range(0.0..s / 8.0);
        let driver = |t: f64| (2.0 * PI * (t + phase) / s).sin();

        // seasonal AR disturbance, burned in for one season
        let burn = season_length;
        let mut z = vec![0.0; n_weeks + burn];
        for t in 0..z.len() {
            let ar = if t >= 1 { 0.6 * z[t - 1] } else { 0.0 };
            let sar = if t >= season_length {
                0.2 * z[t - season_length]
            } else {
                0.0
            };
            z[t] = ar + sar + 0.15 * std_normal.sample(&mut rng);
        }
        let z = &z[burn..];

        let log_intensity: Vec<f64> = (0..n_weeks)
            .map(|t| level + amplitude * driver(t as f64) + z[t])
            .collect();
        let cases: Vec<f64> = log_intensity.iter().map(|x| x.exp().round()).collect();

        let mut exog = ExogenousMatrix::new(n_weeks);
        let mut noisy = |center: f64, scale: f64, lead: f64, sd: f64| -> Vec<f64> {
            (0..n_weeks)
                .map(|t| center + scale * driver(t as f64 + lead) + sd * std_normal.sample(&mut rng))
                .collect()
        };
        let columns = [
            ("temp_mean", noisy(25.0, 3.0, 4.0, 0.5)),
            ("temp_max", noisy(30.0, 3.5, 4.0, 0.7)),
            ("humidity_mean", noisy(70.0, 10.0, 2.0, 3.0)),
            ("ndvi_mean", noisy(0.5, 0.1, 6.0, 0.03)),
            ("ndwi_mean", noisy(0.2, 0.05, 3.0, 0.02)),
            ("noise_a", noisy(0.0, 0.0, 0.0, 1.0)),
            ("noise_b", noisy(0.0, 0.0, 0.0, 1.0)),
        ];
        for (name, col) in columns {
            exog.insert(name, col)?;
        }
        let mut trend = |scale: f64, sd: f64| -> Vec<f64> {
            log_intensity
                .iter()
                .map(|x| 20.0 + scale * (x - level) + sd * std_normal.sample(&mut rng))
                .collect()
        };
        exog.insert("gt_dengue", trend(8.0, 1.5))?;
        exog.insert("gt_mosquito", trend(4.0, 2.0))?;
        exog.insert("cloud_flag", vec![0.0; n_weeks])?;

        states.insert(
            id.clone(),
            StateSeries {
                cases: TimeSeries::new(id.as_str(), cases)?,
                exog,
            },
        );
        let log_pop: f64 = rng.random_range(5.7..7.3);
        population.insert(id.clone(), 10f64.powf(log_pop).round() as u64);
    }

    let mut edges = Vec::new();
    match n_states {
        1 => {}
        2 => edges.push((ids[0].clone(), ids[1].clone())),
        n => {
            for i in 0..n {
                edges.push((ids[i].clone(), ids[(i + 1) % n].clone()));
            }
        }
    }
    PanelDataset::new(n_weeks, states, &edges, population)
}
