//! Seeded synthetic cohort standing in for restricted clinical data.
//!
//! Each patient has a latent severity that follows a per-visit random walk
//! with drift. Markers are noisy linear readouts of severity; `age` advances
//! with calendar time. At every visit after the first a not-yet-converted
//! patient converts with probability
//! `sigmoid(intercept + hazard_severity * s + hazard_time * cumulative_years)`.
//! Severity moves per visit, not per unit time, so with `hazard_time = 0`
//! conversion is independent of the gap lengths.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetHeader, PatientRecord, Visit};
use crate::autograd::sigmoid;
use crate::error::{Error, Result};
use crate::time_embedding::TimeUnit;

const DAYS_PER_YEAR: f64 = 365.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Conversion is driven almost entirely by observed severity.
    Separable,
    /// Conversion depends strongly on cumulative elapsed time.
    TimeDependent,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Separable => "separable",
            Preset::TimeDependent => "time-dependent",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "separable" => Ok(Preset::Separable),
            "time-dependent" | "time" => Ok(Preset::TimeDependent),
            _ => Err(Error::Config(format!("unknown generator preset {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub patients: usize,
    pub min_visits: usize,
    pub max_visits: usize,
    /// Marker features besides `age`.
    pub markers: usize,
    pub unit: TimeUnit,
    /// Gaps are lognormal in years, clipped to `[gap_min, gap_max]`.
    pub gap_log_mean: f64,
    pub gap_log_sd: f64,
    pub gap_min: f64,
    pub gap_max: f64,
    pub age_mean: f64,
    pub age_sd: f64,
    pub severity_drift_mean: f64,
    pub severity_drift_sd: f64,
    pub severity_walk_sd: f64,
    pub marker_noise: f64,
    /// Per-cell probability that a marker is missing.
    pub missing_rate: f64,
    pub hazard_intercept: f64,
    pub hazard_severity: f64,
    pub hazard_time: f64,
}

impl GeneratorConfig {
    pub fn preset(preset: Preset, patients: usize, unit: TimeUnit) -> Self {
        let base = GeneratorConfig {
            patients,
            min_visits: 4,
            max_visits: 8,
            markers: 5,
            unit,
            gap_log_mean: 0.0,
            gap_log_sd: 0.5,
            gap_min: 0.25,
            gap_max: 3.0,
            age_mean: 72.0,
            age_sd: 6.0,
            severity_drift_mean: 0.0,
            severity_drift_sd: 0.02,
            severity_walk_sd: 0.02,
            marker_noise: 0.15,
            missing_rate: 0.02,
            hazard_intercept: -6.0,
            hazard_severity: 20.0,
            hazard_time: 0.2,
        };
        match preset {
            Preset::Separable => GeneratorConfig {
                severity_drift_sd: 0.0,
                severity_walk_sd: 0.01,
                marker_noise: 0.1,
                hazard_intercept: -12.0,
                hazard_severity: 40.0,
                ..base
            },
            Preset::TimeDependent => GeneratorConfig {
                gap_log_sd: 0.7,
                severity_drift_sd: 0.0,
                severity_walk_sd: 0.05,
                marker_noise: 0.2,
                hazard_intercept: -12.0,
                hazard_severity: 2.0,
                hazard_time: 2.5,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(format!("generator: {msg}")));
        if self.min_visits < 2 || self.max_visits < self.min_visits {
            return fail("visit counts need 2 <= min_visits <= max_visits");
        }
        if !(self.gap_min > 0.0) || !(self.gap_max >= self.gap_min) || !self.gap_max.is_finite() {
            return fail("gap bounds need 0 < gap_min <= gap_max");
        }
        let scales = [
            self.gap_log_sd,
            self.age_sd,
            self.severity_drift_sd,
            self.severity_walk_sd,
            self.marker_noise,
        ];
        if scales.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return fail("standard deviations must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return fail("missing_rate must lie in [0, 1)");
        }
        let finite = [
            self.gap_log_mean,
            self.age_mean,
            self.severity_drift_mean,
            self.hazard_intercept,
            self.hazard_severity,
            self.hazard_time,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return fail("location and hazard parameters must be finite");
        }
        Ok(())
    }

    pub fn feature_names(&self) -> Vec<String> {
        std::iter::once("age".to_string())
            .chain((1..=self.markers).map(|k| format!("marker_{k}")))
            .collect()
    }

    /// Alternating-sign loadings shrinking from 1 to 0.5.
    fn loading(&self, k: usize) -> f64 {
        let frac = if self.markers > 1 {
            k as f64 / (self.markers - 1) as f64
        } else {
            0.0
        };
        let mag = 1.0 - 0.5 * frac;
        if k.is_multiple_of(2) {
            mag
        } else {
            -mag
        }
    }
}

/// Provenance and summary of one generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataCard {
    pub seed: u64,
    pub config: GeneratorConfig,
    pub patients: usize,
    pub visits: usize,
    /// Patients whose final visit is labelled positive.
    pub converters: usize,
    /// Mean gap between consecutive visits, in years.
    pub mean_gap_years: f64,
}

impl DataCard {
    pub fn to_text(&self) -> String {
        let mut out = String::from("# synthetic dataset card\n");
        out.push_str(&format!("seed: {}\n", self.seed));
        out.push_str(&format!("patients: {}\n", self.patients));
        out.push_str(&format!("visits: {}\n", self.visits));
        out.push_str(&format!("converters: {}\n", self.converters));
        out.push_str(&format!("mean_gap_years: {}\n", self.mean_gap_years));
        out.push_str("\n# generator parameters\n");
        if let Ok(serde_json::Value::Object(fields)) = serde_json::to_value(&self.config) {
            for (k, v) in fields {
                out.push_str(&format!("{k}: {v}\n"));
            }
        }
        out
    }
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("validated standard deviation")
}

pub fn generate_synthetic(cfg: &GeneratorConfig, seed: u64) -> Result<(Dataset, DataCard)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap_dist = LogNormal::new(cfg.gap_log_mean, cfg.gap_log_sd)
        .map_err(|e| Error::Config(format!("generator gap distribution: {e}")))?;
    let unit_scale = match cfg.unit {
        TimeUnit::Years => 1.0,
        TimeUnit::Days => DAYS_PER_YEAR,
    };
    let std_normal = normal(0.0, 1.0);
    let age_dist = normal(cfg.age_mean, cfg.age_sd);
    let drift_dist = normal(cfg.severity_drift_mean, cfg.severity_drift_sd);
    let walk_dist = normal(0.0, cfg.severity_walk_sd);
    let noise_dist = normal(0.0, cfg.marker_noise);
    let education_dist = normal(15.0, 3.0);

    let mut patients = Vec::with_capacity(cfg.patients);
    let mut gap_total = 0.0;
    let mut gap_count = 0usize;
    for i in 0..cfg.patients {
        let n_visits = rng.random_range(cfg.min_visits..=cfg.max_visits);
        let age0 = age_dist.sample(&mut rng);
        let sex = f64::from(u8::from(rng.random_bool(0.5)));
        let education = education_dist.sample(&mut rng).round().clamp(8.0, 22.0);
        let mut severity = std_normal.sample(&mut rng);
        let drift = drift_dist.sample(&mut rng);

        let mut years = 0.0;
        let mut converted = false;
        let mut visits = Vec::with_capacity(n_visits);
        for v in 0..n_visits {
            let mut gap = 0.0;
            if v > 0 {
                gap = gap_dist.sample(&mut rng).clamp(cfg.gap_min, cfg.gap_max);
                years += gap;
                gap_total += gap;
                gap_count += 1;
                severity += drift + walk_dist.sample(&mut rng);
                if !converted {
                    let logit = cfg.hazard_intercept
                        + cfg.hazard_severity * severity
                        + cfg.hazard_time * years;
                    converted = rng.random::<f64>() < sigmoid(logit);
                }
            }
            let mut features = Vec::with_capacity(cfg.markers + 1);
            features.push(Some(age0 + years));
            for k in 0..cfg.markers {
                let value = cfg.loading(k) * severity + noise_dist.sample(&mut rng);
                let missing = rng.random::<f64>() < cfg.missing_rate;
                features.push((!missing).then_some(value));
            }
            visits.push(Visit {
                features,
                elapsed: gap * unit_scale,
                label: u8::from(converted),
            });
        }
        patients.push(PatientRecord {
            id: format!("P{i:05}"),
            visits,
            demographics: vec![sex, education],
        });
    }

    let header = DatasetHeader {
        feature_names: cfg.feature_names(),
        demographic_names: vec!["sex".into(), "education".into()],
        unit: cfg.unit,
    };
    let ds = Dataset::new(header, patients)?;
    let card = DataCard {
        seed,
        config: cfg.clone(),
        patients: ds.len(),
        visits: ds.patients.iter().map(|p| p.visits.len()).sum(),
        converters: ds.patients.iter().filter(|p| p.outcome() == 1).count(),
        mean_gap_years: if gap_count == 0 {
            0.0
        } else {
            gap_total / gap_count as f64
        },
    };
    Ok((ds, card))
}
