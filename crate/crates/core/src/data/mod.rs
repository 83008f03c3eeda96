//! Longitudinal patient records, their on-disk format, synthetic generation,
//! preprocessing and windowing into fixed-length training samples.

mod generate;
mod io;
mod preprocess;
mod window;

pub use generate::{generate_synthetic, GeneratorConfig, Preset};
pub use io::{load_dataset, read_dataset, save_dataset, write_dataset, DATASET_FORMAT, DATASET_VERSION};
pub use preprocess::{knn_impute, normalize, MinMaxScaler, Preprocessor, DEFAULT_K};
pub use window::{window_dataset, Windowed, WindowedSample};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time_embedding::TimeUnit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    /// `None` marks a missing measurement.
    pub features: Vec<Option<f64>>,
    /// Time since the previous visit; 0 for the first.
    pub elapsed: f64,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub visits: Vec<Visit>,
    pub demographics: Vec<f64>,
}

impl PatientRecord {
    /// Checks widths and the visit invariants against a header.
    pub fn validate(&self, header: &DatasetHeader) -> Result<()> {
        let fail = |msg: String| Err(Error::Data(format!("patient {}: {msg}", self.id)));
        if self.visits.len() < 2 {
            return fail(format!("needs at least 2 visits, has {}", self.visits.len()));
        }
        if self.demographics.len() != header.demographic_names.len() {
            return fail(format!(
                "{} demographic values, header names {}",
                self.demographics.len(),
                header.demographic_names.len()
            ));
        }
        if self.demographics.iter().any(|d| !d.is_finite()) {
            return fail("non-finite demographic value".into());
        }
        for (i, v) in self.visits.iter().enumerate() {
            if v.features.len() != header.feature_names.len() {
                return fail(format!(
                    "visit {i} has {} features, header names {}",
                    v.features.len(),
                    header.feature_names.len()
                ));
            }
            if v.features.iter().flatten().any(|x| !x.is_finite()) {
                return fail(format!("visit {i} has a non-finite feature"));
            }
            if !(v.elapsed >= 0.0) || !v.elapsed.is_finite() {
                return fail(format!("visit {i} has elapsed time {}", v.elapsed));
            }
            if v.label > 1 {
                return fail(format!("visit {i} has label {}", v.label));
            }
        }
        if self.visits[0].elapsed != 0.0 {
            return fail(format!(
                "first visit elapsed time must be 0, got {}",
                self.visits[0].elapsed
            ));
        }
        Ok(())
    }

    /// Label of the final visit.
    pub fn outcome(&self) -> u8 {
        self.visits.last().map_or(0, |v| v.label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub feature_names: Vec<String>,
    pub demographic_names: Vec<String>,
    pub unit: TimeUnit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub patients: Vec<PatientRecord>,
}

impl Dataset {
    pub fn new(header: DatasetHeader, patients: Vec<PatientRecord>) -> Result<Self> {
        for p in &patients {
            p.validate(&header)?;
        }
        Ok(Dataset { header, patients })
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn with_patients(&self, patients: Vec<PatientRecord>) -> Dataset {
        Dataset {
            header: self.header.clone(),
            patients,
        }
    }

    /// Largest single gap across all visits.
    pub fn max_elapsed(&self) -> f64 {
        self.patients
            .iter()
            .flat_map(|p| p.visits.iter().map(|v| v.elapsed))
            .fold(0.0, f64::max)
    }

    /// Seeded patient-level split, stratified by final-visit label so both
    /// parts keep the class mix. Returns `(train, test)`.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::Config(format!(
                "test fraction must lie in [0, 1), got {test_fraction}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for class in [0u8, 1] {
            let mut idx: Vec<usize> = (0..self.patients.len())
                .filter(|&i| self.patients[i].outcome() == class)
                .collect();
            idx.shuffle(&mut rng);
            let n_test = (idx.len() as f64 * test_fraction).round() as usize;
            test.extend_from_slice(&idx[..n_test]);
            train.extend_from_slice(&idx[n_test..]);
        }
        // Keep file order within each part.
        train.sort_unstable();
        test.sort_unstable();
        let pick = |ix: &[usize]| ix.iter().map(|&i| self.patients[i].clone()).collect();
        Ok((self.with_patients(pick(&train)), self.with_patients(pick(&test))))
    }
}
