//! Fixed-length windows: the first `m` visits predict the label `n` visits
//! after the window ends.

use super::Dataset;
use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::models::Inputs;
use crate::time_embedding::ElapsedTimes;

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSample {
    pub patient_id: String,
    /// `[m × F]`
    pub x: Tensor,
    pub elapsed: ElapsedTimes,
    pub demographics: Vec<f64>,
    pub label: u8,
    /// `(m, n)`
    pub scenario: (usize, usize),
}

impl WindowedSample {
    pub fn inputs(&self) -> Inputs<'_> {
        Inputs {
            x: &self.x,
            elapsed: &self.elapsed,
            demographics: &self.demographics,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Windowed {
    pub samples: Vec<WindowedSample>,
    /// Patients with fewer than `m + n` visits.
    pub skipped: usize,
    /// Names of the retained feature columns.
    pub feature_names: Vec<String>,
}

/// One sample per patient from the earliest window: visits `0..m` as input,
/// label from visit `m + n` (1-based). Features named in `exclude` are
/// dropped. Every retained cell must be observed, so impute first.
pub fn window_dataset(ds: &Dataset, m: usize, n: usize, exclude: &[String]) -> Result<Windowed> {
    if m < 2 || n < 1 {
        return Err(Error::Contract(format!(
            "window needs m >= 2 and n >= 1, got m={m}, n={n}"
        )));
    }
    let names = &ds.header.feature_names;
    if let Some(unknown) = exclude.iter().find(|e| !names.contains(e)) {
        return Err(Error::Data(format!("cannot exclude unknown feature {unknown:?}")));
    }
    let keep: Vec<usize> = (0..names.len()).filter(|&j| !exclude.contains(&names[j])).collect();
    if keep.is_empty() {
        return Err(Error::Data("every feature was excluded".into()));
    }
    let unit = ds.header.unit;

    let mut samples = Vec::new();
    let mut skipped = 0;
    for p in &ds.patients {
        if p.visits.len() < m + n {
            skipped += 1;
            continue;
        }
        let window = &p.visits[..m];
        let mut data = Vec::with_capacity(m * keep.len());
        for (t, v) in window.iter().enumerate() {
            for &j in &keep {
                data.push(v.features[j].ok_or_else(|| {
                    Error::Data(format!(
                        "patient {}: visit {t} feature {:?} is missing; impute before windowing",
                        p.id, names[j]
                    ))
                })?);
            }
        }
        let mut elapsed: Vec<f64> = window.iter().map(|v| v.elapsed).collect();
        elapsed[0] = 0.0;
        samples.push(WindowedSample {
            patient_id: p.id.clone(),
            x: Tensor::matrix(m, keep.len(), data)?,
            elapsed: ElapsedTimes::new(elapsed, unit)?,
            demographics: p.demographics.clone(),
            label: p.visits[m + n - 1].label,
            scenario: (m, n),
        });
    }
    Ok(Windowed {
        samples,
        skipped,
        feature_names: keep.iter().map(|&j| names[j].clone()).collect(),
    })
}
