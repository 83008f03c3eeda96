//! KNN imputation and min-max scaling.

use serde::{Deserialize, Serialize};

use super::{Dataset, PatientRecord, Visit};
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 5;

fn check_width<T>(rows: &[Vec<T>], op: &'static str) -> Result<usize> {
    let width = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != width) {
        return Err(Error::dim(op, &[width], &[bad.len()]));
    }
    Ok(width)
}

/// Distance over co-observed columns, scaled by `sqrt(F / |co-observed|)`;
/// infinite when no column is observed in both rows.
fn partial_distance(a: &[Option<f64>], b: &[Option<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut shared = 0usize;
    for (x, y) in a.iter().zip(b) {
        if let (Some(x), Some(y)) = (x, y) {
            sum += (x - y).powi(2);
            shared += 1;
        }
    }
    if shared == 0 {
        f64::INFINITY
    } else {
        (sum * a.len() as f64 / shared as f64).sqrt()
    }
}

/// Fills each missing cell with the mean of that column over the `k`
/// nearest other rows observing it. Observed cells are copied unchanged.
pub fn knn_impute(table: &[Vec<Option<f64>>], k: usize) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(Error::Contract("k must be at least 1".into()));
    }
    let width = check_width(table, "knn_impute")?;
    if table.is_empty() {
        return Ok(Vec::new());
    }
    let empty: Vec<String> = (0..width)
        .filter(|&j| table.iter().all(|r| r[j].is_none()))
        .map(|j| j.to_string())
        .collect();
    if !empty.is_empty() {
        return Err(Error::Data(format!(
            "cannot impute columns with no observed values: {}",
            empty.join(", ")
        )));
    }

    let mut out = Vec::with_capacity(table.len());
    for (i, row) in table.iter().enumerate() {
        if row.iter().all(Option::is_some) {
            out.push(row.iter().map(|v| v.unwrap_or_default()).collect());
            continue;
        }
        let mut neighbours: Vec<(f64, usize)> = table
            .iter()
            .enumerate()
            .filter(|&(r, _)| r != i)
            .map(|(r, other)| (partial_distance(row, other), r))
            .collect();
        neighbours.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let filled = row
            .iter()
            .enumerate()
            .map(|(j, v)| {
                v.unwrap_or_else(|| {
                    let donors: Vec<f64> = neighbours
                        .iter()
                        .filter_map(|&(_, r)| table[r][j])
                        .take(k)
                        .collect();
                    donors.iter().sum::<f64>() / donors.len() as f64
                })
            })
            .collect();
        out.push(filled);
    }
    Ok(out)
}

/// Per-column min-max scaling to `[0, 1]` over the fitted range. Values
/// outside that range map outside `[0, 1]`; constant columns map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let partial: Vec<Vec<Option<f64>>> = rows
            .iter()
            .map(|r| r.iter().copied().map(Some).collect())
            .collect();
        Self::fit_partial(&partial)
    }

    /// Fits on observed cells only.
    pub fn fit_partial(rows: &[Vec<Option<f64>>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data("cannot fit a scaler on zero rows".into()));
        }
        let width = check_width(rows, "MinMaxScaler::fit")?;
        let mut min = vec![f64::INFINITY; width];
        let mut max = vec![f64::NEG_INFINITY; width];
        for row in rows {
            for (j, v) in row.iter().enumerate() {
                if let Some(v) = *v {
                    min[j] = min[j].min(v);
                    max[j] = max[j].max(v);
                }
            }
        }
        if let Some(j) = min.iter().position(|m| !m.is_finite()) {
            return Err(Error::Data(format!("column {j} has no finite observed values")));
        }
        Ok(MinMaxScaler { min, max })
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    pub fn transform_value(&self, j: usize, v: f64) -> f64 {
        let range = self.max[j] - self.min[j];
        if range > 0.0 {
            (v - self.min[j]) / range
        } else {
            0.0
        }
    }

    pub fn inverse_value(&self, j: usize, v: f64) -> f64 {
        let range = self.max[j] - self.min[j];
        if range > 0.0 {
            v * range + self.min[j]
        } else {
            self.min[j]
        }
    }

    fn check(&self, row_len: usize) -> Result<()> {
        if row_len != self.width() {
            return Err(Error::dim("MinMaxScaler", &[self.width()], &[row_len]));
        }
        Ok(())
    }

    pub fn transform(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter()
            .map(|r| {
                self.check(r.len())?;
                Ok(r.iter().enumerate().map(|(j, &v)| self.transform_value(j, v)).collect())
            })
            .collect()
    }

    pub fn inverse_transform(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter()
            .map(|r| {
                self.check(r.len())?;
                Ok(r.iter().enumerate().map(|(j, &v)| self.inverse_value(j, v)).collect())
            })
            .collect()
    }
}

/// Fits the scaler on `train` only and applies it to both matrices.
pub fn normalize(
    train: &[Vec<f64>],
    apply_to: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, MinMaxScaler)> {
    let scaler = MinMaxScaler::fit(train)?;
    Ok((scaler.transform(train)?, scaler.transform(apply_to)?, scaler))
}

/// Fitted preprocessing: features are scaled first, then imputed in the
/// scaled space so that no single wide-ranged column dominates distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub k: usize,
    pub features: MinMaxScaler,
    pub demographics: MinMaxScaler,
}

impl Preprocessor {
    /// Fits on `train` and returns it preprocessed.
    pub fn fit(train: &Dataset, k: usize) -> Result<(Preprocessor, Dataset)> {
        if train.is_empty() {
            return Err(Error::Data("cannot fit preprocessing on an empty dataset".into()));
        }
        let rows = visit_rows(train);
        let dems: Vec<Vec<f64>> = train.patients.iter().map(|p| p.demographics.clone()).collect();
        let pre = Preprocessor {
            k,
            features: MinMaxScaler::fit_partial(&rows)?,
            demographics: MinMaxScaler::fit(&dems)?,
        };
        let out = pre.apply(train)?;
        Ok((pre, out))
    }

    /// Scales with the fitted ranges, then imputes from `ds`'s own rows.
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        let width = ds.header.feature_names.len();
        if width != self.features.width() {
            return Err(Error::Data(format!(
                "dataset has {width} features, preprocessing was fitted on {}",
                self.features.width()
            )));
        }
        if ds.header.demographic_names.len() != self.demographics.width() {
            return Err(Error::Data(format!(
                "dataset has {} demographics, preprocessing was fitted on {}",
                ds.header.demographic_names.len(),
                self.demographics.width()
            )));
        }
        let scaled: Vec<Vec<Option<f64>>> = visit_rows(ds)
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .map(|(j, v)| v.map(|v| self.features.transform_value(j, v)))
                    .collect()
            })
            .collect();
        let filled = knn_impute(&scaled, self.k)?;
        let mut rows = filled.into_iter();
        let patients = ds
            .patients
            .iter()
            .map(|p| PatientRecord {
                id: p.id.clone(),
                visits: p
                    .visits
                    .iter()
                    .map(|v| Visit {
                        features: rows.next().expect("one row per visit").into_iter().map(Some).collect(),
                        elapsed: v.elapsed,
                        label: v.label,
                    })
                    .collect(),
                demographics: p
                    .demographics
                    .iter()
                    .enumerate()
                    .map(|(j, &d)| self.demographics.transform_value(j, d))
                    .collect(),
            })
            .collect();
        Ok(ds.with_patients(patients))
    }
}

fn visit_rows(ds: &Dataset) -> Vec<Vec<Option<f64>>> {
    ds.patients
        .iter()
        .flat_map(|p| p.visits.iter().map(|v| v.features.clone()))
        .collect()
}
