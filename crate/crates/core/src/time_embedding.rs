//! Sinusoidal encoding of elapsed time between visits, fused with the visit
//! features by addition.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    Years,
    Days,
}

impl fmt::Display for TimeUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimeUnit::Years => "years",
            TimeUnit::Days => "days",
        })
    }
}

impl FromStr for TimeUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "years" => Ok(TimeUnit::Years),
            "days" => Ok(TimeUnit::Days),
            other => Err(Error::Config(format!(
                "unknown time unit {other:?} (expected years or days)"
            ))),
        }
    }
}

/// Gaps between consecutive visits; the first visit has no predecessor and
/// carries zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElapsedTimes {
    values: Vec<f64>,
    unit: TimeUnit,
}

impl ElapsedTimes {
    pub fn new(values: Vec<f64>, unit: TimeUnit) -> Result<Self> {
        if let Some(&first) = values.first() {
            if first != 0.0 {
                return Err(Error::Data(format!(
                    "first elapsed time must be 0, got {first}"
                )));
            }
        }
        if let Some(bad) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Data(format!(
                "elapsed times must be finite and non-negative, got {bad}"
            )));
        }
        Ok(ElapsedTimes { values, unit })
    }

    /// All-zero gaps of length `len`.
    pub fn zeros(len: usize, unit: TimeUnit) -> Self {
        ElapsedTimes {
            values: vec![0.0; len],
            unit,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn unit(&self) -> TimeUnit {
        self.unit
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeEmbedConfig {
    pub d_model: usize,
    /// Largest elapsed time seen in the training split.
    pub et_max: f64,
}

impl TimeEmbedConfig {
    pub fn new(d_model: usize, et_max: f64) -> Result<Self> {
        let cfg = TimeEmbedConfig { d_model, et_max };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 {
            return Err(Error::Config("d_model must be at least 1".into()));
        }
        if !(self.et_max > 0.0) || !self.et_max.is_finite() {
            return Err(Error::Config(format!(
                "et_max must be positive, got {}",
                self.et_max
            )));
        }
        Ok(())
    }
}

/// `out[i] = sin(e / et_max^(2i/d_model))` for even `i`, `cos(..)` for odd.
pub fn time_embed(e: f64, cfg: &TimeEmbedConfig) -> Result<Vec<f64>> {
    if !(e >= 0.0) {
        return Err(Error::Contract(format!(
            "elapsed time must be non-negative, got {e}"
        )));
    }
    cfg.validate()?;
    let d = cfg.d_model as f64;
    Ok((0..cfg.d_model)
        .map(|i| {
            let angle = e / cfg.et_max.powf(2.0 * i as f64 / d);
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect())
}

/// `[T × d_model]` matrix whose row `t` is `time_embed(E[t])`.
pub fn time_embed_matrix(e: &ElapsedTimes, cfg: &TimeEmbedConfig) -> Result<Tensor> {
    let rows = e
        .values()
        .iter()
        .map(|&v| time_embed(v, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(rows.len() * cfg.d_model);
    rows.into_iter().for_each(|r| data.extend(r));
    Tensor::matrix(e.len(), cfg.d_model, data)
}

/// Maps `[T × F]` visit features into the `d_model` space: identity when
/// `F == d_model`, otherwise `X · proj` with `proj: [F × d_model]`.
pub fn project_visits(
    g: &mut Graph,
    x: Var,
    d_model: usize,
    proj: Option<Var>,
) -> Result<Var> {
    let features = g.value(x).cols();
    match proj {
        Some(p) => {
            let ps = g.shape(p);
            if ps != [features, d_model] {
                return Err(Error::dim("input projection", &[features, d_model], ps));
            }
            g.matmul(x, p)
        }
        None if features == d_model => Ok(x),
        None => Err(Error::Config(format!(
            "{features} features differ from d_model {d_model}; an input projection is required"
        ))),
    }
}

/// `Z = project(X) + TE(E)`.
pub fn embed_sequence(
    g: &mut Graph,
    x: Var,
    e: &ElapsedTimes,
    cfg: &TimeEmbedConfig,
    proj: Option<Var>,
) -> Result<Var> {
    let rows = g.value(x).rows();
    if g.value(x).rank() != 2 || rows != e.len() {
        return Err(Error::dim("embed_sequence", g.shape(x), &[e.len()]));
    }
    let projected = project_visits(g, x, cfg.d_model, proj)?;
    let te = g.constant(time_embed_matrix(e, cfg)?);
    g.add(projected, te)
}
