//! Model assembly: time embedding, recurrent encoder, dual attention, the
//! optional autoregressive decoder, and the MLP head.
//!
//! All six variants share one forward routine. Ablations differ only in
//! which stages are switched off:
//!
//! | variant   | time embedding | attention | decoder |
//! |-----------|----------------|-----------|---------|
//! | ta-rnn    | yes            | yes       | no      |
//! | ta-rnn-ae | yes            | yes       | yes     |
//! | a-rnn     | no             | yes       | no      |
//! | a-rnn-ae  | no             | yes       | yes     |
//! | t-rnn     | yes            | no        | no      |
//! | t-rnn-ae  | yes            | no        | yes     |
//!
//! Without attention the context is the encoder's last state, mapped to
//! `d_model` by a linear adapter when the widths differ.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::attention::{
    context_vector, feature_attention, read_weights, visit_attention, AttentionParams,
    AttentionWeights,
};
use crate::autograd::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{bind, join, uniform_matrix, Linear, Role};
use crate::rnn_cells::{run_rnn, step, zero_state, CellConfig, CellKind, CellParams, State};
use crate::time_embedding::{embed_sequence, project_visits, ElapsedTimes, TimeEmbedConfig, TimeUnit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelVariant {
    #[serde(rename = "ta-rnn")]
    TaRnn,
    #[serde(rename = "ta-rnn-ae")]
    TaRnnAe,
    #[serde(rename = "a-rnn")]
    ARnn,
    #[serde(rename = "t-rnn")]
    TRnn,
    #[serde(rename = "a-rnn-ae")]
    ARnnAe,
    #[serde(rename = "t-rnn-ae")]
    TRnnAe,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 6] = [
        ModelVariant::TaRnn,
        ModelVariant::TaRnnAe,
        ModelVariant::ARnn,
        ModelVariant::TRnn,
        ModelVariant::ARnnAe,
        ModelVariant::TRnnAe,
    ];

    pub fn uses_time_embedding(self) -> bool {
        !matches!(self, ModelVariant::ARnn | ModelVariant::ARnnAe)
    }

    pub fn uses_attention(self) -> bool {
        !matches!(self, ModelVariant::TRnn | ModelVariant::TRnnAe)
    }

    pub fn is_autoencoder(self) -> bool {
        matches!(
            self,
            ModelVariant::TaRnnAe | ModelVariant::ARnnAe | ModelVariant::TRnnAe
        )
    }

    /// The next-visit or n-ahead form of the same family.
    pub fn with_autoencoder(self, ae: bool) -> ModelVariant {
        use ModelVariant::*;
        match (self, ae) {
            (TaRnn | TaRnnAe, false) => TaRnn,
            (TaRnn | TaRnnAe, true) => TaRnnAe,
            (ARnn | ARnnAe, false) => ARnn,
            (ARnn | ARnnAe, true) => ARnnAe,
            (TRnn | TRnnAe, false) => TRnn,
            (TRnn | TRnnAe, true) => TRnnAe,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::TaRnn => "ta-rnn",
            ModelVariant::TaRnnAe => "ta-rnn-ae",
            ModelVariant::ARnn => "a-rnn",
            ModelVariant::TRnn => "t-rnn",
            ModelVariant::ARnnAe => "a-rnn-ae",
            ModelVariant::TRnnAe => "t-rnn-ae",
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown model variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    /// Encoder cell; its `input_size` is `d_model`.
    pub cell: CellConfig,
    /// Longitudinal features per visit.
    pub n_features: usize,
    pub d_model: usize,
    pub mlp_hidden: usize,
    /// Zero skips the demographic concatenation.
    pub demographic_size: usize,
    /// Visits ahead predicted by the decoder; set iff the variant is an AE form.
    pub horizon: Option<usize>,
    pub dropout_rate: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.cell.validate()?;
        if self.d_model == 0 || self.n_features == 0 || self.mlp_hidden == 0 {
            return Err(Error::Config(
                "n_features, d_model and mlp_hidden must be positive".into(),
            ));
        }
        if self.cell.input_size != self.d_model {
            return Err(Error::Config(format!(
                "encoder input size {} must equal d_model {}",
                self.cell.input_size, self.d_model
            )));
        }
        match (self.variant.is_autoencoder(), self.horizon) {
            (true, Some(n)) if n >= 1 => {}
            (true, _) => {
                return Err(Error::Config(format!(
                    "{} needs a horizon of at least 1",
                    self.variant
                )))
            }
            (false, None) => {}
            (false, Some(_)) => {
                return Err(Error::Config(format!(
                    "{} does not take a horizon",
                    self.variant
                )))
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Decoder cell: unidirectional, `d_model` wide, same family as the encoder.
    pub fn decoder_cell(&self) -> CellConfig {
        CellConfig {
            kind: self.cell.kind.base(),
            input_size: self.d_model,
            hidden_size: self.d_model,
        }
    }

    fn needs_projection(&self) -> bool {
        self.n_features != self.d_model
    }

    fn needs_adapter(&self) -> bool {
        !self.variant.uses_attention() && self.cell.width() != self.d_model
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T = Tensor> {
    /// `[n_features × d_model]`, present iff the two differ.
    pub input_proj: Option<T>,
    pub encoder: CellParams<T>,
    pub attention: Option<AttentionParams<T>>,
    /// Last-state adapter for attention-free variants.
    pub adapter: Option<Linear<T>>,
    pub decoder: Option<CellParams<T>>,
    /// `W_2, b_2`: `[mlp_hidden × (d_model + demographics)]`.
    pub mlp_hidden: Linear<T>,
    /// `W_1, b_1`: `[1 × mlp_hidden]`.
    pub mlp_out: Linear<T>,
}

impl ModelParams<Tensor> {
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let width = cfg.cell.width();
        Ok(ModelParams {
            input_proj: cfg
                .needs_projection()
                .then(|| uniform_matrix(cfg.n_features, cfg.d_model, rng)),
            encoder: CellParams::init(&cfg.cell, rng),
            attention: cfg
                .variant
                .uses_attention()
                .then(|| AttentionParams::init(width, cfg.d_model, rng)),
            adapter: cfg
                .needs_adapter()
                .then(|| Linear::init(width, cfg.d_model, rng)),
            decoder: cfg
                .variant
                .is_autoencoder()
                .then(|| CellParams::init(&cfg.decoder_cell(), rng)),
            mlp_hidden: Linear::init(cfg.d_model + cfg.demographic_size, cfg.mlp_hidden, rng),
            mlp_out: Linear::init(cfg.mlp_hidden, 1, rng),
        })
    }

    /// Every parameter zero; the model then predicts 0.5 for any input.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let width = cfg.cell.width();
        Ok(ModelParams {
            input_proj: cfg
                .needs_projection()
                .then(|| Tensor::zeros(&[cfg.n_features, cfg.d_model])),
            encoder: CellParams::zeros(&cfg.cell),
            attention: cfg
                .variant
                .uses_attention()
                .then(|| AttentionParams::zeros(width, cfg.d_model)),
            adapter: cfg.needs_adapter().then(|| Linear::zeros(width, cfg.d_model)),
            decoder: cfg
                .variant
                .is_autoencoder()
                .then(|| CellParams::zeros(&cfg.decoder_cell())),
            mlp_hidden: Linear::zeros(cfg.d_model + cfg.demographic_size, cfg.mlp_hidden),
            mlp_out: Linear::zeros(cfg.mlp_hidden, 1),
        })
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> ModelParams<Var> {
        self.map(&mut |t| bind(g, t, trainable))
    }

    /// Confirms every tensor has the shape `cfg` implies.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        cfg.validate()?;
        let reference = ModelParams::zeros(cfg)?;
        let mut want = Vec::new();
        reference.visit("", &mut |name, _, t| want.push((name.to_string(), t.shape().to_vec())));
        let mut have = Vec::new();
        self.visit("", &mut |name, _, t| have.push((name.to_string(), t.shape().to_vec())));
        if want.len() != have.len() {
            return Err(Error::Config(format!(
                "parameter set has {} tensors, config implies {}",
                have.len(),
                want.len()
            )));
        }
        for ((wn, ws), (hn, hs)) in want.iter().zip(&have) {
            if wn != hn {
                return Err(Error::Config(format!("expected parameter {wn}, found {hn}")));
            }
            if ws != hs {
                return Err(Error::dim("model parameters", ws, hs));
            }
        }
        Ok(())
    }

    /// Squared Frobenius norm over weight matrices (biases excluded).
    pub fn weight_norm_sq(&self) -> f64 {
        let mut total = 0.0;
        self.visit("", &mut |_, role, t| {
            if role == Role::Weight {
                total += t.sum_squares();
            }
        });
        total
    }

    pub fn numel(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, t| n += t.numel());
        n
    }
}

impl<T> ModelParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> ModelParams<U> {
        ModelParams {
            input_proj: self.input_proj.as_ref().map(&mut *f),
            encoder: self.encoder.map(f),
            attention: self.attention.as_ref().map(|a| a.map(f)),
            adapter: self.adapter.as_ref().map(|a| a.map(f)),
            decoder: self.decoder.as_ref().map(|d| d.map(f)),
            mlp_hidden: self.mlp_hidden.map(f),
            mlp_out: self.mlp_out.map(f),
        }
    }

    /// Depth-first leaf walk; `map` and `visit_mut` follow the same order.
    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Role, &T)) {
        if let Some(p) = &self.input_proj {
            f(&join(prefix, "input_proj"), Role::Weight, p);
        }
        self.encoder.visit(&join(prefix, "encoder"), f);
        if let Some(a) = &self.attention {
            a.visit(&join(prefix, "attention"), f);
        }
        if let Some(a) = &self.adapter {
            a.visit(&join(prefix, "adapter"), f);
        }
        if let Some(d) = &self.decoder {
            d.visit(&join(prefix, "decoder"), f);
        }
        self.mlp_hidden.visit(&join(prefix, "mlp_hidden"), f);
        self.mlp_out.visit(&join(prefix, "mlp_out"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Role, &mut T)) {
        if let Some(p) = &mut self.input_proj {
            f(&join(prefix, "input_proj"), Role::Weight, p);
        }
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        if let Some(a) = &mut self.attention {
            a.visit_mut(&join(prefix, "attention"), f);
        }
        if let Some(a) = &mut self.adapter {
            a.visit_mut(&join(prefix, "adapter"), f);
        }
        if let Some(d) = &mut self.decoder {
            d.visit_mut(&join(prefix, "decoder"), f);
        }
        self.mlp_hidden.visit_mut(&join(prefix, "mlp_hidden"), f);
        self.mlp_out.visit_mut(&join(prefix, "mlp_out"), f);
    }
}

/// Dropout is drawn from `rng` only in training mode.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Scalar probability of the positive outcome.
    pub y_hat: Var,
    /// Visit weights and per-visit feature weights, for attention variants.
    pub attention: Option<(Var, Vec<Var>)>,
    pub context: Var,
    /// `g_1 … g_n` for AE variants.
    pub decoded: Vec<Var>,
}

/// One sample as the model consumes it.
#[derive(Debug, Clone, Copy)]
pub struct Inputs<'a> {
    /// `[T × n_features]`
    pub x: &'a Tensor,
    pub elapsed: &'a ElapsedTimes,
    pub demographics: &'a [f64],
}

/// Autoregressive decoding: the first step takes `c` as both input and
/// hidden state, later steps feed back the previous output.
pub fn decode(
    g: &mut Graph,
    c: Var,
    n: usize,
    kind: CellKind,
    p: &CellParams<Var>,
) -> Result<Vec<Var>> {
    if n < 1 {
        return Err(Error::Contract("decoder horizon must be at least 1".into()));
    }
    let width = g.value(c).numel();
    let dir = p
        .directions
        .first()
        .ok_or_else(|| Error::Contract("decoder has no parameters".into()))?;
    let mut state = State {
        hidden: c,
        cell: zero_state(g, kind, width).cell,
    };
    let mut input = c;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        state = step(g, kind.base(), input, state, dir)?;
        out.push(state.hidden);
        input = state.hidden;
    }
    Ok(out)
}

/// Full forward pass for any variant.
pub fn forward(
    g: &mut Graph,
    cfg: &ModelConfig,
    time: &TimeEmbedConfig,
    unit: TimeUnit,
    p: &ModelParams<Var>,
    inputs: Inputs<'_>,
    mode: &mut Mode<'_>,
) -> Result<ForwardOutput> {
    let Inputs {
        x,
        elapsed,
        demographics,
    } = inputs;
    if x.rank() != 2 || x.rows() == 0 {
        return Err(Error::Contract(format!(
            "visits must form a non-empty [T × F] matrix, got {:?}",
            x.shape()
        )));
    }
    if x.cols() != cfg.n_features {
        return Err(Error::dim("visit features", &[cfg.n_features], &[x.cols()]));
    }
    if elapsed.len() != x.rows() {
        return Err(Error::dim("elapsed times", &[x.rows()], &[elapsed.len()]));
    }
    if elapsed.unit() != unit {
        return Err(Error::Data(format!(
            "elapsed times are in {} but the model was trained on {}",
            elapsed.unit(),
            unit
        )));
    }
    if demographics.len() != cfg.demographic_size {
        return Err(Error::dim(
            "demographics",
            &[cfg.demographic_size],
            &[demographics.len()],
        ));
    }

    let xv = g.constant(x.clone());
    let z = if cfg.variant.uses_time_embedding() {
        embed_sequence(g, xv, elapsed, time, p.input_proj)?
    } else {
        project_visits(g, xv, cfg.d_model, p.input_proj)?
    };
    let h = run_rnn(g, z, &cfg.cell, &p.encoder)?;

    let (context, attention) = match &p.attention {
        Some(ap) => {
            let alpha = visit_attention(g, h, ap)?;
            let beta = feature_attention(g, h, ap)?;
            let c = context_vector(g, alpha, &beta, z)?;
            (c, Some((alpha, beta)))
        }
        None => {
            let last = g.row(h, x.rows() - 1)?;
            let c = match &p.adapter {
                Some(a) => a.forward(g, last)?,
                None => last,
            };
            (c, None)
        }
    };

    let decoded = match (&p.decoder, cfg.horizon) {
        (Some(dp), Some(n)) => decode(g, context, n, cfg.cell.kind.base(), dp)?,
        _ => Vec::new(),
    };
    let summary = decoded.last().copied().unwrap_or(context);

    let head_in = if cfg.demographic_size > 0 {
        let dem = g.constant(Tensor::vector(demographics.to_vec()));
        g.concat(summary, dem)?
    } else {
        summary
    };
    let hidden = p.mlp_hidden.forward(g, head_in)?;
    let mut hidden = g.relu(hidden);
    if let Mode::Train(rng) = mode {
        if cfg.dropout_rate > 0.0 {
            let keep = 1.0 - cfg.dropout_rate;
            let mask: Vec<f64> = (0..cfg.mlp_hidden)
                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            let m = g.constant(Tensor::vector(mask));
            hidden = g.mul(hidden, m)?;
        }
    }
    let logit = p.mlp_out.forward(g, hidden)?;
    let prob = g.sigmoid(logit);
    let y_hat = g.select(prob, 0)?;

    Ok(ForwardOutput {
        y_hat,
        attention,
        context,
        decoded,
    })
}

/// Attention weights for one sample plus their element-wise combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub alpha: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    /// `combined[j][f] = alpha[j] * beta[j][f]`; all entries total one.
    pub combined: Vec<Vec<f64>>,
    /// `beta[·][f]` averaged over visits.
    pub feature_means: Vec<f64>,
}

impl AttentionReport {
    pub fn from_weights(w: AttentionWeights) -> Self {
        let combined: Vec<Vec<f64>> = w
            .alpha
            .iter()
            .zip(&w.beta)
            .map(|(a, row)| row.iter().map(|b| a * b).collect())
            .collect();
        let d = w.beta.first().map_or(0, Vec::len);
        let t = w.beta.len().max(1) as f64;
        let feature_means = (0..d)
            .map(|f| w.beta.iter().map(|row| row[f]).sum::<f64>() / t)
            .collect();
        AttentionReport {
            alpha: w.alpha,
            beta: w.beta,
            combined,
            feature_means,
        }
    }
}

/// Trained (or initialized) model with everything inference needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub time: TimeEmbedConfig,
    pub unit: TimeUnit,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, time: TimeEmbedConfig, unit: TimeUnit, params: ModelParams) -> Result<Self> {
        time.validate()?;
        if time.d_model != config.d_model {
            return Err(Error::Config(format!(
                "time embedding width {} differs from d_model {}",
                time.d_model, config.d_model
            )));
        }
        params.check(&config)?;
        Ok(Model {
            config,
            time,
            unit,
            params,
        })
    }

    pub fn init(config: ModelConfig, time: TimeEmbedConfig, unit: TimeUnit, rng: &mut impl Rng) -> Result<Self> {
        let params = ModelParams::init(&config, rng)?;
        Model::new(config, time, unit, params)
    }

    /// Inference-mode probability of the positive outcome.
    pub fn predict(&self, inputs: Inputs<'_>) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let out = forward(&mut g, &self.config, &self.time, self.unit, &p, inputs, &mut Mode::Eval)?;
        Ok(g.value(out.y_hat).item())
    }

    pub fn explain(&self, inputs: Inputs<'_>) -> Result<AttentionReport> {
        if !self.config.variant.uses_attention() {
            return Err(Error::UnsupportedVariant(self.config.variant.to_string()));
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let out = forward(&mut g, &self.config, &self.time, self.unit, &p, inputs, &mut Mode::Eval)?;
        let (alpha, beta) = out
            .attention
            .ok_or_else(|| Error::UnsupportedVariant(self.config.variant.to_string()))?;
        Ok(AttentionReport::from_weights(read_weights(&g, alpha, &beta)))
    }
}
