//! GRU and LSTM encoders, unidirectional or bidirectional.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{bind, join, uniform_matrix, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
    BiLstm,
    BiGru,
}

impl CellKind {
    pub fn is_bidirectional(self) -> bool {
        matches!(self, CellKind::BiLstm | CellKind::BiGru)
    }

    /// The unidirectional cell this kind is built from.
    pub fn base(self) -> CellKind {
        match self {
            CellKind::Lstm | CellKind::BiLstm => CellKind::Lstm,
            CellKind::Gru | CellKind::BiGru => CellKind::Gru,
        }
    }

    fn gate_count(self) -> usize {
        match self.base() {
            CellKind::Lstm => 4,
            _ => 3,
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
            CellKind::BiLstm => "bilstm",
            CellKind::BiGru => "bigru",
        })
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            "bilstm" => Ok(CellKind::BiLstm),
            "bigru" => Ok(CellKind::BiGru),
            _ => Err(Error::Config(format!(
                "unknown cell {s:?} (expected lstm, gru, bilstm or bigru)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellConfig {
    pub kind: CellKind,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl CellConfig {
    pub fn new(kind: CellKind, input_size: usize, hidden_size: usize) -> Result<Self> {
        let cfg = CellConfig {
            kind,
            input_size,
            hidden_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.hidden_size == 0 {
            return Err(Error::Config(format!(
                "cell sizes must be positive (input {}, hidden {})",
                self.input_size, self.hidden_size
            )));
        }
        Ok(())
    }

    /// Width of each encoder output row.
    pub fn width(&self) -> usize {
        if self.kind.is_bidirectional() {
            2 * self.hidden_size
        } else {
            self.hidden_size
        }
    }
}

/// GRU gate slots.
pub mod gru_gate {
    pub const UPDATE: usize = 0;
    pub const RESET: usize = 1;
    pub const CANDIDATE: usize = 2;
}

/// LSTM gate slots.
pub mod lstm_gate {
    pub const INPUT: usize = 0;
    pub const FORGET: usize = 1;
    pub const CANDIDATE: usize = 2;
    pub const OUTPUT: usize = 3;
}

/// Pre-activation `input · x + recurrent · h + bias` of one gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate<T = Tensor> {
    /// `[hidden × input]`
    pub input: T,
    /// `[hidden × hidden]`
    pub recurrent: T,
    pub bias: T,
}

impl<T> Gate<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Gate<U> {
        Gate {
            input: f(&self.input),
            recurrent: f(&self.recurrent),
            bias: f(&self.bias),
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Role, &T)) {
        f(&join(prefix, "input"), Role::Weight, &self.input);
        f(&join(prefix, "recurrent"), Role::Weight, &self.recurrent);
        f(&join(prefix, "bias"), Role::Bias, &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Role, &mut T)) {
        f(&join(prefix, "input"), Role::Weight, &mut self.input);
        f(&join(prefix, "recurrent"), Role::Weight, &mut self.recurrent);
        f(&join(prefix, "bias"), Role::Bias, &mut self.bias);
    }
}

impl Gate<Var> {
    fn pre_activation(&self, g: &mut Graph, x: Var, h: Var) -> Result<Var> {
        let wx = g.matvec(self.input, x)?;
        let uh = g.matvec(self.recurrent, h)?;
        let s = g.add(wx, uh)?;
        g.add(s, self.bias)
    }
}

/// Gates of one scan direction, indexed by [`gru_gate`] or [`lstm_gate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Direction<T = Tensor> {
    pub gates: Vec<Gate<T>>,
}

impl Direction<Tensor> {
    pub fn init(kind: CellKind, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let gates = (0..kind.gate_count())
            .map(|slot| {
                let bias = if kind.base() == CellKind::Lstm && slot == lstm_gate::FORGET {
                    Tensor::full(&[hidden], 1.0)
                } else {
                    Tensor::zeros(&[hidden])
                };
                Gate {
                    input: uniform_matrix(hidden, input, rng),
                    recurrent: uniform_matrix(hidden, hidden, rng),
                    bias,
                }
            })
            .collect();
        Direction { gates }
    }

    pub fn zeros(kind: CellKind, input: usize, hidden: usize) -> Self {
        let gates = (0..kind.gate_count())
            .map(|_| Gate {
                input: Tensor::zeros(&[hidden, input]),
                recurrent: Tensor::zeros(&[hidden, hidden]),
                bias: Tensor::zeros(&[hidden]),
            })
            .collect();
        Direction { gates }
    }
}

impl<T> Direction<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Direction<U> {
        Direction {
            gates: self.gates.iter().map(|gt| gt.map(f)).collect(),
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Role, &T)) {
        for (i, gate) in self.gates.iter().enumerate() {
            gate.visit(&join(prefix, &format!("gate{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Role, &mut T)) {
        for (i, gate) in self.gates.iter_mut().enumerate() {
            gate.visit_mut(&join(prefix, &format!("gate{i}")), f);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellParams<T = Tensor> {
    pub kind: CellKind,
    /// Forward direction first; a second entry runs right to left.
    pub directions: Vec<Direction<T>>,
}

impl CellParams<Tensor> {
    /// Uniform `±1/sqrt(fan_in)` weights, LSTM forget bias 1, other biases 0.
    pub fn init(cfg: &CellConfig, rng: &mut impl Rng) -> Self {
        let n = if cfg.kind.is_bidirectional() { 2 } else { 1 };
        CellParams {
            kind: cfg.kind,
            directions: (0..n)
                .map(|_| Direction::init(cfg.kind, cfg.input_size, cfg.hidden_size, rng))
                .collect(),
        }
    }

    pub fn zeros(cfg: &CellConfig) -> Self {
        let n = if cfg.kind.is_bidirectional() { 2 } else { 1 };
        CellParams {
            kind: cfg.kind,
            directions: (0..n)
                .map(|_| Direction::zeros(cfg.kind, cfg.input_size, cfg.hidden_size))
                .collect(),
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> CellParams<Var> {
        self.map(&mut |t| bind(g, t, trainable))
    }

    /// Checks every gate against `cfg`.
    pub fn check(&self, cfg: &CellConfig) -> Result<()> {
        let dirs = if cfg.kind.is_bidirectional() { 2 } else { 1 };
        if self.kind != cfg.kind || self.directions.len() != dirs {
            return Err(Error::Config(format!(
                "cell parameters are {} with {} direction(s), config wants {}",
                self.kind,
                self.directions.len(),
                cfg.kind
            )));
        }
        let (i, h) = (cfg.input_size, cfg.hidden_size);
        for d in &self.directions {
            if d.gates.len() != cfg.kind.gate_count() {
                return Err(Error::Config(format!(
                    "{} expects {} gates, found {}",
                    cfg.kind,
                    cfg.kind.gate_count(),
                    d.gates.len()
                )));
            }
            for gate in &d.gates {
                for (t, want) in [
                    (&gate.input, vec![h, i]),
                    (&gate.recurrent, vec![h, h]),
                    (&gate.bias, vec![h]),
                ] {
                    if t.shape() != want.as_slice() {
                        return Err(Error::dim("cell parameters", &want, t.shape()));
                    }
                }
            }
        }
        Ok(())
    }
}

impl<T> CellParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> CellParams<U> {
        CellParams {
            kind: self.kind,
            directions: self.directions.iter().map(|d| d.map(f)).collect(),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Role, &T)) {
        for (i, d) in self.directions.iter().enumerate() {
            d.visit(&join(prefix, &format!("dir{i}")), f);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Role, &mut T)) {
        for (i, d) in self.directions.iter_mut().enumerate() {
            d.visit_mut(&join(prefix, &format!("dir{i}")), f);
        }
    }
}

/// Recurrent state carried between steps. `cell` is only used by LSTMs.
#[derive(Debug, Clone, Copy)]
pub struct State {
    pub hidden: Var,
    pub cell: Option<Var>,
}

/// One GRU step: `h' = (1 - z) ⊙ n + z ⊙ h`.
pub fn gru_step(g: &mut Graph, x: Var, h: Var, p: &Direction<Var>) -> Result<Var> {
    let [update, reset, candidate] = gates::<3>(p)?;
    let z_pre = update.pre_activation(g, x, h)?;
    let z = g.sigmoid(z_pre);
    let r_pre = reset.pre_activation(g, x, h)?;
    let r = g.sigmoid(r_pre);
    let rh = g.mul(r, h)?;
    let n_pre = candidate.pre_activation(g, x, rh)?;
    let n = g.tanh(n_pre);
    let keep_new = g.affine(z, -1.0, 1.0);
    let a = g.mul(keep_new, n)?;
    let b = g.mul(z, h)?;
    g.add(a, b)
}

/// One LSTM step returning `(h', c')` with `c' = f ⊙ c + i ⊙ g` and
/// `h' = o ⊙ tanh(c')`.
pub fn lstm_step(
    g: &mut Graph,
    x: Var,
    h: Var,
    c: Var,
    p: &Direction<Var>,
) -> Result<(Var, Var)> {
    let [input, forget, candidate, output] = gates::<4>(p)?;
    let i_pre = input.pre_activation(g, x, h)?;
    let i = g.sigmoid(i_pre);
    let f_pre = forget.pre_activation(g, x, h)?;
    let f = g.sigmoid(f_pre);
    let c_pre = candidate.pre_activation(g, x, h)?;
    let cand = g.tanh(c_pre);
    let o_pre = output.pre_activation(g, x, h)?;
    let o = g.sigmoid(o_pre);
    let kept = g.mul(f, c)?;
    let written = g.mul(i, cand)?;
    let c_next = g.add(kept, written)?;
    let squashed = g.tanh(c_next);
    let h_next = g.mul(o, squashed)?;
    Ok((h_next, c_next))
}

fn gates<const N: usize>(p: &Direction<Var>) -> Result<[&Gate<Var>; N]> {
    let refs: Vec<&Gate<Var>> = p.gates.iter().collect();
    refs.try_into().map_err(|v: Vec<_>| {
        Error::Contract(format!("cell step expects {N} gates, got {}", v.len()))
    })
}

/// Advances `state` by one input with the unidirectional cell `kind`.
pub fn step(
    g: &mut Graph,
    kind: CellKind,
    x: Var,
    state: State,
    p: &Direction<Var>,
) -> Result<State> {
    match kind.base() {
        CellKind::Lstm => {
            let c = state
                .cell
                .ok_or_else(|| Error::Contract("LSTM step without a cell state".into()))?;
            let (hidden, cell) = lstm_step(g, x, state.hidden, c, p)?;
            Ok(State {
                hidden,
                cell: Some(cell),
            })
        }
        _ => Ok(State {
            hidden: gru_step(g, x, state.hidden, p)?,
            cell: None,
        }),
    }
}

/// Zero hidden (and cell) state.
pub fn zero_state(g: &mut Graph, kind: CellKind, hidden: usize) -> State {
    let h = g.constant(Tensor::zeros(&[hidden]));
    let cell = (kind.base() == CellKind::Lstm).then(|| g.constant(Tensor::zeros(&[hidden])));
    State { hidden: h, cell }
}

fn scan(
    g: &mut Graph,
    kind: CellKind,
    inputs: &[Var],
    hidden: usize,
    p: &Direction<Var>,
) -> Result<Vec<Var>> {
    let mut state = zero_state(g, kind, hidden);
    let mut out = Vec::with_capacity(inputs.len());
    for &x in inputs {
        state = step(g, kind, x, state, p)?;
        out.push(state.hidden);
    }
    Ok(out)
}

/// Encodes `Z: [T × input]` into `H: [T × width]`.
///
/// Bidirectional cells run an independent right-to-left scan and each row of
/// `H` is the forward state followed by the backward state for that visit.
pub fn run_rnn(g: &mut Graph, z: Var, cfg: &CellConfig, p: &CellParams<Var>) -> Result<Var> {
    let zv = g.value(z);
    if zv.rank() != 2 || zv.rows() == 0 {
        return Err(Error::Contract(format!(
            "run_rnn needs a non-empty [T × input] sequence, got {:?}",
            zv.shape()
        )));
    }
    if zv.cols() != cfg.input_size {
        return Err(Error::dim("run_rnn", &[cfg.input_size], &[zv.cols()]));
    }
    let t = zv.rows();
    let rows = (0..t).map(|i| g.row(z, i)).collect::<Result<Vec<_>>>()?;

    let forward = scan(g, cfg.kind, &rows, cfg.hidden_size, &p.directions[0])?;
    if !cfg.kind.is_bidirectional() {
        return g.stack_rows(&forward);
    }
    let reversed: Vec<Var> = rows.iter().rev().copied().collect();
    let mut backward = scan(g, cfg.kind, &reversed, cfg.hidden_size, &p.directions[1])?;
    backward.reverse();
    let joined = forward
        .iter()
        .zip(&backward)
        .map(|(&f, &b)| g.concat(f, b))
        .collect::<Result<Vec<_>>>()?;
    g.stack_rows(&joined)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autograd::{grad_check, sigmoid, DEFAULT_EPS};

    fn vec_var(g: &mut Graph, v: &[f64]) -> Var {
        g.constant(Tensor::vector(v.to_vec()))
    }

    fn scalar_gate(w: f64, u: f64, b: f64) -> Gate<Tensor> {
        Gate {
            input: Tensor::matrix(1, 1, vec![w]).unwrap(),
            recurrent: Tensor::matrix(1, 1, vec![u]).unwrap(),
            bias: Tensor::vector(vec![b]),
        }
    }

    #[test]
    fn gru_zero_everything() {
        let cfg = CellConfig::new(CellKind::Gru, 3, 2).unwrap();
        let p = CellParams::zeros(&cfg);
        let mut g = Graph::new();
        let bound = p.bind(&mut g, false);
        let x = vec_var(&mut g, &[0.0; 3]);
        let h = vec_var(&mut g, &[0.0; 2]);
        let out = gru_step(&mut g, x, h, &bound.directions[0]).unwrap();
        assert_eq!(g.value(out).data(), &[0.0, 0.0]);
    }

    #[test]
    fn gru_saturated_update_carries_state() {
        let cfg = CellConfig::new(CellKind::Gru, 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = CellParams::init(&cfg, &mut rng);
        p.directions[0].gates[gru_gate::UPDATE].bias = Tensor::full(&[2], 60.0);
        let mut g = Graph::new();
        let bound = p.bind(&mut g, false);
        let x = vec_var(&mut g, &[0.3, -0.8]);
        let h = vec_var(&mut g, &[0.42, -0.17]);
        let out = gru_step(&mut g, x, h, &bound.directions[0]).unwrap();
        assert_abs_diff_eq!(g.value(out).data()[0], 0.42, epsilon = 1e-12);
        assert_abs_diff_eq!(g.value(out).data()[1], -0.17, epsilon = 1e-12);
    }

    #[test]
    fn gru_single_unit_by_hand() {
        let (x, h) = (0.7, -0.3);
        let (zw, zu, zb) = (0.5, -1.2, 0.1);
        let (rw, ru, rb) = (-0.4, 0.9, 0.2);
        let (nw, nu, nb) = (1.3, 0.6, -0.5);
        let p = Direction {
            gates: vec![scalar_gate(zw, zu, zb), scalar_gate(rw, ru, rb), scalar_gate(nw, nu, nb)],
        };
        let z = sigmoid(zw * x + zu * h + zb);
        let r = sigmoid(rw * x + ru * h + rb);
        let n = (nw * x + nu * (r * h) + nb).tanh();
        let expected = (1.0 - z) * n + z * h;

        let mut g = Graph::new();
        let bp = p.map(&mut |t| g.constant(t.clone()));
        let xv = vec_var(&mut g, &[x]);
        let hv = vec_var(&mut g, &[h]);
        let out = gru_step(&mut g, xv, hv, &bp).unwrap();
        assert_abs_diff_eq!(g.value(out).item(), expected, epsilon = 1e-12);
    }

    #[test]
    fn lstm_zero_everything() {
        let cfg = CellConfig::new(CellKind::Lstm, 2, 3).unwrap();
        let p = CellParams::zeros(&cfg);
        let mut g = Graph::new();
        let bound = p.bind(&mut g, false);
        let x = vec_var(&mut g, &[0.0; 2]);
        let h = vec_var(&mut g, &[0.0; 3]);
        let c = vec_var(&mut g, &[0.0; 3]);
        let (h2, c2) = lstm_step(&mut g, x, h, c, &bound.directions[0]).unwrap();
        assert_eq!(g.value(h2).data(), &[0.0; 3]);
        assert_eq!(g.value(c2).data(), &[0.0; 3]);
    }

    #[test]
    fn lstm_saturated_forget_keeps_cell() {
        let cfg = CellConfig::new(CellKind::Lstm, 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = CellParams::init(&cfg, &mut rng);
        p.directions[0].gates[lstm_gate::FORGET].bias = Tensor::full(&[2], 60.0);
        p.directions[0].gates[lstm_gate::INPUT].bias = Tensor::full(&[2], -60.0);
        let mut g = Graph::new();
        let bound = p.bind(&mut g, false);
        let x = vec_var(&mut g, &[0.5, 0.5]);
        let h = vec_var(&mut g, &[0.1, -0.2]);
        let c = vec_var(&mut g, &[1.5, -0.75]);
        let (_, c2) = lstm_step(&mut g, x, h, c, &bound.directions[0]).unwrap();
        assert_abs_diff_eq!(g.value(c2).data()[0], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(g.value(c2).data()[1], -0.75, epsilon = 1e-12);
    }

    #[test]
    fn lstm_single_unit_by_hand() {
        let (x, h, c) = (0.4, 0.25, -0.6);
        let gi = (0.3, -0.7, 0.05);
        let gf = (-0.2, 0.4, 1.0);
        let gg = (0.9, 0.1, -0.3);
        let go = (0.6, -0.5, 0.2);
        let p = Direction {
            gates: [gi, gf, gg, go]
                .iter()
                .map(|&(w, u, b)| scalar_gate(w, u, b))
                .collect(),
        };
        let pre = |(w, u, b): (f64, f64, f64)| w * x + u * h + b;
        let i = sigmoid(pre(gi));
        let f = sigmoid(pre(gf));
        let cand = pre(gg).tanh();
        let o = sigmoid(pre(go));
        let c_next = f * c + i * cand;
        let h_next = o * c_next.tanh();

        let mut g = Graph::new();
        let bp = p.map(&mut |t| g.constant(t.clone()));
        let (xv, hv, cv) = (vec_var(&mut g, &[x]), vec_var(&mut g, &[h]), vec_var(&mut g, &[c]));
        let (h2, c2) = lstm_step(&mut g, xv, hv, cv, &bp).unwrap();
        assert_abs_diff_eq!(g.value(h2).item(), h_next, epsilon = 1e-12);
        assert_abs_diff_eq!(g.value(c2).item(), c_next, epsilon = 1e-12);
    }

    #[test]
    fn step_shape_mismatch() {
        let cfg = CellConfig::new(CellKind::Gru, 3, 2).unwrap();
        let p = CellParams::zeros(&cfg);
        let mut g = Graph::new();
        let bound = p.bind(&mut g, false);
        let x = vec_var(&mut g, &[0.0; 4]);
        let h = vec_var(&mut g, &[0.0; 2]);
        assert!(matches!(
            gru_step(&mut g, x, h, &bound.directions[0]),
            Err(Error::Dimension { .. })
        ));
    }

    fn random_sequence(t: usize, width: usize, rng: &mut impl Rng) -> Tensor {
        uniform_matrix(t, width, rng)
    }

    /// Reference chaining of `step` calls, independent of `run_rnn`'s scan.
    fn chained(
        g: &mut Graph,
        z: &Tensor,
        cfg: &CellConfig,
        p: &CellParams<Var>,
        reverse: bool,
        dir: usize,
    ) -> Vec<Vec<f64>> {
        let mut order: Vec<usize> = (0..z.rows()).collect();
        if reverse {
            order.reverse();
        }
        let mut state = zero_state(g, cfg.kind, cfg.hidden_size);
        let mut out = vec![Vec::new(); z.rows()];
        for t in order {
            let x = g.constant(Tensor::vector(z.row(t).to_vec()));
            state = step(g, cfg.kind, x, state, &p.directions[dir]).unwrap();
            out[t] = g.value(state.hidden).data().to_vec();
        }
        out
    }

    #[test]
    fn run_rnn_matches_manual_chaining() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [CellKind::Gru, CellKind::Lstm, CellKind::BiGru, CellKind::BiLstm] {
            for t in 1..=5 {
                let cfg = CellConfig::new(kind, 3, 4).unwrap();
                let p = CellParams::init(&cfg, &mut rng);
                let z = random_sequence(t, 3, &mut rng);
                let mut g = Graph::new();
                let bp = p.bind(&mut g, false);
                let zv = g.constant(z.clone());
                let h = run_rnn(&mut g, zv, &cfg, &bp).unwrap();
                assert_eq!(g.shape(h), &[t, cfg.width()]);
                let fwd = chained(&mut g, &z, &cfg, &bp, false, 0);
                let bwd = kind
                    .is_bidirectional()
                    .then(|| chained(&mut g, &z, &cfg, &bp, true, 1));
                for i in 0..t {
                    let mut want = fwd[i].clone();
                    if let Some(b) = &bwd {
                        want.extend_from_slice(&b[i]);
                    }
                    assert_eq!(g.value(h).row(i), want.as_slice(), "{kind} T={t} row {i}");
                }
            }
        }
    }

    #[test]
    fn bidirectional_single_step_halves_agree_with_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = CellConfig::new(CellKind::BiGru, 2, 3).unwrap();
        let mut p = CellParams::init(&cfg, &mut rng);
        p.directions[1] = p.directions[0].clone();
        let z = random_sequence(1, 2, &mut rng);
        let mut g = Graph::new();
        let bp = p.bind(&mut g, false);
        let zv = g.constant(z.clone());
        let h = run_rnn(&mut g, zv, &cfg, &bp).unwrap();
        let row = g.value(h).row(0).to_vec();
        assert_eq!(row.len(), 6);
        assert_eq!(row[..3], row[3..]);

        let x = g.constant(Tensor::vector(z.row(0).to_vec()));
        let h0 = g.constant(Tensor::zeros(&[3]));
        let single = gru_step(&mut g, x, h0, &bp.directions[0]).unwrap();
        assert_eq!(&row[..3], g.value(single).data());
    }

    #[test]
    fn run_rnn_rejects_empty_sequence() {
        let cfg = CellConfig::new(CellKind::Gru, 2, 2).unwrap();
        let p = CellParams::zeros(&cfg);
        let mut g = Graph::new();
        let bp = p.bind(&mut g, false);
        let z = g.constant(Tensor::zeros(&[0, 2]));
        assert!(matches!(run_rnn(&mut g, z, &cfg, &bp), Err(Error::Contract(_))));
    }

    #[test]
    fn gradient_check_each_kind() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in [CellKind::Gru, CellKind::Lstm, CellKind::BiGru, CellKind::BiLstm] {
            let cfg = CellConfig::new(kind, 2, 3).unwrap();
            let p = CellParams::init(&cfg, &mut rng);
            let z = random_sequence(2, 2, &mut rng);
            let mut leaves = vec![z];
            p.visit("", &mut |_, _, t| leaves.push(t.clone()));
            let err = grad_check(&leaves, DEFAULT_EPS, |g, vars| {
                let mut it = vars[1..].iter().copied();
                let bp = p.map(&mut |_| it.next().unwrap());
                let h = run_rnn(g, vars[0], &cfg, &bp)?;
                let sq = g.mul(h, h)?;
                Ok(g.sum(sq))
            })
            .unwrap();
            assert!(err < 1e-4, "{kind}: err = {err}");
        }
    }

    #[test]
    fn gru_states_stay_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let cfg = CellConfig::new(CellKind::Gru, 3, 4).unwrap();
            let mut p = CellParams::init(&cfg, &mut rng);
            p.visit_mut("", &mut |_, _, t| {
                t.data_mut()
                    .iter_mut()
                    .for_each(|v| *v = rng.random_range(-1.0..=1.0));
            });
            let z = uniform_matrix(6, 3, &mut rng).map(|v| 5.0 * v);
            let mut g = Graph::new();
            let bp = p.bind(&mut g, false);
            let zv = g.constant(z);
            let h = run_rnn(&mut g, zv, &cfg, &bp).unwrap();
            assert!(g.value(h).data().iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn init_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = CellConfig::new(CellKind::BiLstm, 3, 2).unwrap();
        let p = CellParams::init(&cfg, &mut rng);
        p.check(&cfg).unwrap();
        for d in &p.directions {
            assert_eq!(d.gates[lstm_gate::FORGET].bias.data(), &[1.0, 1.0]);
            assert_eq!(d.gates[lstm_gate::INPUT].bias.data(), &[0.0, 0.0]);
            let bound = 1.0 / 3f64.sqrt();
            assert!(d.gates[0].input.data().iter().all(|v| v.abs() <= bound));
        }
        assert_eq!(cfg.width(), 4);
        assert!("bi-gru".parse::<CellKind>().unwrap() == CellKind::BiGru);
    }
}
