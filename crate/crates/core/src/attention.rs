//! Visit-level and feature-level attention over encoder states, and the
//! context vector they weight.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{bind, join, uniform_matrix, uniform_vector, Role};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams<T = Tensor> {
    /// `[width]`, scores each visit.
    pub w_alpha: T,
    /// Scalar.
    pub b_alpha: T,
    /// `[d_model × width]`, maps a state to per-feature scores.
    pub w_beta: T,
    /// `[d_model]`
    pub b_beta: T,
}

impl AttentionParams<Tensor> {
    pub fn init(width: usize, d_model: usize, rng: &mut impl Rng) -> Self {
        AttentionParams {
            w_alpha: uniform_vector(width, width, rng),
            b_alpha: Tensor::scalar(0.0),
            w_beta: uniform_matrix(d_model, width, rng),
            b_beta: Tensor::zeros(&[d_model]),
        }
    }

    pub fn zeros(width: usize, d_model: usize) -> Self {
        AttentionParams {
            w_alpha: Tensor::zeros(&[width]),
            b_alpha: Tensor::scalar(0.0),
            w_beta: Tensor::zeros(&[d_model, width]),
            b_beta: Tensor::zeros(&[d_model]),
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> AttentionParams<Var> {
        self.map(&mut |t| bind(g, t, trainable))
    }

    pub fn check(&self, width: usize, d_model: usize) -> Result<()> {
        for (t, want) in [
            (&self.w_alpha, vec![width]),
            (&self.b_alpha, vec![]),
            (&self.w_beta, vec![d_model, width]),
            (&self.b_beta, vec![d_model]),
        ] {
            if t.shape() != want.as_slice() {
                return Err(Error::dim("attention parameters", &want, t.shape()));
            }
        }
        Ok(())
    }
}

impl<T> AttentionParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> AttentionParams<U> {
        AttentionParams {
            w_alpha: f(&self.w_alpha),
            b_alpha: f(&self.b_alpha),
            w_beta: f(&self.w_beta),
            b_beta: f(&self.b_beta),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Role, &T)) {
        f(&join(prefix, "w_alpha"), Role::Weight, &self.w_alpha);
        f(&join(prefix, "b_alpha"), Role::Bias, &self.b_alpha);
        f(&join(prefix, "w_beta"), Role::Weight, &self.w_beta);
        f(&join(prefix, "b_beta"), Role::Bias, &self.b_beta);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Role, &mut T)) {
        f(&join(prefix, "w_alpha"), Role::Weight, &mut self.w_alpha);
        f(&join(prefix, "b_alpha"), Role::Bias, &mut self.b_alpha);
        f(&join(prefix, "w_beta"), Role::Weight, &mut self.w_beta);
        f(&join(prefix, "b_beta"), Role::Bias, &mut self.b_beta);
    }
}

/// Concrete attention weights read off a forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights {
    /// One weight per visit, summing to one.
    pub alpha: Vec<f64>,
    /// `beta[j]` spreads visit `j` over the `d_model` features, summing to one.
    pub beta: Vec<Vec<f64>>,
}

/// `alpha = softmax(H · w_alpha + b_alpha)`, one weight per row of `H`.
pub fn visit_attention(g: &mut Graph, h: Var, p: &AttentionParams<Var>) -> Result<Var> {
    if g.value(h).rank() != 2 || g.value(h).rows() == 0 {
        return Err(Error::Contract(format!(
            "attention needs a non-empty [t × width] state matrix, got {:?}",
            g.shape(h)
        )));
    }
    let k = g.matvec(h, p.w_alpha)?;
    let k = g.add(k, p.b_alpha)?;
    g.softmax(k)
}

/// `beta[j] = softmax(tanh(w_beta · h_j + b_beta))`, one vector per visit.
pub fn feature_attention(g: &mut Graph, h: Var, p: &AttentionParams<Var>) -> Result<Vec<Var>> {
    let t = g.value(h).rows();
    if g.value(h).rank() != 2 || t == 0 {
        return Err(Error::Contract(format!(
            "attention needs a non-empty [t × width] state matrix, got {:?}",
            g.shape(h)
        )));
    }
    (0..t)
        .map(|j| {
            let hj = g.row(h, j)?;
            let raw = g.matvec(p.w_beta, hj)?;
            let raw = g.add(raw, p.b_beta)?;
            let raw = g.tanh(raw);
            g.softmax(raw)
        })
        .collect()
}

/// `c = Σ_j alpha[j] · (beta[j] ⊙ Z[j])`.
pub fn context_vector(g: &mut Graph, alpha: Var, beta: &[Var], z: Var) -> Result<Var> {
    let t = g.value(z).rows();
    if g.value(alpha).numel() != t || beta.len() != t || g.value(z).rank() != 2 {
        return Err(Error::dim(
            "context_vector",
            &[g.value(alpha).numel(), beta.len()],
            g.shape(z),
        ));
    }
    let mut acc: Option<Var> = None;
    for (j, &bj) in beta.iter().enumerate() {
        let zj = g.row(z, j)?;
        let gated = g.mul(bj, zj)?;
        let aj = g.select(alpha, j)?;
        let term = g.mul(gated, aj)?;
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    acc.ok_or_else(|| Error::Contract("context_vector needs at least one visit".into()))
}

/// Reads attention weights off the graph.
pub fn read_weights(g: &Graph, alpha: Var, beta: &[Var]) -> AttentionWeights {
    AttentionWeights {
        alpha: g.value(alpha).data().to_vec(),
        beta: beta.iter().map(|&b| g.value(b).data().to_vec()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autograd::{grad_check, DEFAULT_EPS};

    fn constant_params(g: &mut Graph, p: &AttentionParams) -> AttentionParams<Var> {
        p.bind(g, false)
    }

    #[test]
    fn single_visit_gets_all_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = AttentionParams::init(3, 2, &mut rng);
        let mut g = Graph::new();
        let bp = constant_params(&mut g, &p);
        let h = g.constant(Tensor::from_rows(&[vec![0.2, -0.1, 0.5]]).unwrap());
        let a = visit_attention(&mut g, h, &bp).unwrap();
        assert_eq!(g.value(a).data(), &[1.0]);
    }

    #[test]
    fn identical_states_uniform_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = AttentionParams::init(2, 2, &mut rng);
        let mut g = Graph::new();
        let bp = constant_params(&mut g, &p);
        let h = g.constant(Tensor::from_rows(&vec![vec![0.3, 0.9]; 4]).unwrap());
        let a = visit_attention(&mut g, h, &bp).unwrap();
        for v in g.value(a).data() {
            assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn constructed_scores_give_two_thirds() {
        // k = [ln 2, 0] from w_alpha = [1, 0] and states [ln 2, *], [0, *].
        let mut p = AttentionParams::zeros(2, 1);
        p.w_alpha = Tensor::vector(vec![1.0, 0.0]);
        let mut g = Graph::new();
        let bp = constant_params(&mut g, &p);
        let h = g.constant(Tensor::from_rows(&[vec![2f64.ln(), 5.0], vec![0.0, -3.0]]).unwrap());
        let a = visit_attention(&mut g, h, &bp).unwrap();
        assert_abs_diff_eq!(g.value(a).data()[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.value(a).data()[1], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn feature_attention_cases() {
        let p = AttentionParams::zeros(3, 4);
        let mut g = Graph::new();
        let bp = constant_params(&mut g, &p);
        let h = g.constant(Tensor::zeros(&[2, 3]));
        for b in feature_attention(&mut g, h, &bp).unwrap() {
            assert_eq!(g.value(b).data(), &[0.25; 4]);
        }

        let p1 = AttentionParams::zeros(3, 1);
        let bp1 = constant_params(&mut g, &p1);
        let h1 = g.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap());
        let b1 = feature_attention(&mut g, h1, &bp1).unwrap();
        assert_eq!(g.value(b1[0]).data(), &[1.0]);

        // raw = [tanh(1), tanh(-1)] via w_beta = [[1], [-1]] and h = [1].
        let mut p2 = AttentionParams::zeros(1, 2);
        p2.w_beta = Tensor::matrix(2, 1, vec![1.0, -1.0]).unwrap();
        let bp2 = constant_params(&mut g, &p2);
        let h2 = g.constant(Tensor::from_rows(&[vec![1.0]]).unwrap());
        let b2 = feature_attention(&mut g, h2, &bp2).unwrap();
        let t = 1f64.tanh();
        let hi = t.exp() / (t.exp() + (-t).exp());
        assert_abs_diff_eq!(g.value(b2[0]).data()[0], hi, epsilon = 1e-15);
        assert_abs_diff_eq!(g.value(b2[0]).data()[0], 0.8210, epsilon = 1e-4);
        assert_abs_diff_eq!(g.value(b2[0]).data()[1], 0.1790, epsilon = 1e-4);
    }

    #[test]
    fn context_vector_cases() {
        let mut g = Graph::new();
        let alpha = g.constant(Tensor::vector(vec![1.0]));
        let b = g.constant(Tensor::vector(vec![0.6, 0.4]));
        let z = g.constant(Tensor::from_rows(&[vec![3.0, -2.0]]).unwrap());
        let c = context_vector(&mut g, alpha, &[b], z).unwrap();
        assert_eq!(g.value(c).data(), &[0.6 * 3.0, 0.4 * -2.0]);

        let zz = g.constant(Tensor::zeros(&[1, 2]));
        let c0 = context_vector(&mut g, alpha, &[b], zz).unwrap();
        assert_eq!(g.value(c0).data(), &[0.0, 0.0]);

        let alpha = g.constant(Tensor::vector(vec![0.5, 0.5]));
        let u = g.constant(Tensor::vector(vec![0.5, 0.5]));
        let z = g.constant(Tensor::from_rows(&[vec![2.0, 4.0], vec![6.0, 8.0]]).unwrap());
        let c = context_vector(&mut g, alpha, &[u, u], z).unwrap();
        assert_eq!(g.value(c).data(), &[2.0, 3.0]);

        assert!(context_vector(&mut g, alpha, &[u], z).is_err());
    }

    fn random_states(rng: &mut impl Rng, t: usize, w: usize) -> Tensor {
        let data = (0..t * w).map(|_| rng.random_range(-3.0..3.0)).collect();
        Tensor::matrix(t, w, data).unwrap()
    }

    #[test]
    fn weights_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let t = rng.random_range(1..8);
            let w = rng.random_range(1..6);
            let d = rng.random_range(1..6);
            let mut p = AttentionParams::init(w, d, &mut rng);
            p.visit_mut("", &mut |_, _, x| *x = x.map(|v| v * 4.0));
            let mut g = Graph::new();
            let bp = constant_params(&mut g, &p);
            let h = g.constant(random_states(&mut rng, t, w));
            let a = visit_attention(&mut g, h, &bp).unwrap();
            let bs = feature_attention(&mut g, h, &bp).unwrap();
            let weights = read_weights(&g, a, &bs);
            assert!((weights.alpha.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            for row in &weights.beta {
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                assert!(row.iter().all(|&v| v > 0.0 && v < 1.0 || d == 1));
            }
        }
    }

    #[test]
    fn context_is_linear_in_z() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (t, d) = (3, 4);
        let mut g = Graph::new();
        let alpha = g.constant(Tensor::vector(crate::autograd::softmax(&[0.3, -1.0, 0.8])));
        let beta: Vec<Var> = (0..t)
            .map(|_| {
                let raw: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                g.constant(Tensor::vector(crate::autograd::softmax(&raw)))
            })
            .collect();
        let z1 = random_states(&mut rng, t, d);
        let z2 = random_states(&mut rng, t, d);
        let (a, b) = (1.7, -0.4);
        let mixed = Tensor::matrix(
            t,
            d,
            z1.data().iter().zip(z2.data()).map(|(x, y)| a * x + b * y).collect(),
        )
        .unwrap();
        let v1 = g.constant(z1);
        let v2 = g.constant(z2);
        let vm = g.constant(mixed);
        let c1 = context_vector(&mut g, alpha, &beta, v1).unwrap();
        let c2 = context_vector(&mut g, alpha, &beta, v2).unwrap();
        let cm = context_vector(&mut g, alpha, &beta, vm).unwrap();
        for i in 0..d {
            let lin = a * g.value(c1).data()[i] + b * g.value(c2).data()[i];
            assert_abs_diff_eq!(g.value(cm).data()[i], lin, epsilon = 1e-12);
        }
    }

    #[test]
    fn weights_ignore_z_scale() {
        // alpha and beta are computed from H alone; Z only enters the context.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = AttentionParams::init(3, 2, &mut rng);
        let h = random_states(&mut rng, 4, 3);
        let mut g = Graph::new();
        let bp = constant_params(&mut g, &p);
        let hv = g.constant(h);
        let a = visit_attention(&mut g, hv, &bp).unwrap();
        let bs = feature_attention(&mut g, hv, &bp).unwrap();
        let z = random_states(&mut rng, 4, 2);
        let z1 = g.constant(z.clone());
        let z10 = g.constant(z.map(|v| 10.0 * v));
        let c1 = context_vector(&mut g, a, &bs, z1).unwrap();
        let c10 = context_vector(&mut g, a, &bs, z10).unwrap();
        let before = read_weights(&g, a, &bs);
        for i in 0..2 {
            assert_abs_diff_eq!(
                g.value(c10).data()[i],
                10.0 * g.value(c1).data()[i],
                epsilon = 1e-12
            );
        }
        assert_eq!(before, read_weights(&g, a, &bs));
    }

    #[test]
    fn gradient_through_attention_stack() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (t, w, d) = (3, 4, 3);
        let p = AttentionParams::init(w, d, &mut rng);
        let h = random_states(&mut rng, t, w).map(|v| v / 3.0);
        let z = random_states(&mut rng, t, d);
        let mut leaves = vec![h, z];
        p.visit("", &mut |_, _, x| leaves.push(x.clone()));
        let err = grad_check(&leaves, DEFAULT_EPS, |g, v| {
            let mut it = v[2..].iter().copied();
            let bp = p.map(&mut |_| it.next().unwrap());
            let a = visit_attention(g, v[0], &bp)?;
            let bs = feature_attention(g, v[0], &bp)?;
            let c = context_vector(g, a, &bs, v[1])?;
            let target = g.constant(Tensor::vector(vec![0.2, -0.4, 0.9]));
            let diff = g.sub(c, target)?;
            let sq = g.mul(diff, diff)?;
            Ok(g.sum(sq))
        })
        .unwrap();
        assert!(err < 1e-4, "err = {err}");
    }
}
