use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use super::*;
use crate::error::Error;

fn mat(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

#[test]
fn tensor_rejects_inconsistent_shape() {
    assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    assert_eq!(Tensor::scalar(3.0).numel(), 1);
}

#[test]
fn matmul_identity_and_hand_case() {
    let mut g = Graph::new();
    let a = g.constant(mat(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
    let i2 = g.constant(Tensor::identity(2));
    let ia = g.matmul(i2, a).unwrap();
    assert_eq!(g.value(ia), g.value(a));

    let ones = g.constant(mat(&[vec![1.0], vec![1.0]]));
    let out = g.matmul(a, ones).unwrap();
    assert_eq!(g.value(out).shape(), &[2, 1]);
    assert_eq!(g.value(out).data(), &[3.0, 7.0]);

    let z = g.constant(Tensor::zeros(&[2, 2]));
    let za = g.matmul(z, a).unwrap();
    assert!(g.value(za).data().iter().all(|&v| v == 0.0));
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    match g.matmul(a, b) {
        Err(Error::Dimension { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected dimension error, got {other:?}"),
    }
}

#[test]
fn elementwise_cases() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let b = g.constant(Tensor::vector(vec![4.0, 5.0, 6.0]));
    let ones = g.constant(Tensor::full(&[3], 1.0));
    let p = g.mul(a, b).unwrap();
    assert_eq!(g.value(p).data(), &[4.0, 10.0, 18.0]);
    let same = g.mul(a, ones).unwrap();
    assert_eq!(g.value(same), g.value(a));
    let neg = g.affine(a, -1.0, 0.0);
    let zero = g.add(a, neg).unwrap();
    assert!(g.value(zero).data().iter().all(|&v| v == 0.0));

    let s = g.constant(Tensor::scalar(2.0));
    let scaled = g.mul(a, s).unwrap();
    assert_eq!(g.value(scaled).data(), &[2.0, 4.0, 6.0]);

    let short = g.constant(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(g.add(a, short), Err(Error::Dimension { .. })));
}

#[test]
fn activation_values() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![0.0, 3.0_f64.ln(), -3.0]));
    let s = g.sigmoid(x);
    let t = g.tanh(x);
    let r = g.relu(x);
    assert_eq!(g.value(s).data()[0], 0.5);
    assert_abs_diff_eq!(g.value(s).data()[1], 0.75, epsilon = 1e-15);
    assert_eq!(g.value(t).data()[0], 0.0);
    assert_eq!(g.value(r).data()[2], 0.0);
}

#[test]
fn softmax_cases() {
    let mut g = Graph::new();
    let c = g.constant(Tensor::vector(vec![7.5; 3]));
    let sc = g.softmax(c).unwrap();
    for v in g.value(sc).data() {
        assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
    }
    let one = g.constant(Tensor::vector(vec![-4.0]));
    let so = g.softmax(one).unwrap();
    assert_eq!(g.value(so).data(), &[1.0]);
    let two = g.constant(Tensor::vector(vec![2.0_f64.ln(), 0.0]));
    let st = g.softmax(two).unwrap();
    assert_abs_diff_eq!(g.value(st).data()[0], 2.0 / 3.0, epsilon = 1e-15);
    assert_abs_diff_eq!(g.value(st).data()[1], 1.0 / 3.0, epsilon = 1e-15);

    let empty = g.constant(Tensor::vector(vec![]));
    assert!(g.softmax(empty).is_err());
}

#[test]
fn concat_cases() {
    let mut g = Graph::new();
    let a = g.param(Tensor::vector(vec![1.0, 2.0]));
    let b = g.param(Tensor::vector(vec![3.0]));
    let e = g.constant(Tensor::vector(vec![]));
    let ab = g.concat(a, b).unwrap();
    assert_eq!(g.value(ab).data(), &[1.0, 2.0, 3.0]);
    let ae = g.concat(a, e).unwrap();
    assert_eq!(g.value(ae), g.value(a));

    let s = g.sum(ab);
    g.backward(s).unwrap();
    assert_eq!(g.grad(a).unwrap(), &[1.0, 1.0]);
    assert_eq!(g.grad(b).unwrap(), &[1.0]);

    let m1 = g.constant(Tensor::zeros(&[2, 2]));
    let m2 = g.constant(Tensor::zeros(&[3, 1]));
    assert!(matches!(g.concat(m1, m2), Err(Error::Dimension { .. })));
}

#[test]
fn backward_square() {
    let mut g = Graph::new();
    let w = g.param(Tensor::scalar(3.0));
    let sq = g.mul(w, w).unwrap();
    g.backward(sq).unwrap();
    assert_eq!(g.grad(w).unwrap(), &[6.0]);
}

#[test]
fn backward_constant_loss() {
    let mut g = Graph::new();
    let w = g.param(Tensor::vector(vec![1.0, -2.0]));
    let zero = g.constant(Tensor::scalar(0.0));
    let killed = g.mul(w, zero).unwrap();
    let s = g.sum(killed);
    let loss = g.affine(s, 1.0, 5.0);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(w).unwrap(), &[0.0, 0.0]);

    // A loss with no trainable ancestors leaves every grad unpopulated.
    let mut g = Graph::new();
    let w = g.param(Tensor::scalar(1.0));
    let c = g.constant(Tensor::scalar(4.0));
    g.backward(c).unwrap();
    assert!(g.grad(w).is_none());
    assert_eq!(g.grad_tensor(w).data(), &[0.0]);
}

#[test]
fn backward_sigmoid_at_zero() {
    let mut g = Graph::new();
    let w = g.param(Tensor::zeros(&[4]));
    let s = g.sigmoid(w);
    let loss = g.sum(s);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(w).unwrap(), &[0.25; 4]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::new();
    let w = g.param(Tensor::zeros(&[2]));
    assert!(matches!(g.backward(w), Err(Error::Contract(_))));
}

#[test]
fn backward_twice_accumulates() {
    let mut g = Graph::new();
    let w = g.param(Tensor::vector(vec![0.3, -1.2]));
    let t = g.tanh(w);
    let sq = g.mul(t, t).unwrap();
    let loss = g.sum(sq);
    g.backward(loss).unwrap();
    let once = g.grad(w).unwrap().to_vec();
    g.backward(loss).unwrap();
    let twice = g.grad(w).unwrap();
    for (a, b) in once.iter().zip(twice) {
        assert_eq!(2.0 * a, *b);
    }
    g.zero_grad();
    assert!(g.grad(w).is_none());
}

#[test]
fn unreachable_grads_stay_empty() {
    let mut g = Graph::new();
    let used = g.param(Tensor::scalar(2.0));
    let unused = g.param(Tensor::scalar(5.0));
    let _other = g.mul(unused, unused).unwrap();
    let loss = g.mul(used, used).unwrap();
    g.backward(loss).unwrap();
    assert!(g.grad(used).is_some());
    assert!(g.grad(unused).is_none());
}

#[test]
fn grad_check_square_and_constant() {
    let err = grad_check(&[Tensor::scalar(1.0)], DEFAULT_EPS, |g, p| {
        g.mul(p[0], p[0])
    })
    .unwrap();
    assert!(err < 1e-7, "err = {err}");

    let err = grad_check(&[Tensor::vector(vec![1.0, 2.0])], DEFAULT_EPS, |g, _| {
        Ok(g.constant(Tensor::scalar(3.0)))
    })
    .unwrap();
    assert!(err < 1e-12, "err = {err}");
}

#[test]
fn grad_check_every_op() {
    let a = mat(&[vec![0.3, -0.7, 1.1], vec![0.5, 0.2, -0.4]]);
    let b = mat(&[vec![0.9, -0.1], vec![0.4, 0.6], vec![-0.8, 0.3]]);
    let v = Tensor::vector(vec![0.2, -0.5, 0.8]);
    let s = Tensor::scalar(0.7);
    let err = grad_check(&[a, b, v, s], DEFAULT_EPS, |g, p| {
        let ab = g.matmul(p[0], p[1])?; // 2x2
        let r0 = g.row(ab, 0)?;
        let r1 = g.row(ab, 1)?;
        let av = g.matvec(p[0], p[2])?; // 2
        let sm = g.softmax(av)?;
        let prod = g.mul(r0, sm)?;
        let diff = g.sub(r1, prod)?;
        let scaled = g.mul(diff, p[3])?;
        let th = g.tanh(scaled);
        let sg = g.sigmoid(r1);
        let rl = g.relu(r0);
        let cat = g.concat(th, sg)?;
        let cat = g.concat(cat, rl)?;
        let stacked = g.stack_rows(&[th, sg])?;
        let st2 = g.concat(stacked, stacked)?;
        let e = g.select(cat, 4)?;
        let cl = g.clamp(sg, 1e-12, 1.0 - 1e-12);
        let lg = g.ln(cl);
        let t1 = g.sum(cat);
        let t2 = g.mean(st2);
        let t3 = g.sum(lg);
        let x = g.add(t1, t2)?;
        let x = g.add(x, t3)?;
        let x = g.mul(x, e)?;
        Ok(g.affine(x, 0.5, 1.0))
    })
    .unwrap();
    assert!(err < 1e-6, "err = {err}");
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(xs in prop::collection::vec(-50.0f64..50.0, 1..20)) {
        let y = softmax(&xs);
        let total: f64 = y.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(y.iter().all(|&v| v > 0.0));
    }
}
