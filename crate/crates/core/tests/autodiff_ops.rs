use std::sync::Arc;

use msnas_core::autodiff::{
    finite_difference_check, AutodiffError, CustomOp, GradCheckOptions, Graph, ParamStore, Tensor,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
}

#[test]
fn matmul_with_identity() {
    let g = Graph::<f64>::new();
    let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let i = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let y = g.matmul(a, i).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let g = Graph::<f64>::new();
    let x = g.constant(t(&[3], &[0.0, 0.0, 0.0]));
    let y = g.softmax(x, 0).unwrap();
    for &v in g.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn softmax_survives_huge_logits() {
    let g = Graph::<f32>::new();
    let x = g.constant(Tensor::new(vec![3], vec![1e4f32, -1e4, 0.0]).unwrap());
    let y = g.softmax(x, 0).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 0.0, 0.0]);
}

#[test]
fn conv_of_constant_image_with_ones_kernel() {
    let c = 0.7;
    let g = Graph::<f64>::new();
    let x = g.constant(Tensor::full(vec![1, 5, 5, 1], c));
    let k = g.constant(Tensor::full(vec![3, 3, 1, 1], 1.0));
    let b = g.constant(Tensor::zeros(vec![1]));
    let y = g.conv2d(x, k, b).unwrap();
    let v = g.value(y);
    for yy in 1..4 {
        for xx in 1..4 {
            assert!((v.data()[yy * 5 + xx] - 9.0 * c).abs() < 1e-12);
        }
    }
    // corner sees a 2x2 window
    assert!((v.data()[0] - 4.0 * c).abs() < 1e-12);
}

#[test]
fn square_gradient() {
    let mut s = ParamStore::new();
    let id = s.add("x", Tensor::scalar(3.0)).unwrap();
    let g = Graph::<f64>::new();
    let x = g.param(&s, id);
    let loss = g.square(x).unwrap();
    assert_eq!(g.gradients(loss).unwrap().get(id).unwrap().data(), &[6.0]);
}

#[test]
fn relu_sum_gradient() {
    let mut s = ParamStore::new();
    let id = s.add("x", t(&[2], &[-1.0, 2.0])).unwrap();
    let g = Graph::<f64>::new();
    let y = g.relu(g.param(&s, id)).unwrap();
    let loss = g.sum(y).unwrap();
    assert_eq!(g.gradients(loss).unwrap().get(id).unwrap().data(), &[0.0, 1.0]);
}

#[test]
fn relu_and_max_scalar_subgradients_at_ties() {
    let g = Graph::<f64>::new();
    let x = g.variable(t(&[2], &[0.0, 0.5])).unwrap();
    let r = g.relu(x).unwrap();
    let m = g.max_scalar(x, 0.5).unwrap();
    let total = g.add(r, m).unwrap();
    let loss = g.sum(total).unwrap();
    // relu'(0) = 0, max(x, 0.5) at x = 0.5 routes to the constant
    assert_eq!(g.gradients(loss).unwrap().wrt(x).unwrap().data(), &[0.0, 1.0]);
}

#[test]
fn stable_bce_gradient_at_zero_logit() {
    // max(y,0) - y*t + log(1+e^{-|y|}) at y=0, t=0: derivative of log(1+e^y) is 1/2
    let g = Graph::<f64>::new();
    let y = g.variable(Tensor::scalar(0.0)).unwrap();
    let t = g.constant(Tensor::scalar(0.0));
    let loss = g.sub(g.softplus(y).unwrap(), g.mul(y, t).unwrap()).unwrap();
    assert!((g.scalar(loss) - std::f64::consts::LN_2).abs() < 1e-15);
    let d = g.gradients(loss).unwrap().wrt(y).unwrap().data()[0];
    assert!((d - 0.5).abs() < 1e-15);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let g = Graph::<f64>::new();
    let x = g.variable(t(&[2], &[1.0, 2.0])).unwrap();
    assert!(matches!(g.gradients(x), Err(AutodiffError::NonScalarLoss { .. })));
}

#[test]
fn shape_mismatch_names_node() {
    let g = Graph::<f64>::new();
    let a = g.constant(t(&[2], &[1.0, 2.0]));
    let b = g.constant(t(&[3], &[1.0, 2.0, 3.0]));
    let err = g.add(a, b).unwrap_err();
    match err {
        AutodiffError::ShapeMismatch { node, op, .. } => {
            assert_eq!(node, 2);
            assert_eq!(op, "add");
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn non_finite_forward_is_an_error() {
    let g = Graph::<f64>::new();
    let x = g.constant(t(&[1], &[-1.0]));
    let err = g.log(x).unwrap_err();
    assert!(matches!(err, AutodiffError::NonFinite { op: "log", .. }));
}

#[test]
fn unreachable_parameter_gets_zero_gradient() {
    let mut s = ParamStore::new();
    let a = s.add("a", Tensor::scalar(1.0)).unwrap();
    let b = s.add("b", Tensor::scalar(2.0)).unwrap();
    let g = Graph::<f64>::new();
    let loss = g.square(g.param(&s, a)).unwrap();
    let grads = g.gradients(loss).unwrap();
    assert!(grads.get(b).is_none());
    assert_eq!(grads.get_or_zero(b, &s).data(), &[0.0]);
}

#[test]
fn dense_quadratic_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut s = ParamStore::new();
    let w = s.add("w", Tensor::from_fn(vec![4, 3], |_| rng.gen_range(-1.0..1.0))).unwrap();
    let b = s.add("b", Tensor::from_fn(vec![3], |_| rng.gen_range(-1.0..1.0))).unwrap();
    let x = Tensor::from_fn(vec![5, 4], |_| rng.gen_range(-1.0..1.0));
    let y = Tensor::from_fn(vec![5, 3], |_| rng.gen_range(-1.0..1.0));
    let report = finite_difference_check(&s, &[w, b], GradCheckOptions::default(), |g, s| {
        let xv = g.constant(x.clone());
        let h = g.add_row(g.matmul(xv, g.param(s, w))?, g.param(s, b))?;
        let d = g.sub(h, g.constant(y.clone()))?;
        g.mean(g.square(d)?)
    })
    .unwrap();
    assert!(report.max_rel_error() < 1e-6, "{report:?}");
}

#[test]
fn lstm_bce_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (bsz, inp, hid) = (3, 3, 5);
    let mut s = ParamStore::new();
    let w_ih = s.add("w_ih", Tensor::from_fn(vec![inp, 4 * hid], |_| rng.gen_range(-0.5..0.5))).unwrap();
    let w_hh = s.add("w_hh", Tensor::from_fn(vec![hid, 4 * hid], |_| rng.gen_range(-0.5..0.5))).unwrap();
    let bias = s.add("b", Tensor::from_fn(vec![4 * hid], |_| rng.gen_range(-0.5..0.5))).unwrap();
    let head = s.add("head", Tensor::from_fn(vec![hid, 1], |_| rng.gen_range(-0.5..0.5))).unwrap();
    let xs: Vec<Tensor<f64>> = (0..2).map(|_| Tensor::from_fn(vec![bsz, inp], |_| rng.gen_range(-1.0..1.0))).collect();
    let target = Tensor::new(vec![bsz, 1], vec![1.0, 0.0, 1.0]).unwrap();
    let ids = [w_ih, w_hh, bias, head];
    let report = finite_difference_check(&s, &ids, GradCheckOptions::default(), |g, s| {
        let mut h = g.constant(Tensor::zeros(vec![bsz, hid]));
        let mut c = g.constant(Tensor::zeros(vec![bsz, hid]));
        for x in &xs {
            let out = g.lstm_cell(g.constant(x.clone()), h, c, g.param(s, w_ih), g.param(s, w_hh), g.param(s, bias))?;
            h = g.slice(out, 1, 0, hid)?;
            c = g.slice(out, 1, hid, hid)?;
        }
        let logit = g.matmul(h, g.param(s, head))?;
        let pos = g.max_scalar(logit, 0.0)?;
        let yt = g.mul(logit, g.constant(target.clone()))?;
        let sp = g.log1p(g.exp(g.neg(g.abs(logit)?)?)?)?;
        let l = g.add(g.sub(pos, yt)?, sp)?;
        g.mean(l)
    })
    .unwrap();
    assert!(report.max_rel_error() < 1e-4, "{report:?}");
}

/// Square with a backward rule that is wrong by a factor of three.
struct BrokenSquare;

impl CustomOp<f64> for BrokenSquare {
    fn name(&self) -> &'static str {
        "broken_square"
    }

    fn forward(&self, inputs: &[&Tensor<f64>]) -> Result<Tensor<f64>, String> {
        Ok(inputs[0].map(|v| v * v))
    }

    fn backward(&self, inputs: &[&Tensor<f64>], _output: &Tensor<f64>, grad: &Tensor<f64>) -> Vec<Tensor<f64>> {
        let x = inputs[0];
        let d = x.data().iter().zip(grad.data()).map(|(v, g)| 6.0 * v * g).collect();
        vec![Tensor::new(x.shape().to_vec(), d).unwrap()]
    }
}

#[test]
fn corrupted_backward_rule_is_detected() {
    let mut s = ParamStore::new();
    let id = s.add("x", t(&[3], &[0.5, -1.0, 2.0])).unwrap();
    let report = finite_difference_check(&s, &[id], GradCheckOptions::default(), |g, s| {
        let y = g.custom(&[g.param(s, id)], Arc::new(BrokenSquare))?;
        g.sum(y)
    })
    .unwrap();
    assert!(report.max_rel_error() > 1e-2);
}

#[test]
fn forward_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Graph::<f32>::new();
        let x = g.constant(Tensor::from_fn(vec![2, 6, 6, 3], |_| rng.gen_range(-1.0..1.0)));
        let k = g.constant(Tensor::from_fn(vec![3, 3, 3, 4], |_| rng.gen_range(-1.0..1.0)));
        let b = g.constant(Tensor::from_fn(vec![4], |_| rng.gen_range(-1.0..1.0)));
        let y = g.maxpool2x2(g.relu(g.conv2d(x, k, b).unwrap()).unwrap()).unwrap();
        let out = g.value(y).clone();
        out
    };
    assert_eq!(run(), run());
}

#[test]
fn gradients_of_independent_subgraphs_concatenate() {
    let mut s = ParamStore::new();
    let a = s.add("a", t(&[2], &[0.3, -0.7])).unwrap();
    let b = s.add("b", t(&[2], &[1.1, 0.4])).unwrap();
    let part = |g: &Graph<f64>, id, f: fn(&Graph<f64>, _) -> _| {
        let p = g.param(&s, id);
        let y = f(g, p);
        g.sum(y).unwrap()
    };
    let fa: fn(&Graph<f64>, _) -> _ = |g, p| g.sin(p).unwrap();
    let fb: fn(&Graph<f64>, _) -> _ = |g, p| g.exp(p).unwrap();

    let g = Graph::new();
    let la = part(&g, a, fa);
    let lb = part(&g, b, fb);
    let joint = g.gradients(g.add(la, lb).unwrap()).unwrap();

    let ga = Graph::new();
    let only_a = ga.gradients(part(&ga, a, fa)).unwrap();
    let gb = Graph::new();
    let only_b = gb.gradients(part(&gb, b, fb)).unwrap();
    assert_eq!(joint.get(a), only_a.get(a));
    assert_eq!(joint.get(b), only_b.get(b));
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(v in proptest::collection::vec(-50.0f64..50.0, 1..12)) {
        let g = Graph::<f64>::new();
        let n = v.len();
        let x = g.constant(Tensor::new(vec![n], v).unwrap());
        let y = g.softmax(x, 0).unwrap();
        let vals = g.value(y);
        prop_assert!(vals.data().iter().all(|&p| p > 0.0));
        let total: f64 = vals.data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-6);
    }
}
