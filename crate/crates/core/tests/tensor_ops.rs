use mohets::tensor::gradcheck::{check_op, op_suite, CheckOptions};
use mohets::tensor::{gelu, softmax_lastdim, Graph, Tensor};
use proptest::prelude::*;

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape.to_vec(), v).unwrap()
}

#[test]
fn every_primitive_passes_gradcheck_at_ten_points() {
    for case in op_suite() {
        let report = case.check(10, 11).unwrap();
        assert!(report.passed(1e-6), "{}: {report:?}", case.name);
    }
}

#[test]
fn softmax_reference_values() {
    let s = softmax_lastdim(&t(&[4], &[0., 0., 0., 0.])).unwrap();
    assert_eq!(s.data(), &[0.25; 4]);
    // exp(k) / Σ exp, evaluated independently
    let z: f64 = [2.0f64, 1.0, 0.0, -1.0].iter().map(|v| v.exp()).sum();
    let expect: Vec<f64> = [2.0f64, 1.0, 0.0, -1.0].iter().map(|v| v.exp() / z).collect();
    let s = softmax_lastdim(&t(&[4], &[2., 1., 0., -1.])).unwrap();
    for (a, b) in s.data().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12);
    }
    for (a, b) in s.data().iter().zip(&[0.6439, 0.2369, 0.0871, 0.0321]) {
        assert!((a - b).abs() < 1e-4);
    }
    assert_eq!(softmax_lastdim(&t(&[1], &[7.])).unwrap().data(), &[1.0]);
}

#[test]
fn softmax_rejects_non_finite_with_index() {
    let err = softmax_lastdim(&t(&[3], &[0., f64::NAN, 1.])).unwrap_err();
    assert!(matches!(err, mohets::Error::NonFinite { index: 1, .. }), "{err}");
}

#[test]
fn depthwise_conv_examples() {
    let mut g = Graph::<f64>::inference();
    let x = g.constant(t(&[1, 3], &[1., 2., 3.]));
    let id = g.constant(t(&[1, 3], &[0., 1., 0.]));
    let ones = g.constant(t(&[1, 3], &[1., 1., 1.]));
    let a = g.depthwise_conv1d(x, id).unwrap();
    assert_eq!(g.value(a).data(), &[1., 2., 3.]);
    let b = g.depthwise_conv1d(x, ones).unwrap();
    assert_eq!(g.value(b).data(), &[3., 6., 5.]);
    let even = g.constant(t(&[1, 2], &[1., 1.]));
    assert!(matches!(g.depthwise_conv1d(x, even), Err(mohets::Error::Config(_))));
}

#[test]
fn depthwise_channels_are_independent() {
    let base = [1., 2., 3., 4., -1., 0.5, 2., 1.];
    let k = [0.3, -0.2, 0.9, 1.1, 0.4, -0.7];
    let run = |x: &[f64]| {
        let mut g = Graph::<f64>::inference();
        let xv = g.constant(t(&[2, 4], x));
        let kv = g.constant(t(&[2, 3], &k));
        let y = g.depthwise_conv1d(xv, kv).unwrap();
        g.value(y).data().to_vec()
    };
    let y0 = run(&base);
    let mut bumped = base;
    bumped[1] += 5.0;
    let y1 = run(&bumped);
    assert_eq!(&y0[4..], &y1[4..]);
    assert_ne!(&y0[..4], &y1[..4]);
}

#[test]
fn transpose_conv_examples() {
    let mut g = Graph::<f64>::inference();
    let x = g.constant(t(&[1, 1], &[1.]));
    let k = g.constant(t(&[1, 1, 2], &[1., 1.]));
    let y = g.conv_transpose1d(x, k, 2).unwrap();
    assert_eq!(g.value(y).data(), &[1., 1.]);
    let x = g.constant(t(&[1, 2], &[1., 2.]));
    let k = g.constant(t(&[1, 1, 2], &[1., 0.]));
    let y = g.conv_transpose1d(x, k, 2).unwrap();
    assert_eq!(g.value(y).data(), &[1., 0., 2., 0.]);
    assert!(matches!(g.conv_transpose1d(x, k, 1), Err(mohets::Error::Config(_))));
}

#[test]
fn transpose_conv_is_local_to_its_patch() {
    let k: Vec<f64> = (0..2 * 3 * 4).map(|i| (i as f64 * 0.37).sin()).collect();
    let run = |x: &[f64]| {
        let mut g = Graph::<f64>::inference();
        let xv = g.constant(t(&[2, 3], x));
        let kv = g.constant(t(&[2, 3, 4], &k));
        let y = g.conv_transpose1d(xv, kv, 4).unwrap();
        g.value(y).data().to_vec()
    };
    let x = [0.5, -1., 2., 1., 0.3, -0.4];
    let y0 = run(&x);
    let mut x1 = x;
    x1[1] += 1.0; // channel 0, position 1
    let y1 = run(&x1);
    for co in 0..3 {
        for p in 0..12 {
            if y0[co * 12 + p] != y1[co * 12 + p] {
                assert!((4..8).contains(&p), "channel {co} position {p} changed");
            }
        }
        assert_ne!(&y0[co * 12 + 4..co * 12 + 8], &y1[co * 12 + 4..co * 12 + 8]);
    }
}

#[test]
fn rope_reference_rotation() {
    let mut g = Graph::<f64>::inference();
    let q = g.constant(t(&[2, 2], &[1., 0., 1., 0.]));
    let r = g.rope(q, 10000.0, 0).unwrap();
    let v = g.value(r).data();
    assert_eq!(&v[..2], &[1., 0.]);
    assert!((v[2] - 0.5403).abs() < 1e-4 && (v[3] - 0.8415).abs() < 1e-4);
    let odd = g.constant(t(&[1, 3], &[1., 2., 3.]));
    assert!(g.rope(odd, 10000.0, 0).is_err());
}

#[test]
fn full_model_style_linear_check() {
    let x = Tensor::scalar(2.0);
    let r = check_op("y=3x", &[x], &CheckOptions::default(), |g, v| Ok(g.scale(v[0], 3.0))).unwrap();
    assert!(r.max_rel_error < 1e-8);
}

#[test]
fn backward_is_deterministic() {
    let run = || {
        let mut g = Graph::<f32>::new(true, 9);
        let x = g.param(Tensor::from_f64(vec![3, 4], &(0..12).map(|i| i as f64 * 0.1).collect::<Vec<_>>()).unwrap());
        let w = g.param(Tensor::from_f64(vec![4, 2], &[0.1, -0.2, 0.3, 0.5, -0.1, 0.2, 0.7, -0.3]).unwrap());
        let y = g.matmul(x, w);
        let y = g.gelu(y);
        let y = g.dropout(y, 0.3);
        let l = g.mean_all(y);
        let grads = g.backward(l);
        (grads.get(x).unwrap().to_vec(), grads.get(w).unwrap().to_vec())
    };
    let a = run();
    let b = run();
    assert_eq!(a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(a.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn backward_visits_each_op_once_in_reverse() {
    let mut g = Graph::<f64>::inference();
    let x = g.param(t(&[2], &[1., 2.]));
    let a = g.square(x);
    let b = g.exp(x);
    let c = g.add(a, b);
    let l = g.sum_all(c);
    let grads = g.backward(l);
    assert_eq!(grads.visit_order(), &[l.index(), c.index(), b.index(), a.index()]);
    let gx = grads.get(x).unwrap();
    assert!((gx[0] - (2.0 + 1f64.exp())).abs() < 1e-12);
}

proptest! {
    #[test]
    fn softmax_slices_sum_to_one(v in proptest::collection::vec(-30.0f64..30.0, 1..40)) {
        let s = softmax_lastdim(&t(&[v.len()], &v)).unwrap();
        prop_assert!((s.data().iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(s.data().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn sigmoid_in_open_unit_interval(v in proptest::collection::vec(-30.0f64..30.0, 1..20)) {
        let mut g = Graph::<f64>::inference();
        let x = g.constant(t(&[v.len()], &v));
        let y = g.sigmoid(x);
        prop_assert!(g.value(y).data().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn stochastic_ops_are_identity_at_inference(v in proptest::collection::vec(-5.0f64..5.0, 2..20), seed in 0u64..1000) {
        let mut g = Graph::<f64>::new(false, seed);
        let x = g.constant(t(&[v.len()], &v));
        let d = g.dropout(x, 0.5);
        let p = g.drop_path(x, 0.5);
        prop_assert_eq!(g.value(d).data(), &v[..]);
        prop_assert_eq!(g.value(p).data(), &v[..]);
    }
}

#[test]
fn gelu_at_zero() {
    assert_eq!(gelu(0.0f64), 0.0);
}
