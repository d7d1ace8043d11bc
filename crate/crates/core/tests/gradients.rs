use productae::autodiff::{sigmoid, Tape};
use productae::gradcheck::{
    check_fcnn_params, check_model, check_op, check_ops, tiny_model_config,
};
use productae::Tensor;
use proptest::prelude::*;

#[test]
fn every_op_matches_finite_differences() {
    let results = check_ops(30, 2024).unwrap();
    assert!(results.len() >= 20);
    for r in &results {
        assert!(r.checked > 0, "{}", r.name);
        assert!(
            r.max_rel_err < 1e-4,
            "{}: {:.3e} at {}",
            r.name,
            r.max_rel_err,
            r.worst
        );
    }
}

#[test]
fn matmul_gradient_of_sum() {
    let a = Tensor::from_f64(
        [3, 4],
        &[
            0.3, -1.2, 0.5, 2.0, 1.1, 0.0, -0.7, 0.4, 0.9, -0.2, 1.5, -1.0,
        ],
    )
    .unwrap();
    let b = Tensor::from_f64([4, 2], &[0.6, -0.1, 1.3, 0.8, -0.5, 0.2, 0.7, -1.4]).unwrap();
    let r = check_op("matmul", &[a, b], 1, |t, v| {
        let m = t.matmul(v[0], v[1])?;
        Ok(t.sum(m))
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-6, "{:.3e}", r.max_rel_err);
}

#[test]
fn selu_slope_at_minus_one() {
    let r = check_op(
        "selu",
        &[Tensor::from_f64([1], &[-1.0]).unwrap()],
        1,
        |t, v| {
            let s = t.selu(v[0]);
            Ok(t.sum(s))
        },
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-6);
    let mut tape = Tape::<f64>::new();
    let x = tape.input(Tensor::from_f64([1], &[-1.0]).unwrap(), true);
    let s = tape.selu(x);
    let s = tape.sum(s);
    let g = tape.backward(s).unwrap();
    let expected = 1.050_700_987_355_480_5 * 1.673_263_242_354_377_2 * (-1f64).exp();
    assert!((g.wrt(x).unwrap().item() - expected).abs() < 1e-15);
}

#[test]
fn bce_gradient_is_sigmoid_minus_target() {
    let z = [-3.0, -0.5, 0.0, 0.7, 4.0, 12.0];
    let t = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
    for (z, t) in [(30.0, 1.0), (30.0, 0.0), (-30.0, 1.0), (-30.0, 0.0)] {
        let mut tape = Tape::<f64>::new();
        let zv = tape.input(Tensor::from_f64([1], &[z]).unwrap(), true);
        let tv = tape.constant(Tensor::from_f64([1], &[t]).unwrap());
        let loss = tape.bce_with_logits(zv, tv).unwrap();
        assert!(tape.value(loss).is_finite());
        let g = tape.backward(loss).unwrap().wrt(zv).unwrap().item();
        assert!(
            (g - (sigmoid(z) - t)).abs()
                <= 1e-15 * (sigmoid(z) - t).abs().max(1e-300) + f64::MIN_POSITIVE
        );
    }
    let mut tape = Tape::<f64>::new();
    let zv = tape.input(Tensor::from_f64([6], &z).unwrap(), true);
    let tv = tape.constant(Tensor::from_f64([6], &t).unwrap());
    let loss = tape.bce_with_logits(zv, tv).unwrap();
    let g = tape.backward(loss).unwrap();
    for (i, gi) in g.wrt(zv).unwrap().data().iter().enumerate() {
        assert!((gi - (sigmoid(z[i]) - t[i]) / 6.0).abs() < 1e-15);
    }
    let r = check_op(
        "bce",
        &[Tensor::from_f64([6], &z).unwrap()],
        3,
        move |tp, v| {
            let tv = tp.constant(Tensor::from_f64([6], &t).unwrap());
            tp.bce_with_logits(v[0], tv)
        },
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-6, "{:.3e}", r.max_rel_err);
}

#[test]
fn fcnn_parameter_gradients() {
    let r = check_fcnn_params(8).unwrap();
    assert_eq!(r.checked, 4 * 16 + 16 + 16 * 3 + 3);
    assert!(r.max_rel_err < 1e-5, "{:.3e} at {}", r.max_rel_err, r.worst);
}

#[test]
fn end_to_end_model_gradients() {
    let r = check_model(&tiny_model_config(), 250, 0).unwrap();
    assert_eq!(r.checked, 250);
    assert!(r.max_rel_err < 1e-3, "{:.3e} at {}", r.max_rel_err, r.worst);
}

fn tensor(shape: &'static [usize], lo: f64, hi: f64) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(lo..hi, n).prop_map(move |d| Tensor::new(shape.to_vec(), d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn backward_twice_doubles(a in tensor(&[3, 4], -2.0, 2.0), b in tensor(&[4, 2], -2.0, 2.0)) {
        let mut tape = Tape::new();
        let av = tape.input(a, true);
        let bv = tape.input(b, true);
        let m = tape.matmul(av, bv).unwrap();
        let s = tape.selu(m);
        let loss = tape.mean(s);
        let g1 = tape.backward(loss).unwrap();
        let g2 = tape.backward(loss).unwrap();
        let mut acc = g1.wrt(av).unwrap().clone();
        for (x, y) in acc.data_mut().iter_mut().zip(g2.wrt(av).unwrap().data()) {
            *x += y;
        }
        let doubled = g1.wrt(av).unwrap().map(|x| 2.0 * x);
        prop_assert_eq!(acc, doubled);
    }

    #[test]
    fn extreme_logits_stay_finite(z in tensor(&[2, 8], -30.0, 30.0), bits in prop::collection::vec(any::<bool>(), 16)) {
        let targets = Tensor::new([2, 8], bits.iter().map(|&b| f64::from(b)).collect()).unwrap();
        let mut tape = Tape::new();
        let zv = tape.input(z, true);
        let s = tape.selu(zv);
        let p = productae::channel::power_normalize(&mut tape, s).unwrap();
        let tv = tape.constant(targets);
        let loss = tape.bce_with_logits(p, tv).unwrap();
        let direct = tape.bce_with_logits(zv, tv).unwrap();
        let total = tape.add(loss, direct).unwrap();
        prop_assert!(tape.value(total).is_finite());
        let g = tape.backward(total).unwrap();
        prop_assert!(g.wrt(zv).unwrap().is_finite());
    }
}
