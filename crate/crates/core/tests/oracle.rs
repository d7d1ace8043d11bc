use productae::autodiff::Tape;
use productae::classical::{
    encode_product, encode_product_columns_first, kronecker, message_from_index,
    min_distance_bruteforce, vec_column_major, vec_row_major, verify_product, BitMatrix,
    LinearCode, ProductCodeParams,
};
use productae::model::ProductEncoder;
use productae::nn::{DenseLayer, Fcnn};
use productae::Tensor;

fn spc() -> LinearCode {
    LinearCode::single_parity_check(3).unwrap()
}

fn all_messages(k2: usize, k1: usize) -> impl Iterator<Item = BitMatrix> {
    (0..1u64 << (k1 * k2)).map(move |i| message_from_index(i, k2, k1))
}

#[test]
fn spc_squared_row_space_is_the_product_code() {
    let g = kronecker(spc().generator(), spc().generator());
    assert_eq!((g.rows(), g.cols()), (4, 9));
    let mut span: Vec<Vec<u8>> = (0..16u64)
        .map(|i| {
            let v: Vec<u8> = (0..4).map(|b| ((i >> b) & 1) as u8).collect();
            g.mul_vec(&v).unwrap()
        })
        .collect();
    let mut encoded: Vec<Vec<u8>> = all_messages(2, 2)
        .map(|u| vec_column_major(&encode_product(&spc(), &spc(), &u).unwrap()))
        .collect();
    span.sort();
    encoded.sort();
    span.dedup();
    assert_eq!(span.len(), 16);
    assert_eq!(span, encoded);
}

#[test]
fn commutativity_exhaustive() {
    for (c1, c2) in [
        (spc(), spc()),
        (LinearCode::hamming_7_4(), LinearCode::hamming_7_4()),
    ] {
        for u in all_messages(c2.k(), c1.k()) {
            assert_eq!(
                encode_product(&c1, &c2, &u).unwrap(),
                encode_product_columns_first(&c1, &c2, &u).unwrap()
            );
        }
    }
}

#[test]
fn vectorization_orders() {
    // Asymmetric components so that the two Kronecker orders differ.
    let c1 = spc();
    let c2 = LinearCode::repetition(2).unwrap();
    let g12 = kronecker(c1.generator(), c2.generator());
    let g21 = kronecker(c2.generator(), c1.generator());
    let mut row_major_with_g12_fails = false;
    for u in all_messages(c2.k(), c1.k()) {
        let x = encode_product(&c1, &c2, &u).unwrap();
        assert_eq!(
            g12.mul_vec(&vec_column_major(&u)).unwrap(),
            vec_column_major(&x)
        );
        assert_eq!(g21.mul_vec(&vec_row_major(&u)).unwrap(), vec_row_major(&x));
        row_major_with_g12_fails |= g12.mul_vec(&vec_row_major(&u)).unwrap() != vec_row_major(&x);
    }
    assert!(row_major_with_g12_fails);
}

#[test]
fn product_parameters_and_distances() {
    let spc2 = verify_product(&spc(), &spc()).unwrap();
    assert!(spc2.passed());
    assert_eq!(spc2.distances, [2, 2, 4]);
    assert_eq!((spc2.params.n(), spc2.params.k()), (9, 4));
    assert!((spc2.params.rate() - 4.0 / 9.0).abs() < 1e-15);

    let ham = LinearCode::hamming_7_4();
    let ham2 = verify_product(&ham, &ham).unwrap();
    assert!(ham2.passed());
    assert_eq!(ham2.distances, [3, 3, 9]);
    assert_eq!(ham2.messages, 1 << 16);
    assert_eq!(
        (ham2.params.n(), ham2.params.k(), ham2.params.d()),
        (49, 16, Some(9))
    );
}

#[test]
fn mixed_product_distance() {
    let c = spc().product(&LinearCode::hamming_7_4());
    assert_eq!(min_distance_bruteforce(&c).unwrap(), 6);
    let p = ProductCodeParams::two_d(3, 2, 7, 4)
        .unwrap()
        .with_distances(vec![2, 3])
        .unwrap();
    assert_eq!(p.d(), Some(6));
}

fn linear_net(g: &BitMatrix) -> Fcnn<f64> {
    let w: Vec<f64> = (0..g.rows())
        .flat_map(|r| (0..g.cols()).map(move |c| (r, c)))
        .map(|(r, c)| f64::from(g.get(r, c)))
        .collect();
    let weight = Tensor::new([g.rows(), g.cols()], w).unwrap();
    let bias = Tensor::zeros([g.cols()]);
    Fcnn::from_layers(vec![DenseLayer::from_tensors(weight, bias).unwrap()]).unwrap()
}

fn check_linear_encoder(c1: &LinearCode, c2: &LinearCode) {
    let enc =
        ProductEncoder::from_nets(linear_net(c1.generator()), linear_net(c2.generator())).unwrap();
    let (k1, k2, n1, n2) = (c1.k(), c2.k(), c1.n(), c2.n());
    let messages: Vec<BitMatrix> = all_messages(k2, k1).collect();
    let bits: Vec<f64> = messages
        .iter()
        .flat_map(|u| (0..k2).flat_map(move |r| (0..k1).map(move |c| f64::from(u.get(r, c)))))
        .collect();
    let mut tape = Tape::new();
    let u = tape.constant(Tensor::new([messages.len(), k2, k1], bits).unwrap());
    let raw = enc.encode_raw(&mut tape, u).unwrap();
    let out = tape.value(raw);
    assert_eq!(out.shape(), [messages.len(), n2, n1]);
    for (b, u) in messages.iter().enumerate() {
        let x = encode_product(c1, c2, u).unwrap();
        for r in 0..n2 {
            for c in 0..n1 {
                let v = out.data()[(b * n2 + r) * n1 + c];
                assert_eq!(v.fract(), 0.0);
                assert_eq!(
                    (v as u64 % 2) as u8,
                    x.get(r, c),
                    "message {b} at ({r}, {c})"
                );
            }
        }
    }
}

#[test]
fn linear_instantiation_matches_classical_encoder() {
    check_linear_encoder(&spc(), &spc());
    check_linear_encoder(&LinearCode::hamming_7_4(), &spc());
}
