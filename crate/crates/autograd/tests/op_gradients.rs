use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slscom_autograd::gradcheck::{check_input, check_params};
use slscom_autograd::{ParamKind, ParamStore, Tape, Tensor, Var};

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Projects any output onto a fixed random direction so every op reduces to a scalar.
fn probe<'a>(y: Var<'a>, seed: u64) -> Var<'a> {
    let w = random(&y.shape(), seed);
    y.mul(y.tape().constant(w)).sum()
}

const TOL: f64 = 1e-7;

#[test]
fn elementwise_and_reductions() {
    let x = random(&[3, 4], 1);
    let other = random(&[3, 4], 2);
    let c = check_input(&x, 100, 1e-6, |t, v| {
        let o = t.constant(other.clone());
        probe(v.mul(o).add(v.scale(0.5)).sub(o).relu(), 3)
    });
    assert!(c.relative_error() < TOL, "{}", c.relative_error());
}

#[test]
fn matmul_and_linear() {
    let x = random(&[5, 3], 4);
    let w = random(&[3, 6], 5);
    let c = check_input(&x, 100, 1e-6, |t, v| probe(v.matmul(t.constant(w.clone())), 6));
    assert!(c.relative_error() < TOL);
    let c = check_input(&w, 100, 1e-6, |t, v| probe(t.constant(x.clone()).matmul(v), 6));
    assert!(c.relative_error() < TOL);

    let mut store = ParamStore::new();
    let wid = store.add("w", ParamKind::Weight, random(&[4, 3], 7));
    let bid = store.add("b", ParamKind::Weight, random(&[4], 8));
    let c = check_params(&mut store, &[wid, bid], 50, 1e-6, |t, s| {
        let y = t.constant(x.clone()).linear(t.param(s, wid, true), Some(t.param(s, bid, true)));
        probe(y, 9)
    });
    assert!(c.relative_error() < TOL);
}

#[test]
fn convolutions() {
    let x = random(&[2, 3, 6, 5], 10);
    let mut store = ParamStore::new();
    let wid = store.add("w", ParamKind::Weight, random(&[4, 3, 3, 3], 11));
    let bid = store.add("b", ParamKind::Weight, random(&[4], 12));
    for &(stride, pad) in &[(1, 1), (2, 1), (2, 0)] {
        let c = check_params(&mut store, &[wid, bid], 60, 1e-6, |t, s| {
            let y = t
                .constant(x.clone())
                .conv2d(t.param(s, wid, true), Some(t.param(s, bid, true)), stride, pad);
            probe(y, 13)
        });
        assert!(c.relative_error() < TOL, "conv params s={stride} p={pad}: {}", c.relative_error());
        let w = store.get(wid).clone();
        let c = check_input(&x, 80, 1e-6, |t, v| probe(v.conv2d(t.constant(w.clone()), None, stride, pad), 14));
        assert!(c.relative_error() < TOL, "conv input: {}", c.relative_error());
    }

    let tw = store.add("tw", ParamKind::Weight, random(&[3, 2, 4, 4], 15));
    let tb = store.add("tb", ParamKind::Weight, random(&[2], 16));
    let c = check_params(&mut store, &[tw, tb], 60, 1e-6, |t, s| {
        let y = t
            .constant(x.clone())
            .conv_transpose2d(t.param(s, tw, true), Some(t.param(s, tb, true)), 2, 1, 0);
        probe(y, 17)
    });
    assert!(c.relative_error() < TOL);
    let w = store.get(tw).clone();
    let c = check_input(&x, 80, 1e-6, |t, v| probe(v.conv_transpose2d(t.constant(w.clone()), None, 2, 1, 0), 18));
    assert!(c.relative_error() < TOL);
}

#[test]
fn batch_norm_train_and_eval() {
    let x = random(&[4, 3, 2, 2], 20);
    let mut store = ParamStore::new();
    let g = store.add("g", ParamKind::Weight, random(&[3], 21));
    let b = store.add("b", ParamKind::Weight, random(&[3], 22));
    let rm = Tensor::zeros(&[3]);
    let rv = Tensor::full(&[3], 1.5);
    for train in [true, false] {
        let c = check_params(&mut store, &[g, b], 10, 1e-6, |t, s| {
            let (y, _) = t
                .constant(x.clone())
                .batch_norm(t.param(s, g, true), t.param(s, b, true), &rm, &rv, train, 0.1, 1e-5);
            probe(y, 23)
        });
        assert!(c.relative_error() < TOL);
        let gamma = store.get(g).clone();
        let beta = store.get(b).clone();
        let c = check_input(&x, 48, 1e-6, |t, v| {
            let (y, _) = v.batch_norm(t.constant(gamma.clone()), t.constant(beta.clone()), &rm, &rv, train, 0.1, 1e-5);
            probe(y, 24)
        });
        assert!(c.relative_error() < 1e-6, "train={train}: {}", c.relative_error());
    }
}

#[test]
fn pooling_gather_concat() {
    let x = random(&[2, 2, 5, 5], 30);
    let c = check_input(&x, 100, 1e-6, |_, v| probe(v.max_pool2d(3, 2, 1), 31));
    assert!(c.relative_error() < TOL);
    let c = check_input(&x, 100, 1e-6, |_, v| probe(v.global_avg_pool(), 32));
    assert!(c.relative_error() < TOL);

    let m = random(&[3, 4], 33);
    let idx = [3, 0, 0, 2, 1, 3, 3];
    let c = check_input(&m, 12, 1e-6, |t, v| {
        let other = t.constant(random(&[3, 2], 34));
        probe(Var::concat_cols(&[v.gather_cols(&idx), other, v]), 35)
    });
    assert!(c.relative_error() < TOL);
}

#[test]
fn normalizations_and_softmax() {
    let x = random(&[4, 6], 40);
    let c = check_input(&x, 24, 1e-6, |_, v| probe(v.row_normalize(1.0), 41));
    assert!(c.relative_error() < TOL);
    let c = check_input(&x, 24, 1e-6, |_, v| probe(v.row_normalize(3.0f64.sqrt()), 42));
    assert!(c.relative_error() < TOL);
    let c = check_input(&x, 24, 1e-6, |_, v| probe(v.softmax(), 43));
    assert!(c.relative_error() < TOL);
}

#[test]
fn complex_affine_gradient() {
    let x = random(&[3, 8], 50);
    let a = random(&[3, 8], 51);
    let b = random(&[3, 8], 52);
    let c = check_input(&x, 24, 1e-6, |_, v| probe(v.complex_affine(&a, &b), 53));
    assert!(c.relative_error() < TOL);
    // value check: (1 + 2j) * (3 - 1j) + (0.5 + 0j) = 5.5 + 5j
    let tape = Tape::new();
    let z = tape
        .constant(Tensor::from_vec(&[1, 2], vec![3.0, -1.0]).unwrap())
        .complex_affine(
            &Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap(),
            &Tensor::from_vec(&[1, 2], vec![0.5, 0.0]).unwrap(),
        );
    assert_eq!(z.value().data(), &[5.5, 5.0]);
}

#[test]
fn fused_losses() {
    let a = random(&[5, 4], 60);
    let b = random(&[5, 4], 61);
    let c = check_input(&a, 20, 1e-6, |t, v| v.infonce(t.constant(b.clone())));
    assert!(c.relative_error() < TOL);
    let c = check_input(&b, 20, 1e-6, |t, v| t.constant(a.clone()).infonce(v));
    assert!(c.relative_error() < TOL);
    // Shared argument: both sides depend on the same leaf.
    let c = check_input(&a, 20, 1e-6, |_, v| v.infonce(v.scale(0.7)));
    assert!(c.relative_error() < TOL);
    let c = check_input(&a, 20, 1e-6, |t, v| v.mean_row_sq_dist(t.constant(b.clone())));
    assert!(c.relative_error() < TOL);

    let logits = random(&[4, 3], 62);
    let mut targets = Tensor::zeros(&[4, 3]);
    for (i, cls) in [0usize, 2, 1, 2].iter().enumerate() {
        targets.data_mut()[i * 3 + cls] = 1.0;
    }
    let c = check_input(&logits, 12, 1e-6, |_, v| v.softmax().cross_entropy(&targets, 1e-12));
    assert!(c.relative_error() < TOL);
}

#[test]
fn shared_parameter_accumulates_both_uses() {
    let mut store = ParamStore::new();
    let id = store.add("w", ParamKind::Weight, Tensor::from_vec(&[1], vec![3.0]).unwrap());
    let tape = Tape::new();
    let w1 = tape.param(&store, id, true);
    let w2 = tape.param(&store, id, true);
    let loss = w1.mul(w2).sum();
    let g = tape.backward(loss);
    assert_eq!(g.param(id).unwrap().data(), &[6.0]);
}

proptest! {
    #[test]
    fn row_normalize_hits_target_norm(data in prop::collection::vec(-10.0f64..10.0, 12), target in 0.1f64..20.0) {
        prop_assume!(data.chunks(4).all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-6));
        let tape = Tape::new();
        let y = tape.constant(Tensor::from_vec(&[3, 4], data).unwrap()).row_normalize(target);
        for row in y.value().rows() {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((n - target).abs() <= 1e-12 * target);
        }
    }
}
