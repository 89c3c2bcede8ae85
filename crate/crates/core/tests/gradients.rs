use protoscope::gradcheck::{central_difference, check_model, kink_margin, relative_error, DEFAULT_STEP};
use protoscope::network::{LayerSpec, Model, NetworkSpec};
use protoscope::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Value and input gradient of a scalar function recorded on a fresh tape.
fn tape_eval(x: &[f64], f: impl Fn(&mut Tape, Var) -> Var) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let v = tape.leaf(Tensor::vector(x.to_vec()).unwrap(), true);
    let root = f(&mut tape, v);
    tape.backward(root).unwrap();
    (tape.value(root).item().unwrap(), tape.grad(v).unwrap().data().to_vec())
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| relative_error(x, y)).fold(0.0, f64::max)
}

/// Random points at which no ReLU pre-activation is within `margin` of 0.
fn kink_free_points(model: &Model, rng: &mut ChaCha8Rng, count: usize, margin: f64) -> Vec<Vec<f64>> {
    let mut points = Vec::new();
    while points.len() < count {
        let x = normal_vec(rng, model.input_dim());
        if kink_margin(model, &x).unwrap() > margin {
            points.push(x);
        }
    }
    points
}

#[test]
fn three_layer_mlp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for net_seed in 0..3 {
        let model = Model::build(NetworkSpec::dense(5, 6, 3, &[7], net_seed)).unwrap();
        for x in kink_free_points(&model, &mut rng, 20, 1e-3) {
            let target = rng.random_range(0..3);
            let r = check_model(&model, &x, target, DEFAULT_STEP).unwrap();
            assert!(
                r.max_error() < 1e-4,
                "net {net_seed}, worst {} = {:e}",
                r.worst,
                r.max_error()
            );
        }
    }
}

#[test]
fn conv_network_matches_finite_differences() {
    let spec = NetworkSpec {
        input_dim: 25,
        feature_dim: 6,
        num_classes: 3,
        hidden: vec![LayerSpec::conv(2, 3, 1), LayerSpec::conv(2, 2, 1), LayerSpec::Dense(5)],
        seed: 4,
    };
    let model = Model::build(spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for x in kink_free_points(&model, &mut rng, 5, 1e-3) {
        let r = check_model(&model, &x, 2, DEFAULT_STEP).unwrap();
        assert!(r.max_error() < 1e-4, "worst {} = {:e}", r.worst, r.max_error());
    }
}

#[test]
fn affine_sum_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (w, b) = (normal_vec(&mut rng, 12), normal_vec(&mut rng, 3));
    let x = normal_vec(&mut rng, 4);
    let f = |tape: &mut Tape, v: Var| {
        let wv = tape.constant(Tensor::matrix(3, 4, w.clone()).unwrap());
        let bv = tape.constant(Tensor::vector(b.clone()).unwrap());
        let y = tape.affine(v, wv, bv).unwrap();
        tape.sum(y).unwrap()
    };
    let (_, grad) = tape_eval(&x, f);
    let column_sums: Vec<f64> = (0..4).map(|j| (0..3).map(|i| w[i * 4 + j]).sum()).collect();
    assert!(max_rel(&grad, &column_sums) < 1e-12);
    let numeric = central_difference(|p| tape_eval(p, f).0, &x, DEFAULT_STEP);
    assert!(max_rel(&grad, &numeric) < 1e-6);
}

#[test]
fn relu_away_from_kinks() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let x: Vec<f64> = normal_vec(&mut rng, 9).into_iter().filter(|v| v.abs() > 1e-3).collect();
        let w = normal_vec(&mut rng, x.len());
        let f = |tape: &mut Tape, v: Var| {
            let r = tape.relu(v).unwrap();
            let wv = tape.constant(Tensor::matrix(1, w.len(), w.clone()).unwrap());
            let bv = tape.constant(Tensor::vector(vec![0.0]).unwrap());
            let y = tape.affine(r, wv, bv).unwrap();
            tape.sum(y).unwrap()
        };
        let (_, grad) = tape_eval(&x, f);
        let numeric = central_difference(|p| tape_eval(p, f).0, &x, DEFAULT_STEP);
        assert!(max_rel(&grad, &numeric) < 1e-6);
    }
}

#[test]
fn softmax_cross_entropy_paths_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let z = normal_vec(&mut rng, 5).into_iter().map(|v| 3.0 * v).collect::<Vec<_>>();
        let target = rng.random_range(0..5);
        let fused = |tape: &mut Tape, v: Var| tape.softmax_cross_entropy(v, target).unwrap();
        let unfused = |tape: &mut Tape, v: Var| {
            let p = tape.softmax(v).unwrap();
            tape.cross_entropy(p, target).unwrap()
        };
        let (lf, gf) = tape_eval(&z, fused);
        let (lu, gu) = tape_eval(&z, unfused);
        assert!((lf - lu).abs() < 1e-12);
        assert!(max_rel(&gf, &gu) < 1e-9);
        let numeric = central_difference(|p| tape_eval(p, fused).0, &z, DEFAULT_STEP);
        assert!(max_rel(&gf, &numeric) < 1e-6);
    }
}

#[test]
fn backward_is_bit_identical() {
    let model = Model::build(NetworkSpec::dense(4, 6, 3, &[8, 8], 5)).unwrap();
    let batch = [(vec![0.1, -0.4, 2.0, 1.0], 0), (vec![-1.0, 0.5, 0.25, -3.0], 2)];
    let run = || {
        model
            .batch_gradients(batch.iter().map(|(x, l)| (x.as_slice(), *l)))
            .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.loss_sum.to_bits(), b.loss_sum.to_bits());
    for (ga, gb) in a.grads.iter().zip(&b.grads) {
        assert!(ga.data().iter().zip(gb.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
