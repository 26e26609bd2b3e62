use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use revgrad::{grad_check, Adam, AdamConfig, Error, Graph, Tensor, Var, DEFAULT_STEP};

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Weighted sum of an op's output, so every output element contributes a
/// distinct coefficient to the checked gradient.
fn weighted_sum(g: &mut Graph<f64>, y: Var, weights: &[f64]) -> Var {
    let w = g.constant(t(g.value(y).shape(), weights.to_vec()));
    let prod = g.mul(y, w).unwrap();
    g.sum(prod)
}

/// Gradient check of `build` with respect to one input of the given shape.
fn check_unary(shape: &[usize], seed: u64, build: impl Fn(&mut Graph<f64>, Var) -> Var) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let x0 = rand_vec(&mut rng, n, 1.0);
    let mut probe = Graph::new();
    let xv = probe.constant(t(shape, x0.clone()));
    let y = build(&mut probe, xv);
    let out_numel = probe.value(y).numel();
    let weights = rand_vec(&mut rng, out_numel, 1.0);
    let report = grad_check(
        |x| {
            let mut g = Graph::new();
            let xv = g.param(t(shape, x.to_vec()));
            let y = build(&mut g, xv);
            let loss = weighted_sum(&mut g, y, &weights);
            g.backward(loss).unwrap();
            (g.value(loss).item(), g.grad(xv).into_data())
        },
        &x0,
        DEFAULT_STEP,
    );
    report.max_rel_err
}

#[test]
fn linear_identity_and_zero_input() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.25, -1.0]));
    let mut eye = vec![0.0; 9];
    for i in 0..3 {
        eye[i * 3 + i] = 1.0;
    }
    let w = g.constant(t(&[3, 3], eye));
    let b = g.constant(Tensor::zeros(vec![3]));
    let y = g.linear(x, w, b).unwrap();
    assert_eq!(g.value(y).data(), g.value(x).data());

    let zero = g.constant(Tensor::zeros(vec![1, 3]));
    let b2 = g.constant(t(&[3], vec![0.1, 0.2, 0.3]));
    let y2 = g.linear(zero, w, b2).unwrap();
    assert_eq!(g.value(y2).data(), &[0.1, 0.2, 0.3]);
}

#[test]
fn linear_shape_mismatch() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.constant(Tensor::zeros(vec![2, 3]));
    let w = g.constant(Tensor::zeros(vec![4, 5]));
    let b = g.constant(Tensor::zeros(vec![4]));
    assert!(matches!(g.linear(x, w, b), Err(Error::Shape { .. })));
}

#[test]
fn linear_weight_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x0 = rand_vec(&mut rng, 4 * 5, 1.0);
    let w0 = rand_vec(&mut rng, 3 * 5, 1.0);
    let b0 = rand_vec(&mut rng, 3, 1.0);
    let report = grad_check(
        |w| {
            let mut g = Graph::new();
            let x = g.constant(t(&[4, 5], x0.clone()));
            let wv = g.param(t(&[3, 5], w.to_vec()));
            let b = g.constant(t(&[3], b0.clone()));
            let y = g.linear(x, wv, b).unwrap();
            let loss = g.sum(y);
            g.backward(loss).unwrap();
            (g.value(loss).item(), g.grad(wv).into_data())
        },
        &w0,
        DEFAULT_STEP,
    );
    assert!(report.max_rel_err <= 1e-4, "{report:?}");
}

#[test]
fn conv_delta_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x0 = rand_vec(&mut rng, 2 * 3 * 5 * 5, 1.0);
    let mut g = Graph::new();
    let x = g.constant(t(&[2, 3, 5, 5], x0.clone()));
    let mut k = vec![0.0; 3 * 3];
    for c in 0..3 {
        k[c * 3 + c] = 1.0;
    }
    let w = g.constant(t(&[3, 3, 1, 1], k));
    let b = g.constant(Tensor::zeros(vec![3]));
    let y = g.conv2d(x, w, b, 1, 0).unwrap();
    assert_eq!(g.value(y).data(), x0.as_slice());
}

#[test]
fn conv_ones_kernel_on_constant_image() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.constant(Tensor::full(vec![1, 1, 6, 6], 2.5));
    let w = g.constant(Tensor::full(vec![1, 1, 3, 3], 1.0));
    let b = g.constant(Tensor::zeros(vec![1]));
    let y = g.conv2d(x, w, b, 1, 1).unwrap();
    let out = g.value(y);
    assert_eq!(out.shape(), &[1, 1, 6, 6]);
    for r in 1..5 {
        for c in 1..5 {
            assert!((out.data()[r * 6 + c] - 22.5).abs() < 1e-12);
        }
    }
    // corners only see 4 taps
    assert!((out.data()[0] - 10.0).abs() < 1e-12);
}

#[test]
fn conv_output_size_formula() {
    let mut g: Graph<f64> = Graph::new();
    for (h, k, s, p) in [(64, 5, 2, 2), (64, 5, 1, 2), (7, 3, 2, 0), (4, 4, 1, 0), (9, 5, 2, 2)] {
        let x = g.constant(Tensor::zeros(vec![1, 2, h, h]));
        let w = g.constant(Tensor::zeros(vec![3, 2, k, k]));
        let b = g.constant(Tensor::zeros(vec![3]));
        let y = g.conv2d(x, w, b, s, p).unwrap();
        let expect = (h + 2 * p - k) / s + 1;
        assert_eq!(g.value(y).shape(), &[1, 3, expect, expect]);
    }
    let x = g.constant(Tensor::zeros(vec![1, 2, 8, 8]));
    let w = g.constant(Tensor::zeros(vec![3, 4, 3, 3]));
    let b = g.constant(Tensor::zeros(vec![3]));
    assert!(matches!(g.conv2d(x, w, b, 1, 1), Err(Error::Shape { .. })));
}

#[test]
fn conv_gradcheck_all_arguments() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x0 = rand_vec(&mut rng, 4 * 8 * 8, 1.0);
    let w0 = rand_vec(&mut rng, 3 * 4 * 5 * 5, 0.3);
    let b0 = rand_vec(&mut rng, 3, 0.3);
    let weights = rand_vec(&mut rng, 3 * 8 * 8, 1.0);
    let nx = x0.len();
    let nw = w0.len();
    let point: Vec<f64> = x0.iter().chain(&w0).chain(&b0).copied().collect();
    for stride in [1, 2] {
        let report = grad_check(
            |p| {
                let mut g = Graph::new();
                let x = g.param(t(&[1, 4, 8, 8], p[..nx].to_vec()));
                let w = g.param(t(&[3, 4, 5, 5], p[nx..nx + nw].to_vec()));
                let b = g.param(t(&[3], p[nx + nw..].to_vec()));
                let y = g.conv2d(x, w, b, stride, 2).unwrap();
                let n = g.value(y).numel();
                let loss = weighted_sum(&mut g, y, &weights[..n]);
                g.backward(loss).unwrap();
                let mut grad = g.grad(x).into_data();
                grad.extend(g.grad(w).into_data());
                grad.extend(g.grad(b).into_data());
                (g.value(loss).item(), grad)
            },
            &point,
            DEFAULT_STEP,
        );
        assert!(report.max_rel_err <= 1e-4, "stride {stride}: {report:?}");
    }
}

#[test]
fn elu_values() {
    let mut g = Graph::new();
    let x = g.constant(t(&[3], vec![0.0, 1.0, -20.0]));
    let y = g.elu(x);
    let v = g.value(y).data();
    assert_eq!(v[0], 0.0);
    assert_eq!(v[1], 1.0);
    assert!((v[2] + 1.0).abs() < 1e-8);
}

#[test]
fn elementwise_ops_pass_gradcheck() {
    let cases: Vec<(&str, Box<dyn Fn(&mut Graph<f64>, Var) -> Var>)> = vec![
        ("elu", Box::new(|g, x| g.elu(x))),
        ("sigmoid", Box::new(|g, x| g.sigmoid(x))),
        ("softmax", Box::new(|g, x| g.softmax(x).unwrap())),
        ("scale", Box::new(|g, x| g.scale(x, -1.7))),
        ("mul_self", Box::new(|g, x| g.mul(x, x).unwrap())),
        ("add_self", Box::new(|g, x| g.add(x, x).unwrap())),
        ("reshape", Box::new(|g, x| g.reshape(x, vec![12]).unwrap())),
        ("concat", Box::new(|g, x| {
            let e = g.elu(x);
            g.concat(&[x, e, x]).unwrap()
        })),
        ("mean", Box::new(|g, x| g.mean(x))),
        ("xent", Box::new(|g, x| g.softmax_xent(x, &[0, 2, 3]).unwrap())),
        ("tv", Box::new(|g, x| {
            let r = g.reshape(x, vec![1, 3, 4]).unwrap();
            g.total_variation(r).unwrap()
        })),
    ];
    for (i, (name, build)) in cases.iter().enumerate() {
        let err = check_unary(&[3, 4], 100 + i as u64, build);
        assert!(err <= 1e-4, "{name}: rel err {err}");
    }
}

#[test]
fn bce_gradcheck_and_clamp() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p0: Vec<f64> = (0..10).map(|_| rng.gen_range(0.05..0.95)).collect();
    let target = t(&[2, 5], (0..10).map(|i| (i % 2) as f64).collect());
    let report = grad_check(
        |p| {
            let mut g = Graph::new();
            let pv = g.param(t(&[2, 5], p.to_vec()));
            let l = g.bce(pv, &target).unwrap();
            let loss = g.mean(l);
            g.backward(loss).unwrap();
            (g.value(loss).item(), g.grad(pv).into_data())
        },
        &p0,
        DEFAULT_STEP,
    );
    assert!(report.max_rel_err <= 1e-4, "{report:?}");

    let mut g = Graph::new();
    let pv = g.constant(target.clone());
    let l = g.bce(pv, &target).unwrap();
    let loss = g.mean(l);
    assert!(g.value(loss).item() <= 1.01e-7);
    let half = g.constant(Tensor::full(vec![2, 5], 0.5));
    let l = g.bce(half, &target).unwrap();
    let loss = g.mean(l);
    assert!((g.value(loss).item() - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn softmax_xent_unit_values() {
    let mut g = Graph::new();
    let logits = g.constant(t(&[3, 2], vec![0.3, 0.3, -5.0, -5.0, 20.0, -20.0]));
    let l = g.softmax_xent(logits, &[0, 1, 0]).unwrap();
    let v = g.value(l).data();
    assert!((v[0] - 2f64.ln()).abs() < 1e-12);
    assert!((v[1] - 2f64.ln()).abs() < 1e-12);
    assert!(v[2] < 1e-8 && v[2] >= 0.0);
}

#[test]
fn softmax_xent_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let a: f64 = rng.gen_range(-8.0..8.0);
        let b: f64 = rng.gen_range(-8.0..8.0);
        let label = rng.gen_range(0..2usize);
        let naive = {
            let (ea, eb) = (a.exp(), b.exp());
            let p = [ea / (ea + eb), eb / (ea + eb)];
            -p[label].ln()
        };
        let mut g = Graph::new();
        let l = g.constant(t(&[1, 2], vec![a, b]));
        let x = g.softmax_xent(l, &[label]).unwrap();
        assert!((g.value(x).item() - naive).abs() < 1e-10);
    }
}

#[test]
fn backward_basics() {
    let mut g = Graph::new();
    let x = g.param(t(&[2, 3], vec![1.0; 6]));
    let unused = g.param(t(&[4], vec![2.0; 4]));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).data(), &[1.0; 6]);
    assert_eq!(g.grad(unused).data(), &[0.0; 4]);
    let first = g.grad(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x), first);
    assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
}

/// Small conv + MLP stack, differentiated with respect to every weight.
#[test]
fn small_network_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x0 = rand_vec(&mut rng, 2 * 8 * 8, 1.0);
    let shapes: [&[usize]; 6] = [&[3, 2, 3, 3], &[3], &[4, 48], &[4], &[2, 4], &[2]];
    let sizes: Vec<usize> = shapes.iter().map(|s| s.iter().product()).collect();
    let point = rand_vec(&mut rng, sizes.iter().sum(), 0.5);
    let report = grad_check(
        |p| {
            let mut g = Graph::new();
            let x = g.constant(t(&[1, 2, 8, 8], x0.clone()));
            let mut off = 0;
            let vars: Vec<Var> = shapes
                .iter()
                .zip(&sizes)
                .map(|(s, &n)| {
                    let v = g.param(t(s, p[off..off + n].to_vec()));
                    off += n;
                    v
                })
                .collect();
            let h = g.conv2d(x, vars[0], vars[1], 2, 1).unwrap();
            let h = g.elu(h);
            let h = g.reshape(h, vec![1, 48]).unwrap();
            let h = g.linear(h, vars[2], vars[3]).unwrap();
            let h = g.elu(h);
            let h = g.linear(h, vars[4], vars[5]).unwrap();
            let l = g.softmax_xent(h, &[1]).unwrap();
            let loss = g.mean(l);
            g.backward(loss).unwrap();
            let grad = vars.iter().flat_map(|&v| g.grad(v).into_data()).collect();
            (g.value(loss).item(), grad)
        },
        &point,
        DEFAULT_STEP,
    );
    assert!(report.max_rel_err <= 1e-4, "{report:?}");
}

#[test]
fn corrupted_backward_is_detected() {
    // sigmoid with its derivative written as s instead of s(1-s)
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let x0 = rand_vec(&mut rng, 6, 2.0);
    let report = grad_check(
        |x| {
            let s: Vec<f64> = x.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
            (s.iter().sum(), s.clone())
        },
        &x0,
        DEFAULT_STEP,
    );
    assert!(report.max_rel_err > 1e-2, "{report:?}");
}

#[test]
fn quadratic_gradcheck_is_tight() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let x0 = rand_vec(&mut rng, 20, 3.0);
    let report = grad_check(
        |x| (0.5 * x.iter().map(|v| v * v).sum::<f64>(), x.to_vec()),
        &x0,
        DEFAULT_STEP,
    );
    assert!(report.max_rel_err < 1e-8, "{report:?}");
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let mut adam = Adam::<f64>::new(AdamConfig::default());
    let mut p = vec![1.0, -2.0, 3.0];
    let before = p.clone();
    adam.step(&mut [&mut p], &[&[0.0, 0.0, 0.0]]).unwrap();
    assert_eq!(p, before);
    assert_eq!(adam.step_count(), 1);
}

#[test]
fn adam_first_step_is_lr_times_sign() {
    // m̂ = g, v̂ = g², so the step is lr * g / (|g| + eps)
    let cfg = AdamConfig {
        lr: 1e-3,
        ..AdamConfig::default()
    };
    let mut adam = Adam::<f64>::new(cfg);
    let g = [0.5, -3.0, 1e-2];
    let mut p = vec![0.0; 3];
    adam.step(&mut [&mut p], &[&g]).unwrap();
    for (pi, gi) in p.iter().zip(g) {
        let expect = -cfg.lr * gi / (gi.abs() + cfg.eps);
        assert!((pi - expect).abs() < 1e-15, "{pi} vs {expect}");
        assert!((pi.abs() - cfg.lr).abs() < 1e-8);
    }
}

#[test]
fn adam_is_deterministic_and_checks_shapes() {
    let run = || {
        let mut adam = Adam::<f64>::new(AdamConfig::default());
        let mut p = vec![0.3, 0.1];
        for i in 0..5 {
            let g = [p[0] * i as f64, -p[1]];
            adam.step(&mut [&mut p], &[&g]).unwrap();
        }
        p
    };
    assert_eq!(run(), run());
    let mut adam = Adam::<f64>::new(AdamConfig::default());
    let mut p = vec![0.0; 2];
    assert!(adam.step(&mut [&mut p], &[&[1.0]]).is_err());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(logits in proptest::collection::vec(-30.0f64..30.0, 6)) {
        let mut g = Graph::new();
        let l = g.constant(t(&[3, 2], logits));
        let p = g.softmax(l).unwrap();
        for row in g.value(p).data().chunks(2) {
            prop_assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
        }
        let x = g.softmax_xent(l, &[0, 1, 1]).unwrap();
        prop_assert!(g.value(x).data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn batch_gradient_is_sum_of_per_example(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w0 = rand_vec(&mut rng, 2 * 3, 1.0);
        let xs = rand_vec(&mut rng, 4 * 3, 1.0);
        let labels = [0usize, 1, 1, 0];
        let grad_for = |rows: &[usize]| {
            let mut g = Graph::new();
            let x: Vec<f64> = rows.iter().flat_map(|&r| xs[r * 3..r * 3 + 3].to_vec()).collect();
            let xv = g.constant(t(&[rows.len(), 3], x));
            let w = g.param(t(&[2, 3], w0.clone()));
            let b = g.constant(Tensor::zeros(vec![2]));
            let h = g.linear(xv, w, b).unwrap();
            let h = g.elu(h);
            let lab: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
            let l = g.softmax_xent(h, &lab).unwrap();
            let loss = g.sum(l);
            g.backward(loss).unwrap();
            g.grad(w).into_data()
        };
        let batch = grad_for(&[0, 1, 2, 3]);
        let mut summed = vec![0.0; 6];
        for r in 0..4 {
            for (s, v) in summed.iter_mut().zip(grad_for(&[r])) {
                *s += v;
            }
        }
        for (a, b) in batch.iter().zip(&summed) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn every_op_passes_the_public_suite() {
    let reports = revgrad::check_every_op(11);
    assert!(reports.len() >= 16);
    for (name, r) in reports {
        assert!(r.max_rel_err <= 1e-4, "{name}: {r:?}");
    }
}
