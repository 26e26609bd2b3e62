//! Finite-difference check of every differentiable op, usable outside tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gradcheck::{grad_check, GradCheckReport, DEFAULT_STEP};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Var>;

struct Case {
    name: &'static str,
    shapes: Vec<Vec<usize>>,
    /// Inputs are drawn from `lo..hi`.
    range: (f64, f64),
    build: Build,
}

fn case(name: &'static str, shapes: &[&[usize]], build: impl Fn(&mut Graph<f64>, &[Var]) -> Var + 'static) -> Case {
    Case {
        name,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        range: (-1.0, 1.0),
        build: Box::new(build),
    }
}

fn cases() -> Vec<Case> {
    let mut out = vec![
        case("linear", &[&[4, 5], &[3, 5], &[3]], |g, v| g.linear(v[0], v[1], v[2]).unwrap()),
        case("conv2d", &[&[2, 2, 5, 5], &[3, 2, 3, 3], &[3]], |g, v| {
            g.conv2d(v[0], v[1], v[2], 1, 1).unwrap()
        }),
        case("conv2d_strided", &[&[1, 2, 6, 6], &[2, 2, 5, 5], &[2]], |g, v| {
            g.conv2d(v[0], v[1], v[2], 2, 2).unwrap()
        }),
        case("elu", &[&[3, 4]], |g, v| g.elu(v[0])),
        case("sigmoid", &[&[3, 4]], |g, v| g.sigmoid(v[0])),
        case("softmax", &[&[3, 4]], |g, v| g.softmax(v[0]).unwrap()),
        case("softmax_xent", &[&[3, 4]], |g, v| g.softmax_xent(v[0], &[0, 3, 1]).unwrap()),
        case("total_variation", &[&[2, 3, 4]], |g, v| g.total_variation(v[0]).unwrap()),
        case("add", &[&[3, 4], &[3, 4]], |g, v| g.add(v[0], v[1]).unwrap()),
        case("mul", &[&[3, 4], &[3, 4]], |g, v| g.mul(v[0], v[1]).unwrap()),
        case("scale", &[&[3, 4]], |g, v| g.scale(v[0], -1.7)),
        case("mean", &[&[3, 4]], |g, v| g.mean(v[0])),
        case("sum", &[&[3, 4]], |g, v| g.sum(v[0])),
        case("reshape", &[&[3, 4]], |g, v| g.reshape(v[0], vec![2, 6]).unwrap()),
        case("concat", &[&[3, 2], &[3, 4]], |g, v| g.concat(&[v[0], v[1]]).unwrap()),
    ];
    let target = Tensor::new(vec![2, 5], (0..10).map(|i| (i % 2) as f64).collect()).unwrap();
    out.push(Case {
        name: "bce",
        shapes: vec![vec![2, 5]],
        range: (0.05, 0.95),
        build: Box::new(move |g, v| g.bce(v[0], &target).unwrap()),
    });
    out
}

/// Check every op's gradient with respect to all of its tensor inputs. Each
/// output is reduced by a random weighted sum so every output element
/// contributes a distinct coefficient.
pub fn check_every_op(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    cases()
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let sizes: Vec<usize> = c.shapes.iter().map(|s| s.iter().product()).collect();
            let point: Vec<f64> = (0..sizes.iter().sum()).map(|_| rng.gen_range(c.range.0..c.range.1)).collect();
            let split = |g: &mut Graph<f64>, x: &[f64]| -> Vec<Var> {
                let mut at = 0;
                c.shapes
                    .iter()
                    .zip(&sizes)
                    .map(|(s, &n)| {
                        at += n;
                        g.param(Tensor::new(s.clone(), x[at - n..at].to_vec()).unwrap())
                    })
                    .collect()
            };
            let mut probe = Graph::new();
            let vars = split(&mut probe, &point);
            let y = (c.build)(&mut probe, &vars);
            let out_shape = probe.value(y).shape().to_vec();
            let weights: Vec<f64> = (0..probe.value(y).numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let report = grad_check(
                |x| {
                    let mut g = Graph::new();
                    let vars = split(&mut g, x);
                    let y = (c.build)(&mut g, &vars);
                    let w = g.constant(Tensor::new(out_shape.clone(), weights.clone()).unwrap());
                    let prod = g.mul(y, w).unwrap();
                    let loss = g.sum(prod);
                    g.backward(loss).unwrap();
                    let grad = vars.iter().flat_map(|&v| g.grad(v).into_data()).collect();
                    (g.value(loss).item(), grad)
                },
                &point,
                DEFAULT_STEP,
            );
            (c.name, report)
        })
        .collect()
}
