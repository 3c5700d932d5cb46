//! Reverse-mode gradients against central finite differences, per node kind.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rwlab_autodiff::{
    evaluate, finite_diff_gradient, gradient_by_name, second_order_gradient, AdError, Bindings,
    Expr, Graph, Shape, Tensor,
};

const INSTANCES: u64 = 100;

fn rel_err(a: &Tensor, b: &Tensor) -> f64 {
    let diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.data().iter().chain(b.data()).map(|x| x.abs()).fold(1e-6, f64::max);
    diff / scale
}

fn random(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor {
    Tensor::new(shape, (0..shape.numel()).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Builds `sum(weights * body(x, y))` and compares d/dx and d/dy with finite differences.
fn check_binary(
    name: &str,
    shapes: (Shape, Shape),
    range: (f64, f64),
    body: impl Fn(&mut Graph, Expr, Expr) -> Result<Expr, AdError>,
    keep: impl Fn(&Tensor, &Tensor) -> bool,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919);
    let mut done = 0;
    while done < INSTANCES {
        let x = random(&mut rng, shapes.0, range.0, range.1);
        let y = random(&mut rng, shapes.1, range.0, range.1);
        if !keep(&x, &y) {
            continue;
        }
        let mut g = Graph::new();
        let xe = g.param("x", shapes.0).unwrap();
        let ye = g.param("y", shapes.1).unwrap();
        let out = body(&mut g, xe, ye).unwrap();
        let w = random(&mut rng, g.shape(out), -1.0, 1.0);
        let we = g.constant(w);
        let weighted = g.mul(out, we).unwrap();
        let f = g.sum(weighted);
        let grads = gradient_by_name(&mut g, f, &["x", "y"]).unwrap();

        let mut b = Bindings::new();
        b.insert("x", x.clone()).insert("y", y.clone());
        let analytic = grads.values(&g, &b).unwrap();

        for (var, point) in [("x", &x), ("y", &y)] {
            let numeric = finite_diff_gradient(
                |p| {
                    let mut bb = b.clone();
                    bb.insert(var, p.clone());
                    evaluate(&g, f, &bb)?.item().ok_or(AdError::NotScalar(Shape::scalar()))
                },
                point,
                1e-6,
            )
            .unwrap();
            let err = rel_err(&analytic[var], &numeric);
            assert!(err < 1e-5, "{name}: d/d{var} rel error {err:e}");
        }
        done += 1;
    }
}

fn check_unary(name: &str, shape: Shape, range: (f64, f64), body: impl Fn(&mut Graph, Expr) -> Result<Expr, AdError>) {
    check_binary(name, (shape, Shape::scalar()), range, |g, x, _| body(g, x), |_, _| true);
}

const M: Shape = Shape::new(3, 4);

#[test]
fn add_sub_mul_with_broadcasting() {
    check_binary("add", (M, Shape::row(4)), (-2.0, 2.0), |g, x, y| g.add(x, y), |_, _| true);
    check_binary("sub", (M, Shape::new(3, 1)), (-2.0, 2.0), |g, x, y| g.sub(x, y), |_, _| true);
    check_binary("mul", (M, M), (-2.0, 2.0), |g, x, y| g.mul(x, y), |_, _| true);
    check_binary("mul_scalar", (M, Shape::scalar()), (-2.0, 2.0), |g, x, y| g.mul(x, y), |_, _| true);
}

#[test]
fn matmul_and_transpose() {
    check_binary("matmul", (Shape::new(3, 5), Shape::new(5, 2)), (-1.0, 1.0), |g, x, y| g.matmul(x, y), |_, _| true);
    check_unary("transpose", M, (-1.0, 1.0), |g, x| Ok(g.transpose(x)));
}

#[test]
fn elementwise_max_away_from_ties() {
    check_binary(
        "max",
        (M, M),
        (-1.0, 1.0),
        |g, x, y| g.max(x, y),
        |x, y| x.data().iter().zip(y.data()).all(|(a, b)| (a - b).abs() > 1e-3),
    );
}

#[test]
fn transcendental_nodes() {
    check_unary("exp", M, (-2.0, 2.0), |g, x| Ok(g.exp(x)));
    check_unary("log", M, (0.1, 3.0), |g, x| Ok(g.log(x)));
    check_unary("sigmoid", M, (-4.0, 4.0), |g, x| Ok(g.sigmoid(x)));
    check_unary("tanh", M, (-2.0, 2.0), |g, x| Ok(g.tanh(x)));
    check_unary("sqrt", M, (0.2, 3.0), |g, x| Ok(g.sqrt(x)));
    check_unary("recip", M, (0.3, 3.0), |g, x| Ok(g.safe_recip(x)));
}

#[test]
fn softmax_and_reductions() {
    check_unary("softmax", M, (-3.0, 3.0), |g, x| Ok(g.softmax(x)));
    check_unary("squared_l2", M, (-2.0, 2.0), |g, x| Ok(g.squared_l2(x)));
    check_unary("sum", M, (-2.0, 2.0), |g, x| Ok(g.sum(x)));
    check_unary("mean", M, (-2.0, 2.0), |g, x| Ok(g.mean(x)));
    check_unary("sum_rows", M, (-2.0, 2.0), |g, x| g.sum_rows(x));
    check_unary("broadcast", Shape::new(3, 1), (-2.0, 2.0), |g, x| g.broadcast_to(x, M));
    check_unary("scale_neg", M, (-2.0, 2.0), |g, x| {
        let s = g.scale(x, -1.7);
        Ok(g.neg(s))
    });
}

/// Second-order: differentiate the first gradient again and compare with
/// finite differences of the first gradient.
fn check_second_order(name: &str, shape: Shape, range: (f64, f64), body: impl Fn(&mut Graph, Expr) -> Result<Expr, AdError>) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xdead ^ name.len() as u64);
    for _ in 0..INSTANCES {
        let x = random(&mut rng, shape, range.0, range.1);
        let mut g = Graph::new();
        let xe = g.param("x", shape).unwrap();
        let out = body(&mut g, xe).unwrap();
        let w = random(&mut rng, g.shape(out), -1.0, 1.0);
        let we = g.constant(w);
        let weighted = g.mul(out, we).unwrap();
        let f = g.sum(weighted);
        let first = gradient_by_name(&mut g, f, &["x"]).unwrap();
        // scalar functional of the gradient: <v, grad f>
        let v = random(&mut rng, shape, -1.0, 1.0);
        let ve = g.constant(v);
        let proj = g.mul(first.get("x").unwrap(), ve).unwrap();
        let h = g.sum(proj);
        let second = second_order_gradient(&mut g, h, &first, &["x"]).unwrap();

        let mut b = Bindings::new();
        b.insert("x", x.clone());
        let analytic = evaluate(&g, second.get("x").unwrap(), &b).unwrap();
        let numeric = finite_diff_gradient(
            |p| {
                let mut bb = Bindings::new();
                bb.insert("x", p.clone());
                Ok(evaluate(&g, h, &bb)?.item().unwrap())
            },
            &x,
            1e-5,
        )
        .unwrap();
        let err = rel_err(&analytic, &numeric);
        assert!(err < 1e-4, "{name}: second-order rel error {err:e}");
    }
}

#[test]
fn hessian_vector_products_match_finite_differences() {
    check_second_order("exp", M, (-1.0, 1.0), |g, x| Ok(g.exp(x)));
    check_second_order("log", M, (0.5, 2.0), |g, x| Ok(g.log(x)));
    check_second_order("sigmoid", M, (-3.0, 3.0), |g, x| Ok(g.sigmoid(x)));
    check_second_order("tanh", M, (-2.0, 2.0), |g, x| Ok(g.tanh(x)));
    check_second_order("sqrt", M, (0.5, 2.0), |g, x| Ok(g.sqrt(x)));
    check_second_order("softmax", M, (-2.0, 2.0), |g, x| Ok(g.softmax(x)));
    check_second_order("squared_l2", M, (-2.0, 2.0), |g, x| Ok(g.squared_l2(x)));
    check_second_order("matmul_self", Shape::new(3, 3), (-1.0, 1.0), |g, x| {
        let t = g.transpose(x);
        g.matmul(x, t)
    });
    check_second_order("mlp", Shape::new(4, 3), (-1.0, 1.0), |g, x| {
        let h = g.tanh(x);
        let ht = g.transpose(h);
        let z = g.matmul(h, ht)?;
        Ok(g.softmax(z))
    });
}

#[test]
fn evaluation_is_bitwise_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&mut rng, Shape::new(6, 5), -1.0, 1.0);
    let w = random(&mut rng, Shape::new(5, 4), -1.0, 1.0);
    let build = || {
        let mut g = Graph::new();
        let xe = g.input("x", Shape::new(6, 5)).unwrap();
        let we = g.param("w", Shape::new(5, 4)).unwrap();
        let z = g.matmul(xe, we).unwrap();
        let s = g.softmax(z);
        let l = g.log(s);
        let f = g.mean(l);
        let d = gradient_by_name(&mut g, f, &["w"]).unwrap();
        (g, f, d)
    };
    let mut b = Bindings::new();
    b.insert("x", x).insert("w", w);
    let (g1, f1, d1) = build();
    let (g2, f2, d2) = build();
    let v1 = evaluate(&g1, f1, &b).unwrap();
    let v2 = evaluate(&g2, f2, &b).unwrap();
    assert_eq!(v1.data()[0].to_bits(), v2.data()[0].to_bits());
    let a = d1.values(&g1, &b).unwrap();
    let c = d2.values(&g2, &b).unwrap();
    for (x, y) in a["w"].data().iter().zip(c["w"].data()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn softmax_rows_are_probability_vectors(vals in proptest::collection::vec(-30.0f64..30.0, 12)) {
            let mut g = Graph::new();
            let z = g.constant(Tensor::new(Shape::new(3, 4), vals).unwrap());
            let s = g.softmax(z);
            let v = evaluate(&g, s, &Bindings::new()).unwrap();
            for i in 0..3 {
                let row = v.row_slice(i);
                prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn sum_to_inverts_broadcast_counts(vals in proptest::collection::vec(-5.0f64..5.0, 3), rows in 1usize..6) {
            // broadcasting a row to `rows` rows and summing back scales it by `rows`
            let mut g = Graph::new();
            let r = g.constant(Tensor::row(vals.clone()));
            let b = g.broadcast_to(r, Shape::new(rows, 3)).unwrap();
            let s = g.sum_to(b, Shape::row(3)).unwrap();
            let v = evaluate(&g, s, &Bindings::new()).unwrap();
            for (got, want) in v.data().iter().zip(&vals) {
                prop_assert!((got - want * rows as f64).abs() < 1e-12);
            }
        }
    }
}
