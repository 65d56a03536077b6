use std::collections::BTreeMap;

use mra::convolution::{fit_coulomb, SeparatedOperator};
use mra::funcops::{gaxpy, inner, multiply, project, ProjectionParams};
use mra::tree::{Domain, Form, MraFunction, NodeKey};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};

fn config(cases: u32, seed: u64) -> Config {
    Config {
        cases,
        rng_seed: RngSeed::Fixed(seed),
        failure_persistence: None,
        ..Config::default()
    }
}

#[derive(Clone, Debug)]
struct GaussSum {
    terms: Vec<(f64, f64, [f64; 3])>,
}

impl GaussSum {
    fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, a, ctr)| {
                let r2: f64 = x.iter().zip(ctr).map(|(xi, ci)| (xi - ci).powi(2)).sum();
                c * (-a * r2).exp()
            })
            .sum()
    }

    fn project(&self, dim: usize, k: usize, eps: f64) -> MraFunction {
        project(
            &|x: &[f64]| self.eval(x),
            dim,
            Domain::symmetric(4.0).unwrap(),
            ProjectionParams::new(k, eps),
        )
        .unwrap()
    }
}

fn gauss_sum() -> impl Strategy<Value = GaussSum> {
    prop::collection::vec(
        (
            -1.0..1.0f64,
            0.5..4.0f64,
            prop::array::uniform3(-1.0..1.0f64),
        ),
        1..4,
    )
    .prop_map(|terms| GaussSum { terms })
}

fn random_tree(seed: u64, dim: usize, k: usize, depth: u8) -> MraFunction {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    let mut rng = StdRng::seed_from_u64(seed);
    let p = 2.0 / (1 << dim) as f64;
    let mut leaves = BTreeMap::new();
    let mut stack = vec![NodeKey::ROOT];
    while let Some(key) = stack.pop() {
        if key.level < depth && (key.level == 0 || rng.gen::<f64>() < p) {
            stack.extend(key.children(dim));
        } else {
            let s: Vec<f64> = (0..k.pow(dim as u32))
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            leaves.insert(key, s);
        }
    }
    MraFunction::from_parts(
        dim,
        k,
        1e-6,
        Domain::new(-1.0, 2.0).unwrap(),
        Form::Reconstructed,
        leaves,
    )
    .unwrap()
}

fn max_dev(a: &MraFunction, b: &MraFunction) -> f64 {
    assert_eq!(a.nodes().len(), b.nodes().len());
    a.nodes()
        .iter()
        .map(|(key, s)| {
            let t = &b.nodes()[key];
            s.iter()
                .zip(t)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(config(40, 11))]

    #[test]
    fn transforms_are_inverse(seed in any::<u64>(), dim in 1usize..=3, k in prop::sample::select(vec![4usize, 6, 8]), depth in 1u8..=6) {
        let f = random_tree(seed, dim, k, depth);
        let c = f.compress().unwrap();
        let back = c.reconstruct().unwrap();
        prop_assert!(max_dev(&f, &back) <= 1e-12);
        let again = back.compress().unwrap();
        prop_assert!(max_dev(&c, &again) <= 1e-12);
        let (n1, n2) = (f.norm_coeffs(), c.norm_coeffs());
        prop_assert!((n1 - n2).abs() <= 1e-10 * n1);
    }
}

proptest! {
    #![proptest_config(config(12, 23))]

    #[test]
    fn inner_is_bilinear_and_bounded(f in gauss_sum(), g in gauss_sum(), h in gauss_sum(), alpha in -2.0..2.0f64, beta in -2.0..2.0f64) {
        let eps = 1e-5;
        let (f, g, h) = (f.project(2, 6, eps), g.project(2, 6, eps), h.project(2, 6, eps));
        let combo = gaxpy(alpha, &f, beta, &g).unwrap();
        let lhs = inner(&combo, &h).unwrap();
        let rhs = alpha * inner(&f, &h).unwrap() + beta * inner(&g, &h).unwrap();
        let scale = (alpha.abs() * f.norm2() + beta.abs() * g.norm2()) * h.norm2();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale.max(1.0), "{} {}", lhs, rhs);
        prop_assert!((inner(&f, &g).unwrap() - inner(&g, &f).unwrap()).abs() <= 1e-13 * scale.max(1.0));
        let t = combo.trace();
        let t_sum = alpha * f.trace() + beta * g.trace();
        prop_assert!((t - t_sum).abs() <= 1e-12 * (alpha.abs() * f.trace().abs() + beta.abs() * g.trace().abs()).max(1.0));
        let fg = inner(&f, &g).unwrap().abs();
        prop_assert!(fg <= f.norm2() * g.norm2() * (1.0 + 1e-12));
    }

    #[test]
    fn projected_traces_match_analytic(f in gauss_sum()) {
        // domain [-4, 4]^2 with centers in [-1, 1] leaves tails below 1e-8
        let eps = 1e-5;
        let p = f.project(2, 6, eps);
        let exact: f64 = f.terms.iter().map(|(c, a, _)| c * std::f64::consts::PI / a).sum();
        prop_assert!((p.trace() - exact).abs() <= 10.0 * eps * exact.abs().max(1.0), "{} {}", p.trace(), exact);
    }

    #[test]
    fn multiply_agrees_pointwise(f in gauss_sum(), g in gauss_sum(), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let eps = 1e-5;
        let (pf, pg) = (f.project(3, 6, eps), g.project(3, 6, eps));
        let prod = multiply(&pf, &pg).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let want = pf.eval(&x).unwrap() * pg.eval(&x).unwrap();
            let got = prod.eval(&x).unwrap();
            prop_assert!((got - want).abs() <= 10.0 * eps, "at {:?}: {} vs {}", x, got, want);
        }
    }

    #[test]
    fn truncation_error_is_bounded(f in gauss_sum(), exp in 2i32..7) {
        let tol = 10f64.powi(-exp);
        let p = f.project(3, 6, 1e-7);
        let t = p.truncate(tol).unwrap();
        let err = gaxpy(1.0, &p, -1.0, &t).unwrap().norm2();
        prop_assert!(err <= 2.0 * tol * p.norm2().max(1.0), "{} > 2 * {}", err, tol);
        prop_assert!(t.node_count() <= p.node_count());
    }
}

proptest! {
    #![proptest_config(config(6, 37))]

    #[test]
    fn operator_is_linear_and_symmetric(f in gauss_sum(), g in gauss_sum(), alpha in -2.0..2.0f64, beta in -2.0..2.0f64) {
        let eps = 1e-5;
        let d = Domain::symmetric(4.0).unwrap();
        let kernel = fit_coulomb(1e-7, 1e-4 * d.width(), d.width() * 3f64.sqrt()).unwrap();
        let op = SeparatedOperator::new(kernel, 3, 6, d).unwrap();
        let (pf, pg) = (f.project(3, 6, eps), g.project(3, 6, eps));
        let kf = op.apply(&pf).unwrap();
        let kg = op.apply(&pg).unwrap();
        let lhs = op.apply(&gaxpy(alpha, &pf, beta, &pg).unwrap()).unwrap();
        let rhs = gaxpy(alpha, &kf, beta, &kg).unwrap();
        let diff = gaxpy(1.0, &lhs, -1.0, &rhs).unwrap().norm2();
        prop_assert!(diff <= 10.0 * eps, "linearity {}", diff);
        let (a, b) = (inner(&pf, &kg).unwrap(), inner(&pg, &kf).unwrap());
        prop_assert!((a - b).abs() <= 10.0 * eps, "symmetry {} {}", a, b);
    }
}
