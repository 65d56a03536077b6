//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines appear in order and uncaptured.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use mra::convolution::{
    build_summed_block_dd, fit_coulomb, Sector, SeparatedKernel, SeparatedOperator,
};
use mra::funcops::{gaxpy, inner, multiply, project, ProjectionParams};
use mra::solvers::{PotentialSpec, ScfState, Solver, SolverConfig};
use mra::tree::{Domain, Form, MraFunction, NodeKey};
use mra_cli::{demo_gaussian, DemoConfig};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const PUBLISHED_TRACE: f64 = 5.5683279;
const PUBLISHED_NORM2: f64 = 1.403104;
const PUBLISHED_SELF_ENERGY: f64 = 24.739429;
const DEMO_TOL: f64 = 1e-4;
const DEMO_SECONDS: f64 = 120.0;

const TREES: usize = 200;
const COEFF_TOL: f64 = 1e-12;
const PARSEVAL_TOL: f64 = 1e-10;

const HARMONIC_EXACT: f64 = -3.5;
const HARMONIC_TOL: f64 = 1e-4;
const HARMONIC_MAX_ITER: usize = 25;

/// eps 1e-6, k 10, [-20, 20]^3, smoothing 1e-3
const HYDROGEN_FROZEN: f64 = -0.4999989;
const HYDROGEN_FROZEN_TOL: f64 = 1e-4;
const HYDROGEN_EXACT_TOL: f64 = 5e-3;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn criterion_1() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let start = Instant::now();
    let config = DemoConfig::new(6, 1e-4, Domain::symmetric(6.0).unwrap());
    let (r, _) = pool.install(|| demo_gaussian(&config)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let errs = [
        (r.trace.value / PUBLISHED_TRACE - 1.0).abs(),
        (r.norm2.value / PUBLISHED_NORM2 - 1.0).abs(),
        (r.self_energy.value / PUBLISHED_SELF_ENERGY - 1.0).abs(),
    ];
    let passed = errs.iter().all(|e| *e <= DEMO_TOL) && secs <= DEMO_SECONDS;
    outcome(
        passed,
        format!(
            "trace {:.8} norm2 {:.8} self energy {:.7}; rel err vs published {:.1e} {:.1e} {:.1e}, \
             vs exact {:.1e} {:.1e} {:.1e}; {:.2} s on one thread",
            r.trace.value,
            r.norm2.value,
            r.self_energy.value,
            errs[0],
            errs[1],
            errs[2],
            r.trace.rel_err,
            r.norm2.rel_err,
            r.self_energy.rel_err,
            secs
        ),
    )
}

fn random_tree(rng: &mut StdRng, dim: usize, k: usize, depth: u8) -> MraFunction {
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
    if a.nodes().len() != b.nodes().len() {
        return f64::INFINITY;
    }
    a.nodes()
        .iter()
        .map(|(key, s)| match b.nodes().get(key) {
            Some(t) => s
                .iter()
                .zip(t)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max),
            None => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}

fn criterion_2() -> Outcome {
    let mut rng = StdRng::seed_from_u64(2);
    let (mut worst_coeff, mut worst_parseval) = (0.0f64, 0.0f64);
    let mut nodes = 0;
    for _ in 0..TREES {
        let dim = rng.gen_range(1..=3);
        let k = [4, 6, 8][rng.gen_range(0..3)];
        let depth = rng.gen_range(1..=6);
        let f = random_tree(&mut rng, dim, k, depth);
        nodes += f.node_count();
        let c = f.compress().unwrap();
        let back = c.reconstruct().unwrap();
        worst_coeff = worst_coeff.max(max_dev(&f, &back));
        let (n1, n2) = (f.norm_coeffs(), c.norm_coeffs());
        worst_parseval = worst_parseval.max((n1 - n2).abs() / n1);
    }
    outcome(
        worst_coeff <= COEFF_TOL && worst_parseval <= PARSEVAL_TOL,
        format!(
            "{TREES} trees ({nodes} leaves), max coefficient deviation {worst_coeff:.1e}, \
             max Parseval deviation {worst_parseval:.1e}"
        ),
    )
}

fn coulomb_oracle(kernel: &SeparatedKernel, r_lo: f64, r_hi: f64) -> f64 {
    (0..1000)
        .map(|i| {
            let r = r_lo * (r_hi / r_lo).powf(i as f64 / 999.0);
            let sum: f64 = kernel
                .terms
                .iter()
                .map(|t| t.coeff * (-t.expnt * r * r).exp())
                .sum();
            (r * sum - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

fn criterion_3() -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for eps in [1e-4, 1e-6] {
        let kernel = fit_coulomb(eps, 1e-3, 20.0).unwrap();
        let err = coulomb_oracle(&kernel, 1e-3, 20.0);
        let counts: Vec<usize> = [20.0, 40.0, 80.0, 160.0, 320.0]
            .iter()
            .map(|&hi| fit_coulomb(eps, 1e-3, hi).unwrap().len())
            .collect();
        let steps: Vec<i64> = counts
            .windows(2)
            .map(|w| w[1] as i64 - w[0] as i64)
            .collect();
        // additive: each doubling adds the same ln 2 / h terms, which as
        // integer counts alternates between neighbouring values
        let (lo, hi) = (*steps.iter().min().unwrap(), *steps.iter().max().unwrap());
        let additive = lo >= 0 && hi - lo <= 1 && steps[steps.len() - 1] <= steps[0] + 1;
        passed &= err <= eps && additive;
        parts.push(format!(
            "eps {eps:.0e}: max rel err {err:.2e}, M {counts:?} increments {steps:?}"
        ));
    }
    outcome(passed, parts.join("; "))
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn criterion_4() -> Outcome {
    // unpruned fine-step expansion, so the block tails follow the kernel
    // rather than the fit error
    let kernel = SeparatedKernel::coulomb_with_step(0.07, 1e-10, 1e-3, 10.0).unwrap();
    let terms: Vec<(f64, f64)> = kernel.terms.iter().map(|t| (t.coeff, t.expnt)).collect();
    let level = 5;
    let ells: Vec<i64> = (2..=16).collect();
    let xs: Vec<f64> = ells.iter().map(|&l| (l as f64).ln()).collect();
    let mut passed = true;
    let mut parts = Vec::new();
    for k in [4, 6, 8] {
        let blocks: Vec<_> = ells
            .iter()
            .map(|&l| build_summed_block_dd(k, &terms, level, l))
            .collect();
        let fit = |s: Sector| {
            let ys: Vec<f64> = blocks.iter().map(|b| b.sector_norm(s).ln()).collect();
            slope(&xs, &ys)
        };
        let ww = fit(Sector::WaveletWavelet);
        let sw = fit(Sector::ScalingWavelet).max(fit(Sector::WaveletScaling));
        let (ww_bound, sw_bound) = (-(2.0 * k as f64 + 1.0) + 0.5, -(k as f64 + 1.0) + 0.5);
        passed &= ww <= ww_bound && sw <= sw_bound;
        parts.push(format!(
            "k {k}: ww {ww:.2} (<= {ww_bound}), sw {sw:.2} (<= {sw_bound})"
        ));
    }
    outcome(passed, parts.join("; "))
}

fn r2(x: &[f64]) -> f64 {
    x[0] * x[0] + x[1] * x[1] + x[2] * x[2]
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut solver = Solver::new(
        &PotentialSpec::harmonic(1.0, 5.0),
        3,
        Domain::symmetric(3.0).unwrap(),
        SolverConfig::new(8, 1e-5, HARMONIC_MAX_ITER),
    )
    .unwrap();
    let psi = solver
        .project_guess(&|x: &[f64]| (-0.4 * r2(x)).exp())
        .unwrap();
    let state = solver.solve(ScfState::new(psi, -3.0).unwrap()).unwrap();
    let err = (state.energy - HARMONIC_EXACT).abs();
    outcome(
        state.converged && err <= HARMONIC_TOL && state.iteration <= HARMONIC_MAX_ITER,
        format!(
            "E {:.8} (error {err:.1e}) after {} iterations on [-3,3]^3, converged {}, {:.1} s",
            state.energy,
            state.iteration,
            state.converged,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let pot = PotentialSpec::smoothed_coulomb(1.0, 1e-3).unwrap();
    let mut solver = Solver::new(
        &pot,
        3,
        Domain::symmetric(20.0).unwrap(),
        SolverConfig::new(8, 1e-5, 30),
    )
    .unwrap();
    let psi = solver
        .project_guess(&|x: &[f64]| (-r2(x).sqrt()).exp())
        .unwrap();
    let state = solver.solve(ScfState::new(psi, -0.4).unwrap()).unwrap();
    let (frozen, exact) = (
        (state.energy - HYDROGEN_FROZEN).abs(),
        (state.energy + 0.5).abs(),
    );
    outcome(
        state.converged && frozen <= HYDROGEN_FROZEN_TOL && exact <= HYDROGEN_EXACT_TOL,
        format!(
            "E {:.8} after {} iterations; vs frozen {HYDROGEN_FROZEN} {frozen:.1e}, vs -1/2 {exact:.1e}; {:.1} s",
            state.energy,
            state.iteration,
            start.elapsed().as_secs_f64()
        ),
    )
}

/// Sum of 1 to 3 Gaussians with centers in [-1, 1]^3.
fn gauss_sum(rng: &mut StdRng) -> impl Fn(&[f64]) -> f64 + Sync + Clone {
    let n = rng.gen_range(1..4);
    let terms: Vec<(f64, f64, [f64; 3])> = (0..n)
        .map(|_| {
            (
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.5..4.0),
                [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ],
            )
        })
        .collect();
    move |x: &[f64]| {
        terms
            .iter()
            .map(|(c, a, ctr)| {
                c * (-a
                    * x.iter()
                        .zip(ctr)
                        .map(|(xi, ci)| (xi - ci).powi(2))
                        .sum::<f64>())
                .exp()
            })
            .sum()
    }
}

fn criterion_7() -> Outcome {
    let mut rng = StdRng::seed_from_u64(7);
    let d = Domain::symmetric(4.0).unwrap();
    let eps = 1e-5;
    let proj = |f: &(dyn Fn(&[f64]) -> f64 + Sync), dim| {
        project(f, dim, d, ProjectionParams::new(6, eps)).unwrap()
    };
    let cases = 4;
    let mut worst = [0.0f64; 5];
    let mut cauchy_schwarz = true;

    for _ in 0..cases {
        let (f, g, h) = (
            gauss_sum(&mut rng),
            gauss_sum(&mut rng),
            gauss_sum(&mut rng),
        );
        let (f, g, h) = (proj(&f, 2), proj(&g, 2), proj(&h, 2));
        let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let lhs = inner(&gaxpy(a, &f, b, &g).unwrap(), &h).unwrap();
        let rhs = a * inner(&f, &h).unwrap() + b * inner(&g, &h).unwrap();
        let scale = ((a.abs() * f.norm2() + b.abs() * g.norm2()) * h.norm2()).max(1.0);
        worst[0] = worst[0].max((lhs - rhs).abs() / scale / 1e-12);
        cauchy_schwarz &= inner(&f, &g).unwrap().abs() <= f.norm2() * g.norm2() * (1.0 + 1e-12);
    }

    for _ in 0..cases {
        let (fa, ga) = (gauss_sum(&mut rng), gauss_sum(&mut rng));
        let (f, g) = (proj(&fa, 3), proj(&ga, 3));
        let prod = multiply(&f, &g).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let want = f.eval(&x).unwrap() * g.eval(&x).unwrap();
            worst[1] = worst[1].max((prod.eval(&x).unwrap() - want).abs() / (10.0 * eps));
        }
    }

    let kernel = fit_coulomb(1e-7, 1e-4 * d.width(), d.width() * 3f64.sqrt()).unwrap();
    let op = SeparatedOperator::new(kernel, 3, 6, d).unwrap();
    for _ in 0..cases {
        let (fa, ga) = (gauss_sum(&mut rng), gauss_sum(&mut rng));
        let (f, g) = (proj(&fa, 3), proj(&ga, 3));
        let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let (kf, kg) = (op.apply(&f).unwrap(), op.apply(&g).unwrap());
        let lhs = op.apply(&gaxpy(a, &f, b, &g).unwrap()).unwrap();
        let diff = gaxpy(1.0, &lhs, -1.0, &gaxpy(a, &kf, b, &kg).unwrap())
            .unwrap()
            .norm2();
        worst[2] = worst[2].max(diff / (10.0 * eps));
        let asym = (inner(&f, &kg).unwrap() - inner(&g, &kf).unwrap()).abs();
        worst[3] = worst[3].max(asym / (10.0 * eps));
    }

    for _ in 0..cases {
        let fa = gauss_sum(&mut rng);
        let p = project(&fa, 3, d, ProjectionParams::new(6, 1e-7)).unwrap();
        let tol = 10f64.powi(-rng.gen_range(2..7));
        let t = p.truncate(tol).unwrap();
        let err = gaxpy(1.0, &p, -1.0, &t).unwrap().norm2();
        worst[4] = worst[4].max(err / (2.0 * tol * p.norm2().max(1.0)));
    }

    outcome(
        cauchy_schwarz && worst.iter().all(|w| *w <= 1.0),
        format!(
            "{cases} cases each, worst error / bound: bilinearity {:.2}, multiply {:.2}, \
             operator linearity {:.2}, operator symmetry {:.2}, truncation {:.2}; Cauchy-Schwarz {}",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            worst[4],
            if cauchy_schwarz { "holds" } else { "violated" }
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("Gaussian demo", criterion_1),
        ("transform exactness", criterion_2),
        ("kernel fit contract", criterion_3),
        ("non-standard block decay", criterion_4),
        ("harmonic eigensolve", criterion_5),
        ("hydrogen eigensolve", criterion_6),
        ("property suites", criterion_7),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.passed {
            failed += 1;
        }
        let verdict = if result.passed { "PASS" } else { "FAIL" };
        println!("criterion {} {verdict} {name}: {}", i + 1, result.detail);
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
