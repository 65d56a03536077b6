use mra::funcops::{inner, multiply, project, ProjectionParams};
use mra::solvers::{
    energy_update, solve_ground_state, PotentialSpec, ScfState, Solver, SolverConfig,
};
use mra::tree::Domain;
use mra::MraError;

const EXACT: f64 = -3.5;

fn ground(x: &[f64]) -> f64 {
    (-0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp()
}

fn perturbed(x: &[f64]) -> f64 {
    (-0.4 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp()
}

fn harmonic_solver(half_width: f64, k: usize, eps: f64, max_iter: usize) -> Solver {
    Solver::new(
        &PotentialSpec::harmonic(1.0, 5.0),
        3,
        Domain::symmetric(half_width).unwrap(),
        SolverConfig::new(k, eps, max_iter),
    )
    .unwrap()
}

#[test]
fn exact_eigenpair_is_a_fixed_point() {
    let mut solver = harmonic_solver(6.0, 8, 1e-5, 1);
    let psi = solver.project_guess(&ground).unwrap();
    let state = ScfState::new(psi, EXACT).unwrap();
    let next = solver.step(&state).unwrap();
    assert!(next.residual <= 5e-4, "{}", next.residual);
    assert!(next.delta_e.abs() <= 1e-4, "{}", next.delta_e);
    assert!((next.psi.norm2() - 1.0).abs() <= 1e-10);
}

#[test]
fn energy_increment_of_identical_states_is_zero() {
    let solver = harmonic_solver(3.0, 6, 1e-4, 1);
    let psi = solver.project_guess(&ground).unwrap();
    let vpsi = multiply(solver.potential(), &psi).unwrap();
    assert_eq!(energy_update(&psi, &psi, &vpsi).unwrap(), 0.0);
}

#[test]
fn first_increment_from_high_start_is_negative() {
    let mut solver = harmonic_solver(3.0, 8, 1e-5, 1);
    let psi = solver.project_guess(&perturbed).unwrap();
    let next = solver.step(&ScfState::new(psi, -1.0).unwrap()).unwrap();
    assert!(next.delta_e < 0.0, "{}", next.delta_e);
}

#[test]
fn harmonic_oscillator_converges() {
    let eps = 1e-5;
    let mut solver = harmonic_solver(3.0, 8, eps, 25);
    let psi = solver.project_guess(&perturbed).unwrap();
    let state = solver.solve(ScfState::new(psi, -3.0).unwrap()).unwrap();
    assert!(state.converged, "{:?}", state.history);
    assert!(state.iteration <= 25);
    assert!((state.energy - EXACT).abs() < 1e-4, "{}", state.energy);

    // error decreases over iterations 2..6
    let errs: Vec<f64> = state.history[1..6]
        .iter()
        .map(|h| (h.energy - EXACT).abs())
        .collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");

    // normalization after every step is checked on the final state
    assert!((state.psi.norm2() - 1.0).abs() <= 1e-10);

    // <V> = E/2 with the unshifted potential, E = 3/2
    let d = state.psi.domain();
    let v = project(
        &|x: &[f64]| 0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]),
        3,
        d,
        ProjectionParams::new(8, eps),
    )
    .unwrap();
    let expect_v = inner(&state.psi, &multiply(&v, &state.psi).unwrap()).unwrap();
    assert!((expect_v - 0.75).abs() < 5e-3, "{expect_v}");

    let tol = solver.config().residual_tolerance();
    let green = solver.green_residual(&state.psi, state.energy).unwrap();
    assert!(green <= 10.0 * tol, "{green}");
}

#[test]
fn odd_guess_does_not_collapse_to_ground_state() {
    let mut solver = harmonic_solver(3.0, 8, 1e-5, 25);
    let psi = solver.project_guess(&|x: &[f64]| x[0] * ground(x)).unwrap();
    let state = solver.solve(ScfState::new(psi, -2.0).unwrap()).unwrap();
    assert!((state.energy - EXACT).abs() > 0.5, "{}", state.energy);
    if !state.stagnated {
        assert!(state.converged);
        // first odd level 5/2 - 5; the box cuts off a little more of it
        assert!((state.energy + 2.5).abs() < 1e-3, "{}", state.energy);
    }
}

#[test]
fn zero_potential_breaks_down() {
    let mut solver = Solver::new(
        &PotentialSpec::user(|_: &[f64]| 0.0),
        3,
        Domain::symmetric(4.0).unwrap(),
        SolverConfig::new(6, 1e-4, 5),
    )
    .unwrap();
    let psi = solver.project_guess(&ground).unwrap();
    let err = solver.step(&ScfState::new(psi, -0.5).unwrap()).unwrap_err();
    assert!(matches!(err, MraError::Breakdown(_)), "{err}");
}

#[test]
fn weak_well_drives_energy_positive() {
    let mut solver = Solver::new(
        &PotentialSpec::user(|x: &[f64]| -0.1 * (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp()),
        3,
        Domain::symmetric(6.0).unwrap(),
        SolverConfig::new(6, 1e-4, 10),
    )
    .unwrap();
    let psi = solver.project_guess(&ground).unwrap();
    let err = solver.solve(ScfState::new(psi, -0.5).unwrap()).unwrap_err();
    match err {
        MraError::Breakdown(msg) => assert!(msg.contains("offset"), "{msg}"),
        other => panic!("{other}"),
    }
}

#[test]
fn starting_energy_must_be_negative() {
    let solver = harmonic_solver(3.0, 6, 1e-4, 1);
    let psi = solver.project_guess(&ground).unwrap();
    assert!(ScfState::new(psi.clone(), 0.0).is_err());
    assert!(ScfState::new(psi.scale(0.0), -1.0).is_err());
}

#[test]
fn iteration_cap_reports_failure_with_history() {
    let state = solve_ground_state(
        &PotentialSpec::harmonic(1.0, 5.0),
        &perturbed,
        -3.0,
        3,
        Domain::symmetric(3.0).unwrap(),
        6,
        1e-4,
        2,
    )
    .unwrap();
    assert!(!state.converged);
    assert_eq!(state.history.len(), 2);
    assert_eq!(state.iteration, 2);
}

#[test]
fn smoothed_hydrogen_at_low_precision() {
    let pot = PotentialSpec::smoothed_coulomb(1.0, 1e-3).unwrap();
    let guess = |x: &[f64]| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()).exp();
    let state = solve_ground_state(
        &pot,
        &guess,
        -0.4,
        3,
        Domain::symmetric(20.0).unwrap(),
        6,
        1e-4,
        20,
    )
    .unwrap();
    assert!(state.converged, "{:?}", state.history);
    assert!((state.energy + 0.5).abs() < 5e-3, "{}", state.energy);
}

#[test]
fn single_threaded_runs_are_deterministic() {
    let run = || {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        pool.install(|| {
            solve_ground_state(
                &PotentialSpec::harmonic(1.0, 5.0),
                &perturbed,
                -3.0,
                3,
                Domain::symmetric(3.0).unwrap(),
                6,
                1e-4,
                3,
            )
            .unwrap()
            .history
        })
    };
    assert_eq!(run(), run());
}
