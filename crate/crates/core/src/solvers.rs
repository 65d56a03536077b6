//! Lowest bound state of `-1/2 lap psi + V psi = E psi` by fixed-point
//! iteration of `psi = -2 G_mu * (V psi)`, `G_mu = e^(-mu r) / (4 pi r)`,
//! `mu = sqrt(-2E)`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::convolution::{bsh_cutoff, fit_bsh, SeparatedOperator};
use crate::error::{MraError, Result};
use crate::funcops::{gaxpy, inner, multiply, project, ProjectionParams};
use crate::tree::{Domain, MraFunction};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PotentialKind {
    /// `omega^2 r^2 / 2 - offset`
    Harmonic {
        omega: f64,
        offset: f64,
    },
    /// `-charge erf(r / a) / r` with `a = smoothing_length`
    SmoothedCoulomb {
        charge: f64,
        smoothing_length: f64,
    },
    User,
}

type PotentialFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    func: Arc<PotentialFn>,
}

impl fmt::Debug for PotentialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialSpec")
            .field("kind", &self.kind)
            .finish()
    }
}

fn radius(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl PotentialSpec {
    pub fn harmonic(omega: f64, offset: f64) -> Self {
        Self {
            kind: PotentialKind::Harmonic { omega, offset },
            func: Arc::new(move |x: &[f64]| {
                let r = radius(x);
                0.5 * omega * omega * r * r - offset
            }),
        }
    }

    pub fn smoothed_coulomb(charge: f64, smoothing_length: f64) -> Result<Self> {
        if !(smoothing_length > 0.0) {
            return Err(MraError::InvalidParameter(format!(
                "smoothing length must be positive, got {smoothing_length}"
            )));
        }
        let a = smoothing_length;
        let at_origin = 2.0 * charge / (a * std::f64::consts::PI.sqrt());
        Ok(Self {
            kind: PotentialKind::SmoothedCoulomb {
                charge,
                smoothing_length,
            },
            func: Arc::new(move |x: &[f64]| {
                let r = radius(x);
                if r < 1e-8 * a {
                    -at_origin
                } else {
                    -charge * libm::erf(r / a) / r
                }
            }),
        })
    }

    pub fn user<F>(f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            kind: PotentialKind::User,
            func: Arc::new(f),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.func)(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub energy: f64,
    pub delta_e: f64,
    pub residual: f64,
    pub psi_nodes: usize,
    pub vpsi_nodes: usize,
    pub kernel_terms: usize,
}

#[derive(Clone, Debug)]
pub struct ScfState {
    pub psi: MraFunction,
    pub energy: f64,
    pub residual: f64,
    pub delta_e: f64,
    pub iteration: usize,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    pub stagnated: bool,
}

impl ScfState {
    /// Starting state: `psi` normalized, no steps taken.
    pub fn new(psi: MraFunction, energy: f64) -> Result<Self> {
        if !(energy < 0.0) {
            return Err(MraError::InvalidParameter(format!(
                "starting energy {energy} must be negative"
            )));
        }
        let n = psi.norm2();
        if !(n > 0.0) {
            return Err(MraError::Breakdown("initial guess has zero norm".into()));
        }
        Ok(Self {
            psi: psi.scale(1.0 / n),
            energy,
            residual: f64::INFINITY,
            delta_e: f64::INFINITY,
            iteration: 0,
            history: Vec::new(),
            converged: false,
            stagnated: false,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub k: usize,
    pub eps: f64,
    pub max_iter: usize,
    /// Precision of the Green's function fit; defaults to `eps / 10`.
    pub kernel_eps: Option<f64>,
}

impl SolverConfig {
    pub fn new(k: usize, eps: f64, max_iter: usize) -> Self {
        Self {
            k,
            eps,
            max_iter,
            kernel_eps: None,
        }
    }

    /// Residual threshold on `||psi_new - psi_old||`.
    pub fn residual_tolerance(&self) -> f64 {
        (10.0 * self.eps).max(1e-6)
    }

    /// Threshold on the energy increment.
    pub fn energy_tolerance(&self) -> f64 {
        10.0 * self.eps
    }

    fn kernel_eps(&self) -> f64 {
        self.kernel_eps.unwrap_or(0.1 * self.eps).clamp(
            crate::convolution::fit::MIN_FIT_EPS,
            crate::convolution::fit::MAX_FIT_EPS,
        )
    }
}

/// Energy increment `<V psi_old, psi_new - psi_old> / ||psi_new||^2`.
pub fn energy_update(
    psi_old: &MraFunction,
    psi_new: &MraFunction,
    v_psi_old: &MraFunction,
) -> Result<f64> {
    let n2 = inner(psi_new, psi_new)?;
    if !(n2 > 0.0) {
        return Err(MraError::Breakdown(
            "Green's function produced a zero update; the potential has no bound state here".into(),
        ));
    }
    let diff = gaxpy(1.0, psi_new, -1.0, psi_old)?;
    Ok(inner(v_psi_old, &diff)? / n2)
}

/// Projected potential and the current Green's function operator.
pub struct Solver {
    config: SolverConfig,
    domain: Domain,
    dim: usize,
    v: MraFunction,
    /// Operator and the energy it was fitted at.
    op: Option<(f64, SeparatedOperator)>,
}

impl Solver {
    pub fn new(
        potential: &PotentialSpec,
        dim: usize,
        domain: Domain,
        config: SolverConfig,
    ) -> Result<Self> {
        if !(config.eps > 0.0) {
            return Err(MraError::InvalidParameter(format!(
                "eps must be positive, got {}",
                config.eps
            )));
        }
        let f = |x: &[f64]| potential.eval(x);
        let v = project(&f, dim, domain, ProjectionParams::new(config.k, config.eps))?;
        Ok(Self {
            config,
            domain,
            dim,
            v,
            op: None,
        })
    }

    pub fn potential(&self) -> &MraFunction {
        &self.v
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn project_guess<F>(&self, guess: &F) -> Result<MraFunction>
    where
        F: Fn(&[f64]) -> f64 + Sync + ?Sized,
    {
        project(
            guess,
            self.dim,
            self.domain,
            ProjectionParams::new(self.config.k, self.config.eps),
        )
    }

    /// Green's function for `energy`. The previous fit is kept while its
    /// energy is within a tenth of the energy tolerance and its range covers
    /// the source. The increment is measured against the fitted energy, so a
    /// stale kernel adds the same offset on every step.
    fn operator(&mut self, energy: f64, finest: f64) -> Result<&SeparatedOperator> {
        let tol = 0.1 * self.config.energy_tolerance();
        let reuse = match &self.op {
            Some((e, op)) => (energy - e).abs() <= tol && op.kernel().r_lo <= finest,
            None => false,
        };
        if !reuse {
            let mu = (-2.0 * energy).sqrt();
            let eps = self.config.kernel_eps();
            let width = self.domain.width();
            let diameter = width * (self.dim as f64).sqrt();
            let r_hi = diameter.min(bsh_cutoff(mu, eps));
            let r_lo = (1e-4 * width).min(0.5 * finest);
            let kernel = fit_bsh(mu, eps, r_lo, r_hi)?;
            let op = SeparatedOperator::new(kernel, self.dim, self.config.k, self.domain)?;
            self.op = Some((energy, op));
        }
        Ok(&self.op.as_ref().expect("operator set").1)
    }

    /// Green's function image `-2 G_mu * (V psi)` and `V psi`.
    pub fn trial(
        &mut self,
        psi: &MraFunction,
        energy: f64,
    ) -> Result<(MraFunction, MraFunction, usize)> {
        if !(energy < 0.0) {
            return Err(MraError::Breakdown(format!(
                "energy {energy} is not negative; start deeper or offset the potential"
            )));
        }
        let vpsi = multiply(&self.v, psi)?;
        let finest = self.domain.width() * 0.5f64.powi(vpsi.max_level() as i32);
        let op = self.operator(energy, finest)?;
        let terms = op.kernel().len();
        let trial = op.apply(&vpsi)?.scale(-2.0);
        Ok((trial, vpsi, terms))
    }

    /// One fixed-point step.
    pub fn step(&mut self, state: &ScfState) -> Result<ScfState> {
        let (trial, vpsi, terms) = self.trial(&state.psi, state.energy)?;
        let delta_e = energy_update(&state.psi, &trial, &vpsi)?;
        let energy = state.energy + delta_e;
        if !(energy < 0.0) {
            return Err(MraError::Breakdown(format!(
                "energy update reached {energy}; no bound state below zero was found, \
                 try a deeper starting energy or an offset potential"
            )));
        }
        let psi = trial.scale(1.0 / trial.norm2());
        let residual = gaxpy(1.0, &psi, -1.0, &state.psi)?.norm2();
        let iteration = state.iteration + 1;
        let mut history = state.history.clone();
        history.push(IterationRecord {
            iteration,
            energy,
            delta_e,
            residual,
            psi_nodes: psi.node_count(),
            vpsi_nodes: vpsi.node_count(),
            kernel_terms: terms,
        });
        let n = history.len();
        let stagnated =
            n >= 4 && (n - 3..n).all(|i| history[i].residual >= history[i - 1].residual);
        let converged = residual < self.config.residual_tolerance()
            && delta_e.abs() < self.config.energy_tolerance();
        Ok(ScfState {
            psi,
            energy,
            residual,
            delta_e,
            iteration,
            history,
            converged,
            stagnated,
        })
    }

    /// Iterates until convergence or `max_iter` steps. A state that did not
    /// converge is returned with `converged == false`.
    pub fn solve(&mut self, initial: ScfState) -> Result<ScfState> {
        let mut state = initial;
        while state.iteration < self.config.max_iter {
            state = self.step(&state)?;
            if state.converged {
                break;
            }
        }
        Ok(state)
    }

    /// `|| psi + 2 G_mu * (V psi) ||` for a given pair.
    pub fn green_residual(&mut self, psi: &MraFunction, energy: f64) -> Result<f64> {
        let (trial, _, _) = self.trial(psi, energy)?;
        Ok(gaxpy(1.0, psi, -1.0, &trial)?.norm2())
    }
}

/// One step with a freshly projected potential.
pub fn scf_step(state: &ScfState, potential: &PotentialSpec, eps: f64) -> Result<ScfState> {
    let psi = &state.psi;
    let config = SolverConfig::new(psi.k(), eps, usize::MAX);
    let mut solver = Solver::new(potential, psi.dim(), psi.domain(), config)?;
    solver.step(state)
}

/// Lowest bound state reachable from `guess` by fixed-point iteration.
#[allow(clippy::too_many_arguments)]
pub fn solve_ground_state<F>(
    potential: &PotentialSpec,
    guess: &F,
    e0: f64,
    dim: usize,
    domain: Domain,
    k: usize,
    eps: f64,
    max_iter: usize,
) -> Result<ScfState>
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    let mut solver = Solver::new(potential, dim, domain, SolverConfig::new(k, eps, max_iter))?;
    let psi = solver.project_guess(guess)?;
    let state = ScfState::new(psi, e0)?;
    solver.solve(state)
}
