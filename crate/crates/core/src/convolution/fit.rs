//! Gaussian-sum fits of radial kernels from the trapezoid rule applied to
//!
//! `e^(-mu r) / r = 2/sqrt(pi) * integral exp(-r^2 e^(2s) - mu^2 e^(-2s) / 4 + s) ds`.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MraError, Result};

pub const MIN_FIT_EPS: f64 = 1e-10;
pub const MAX_FIT_EPS: f64 = 1e-2;
/// Points of the logarithmic verification grid.
pub const CHECK_POINTS: usize = 1000;

const STEP_SHRINK: f64 = 0.85;
const MAX_REFITS: usize = 40;
/// Share of `eps` given to each pruned tail.
const TAIL_BUDGET: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum KernelKind {
    /// `1 / r`
    Coulomb,
    /// `e^(-mu r) / (4 pi r)`
    Bsh { mu: f64 },
}

impl KernelKind {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            KernelKind::Coulomb => 1.0 / r,
            KernelKind::Bsh { mu } => (-mu * r).exp() / (4.0 * PI * r),
        }
    }

    fn mu(&self) -> f64 {
        match *self {
            KernelKind::Coulomb => 0.0,
            KernelKind::Bsh { mu } => mu,
        }
    }

    fn prefactor(&self) -> f64 {
        match self {
            KernelKind::Coulomb => 1.0,
            KernelKind::Bsh { .. } => 1.0 / (4.0 * PI),
        }
    }
}

/// One Gaussian `coeff * exp(-expnt * r^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianTerm {
    pub coeff: f64,
    pub expnt: f64,
}

/// Radial kernel as a sum of Gaussians, valid to relative precision `eps`
/// on `[r_lo, r_hi]` (user length units).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparatedKernel {
    pub kind: KernelKind,
    pub eps: f64,
    pub r_lo: f64,
    pub r_hi: f64,
    pub terms: Vec<GaussianTerm>,
}

/// Result of checking a fit against direct evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitCheck {
    pub max_rel_err: f64,
    pub at_r: f64,
}

fn check_range(eps: f64, r_lo: f64, r_hi: f64) -> Result<()> {
    if !(r_lo > 0.0 && r_hi > r_lo && r_hi.is_finite()) {
        return Err(MraError::InvalidParameter(format!(
            "invalid range [{r_lo}, {r_hi}]"
        )));
    }
    if !(MIN_FIT_EPS..=MAX_FIT_EPS).contains(&eps) {
        return Err(MraError::InvalidParameter(format!(
            "eps {eps} outside [{MIN_FIT_EPS}, {MAX_FIT_EPS}]"
        )));
    }
    Ok(())
}

/// Initial trapezoid step for a requested precision.
pub fn initial_step(eps: f64) -> f64 {
    1.0 / (0.2 + 0.47 * (1.0 / eps).log10())
}

pub fn fit_coulomb(eps: f64, r_lo: f64, r_hi: f64) -> Result<SeparatedKernel> {
    check_range(eps, r_lo, r_hi)?;
    fit(KernelKind::Coulomb, eps, r_lo, r_hi)
}

pub fn fit_bsh(mu: f64, eps: f64, r_lo: f64, r_hi: f64) -> Result<SeparatedKernel> {
    check_range(eps, r_lo, r_hi)?;
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(MraError::InvalidParameter(format!(
            "mu must be finite and nonnegative, got {mu}"
        )));
    }
    fit(KernelKind::Bsh { mu }, eps, r_lo, r_hi)
}

/// Trapezoid nodes `s_lo + j h` of the integral representation, unpruned.
pub fn trapezoid_terms(kind: KernelKind, h: f64, s_lo: f64, s_hi: f64) -> Vec<GaussianTerm> {
    let mu = kind.mu();
    let pre = kind.prefactor() * 2.0 / PI.sqrt() * h;
    let n = ((s_hi - s_lo) / h).ceil() as usize;
    (0..=n)
        .map(|j| {
            let s = s_lo + j as f64 * h;
            let damp = if mu > 0.0 {
                (-0.25 * mu * mu * (-2.0 * s).exp()).exp()
            } else {
                1.0
            };
            GaussianTerm {
                coeff: pre * s.exp() * damp,
                expnt: (2.0 * s).exp(),
            }
        })
        .filter(|t| t.coeff > 0.0)
        .collect()
}

/// Integration window in `s` wide enough that both tails are far below
/// `eps` on `[r_lo, r_hi]`.
fn s_window(eps: f64, r_lo: f64, r_hi: f64) -> (f64, f64) {
    let x = (1.0 / eps).ln().sqrt() + 3.0;
    let s_hi = (x / r_lo).ln() + 1.0;
    let s_lo = (1e-3 * eps / r_hi).ln() - 1.0;
    (s_lo, s_hi)
}

fn log_grid(r_lo: f64, r_hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let (a, b) = (r_lo.ln(), r_hi.ln());
    (0..n).map(move |i| {
        if i + 1 == n {
            r_hi
        } else {
            (a + (b - a) * i as f64 / (n - 1) as f64).exp()
        }
    })
}

/// Drops terms from both ends of the (exponent-sorted) list while their
/// accumulated worst-case relative contribution stays within budget.
fn prune(
    kind: KernelKind,
    terms: Vec<GaussianTerm>,
    budget: f64,
    r_lo: f64,
    r_hi: f64,
) -> Vec<GaussianTerm> {
    let grid: Vec<(f64, f64)> = log_grid(r_lo, r_hi, 200)
        .map(|r| (r, kind.eval(r)))
        .collect();
    let worst = |t: &GaussianTerm| {
        grid.iter()
            .map(|&(r, k)| t.coeff * (-t.expnt * r * r).exp() / k)
            .fold(0.0, f64::max)
    };
    let mut lo = 0;
    let mut acc = 0.0;
    while lo < terms.len() {
        acc += worst(&terms[lo]);
        if acc > budget {
            break;
        }
        lo += 1;
    }
    let mut hi = terms.len();
    acc = 0.0;
    while hi > lo {
        acc += worst(&terms[hi - 1]);
        if acc > budget {
            break;
        }
        hi -= 1;
    }
    terms[lo..hi].to_vec()
}

fn fit(kind: KernelKind, eps: f64, r_lo: f64, r_hi: f64) -> Result<SeparatedKernel> {
    let (s_lo, s_hi) = s_window(eps, r_lo, r_hi);
    let mut h = initial_step(eps);
    let mut best = f64::INFINITY;
    for _ in 0..MAX_REFITS {
        let terms = trapezoid_terms(kind, h, s_lo, s_hi);
        let terms = prune(kind, terms, TAIL_BUDGET * eps, r_lo, r_hi);
        let kernel = SeparatedKernel {
            kind,
            eps,
            r_lo,
            r_hi,
            terms,
        };
        let check = kernel.check(CHECK_POINTS);
        if check.max_rel_err <= eps {
            return Ok(kernel);
        }
        best = best.min(check.max_rel_err);
        h *= STEP_SHRINK;
    }
    Err(MraError::FitFailure {
        eps,
        achieved: best,
    })
}

impl SeparatedKernel {
    /// Coulomb kernel from an explicit trapezoid step, without pruning or
    /// verification. Used where the smoothness of the fit error matters more
    /// than the term count.
    pub fn coulomb_with_step(h: f64, eps: f64, r_lo: f64, r_hi: f64) -> Result<Self> {
        check_range(eps, r_lo, r_hi)?;
        if !(h > 0.0 && h < 2.0) {
            return Err(MraError::InvalidParameter(format!(
                "trapezoid step {h} out of range"
            )));
        }
        let (s_lo, s_hi) = s_window(eps, r_lo, r_hi);
        let kind = KernelKind::Coulomb;
        Ok(Self {
            kind,
            eps,
            r_lo,
            r_hi,
            terms: trapezoid_terms(kind, h, s_lo, s_hi),
        })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Value of the Gaussian sum at distance `r`.
    pub fn eval(&self, r: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coeff * (-t.expnt * r * r).exp())
            .sum()
    }

    /// Exact kernel value.
    pub fn exact(&self, r: f64) -> f64 {
        self.kind.eval(r)
    }

    /// Largest relative deviation from the exact kernel over `n` log-spaced
    /// points of the validity range.
    pub fn check(&self, n: usize) -> FitCheck {
        let mut out = FitCheck {
            max_rel_err: 0.0,
            at_r: self.r_lo,
        };
        for r in log_grid(self.r_lo, self.r_hi, n) {
            let e = (self.eval(r) / self.exact(r) - 1.0).abs();
            if !(e <= out.max_rel_err) {
                out = FitCheck {
                    max_rel_err: e,
                    at_r: r,
                };
            }
        }
        out
    }

    /// Integral of the Gaussian sum over all of 3D space.
    pub fn integral_3d(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coeff * (PI / t.expnt).powf(1.5))
            .sum()
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let file = KernelFile {
            magic: KERNEL_MAGIC.into(),
            version: KERNEL_VERSION,
            kernel: self.clone(),
        };
        serde_json::to_writer_pretty(w, &file)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let file: KernelFile = serde_json::from_reader(r)?;
        if file.magic != KERNEL_MAGIC {
            return Err(MraError::Format(format!("bad magic {:?}", file.magic)));
        }
        if file.version != KERNEL_VERSION {
            return Err(MraError::Format(format!(
                "unsupported version {}",
                file.version
            )));
        }
        let k = file.kernel;
        if k.terms
            .iter()
            .any(|t| !(t.expnt > 0.0) || !t.coeff.is_finite())
        {
            return Err(MraError::Format(
                "kernel term with nonpositive exponent".into(),
            ));
        }
        Ok(k)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

pub const KERNEL_MAGIC: &str = "MRA-KERNEL";
pub const KERNEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct KernelFile {
    magic: String,
    version: u32,
    kernel: SeparatedKernel,
}
