//! Pieces of the `mra` command-line tool that are also used by tests: the
//! Gaussian demo with its analytic references, and grid sampling.

use std::f64::consts::PI;
use std::io::Write;

use anyhow::{bail, ensure, Result};
use mra::basis::gauss_legendre_rule;
use mra::convolution::{fit_coulomb, SeparatedOperator};
use mra::funcops::{inner, project, ProjectionParams};
use mra::tree::{Domain, MraFunction};
use serde::Serialize;

/// Version of every JSON report and history file the tool writes.
pub const REPORT_VERSION: u32 = 1;

/// Exact integrals of `g = e^{-|r|^2}` restricted to the cube `[lo, hi]^3`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GaussianReference {
    pub trace: f64,
    pub norm2: f64,
    pub self_energy: f64,
}

fn erf_interval(lo: f64, hi: f64) -> f64 {
    libm::erf(hi) - libm::erf(lo)
}

/// `int_lo^hi int_lo^hi e^{-x^2 - y^2 - t^2 (x - y)^2} dy dx`. The inner
/// integral is done in closed form; the outer one by Gauss-Legendre panels
/// graded towards both ends, where the integrand has edges of width `1/t`.
fn pair_integral(lo: f64, hi: f64, t: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let a = 1.0 + t * t;
    let sa = a.sqrt();
    let inner = |x: f64| {
        let y0 = t * t * x / a;
        (-x * x - t * t * x * x / a).exp()
            * 0.5
            * (PI / a).sqrt()
            * erf_interval(sa * (lo - y0), sa * (hi - y0))
    };
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let mut edges = vec![lo, mid, hi];
    let mut w = half;
    for _ in 0..45 {
        w *= 0.5;
        edges.push(lo + w);
        edges.push(hi - w);
    }
    edges.sort_by(f64::total_cmp);
    let (xs, ws) = rule;
    edges
        .windows(2)
        .map(|p| {
            let h = p[1] - p[0];
            xs.iter()
                .zip(ws)
                .map(|(x, wt)| wt * h * inner(p[0] + h * x))
                .sum::<f64>()
        })
        .sum()
}

impl GaussianReference {
    pub fn on_cube(lo: f64, hi: f64) -> Self {
        let trace = (0.5 * PI.sqrt() * erf_interval(lo, hi)).powi(3);
        let s2 = 2f64.sqrt();
        let norm2 = (0.5 * (0.5 * PI).sqrt() * erf_interval(s2 * lo, s2 * hi))
            .powi(3)
            .sqrt();
        // 1/r = 2/sqrt(pi) int_0^inf e^{-t^2 r^2} dt, with t = e^u
        let rule = gauss_legendre_rule(16).expect("16-point rule");
        let (u_lo, u_hi, h) = (-30.0, 14.0, 0.05);
        let n = ((u_hi - u_lo) / h) as usize;
        let sum: f64 = (0..=n)
            .map(|i| {
                let t = f64::exp(u_lo + i as f64 * h);
                pair_integral(lo, hi, t, &rule).powi(3) * t
            })
            .sum();
        let self_energy = 2.0 / PI.sqrt() * h * sum;
        Self {
            trace,
            norm2,
            self_energy,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DemoConfig {
    pub k: usize,
    pub eps: f64,
    pub domain: Domain,
    /// Finest length scale the Coulomb operator resolves, as a fraction of
    /// the domain width.
    pub finest: f64,
    /// Relative accuracy of the Coulomb operator fit.
    pub op_eps: f64,
}

impl DemoConfig {
    pub fn new(k: usize, eps: f64, domain: Domain) -> Self {
        Self {
            k,
            eps,
            domain,
            finest: 1e-4,
            op_eps: (0.01 * eps).min(1e-6),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Quantity {
    pub value: f64,
    pub reference: f64,
    pub rel_err: f64,
}

impl Quantity {
    fn new(value: f64, reference: f64) -> Self {
        Self {
            value,
            reference,
            rel_err: (value - reference).abs() / reference.abs(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DemoReport {
    pub k: usize,
    pub eps: f64,
    pub domain: [f64; 2],
    pub kernel_terms: usize,
    pub nodes: usize,
    pub max_level: u8,
    pub trace: Quantity,
    pub norm2: Quantity,
    pub self_energy: Quantity,
    /// Relative tolerance every quantity has to meet.
    pub tolerance: f64,
    #[serde(skip)]
    pub passed: bool,
}

/// Projects `e^{-|r|^2}` and evaluates its trace, 2-norm and Coulomb self
/// energy. Returns the report and the projected function.
pub fn demo_gaussian(config: &DemoConfig) -> Result<(DemoReport, MraFunction)> {
    let d = config.domain;
    let g = project(
        &|x: &[f64]| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp(),
        3,
        d,
        ProjectionParams::new(config.k, config.eps),
    )?;
    let kernel = fit_coulomb(
        config.op_eps,
        config.finest * d.width(),
        d.width() * 3f64.sqrt(),
    )?;
    let terms = kernel.len();
    let op = SeparatedOperator::new(kernel, 3, config.k, d)?;
    let v = op.apply(&g)?;
    let reference = GaussianReference::on_cube(d.lo, d.hi);
    let trace = Quantity::new(g.trace(), reference.trace);
    let norm2 = Quantity::new(g.norm2(), reference.norm2);
    let self_energy = Quantity::new(inner(&g, &v)?, reference.self_energy);
    let tolerance = config.eps;
    let passed = [&trace, &norm2, &self_energy]
        .iter()
        .all(|q| q.rel_err <= tolerance);
    let report = DemoReport {
        k: config.k,
        eps: config.eps,
        domain: [d.lo, d.hi],
        kernel_terms: terms,
        nodes: g.node_count(),
        max_level: g.max_level(),
        trace,
        norm2,
        self_energy,
        tolerance,
        passed,
    };
    Ok((report, g))
}

/// Regular grid over one axis or one coordinate plane.
#[derive(Clone, Debug)]
pub struct SampleSpec {
    /// Free axes, one for a line, two for a plane.
    pub axes: Vec<usize>,
    /// Coordinates of the fixed axes; entries for free axes are ignored.
    pub at: Vec<f64>,
    pub window: [f64; 2],
    /// Points per free axis, endpoints included.
    pub resolution: usize,
}

impl SampleSpec {
    fn validate(&self, f: &MraFunction) -> Result<()> {
        let dim = f.dim();
        let d = f.domain();
        ensure!(self.resolution > 0, "resolution must be at least 1");
        ensure!(
            !self.axes.is_empty() && self.axes.len() <= 2,
            "sample along one axis or one plane"
        );
        ensure!(
            self.axes.iter().all(|&a| a < dim),
            "axis outside a {dim}-dimensional function"
        );
        ensure!(
            self.axes.len() == 1 || self.axes[0] != self.axes[1],
            "plane axes must differ"
        );
        ensure!(
            self.at.len() == dim,
            "expected {dim} fixed coordinates, got {}",
            self.at.len()
        );
        let [lo, hi] = self.window;
        ensure!(lo <= hi, "window [{lo}, {hi}] is empty");
        if lo < d.lo || hi > d.hi {
            bail!(
                "window [{lo}, {hi}] is outside the domain [{}, {}]",
                d.lo,
                d.hi
            );
        }
        for (i, x) in self.at.iter().enumerate() {
            if !self.axes.contains(&i) && !(d.lo..=d.hi).contains(x) {
                bail!(
                    "fixed coordinate {x} on axis {i} is outside the domain [{}, {}]",
                    d.lo,
                    d.hi
                );
            }
        }
        Ok(())
    }

    fn coord(&self, i: usize) -> f64 {
        let [lo, hi] = self.window;
        if self.resolution == 1 {
            lo
        } else {
            lo + (hi - lo) * i as f64 / (self.resolution - 1) as f64
        }
    }

    /// Grid points in row-major order with the last free axis fastest.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let n = self.resolution;
        let total = n.pow(self.axes.len() as u32);
        (0..total)
            .map(|idx| {
                let mut x = self.at.clone();
                let mut rem = idx;
                for &axis in self.axes.iter().rev() {
                    x[axis] = self.coord(rem % n);
                    rem /= n;
                }
                x
            })
            .collect()
    }
}

/// Point values of `f` on the grid, in the order of [`SampleSpec::points`].
pub fn sample(f: &MraFunction, spec: &SampleSpec) -> Result<Vec<(Vec<f64>, f64)>> {
    spec.validate(f)?;
    spec.points()
        .into_iter()
        .map(|x| {
            let v = f.eval(&x)?;
            Ok((x, v))
        })
        .collect()
}

/// Comma-separated rows `x[,y[,z]],value`; floats print in shortest
/// round-trip form.
pub fn write_samples<W: Write>(mut w: W, dim: usize, rows: &[(Vec<f64>, f64)]) -> Result<()> {
    let names = ["x", "y", "z"];
    writeln!(w, "{},value", names[..dim].join(","))?;
    for (x, v) in rows {
        let coords: Vec<String> = x.iter().map(|c| c.to_string()).collect();
        writeln!(w, "{},{}", coords.join(","), v)?;
    }
    Ok(())
}
