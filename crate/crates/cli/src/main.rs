use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use mra::convolution::{fit_bsh, fit_coulomb, FitCheck};
use mra::solvers::{solve_ground_state, IterationRecord, PotentialSpec};
use mra::tree::{Domain, MraFunction};
use mra_cli::{demo_gaussian, sample, write_samples, DemoConfig, SampleSpec, REPORT_VERSION};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "mra",
    version,
    about = "Adaptive multiwavelet function toolkit"
)]
struct Cli {
    /// Worker threads; 1 gives deterministic single-threaded runs.
    #[arg(long, global = true, env = "MRA_NUM_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trace, norm and Coulomb self energy of exp(-r^2).
    DemoGaussian {
        #[arg(long, default_value_t = 6)]
        k: usize,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        /// Half-width H for [-H, H]^3, or LO,HI.
        #[arg(long, default_value = "6", value_parser = parse_bounds, allow_hyphen_values = true)]
        domain: Bounds,
        /// Finest length scale of the Coulomb operator, relative to the domain width.
        #[arg(long, default_value_t = 1e-4)]
        finest: f64,
        /// Accuracy of the Coulomb operator fit [default: min(1e-6, eps/100)].
        #[arg(long)]
        op_eps: Option<f64>,
        #[arg(long, default_value = "demo-gaussian.json")]
        report: PathBuf,
        /// Also write the projected Gaussian.
        #[arg(long)]
        save: Option<PathBuf>,
    },
    /// Fit a radial kernel by a sum of Gaussians.
    FitKernel {
        #[arg(long, value_enum)]
        kind: KernelChoice,
        /// Screening parameter of the bsh kernel e^{-mu r}/(4 pi r).
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        #[arg(long, default_value_t = 1e-3)]
        r_lo: f64,
        #[arg(long, default_value_t = 20.0)]
        r_hi: f64,
        #[arg(long, default_value = "kernel.json")]
        out: PathBuf,
        #[arg(long, default_value = "fit-kernel.json")]
        report: PathBuf,
    },
    /// Lowest bound state of a model potential in 3D.
    Solve {
        #[arg(long, value_enum)]
        potential: PotentialChoice,
        /// Constant subtracted from the harmonic potential.
        #[arg(long, default_value_t = 5.0)]
        shift: f64,
        #[arg(long, default_value_t = 1.0)]
        omega: f64,
        #[arg(long, default_value_t = 1.0)]
        charge: f64,
        /// Smoothing length of the Coulomb potential.
        #[arg(long, default_value_t = 1e-3)]
        smoothing: f64,
        /// Half-width or LO,HI [default: 3 for harmonic, 6 otherwise].
        #[arg(long, value_parser = parse_bounds, allow_hyphen_values = true)]
        domain: Option<Bounds>,
        #[arg(long, default_value_t = 6)]
        k: usize,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        #[arg(long, default_value_t = 30)]
        max_iter: usize,
        /// Starting energy [default: 1.5 omega - shift + 0.5 for harmonic, -0.4 charge^2 for hydrogen].
        #[arg(long, allow_hyphen_values = true)]
        e0: Option<f64>,
        #[arg(long, value_enum)]
        guess: Option<GuessChoice>,
        /// Exponent a of the guess exp(-a r^2) or exp(-a r) [default: 0.4 omega, or charge].
        #[arg(long)]
        guess_exponent: Option<f64>,
        #[arg(long, default_value = "history.json")]
        history: PathBuf,
        #[arg(long, default_value = "psi.json")]
        psi: PathBuf,
        #[arg(long, default_value = "solve.json")]
        report: PathBuf,
    },
    /// Evaluate a stored function on a line or plane.
    Sample {
        /// Function file.
        input: PathBuf,
        /// Sample along one axis.
        #[arg(
            long,
            value_enum,
            conflicts_with = "plane",
            required_unless_present = "plane"
        )]
        axis: Option<Axis>,
        /// Sample over a coordinate plane.
        #[arg(long, value_enum)]
        plane: Option<Plane>,
        /// Coordinates of the fixed axes, comma separated, one per dimension [default: 0].
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        at: Option<Vec<f64>>,
        /// Window LO,HI on each free axis [default: the domain].
        #[arg(long, value_parser = parse_bounds, allow_hyphen_values = true)]
        window: Option<Bounds>,
        /// Points per free axis.
        #[arg(long, default_value_t = 101)]
        resolution: usize,
        #[arg(long, default_value = "samples.csv")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug)]
struct Bounds(f64, f64);

fn parse_bounds(s: &str) -> Result<Bounds, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let num = |p: &str| p.parse::<f64>().map_err(|e| format!("{p:?}: {e}"));
    let b = match parts.as_slice() {
        [h] => {
            let h = num(h)?;
            Bounds(-h, h)
        }
        [lo, hi] => Bounds(num(lo)?, num(hi)?),
        _ => return Err("expected H or LO,HI".into()),
    };
    if !(b.0 < b.1 && b.0.is_finite() && b.1.is_finite()) {
        return Err(format!("empty interval [{}, {}]", b.0, b.1));
    }
    Ok(b)
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum KernelChoice {
    Coulomb,
    Bsh,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum PotentialChoice {
    Harmonic,
    Hydrogen,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum GuessChoice {
    Gaussian,
    Slater,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Axis {
    X,
    Y,
    Z,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Plane {
    Xy,
    Xz,
    Yz,
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    format: &'static str,
    version: u32,
    command: &'a str,
    passed: bool,
    elapsed_seconds: f64,
    #[serde(flatten)]
    body: T,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_report<T: Serialize>(
    path: &Path,
    command: &str,
    passed: bool,
    start: Instant,
    body: T,
) -> Result<()> {
    let report = Report {
        format: "mra-report",
        version: REPORT_VERSION,
        command,
        passed,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        body,
    };
    write_json(path, &report)
}

fn usage_error(msg: impl std::fmt::Display) -> ! {
    Cli::command().error(ErrorKind::ValueValidation, msg).exit()
}

fn domain_of(b: Bounds) -> Result<Domain> {
    Ok(Domain::new(b.0, b.1)?)
}

fn run_demo(
    k: usize,
    eps: f64,
    domain: Bounds,
    finest: f64,
    op_eps: Option<f64>,
    report: &Path,
    save: Option<&Path>,
) -> Result<bool> {
    let start = Instant::now();
    let mut config = DemoConfig::new(k, eps, domain_of(domain)?);
    config.finest = finest;
    if let Some(e) = op_eps {
        config.op_eps = e;
    }
    let (r, g) = demo_gaussian(&config)?;
    println!(
        "domain [{}, {}]^3, k = {}, eps = {:e}",
        r.domain[0], r.domain[1], r.k, r.eps
    );
    println!(
        "nodes {}, max level {}, Coulomb terms {}",
        r.nodes, r.max_level, r.kernel_terms
    );
    for (name, q) in [
        ("trace", &r.trace),
        ("norm2", &r.norm2),
        ("self energy", &r.self_energy),
    ] {
        println!(
            "{name:>12} {:.10}  exact {:.10}  rel err {:.2e}",
            q.value, q.reference, q.rel_err
        );
    }
    println!(
        "{}",
        if r.passed {
            "all within tolerance"
        } else {
            "TOLERANCE NOT MET"
        }
    );
    if let Some(path) = save {
        g.save(path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let passed = r.passed;
    write_report(report, "demo-gaussian", passed, start, r)?;
    Ok(passed)
}

#[derive(Serialize)]
struct FitReport {
    kind: KernelChoice,
    mu: Option<f64>,
    eps: f64,
    r_lo: f64,
    r_hi: f64,
    terms: usize,
    #[serde(flatten)]
    check: FitCheck,
}

#[allow(clippy::too_many_arguments)]
fn run_fit(
    kind: KernelChoice,
    mu: Option<f64>,
    eps: f64,
    r_lo: f64,
    r_hi: f64,
    out: &Path,
    report: &Path,
) -> Result<bool> {
    if !(r_lo > 0.0 && r_lo < r_hi) {
        usage_error(format!(
            "need 0 < r_lo < r_hi, got r_lo = {r_lo}, r_hi = {r_hi}"
        ));
    }
    let start = Instant::now();
    let kernel = match (kind, mu) {
        (KernelChoice::Coulomb, _) => fit_coulomb(eps, r_lo, r_hi)?,
        (KernelChoice::Bsh, Some(mu)) => fit_bsh(mu, eps, r_lo, r_hi)?,
        (KernelChoice::Bsh, None) => usage_error("--kind bsh needs --mu"),
    };
    let check = kernel.check(1000);
    let passed = check.max_rel_err <= eps;
    kernel
        .save(out)
        .with_context(|| format!("writing {}", out.display()))?;
    println!(
        "{} terms, max relative error {:.3e} at r = {:.6e}",
        kernel.len(),
        check.max_rel_err,
        check.at_r
    );
    let body = FitReport {
        kind,
        mu,
        eps,
        r_lo,
        r_hi,
        terms: kernel.len(),
        check,
    };
    write_report(report, "fit-kernel", passed, start, body)?;
    Ok(passed)
}

#[derive(Serialize)]
struct History<'a> {
    format: &'static str,
    version: u32,
    iterations: &'a [IterationRecord],
}

#[derive(Serialize)]
struct SolveReport {
    potential: PotentialChoice,
    domain: [f64; 2],
    k: usize,
    eps: f64,
    e0: f64,
    energy: f64,
    iterations: usize,
    residual: f64,
    delta_e: f64,
    converged: bool,
    stagnated: bool,
}

struct SolveArgs {
    potential: PotentialChoice,
    shift: f64,
    omega: f64,
    charge: f64,
    smoothing: f64,
    domain: Option<Bounds>,
    k: usize,
    eps: f64,
    max_iter: usize,
    e0: Option<f64>,
    guess: Option<GuessChoice>,
    guess_exponent: Option<f64>,
}

fn run_solve(a: SolveArgs, history: &Path, psi_path: &Path, report: &Path) -> Result<bool> {
    let start = Instant::now();
    let harmonic = a.potential == PotentialChoice::Harmonic;
    let (spec, default_e0, default_guess, default_exponent, default_half) = if harmonic {
        let e0 = 1.5 * a.omega - a.shift + 0.5;
        (
            PotentialSpec::harmonic(a.omega, a.shift),
            e0,
            GuessChoice::Gaussian,
            0.4 * a.omega,
            3.0,
        )
    } else {
        let spec = PotentialSpec::smoothed_coulomb(a.charge, a.smoothing)?;
        (
            spec,
            -0.4 * a.charge * a.charge,
            GuessChoice::Slater,
            a.charge,
            6.0,
        )
    };
    let e0 = a.e0.unwrap_or(default_e0);
    if e0.is_nan() || e0 >= 0.0 {
        usage_error(format!(
            "starting energy {e0} must be negative; pass --e0 or a larger --shift"
        ));
    }
    let guess = a.guess.unwrap_or(default_guess);
    let alpha = a.guess_exponent.unwrap_or(default_exponent);
    let bounds = a.domain.unwrap_or(Bounds(-default_half, default_half));
    let domain = domain_of(bounds)?;
    let guess_fn = move |x: &[f64]| {
        let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        match guess {
            GuessChoice::Gaussian => (-alpha * r2).exp(),
            GuessChoice::Slater => (-alpha * r2.sqrt()).exp(),
        }
    };
    let state = solve_ground_state(&spec, &guess_fn, e0, 3, domain, a.k, a.eps, a.max_iter)?;
    write_json(
        history,
        &History {
            format: "mra-history",
            version: REPORT_VERSION,
            iterations: &state.history,
        },
    )?;
    state
        .psi
        .save(psi_path)
        .with_context(|| format!("writing {}", psi_path.display()))?;
    for h in &state.history {
        println!(
            "iter {:>3}  E {:+.10}  dE {:+.3e}  residual {:.3e}  nodes {}",
            h.iteration, h.energy, h.delta_e, h.residual, h.psi_nodes
        );
    }
    println!("E = {:.10}", state.energy);
    if !state.converged {
        println!("not converged after {} iterations", state.iteration);
    }
    let body = SolveReport {
        potential: a.potential,
        domain: [bounds.0, bounds.1],
        k: a.k,
        eps: a.eps,
        e0,
        energy: state.energy,
        iterations: state.iteration,
        residual: state.residual,
        delta_e: state.delta_e,
        converged: state.converged,
        stagnated: state.stagnated,
    };
    write_report(report, "solve", state.converged, start, body)?;
    Ok(state.converged)
}

#[allow(clippy::too_many_arguments)]
fn run_sample(
    input: &Path,
    axis: Option<Axis>,
    plane: Option<Plane>,
    at: Option<Vec<f64>>,
    window: Option<Bounds>,
    resolution: usize,
    out: &Path,
) -> Result<bool> {
    if resolution == 0 {
        usage_error("--resolution must be at least 1");
    }
    let f = MraFunction::load(input).with_context(|| format!("reading {}", input.display()))?;
    let axes = match (axis, plane) {
        (Some(a), _) => vec![a as usize],
        (None, Some(Plane::Xy)) => vec![0, 1],
        (None, Some(Plane::Xz)) => vec![0, 2],
        (None, Some(Plane::Yz)) => vec![1, 2],
        (None, None) => usage_error("pass --axis or --plane"),
    };
    let d = f.domain();
    let window = window.map(|b| [b.0, b.1]).unwrap_or([d.lo, d.hi]);
    let spec = SampleSpec {
        axes,
        at: at.unwrap_or_else(|| vec![0.0; f.dim()]),
        window,
        resolution,
    };
    let rows = sample(&f, &spec)?;
    let mut w =
        BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    write_samples(&mut w, f.dim(), &rows)?;
    w.flush()?;
    println!("{} points written to {}", rows.len(), out.display());
    Ok(true)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::DemoGaussian {
            k,
            eps,
            domain,
            finest,
            op_eps,
            report,
            save,
        } => run_demo(k, eps, domain, finest, op_eps, &report, save.as_deref()),
        Command::FitKernel {
            kind,
            mu,
            eps,
            r_lo,
            r_hi,
            out,
            report,
        } => run_fit(kind, mu, eps, r_lo, r_hi, &out, &report),
        Command::Solve {
            potential,
            shift,
            omega,
            charge,
            smoothing,
            domain,
            k,
            eps,
            max_iter,
            e0,
            guess,
            guess_exponent,
            history,
            psi,
            report,
        } => {
            let args = SolveArgs {
                potential,
                shift,
                omega,
                charge,
                smoothing,
                domain,
                k,
                eps,
                max_iter,
                e0,
                guess,
                guess_exponent,
            };
            run_solve(args, &history, &psi, &report)
        }
        Command::Sample {
            input,
            axis,
            plane,
            at,
            window,
            resolution,
            out,
        } => run_sample(&input, axis, plane, at, window, resolution, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            usage_error("--threads must be at least 1");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
