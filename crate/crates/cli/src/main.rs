use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use hjbd_core::first_order_hj::envelope;
use hjbd_core::gibbs_sampler::{posterior_mean_mcmc, SamplerConfig};
use hjbd_core::tv_imaging::{
    add_gaussian_noise, decode_pgm, encode_pgm, plateau_fraction, psnr, read_pgm, synthetic_phantom, write_pgm, Image,
    NoiseSpec, RofSolver, DEFAULT_PLATEAU_TOL,
};
use hjbd_core::verification::{self, Suite};
use hjbd_core::viscous_hj::{
    posterior_summary, s_eps_closed_quadratic, u_pm_closed_l1, EstimatorParams, QuadratureConfig,
};
use hjbd_core::{Error, Prior};

#[derive(Parser, Debug)]
#[command(name = "hjbd", version, about = "MAP and posterior-mean denoising via Hamilton-Jacobi equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Total-variation MAP denoising (ROF model) of a PGM image.
    DenoiseMap {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        lambda: f64,
        /// Iteration cap of the primal-dual solver.
        #[arg(long, default_value_t = RofSolver::default().max_iter)]
        max_iter: usize,
        /// Optional JSON report path.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Total-variation posterior-mean denoising by Gibbs sampling.
    DenoisePm(DenoisePmArgs),
    /// Posterior mean, MSE, S_eps and w_eps at one point.
    PmEstimate {
        /// Prior as JSON, e.g. '{"kind":"WeightedL1","lambda":[2]}'.
        #[arg(long)]
        prior: String,
        /// Comma-separated coordinates of the observation.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        x: Vec<f64>,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        eps: f64,
    },
    /// Proximal point, Moreau envelope value and gradient at one point.
    MapEstimate {
        #[arg(long)]
        prior: String,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        x: Vec<f64>,
        #[arg(long)]
        t: f64,
    },
    /// Adds seeded Gaussian noise to a PGM image. INPUT may be
    /// `phantom:WxH` for the built-in synthetic test image.
    Noise {
        input: String,
        output: PathBuf,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// PSNR of IMAGE against REFERENCE and plateau fractions of both.
    Metrics {
        image: PathBuf,
        reference: PathBuf,
        /// Edge-difference tolerance for plateau fractions.
        #[arg(long, default_value_t = DEFAULT_PLATEAU_TOL)]
        plateau_tol: f64,
    },
    /// Runs numeric checks and writes a JSON report.
    Verify {
        /// Suite to run; repeat for several. Defaults to core, bounds and pde.
        #[arg(long = "suite")]
        suites: Vec<Suite>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prints the Tikhonov and soft-thresholding closed forms as a table.
    Example {
        #[arg(long, default_value_t = 1.25)]
        t: f64,
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        /// Tikhonov weight.
        #[arg(long, default_value_t = 1.0)]
        m: f64,
        /// l1 weight.
        #[arg(long, default_value_t = 2.0)]
        lambda: f64,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [-5.0, -2.5, -1.0, 0.0, 1.0, 2.5, 5.0])]
        x: Vec<f64>,
    },
}

#[derive(Args, Debug)]
struct DenoisePmArgs {
    input: PathBuf,
    output: PathBuf,
    #[arg(long)]
    t: f64,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value_t = 20_000)]
    sweeps: usize,
    #[arg(long, default_value_t = 2_000)]
    burn_in: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    chains: usize,
    #[arg(long, default_value_t = 1)]
    thin: usize,
    /// Clean image for the PSNR entry of the report.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

/// Failure classes, mapped to exit codes 1 and 2.
#[derive(Debug)]
enum Failure {
    Invalid(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Numerical(_) => 2,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NotConverged { .. } | Error::RefinementFailure { .. } | Error::EndpointArgmax { .. } => {
                Failure::Numerical(e.to_string())
            }
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match configure_threads().and_then(|_| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Invalid(m) => eprintln!("error: {m}"),
                Failure::Numerical(m) => eprintln!("numerical failure: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("HJBD_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Invalid(format!("HJBD_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Invalid(format!("cannot size the thread pool: {e}")))
}

fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::DenoiseMap { input, output, t, lambda, max_iter, report } => {
            denoise_map(&input, &output, t, lambda, max_iter, report.as_deref())
        }
        Command::DenoisePm(args) => denoise_pm(&args),
        Command::PmEstimate { prior, x, t, eps } => pm_estimate(&prior, &x, t, eps),
        Command::MapEstimate { prior, x, t } => map_estimate(&prior, &x, t),
        Command::Noise { input, output, sigma, seed } => noise(&input, &output, sigma, seed),
        Command::Metrics { image, reference, plateau_tol } => metrics(&image, &reference, plateau_tol),
        Command::Verify { suites, seed, out } => verify(&suites, seed, out.as_deref()),
        Command::Example { t, eps, m, lambda, x } => example(t, eps, m, lambda, &x),
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Invalid(format!("{}: {e}", path.display()))
}

fn read_image(path: &Path) -> CliResult<Image> {
    read_pgm(path).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, v: &Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(v).expect("JSON values serialise");
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json(v: &Value) {
    emit(&(serde_json::to_string_pretty(v).expect("JSON values serialise") + "\n"));
}

/// JSON has no infinity; an exact match has infinite PSNR.
fn psnr_json(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!("inf")
    }
}

fn finite(name: &str, v: f64) -> CliResult<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Failure::Invalid(format!("--{name} must be finite, got {v}")))
    }
}

fn parse_prior(s: &str) -> CliResult<Prior> {
    Prior::from_json(s).map_err(|e| Failure::Invalid(format!("--prior: {e}")))
}

fn denoise_map(
    input: &Path,
    output: &Path,
    t: f64,
    lambda: f64,
    max_iter: usize,
    report: Option<&Path>,
) -> CliResult<()> {
    let (t, lambda) = (finite("t", t)?, finite("lambda", lambda)?);
    if max_iter == 0 {
        return Err(Failure::Invalid("--max-iter must be positive".into()));
    }
    let x = read_image(input)?;
    let out = RofSolver { max_iter, ..RofSolver::default() }.solve(&x, t, lambda)?;
    write_pgm(&out.image, output).map_err(|e| io_err(output, e))?;
    if let Some(path) = report {
        write_json(
            path,
            &json!({
                "t": t,
                "lambda": lambda,
                "iterations": out.iterations,
                "rel_change": out.rel_change,
                "converged": out.converged,
                "plateau_fraction": plateau_fraction(&out.image, DEFAULT_PLATEAU_TOL),
            }),
        )?;
    }
    if !out.converged {
        return Err(Failure::Numerical(format!(
            "ROF solver stopped after {} iterations (relative change {:e}); output written",
            out.iterations, out.rel_change
        )));
    }
    Ok(())
}

fn denoise_pm(a: &DenoisePmArgs) -> CliResult<()> {
    let cfg = SamplerConfig { sweeps: a.sweeps, burn_in: a.burn_in, seed: a.seed, chains: a.chains, thin: a.thin };
    cfg.validate()?;
    let (t, eps, lambda) = (finite("t", a.t)?, finite("eps", a.eps)?, finite("lambda", a.lambda)?);
    let x = read_image(&a.input)?;
    let reference = a.reference.as_deref().map(read_image).transpose()?;
    let r = posterior_mean_mcmc(&x, t, eps, lambda, &cfg)?;
    let bytes = encode_pgm(&r.mean_image);
    std::fs::write(&a.output, &bytes).map_err(|e| io_err(&a.output, e))?;
    // metrics run on the written file, so measure the quantised image
    let written = decode_pgm(&bytes)?;
    if let Some(path) = &a.report {
        let mut rep = json!({
            "t": t,
            "eps": eps,
            "lambda": lambda,
            "sampler": { "sweeps": cfg.sweeps, "burn_in": cfg.burn_in, "seed": cfg.seed, "chains": cfg.chains, "thin": cfg.thin },
            "rhat_max": r.rhat_max,
            "converged": r.converged,
            "accepted_sweeps": r.accepted_sweeps,
            "max_stderr": r.stderr_image.pixels().iter().copied().fold(0.0, f64::max),
            "plateau_fraction": plateau_fraction(&written, DEFAULT_PLATEAU_TOL),
            "psnr_vs_input": psnr_json(psnr(&written, &x)?),
        });
        if let Some(clean) = &reference {
            rep["psnr_vs_reference"] = psnr_json(psnr(&written, clean)?);
        }
        write_json(path, &rep)?;
    }
    if !r.converged {
        return Err(Failure::Numerical(format!("chains did not mix (R-hat {:.4} > 1.1); output written", r.rhat_max)));
    }
    Ok(())
}

fn pm_estimate(prior: &str, x: &[f64], t: f64, eps: f64) -> CliResult<()> {
    let prior = parse_prior(prior)?;
    let params = EstimatorParams::new(t, eps)?;
    if params.is_map() {
        return Err(Failure::Invalid("--eps must be positive; use map-estimate for eps = 0".into()));
    }
    let s = posterior_summary(&prior, x, params, &QuadratureConfig::default())?;
    print_json(&json!({
        "u_pm": s.u_pm,
        "mse": s.mse,
        "s_eps": s.s_eps,
        "w_eps": s.w_eps,
        "ln_w_eps": s.ln_w_eps,
    }));
    Ok(())
}

fn map_estimate(prior: &str, x: &[f64], t: f64) -> CliResult<()> {
    let prior = parse_prior(prior)?;
    prior.check_dim(x.len())?;
    let e = envelope(&prior, x, t)?;
    print_json(&json!({ "u_map": e.minimizer, "s0": e.value, "gradient": e.gradient }));
    Ok(())
}

fn parse_phantom(spec: &str) -> CliResult<Image> {
    let bad = || Failure::Invalid(format!("expected phantom:WxH, got {spec:?}"));
    let dims = spec.strip_prefix("phantom:").ok_or_else(bad)?;
    let (w, h) = dims.split_once('x').ok_or_else(bad)?;
    let (w, h): (usize, usize) = (w.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?);
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok(synthetic_phantom(w, h))
}

fn noise(input: &str, output: &Path, sigma: f64, seed: u64) -> CliResult<()> {
    let img = if input.starts_with("phantom:") { parse_phantom(input)? } else { read_image(Path::new(input))? };
    let noisy = add_gaussian_noise(&img, NoiseSpec { sigma, seed })?;
    write_pgm(&noisy, output).map_err(|e| io_err(output, e))
}

fn metrics(image: &Path, reference: &Path, tol: f64) -> CliResult<()> {
    if tol.is_nan() || tol < 0.0 {
        return Err(Failure::Invalid(format!("--plateau-tol must be nonnegative, got {tol}")));
    }
    let (a, b) = (read_image(image)?, read_image(reference)?);
    print_json(&json!({
        "psnr": psnr_json(psnr(&a, &b)?),
        "plateau_fraction": plateau_fraction(&a, tol),
        "reference_plateau_fraction": plateau_fraction(&b, tol),
    }));
    Ok(())
}

fn verify(suites: &[Suite], seed: u64, out: Option<&Path>) -> CliResult<()> {
    let report = verification::run(suites, seed);
    if let Some(path) = out {
        std::fs::write(path, report.to_json() + "\n").map_err(|e| io_err(path, e))?;
    }
    let mut text = String::new();
    for c in &report.checks {
        let _ = writeln!(text, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.details);
    }
    let failed = report.failures().count();
    let _ = writeln!(text, "{} of {} checks passed", report.checks.len() - failed, report.checks.len());
    emit(&text);
    if failed > 0 {
        return Err(Failure::Numerical(format!("{failed} check(s) failed")));
    }
    Ok(())
}

fn example(t: f64, eps: f64, m: f64, lambda: f64, xs: &[f64]) -> CliResult<()> {
    let params = EstimatorParams::new(t, eps)?;
    if params.is_map() {
        return Err(Failure::Invalid("--eps must be positive".into()));
    }
    let quad = Prior::quadratic(m)?;
    let l1 = Prior::weighted_l1(vec![lambda])?;
    let mut out = String::new();
    let _ = writeln!(out, "t = {t}, eps = {eps}");
    let _ = writeln!(out);
    let _ = writeln!(out, "Tikhonov, J(y) = {m}/2 y^2");
    let _ = writeln!(out, "{:>10} {:>14} {:>14} {:>14} {:>14}", "x", "u_MAP", "u_PM", "S_eps", "MSE");
    for &x in xs {
        let s = s_eps_closed_quadratic(m, &[finite("x", x)?], params)?;
        let map = quad.prox(&[x], t)?[0];
        let _ = writeln!(out, "{x:>10.4} {map:>14.6} {:>14.6} {:>14.6} {:>14.6}", s.u_pm[0], s.s_eps, s.mse);
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "soft thresholding, J(y) = {lambda} |y|");
    let _ = writeln!(out, "{:>10} {:>14} {:>14} {:>14} {:>14}", "x", "u_MAP", "u_PM", "S_eps", "MSE");
    for &x in xs {
        let s = u_pm_closed_l1(&[lambda], &[x], params)?;
        let map = l1.prox(&[x], t)?[0];
        let _ = writeln!(out, "{x:>10.4} {map:>14.6} {:>14.6} {:>14.6} {:>14.6}", s.u_pm[0], s.s_eps, s.mse);
    }
    emit(&out);
    Ok(())
}
