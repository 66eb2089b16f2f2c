use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use qrd::epsolver::{self, EpOpts, EpTarget, DEFAULT_BLIND_TOL};
use qrd::io::{self, fmt9, Format, RateRow, RegionRow};
use qrd::kidecomp::{self, KIOptions};
use qrd::rateregion::{self, RegionOpts};
use qrd::rdsolver::{self, SolverOpts};
use qrd::verify::{self, Suite};
use qrd::{Channel, Distortion, DistortionKind, Ensemble, QrdError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    #[error("{flag} {path}: {source}")]
    Io {
        flag: &'static str,
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Core {
        context: String,
        source: QrdError,
    },

    #[error("solver did not converge at D = {0} (--strict)")]
    NotConverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::NotConverged(_) => 2,
            _ => 1,
        }
    }
}

fn core(context: impl Into<String>) -> impl FnOnce(QrdError) -> CliError {
    let context = context.into();
    move |source| CliError::Core { context, source }
}

#[derive(Debug, Parser)]
#[command(name = "qrd", version, about = "Rate-distortion quantities of mixed-state quantum ensemble sources")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Block structure C, N, Q of an ensemble and the blind rate S(CQ).
    Ki(KiArgs),
    /// Entanglement-assisted rate-distortion curve.
    RdEa(RdEaArgs),
    /// Unassisted single-letter upper bound g_k(D).
    RdUa(RdUaArgs),
    /// Entanglement of purification of an encoder output.
    Ep(EpArgs),
    /// Compare g_1 at small D with the blind rate S(CQ).
    BlindLimit(BlindLimitArgs),
    /// Achievable qubit/entanglement rate pairs.
    Region(RegionArgs),
    /// Seeded property suites.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct EnsembleArg {
    /// Ensemble JSON file.
    #[arg(long, value_name = "FILE")]
    pub ensemble: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Distortion measure.
    #[arg(long, default_value = "fidelity", value_parser = parse_distortion)]
    pub distortion: DistortionKind,
    /// Output dimension of the encoder (defaults to dimA).
    #[arg(long, value_name = "N")]
    pub dim_b: Option<usize>,
    /// Seeded restarts per point.
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Iteration budget per restart.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Exit with status 2 if any point did not converge.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Write to this file instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct KiArgs {
    #[command(flatten)]
    pub input: EnsembleArg,
    /// Numerical tolerance, in [1e-12, 1e-6].
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the decomposition as JSON.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

/// `D = 0` is solved as the constraint `Δ ≤ 1e-9`.
#[derive(Debug, Args)]
pub struct RdEaArgs {
    #[command(flatten)]
    pub input: EnsembleArg,
    /// Distortion grid `a:b:n` (n points from a to b inclusive).
    #[arg(long, value_parser = parse_grid)]
    pub dgrid: Grid,
    #[command(flatten)]
    pub solve: SolveArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// `E_p(B : XX'R)`.
    Blind,
    /// `E_p(B : X)`.
    Visible,
}

#[derive(Debug, Args)]
pub struct RdUaArgs {
    #[command(flatten)]
    pub input: EnsembleArg,
    /// Distortion grid `a:b:n` (n points from a to b inclusive).
    #[arg(long, value_parser = parse_grid)]
    pub dgrid: Grid,
    /// Number of copies coded jointly (1 or 2).
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = Mode::Blind)]
    pub mode: Mode,
    /// Dimension of the purifying system.
    #[arg(long, value_name = "N")]
    pub env_dim: Option<usize>,
    #[command(flatten)]
    pub solve: SolveArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct EpArgs {
    #[command(flatten)]
    pub input: EnsembleArg,
    /// Encoder channel JSON; defaults to the identity on AJ.
    #[arg(long, value_name = "FILE")]
    pub channel: Option<PathBuf>,
    /// Reference side: `x` or `xxr`.
    #[arg(long, default_value = "xxr", value_parser = parse_target)]
    pub against: EpTarget,
    /// Dimension of the purifying system.
    #[arg(long, value_name = "N")]
    pub env_dim: Option<usize>,
    #[command(flatten)]
    pub solve: SolveArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct BlindLimitArgs {
    #[command(flatten)]
    pub input: EnsembleArg,
    /// Distortion level at which g_1 is evaluated.
    #[arg(long, default_value_t = 1e-3)]
    pub d_small: f64,
    /// Allowed gap between g_1 and S(CQ).
    #[arg(long, default_value_t = DEFAULT_BLIND_TOL)]
    pub tol: f64,
    #[command(flatten)]
    pub solve: SolveArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct RegionArgs {
    #[command(flatten)]
    pub input: EnsembleArg,
    /// Distortion grid `a:b:n` (n points from a to b inclusive).
    #[arg(long, value_parser = parse_grid)]
    pub dgrid: Grid,
    /// Random environment maps per point.
    #[arg(long, default_value_t = 50)]
    pub random_lambdas: usize,
    /// Skip the unassisted corner.
    #[arg(long)]
    pub no_unassisted: bool,
    #[command(flatten)]
    pub solve: SolveArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// entropy, channels, ki, rdea, ep, region or all.
    #[arg(long, default_value = "all", value_parser = parse_suite)]
    pub suite: Suite,
    /// Base seed; each property derives its own stream from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone)]
pub struct Grid(pub Vec<f64>);

fn parse_grid(s: &str) -> Result<Grid, String> {
    io::parse_grid(s).map(Grid).map_err(|e| e.to_string())
}

fn parse_distortion(s: &str) -> Result<DistortionKind, String> {
    s.parse().map_err(|e: QrdError| e.to_string())
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse().map_err(|e: QrdError| e.to_string())
}

fn parse_target(s: &str) -> Result<EpTarget, String> {
    s.parse().map_err(|e: QrdError| e.to_string())
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse().map_err(|e: QrdError| e.to_string())
}

/// Runs one subcommand; the returned status is 0, or 1 for a failed check.
pub fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Ki(a) => ki(a),
        Command::RdEa(a) => rd_ea(a),
        Command::RdUa(a) => rd_ua(a),
        Command::Ep(a) => ep(a),
        Command::BlindLimit(a) => blind_limit(a),
        Command::Region(a) => region(a),
        Command::Verify(a) => verify_cmd(a),
    }
}

fn read(flag: &'static str, path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        flag,
        path: path.to_path_buf(),
        source,
    })
}

fn load_ensemble(a: &EnsembleArg) -> Result<Ensemble, CliError> {
    let text = read("--ensemble", &a.ensemble)?;
    io::parse_ensemble(&text).map_err(core(format!("--ensemble {}", a.ensemble.display())))
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text).map_err(|source| CliError::Io {
            flag: "--out",
            path: path.clone(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn solver_opts(s: &SolveArgs, default_restarts: usize) -> Result<SolverOpts, CliError> {
    let mut o = SolverOpts {
        restarts: s.restarts.unwrap_or(default_restarts),
        seed: s.seed,
        ..SolverOpts::default()
    };
    if let Some(m) = s.max_iters {
        if m == 0 {
            return Err(CliError::Validation("--max-iters must be positive".into()));
        }
        o.max_iters = m;
    }
    if o.restarts == 0 {
        return Err(CliError::Validation("--restarts must be positive".into()));
    }
    Ok(o)
}

fn distortion(e: &Ensemble, s: &SolveArgs) -> Result<Distortion, CliError> {
    let db = s.dim_b.unwrap_or(e.dim_a());
    Distortion::for_ensemble(e, s.distortion, db).map_err(core("--dim-b"))
}

fn rates_out(rows: &[RateRow], s: &SolveArgs, o: &OutputArgs) -> Result<u8, CliError> {
    let text = match o.format {
        Format::Csv => io::rates_to_csv(rows, s.seed),
        Format::Json => io::rows_to_json(rows, s.seed) + "\n",
    };
    emit(&o.out, &text)?;
    strict_check(rows, s.strict)
}

fn strict_check(rows: &[RateRow], strict: bool) -> Result<u8, CliError> {
    if strict {
        if let Some(r) = rows.iter().find(|r| !r.converged) {
            return Err(CliError::NotConverged(fmt9(r.d)));
        }
    }
    Ok(0)
}

fn ki(a: KiArgs) -> Result<u8, CliError> {
    let e = load_ensemble(&a.input)?;
    let d = kidecomp::ki_decompose(&e, KIOptions { tol: a.tol, seed: a.seed }).map_err(core("ki"))?;
    let report = kidecomp::verify_ki(&d, &e);
    let rate = kidecomp::blind_rate_of(&d, &e.probs());
    let mut t = String::new();
    let _ = writeln!(t, "c\tdimQ\tdimN\tp(c|x) for x = 0..{}", e.len());
    for (c, b) in d.blocks.iter().enumerate() {
        let probs: Vec<String> = b.probs.iter().map(|&p| fmt9(p)).collect();
        let _ = writeln!(t, "{c}\t{}\t{}\t{}", b.dim_q, b.dim_n, probs.join(" "));
    }
    let _ = writeln!(t, "S(CQ) = {}", fmt9(rate));
    let _ = writeln!(
        t,
        "reconstruction_residual = {}  conditions = {}",
        fmt9(report.reconstruction_residual),
        if report.passed { "PASS" } else { "FAIL" }
    );
    print!("{t}");
    if let Some(path) = &a.out {
        emit(&Some(path.clone()), &(io::ki_to_json(&d, rate) + "\n"))?;
    }
    Ok(if report.passed { 0 } else { 1 })
}

fn rd_ea(a: RdEaArgs) -> Result<u8, CliError> {
    let e = load_ensemble(&a.input)?;
    let dist = distortion(&e, &a.solve)?;
    let opts = solver_opts(&a.solve, SolverOpts::default().restarts)?;
    let curve = rdsolver::rea_curve(&e, &a.dgrid.0, &dist, &opts).map_err(core("rd-ea"))?;
    let rows: Vec<RateRow> = curve.points.iter().map(|p| RateRow::from_point(p, false)).collect();
    rates_out(&rows, &a.solve, &a.output)
}

fn ep_opts(s: &SolveArgs, env_dim: Option<usize>) -> Result<EpOpts, CliError> {
    if env_dim == Some(0) {
        return Err(CliError::Validation("--env-dim must be positive".into()));
    }
    Ok(EpOpts {
        solver: solver_opts(s, epsolver::DEFAULT_EP_RESTARTS)?,
        env_dim,
    })
}

fn rd_ua(a: RdUaArgs) -> Result<u8, CliError> {
    if !(1..=2).contains(&a.k) {
        return Err(CliError::Validation(format!("--k {}: expected 1 or 2", a.k)));
    }
    let e = load_ensemble(&a.input)?;
    let dist = distortion(&e, &a.solve)?;
    let opts = ep_opts(&a.solve, a.env_dim)?;
    let rows = a
        .dgrid
        .0
        .iter()
        .map(|&d| {
            let p = match a.mode {
                Mode::Blind => epsolver::unassisted_point(&e, d, &dist, a.k, &opts),
                Mode::Visible => epsolver::visible_point(&e, d, &dist, a.k, &opts),
            };
            p.map(|p| RateRow::from_point(&p, true)).map_err(core("rd-ua"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    rates_out(&rows, &a.solve, &a.output)
}

fn ep(a: EpArgs) -> Result<u8, CliError> {
    let e = load_ensemble(&a.input)?;
    let n = match &a.channel {
        Some(path) => {
            let text = read("--channel", path)?;
            io::parse_channel(&text).map_err(core(format!("--channel {}", path.display())))?
        }
        None => Channel::identity(e.dim_a() * e.dim_j()),
    };
    let opts = ep_opts(&a.solve, a.env_dim)?;
    let est = epsolver::ep_of_channel(&e, &n, a.against, &opts).map_err(core("ep"))?;
    let d = match Distortion::for_ensemble(&e, a.solve.distortion, n.dim_out()) {
        Ok(dist) => rdsolver::output_cq(&e, &n)
            .and_then(|tau| dist.delta(&tau))
            .map_err(core("ep"))?,
        Err(_) => f64::NAN,
    };
    let row = RateRow {
        d,
        rate_bits: est.upper,
        converged: true,
        iters: est.restarts_used,
        feasibility_residual: n.feasibility_residual(),
        upper: Some(est.upper),
        lower: Some(est.lower),
        restart_spread: Some(est.restart_spread),
    };
    rates_out(&[row], &a.solve, &a.output)
}

fn blind_limit(a: BlindLimitArgs) -> Result<u8, CliError> {
    let e = load_ensemble(&a.input)?;
    let opts = ep_opts(&a.solve, None)?;
    let r = epsolver::blind_limit_check(&e, a.d_small, a.tol, &opts).map_err(core("blind-limit"))?;
    eprintln!(
        "{} blind_rate={} unassisted={} difference={} tol={}",
        if r.passed { "PASS" } else { "FAIL" },
        fmt9(r.blind_rate),
        fmt9(r.unassisted.rate),
        fmt9(r.difference),
        fmt9(r.tol)
    );
    let code = rates_out(&[RateRow::from_point(&r.unassisted, true)], &a.solve, &a.output)?;
    Ok(if r.passed { code } else { 1 })
}

fn region(a: RegionArgs) -> Result<u8, CliError> {
    let e = load_ensemble(&a.input)?;
    let dist = distortion(&e, &a.solve)?;
    let solver = solver_opts(&a.solve, SolverOpts::default().restarts)?;
    let opts = RegionOpts {
        random_lambdas: a.random_lambdas,
        seed: a.solve.seed,
        unassisted: (!a.no_unassisted).then(|| EpOpts {
            solver: SolverOpts {
                restarts: a.solve.restarts.unwrap_or(epsolver::DEFAULT_EP_RESTARTS),
                ..solver.clone()
            },
            env_dim: None,
        }),
        solver,
    };
    let mut rows = Vec::new();
    for &d in &a.dgrid.0 {
        let curve = rateregion::region_curve(&e, d, &dist, &opts).map_err(core("region"))?;
        rows.extend(curve.points.iter().map(RegionRow::from_point));
    }
    let text = match a.output.format {
        Format::Csv => io::regions_to_csv(&rows, a.solve.seed),
        Format::Json => io::rows_to_json(&rows, a.solve.seed) + "\n",
    };
    emit(&a.output.out, &text)?;
    Ok(0)
}

fn verify_cmd(a: VerifyArgs) -> Result<u8, CliError> {
    let report = verify::run_suite(a.suite, a.seed);
    if a.json {
        let text = serde_json::to_string_pretty(&report).expect("plain data serializes");
        println!("{text}");
    } else {
        print!("{report}");
    }
    Ok(if report.passed() { 0 } else { 1 })
}
