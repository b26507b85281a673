//! `menhir`: sample limiting and finite-height cells, evaluate densities, and run the
//! verification experiments.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use menhir::chain::{
    crescent_area, finite_kernel_density, ideal_kernel_density, ideal_step, in_support,
    tau_threshold, ChainState, FiniteKernelSampler,
};
use menhir::distributions::{derive_seed, RngStream};
use menhir::experiments::{Check, ExperimentConfig, ExperimentReport};
use menhir::export::{
    cell_csv, comment_header, records_csv, render_menhir_svg, to_json, write_atomic, CellExport,
    Format,
};
use menhir::geometry::build_menhir;
use menhir::oracle::certify_and_extend;
use menhir::palm::{
    delta_lambda_scaled, finite_quadruplet_density_scaled, initial_state, limit_quadruplet_density,
    sample_limit_quadruplet, FiniteQuadrupletSampler, Quadruplet,
};
use menhir::{Error, Result, Side};

/// Environment variable holding the worker thread count.
const THREADS_ENV: &str = "MENHIR_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "menhir",
    version,
    about = "Elongated Poisson-Voronoi cells and their limiting menhir shape"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Height of the typical vertex; a comma-separated grid for `verify`, `inf` for
    /// the limit.
    #[arg(long, global = true, value_delimiter = ',')]
    lambda: Vec<f64>,
    /// Number of samples; for `verify`, overrides every per-criterion sample size.
    #[arg(long, global = true)]
    replicas: Option<usize>,
    #[arg(long = "n-max", global = true, default_value_t = 200)]
    n_max: usize,
    #[arg(long = "h-min", global = true, default_value_t = 1e-12)]
    h_min: f64,
    #[arg(long, global = true, default_value_t = 0.4)]
    eps0: f64,
    #[arg(long, global = true, default_value_t = 0.02)]
    eps1: f64,
    #[arg(long, global = true, default_value_t = 0.02)]
    eps2: f64,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    format: Option<FormatArg>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FormatArg {
    Csv,
    Json,
    Svg,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
            FormatArg::Svg => Format::Svg,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a limiting menhir (apex and two truncated branches).
    SampleMenhir,
    /// Sample quadruplets `(R, theta_l, theta_c, theta_r)` from the limit law or, with
    /// `--lambda`, from the finite law.
    SampleQuadruplet,
    /// Build one certified Palm-Voronoi cell at height `--lambda`.
    SimulateCell,
    /// Run the chain of triangle statistics from a sampled initial state. At finite
    /// `--lambda` the trace stops at the first `B_n < lambda^{(eps0-1)/3}`.
    ChainTrace {
        #[arg(long, value_enum, default_value_t = SideArg::Right)]
        side: SideArg,
    },
    /// Evaluate the one-step kernels, and optionally the quadruplet densities.
    DensityEval {
        /// Source state `b,h`.
        #[arg(long, value_delimiter = ',', required = true)]
        from: Vec<f64>,
        /// Target state `b',h'`.
        #[arg(long, value_delimiter = ',', required = true)]
        to: Vec<f64>,
        /// Quadruplet `r,theta_l,theta_c,theta_r`.
        #[arg(long, value_delimiter = ',')]
        quadruplet: Option<Vec<f64>>,
    },
    /// Run acceptance experiments; exits nonzero if any check fails.
    Verify {
        #[arg(value_enum)]
        group: Group,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SideArg {
    Left,
    Right,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Group {
    Moments,
    Lln,
    Kernel,
    Coupling,
    Vertices,
    Shape,
    All,
}

impl Group {
    fn checks(self) -> Vec<Check> {
        match self {
            Group::Moments => vec![Check::Moments],
            Group::Lln => vec![Check::Lln],
            Group::Kernel => vec![Check::Kernel],
            Group::Coupling => vec![Check::Coupling],
            Group::Vertices => vec![Check::Vertices],
            Group::Shape => vec![Check::Shape],
            Group::All => Check::ALL.to_vec(),
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::SampleMenhir => "sample-menhir",
        Command::SampleQuadruplet => "sample-quadruplet",
        Command::SimulateCell => "simulate-cell",
        Command::ChainTrace { .. } => "chain-trace",
        Command::DensityEval { .. } => "density-eval",
        Command::Verify { .. } => "verify",
    }
}

/// Output of one command, with the provenance shared by every format.
struct Output {
    command: &'static str,
    config: ExperimentConfig,
    format: Format,
}

impl Output {
    fn config_json(&self) -> String {
        serde_json::to_string(&self.config).expect("config serializes")
    }

    fn csv_header(&self) -> String {
        comment_header(&[
            ("program", format!("menhir {}", env!("CARGO_PKG_VERSION"))),
            ("command", self.command.to_string()),
            ("config", self.config_json()),
        ])
    }

    fn wrap_json<T: Serialize>(&self, data: &T) -> Result<String> {
        to_json(&json!({
            "program": "menhir",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config": self.config,
            "data": data,
        }))
    }

    fn svg_comment(&self) -> String {
        format!(
            "menhir {} {} config: {}",
            env!("CARGO_PKG_VERSION"),
            self.command,
            self.config_json()
        )
    }

    fn emit(&self, text: &str) -> Result<()> {
        match &self.config.out {
            Some(p) => write_atomic(p, text.as_bytes()),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }

    fn unsupported(&self) -> Error {
        Error::InvalidParameter(format!(
            "{} does not support --format {}",
            self.command, self.format
        ))
    }
}

fn single_lambda(common: &Common) -> Result<Option<f64>> {
    match common.lambda.as_slice() {
        [] => Ok(None),
        [l] if *l > 0.0 => Ok(Some(*l)),
        other => Err(Error::InvalidParameter(format!(
            "expected one positive --lambda, got {other:?}"
        ))),
    }
}

fn config_of(common: &Common, format: Format, grid_from_lambda: bool) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig {
        seed: common.seed,
        replicas: common.replicas,
        n_max: common.n_max,
        h_min: common.h_min,
        eps0: common.eps0,
        eps1: common.eps1,
        eps2: common.eps2,
        out: common.out.clone(),
        format,
        ..ExperimentConfig::default()
    };
    if grid_from_lambda && !common.lambda.is_empty() {
        cfg.lambda_grid = common.lambda.clone();
    } else if !common.lambda.is_empty() {
        cfg.lambda_grid = common.lambda.clone();
        single_lambda(common)?;
    }
    cfg.validate()
        .or_else(|e| if grid_from_lambda { Err(e) } else { Ok(()) })?;
    Ok(cfg)
}

#[derive(Serialize)]
struct BranchRow {
    side: Side,
    n: usize,
    x: f64,
    y: f64,
    b: f64,
    h: f64,
}

#[derive(Serialize)]
struct TraceRow {
    n: u32,
    b: f64,
    h: f64,
    t: f64,
}

fn sample_menhir(out: &Output) -> Result<()> {
    let mut rng = RngStream::new(out.config.seed, 0);
    let m = build_menhir(&mut rng, out.config.n_max, out.config.h_min)?;
    let text = match out.format {
        Format::Svg => render_menhir_svg(&m, &out.svg_comment()),
        Format::Json => out.wrap_json(&m)?,
        Format::Csv => {
            let rows: Vec<BranchRow> = Side::BOTH
                .iter()
                .flat_map(|&side| {
                    m.branch(side)
                        .vertices
                        .iter()
                        .zip(&m.trace(side).states)
                        .enumerate()
                        .map(move |(n, (v, s))| BranchRow {
                            side,
                            n,
                            x: v[0],
                            y: v[1],
                            b: s.b,
                            h: s.h,
                        })
                })
                .collect();
            records_csv(&out.csv_header(), &rows)?
        }
    };
    out.emit(&text)
}

fn sample_quadruplets(out: &Output, lambda: Option<f64>) -> Result<()> {
    let n = out.config.replicas.unwrap_or(1);
    let mut sampler = match lambda {
        Some(l) if l.is_finite() => Some(FiniteQuadrupletSampler::new(l)?),
        _ => None,
    };
    let stream_seed = derive_seed(out.config.seed, 1);
    let qs: Vec<Quadruplet> = (0..n)
        .map(|i| {
            let mut rng = RngStream::new(stream_seed, i as u64);
            match sampler.as_mut() {
                Some(s) => s.sample(&mut rng),
                None => Ok(sample_limit_quadruplet(&mut rng)),
            }
        })
        .collect::<Result<_>>()?;
    let text = match out.format {
        Format::Json => out.wrap_json(&qs)?,
        Format::Csv => records_csv(&out.csv_header(), &qs)?,
        Format::Svg => return Err(out.unsupported()),
    };
    out.emit(&text)
}

fn simulate_cell(out: &Output, lambda: f64) -> Result<()> {
    let mut rng = RngStream::new(out.config.seed, 0);
    let q = FiniteQuadrupletSampler::new(lambda)?.sample(&mut rng)?;
    let oc = certify_and_extend(lambda, &q, &mut rng, None)?;
    let text = match out.format {
        Format::Json => out.wrap_json(&CellExport::new(&oc))?,
        Format::Csv => cell_csv(&out.csv_header(), &oc.cell)?,
        Format::Svg => return Err(out.unsupported()),
    };
    out.emit(&text)
}

fn chain_trace(out: &Output, lambda: f64, side: Side) -> Result<()> {
    let mut rng = RngStream::new(out.config.seed, 0);
    let q = if lambda.is_finite() {
        FiniteQuadrupletSampler::new(lambda)?.sample(&mut rng)?
    } else {
        sample_limit_quadruplet(&mut rng)
    };
    let mut sampler = FiniteKernelSampler::new(lambda)?;
    let stop_below = tau_threshold(lambda, out.config.eps0);
    let mut states = vec![initial_state(lambda, &q, side)];
    while states.len() <= out.config.n_max {
        let cur = *states.last().expect("nonempty");
        let next = if lambda.is_finite() {
            sampler.step(&cur, &mut rng)?
        } else {
            ideal_step(&cur, &mut rng).0
        };
        if next.terminal || next.h < out.config.h_min {
            break;
        }
        states.push(next);
        if next.b < stop_below {
            break;
        }
    }
    let text = match out.format {
        Format::Json => {
            out.wrap_json(&json!({ "quadruplet": q, "side": side, "states": states }))?
        }
        Format::Csv => {
            let rows: Vec<TraceRow> = states
                .iter()
                .map(|s| TraceRow {
                    n: s.n,
                    b: s.b,
                    h: s.h,
                    t: s.t(),
                })
                .collect();
            records_csv(&out.csv_header(), &rows)?
        }
        Format::Svg => return Err(out.unsupported()),
    };
    out.emit(&text)
}

#[derive(Serialize)]
struct DensityRow {
    lambda: f64,
    b: f64,
    h: f64,
    b_next: f64,
    h_next: f64,
    ideal_kernel: f64,
    finite_kernel: Option<f64>,
    in_finite_support: Option<bool>,
    crescent_area: Option<f64>,
    limit_quadruplet_density: Option<f64>,
    /// Normalized finite-`lambda` density.
    finite_quadruplet_density: Option<f64>,
}

fn density_eval(
    out: &Output,
    lambda: f64,
    from: &[f64],
    to: &[f64],
    quad: Option<&[f64]>,
) -> Result<()> {
    if from.len() != 2 || to.len() != 2 || quad.is_some_and(|q| q.len() != 4) {
        return Err(Error::InvalidParameter(
            "--from and --to take `b,h`; --quadruplet takes `r,theta_l,theta_c,theta_r`".into(),
        ));
    }
    let s = ChainState::new(from[0], from[1]);
    if !s.is_valid() {
        return Err(Error::InvalidParameter(format!(
            "invalid source state {from:?}"
        )));
    }
    let t = (to[0], to[1]);
    let finite = lambda.is_finite();
    let q = quad.map(|v| Quadruplet::new(v[0], v[1], v[2], v[3]));
    let row = DensityRow {
        lambda,
        b: s.b,
        h: s.h,
        b_next: t.0,
        h_next: t.1,
        ideal_kernel: ideal_kernel_density(&s, t),
        finite_kernel: finite.then(|| finite_kernel_density(lambda, &s, t)),
        in_finite_support: finite.then(|| in_support(lambda, &s, t)),
        crescent_area: if finite && in_support(lambda, &s, t) {
            Some(crescent_area(lambda, &s, t)?)
        } else {
            None
        },
        limit_quadruplet_density: q.as_ref().map(limit_quadruplet_density),
        finite_quadruplet_density: match q.as_ref().filter(|_| finite) {
            Some(q) => {
                Some(finite_quadruplet_density_scaled(lambda, q) / delta_lambda_scaled(lambda)?)
            }
            None => None,
        },
    };
    let text = match out.format {
        Format::Json => out.wrap_json(&row)?,
        Format::Csv => records_csv(&out.csv_header(), &[row])?,
        Format::Svg => return Err(out.unsupported()),
    };
    out.emit(&text)
}

fn verify(out: &Output, group: Group) -> Result<bool> {
    if out.format != Format::Json {
        return Err(out.unsupported());
    }
    out.config.validate()?;
    let mut checks = Vec::new();
    for c in group.checks() {
        for (stage_name, stage) in c.stages() {
            let start = Instant::now();
            let reports = stage(&out.config)?;
            let secs = start.elapsed().as_secs_f64();
            for r in &reports {
                let label = r
                    .criterion
                    .map_or("diagnostic".to_string(), |k| format!("criterion {k}"));
                eprintln!(
                    "{} {}: {} [{}/{stage_name}] ({secs:.1} s)",
                    if r.pass { "PASS" } else { "FAIL" },
                    label,
                    r.name,
                    c.as_str()
                );
            }
            checks.extend(reports);
        }
    }
    let report = ExperimentReport::new(&out.config, checks);
    out.emit(&to_json(&report)?)?;
    Ok(report.pass)
}

fn run(cli: Cli) -> Result<bool> {
    let common = &cli.common;
    let name = command_name(&cli.command);
    let default_format = match cli.command {
        Command::SampleMenhir => Format::Svg,
        Command::Verify { .. } => Format::Json,
        _ => Format::Csv,
    };
    let format = common.format.map(Format::from).unwrap_or(default_format);
    let is_verify = matches!(cli.command, Command::Verify { .. });
    let out = Output {
        command: name,
        config: config_of(common, format, is_verify)?,
        format,
    };
    match &cli.command {
        Command::SampleMenhir => sample_menhir(&out)?,
        Command::SampleQuadruplet => sample_quadruplets(&out, single_lambda(common)?)?,
        Command::SimulateCell => simulate_cell(&out, single_lambda(common)?.unwrap_or(1e4))?,
        Command::ChainTrace { side } => {
            let side = match side {
                SideArg::Left => Side::Left,
                SideArg::Right => Side::Right,
            };
            chain_trace(&out, single_lambda(common)?.unwrap_or(f64::INFINITY), side)?
        }
        Command::DensityEval {
            from,
            to,
            quadruplet,
        } => density_eval(
            &out,
            single_lambda(common)?.unwrap_or(f64::INFINITY),
            from,
            to,
            quadruplet.as_deref(),
        )?,
        Command::Verify { group } => return verify(&out, *group),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
