use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use hmcf_core::config::{GridSpec, PolicySelection, RunConfig};
use hmcf_core::crossval::Problem;
use hmcf_core::levelset::Boundary;
use hmcf_core::{Branch, EssSup};

mod commands;
mod specs;

use commands::Failure;

/// Environment variable overriding the output directory.
pub const OUTPUT_DIR_ENV: &str = "HMCF_OUTPUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "hmcf", version, about = "Horizontal mean curvature flow in sub-Riemannian geometries")]
struct Cli {
    /// JSON run configuration; flags given on the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Output directory (the HMCF_OUTPUT_DIR environment variable wins over this).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// More log output; repeat for more detail.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Describe a frame: σ, connection terms and the Hörmander step at a point.
    Geom(GeomArgs),
    /// Horizontal jet, Laplacians and mean curvature of a level set at a point.
    Curvature(CurvatureArgs),
    /// Find characteristic points among samples of a surface.
    CharScan(CharScanArgs),
    /// Evolve a level-set function on a box grid.
    EvolveGrid(EvolveGridArgs),
    /// Evolve the profile of a rotational surface in the first Heisenberg group.
    EvolveRotational(EvolveRotationalArgs),
    /// Monte Carlo estimate of the value function at one point.
    ValueFunction(ValueFunctionArgs),
    /// Run profile, grid and Monte Carlo computations on one problem and compare them.
    Crossval(CrossvalArgs),
    /// Closed-form curvature of the model balls of the first Heisenberg group.
    NamedCurvature(NamedCurvatureArgs),
}

#[derive(Args, Debug)]
struct GeometryArg {
    /// Built-in name (euclidean(n), heisenberg(k), grusin, rototranslation),
    /// a JSON file with a custom frame, or inline JSON.
    #[arg(long, short = 'g')]
    geometry: Option<String>,
}

#[derive(Args, Debug)]
struct GeomArgs {
    #[command(flatten)]
    geometry: GeometryArg,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    point: Option<Vec<f64>>,
    /// Deepest bracket level tried by the Hörmander check.
    #[arg(long, default_value_t = 4)]
    max_step: usize,
}

#[derive(Args, Debug)]
struct CurvatureArgs {
    #[command(flatten)]
    geometry: GeometryArg,
    /// Expression in x1..xn, or euclidean_ball:R / koranyi_ball:R.
    #[arg(long, allow_hyphen_values = true)]
    field: Option<String>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    point: Option<Vec<f64>>,
    /// Use finite differences even where exact derivatives exist.
    #[arg(long)]
    fd: bool,
    #[arg(long)]
    char_tol: Option<f64>,
}

#[derive(Args, Debug)]
struct CharScanArgs {
    #[command(flatten)]
    geometry: GeometryArg,
    #[arg(long, allow_hyphen_values = true)]
    field: Option<String>,
    /// sphere:R:NPOLAR:NAZ, koranyi:R:NPOLAR:NAZ, cylinder:R:ZLO:ZHI:NZ:NAZ or torus:A:B:NTUBE:NAZ.
    #[arg(long, allow_hyphen_values = true)]
    sampler: Option<String>,
    #[arg(long)]
    fd: bool,
    #[arg(long)]
    char_tol: Option<f64>,
}

#[derive(Args, Debug)]
struct EvolveGridArgs {
    #[command(flatten)]
    geometry: GeometryArg,
    /// Initial level-set function.
    #[arg(long, allow_hyphen_values = true)]
    initial: Option<String>,
    /// LO1,LO2[,LO3]:HI1,HI2[,HI3]
    #[arg(long = "box", allow_hyphen_values = true)]
    grid_box: Option<String>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long = "T")]
    t_end: Option<f64>,
    /// regularized, upper or lower.
    #[arg(long)]
    branch: Option<Branch>,
    #[arg(long)]
    snap_every: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    cfl: Option<f64>,
    /// Ghost-layer extrapolation: linear or constant.
    #[arg(long)]
    boundary: Option<String>,
}

#[derive(Args, Debug)]
struct EvolveRotationalArgs {
    /// Initial profile as an expression in r.
    #[arg(long, allow_hyphen_values = true)]
    f0: Option<String>,
    #[arg(long)]
    rmax: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long = "T")]
    t_end: Option<f64>,
    #[arg(long)]
    snap_every: Option<f64>,
    #[arg(long)]
    dt_max: Option<f64>,
}

#[derive(Args, Debug)]
struct ValueFunctionArgs {
    #[command(flatten)]
    geometry: GeometryArg,
    /// Terminal cost.
    #[arg(long, allow_hyphen_values = true)]
    terminal: Option<String>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    #[arg(long)]
    t0: Option<f64>,
    #[arg(long = "T")]
    t_end: Option<f64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    p: Option<Vec<f64>>,
    /// feedback, fan or both.
    #[arg(long)]
    policy: Option<PolicySelection>,
    #[arg(long)]
    seed: Option<u64>,
    /// max or quantile:Q.
    #[arg(long)]
    ess_sup: Option<EssSup>,
    /// Also write every path endpoint as CSV.
    #[arg(long)]
    dump_paths: bool,
}

#[derive(Args, Debug)]
struct CrossvalArgs {
    /// radial-cap, paraboloid, vertical-plane or constant.
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long = "T")]
    t_end: Option<f64>,
    #[arg(long)]
    snap_every: Option<f64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    policy: Option<PolicySelection>,
    /// Skip the Monte Carlo probes.
    #[arg(long)]
    no_stochastic: bool,
}

#[derive(Args, Debug)]
struct NamedCurvatureArgs {
    /// euclidean_ball, koranyi_ball or heisenberg_ball.
    #[arg(long)]
    surface: Option<String>,
    #[arg(long = "R")]
    radius: Option<f64>,
    /// A point on the surface (the balls given by level sets).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    point: Option<Vec<f64>>,
    /// Geodesic parameter of the Heisenberg ball.
    #[arg(long)]
    c: Option<f64>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn apply_geometry(cfg: &mut RunConfig, arg: &GeometryArg) -> Result<(), Failure> {
    if let Some(g) = &arg.geometry {
        cfg.geometry = specs::parse_geometry(g).map_err(Failure::Config)?;
    }
    Ok(())
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::Config(anyhow::anyhow!("cannot read config {}: {e}", p.display())))?;
            RunConfig::from_json(&text).map_err(|e| Failure::Config(e.into()))
        }
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(cli.config.as_ref())?;
    set_opt(&mut cfg.output_dir, cli.out.clone());
    if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
        cfg.output_dir = Some(PathBuf::from(dir));
    }
    match cli.command {
        Command::Geom(a) => {
            apply_geometry(&mut cfg, &a.geometry)?;
            set_opt(&mut cfg.point, a.point);
            commands::geom(&cfg, a.max_step)
        }
        Command::Curvature(a) => {
            apply_geometry(&mut cfg, &a.geometry)?;
            set_opt(&mut cfg.field, a.field);
            set_opt(&mut cfg.point, a.point);
            cfg.fd |= a.fd;
            set_opt(&mut cfg.char_tol, a.char_tol);
            commands::curvature(&cfg)
        }
        Command::CharScan(a) => {
            apply_geometry(&mut cfg, &a.geometry)?;
            set_opt(&mut cfg.field, a.field);
            if let Some(s) = &a.sampler {
                cfg.scan = Some(specs::parse_sampler(s).map_err(Failure::Config)?);
            }
            cfg.fd |= a.fd;
            set_opt(&mut cfg.char_tol, a.char_tol);
            commands::char_scan(&cfg)
        }
        Command::EvolveGrid(a) => {
            apply_geometry(&mut cfg, &a.geometry)?;
            set_opt(&mut cfg.field, a.initial);
            if let Some(b) = &a.grid_box {
                let (lo, hi) = specs::parse_box(b).map_err(Failure::Config)?;
                let h = a.h.or(cfg.grid.as_ref().map(|g| g.h)).ok_or_else(|| {
                    Failure::Config(anyhow::anyhow!("--box needs a grid spacing --h"))
                })?;
                cfg.grid = Some(GridSpec { lo, hi, h });
            } else if let (Some(h), Some(g)) = (a.h, cfg.grid.as_mut()) {
                g.h = h;
            }
            set_opt(&mut cfg.t_end, a.t_end);
            set(&mut cfg.scheme.branch, a.branch);
            set_opt(&mut cfg.snap_every, a.snap_every);
            set_opt(&mut cfg.scheme.epsilon, a.epsilon);
            set(&mut cfg.scheme.cfl, a.cfl);
            if let Some(b) = &a.boundary {
                cfg.scheme.boundary = match b.as_str() {
                    "linear" => Boundary::Linear,
                    "constant" => Boundary::Constant,
                    other => return Err(Failure::Config(anyhow::anyhow!("unknown boundary rule `{other}`"))),
                };
            }
            commands::evolve_grid(&cfg)
        }
        Command::EvolveRotational(a) => {
            set(&mut cfg.profile.f0, a.f0);
            set(&mut cfg.profile.r_max, a.rmax);
            set(&mut cfg.profile.h, a.h);
            set_opt(&mut cfg.t_end, a.t_end);
            set_opt(&mut cfg.snap_every, a.snap_every);
            set_opt(&mut cfg.profile.dt_max, a.dt_max);
            commands::evolve_rotational(&cfg)
        }
        Command::ValueFunction(a) => {
            apply_geometry(&mut cfg, &a.geometry)?;
            set_opt(&mut cfg.field, a.terminal);
            set_opt(&mut cfg.point, a.x0);
            set(&mut cfg.t0, a.t0);
            set_opt(&mut cfg.t_end, a.t_end);
            set(&mut cfg.n_paths, a.paths);
            set(&mut cfg.dt, a.dt);
            set(&mut cfg.p, a.p);
            set(&mut cfg.policy, a.policy);
            set(&mut cfg.seed, a.seed);
            set(&mut cfg.ess_sup, a.ess_sup);
            cfg.dump_paths |= a.dump_paths;
            commands::value_function(&cfg)
        }
        Command::Crossval(a) => {
            let spec = &mut cfg.crossval;
            if let Some(p) = &a.problem {
                spec.problem = match p.as_str() {
                    "radial-cap" | "radial_cap" => Problem::RadialCap {
                        amplitude: 0.5,
                        width: 2.0,
                    },
                    "paraboloid" => Problem::Paraboloid,
                    "vertical-plane" | "vertical_plane" => Problem::VerticalPlane { a: 1.0, b: 2.0, c: 1.0 },
                    "constant" => Problem::Constant { value: 1.0 },
                    other => return Err(Failure::Config(anyhow::anyhow!("unknown problem `{other}`"))),
                };
            }
            set(&mut spec.h, a.h);
            set(&mut spec.t_end, a.t_end);
            set(&mut spec.snap_every, a.snap_every);
            set(&mut spec.n_paths, a.paths);
            set(&mut spec.dt, a.dt);
            set(&mut spec.seed, a.seed);
            set(&mut spec.policy, a.policy);
            if a.no_stochastic {
                spec.stochastic = false;
            }
            commands::crossval(&cfg)
        }
        Command::NamedCurvature(a) => {
            if let Some(s) = &a.surface {
                let radius = a.radius.or(cfg.surface.map(|s| s.radius())).unwrap_or(1.0);
                cfg.surface = Some(specs::parse_surface(s, radius).map_err(Failure::Config)?);
            } else if let (Some(r), Some(s)) = (a.radius, cfg.surface.as_mut()) {
                *s = specs::with_radius(*s, r);
            }
            match (a.point, a.c) {
                (Some(p), _) => cfg.point = Some(p),
                (None, Some(c)) => cfg.point = Some(vec![c]),
                (None, None) => {}
            }
            commands::named_curvature(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

