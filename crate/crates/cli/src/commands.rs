use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::anyhow;
use hmcf_core::config::{PolicySelection, RunConfig};
use hmcf_core::rotational::{self, ProfileParams};
use hmcf_core::sde::{self, ControlPolicy, Surrogate};
use hmcf_core::{calculus, levelset, output, Expr, Frame, GridField, RotationalProfile, ScalarField, SimParams};
use serde::Serialize;
use serde_json::json;

use crate::specs;

const DEFAULT_OUTPUT_DIR: &str = "hmcf-output";

/// Exit code 2 for bad input, 1 for everything that goes wrong afterwards.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Numerical(anyhow::Error),
}

impl From<hmcf_core::Error> for Failure {
    fn from(e: hmcf_core::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.into())
        } else {
            Failure::Config(e.into())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Numerical(anyhow!(e).context("writing outputs"))
    }
}

type Outcome = Result<(), Failure>;

fn config_err(e: anyhow::Error) -> Failure {
    Failure::Config(e)
}

fn frame(cfg: &RunConfig) -> Result<Frame, Failure> {
    Ok(cfg.geometry.frame()?)
}

fn field(cfg: &RunConfig, frame: &Frame) -> Result<ScalarField, Failure> {
    let spec = cfg.require_field()?;
    let f = specs::parse_field(spec, frame).map_err(config_err)?;
    Ok(if cfg.fd { f.finite_difference() } else { f })
}

fn point(cfg: &RunConfig, n: usize) -> Result<Vec<f64>, Failure> {
    let p = cfg.require_point()?;
    if p.len() != n {
        return Err(Failure::Config(anyhow!("point has {} coordinates, expected {n}", p.len())));
    }
    Ok(p.to_vec())
}

fn output_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

// A closed pipe (`hmcf ... | head`) is not an error worth reporting.
fn print_json<T: Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("results serialize");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

/// Prints a result and, when an output directory was requested, stores it
/// there together with the resolved configuration.
fn emit<T: Serialize>(cfg: &RunConfig, name: &str, value: &T) -> Outcome {
    print_json(value);
    if let Some(dir) = &cfg.output_dir {
        output::write_provenance(dir, cfg)?;
        output::write_json(&dir.join(name), value)?;
    }
    Ok(())
}

pub fn geom(cfg: &RunConfig, max_step: usize) -> Outcome {
    let frame = frame(cfg)?;
    let n = frame.ambient_dim();
    let m = frame.horizontal_rank();
    let x = match &cfg.point {
        Some(_) => point(cfg, n)?,
        None => vec![0.0; n],
    };
    let sigma = frame.sigma(&x);
    let sigma_rows: Vec<Vec<f64>> = (0..m).map(|i| (0..n).map(|k| sigma[(i, k)]).collect()).collect();
    let nabla: Vec<Vec<Vec<f64>>> = (0..m).map(|i| (0..m).map(|j| frame.nabla(i, j, &x)).collect()).collect();
    let hormander = frame.hormander_step(&x, max_step)?;
    emit(
        cfg,
        "geom.json",
        &json!({
            "geometry": frame.label(),
            "ambient_dim": n,
            "horizontal_rank": m,
            "point": x,
            "sigma": sigma_rows,
            "nabla": nabla,
            "analytic_nabla": frame.has_analytic_nabla(),
            "hormander": hormander,
        }),
    )
}

pub fn curvature(cfg: &RunConfig) -> Outcome {
    let frame = frame(cfg)?;
    let u = field(cfg, &frame)?;
    let x = point(cfg, frame.ambient_dim())?;
    let jet = calculus::jet(&frame, &u, &x)?;
    let char_tol = cfg.char_tol.unwrap_or_else(|| u.default_char_tol());
    let characteristic = jet.is_characteristic(char_tol);
    let inf_laplacian = jet.inf_laplacian(char_tol).ok();
    let mean_curvature = jet.mean_curvature(char_tol).ok();
    emit(
        cfg,
        "curvature.json",
        &json!({
            "geometry": frame.label(),
            "field": u.label(),
            "point": x,
            "value": u.eval(&x),
            "analytic_derivatives": u.is_analytic(),
            "euclidean_gradient": jet.euclid_grad[..jet.n].to_vec(),
            "horizontal_gradient": jet.horiz_grad_vec(),
            "horizontal_gradient_norm": jet.horiz_grad_norm(),
            "correction": jet.correction_rows(),
            "horizontal_hessian": jet.horiz_hess_rows(),
            "laplacian": jet.laplacian(),
            "inf_laplacian": inf_laplacian,
            "mean_curvature": mean_curvature,
            "characteristic": characteristic,
            "char_tol": char_tol,
        }),
    )
}

pub fn char_scan(cfg: &RunConfig) -> Outcome {
    let frame = frame(cfg)?;
    let u = field(cfg, &frame)?;
    let scan = cfg
        .scan
        .as_ref()
        .ok_or_else(|| Failure::Config(anyhow!("a sampler is required")))?;
    let samples = scan.samples();
    let char_tol = cfg.char_tol.unwrap_or_else(|| u.default_char_tol());
    let hits = calculus::char_scan(&frame, &u, &samples, char_tol)?;
    emit(
        cfg,
        "char_scan.json",
        &json!({
            "geometry": frame.label(),
            "field": u.label(),
            "samples": samples.len(),
            "char_tol": char_tol,
            "count": hits.len(),
            "hits": hits,
        }),
    )
}

pub fn evolve_grid(cfg: &RunConfig) -> Outcome {
    let frame = frame(cfg)?;
    let u0 = field(cfg, &frame)?;
    let spec = cfg.require_grid()?;
    let t_end = cfg.require_t_end()?;
    let grid = GridField::from_field(&spec.lo, &spec.hi, spec.h, &u0)?;
    log::info!("evolving {} nodes to T = {t_end}", grid.len());
    let evo = levelset::evolve(&frame, &grid, t_end, &cfg.scheme, cfg.snap_every)?;

    let dir = output_dir(cfg);
    output::write_provenance(&dir, cfg)?;
    let mut snaps = Vec::with_capacity(evo.snapshots.len());
    for (k, snap) in evo.snapshots.iter().enumerate() {
        output::write_grid_csv(File::create(dir.join(format!("snapshot_{k:04}.csv")))?, snap)?;
        let level = levelset::zero_level_extract(snap);
        output::write_zero_level_csv(
            File::create(dir.join(format!("zero_level_{k:04}.csv")))?,
            snap.time,
            snap.dim,
            &level,
        )?;
        snaps.push(json!({
            "index": k,
            "t": snap.time,
            "zero_level_points": level.points.len(),
            "zero_level_empty": level.empty,
        }));
    }
    let meta = json!({
        "geometry": frame.label(),
        "initial": u0.label(),
        "nodes": grid.len(),
        "dims": &grid.dims[..grid.dim],
        "spacing": &grid.spacing[..grid.dim],
        "dt": evo.dt,
        "s_max": evo.s_max,
        "steps": evo.steps,
        "epsilon": evo.epsilon,
        "char_tol": evo.char_tol,
        "snapshots": snaps,
    });
    output::write_json(&dir.join("metadata.json"), &meta)?;
    print_json(&meta);
    Ok(())
}

pub fn evolve_rotational(cfg: &RunConfig) -> Outcome {
    let t_end = cfg.require_t_end()?;
    let p = &cfg.profile;
    let f0 = Expr::parse_with_aliases(&p.f0, &[("r", 0)])?;
    let initial = RotationalProfile::sample(&f0, p.r_max, p.h)?;
    let params = ProfileParams {
        dt_max: p.dt_max,
        snap_every: cfg.snap_every,
    };
    let snaps = rotational::evolve_profile(&initial, t_end, &params)?;
    let dir = output_dir(cfg);
    output::write_provenance(&dir, cfg)?;
    output::write_profile_csv(File::create(dir.join("profile.csv"))?, &snaps)?;
    let last = snaps.last().expect("at least the initial profile");
    let meta = json!({
        "f0": p.f0,
        "r_max": last.r_max(),
        "h": last.h,
        "nodes": last.f.len(),
        "times": snaps.iter().map(|s| s.time).collect::<Vec<_>>(),
        "axis_height": snaps.iter().map(|s| s.f[0]).collect::<Vec<_>>(),
    });
    output::write_json(&dir.join("metadata.json"), &meta)?;
    print_json(&meta);
    Ok(())
}

#[derive(Serialize)]
struct LpEstimate {
    p: f64,
    value: f64,
    stderr: f64,
}

#[derive(Serialize)]
struct PolicyReport {
    policy: String,
    ess_sup: f64,
    stderr: f64,
    mean: f64,
    vp: Vec<LpEstimate>,
}

#[derive(Serialize)]
struct BestEstimate {
    value: f64,
    stderr: f64,
    policy: String,
}

#[derive(Serialize)]
struct BestLp {
    p: f64,
    value: f64,
    stderr: f64,
    policy: String,
}

pub fn value_function(cfg: &RunConfig) -> Outcome {
    let frame = frame(cfg)?;
    let g = field(cfg, &frame)?;
    let x0 = point(cfg, frame.ambient_dim())?;
    let t_end = cfg.require_t_end()?;
    if cfg.p.iter().any(|p| !(*p >= 1.0)) {
        return Err(Failure::Config(anyhow!("every p must be >= 1, got {:?}", cfg.p)));
    }
    let surrogate: Arc<dyn Surrogate> = Arc::new(g.clone());
    let mut family = Vec::new();
    if matches!(cfg.policy, PolicySelection::Feedback | PolicySelection::Both) {
        family.push(ControlPolicy::Feedback(surrogate));
    }
    if matches!(cfg.policy, PolicySelection::Fan | PolicySelection::Both) {
        family.extend(sde::fan_policies(&frame));
    }
    let params = SimParams {
        n_paths: cfg.n_paths,
        dt: cfg.dt,
        seed: cfg.seed,
    };
    let dir = output_dir(cfg);
    output::write_provenance(&dir, cfg)?;

    let mut samples = Vec::with_capacity(family.len());
    let mut endpoints = Vec::new();
    for (k, policy) in family.iter().enumerate() {
        let ens = sde::simulate(&frame, &x0, cfg.t0, t_end, policy, &params, false)
            .map_err(|e| e.context(format!("policy {}", policy.label())))?;
        let values = sde::terminal_values(&ens, &g)?;
        if cfg.dump_paths {
            for (i, (x, v)) in ens.states.iter().zip(&values).enumerate() {
                let mut row = vec![k as f64, i as f64];
                row.extend_from_slice(x);
                row.push(*v);
                endpoints.push(row);
            }
        }
        samples.push(values);
    }
    if cfg.dump_paths {
        let mut header = vec!["policy".to_string(), "path".to_string()];
        header.extend((1..=frame.ambient_dim()).map(|k| format!("x{k}")));
        header.push("g".into());
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        output::write_csv(File::create(dir.join("endpoints.csv"))?, &header, &endpoints)?;
    }

    let best = sde::value_from_samples(&family, &samples, cfg.ess_sup)?;
    let mut policies = Vec::with_capacity(family.len());
    for (policy, values) in family.iter().zip(&samples) {
        let vp = cfg
            .p
            .iter()
            .map(|&p| {
                sde::lp_mean(values, p).map(|e| LpEstimate {
                    p,
                    value: e.value,
                    stderr: e.stderr,
                })
            })
            .collect::<hmcf_core::Result<Vec<_>>>()?;
        policies.push(PolicyReport {
            policy: policy.label(),
            ess_sup: cfg.ess_sup.apply(values),
            stderr: best.per_policy[policies.len()].stderr,
            mean: values.iter().sum::<f64>() / values.len() as f64,
            vp,
        });
    }
    let vp_best: Vec<BestLp> = cfg
        .p
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            let (k, r) = policies
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.vp[j].value.total_cmp(&b.1.vp[j].value))
                .expect("non-empty family");
            BestLp {
                p,
                value: r.vp[j].value,
                stderr: r.vp[j].stderr,
                policy: family[k].label(),
            }
        })
        .collect();
    let report = json!({
        "geometry": frame.label(),
        "terminal": g.label(),
        "x0": x0,
        "t0": cfg.t0,
        "T": t_end,
        "paths": cfg.n_paths,
        "dt": cfg.dt,
        "seed": cfg.seed,
        "ess_sup": cfg.ess_sup,
        "value": BestEstimate {
            value: best.value,
            stderr: best.stderr,
            policy: family[best.best_policy].label(),
        },
        "vp": vp_best,
        "policies": policies,
    });
    output::write_json(&dir.join("value.json"), &report)?;
    print_json(&report);
    Ok(())
}

pub fn crossval(cfg: &RunConfig) -> Outcome {
    let report = hmcf_core::crossval(&cfg.crossval)?;
    let dir = output_dir(cfg);
    output::write_provenance(&dir, cfg)?;
    output::write_json(&dir.join("report.json"), &report)?;
    report.write_csv(File::create(dir.join("report.csv"))?)?;
    print_json(&report);
    if report.passed {
        Ok(())
    } else {
        let failed = report.rows.iter().filter(|r| !r.pass).count();
        Err(Failure::Numerical(anyhow!("{failed} comparisons exceeded their tolerance")))
    }
}

pub fn named_curvature(cfg: &RunConfig) -> Outcome {
    let surface = cfg
        .surface
        .ok_or_else(|| Failure::Config(anyhow!("a surface is required")))?;
    let location = cfg
        .point
        .as_deref()
        .ok_or_else(|| Failure::Config(anyhow!("a point (or --c for the Heisenberg ball) is required")))?;
    let result = rotational::named_curvature(surface, location)?;
    emit(
        cfg,
        "named_curvature.json",
        &json!({
            "surface": surface,
            "point": result.point,
            "curvature": result.curvature,
            "characteristic_points": surface.characteristic_points(),
        }),
    )
}
