//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the binary exits non-zero if any criterion outside `KNOWN_RED` fails.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use hmcf_core::calculus::{self, samplers};
use hmcf_core::crossval::{self, CrossvalSpec, Problem};
use hmcf_core::geometry::{group_op, GroupPoint};
use hmcf_core::levelset::{self, Branch, GridField, SchemeParams};
use hmcf_core::sde::{self, ControlMatrix, ControlPolicy, EssSup, SimParams, Surrogate};
use hmcf_core::{Frame, ScalarField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria whose failure is explained in the project notes: the
/// Euler–Maruyama update is exactly left-invariant on the Heisenberg group,
/// so the translation gap is pure rounding and does not scale with `dt`.
const KNOWN_RED: &[usize] = &[8];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed < limit
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Random point on the sphere of radius `radius` with `x² + y² ≥ 0.01`.
fn sphere_point(rng: &mut ChaCha8Rng, radius: f64) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !(0.1..=1.0).contains(&n) {
            continue;
        }
        let p = v.map(|c| radius * c / n);
        if p[0].hypot(p[1]) >= 0.1 {
            return p;
        }
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let radius: f64 = 1.3;
    let h1 = Frame::heisenberg(1).unwrap();
    let src = format!("(x1^2+x2^2)^2+16*x3^2-{}", radius.powi(4));
    let exact = ScalarField::parse(&src, 3).unwrap();
    let fd = exact.clone().finite_difference();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_exact, mut worst_fd) = (0.0f64, 0.0f64);
    let mut count = 0;
    while count < 50 {
        // r² = R² sin θ, 4z = R² cos θ, keeping away from the poles
        let theta: f64 = rng.random_range(0.05..std::f64::consts::PI - 0.05);
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let r = (radius * radius * theta.sin()).sqrt();
        let x = [r * phi.cos(), r * phi.sin(), 0.25 * radius * radius * theta.cos()];
        let expected = 3.0 * r / (radius * radius);
        let k = calculus::horizontal_mean_curvature(&h1, &exact, &x).unwrap();
        let k_fd = calculus::horizontal_mean_curvature(&h1, &fd, &x).unwrap();
        worst_exact = worst_exact.max(rel_err(k, expected));
        worst_fd = worst_fd.max(rel_err(k_fd, expected));
        count += 1;
    }
    let elapsed = start.elapsed();
    outcome(
        worst_exact <= 1e-8 && worst_fd <= 1e-4 && within(elapsed, Duration::from_secs(1)),
        format!("max rel err analytic {worst_exact:.2e}, FD {worst_fd:.2e}, {elapsed:.2?}"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let radius: f64 = 0.8;
    let h1 = Frame::heisenberg(1).unwrap();
    let exact = ScalarField::parse(&format!("x1^2+x2^2+x3^2-{}", radius * radius), 3).unwrap();
    let fd = exact.clone().finite_difference();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_exact, mut worst_fd) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let x = sphere_point(&mut rng, radius);
        let r = x[0].hypot(x[1]);
        let expected = 2.0 * (4.0 + radius * radius) / (r * (4.0 + x[2] * x[2]).powf(1.5));
        let k = calculus::horizontal_mean_curvature(&h1, &exact, &x).unwrap();
        let k_fd = calculus::horizontal_mean_curvature(&h1, &fd, &x).unwrap();
        worst_exact = worst_exact.max(rel_err(k, expected));
        worst_fd = worst_fd.max(rel_err(k_fd, expected));
    }
    let samples = samplers::sphere(radius, 102, 100);
    let hits = calculus::char_scan(&h1, &exact, &samples, 1e-8).unwrap();
    let at_poles = hits.iter().all(|p| p[0] == 0.0 && p[1] == 0.0 && p[2].abs() == radius);
    let north = hits.iter().any(|p| p[2] == radius);
    let south = hits.iter().any(|p| p[2] == -radius);
    let elapsed = start.elapsed();
    outcome(
        worst_exact <= 1e-8 && worst_fd <= 1e-4 && hits.len() == 2 && at_poles && north && south,
        format!(
            "max rel err analytic {worst_exact:.2e}, FD {worst_fd:.2e}; {} scan hits on {} samples, all at the poles: {at_poles}, {elapsed:.2?}",
            hits.len(),
            samples.len()
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut brackets_exact = true;
    for k in [1usize, 2] {
        let frame = Frame::heisenberg(k).unwrap();
        let n = frame.ambient_dim();
        let m = frame.horizontal_rank();
        for _ in 0..1000 {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let a: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let nu = ControlMatrix::from_direction(&a).unwrap();
            worst = sde::drift_vector(&frame, &nu, &x).iter().fold(worst, |w, v| w.max(v.abs()));
            let coeffs: Vec<f64> = (0..n * (n + 3)).map(|_| rng.random_range(-2.0..2.0)).collect();
            let poly = (0..n)
                .map(|i| format!("({})*x{}+({})*x{}^2", coeffs[2 * i], i + 1, coeffs[2 * i + 1], i + 1))
                .collect::<Vec<_>>()
                .join("+");
            let u = ScalarField::parse(&format!("{poly}+({})*x1*x{n}", coeffs[2 * n]), n).unwrap();
            let jet = calculus::jet(&frame, &u, &x).unwrap();
            worst = jet.correction_rows().iter().flatten().fold(worst, |w, v| w.max(v.abs()));
            for i in 0..k {
                let b = frame.lie_bracket(i, k + i, &x).unwrap();
                let mut e = vec![0.0; n];
                e[n - 1] = 1.0;
                brackets_exact &= b == e;
            }
        }
    }
    outcome(
        worst <= 1e-12 && brackets_exact,
        format!("max |A|, |drift| = {worst:.2e}; [X_i, Y_i] = e_z exactly: {brackets_exact}"),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let h1 = Frame::heisenberg(1).unwrap();
    let u0 = ScalarField::parse("x1+2*x2-1", 3).unwrap();
    let grid = GridField::from_field(&[-0.5, -0.5, -0.25], &[0.5, 0.5, 0.25], 1.0 / 32.0, &u0).unwrap();
    let evo = levelset::evolve(&h1, &grid, 0.5, &SchemeParams::default(), None).unwrap();
    let change = evo.last().max_interior_diff(&grid);
    let elapsed = start.elapsed();
    outcome(
        change <= 1e-8 && within(elapsed, Duration::from_secs(60)),
        format!("max interior change {change:.2e} after {} steps, {elapsed:.2?}", evo.steps),
    )
}

fn criteria_5_and_6() -> (Outcome, Outcome) {
    let spec = CrossvalSpec::default();
    let report = crossval::crossval(&spec).unwrap();
    let t = report.timings;
    let interface_worst = report
        .rows_named("interface_grid_vs_profile")
        .map(|r| r.gap)
        .fold(0.0, f64::max);
    let interface_ok = report.rows_named("interface_grid_vs_profile").all(|r| r.pass);
    let snapshots = report.rows_named("interface_grid_vs_profile").count();

    let para = crossval::crossval(&CrossvalSpec {
        problem: Problem::Paraboloid,
        lo: vec![-0.5, -0.5, -0.25],
        hi: vec![0.5, 0.5, 0.5],
        t_end: 0.02,
        snap_every: 0.01,
        stochastic: false,
        ..CrossvalSpec::default()
    })
    .unwrap();
    let speed = para.rows_named("axis_speed_grid_vs_profile").next().unwrap().clone();
    let speed_ok = speed.pass && (speed.right - 1.0).abs() < 1e-9;
    let c5_time = t.grid + t.profile + para.timings.grid + para.timings.profile;
    let c5 = outcome(
        interface_ok && speed_ok && within(c5_time, Duration::from_secs(300)),
        format!(
            "max interface gap {interface_worst:.4} (2h = {:.4}) over {snapshots} snapshots; paraboloid axis speed {:.4}; {c5_time:.2?}",
            2.0 * spec.h,
            speed.left
        ),
    );

    let mc: Vec<_> = report.rows_named("value_mc_vs_grid").collect();
    let mc_ok = mc.len() == 5 && mc.iter().all(|r| r.pass);
    let worst_ratio = mc.iter().map(|r| r.gap / r.tolerance).fold(0.0, f64::max);
    let c6_time = t.grid + t.stochastic;
    let c6 = outcome(
        mc_ok && within(c6_time, Duration::from_secs(600)),
        format!(
            "{} probes, worst gap/tolerance {worst_ratio:.3}, gaps [{}]; {c6_time:.2?}",
            mc.len(),
            mc.iter().map(|r| format!("{:.4}", r.gap)).collect::<Vec<_>>().join(", ")
        ),
    );
    (c5, c6)
}

fn criterion_7() -> Outcome {
    let h1 = Frame::heisenberg(1).unwrap();
    let g1 = ScalarField::parse("(x1^2+x2^2)^2+16*x3^2-1", 3).unwrap();
    let shift = ScalarField::parse("0.1*(1+x1^2)", 3).unwrap();
    let g1c = g1.clone();
    let g2 = ScalarField::from_fn(3, move |x| g1c.eval(x) + shift.eval(x)).unwrap();
    let phi = |s: f64| s * s * s + s;
    let g1p = g1.clone();
    let g_phi = ScalarField::from_fn(3, move |x| phi(g1p.eval(x))).unwrap();

    let surrogate: Arc<dyn Surrogate> = Arc::new(g1.clone());
    let family = sde::default_family(&h1, surrogate);
    let params = SimParams {
        n_paths: 2000,
        dt: 1e-2,
        seed: 77,
    };
    let x0 = [0.4, -0.2, 0.1];
    let (t0, t_end) = (0.0, 0.3);
    let s1 = sde::family_samples(&h1, &x0, t0, t_end, &g1, &family, &params).unwrap();
    let s2 = sde::family_samples(&h1, &x0, t0, t_end, &g2, &family, &params).unwrap();
    let sp = sde::family_samples(&h1, &x0, t0, t_end, &g_phi, &family, &params).unwrap();

    let ps = [1.0, 2.0, 4.0, 8.0, 16.0];
    let mut monotone = true;
    let mut ordered = true;
    let mut bounded = true;
    for (a, b) in s1.iter().zip(&s2) {
        let lo = a.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut last = f64::NEG_INFINITY;
        for p in ps {
            let va = sde::lp_mean(a, p).unwrap().value;
            let vb = sde::lp_mean(b, p).unwrap().value;
            monotone &= va >= last;
            last = va;
            ordered &= va <= vb;
            bounded &= (lo..=hi).contains(&va);
        }
        for mode in [EssSup::Max, EssSup::Quantile(0.99)] {
            let v = mode.apply(a);
            bounded &= (lo..=hi).contains(&v);
            ordered &= v <= mode.apply(b);
        }
    }
    let v1 = sde::value_from_samples(&family, &s1, EssSup::Max).unwrap();
    let v2 = sde::value_from_samples(&family, &s2, EssSup::Max).unwrap();
    let vp = sde::value_from_samples(&family, &sp, EssSup::Max).unwrap();
    ordered &= v1.value <= v2.value;
    let geometric = phi(v1.value) == vp.value;
    let all_lo = s1.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let all_hi = s1.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    bounded &= (all_lo..=all_hi).contains(&v1.value);
    outcome(
        monotone && geometric && ordered && bounded,
        format!(
            "(a) monotone in p: {monotone}; (b) φ(V) = V_φ exactly: {geometric} ({:.17e} vs {:.17e}); (c) ordered: {ordered}; (d) bounded: {bounded}",
            phi(v1.value),
            vp.value
        ),
    )
}

fn translation_gap(dt: f64) -> f64 {
    let h1 = Frame::heisenberg(1).unwrap();
    let x = [0.3, -0.7, 0.2];
    let a = GroupPoint::h1(1.5, -2.0, 0.75);
    let ax = group_op(&a, &GroupPoint::h1(x[0], x[1], x[2])).unwrap();
    let policy = ControlPolicy::Constant(ControlMatrix::from_direction(&[0.6, 0.8]).unwrap());
    let params = SimParams {
        n_paths: 200,
        dt,
        seed: 8,
    };
    let from_x = sde::simulate(&h1, &x, 0.0, 1.0, &policy, &params, true).unwrap();
    let from_ax = sde::simulate(&h1, &ax.coords, 0.0, 1.0, &policy, &params, true).unwrap();
    let mut gap = 0.0f64;
    for (p, q) in from_x
        .trajectories
        .as_ref()
        .unwrap()
        .iter()
        .zip(from_ax.trajectories.as_ref().unwrap())
    {
        for (s, t) in p.iter().zip(q) {
            let moved = group_op(&a, &GroupPoint::new(s.clone()).unwrap()).unwrap();
            gap = moved.coords.iter().zip(t).fold(gap, |g, (u, v)| g.max((u - v).abs()));
        }
    }
    gap
}

fn criterion_8() -> Outcome {
    let dt = 1e-2;
    let coarse = translation_gap(dt);
    let fine = translation_gap(dt / 2.0);
    let bounded = coarse <= dt && fine <= dt / 2.0;
    let ratio = fine / coarse;
    let halves = (ratio - 0.5).abs() <= 0.3 * 0.5;
    outcome(
        bounded && halves,
        format!("gap(dt) = {coarse:.3e} <= dt: {}; gap(dt/2) = {fine:.3e}; ratio {ratio:.3} (want 0.5 ± 30%)", coarse <= dt),
    )
}

fn criterion_9() -> Outcome {
    let h1 = Frame::heisenberg(1).unwrap();
    let u0 = ScalarField::parse("x1^2+x2^2+x3^2-1", 3).unwrap();
    let grid = GridField::from_field(&[-1.5; 3], &[1.5; 3], 0.125, &u0).unwrap();
    let run = |branch| levelset::evolve(&h1, &grid, 0.1, &SchemeParams::default().with_branch(branch), Some(0.02)).unwrap();
    let reg = run(Branch::Regularized);
    let up = run(Branch::UpperEnvelope);
    let low = run(Branch::LowerEnvelope);
    let mut worst = f64::NEG_INFINITY;
    let mut strict_nodes = 0usize;
    for ((r, u), l) in reg.snapshots.iter().zip(&up.snapshots).zip(&low.snapshots) {
        for ((rv, uv), lv) in r.values.iter().zip(&u.values).zip(&l.values) {
            worst = worst.max(lv - rv).max(rv - uv);
            if lv < uv {
                strict_nodes += 1;
            }
        }
    }
    outcome(
        worst <= 1e-12 && reg.snapshots.len() == 6,
        format!(
            "{} snapshots, worst bracket violation {worst:.2e}, {strict_nodes} node-times with a strict gap",
            reg.snapshots.len()
        ),
    )
}

fn criterion_10() -> Outcome {
    let frames = [Frame::heisenberg(1).unwrap(), Frame::grusin(), Frame::rototranslation(), Frame::euclidean(2).unwrap()];
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for frame in &frames {
        let n = frame.ambient_dim();
        let m = frame.horizontal_rank();
        for _ in 0..100 {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut s = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..=i {
                    let v = rng.random_range(-1.0..1.0);
                    s[i][j] = v;
                    s[j][i] = v;
                }
            }
            let h = sde::control_hamiltonian(frame, &x, &d, &s).unwrap();
            // S̃ assembled directly from the frame
            let sigma = frame.sigma(&x);
            let mut st = vec![vec![0.0; m]; m];
            for i in 0..m {
                for j in 0..m {
                    let mut acc = 0.0;
                    for k in 0..n {
                        for l in 0..n {
                            acc += sigma[(i, k)] * s[k][l] * sigma[(j, l)];
                        }
                    }
                    let a = frame.nabla(i, j, &x);
                    let b = frame.nabla(j, i, &x);
                    acc += 0.5 * (0..n).map(|k| (a[k] + b[k]) * d[k]).sum::<f64>();
                    st[i][j] = acc;
                }
            }
            let mut brute = f64::NEG_INFINITY;
            for k in 0..10_000 {
                let theta = std::f64::consts::PI * k as f64 / 10_000.0;
                let a = [theta.cos(), theta.sin()];
                let nu = [[1.0 - a[0] * a[0], -a[0] * a[1]], [-a[0] * a[1], 1.0 - a[1] * a[1]]];
                let mut tr = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        // ν² = ν for these projections, but the product is formed anyway
                        let nu2 = nu[i][0] * nu[0][j] + nu[i][1] * nu[1][j];
                        tr += st[i][j] * nu2;
                    }
                }
                brute = brute.max(-tr);
            }
            worst = worst.max((h - brute).abs());
        }
    }
    outcome(worst <= 1e-6, format!("max |H − brute force| = {worst:.2e} over 4 frames × 100 cases"))
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, Outcome)> = vec![
        (1, criterion_1()),
        (2, criterion_2()),
        (3, criterion_3()),
        (4, criterion_4()),
    ];
    let (c5, c6) = criteria_5_and_6();
    results.push((5, c5));
    results.push((6, c6));
    results.push((7, criterion_7()));
    results.push((8, criterion_8()));
    results.push((9, criterion_9()));
    results.push((10, criterion_10()));

    let mut unexpected = false;
    for (id, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && KNOWN_RED.contains(id) {
            " [known]"
        } else {
            ""
        };
        println!("criterion {id:>2}: {tag}{note} - {}", o.detail);
        unexpected |= !o.pass && !KNOWN_RED.contains(id);
    }
    if unexpected {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
