//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! with the measured values. Heavy pipeline results are computed once and
//! shared across criteria.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use esfts::averaging::{averaged_field, averaged_matrix_at, es_fields_at};
use esfts::dlmi::{assemble_lmi, recheck_certificate, scan_gain, solve_feasibility};
use esfts::frequency::frequency_bound;
use esfts::geometry::{min_ellipsoid_distance, shrunk_gamma};
use esfts::sim::{convergence_study, monte_carlo_verify, simulate_open_loop};
use esfts::{
    BuiltinExample, ControllerParams, FrequencyBound, FtsProblem, SynthesisResult, TimeGrid,
};

struct Pipeline {
    problem: FtsProblem,
    grid: TimeGrid,
    synth: SynthesisResult,
    bound: FrequencyBound,
    synth_time: Duration,
}

fn build_pipeline(ex: BuiltinExample) -> Result<Pipeline, String> {
    let grid = ex.default_grid();
    let problem = ex
        .problem()
        .validated(&grid)
        .map_err(|e| format!("{}: validation: {e}", ex.name()))?;
    let spec = shrunk_gamma(&problem, &grid).map_err(|e| format!("{}: {e}", ex.name()))?;
    let t = Instant::now();
    let synth = scan_gain(&problem, &spec, &grid, 0.01, 10.0)
        .map_err(|e| format!("{}: synthesis: {e}", ex.name()))?;
    let synth_time = t.elapsed();
    let bound = frequency_bound(&problem, synth.ka, synth.k, synth.alpha, &grid)
        .map_err(|e| format!("{}: bound: {e}", ex.name()))?;
    Ok(Pipeline {
        problem,
        grid,
        synth,
        bound,
        synth_time,
    })
}

fn pipeline(ex: BuiltinExample) -> &'static Result<Pipeline, String> {
    static EX1: OnceLock<Result<Pipeline, String>> = OnceLock::new();
    static EX2: OnceLock<Result<Pipeline, String>> = OnceLock::new();
    static EX3: OnceLock<Result<Pipeline, String>> = OnceLock::new();
    match ex {
        BuiltinExample::Ex1 => EX1.get_or_init(|| build_pipeline(ex)),
        BuiltinExample::Ex2 => EX2.get_or_init(|| build_pipeline(ex)),
        BuiltinExample::Ex3 => EX3.get_or_init(|| build_pipeline(ex)),
    }
}

fn report(criterion: u32, name: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("criterion {criterion:02} ({name}): {verdict} - {detail}");
    assert!(ok, "criterion {criterion:02} ({name}): FAIL - {detail}");
}

/// Scan-value acceptance with the one-step rule: exact hit, or one scan step
/// away with the reference value itself feasible.
fn scan_matches_reference(
    ex: BuiltinExample,
    scanned: f64,
    reference: f64,
    step: f64,
) -> (bool, String) {
    if (scanned - reference).abs() < 1e-9 {
        return (true, format!("scanned gain product {scanned} matches {reference}"));
    }
    if (scanned - reference).abs() <= step + 1e-9 {
        let pl = pipeline(ex).as_ref().unwrap();
        let spec = shrunk_gamma(&pl.problem, &pl.grid).unwrap();
        let sdp = assemble_lmi(&pl.problem, &spec, reference, &pl.grid).unwrap();
        let out = solve_feasibility(&sdp).unwrap();
        if out.feasible {
            return (
                true,
                format!(
                    "scanned {scanned} is one step from {reference}, and {reference} is feasible (margin {:.3e})",
                    out.margin
                ),
            );
        }
        return (
            false,
            format!(
                "scanned {scanned} is one step from {reference}, but {reference} is infeasible (margin {:.3e})",
                out.margin
            ),
        );
    }
    (
        false,
        format!("scanned gain product {scanned}, expected {reference} (one-step rule)"),
    )
}

#[test]
fn criterion_01_ex1_synthesis() {
    match pipeline(BuiltinExample::Ex1) {
        Err(e) => report(1, "ex1 gain product", false, e),
        Ok(pl) => {
            let within_time = pl.synth_time < Duration::from_secs(60);
            let exact = (pl.synth.ka - 0.04).abs() < 1e-9;
            report(
                1,
                "ex1 gain product",
                exact && within_time,
                &format!(
                    "scan returned {} (expected 0.04 exactly) in {:.1?}; margin {:.3e}",
                    pl.synth.ka, pl.synth_time, pl.synth.margin
                ),
            );
        }
    }
}

#[test]
fn criterion_02_ex2_synthesis() {
    match pipeline(BuiltinExample::Ex2) {
        Err(e) => report(2, "ex2 gain product", false, e),
        Ok(pl) => {
            let (ok, detail) = scan_matches_reference(BuiltinExample::Ex2, pl.synth.ka, 0.11, 0.01);
            report(2, "ex2 gain product", ok, &detail);
        }
    }
}

#[test]
fn criterion_03_ex3_synthesis() {
    match pipeline(BuiltinExample::Ex3) {
        Err(e) => report(3, "ex3 gain product", false, e),
        Ok(pl) => {
            let (ok, detail) = scan_matches_reference(BuiltinExample::Ex3, pl.synth.ka, 0.14, 0.01);
            report(3, "ex3 gain product", ok, &detail);
        }
    }
}

#[test]
fn criterion_04_frequency_bounds() {
    let bands = [
        (BuiltinExample::Ex1, (700.0, 800.0), (690.0, 790.0)),
        (BuiltinExample::Ex2, (1830.0, 2030.0), (1830.0, 2030.0)),
        (BuiltinExample::Ex3, (1620.0, 1810.0), (1620.0, 1810.0)),
    ];
    let mut ok = true;
    let mut lines = Vec::new();
    for (ex, band2, band1) in bands {
        match pipeline(ex) {
            Err(e) => {
                ok = false;
                lines.push(format!("{}: {e}", ex.name()));
            }
            Ok(pl) => {
                let fb = &pl.bound;
                let ordered = fb.omega_2nd >= fb.omega_1st;
                let in2 = fb.omega_2nd >= band2.0 && fb.omega_2nd <= band2.1;
                let in1 = fb.omega_1st >= band1.0 && fb.omega_1st <= band1.1;
                ok &= ordered && in2 && in1;
                lines.push(format!(
                    "{}: omega_2nd {:.1} (band [{}, {}]), omega_1st {:.1} (band [{}, {}]), ordered {}",
                    ex.name(),
                    fb.omega_2nd,
                    band2.0,
                    band2.1,
                    fb.omega_1st,
                    band1.0,
                    band1.1,
                    ordered
                ));
            }
        }
    }
    report(4, "frequency bounds", ok, &lines.join("; "));
}

#[test]
fn criterion_05_monte_carlo_fts() {
    let t = Instant::now();
    let mut ok = true;
    let mut lines = Vec::new();
    for ex in BuiltinExample::ALL {
        match pipeline(ex) {
            Err(e) => {
                ok = false;
                lines.push(format!("{}: {e}", ex.name()));
            }
            Ok(pl) => {
                let c = ControllerParams::new(pl.synth.k, pl.synth.alpha, pl.bound.omega_2nd)
                    .unwrap();
                match monte_carlo_verify(&pl.problem, &c, pl.synth.ka, 5, 7) {
                    Err(e) => {
                        ok = false;
                        lines.push(format!("{}: {e}", ex.name()));
                    }
                    Ok(rep) => {
                        let pass = rep.passes == 5 && rep.sign_flip.passes == 5;
                        ok &= pass;
                        lines.push(format!(
                            "{}: {}/5 nominal, {}/5 flipped at omega {:.1}; worst dist {:.4} (delta {}), worst v {:.4}",
                            ex.name(),
                            rep.passes,
                            rep.sign_flip.passes,
                            pl.bound.omega_2nd,
                            rep.worst_max_dist.max(rep.sign_flip.worst_max_dist),
                            pl.problem.delta,
                            rep.worst_max_v.max(rep.sign_flip.worst_max_v)
                        ));
                    }
                }
            }
        }
    }
    let elapsed = t.elapsed();
    let within_time = elapsed < Duration::from_secs(300);
    ok &= within_time;
    lines.push(format!("verification time {elapsed:.1?}"));
    report(5, "Monte Carlo finite-time verification", ok, &lines.join("; "));
}

#[test]
fn criterion_06_open_loop_falsification() {
    let p = BuiltinExample::Ex1.problem();
    let x0 = DVector::from_vec(vec![0.25, 0.25]);
    let traj = simulate_open_loop(&p, &x0, 0.001).unwrap();
    let mut violation_time = None;
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let g = p.gamma.eval(*t).unwrap();
        if (x.transpose() * &g * x)[(0, 0)] >= 1.0 {
            violation_time = Some(*t);
            break;
        }
    }
    match violation_time {
        Some(t) => report(
            6,
            "open-loop falsification",
            t < 10.0,
            &format!("open loop leaves the target set at t = {t:.2} < 10"),
        ),
        None => report(
            6,
            "open-loop falsification",
            false,
            "open loop never leaves the target set on [0, 10]",
        ),
    }
}

#[test]
fn criterion_07_averaging_oracle_equivalence() {
    let mut ok = true;
    let mut lines = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for ex in BuiltinExample::ALL {
        let Ok(pl) = pipeline(ex) else {
            ok = false;
            lines.push(format!("{}: pipeline failed", ex.name()));
            continue;
        };
        let p = &pl.problem;
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let t = rng.gen_range(p.t0..p.t_end());
            let x = loop {
                let v = DVector::from_vec(vec![
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ]);
                if v.norm() <= 1.0 {
                    break v;
                }
            };
            let (drift, dithered) = es_fields_at(p, pl.synth.k, pl.synth.alpha, t).unwrap();
            let numeric = averaged_field(&drift, &dithered, &x).unwrap();
            let closed = averaged_matrix_at(p, pl.synth.ka, t).unwrap() * &x;
            let rel = (&numeric - &closed).norm() / (1.0 + closed.norm());
            worst = worst.max(rel);
        }
        ok &= worst <= 1e-6;
        lines.push(format!("{}: worst relative deviation {:.2e}", ex.name(), worst));
    }
    report(7, "averaging oracle equivalence", ok, &lines.join("; "));
}

/// Exact distance from a point on the outer boundary to the shrunk ellipsoid:
/// projection onto {y' G y = r^2} via the KKT stationarity y = (I+l G)^-1 x,
/// solving the scalar level equation for l by bisection. An independent route
/// from the closed-form (1-r) min gamma.
fn projection_distance(eigs: &[f64], x_eig: &DVector<f64>, r2: f64) -> f64 {
    let h = |l: f64| -> f64 {
        eigs.iter()
            .zip(x_eig.iter())
            .map(|(&g, &xi)| g * xi * xi / (1.0 + l * g).powi(2))
            .sum::<f64>()
            - r2
    };
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while h(hi) > 0.0 {
        hi *= 2.0;
        assert!(hi < 1e12, "projection bisection failed to bracket");
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let l = 0.5 * (lo + hi);
    eigs.iter()
        .zip(x_eig.iter())
        .map(|(&g, &xi)| {
            let d = l * g * xi / (1.0 + l * g);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn brute_force_min_distance(gamma: &DMatrix<f64>, r: f64) -> f64 {
    let n = gamma.nrows();
    let eig = gamma.clone().symmetric_eigen();
    let eigs: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let r2 = r * r;
    // Outer-boundary directions: dense angles in 2D, Fibonacci sphere + a
    // local refinement pass in 3D.
    let dirs_of = |center: Option<(&DVector<f64>, f64)>, count: usize| -> Vec<DVector<f64>> {
        let mut dirs = Vec::with_capacity(count);
        match n {
            2 => {
                let (c0, spread) = match center {
                    Some((c, s)) => (c[1].atan2(c[0]), s),
                    None => (0.0, std::f64::consts::PI),
                };
                for k in 0..count {
                    let th = c0 - spread + 2.0 * spread * k as f64 / count as f64;
                    dirs.push(DVector::from_vec(vec![th.cos(), th.sin()]));
                }
            }
            3 => {
                let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
                for k in 0..count {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                    let rad = (1.0 - z * z).sqrt();
                    let th = golden * k as f64;
                    let mut d =
                        DVector::from_vec(vec![rad * th.cos(), rad * th.sin(), z]);
                    if let Some((c, s)) = center {
                        d = c + &d * s;
                        d /= d.norm();
                    }
                    dirs.push(d);
                }
            }
            _ => unreachable!("oracle covers 2x2 and 3x3 only"),
        }
        dirs
    };
    let dist_for = |dir: &DVector<f64>| -> f64 {
        let q: f64 = eigs
            .iter()
            .zip(dir.iter())
            .map(|(&g, &d)| g * d * d)
            .sum();
        let x = dir / q.sqrt(); // on {x' G x = 1} in the eigenbasis
        projection_distance(&eigs, &x, r2)
    };
    // Directions live in the eigenbasis; the problem is rotation-invariant.
    let coarse = dirs_of(None, if n == 2 { 10_000 } else { 40_000 });
    let mut best_dir = coarse[0].clone();
    let mut best = f64::INFINITY;
    for d in &coarse {
        let v = dist_for(d);
        if v < best {
            best = v;
            best_dir = d.clone();
        }
    }
    // Local refinement around the best direction.
    let spread = if n == 2 { 1e-3 } else { 0.02 };
    for d in dirs_of(Some((&best_dir, spread)), 4_000) {
        let d = &d / d.norm();
        best = best.min(dist_for(&d));
    }
    best
}

#[test]
fn criterion_08_min_distance_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for n in [2usize, 3] {
        for _ in 0..10 {
            let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let gamma = &m * m.transpose() + DMatrix::identity(n, n) * rng.gen_range(0.3..1.5);
            let r = rng.gen_range(0.3..0.95);
            let analytic = min_ellipsoid_distance(&gamma, r).unwrap();
            let brute = brute_force_min_distance(&gamma, r);
            let err = (analytic - brute).abs();
            worst = worst.max(err);
            checked += 1;
        }
    }
    report(
        8,
        "minimum-distance oracle",
        worst <= 1e-3 && checked == 20,
        &format!("{checked} random matrices, worst |analytic - brute force| = {worst:.2e}"),
    );
}

#[test]
fn criterion_09_convergence_rate() {
    match pipeline(BuiltinExample::Ex1) {
        Err(e) => report(9, "distance convergence rate", false, e),
        Ok(pl) => {
            let x0 = DVector::from_vec(vec![0.25, 0.25]);
            let w = pl.bound.omega_2nd;
            let table = convergence_study(
                &pl.problem,
                pl.synth.k,
                pl.synth.alpha,
                &[w, 16.0 * w],
                &x0,
            )
            .unwrap();
            let (d_base, d_fast) = (table[0].1, table[1].1);
            // 1/sqrt(w) leading order: 16x frequency should halve the
            // distance, allowed 1.5x slack.
            let ok = d_fast <= 0.5 * d_base * 1.5;
            report(
                9,
                "distance convergence rate",
                ok,
                &format!(
                    "max|x-xbar| {:.5} at {:.1} rad/s vs {:.5} at 16x ({:.1} rad/s); ratio {:.3}",
                    d_base,
                    w,
                    d_fast,
                    16.0 * w,
                    d_fast / d_base
                ),
            );
        }
    }
}

#[test]
fn criterion_10_certificate_recheck() {
    let mut ok = true;
    let mut lines = Vec::new();
    for ex in BuiltinExample::ALL {
        match pipeline(ex) {
            Err(e) => {
                ok = false;
                lines.push(format!("{}: {e}", ex.name()));
            }
            Ok(pl) => {
                let worst = recheck_certificate(&pl.problem, &pl.synth).unwrap();
                let margin_ok = pl.synth.margin >= 1e-7;
                let blocks_ok = worst <= -(pl.synth.margin - 1e-7);
                ok &= margin_ok && blocks_ok;
                lines.push(format!(
                    "{}: margin {:.3e}, worst block eigenvalue {:.3e} (bound {:.3e})",
                    ex.name(),
                    pl.synth.margin,
                    worst,
                    -(pl.synth.margin - 1e-7)
                ));
            }
        }
    }
    report(10, "certificate recheck", ok, &lines.join("; "));
}

#[test]
fn averaged_certificate_implies_shrunk_set_containment() {
    // Simulating the averaged loop from 50 states on the initial-set boundary
    // keeps xbar' GammaBar xbar < 1 over the horizon (certificate-implied).
    let Ok(pl) = pipeline(BuiltinExample::Ex1) else {
        panic!("ex1 pipeline failed");
    };
    let p = &pl.problem;
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let th = rng.gen_range(0.0..std::f64::consts::TAU);
        let d = DVector::from_vec(vec![th.cos(), th.sin()]);
        let q = (d.transpose() * &p.r * &d)[(0, 0)];
        let x0 = &d / q.sqrt(); // exactly on the initial-set boundary
        let traj = esfts::sim::simulate_averaged(p, pl.synth.ka, &x0, p.horizon / 2000.0).unwrap();
        for (t, x) in traj.times.iter().zip(&traj.states) {
            let gbar = pl.synth.shrunk.gamma_bar.eval(*t).unwrap();
            worst = worst.max((x.transpose() * gbar * x)[(0, 0)]);
        }
    }
    assert!(
        worst < 1.0,
        "averaged trajectory left the shrunk set: worst level {worst}"
    );
}
