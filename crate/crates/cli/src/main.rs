//! Command-line front end: synthesize the stabilizing gain product, compute
//! dithering-frequency bounds, simulate, and verify by Monte Carlo.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use esfts::dlmi::{scan_gain, DEFAULT_KA_MAX, DEFAULT_SCAN_STEP};
use esfts::frequency::frequency_bound;
use esfts::geometry::shrunk_gamma;
use esfts::sim::{
    compare_run, monte_carlo_verify, sample_boundary_state, simulate_open_loop,
    write_trajectory_csv, SimOptions,
};
use esfts::{
    BuiltinExample, ControllerParams, Error, FrequencyBound, FtsProblem, SynthesisResult,
    TimeGrid,
};

#[derive(Parser)]
#[command(name = "esfts", version, about = "Finite-time stabilization via sinusoidal dithering: DLMI gain synthesis on the averaged system, frequency bounds, and simulation-based verification")]
struct Cli {
    /// Print a bundled problem ("ex1", "ex2", "ex3") as JSON and exit.
    #[arg(long, value_name = "NAME", global = true)]
    dump_example: Option<String>,

    /// Worker thread cap for the scan and Monte Carlo runs.
    #[arg(long, value_name = "INT", global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Clone)]
struct ProblemArgs {
    /// Problem JSON file.
    #[arg(long, value_name = "PATH", conflicts_with = "example")]
    problem: Option<PathBuf>,

    /// Bundled problem: ex1, ex2 or ex3.
    #[arg(long, value_name = "NAME")]
    example: Option<String>,

    /// Override the synthesis grid interval count.
    #[arg(long, value_name = "INT")]
    grid_n: Option<usize>,

    /// Override the tube radius delta.
    #[arg(long, value_name = "FLOAT")]
    delta: Option<f64>,

    /// Negate the input column before running (unknown-direction check).
    #[arg(long)]
    flip_b: bool,

    /// Output directory for reports and CSV data.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ScanArgs {
    /// Gain-product scan step.
    #[arg(long, value_name = "FLOAT", default_value_t = DEFAULT_SCAN_STEP)]
    scan_step: f64,

    /// Gain-product scan ceiling.
    #[arg(long, value_name = "FLOAT", default_value_t = DEFAULT_KA_MAX)]
    ka_max: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the minimal feasible gain product and its certificate.
    Synth {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        scan: ScanArgs,
    },
    /// Synthesize, then compute the minimum dithering-frequency estimates.
    Bound {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        scan: ScanArgs,
    },
    /// Run one dithered/averaged/open-loop comparison and write CSVs.
    Simulate {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        scan: ScanArgs,
        /// Dither frequency override, rad/s (default: the second-order bound).
        #[arg(long, value_name = "FLOAT")]
        omega: Option<f64>,
        /// Initial state, comma-separated.
        #[arg(long, value_name = "X1,X2,..")]
        x0: Option<String>,
        /// Seed for the initial-state draw when --x0 is absent.
        #[arg(long, value_name = "INT", default_value_t = 1)]
        seed: u64,
    },
    /// Full pipeline plus Monte Carlo verification (nominal and flipped B).
    Verify {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        scan: ScanArgs,
        /// Dither frequency override, rad/s (default: the second-order bound).
        #[arg(long, value_name = "FLOAT")]
        omega: Option<f64>,
        /// Monte Carlo draws.
        #[arg(long, value_name = "INT", default_value_t = 5)]
        runs: usize,
        /// Random seed.
        #[arg(long, value_name = "INT", default_value_t = 1)]
        seed: u64,
    },
    /// Synthesize, bound and verify every bundled problem.
    Demo {
        /// Monte Carlo draws per problem.
        #[arg(long, value_name = "INT", default_value_t = 3)]
        runs: usize,
        /// Random seed.
        #[arg(long, value_name = "INT", default_value_t = 1)]
        seed: u64,
        /// Output directory.
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
    },
}

struct LoadedProblem {
    problem: FtsProblem,
    grid: TimeGrid,
    label: String,
    out: PathBuf,
}

fn load(args: &ProblemArgs) -> Result<LoadedProblem, Error> {
    let (mut problem, default_grid, label) = if let Some(name) = &args.example {
        let ex = BuiltinExample::from_name(name).ok_or_else(|| {
            Error::Config(format!("unknown example {name:?}; expected ex1, ex2 or ex3"))
        })?;
        (ex.problem(), Some(ex.default_grid()), ex.name().to_string())
    } else if let Some(path) = &args.problem {
        let text = std::fs::read_to_string(path)?;
        let p: FtsProblem = serde_json::from_str(&text)?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "problem".into());
        (p, None, label)
    } else {
        return Err(Error::Config(
            "one of --example or --problem is required".into(),
        ));
    };

    if let Some(delta) = args.delta {
        problem.delta = delta;
    }
    if args.flip_b {
        problem = problem.with_flipped_b();
    }
    let grid = match (args.grid_n, default_grid) {
        (Some(n), _) => TimeGrid::uniform(problem.t0, problem.horizon, n)?,
        (None, Some(g)) => g,
        (None, None) => TimeGrid::uniform(problem.t0, problem.horizon, 100)?,
    };
    let problem = problem.validated(&grid)?;
    Ok(LoadedProblem {
        problem,
        grid,
        label,
        out: args.out.clone(),
    })
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, Error> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value)?)?;
    Ok(path)
}

fn write_meta(dir: &Path, label: &str) -> Result<(), Error> {
    // Timestamps live here so the main reports stay byte-identical per seed.
    let meta = serde_json::json!({
        "command": std::env::args().collect::<Vec<_>>().join(" "),
        "problem": label,
        "unix_time": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        "version": env!("CARGO_PKG_VERSION"),
    });
    write_json(dir, "run_meta.json", &meta)?;
    Ok(())
}

fn synthesize(lp: &LoadedProblem, scan: &ScanArgs) -> Result<SynthesisResult, Error> {
    let spec = shrunk_gamma(&lp.problem, &lp.grid)?;
    let res = scan_gain(&lp.problem, &spec, &lp.grid, scan.scan_step, scan.ka_max)?;
    Ok(res)
}

fn bound_for(lp: &LoadedProblem, res: &SynthesisResult) -> Result<FrequencyBound, Error> {
    frequency_bound(&lp.problem, res.ka, res.k, res.alpha, &lp.grid)
}

fn cmd_synth(lp: &LoadedProblem, scan: &ScanArgs) -> Result<SynthesisResult, Error> {
    let res = synthesize(lp, scan)?;
    let path = write_json(&lp.out, &format!("synth_{}.json", lp.label), &res)?;
    write_meta(&lp.out, &lp.label)?;
    println!(
        "{}: gain product {} (k = alpha = {:.6}), margin {:.3e}, {} scan points -> {}",
        lp.label,
        res.ka,
        res.k,
        res.margin,
        res.scan_evaluations,
        path.display()
    );
    Ok(res)
}

fn cmd_bound(lp: &LoadedProblem, scan: &ScanArgs) -> Result<(SynthesisResult, FrequencyBound), Error> {
    let res = synthesize(lp, scan)?;
    let fb = bound_for(lp, &res)?;
    let path = write_json(&lp.out, &format!("bound_{}.json", lp.label), &fb)?;
    write_meta(&lp.out, &lp.label)?;
    println!(
        "{}: kappa {:.4}, eta {:.4} (exp-of-integral {:.4}), |B| {:.4}",
        lp.label, fb.kappa, fb.eta, fb.eta_exp_of_integral, fb.b_norm
    );
    println!(
        "{}: omega_2nd {:.1} rad/s, omega_1st {:.1} rad/s -> {}",
        lp.label,
        fb.omega_2nd,
        fb.omega_1st,
        path.display()
    );
    if !fb.regime_ok {
        eprintln!(
            "warning: {}: omega_2nd^(3/2) = {:.3e} is within 100x of the slow-dynamics scale {:.3e}; \
             the time-scale separation behind the bound is thin",
            lp.label,
            fb.omega_2nd.powf(1.5),
            fb.regime_scale
        );
    }
    Ok((res, fb))
}

fn parse_x0(text: &str) -> Result<DVector<f64>, Error> {
    let vals: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|e| Error::Config(format!("bad --x0: {e}")))?;
    if vals.is_empty() {
        return Err(Error::Config("empty --x0".into()));
    }
    Ok(DVector::from_vec(vals))
}

fn ellipse_boundary_csv(dir: &Path, name: &str, m: &DMatrix<f64>) -> Result<(), Error> {
    use std::io::Write;
    let eig = m.clone().symmetric_eigen();
    let mut inv_sqrt = DMatrix::zeros(2, 2);
    for i in 0..2 {
        inv_sqrt[(i, i)] = 1.0 / eig.eigenvalues[i].sqrt();
    }
    let map = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
    std::fs::create_dir_all(dir)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(name))?);
    writeln!(f, "x1,x2")?;
    for k in 0..=360 {
        let th = std::f64::consts::TAU * k as f64 / 360.0;
        let pt = &map * DVector::from_vec(vec![th.cos(), th.sin()]);
        writeln!(f, "{:.9e},{:.9e}", pt[0], pt[1])?;
    }
    Ok(())
}

fn write_plotdata(lp: &LoadedProblem, res: &SynthesisResult) -> Result<(), Error> {
    if lp.problem.n() != 2 {
        return Ok(());
    }
    let p = &lp.problem;
    let dir = &lp.out;
    ellipse_boundary_csv(dir, &format!("plotdata_{}_r.csv", lp.label), &p.r)?;
    for (tag, t) in [("t0", p.t0), ("tend", p.t_end())] {
        let g = p.gamma.eval(t)?;
        ellipse_boundary_csv(dir, &format!("plotdata_{}_gamma_{tag}.csv", lp.label), &g)?;
        let gbar = res.shrunk.gamma_bar.eval(t)?;
        ellipse_boundary_csv(
            dir,
            &format!("plotdata_{}_gammabar_{tag}.csv", lp.label),
            &gbar,
        )?;
    }
    Ok(())
}

fn cmd_simulate(
    lp: &LoadedProblem,
    scan: &ScanArgs,
    omega: Option<f64>,
    x0: Option<String>,
    seed: u64,
) -> Result<(), Error> {
    let res = synthesize(lp, scan)?;
    let omega = match omega {
        Some(w) => w,
        None => bound_for(lp, &res)?.omega_2nd,
    };
    let x0 = match x0 {
        Some(text) => parse_x0(&text)?,
        None => {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            sample_boundary_state(&lp.problem.r, &mut rng)
        }
    };
    let c = ControllerParams::new(res.k, res.alpha, omega)?;
    let (closed, averaged, metrics) = compare_run(&lp.problem, &c, &x0, SimOptions::default())?;
    let dt = lp.problem.horizon / (closed.times.len() - 1) as f64;
    let open = simulate_open_loop(&lp.problem, &x0, dt);

    std::fs::create_dir_all(&lp.out)?;
    write_trajectory_csv(
        &lp.out.join(format!("traj_{}_closed.csv", lp.label)),
        &closed,
        &lp.problem,
    )?;
    write_trajectory_csv(
        &lp.out.join(format!("traj_{}_averaged.csv", lp.label)),
        &averaged,
        &lp.problem,
    )?;
    match open {
        Ok(tr) => write_trajectory_csv(
            &lp.out.join(format!("traj_{}_open.csv", lp.label)),
            &tr,
            &lp.problem,
        )?,
        Err(Error::Divergence { time, .. }) => {
            eprintln!("note: open loop diverged at t = {time:.3}; no open-loop CSV")
        }
        Err(e) => return Err(e),
    }
    write_plotdata(lp, &res)?;
    write_meta(&lp.out, &lp.label)?;
    println!(
        "{}: omega {omega:.1} rad/s from x0 = {:?}: max|x-xbar| = {:.4} (delta {}), max x'Gx = {:.4}",
        lp.label,
        x0.iter().copied().collect::<Vec<_>>(),
        metrics.max_dist,
        lp.problem.delta,
        metrics.max_v
    );
    Ok(())
}

fn cmd_verify(
    lp: &LoadedProblem,
    scan: &ScanArgs,
    omega: Option<f64>,
    runs: usize,
    seed: u64,
) -> Result<bool, Error> {
    let res = cmd_synth(lp, scan)?;
    let fb = bound_for(lp, &res)?;
    let omega = omega.unwrap_or(fb.omega_2nd);
    let c = ControllerParams::new(res.k, res.alpha, omega)?;
    let report = monte_carlo_verify(&lp.problem, &c, res.ka, runs, seed)?;

    write_json(&lp.out, &format!("verify_{}.json", lp.label), &report)?;
    write_json(&lp.out, &format!("bound_{}.json", lp.label), &fb)?;
    let combined = serde_json::json!({
        "problem": lp.label,
        "omega": omega,
        "synthesis": &res,
        "bound": &fb,
        "verification": &report,
    });
    write_json(&lp.out, "report.json", &combined)?;

    // Worst-case run trajectories for plotting.
    let worst = report.worst_run();
    let x0 = DVector::from_vec(report.outcomes[worst].x0.clone());
    if let Ok((closed, averaged, _)) = compare_run(&lp.problem, &c, &x0, SimOptions::default()) {
        let dt = lp.problem.horizon / (closed.times.len() - 1) as f64;
        write_trajectory_csv(
            &lp.out.join(format!("traj_{}_closed.csv", lp.label)),
            &closed,
            &lp.problem,
        )?;
        write_trajectory_csv(
            &lp.out.join(format!("traj_{}_averaged.csv", lp.label)),
            &averaged,
            &lp.problem,
        )?;
        match simulate_open_loop(&lp.problem, &x0, dt) {
            Ok(tr) => write_trajectory_csv(
                &lp.out.join(format!("traj_{}_open.csv", lp.label)),
                &tr,
                &lp.problem,
            )?,
            Err(Error::Divergence { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    write_plotdata(lp, &res)?;
    write_meta(&lp.out, &lp.label)?;

    let ok = report.all_passed();
    println!(
        "{}: omega {omega:.1} rad/s, {}/{} nominal and {}/{} flipped-B runs passed; \
         worst max|x-xbar| = {:.4} (delta {}), worst max x'Gx = {:.4}{}",
        lp.label,
        report.passes,
        report.runs,
        report.sign_flip.passes,
        report.runs,
        report.worst_max_dist.max(report.sign_flip.worst_max_dist),
        lp.problem.delta,
        report.worst_max_v.max(report.sign_flip.worst_max_v),
        if report.under_resolved {
            " [under-resolved dither]"
        } else {
            ""
        }
    );
    if !ok {
        for (i, o) in report.outcomes.iter().enumerate() {
            if !o.passed {
                eprintln!(
                    "failed nominal run {i}: x0 = {:?}, diverged = {}, metrics = {:?}",
                    o.x0, o.diverged, o.metrics
                );
            }
        }
        for (i, o) in report.sign_flip.outcomes.iter().enumerate() {
            if !o.passed {
                eprintln!(
                    "failed flipped run {i}: x0 = {:?}, diverged = {}, metrics = {:?}",
                    o.x0, o.diverged, o.metrics
                );
            }
        }
    }
    Ok(ok)
}

fn cmd_demo(runs: usize, seed: u64, out: &Path) -> Result<bool, Error> {
    let mut all_ok = true;
    for ex in BuiltinExample::ALL {
        let lp = LoadedProblem {
            problem: ex.problem().validated(&ex.default_grid())?,
            grid: ex.default_grid(),
            label: ex.name().into(),
            out: out.to_path_buf(),
        };
        let scan = ScanArgs {
            scan_step: DEFAULT_SCAN_STEP,
            ka_max: DEFAULT_KA_MAX,
        };
        println!("--- {} ---", ex.name());
        let (res, fb) = cmd_bound(&lp, &scan)?;
        let c = ControllerParams::new(res.k, res.alpha, fb.omega_2nd)?;
        let report = monte_carlo_verify(&lp.problem, &c, res.ka, runs, seed)?;
        write_json(&lp.out, &format!("verify_{}.json", lp.label), &report)?;
        let ok = report.all_passed();
        all_ok &= ok;
        println!(
            "{}: {}/{} nominal, {}/{} flipped-B runs passed at omega = {:.1} rad/s",
            ex.name(),
            report.passes,
            runs,
            report.sign_flip.passes,
            runs,
            fb.omega_2nd
        );
    }
    Ok(all_ok)
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("--jobs: {e}")))?;
    }
    if let Some(name) = &cli.dump_example {
        let ex = BuiltinExample::from_name(name).ok_or_else(|| {
            Error::Config(format!("unknown example {name:?}; expected ex1, ex2 or ex3"))
        })?;
        println!("{}", serde_json::to_string_pretty(&ex.problem())?);
        return Ok(ExitCode::SUCCESS);
    }
    let Some(command) = cli.command else {
        return Err(Error::Config(
            "a subcommand is required (synth, bound, simulate, verify, demo); see --help".into(),
        ));
    };
    match command {
        Command::Synth { problem, scan } => {
            let lp = load(&problem)?;
            cmd_synth(&lp, &scan)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Bound { problem, scan } => {
            let lp = load(&problem)?;
            cmd_bound(&lp, &scan)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate {
            problem,
            scan,
            omega,
            x0,
            seed,
        } => {
            let lp = load(&problem)?;
            cmd_simulate(&lp, &scan, omega, x0, seed)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify {
            problem,
            scan,
            omega,
            runs,
            seed,
        } => {
            let lp = load(&problem)?;
            let ok = cmd_verify(&lp, &scan, omega, runs, seed)?;
            Ok(if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(4)
            })
        }
        Command::Demo { runs, seed, out } => {
            let ok = cmd_demo(runs, seed, &out)?;
            Ok(if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(4)
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
