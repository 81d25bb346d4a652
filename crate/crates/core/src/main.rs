#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use savflow::harness::{
    coarsening_experiment, convergence_study, run_simulation, CoarseningVariant,
    ConvergenceSettings, InitialCondition, MeshKind, RunConfig, RunOutput, ScheduleSpec,
    COARSENING_SNAPSHOT_TIMES,
};
use savflow::integrator::{gamma_star_star, stencil_inequality_gap, NewtonPolicy, RatioPolicy};
use savflow::io::{
    snapshot_stem, write_convergence_csv, write_dt_csv, write_records_csv, write_snapshot,
    ConfigFile,
};
use savflow::{Error, Flow, Grid, SchemeParams, VKind};

/// Environment variable naming the default output root.
const OUT_DIR_ENV: &str = "SAVFLOW_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "savflow",
    version,
    about = "Variable-step BDF2 SAV solver for Allen-Cahn and Cahn-Hilliard flows"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum RatioArg {
    Warn,
    Error,
}

#[derive(Clone, Copy, ValueEnum)]
enum MeshArg {
    Uniform,
    Perturbed,
}

#[derive(Args, Clone)]
struct Overrides {
    /// Seed for random initial data and perturbed meshes
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $SAVFLOW_OUT_DIR, else ./savflow-out)
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Fixed number of Newton iterations for the scalar update
    #[arg(long)]
    newton_iters: Option<usize>,
    /// Iterate Newton until |W(xi)| <= 1e-12
    #[arg(long, conflicts_with = "newton_iters")]
    newton_converged: bool,
    /// Behaviour when a step ratio exceeds the stability bound
    #[arg(long, value_enum)]
    ratio_policy: Option<RatioArg>,
    /// Final time
    #[arg(long)]
    t_end: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single simulation
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Temporal convergence study against a fine reference run
    Converge {
        config: PathBuf,
        #[arg(long, value_enum, default_value = "uniform")]
        mesh: MeshArg,
        /// Step counts, comma separated
        #[arg(
            long = "Ns",
            alias = "ns",
            value_delimiter = ',',
            default_value = "20,40,80,160,320"
        )]
        ns: Vec<usize>,
        /// Node displacement amplitude for perturbed meshes, as a fraction of the mean step
        #[arg(long, default_value_t = 0.4)]
        amplitude: f64,
        /// Step of the reference run
        #[arg(long, default_value_t = 1e-4)]
        dt_ref: f64,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Coarsening comparison between fixed and adaptive steps
    Coarsen {
        config: PathBuf,
        /// Variants, comma separated: fixed-large, adaptive, fixed-small
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "fixed-large,adaptive,fixed-small"
        )]
        variants: Vec<String>,
        /// Energy comparison times, comma separated
        #[arg(long, value_delimiter = ',', default_value = "1,2,5")]
        checkpoints: Vec<f64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print the largest admissible step ratio for a stencil parameter
    Gamma {
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
    },
    /// Quick invariant checks
    Selfcheck,
}

enum Failure {
    Config(Error),
    Run(Error),
    Check(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Run(e) if e.is_numerical() => 2,
            Failure::Run(_) => 1,
            Failure::Check(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) | Failure::Run(e) => write!(f, "{e}"),
            Failure::Check(m) => f.write_str(m),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn run_err(e: Error) -> Failure {
    Failure::Run(e)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, overrides } => cmd_run(&config, &overrides),
        Command::Converge {
            config,
            mesh,
            ns,
            amplitude,
            dt_ref,
            overrides,
        } => cmd_converge(&config, mesh, &ns, amplitude, dt_ref, &overrides),
        Command::Coarsen {
            config,
            variants,
            checkpoints,
            overrides,
        } => cmd_coarsen(&config, &variants, &checkpoints, &overrides),
        Command::Gamma { sigma } => cmd_gamma(sigma),
        Command::Selfcheck => cmd_selfcheck(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}

/// Parses the config, applies overrides and validates everything before any output exists.
fn load(path: &Path, o: &Overrides) -> CliResult<(ConfigFile, RunConfig)> {
    let mut file = ConfigFile::load(path).map_err(Failure::Config)?;
    if let Some(seed) = o.seed {
        file.override_seed(seed);
    }
    if let Some(n) = o.newton_iters {
        file.solver.newton = NewtonPolicy::Fixed(n);
    }
    if o.newton_converged {
        file.solver.newton = NewtonPolicy::converged();
    }
    if let Some(r) = o.ratio_policy {
        file.solver.ratio_policy = match r {
            RatioArg::Warn => RatioPolicy::Warn,
            RatioArg::Error => RatioPolicy::Error,
        };
    }
    if let Some(t) = o.t_end {
        file.t_end = t;
    }
    let cfg = file.to_run_config().map_err(Failure::Config)?;
    Ok((file, cfg))
}

fn out_dir(o: &Overrides) -> PathBuf {
    o.out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("savflow-out"))
}

fn prepare_out_dir(dir: &Path, file: &ConfigFile) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| run_err(io_error(dir, e)))?;
    file.save(&dir.join("config.resolved.json"))
        .map_err(run_err)
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_run_outputs(dir: &Path, out: &RunOutput) -> CliResult<()> {
    write_records_csv(&dir.join("records.csv"), &out.records).map_err(run_err)?;
    let snaps = dir.join("snapshots");
    for snap in &out.snapshots {
        write_snapshot(&snaps, &snapshot_stem(snap.requested_time), snap).map_err(run_err)?;
    }
    Ok(())
}

fn cmd_run(config: &Path, o: &Overrides) -> CliResult<()> {
    let (file, cfg) = load(config, o)?;
    let dir = out_dir(o);
    prepare_out_dir(&dir, &file)?;
    let out = run_simulation(&cfg).map_err(run_err)?;
    write_run_outputs(&dir, &out)?;
    let last = out.records.last().expect("at least one step");
    println!(
        "steps {}  t {}  energy {:.10e}  modified energy {:.10e}  xi {:.6}  max ratio {:.4}",
        out.steps, last.t_np1, last.energy, last.modified_energy, last.xi, out.max_ratio
    );
    println!("outputs in {}", dir.display());
    Ok(())
}

fn cmd_converge(
    config: &Path,
    mesh: MeshArg,
    ns: &[usize],
    amplitude: f64,
    dt_ref: f64,
    o: &Overrides,
) -> CliResult<()> {
    let (file, cfg) = load(config, o)?;
    let settings = ConvergenceSettings {
        mesh: match mesh {
            MeshArg::Uniform => MeshKind::Uniform,
            MeshArg::Perturbed => MeshKind::Perturbed,
        },
        amplitude,
        seed: o.seed.unwrap_or(0),
        dt_ref,
    };
    if !(0.0..1.0).contains(&amplitude) || !(dt_ref > 0.0) {
        return Err(Failure::Config(Error::InvalidParameter(format!(
            "amplitude {amplitude} must lie in [0, 1) and dt_ref {dt_ref} must be positive"
        ))));
    }
    let dir = out_dir(o);
    prepare_out_dir(&dir, &file)?;
    let study = convergence_study(&cfg, ns, &settings).map_err(run_err)?;
    write_convergence_csv(&dir.join("convergence.csv"), &study.rows).map_err(run_err)?;
    println!(
        "{:>6} {:>11} {:>9} {:>12} {:>12} {:>7} {:>11}",
        "N", "tau", "max_gamma", "error_linf", "error_l2", "order", "|xi-1|"
    );
    for r in &study.rows {
        let order = r.order.map_or("--".to_string(), |v| format!("{v:.2}"));
        println!(
            "{:>6} {:>11.3e} {:>9.3} {:>12.3e} {:>12.3e} {:>7} {:>11.3e}",
            r.n, r.tau, r.max_gamma, r.error_linf, r.error_l2, order, r.xi_error
        );
    }
    println!(
        "fitted order (L-inf): {:.3}  fitted order (xi): {:.3}",
        study.order_linf, study.order_xi
    );
    Ok(())
}

#[derive(Serialize)]
struct VariantSummary {
    variant: &'static str,
    steps: usize,
    checkpoint_energy: Vec<f64>,
    max_ratio: f64,
    max_h2_seminorm: f64,
    max_mass_drift: f64,
}

#[derive(Serialize)]
struct CoarseningSummary {
    checkpoints: Vec<f64>,
    variants: Vec<VariantSummary>,
    adaptive_vs_fixed_small_max_relative_energy_gap: Option<f64>,
}

fn cmd_coarsen(
    config: &Path,
    variants: &[String],
    checkpoints: &[f64],
    o: &Overrides,
) -> CliResult<()> {
    let (mut file, mut cfg) = load(config, o)?;
    let variants: Vec<CoarseningVariant> = variants
        .iter()
        .map(|v| v.parse())
        .collect::<savflow::Result<_>>()
        .map_err(Failure::Config)?;
    if cfg.snapshot_times.is_empty() {
        cfg.snapshot_times = COARSENING_SNAPSHOT_TIMES
            .iter()
            .copied()
            .filter(|&t| t <= cfg.t_end)
            .collect();
        file.output.snapshot_times = cfg.snapshot_times.clone();
    }
    let checkpoints: Vec<f64> = checkpoints
        .iter()
        .copied()
        .filter(|&t| t <= cfg.t_end)
        .collect();
    if cfg.params.flow() != Flow::Hminus1 {
        return Err(Failure::Config(Error::Config(
            "coarsen needs a config with flow \"h-1\"".into(),
        )));
    }
    let dir = out_dir(o);
    prepare_out_dir(&dir, &file)?;
    let report = coarsening_experiment(&cfg, &variants, &checkpoints).map_err(run_err)?;

    let mut summary = CoarseningSummary {
        checkpoints: report.checkpoints.clone(),
        variants: Vec::new(),
        adaptive_vs_fixed_small_max_relative_energy_gap: report.adaptive_deviation,
    };
    for run in &report.runs {
        let vdir = dir.join(run.variant.name());
        write_run_outputs(&vdir, &run.output)?;
        if run.variant == CoarseningVariant::Adaptive {
            write_dt_csv(&vdir.join("dt.csv"), &run.output.records).map_err(run_err)?;
        }
        println!(
            "{:<12} steps {:>8}  energy at checkpoints {:?}",
            run.variant.name(),
            run.output.steps,
            run.checkpoint_energy
        );
        summary.variants.push(VariantSummary {
            variant: run.variant.name(),
            steps: run.output.steps,
            checkpoint_energy: run.checkpoint_energy.clone(),
            max_ratio: run.output.max_ratio,
            max_h2_seminorm: run.output.max_h2_seminorm,
            max_mass_drift: run.output.max_mass_drift,
        });
    }
    if let Some(gap) = report.adaptive_deviation {
        println!("adaptive vs fixed-small: max relative energy gap {gap:.3e}");
    }
    let path = dir.join("coarsening_summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&path, text + "\n").map_err(|e| run_err(io_error(&path, e)))?;
    println!("outputs in {}", dir.display());
    Ok(())
}

fn cmd_gamma(sigma: f64) -> CliResult<()> {
    match gamma_star_star(sigma) {
        Ok(g) => {
            println!("{g:.10}");
            Ok(())
        }
        Err(e @ Error::UnboundedThreshold { .. }) => {
            println!("inf");
            eprintln!("{e}");
            Ok(())
        }
        Err(e) => Err(Failure::Config(e)),
    }
}

fn cmd_selfcheck() -> CliResult<()> {
    let mut all = true;
    let mut report = |name: &str, ok: bool, detail: String| {
        println!("[{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        all &= ok;
    };

    let g = gamma_star_star(1.0).map_err(run_err)?;
    report(
        "ratio bound",
        (g - 4.8645).abs() < 5e-4 && (1.0 + 2.0 * g - g.powf(1.5)).abs() < 1e-8,
        format!("gamma**(1) = {g:.8}"),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst = f64::INFINITY;
    for sigma in [0.5, 0.75, 1.0] {
        let bound = gamma_star_star(sigma).unwrap_or(50.0);
        for _ in 0..10_000 {
            let phi = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let dt0 = 10f64.powf(rng.gen_range(-4.0..0.0));
            let g1 = rng.gen_range(1e-3..bound);
            let g2 = rng.gen_range(1e-3..bound);
            let dt = [dt0, g1 * dt0, g1 * g2 * dt0];
            let (gap, scale) = stencil_inequality_gap(phi, dt, sigma).map_err(run_err)?;
            worst = worst.min(gap / scale.max(f64::MIN_POSITIVE));
        }
    }
    report(
        "stencil inequality",
        worst >= -1e-12,
        format!("worst relative slack {worst:.3e}"),
    );

    let grid = Grid::square_2pi(16).map_err(run_err)?;
    let params =
        SchemeParams::new(0.01, 1.0, 40.0, 1.0, VKind::Linear, Flow::Hminus1).map_err(run_err)?;
    let mut cfg = RunConfig::new(
        params,
        grid,
        InitialCondition::SeededRandom {
            lo: -0.05,
            hi: 0.05,
            seed: 1,
        },
        ScheduleSpec::Perturbed {
            steps: 300,
            amplitude: 0.4,
            seed: 2,
        },
        0.3,
    );
    cfg.step.newton = NewtonPolicy::converged();
    let out = run_simulation(&cfg).map_err(run_err)?;
    let mut prev = out.initial.discrete_energy_h;
    let mut increases = 0;
    for r in &out.records {
        if r.discrete_energy_h > prev + 1e-10 * prev.abs() {
            increases += 1;
        }
        prev = r.discrete_energy_h;
    }
    report(
        "energy dissipation",
        increases == 0,
        format!("{} steps, {increases} increases", out.steps),
    );
    report(
        "mass conservation",
        out.max_mass_drift <= 1e-11,
        format!("max drift {:.3e}", out.max_mass_drift),
    );

    if all {
        Ok(())
    } else {
        Err(Failure::Check("self-check failed".into()))
    }
}
