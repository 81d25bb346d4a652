//! Experiment drivers: single runs, reference solutions, convergence studies and the
//! coarsening comparison.

use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{
    discrete_energy_h, first_order_step_with, vbdf2_step, StepOptions, StepRecord, StepState,
};
use crate::model::{energy, modified_energy, Flow, SchemeParams};
use crate::spectral::{h2_seminorm, l2_norm, Field, Grid};
use crate::stepping::{
    adaptive_next_dt, energy_rate_estimate, perturbed_schedule, uniform_schedule, AdaptiveParams,
    EnergySource, Schedule, DEFAULT_RATIO_CAP,
};

/// Common ratio of the start-up ramp; below `γ**(σ)` for every σ.
pub const STARTUP_RAMP_RATIO: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialCondition {
    /// `sin x · sin y`
    SinProduct,
    /// `0.1·(sin 3x · sin 2y + sin 5x · sin 5y)`
    TwoMode,
    /// Independent uniform values on `[lo, hi)` at every node.
    SeededRandom { lo: f64, hi: f64, seed: u64 },
    /// A raw snapshot file.
    File { path: PathBuf },
}

impl InitialCondition {
    pub fn build(&self, grid: &Arc<Grid>) -> Result<Field> {
        match self {
            InitialCondition::SinProduct => {
                Ok(Field::from_fn(grid.clone(), |x, y| x.sin() * y.sin()))
            }
            InitialCondition::TwoMode => Ok(Field::from_fn(grid.clone(), |x, y| {
                0.1 * ((3.0 * x).sin() * (2.0 * y).sin() + (5.0 * x).sin() * (5.0 * y).sin())
            })),
            InitialCondition::SeededRandom { lo, hi, seed } => {
                if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "random range [{lo}, {hi}) is empty"
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let values = (0..grid.len()).map(|_| rng.gen_range(*lo..*hi)).collect();
                Field::new(grid.clone(), values)
            }
            InitialCondition::File { path } => {
                let (field, _) = crate::io::read_snapshot(path, Some(grid))?;
                Ok(field)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Uniform {
        steps: usize,
    },
    Perturbed {
        steps: usize,
        amplitude: f64,
        seed: u64,
    },
    /// Constant step with the last step shortened to land on the horizon.
    FixedStep {
        dt: f64,
    },
    Adaptive {
        dt_min: f64,
        dt_max: f64,
        gamma_adp: f64,
        #[serde(default = "default_ratio_cap")]
        ratio_cap: f64,
        #[serde(default)]
        energy_source: EnergySource,
    },
    Explicit {
        times: Vec<f64>,
    },
}

fn default_ratio_cap() -> f64 {
    DEFAULT_RATIO_CAP
}

impl ScheduleSpec {
    pub fn adaptive(p: AdaptiveParams) -> Self {
        ScheduleSpec::Adaptive {
            dt_min: p.dt_min,
            dt_max: p.dt_max,
            gamma_adp: p.gamma_adp,
            ratio_cap: p.ratio_cap,
            energy_source: p.energy_source,
        }
    }

    /// The precomputed grid, or `None` for the adaptive controller.
    pub fn build(&self, t_end: f64) -> Result<Option<Schedule>> {
        Ok(Some(match self {
            ScheduleSpec::Uniform { steps } => uniform_schedule(t_end, *steps)?,
            ScheduleSpec::Perturbed {
                steps,
                amplitude,
                seed,
            } => perturbed_schedule(t_end, *steps, *amplitude, *seed)?,
            ScheduleSpec::FixedStep { dt } => Schedule::fixed_step(t_end, *dt)?,
            ScheduleSpec::Explicit { times } => {
                let s = Schedule::from_times(times.clone())?;
                if s.horizon() != t_end {
                    return Err(Error::InvalidParameter(format!(
                        "explicit schedule ends at {} but the horizon is {t_end}",
                        s.horizon()
                    )));
                }
                s
            }
            ScheduleSpec::Adaptive { .. } => {
                self.adaptive_params().expect("adaptive").validate()?;
                return Ok(None);
            }
        }))
    }

    fn adaptive_params(&self) -> Option<AdaptiveParams> {
        match *self {
            ScheduleSpec::Adaptive {
                dt_min,
                dt_max,
                gamma_adp,
                ratio_cap,
                energy_source,
            } => Some(AdaptiveParams {
                dt_min,
                dt_max,
                gamma_adp,
                ratio_cap,
                energy_source,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub params: SchemeParams,
    pub grid: Arc<Grid>,
    pub initial: InitialCondition,
    pub schedule: ScheduleSpec,
    pub t_end: f64,
    pub step: StepOptions,
    /// Forces the first step to this size with a geometric ramp back onto the schedule.
    pub startup_dt: Option<f64>,
    /// Keep every `record_every`-th record; the last step is always kept.
    pub record_every: usize,
    pub snapshot_times: Vec<f64>,
}

impl RunConfig {
    pub fn new(
        params: SchemeParams,
        grid: Arc<Grid>,
        initial: InitialCondition,
        schedule: ScheduleSpec,
        t_end: f64,
    ) -> Self {
        RunConfig {
            params,
            grid,
            initial,
            schedule,
            t_end,
            step: StepOptions::default(),
            startup_dt: None,
            record_every: 1,
            snapshot_times: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "horizon T = {} must be positive",
                self.t_end
            )));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParameter("record_every must be >= 1".into()));
        }
        if let Some(t) = self
            .snapshot_times
            .iter()
            .find(|&&t| !(0.0..=self.t_end).contains(&t))
        {
            return Err(Error::InvalidParameter(format!(
                "snapshot time {t} lies outside [0, {}]",
                self.t_end
            )));
        }
        if let Some(dt) = self.startup_dt {
            if !(dt > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "start-up step {dt} must be positive"
                )));
            }
        }
        Ok(())
    }

    fn build_schedule(&self) -> Result<Option<Schedule>> {
        let Some(s) = self.schedule.build(self.t_end)? else {
            return Ok(None);
        };
        match self.startup_dt {
            Some(dt1) => Ok(Some(s.with_startup(dt1, STARTUP_RAMP_RATIO)?)),
            None => Ok(Some(s)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub requested_time: f64,
    pub time: f64,
    pub step: usize,
    pub field: Field,
}

/// Diagnostics of the initial state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialDiagnostics {
    pub energy: f64,
    pub modified_energy: f64,
    pub discrete_energy_h: f64,
    pub mass: f64,
    pub h2_seminorm: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub final_state: StepState,
    pub initial: InitialDiagnostics,
    pub records: Vec<StepRecord>,
    pub snapshots: Vec<Snapshot>,
    pub steps: usize,
    pub max_ratio: f64,
    pub max_mass_drift: f64,
    pub max_h2_seminorm: f64,
}

enum StepSource {
    Fixed { schedule: Schedule, next: usize },
    Adaptive { params: AdaptiveParams, t_end: f64 },
}

impl StepSource {
    /// Next step size and, for precomputed grids, the node it lands on.
    fn next(&mut self, state: &StepState, rate: f64) -> Result<Option<(f64, f64)>> {
        match self {
            StepSource::Fixed { schedule, next } => {
                if *next == schedule.len() {
                    return Ok(None);
                }
                let k = *next;
                *next += 1;
                Ok(Some((schedule.steps()[k], schedule.times()[k + 1])))
            }
            StepSource::Adaptive { params, t_end } => {
                let remaining = *t_end - state.t_n;
                if remaining <= 1e-12 * *t_end {
                    return Ok(None);
                }
                let dt = if state.step_index == 0 {
                    params.dt_min
                } else {
                    adaptive_next_dt(state.dt_n, rate, params)?
                };
                if dt >= remaining * (1.0 - 1e-12) {
                    Ok(Some((remaining, *t_end)))
                } else {
                    Ok(Some((dt, state.t_n + dt)))
                }
            }
        }
    }
}

/// Runs a configuration: the first step is first order, the rest VBDF2.
///
/// Each record's discrete energy uses the ratio of the step that follows it (1 for the
/// last record). A snapshot is the latest state whose time does not exceed the request.
pub fn run_simulation(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let p = &cfg.params;
    let phi0 = cfg.initial.build(&cfg.grid)?;
    let mut state = StepState::initial(phi0, p)?;
    let mass0 = state.phi_n.mean();
    let initial = InitialDiagnostics {
        energy: energy(&state.phi_n, p),
        modified_energy: modified_energy(&state.phi_n, state.r_n, p),
        discrete_energy_h: modified_energy(&state.phi_n, state.r_n, p),
        mass: mass0,
        h2_seminorm: h2_seminorm(&state.phi_n),
    };

    let energy_source = cfg
        .schedule
        .adaptive_params()
        .map(|a| a.energy_source)
        .unwrap_or_default();
    let pick_energy = |e: f64, e_mod: f64| match energy_source {
        EnergySource::Modified => e_mod,
        EnergySource::Original => e,
    };

    let mut source = match cfg.build_schedule()? {
        Some(schedule) => StepSource::Fixed { schedule, next: 0 },
        None => StepSource::Adaptive {
            params: cfg.schedule.adaptive_params().expect("adaptive"),
            t_end: cfg.t_end,
        },
    };

    let mut pending_snaps: Vec<f64> = cfg.snapshot_times.clone();
    pending_snaps.sort_by(f64::total_cmp);
    let mut pending_snaps = pending_snaps.into_iter().peekable();
    let mut snapshots = Vec::new();
    let snap_tol = 1e-12 * cfg.t_end;

    let mut records = Vec::new();
    let mut pending: Option<StepRecord> = None;
    let mut e_prev = pick_energy(initial.energy, initial.modified_energy);
    let mut e_cur = e_prev;
    let mut max_ratio: f64 = 1.0;
    let mut max_mass_drift: f64 = 0.0;
    let mut max_h2 = initial.h2_seminorm;

    loop {
        let rate = if state.step_index >= 1 {
            energy_rate_estimate(e_cur, e_prev, state.dt_n)?
        } else {
            0.0
        };
        let Some((dt, t_next)) = source.next(&state, rate)? else {
            break;
        };
        if let Some(mut rec) = pending.take() {
            rec.discrete_energy_h = discrete_energy_h(&state, dt / state.dt_n, p)?;
            if rec.step % cfg.record_every == 0 {
                records.push(rec);
            }
        }
        while let Some(&t_req) = pending_snaps.peek() {
            if t_req < t_next - snap_tol {
                snapshots.push(Snapshot {
                    requested_time: t_req,
                    time: state.t_n,
                    step: state.step_index,
                    field: state.phi_n.clone(),
                });
                pending_snaps.next();
            } else {
                break;
            }
        }

        let (mut next, mut rec) = if state.step_index == 0 {
            first_order_step_with(&state, dt, p, &cfg.step)?
        } else {
            vbdf2_step(&state, dt, p, &cfg.step)?
        };
        next.t_n = t_next;
        rec.t_np1 = t_next;
        if state.step_index >= 1 {
            max_ratio = max_ratio.max(rec.gamma_np1);
        }
        max_mass_drift = max_mass_drift.max((rec.mass - mass0).abs());
        max_h2 = max_h2.max(rec.h2_seminorm);
        e_prev = e_cur;
        e_cur = pick_energy(rec.energy, rec.modified_energy);
        state = next;
        pending = Some(rec);
    }
    if let Some(rec) = pending {
        records.push(rec);
    }
    for t_req in pending_snaps {
        snapshots.push(Snapshot {
            requested_time: t_req,
            time: state.t_n,
            step: state.step_index,
            field: state.phi_n.clone(),
        });
    }

    Ok(RunOutput {
        steps: state.step_index,
        final_state: state,
        initial,
        records,
        snapshots,
        max_ratio,
        max_mass_drift,
        max_h2_seminorm: max_h2,
    })
}

/// `φ(T)` from a fine uniform run with step `dt_ref` (last step shortened), keeping the
/// configuration's start-up treatment.
pub fn reference_solution(cfg: &RunConfig, dt_ref: f64) -> Result<Field> {
    let mut reference = cfg.clone();
    reference.schedule = ScheduleSpec::FixedStep { dt: dt_ref };
    reference.snapshot_times.clear();
    reference.record_every = usize::MAX;
    Ok(run_simulation(&reference)?.final_state.phi_n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeshKind {
    Uniform,
    Perturbed,
}

impl std::str::FromStr for MeshKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(MeshKind::Uniform),
            "perturbed" => Ok(MeshKind::Perturbed),
            _ => Err(Error::UnknownKind {
                what: "mesh",
                name: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub tau: f64,
    pub max_gamma: f64,
    pub error_linf: f64,
    pub error_l2: f64,
    /// Observed L∞ order against the previous row; absent for the first row.
    pub order: Option<f64>,
    /// `|ξ − 1|` at the final step.
    pub xi_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSettings {
    pub mesh: MeshKind,
    pub amplitude: f64,
    pub seed: u64,
    pub dt_ref: f64,
}

impl Default for ConvergenceSettings {
    fn default() -> Self {
        ConvergenceSettings {
            mesh: MeshKind::Uniform,
            amplitude: 0.4,
            seed: 0,
            dt_ref: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `log e_∞` against `log τ`.
    pub order_linf: f64,
    /// Least-squares slope of `log |ξ − 1|` against `log τ`.
    pub order_xi: f64,
}

/// Distinct, reproducible mesh seeds per resolution.
pub fn mesh_seed(seed: u64, n: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(n as u64)
        .rotate_left(17)
}

pub fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Errors at `T` against a fine reference for each `N`, with `Δt₁ = τ^{4/3}` enforced.
///
/// Runs for different `N` execute concurrently; results do not depend on that.
pub fn convergence_study(
    cfg: &RunConfig,
    ns: &[usize],
    settings: &ConvergenceSettings,
) -> Result<ConvergenceStudy> {
    if ns.len() < 2 || ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "a convergence study needs at least two increasing resolutions".into(),
        ));
    }
    let mut base = cfg.clone();
    base.snapshot_times.clear();
    base.record_every = usize::MAX;

    let configs: Vec<RunConfig> = ns
        .iter()
        .map(|&n| {
            let tau = base.t_end / n as f64;
            let mut c = base.clone();
            c.schedule = match settings.mesh {
                MeshKind::Uniform => ScheduleSpec::Uniform { steps: n },
                MeshKind::Perturbed => ScheduleSpec::Perturbed {
                    steps: n,
                    amplitude: settings.amplitude,
                    seed: mesh_seed(settings.seed, n),
                },
            };
            c.startup_dt = Some(tau.powf(4.0 / 3.0));
            c
        })
        .collect();
    let mut ref_cfg = base.clone();
    ref_cfg.startup_dt = Some(settings.dt_ref.powf(4.0 / 3.0));

    let (reference, runs) = std::thread::scope(|scope| {
        let reference = scope.spawn(|| reference_solution(&ref_cfg, settings.dt_ref));
        let handles: Vec<_> = configs
            .iter()
            .map(|c| scope.spawn(move || run_simulation(c)))
            .collect();
        let runs: Vec<Result<RunOutput>> = handles
            .into_iter()
            .map(|h| h.join().expect("convergence run panicked"))
            .collect();
        (reference.join().expect("reference run panicked"), runs)
    });
    let reference = reference?;

    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(ns.len());
    for (&n, run) in ns.iter().zip(runs) {
        let run = run?;
        let diff = run.final_state.phi_n.axpby(1.0, &reference, -1.0)?;
        let last = run.records.last().expect("at least one step");
        let tau = cfg.t_end / n as f64;
        let error_linf = diff.max_abs();
        let order = rows
            .last()
            .map(|prev| (prev.error_linf / error_linf).ln() / (prev.tau / tau).ln());
        rows.push(ConvergenceRow {
            n,
            tau,
            max_gamma: run.max_ratio,
            error_linf,
            error_l2: l2_norm(&diff),
            order,
            xi_error: (last.xi - 1.0).abs(),
        });
    }
    let log_tau: Vec<f64> = rows.iter().map(|r| r.tau.ln()).collect();
    let log_e: Vec<f64> = rows.iter().map(|r| r.error_linf.ln()).collect();
    let log_xi: Vec<f64> = rows.iter().map(|r| r.xi_error.ln()).collect();
    Ok(ConvergenceStudy {
        order_linf: least_squares_slope(&log_tau, &log_e),
        order_xi: least_squares_slope(&log_tau, &log_xi),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoarseningVariant {
    /// Uniform `τ = 10⁻²`.
    FixedLarge,
    /// Energy-driven steps in `[10⁻⁴, 10⁻²]`, `γ_adp = 1000`.
    Adaptive,
    /// Uniform `τ = 10⁻⁴`.
    FixedSmall,
}

impl CoarseningVariant {
    pub const ALL: [CoarseningVariant; 3] = [
        CoarseningVariant::FixedLarge,
        CoarseningVariant::Adaptive,
        CoarseningVariant::FixedSmall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CoarseningVariant::FixedLarge => "fixed-large",
            CoarseningVariant::Adaptive => "adaptive",
            CoarseningVariant::FixedSmall => "fixed-small",
        }
    }

    pub fn schedule(self) -> ScheduleSpec {
        match self {
            CoarseningVariant::FixedLarge => ScheduleSpec::FixedStep { dt: 1e-2 },
            CoarseningVariant::FixedSmall => ScheduleSpec::FixedStep { dt: 1e-4 },
            CoarseningVariant::Adaptive => ScheduleSpec::adaptive(
                AdaptiveParams::new(1e-4, 1e-2, 1000.0).expect("valid defaults"),
            ),
        }
    }
}

impl std::str::FromStr for CoarseningVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CoarseningVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::UnknownKind {
                what: "coarsening variant",
                name: s.to_string(),
            })
    }
}

/// Snapshot times shown for the coarsening experiment, clipped to the horizon by callers.
pub const COARSENING_SNAPSHOT_TIMES: [f64; 5] = [0.1, 2.0, 5.0, 20.0, 150.0];

#[derive(Debug, Clone)]
pub struct VariantRun {
    pub variant: CoarseningVariant,
    pub output: RunOutput,
    /// `E(φ)` at each checkpoint, interpolated linearly between steps.
    pub checkpoint_energy: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CoarseningReport {
    pub checkpoints: Vec<f64>,
    pub runs: Vec<VariantRun>,
    /// Largest relative energy gap between the adaptive and fixed-small runs at the checkpoints.
    pub adaptive_deviation: Option<f64>,
}

impl CoarseningReport {
    pub fn run(&self, variant: CoarseningVariant) -> Option<&VariantRun> {
        self.runs.iter().find(|r| r.variant == variant)
    }

    pub fn step_count(&self, variant: CoarseningVariant) -> Option<usize> {
        self.run(variant).map(|r| r.output.steps)
    }
}

/// Piecewise-linear `E(t)` through the records, starting from the initial energy.
pub fn energy_at(initial_energy: f64, records: &[StepRecord], t: f64) -> f64 {
    let mut t0 = 0.0;
    let mut e0 = initial_energy;
    for r in records {
        if r.t_np1 >= t {
            let w = if r.t_np1 > t0 {
                (t - t0) / (r.t_np1 - t0)
            } else {
                1.0
            };
            return e0 + w * (r.energy - e0);
        }
        t0 = r.t_np1;
        e0 = r.energy;
    }
    e0
}

/// Runs the requested variants from the same initial field, in parallel.
pub fn coarsening_experiment(
    cfg: &RunConfig,
    variants: &[CoarseningVariant],
    checkpoints: &[f64],
) -> Result<CoarseningReport> {
    if cfg.params.flow() != Flow::Hminus1 {
        return Err(Error::InvalidParameter(
            "the coarsening experiment needs the H^-1 flow".into(),
        ));
    }
    if variants.is_empty() {
        return Err(Error::InvalidParameter(
            "no coarsening variants requested".into(),
        ));
    }
    if let Some(t) = checkpoints
        .iter()
        .find(|&&t| !(0.0..=cfg.t_end).contains(&t))
    {
        return Err(Error::InvalidParameter(format!(
            "checkpoint {t} lies outside [0, {}]",
            cfg.t_end
        )));
    }
    let configs: Vec<RunConfig> = variants
        .iter()
        .map(|v| {
            let mut c = cfg.clone();
            c.schedule = v.schedule();
            c.record_every = 1;
            c
        })
        .collect();
    let outputs: Vec<Result<RunOutput>> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|c| scope.spawn(move || run_simulation(c)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("coarsening run panicked"))
            .collect()
    });

    let mut runs = Vec::with_capacity(variants.len());
    for (&variant, output) in variants.iter().zip(outputs) {
        let output = output?;
        let checkpoint_energy = checkpoints
            .iter()
            .map(|&t| energy_at(output.initial.energy, &output.records, t))
            .collect();
        runs.push(VariantRun {
            variant,
            output,
            checkpoint_energy,
        });
    }
    let find = |v: CoarseningVariant| runs.iter().find(|r| r.variant == v);
    let adaptive_deviation = match (
        find(CoarseningVariant::Adaptive),
        find(CoarseningVariant::FixedSmall),
    ) {
        (Some(a), Some(f)) => Some(
            a.checkpoint_energy
                .iter()
                .zip(&f.checkpoint_energy)
                .map(|(ea, ef)| (ea - ef).abs() / ef.abs())
                .fold(0.0, f64::max),
        ),
        _ => None,
    };
    Ok(CoarseningReport {
        checkpoints: checkpoints.to_vec(),
        runs,
        adaptive_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VKind;

    #[test]
    fn slope_of_exact_power_law() {
        let x: Vec<f64> = [0.1f64, 0.05, 0.025].iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((least_squares_slope(&x, &y) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn interpolated_energy() {
        let rec = |t: f64, e: f64| StepRecord {
            step: 0,
            t_np1: t,
            dt_np1: 0.0,
            gamma_np1: 1.0,
            xi: 1.0,
            r: 0.0,
            energy: e,
            modified_energy: 0.0,
            discrete_energy_h: 0.0,
            newton_residual: 0.0,
            mass: 0.0,
            h2_seminorm: 0.0,
        };
        let records = [rec(1.0, 10.0), rec(3.0, 6.0)];
        assert_eq!(energy_at(12.0, &records, 0.5), 11.0);
        assert_eq!(energy_at(12.0, &records, 2.0), 8.0);
        assert_eq!(energy_at(12.0, &records, 3.0), 6.0);
    }

    #[test]
    fn short_horizon_takes_one_step() {
        let grid = Grid::square_2pi(8).unwrap();
        let p = SchemeParams::new(0.01, 1.0, 10.0, 1.0, VKind::Linear, Flow::L2).unwrap();
        let cfg = RunConfig::new(
            p,
            grid,
            InitialCondition::SinProduct,
            ScheduleSpec::FixedStep { dt: 0.1 },
            0.01,
        );
        let out = run_simulation(&cfg).unwrap();
        assert_eq!(out.steps, 1);
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.final_state.t_n, 0.01);
    }

    #[test]
    fn mesh_seeds_differ() {
        let seeds: std::collections::HashSet<u64> =
            [20, 40, 80, 160].iter().map(|&n| mesh_seed(7, n)).collect();
        assert_eq!(seeds.len(), 4);
    }
}
