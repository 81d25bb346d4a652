//! Time grids and the energy-based adaptive step controller.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ratio cap of the adaptive controller; the largest admissible ratio for classical BDF2.
pub const DEFAULT_RATIO_CAP: f64 = 4.8645;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScheduleKind {
    Uniform,
    Perturbed { amplitude: f64, seed: u64 },
    Explicit,
}

/// A precomputed time grid `0 = t₀ < t₁ < … < t_N = T`.
///
/// Step sizes are stored alongside the nodes so that uniform grids have ratios of exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    kind: ScheduleKind,
    times: Vec<f64>,
    dts: Vec<f64>,
}

impl Schedule {
    /// Explicit node list; must start at 0 and increase strictly.
    pub fn from_times(times: Vec<f64>) -> Result<Schedule> {
        if times.len() < 2 || times[0] != 0.0 {
            return Err(Error::InvalidParameter(
                "a schedule needs at least two nodes starting at t = 0".into(),
            ));
        }
        let mut dts = Vec::with_capacity(times.len() - 1);
        for w in times.windows(2) {
            let dt = w[1] - w[0];
            if !(dt > 0.0 && w[1].is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "schedule nodes must increase strictly ({} then {})",
                    w[0], w[1]
                )));
            }
            dts.push(dt);
        }
        Ok(Schedule {
            kind: ScheduleKind::Explicit,
            times,
            dts,
        })
    }

    /// Nodes from a list of positive step sizes.
    pub fn from_steps(dts: &[f64]) -> Result<Schedule> {
        let mut times = Vec::with_capacity(dts.len() + 1);
        let mut t = 0.0;
        times.push(t);
        for &dt in dts {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "step size {dt} must be positive"
                )));
            }
            t += dt;
            times.push(t);
        }
        let mut s = Schedule::from_times(times)?;
        s.dts = dts.to_vec();
        Ok(s)
    }

    /// Constant step `dt` with the last step shortened so that `t_N = T`.
    pub fn fixed_step(t_end: f64, dt: f64) -> Result<Schedule> {
        if !(dt > 0.0 && dt.is_finite() && t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "fixed step {dt} and horizon {t_end} must be positive"
            )));
        }
        let n = ((t_end / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let mut times: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        times.push(t_end);
        let mut dts = vec![dt; n];
        dts[n - 1] = t_end - times[n - 1];
        Ok(Schedule {
            kind: ScheduleKind::Explicit,
            times,
            dts,
        })
    }

    pub fn kind(&self) -> &ScheduleKind {
        &self.kind
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> &[f64] {
        &self.dts
    }

    pub fn len(&self) -> usize {
        self.dts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dts.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("schedule has nodes")
    }

    /// Mean step `T/N`.
    pub fn tau(&self) -> f64 {
        self.horizon() / self.len() as f64
    }

    /// Ratios `Δt_{n+1}/Δt_n`, one per step after the first.
    pub fn ratios(&self) -> Vec<f64> {
        self.dts.windows(2).map(|w| w[1] / w[0]).collect()
    }

    pub fn max_ratio(&self) -> f64 {
        self.ratios().into_iter().fold(1.0, f64::max)
    }

    /// Replaces the first interval `[0, t₁]` by a geometric ramp that starts with `dt1` and
    /// grows by a common ratio of at most `max_ratio`, so that the start-up step is small
    /// without creating a large ratio.
    ///
    /// Leaves the schedule unchanged when its first step is already `≤ dt1`.
    pub fn with_startup(&self, dt1: f64, max_ratio: f64) -> Result<Schedule> {
        if !(dt1 > 0.0 && max_ratio > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "start-up step {dt1} and ratio bound {max_ratio} must satisfy dt1 > 0, ratio > 1"
            )));
        }
        let first = self.dts[0];
        if first <= dt1 {
            return Ok(self.clone());
        }
        let geometric_sum = |q: f64, m: i32| {
            if q == 1.0 {
                dt1 * m as f64
            } else {
                dt1 * (q.powi(m) - 1.0) / (q - 1.0)
            }
        };
        let mut m = 2;
        while geometric_sum(max_ratio, m) < first {
            m += 1;
        }
        let (mut lo, mut hi) = (1.0, max_ratio);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if geometric_sum(mid, m) < first {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let q = 0.5 * (lo + hi);
        let mut ramp: Vec<f64> = (0..m - 1).map(|i| dt1 * q.powi(i)).collect();
        // The last ramp step absorbs the bisection residue so the node t₁ is kept exactly.
        let covered: f64 = ramp.iter().sum();
        ramp.push(first - covered);

        let mut times = vec![0.0];
        let mut t = 0.0;
        for dt in &ramp[..ramp.len() - 1] {
            t += dt;
            times.push(t);
        }
        times.extend_from_slice(&self.times[1..]);
        let mut dts = ramp;
        dts.extend_from_slice(&self.dts[1..]);
        Ok(Schedule {
            kind: self.kind.clone(),
            times,
            dts,
        })
    }
}

fn check_horizon(t_end: f64, n: usize) -> Result<()> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "horizon T = {t_end} must be positive"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "a schedule needs N >= 2 steps (got {n})"
        )));
    }
    Ok(())
}

/// `tₙ = nT/N`.
pub fn uniform_schedule(t_end: f64, n: usize) -> Result<Schedule> {
    check_horizon(t_end, n)?;
    let tau = t_end / n as f64;
    let mut times: Vec<f64> = (0..=n).map(|i| i as f64 * t_end / n as f64).collect();
    times[n] = t_end;
    Ok(Schedule {
        kind: ScheduleKind::Uniform,
        times,
        dts: vec![tau; n],
    })
}

/// Uniform nodes displaced by `amplitude·τ·u` with `u` uniform on `(−1/2, 1/2)`; the end points
/// stay fixed. `amplitude < 1` keeps the nodes ordered.
pub fn perturbed_schedule(t_end: f64, n: usize, amplitude: f64, seed: u64) -> Result<Schedule> {
    check_horizon(t_end, n)?;
    if !(0.0..1.0).contains(&amplitude) {
        return Err(Error::InvalidParameter(format!(
            "perturbation amplitude {amplitude} must lie in [0, 1)"
        )));
    }
    if amplitude == 0.0 {
        let mut s = uniform_schedule(t_end, n)?;
        s.kind = ScheduleKind::Perturbed { amplitude, seed };
        return Ok(s);
    }
    let tau = t_end / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times = Vec::with_capacity(n + 1);
    times.push(0.0);
    for i in 1..n {
        let u: f64 = rng.gen_range(-0.5..0.5);
        times.push(i as f64 * tau + amplitude * tau * u);
    }
    times.push(t_end);
    let mut s = Schedule::from_times(times)?;
    s.kind = ScheduleKind::Perturbed { amplitude, seed };
    Ok(s)
}

/// Which energy drives the adaptive controller.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnergySource {
    /// `E_Mod`, the quantity the scheme dissipates.
    #[default]
    Modified,
    /// The original free energy `E(φ)`.
    Original,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveParams {
    pub dt_min: f64,
    pub dt_max: f64,
    pub gamma_adp: f64,
    #[serde(default = "default_ratio_cap")]
    pub ratio_cap: f64,
    #[serde(default)]
    pub energy_source: EnergySource,
}

fn default_ratio_cap() -> f64 {
    DEFAULT_RATIO_CAP
}

impl AdaptiveParams {
    pub fn new(dt_min: f64, dt_max: f64, gamma_adp: f64) -> Result<Self> {
        let p = AdaptiveParams {
            dt_min,
            dt_max,
            gamma_adp,
            ratio_cap: DEFAULT_RATIO_CAP,
            energy_source: EnergySource::Modified,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_max && self.dt_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "adaptive bounds need 0 < dt_min <= dt_max (got {}, {})",
                self.dt_min, self.dt_max
            )));
        }
        if !(self.gamma_adp >= 0.0 && self.gamma_adp.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma_adp = {} must be non-negative",
                self.gamma_adp
            )));
        }
        if !(self.ratio_cap > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "ratio_cap = {} must be positive",
                self.ratio_cap
            )));
        }
        Ok(())
    }

    /// True when `dt_min` exceeds the ratio-capped step and therefore wins.
    pub fn floor_overrides_cap(&self, dt_n: f64) -> bool {
        self.dt_min > self.ratio_cap * dt_n
    }
}

/// `Δt_{n+1} = min(max(Δt_min, Δt_max/√(1+γ|E'|²)), cap·Δtₙ)`.
///
/// When `Δt_min > cap·Δtₙ` the floor is returned and the cap violation is logged.
pub fn adaptive_next_dt(dt_n: f64, energy_rate: f64, p: &AdaptiveParams) -> Result<f64> {
    p.validate()?;
    if !(dt_n > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "previous step {dt_n} must be positive"
        )));
    }
    let proposal = p.dt_max / (1.0 + p.gamma_adp * energy_rate * energy_rate).sqrt();
    let capped = p.dt_min.max(proposal).min(p.ratio_cap * dt_n);
    if p.floor_overrides_cap(dt_n) {
        log::warn!(
            "dt_min = {} exceeds ratio cap {} x dt_n = {}; using dt_min",
            p.dt_min,
            p.ratio_cap,
            p.ratio_cap * dt_n
        );
        return Ok(p.dt_min);
    }
    Ok(capped)
}

/// Backward difference `(Eₙ − Eₙ₋₁)/Δtₙ`.
pub fn energy_rate_estimate(e_n: f64, e_nm1: f64, dt_n: f64) -> Result<f64> {
    if !(dt_n > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "step {dt_n} must be positive"
        )));
    }
    Ok((e_n - e_nm1) / dt_n)
}
