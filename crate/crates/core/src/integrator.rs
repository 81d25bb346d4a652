//! Time-stepping kernels.
//!
//! The second-order step discretizes the SAV system at `t_{n+σ} = t_n + σΔt_{n+1}` with the
//! variable-step stencil
//!
//! ```text
//! F₂φ = [ (1+2σγ)/(1+γ) φⁿ⁺¹ − (1+(2σ−1)γ) φⁿ + (2σ−1)γ²/(1+γ) φⁿ⁻¹ ] / Δt,
//! ```
//!
//! `γ = Δt_{n+1}/Δt_n`, and treats the nonlinear term explicitly at
//! `φ* = φⁿ + σγ(φⁿ − φⁿ⁻¹)`. Writing `φⁿ⁺¹ = φ₁ + ξV(ξ)φ₂` decouples the update into two
//! constant-coefficient solves and a scalar equation `W(ξ) = 0` for `ξ = rⁿ⁺¹/√E₁ⁿ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{e1, energy, g_prime, modified_energy, SchemeParams, VKind};
use crate::spectral::{
    forward, h2_seminorm, hminus1_norm_projected, inverse, l2_norm, solve_symbol_spectral, Field,
    SpectralField,
};

/// Weights of the σ-stencil, `F₂φ = a_np1·φⁿ⁺¹ + a_n·φⁿ + a_nm1·φⁿ⁻¹`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bdf2Coeffs {
    pub a_np1: f64,
    pub a_n: f64,
    pub a_nm1: f64,
}

fn check_sigma(sigma: f64) -> Result<()> {
    if (0.5..=1.0).contains(&sigma) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "sigma = {sigma} must lie in [1/2, 1]"
        )))
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {v} must be > 0")))
    }
}

pub fn bdf2_coeffs(gamma: f64, sigma: f64, dt_np1: f64) -> Result<Bdf2Coeffs> {
    check_positive("gamma", gamma)?;
    check_positive("dt", dt_np1)?;
    check_sigma(sigma)?;
    let w = 2.0 * sigma - 1.0;
    Ok(Bdf2Coeffs {
        a_np1: (1.0 + 2.0 * sigma * gamma) / ((1.0 + gamma) * dt_np1),
        a_n: -(1.0 + w * gamma) / dt_np1,
        a_nm1: w * gamma * gamma / ((1.0 + gamma) * dt_np1),
    })
}

/// Stability kernel `G(s, z)`; the discrete energy decays whenever `G(γ_{n+1}, γ_{n+2}) ≥ 0`.
pub fn g_stability(s: f64, z: f64, sigma: f64) -> Result<f64> {
    if !(s >= 0.0 && z >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "G(s, z) needs s, z >= 0 (got {s}, {z})"
        )));
    }
    check_sigma(sigma)?;
    Ok(g_kernel(s, z, sigma))
}

fn g_kernel(s: f64, z: f64, sigma: f64) -> f64 {
    let w = 2.0 * sigma - 1.0;
    (2.0 + 4.0 * sigma * s - w * s.powf(1.5)) / (1.0 + s) - w * z.powf(1.5) / (1.0 + z)
}

/// Largest admissible step ratio `γ**(σ)`: the positive root of `z ↦ G(z, z)`.
///
/// There is no finite root at `σ = 1/2` (`G(z, z) = 2`), which is reported as
/// [`Error::UnboundedThreshold`].
pub fn gamma_star_star(sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if sigma == 0.5 {
        return Err(Error::UnboundedThreshold { sigma });
    }
    let diag = |z: f64| g_kernel(z, z, sigma);
    let mut lo = 0.0;
    let mut hi = 1.0;
    while diag(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::UnboundedThreshold { sigma });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if diag(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Weight `(2σ−1)γ^{3/2}/(2(1+γ))` of the history term in the discrete energy.
pub fn history_weight(gamma: f64, sigma: f64) -> f64 {
    (2.0 * sigma - 1.0) * gamma.powf(1.5) / (2.0 * (1.0 + gamma))
}

/// Slack of the scalar stencil inequality
///
/// ```text
/// (φⁿ⁺¹ − φⁿ)·F₂φ ≥ Gⁿ⁺¹ − Gⁿ + G(γ_{n+1}, γ_{n+2})·(φⁿ⁺¹ − φⁿ)²/(2Δt_{n+1}),
/// Gⁿ = history_weight(γ_{n+1})·(φⁿ − φⁿ⁻¹)²/Δtₙ,
/// ```
///
/// for values `[φⁿ⁻¹, φⁿ, φⁿ⁺¹]` and steps `[Δtₙ, Δt_{n+1}, Δt_{n+2}]`. Returns
/// `(lhs − rhs, |lhs| + |rhs|)`.
pub fn stencil_inequality_gap(phi: [f64; 3], dt: [f64; 3], sigma: f64) -> Result<(f64, f64)> {
    for d in dt {
        check_positive("dt", d)?;
    }
    let [a, b, c] = phi;
    let g1 = dt[1] / dt[0];
    let g2 = dt[2] / dt[1];
    let k = bdf2_coeffs(g1, sigma, dt[1])?;
    let lhs = (c - b) * (k.a_np1 * c + k.a_n * b + k.a_nm1 * a);
    let g_next = history_weight(g2, sigma) * (c - b).powi(2) / dt[1];
    let g_prev = history_weight(g1, sigma) * (b - a).powi(2) / dt[0];
    let rhs = g_next - g_prev + g_kernel(g1, g2, sigma) * (c - b).powi(2) / (2.0 * dt[1]);
    Ok((lhs - rhs, lhs.abs() + rhs.abs()))
}

/// `φ* = φⁿ + σγ(φⁿ − φⁿ⁻¹)`.
pub fn extrapolate(phi_n: &Field, phi_nm1: &Field, sigma: f64, gamma: f64) -> Result<Field> {
    let increment = phi_n.axpby(1.0, phi_nm1, -1.0)?;
    Ok(phi_n.axpby_unchecked(1.0, &increment, sigma * gamma))
}

/// How the scalar equation for ξ is solved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NewtonPolicy {
    /// A fixed number of Newton iterations from ξ = 1.
    Fixed(usize),
    /// Iterate until `|W(ξ)| ≤ tol`.
    Converged { tol: f64, max_iter: usize },
}

impl Default for NewtonPolicy {
    fn default() -> Self {
        NewtonPolicy::Fixed(1)
    }
}

impl NewtonPolicy {
    pub fn converged() -> Self {
        NewtonPolicy::Converged {
            tol: 1e-12,
            max_iter: 50,
        }
    }
}

/// What to do when a step ratio exceeds `γ**(σ)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatioPolicy {
    #[default]
    Warn,
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepOptions {
    pub newton: NewtonPolicy,
    pub ratio_policy: RatioPolicy,
    /// Run the two constant-coefficient solves on separate threads.
    pub parallel_solves: bool,
}

/// The two-level integrator window.
#[derive(Debug, Clone)]
pub struct StepState {
    pub phi_n: Field,
    /// Absent before the first step.
    pub phi_nm1: Option<Field>,
    pub r_n: f64,
    /// Last step size; zero before the first step.
    pub dt_n: f64,
    pub t_n: f64,
    pub step_index: usize,
    /// Cached `E₁(φⁿ)`.
    pub e1_n: f64,
}

impl StepState {
    /// Starts a run at `t = 0` with `r⁰ = √E₁(φ⁰)`.
    pub fn initial(phi0: Field, p: &SchemeParams) -> Result<Self> {
        if !phi0.is_finite() {
            return Err(Error::NonFinite { step: 0 });
        }
        let e1_0 = e1(&phi0, p).map_err(|e| e.at_step(0))?;
        Ok(StepState {
            phi_n: phi0,
            phi_nm1: None,
            r_n: e1_0.sqrt(),
            dt_n: 0.0,
            t_n: 0.0,
            step_index: 0,
            e1_n: e1_0,
        })
    }
}

/// Per-step diagnostics. Serialized names match the CSV header.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    #[serde(rename = "t")]
    pub t_np1: f64,
    #[serde(rename = "dt")]
    pub dt_np1: f64,
    /// `Δt_{n+1}/Δt_n`; reported as 1 for the start-up step.
    #[serde(rename = "gamma")]
    pub gamma_np1: f64,
    pub xi: f64,
    pub r: f64,
    pub energy: f64,
    pub modified_energy: f64,
    /// Computed with the upcoming step ratio once the driver knows it, otherwise with γ = 1.
    #[serde(rename = "discrete_energy_H")]
    pub discrete_energy_h: f64,
    pub newton_residual: f64,
    pub mass: f64,
    pub h2_seminorm: f64,
}

/// Scalar equation `W(ξ) = ξs − rⁿ − V(ξ)/(2s)·[ξV(ξ)c + b]` with
/// `s = √E₁ⁿ`, `b = (g'(φ*), φ₁ − φⁿ)` and `c = (g'(φ*), φ₂)`.
#[derive(Debug, Clone, Copy)]
struct XiEquation {
    s: f64,
    r_n: f64,
    b: f64,
    c: f64,
    kind: VKind,
}

impl XiEquation {
    fn w(&self, xi: f64) -> f64 {
        let v = self.kind.value(xi);
        xi * self.s - self.r_n - v / (2.0 * self.s) * (xi * v * self.c + self.b)
    }

    fn dw(&self, xi: f64) -> f64 {
        let v = self.kind.value(xi);
        let dv = self.kind.derivative(xi);
        self.s
            - dv / (2.0 * self.s) * (xi * v * self.c + self.b)
            - v / (2.0 * self.s) * (v + xi * dv) * self.c
    }

    fn newton_step(&self, xi: f64) -> Result<f64> {
        let d = self.dw(xi);
        if !(d.abs() >= 1e-14 * self.s) {
            return Err(Error::NewtonSingular {
                derivative: d,
                step: None,
            });
        }
        Ok(xi - self.w(xi) / d)
    }

    fn solve(&self, policy: NewtonPolicy) -> Result<(f64, f64)> {
        let mut xi = 1.0;
        match policy {
            NewtonPolicy::Fixed(iters) => {
                if iters == 0 {
                    return Err(Error::InvalidParameter(
                        "at least one Newton iteration is required".into(),
                    ));
                }
                for _ in 0..iters {
                    xi = self.newton_step(xi)?;
                }
            }
            NewtonPolicy::Converged { tol, max_iter } => {
                let mut iter = 0;
                while self.w(xi).abs() > tol {
                    if iter == max_iter.max(1) {
                        break;
                    }
                    let next = self.newton_step(xi)?;
                    if next == xi {
                        break;
                    }
                    xi = next;
                    iter += 1;
                }
            }
        }
        Ok((xi, self.w(xi).abs()))
    }
}

/// Solves for ξⁿ⁺¹ with `iters` Newton iterations started at ξ = 1; returns `(ξ, |W(ξ)|)`.
#[allow(clippy::too_many_arguments)]
pub fn newton_xi(
    phi1: &Field,
    phi2: &Field,
    phi_n: &Field,
    gprime_star: &Field,
    r_n: f64,
    e1_n: f64,
    p: &SchemeParams,
    iters: usize,
) -> Result<(f64, f64)> {
    newton_xi_with(
        phi1,
        phi2,
        phi_n,
        gprime_star,
        r_n,
        e1_n,
        p,
        NewtonPolicy::Fixed(iters),
    )
}

#[allow(clippy::too_many_arguments)]
pub fn newton_xi_with(
    phi1: &Field,
    phi2: &Field,
    phi_n: &Field,
    gprime_star: &Field,
    r_n: f64,
    e1_n: f64,
    p: &SchemeParams,
    policy: NewtonPolicy,
) -> Result<(f64, f64)> {
    check_positive("E1", e1_n)?;
    phi1.same_grid(phi2)?;
    phi1.same_grid(phi_n)?;
    phi1.same_grid(gprime_star)?;
    xi_equation(phi1, phi2, phi_n, gprime_star, r_n, e1_n, p.v_kind()).solve(policy)
}

fn xi_equation(
    phi1: &Field,
    phi2: &Field,
    phi_n: &Field,
    gprime_star: &Field,
    r_n: f64,
    e1_n: f64,
    kind: VKind,
) -> XiEquation {
    XiEquation {
        s: e1_n.sqrt(),
        r_n,
        b: gprime_star.inner_unchecked(&phi1.axpby_unchecked(1.0, phi_n, -1.0)),
        c: gprime_star.inner_unchecked(phi2),
        kind,
    }
}

fn nonlinear_term(phi: &Field, p: &SchemeParams) -> Field {
    let gp = g_prime(phi, p);
    if p.dealias() {
        gp.dealiased()
    } else {
        gp
    }
}

/// Spectral right-hand side `h(φⁿ, φⁿ⁻¹) = −a_n φⁿ − a_nm1 φⁿ⁻¹ + (1−σ) G_H(−ε²Δ+λ) φⁿ`.
fn rhs_spectral(
    phi_n: &SpectralField,
    phi_nm1: &SpectralField,
    coeffs: &Bdf2Coeffs,
    p: &SchemeParams,
) -> Result<SpectralField> {
    let history = phi_n.axpby(-coeffs.a_n, phi_nm1, -coeffs.a_nm1)?;
    let explicit_part = 1.0 - p.sigma();
    if explicit_part == 0.0 {
        return Ok(history);
    }
    let relax = phi_n.apply_symbol(|k2| -explicit_part * p.dissipation_symbol(k2));
    history.axpby(1.0, &relax, 1.0)
}

/// Right-hand side of the φ₁ problem.
pub fn vbdf2_rhs(
    phi_n: &Field,
    phi_nm1: &Field,
    gamma: f64,
    dt: f64,
    p: &SchemeParams,
) -> Result<Field> {
    phi_n.same_grid(phi_nm1)?;
    let coeffs = bdf2_coeffs(gamma, p.sigma(), dt)?;
    Ok(inverse(&rhs_spectral(
        &forward(phi_n),
        &forward(phi_nm1),
        &coeffs,
        p,
    )?))
}

/// Solves `(α + θ·S) u = rhs` for both right-hand sides, where `S` is the symbol of
/// `−G_H(−ε²Δ+λ)` and `θ` the implicit weight.
fn split_solve(
    h: &SpectralField,
    gprime: &SpectralField,
    alpha: f64,
    theta: f64,
    p: &SchemeParams,
    parallel: bool,
) -> Result<(Field, Field)> {
    let (a0, a1, a2) = match p.flow() {
        crate::model::Flow::L2 => (alpha + theta * p.lambda(), theta * p.eps2(), 0.0),
        crate::model::Flow::Hminus1 => (alpha, theta * p.lambda(), theta * p.eps2()),
    };
    let flow = p.flow();
    let solve1 = || solve_symbol_spectral(a0, a1, a2, h).map(|s| inverse(&s));
    let solve2 = || {
        let rhs = gprime.apply_symbol(|k2| flow.symbol(k2));
        solve_symbol_spectral(a0, a1, a2, &rhs).map(|s| inverse(&s))
    };
    if parallel {
        std::thread::scope(|scope| {
            let second = scope.spawn(solve2);
            let first = solve1();
            let second = second.join().expect("solve thread panicked");
            Ok((first?, second?))
        })
    } else {
        Ok((solve1()?, solve2()?))
    }
}

/// Returns `(φ₁, φ₂)` solving `(α − σG_H(−ε²Δ+λ))φ₁ = h` and
/// `(α − σG_H(−ε²Δ+λ))φ₂ = G_H g'(φ*)` with `α = (1+2σγ)/((1+γ)Δt)`.
pub fn solve_phi1_phi2(
    h: &Field,
    gprime_star: &Field,
    gamma: f64,
    dt: f64,
    p: &SchemeParams,
) -> Result<(Field, Field)> {
    solve_phi1_phi2_with(h, gprime_star, gamma, dt, p, false)
}

pub fn solve_phi1_phi2_with(
    h: &Field,
    gprime_star: &Field,
    gamma: f64,
    dt: f64,
    p: &SchemeParams,
    parallel: bool,
) -> Result<(Field, Field)> {
    h.same_grid(gprime_star)?;
    let coeffs = bdf2_coeffs(gamma, p.sigma(), dt)?;
    split_solve(
        &forward(h),
        &forward(gprime_star),
        coeffs.a_np1,
        p.sigma(),
        p,
        parallel,
    )
}

fn check_ratio(gamma: f64, step: usize, p: &SchemeParams, policy: RatioPolicy) -> Result<()> {
    if let Some(bound) = p.ratio_bound() {
        if gamma > bound {
            match policy {
                RatioPolicy::Warn => log::warn!(
                    "step {step}: ratio {gamma:.4} exceeds gamma**({}) = {bound:.4}",
                    p.sigma()
                ),
                RatioPolicy::Error => {
                    return Err(Error::RatioViolation { gamma, bound, step });
                }
            }
        }
    }
    Ok(())
}

/// First-order SAV step with `V ≡ 1`, used to start every run.
///
/// With `φⁿ⁺¹ = φ₁ + ξφ₂`, `(1/Δt − G_H(−ε²Δ+λ))φ₁ = φⁿ/Δt` and
/// `(1/Δt − G_H(−ε²Δ+λ))φ₂ = G_H g'(φⁿ)`, the auxiliary equation
/// `rⁿ⁺¹ − rⁿ = (g'(φⁿ), φⁿ⁺¹ − φⁿ)/(2√E₁ⁿ)` is linear in `ξ = rⁿ⁺¹/√E₁ⁿ`:
///
/// ```text
/// ξ = (rⁿ + b/(2s)) / (s − c/(2s)),   s = √E₁ⁿ, b = (g', φ₁ − φⁿ), c = (g', φ₂).
/// ```
///
/// `c ≤ 0` for both flows, so the denominator is at least `s`.
pub fn first_order_step(
    state: &StepState,
    dt: f64,
    p: &SchemeParams,
) -> Result<(StepState, StepRecord)> {
    first_order_step_with(state, dt, p, &StepOptions::default())
}

pub fn first_order_step_with(
    state: &StepState,
    dt: f64,
    p: &SchemeParams,
    opts: &StepOptions,
) -> Result<(StepState, StepRecord)> {
    check_positive("dt", dt)?;
    check_positive("E1", state.e1_n)?;
    let step = state.step_index + 1;
    let gamma = if state.dt_n > 0.0 {
        dt / state.dt_n
    } else {
        1.0
    };

    let gp = nonlinear_term(&state.phi_n, p);
    let alpha = 1.0 / dt;
    let h = forward(&state.phi_n).apply_symbol(|_| alpha);
    let (phi1, phi2) = split_solve(&h, &forward(&gp), alpha, 1.0, p, opts.parallel_solves)?;

    let eq = xi_equation(
        &phi1,
        &phi2,
        &state.phi_n,
        &gp,
        state.r_n,
        state.e1_n,
        VKind::ConstantOne,
    );
    let denominator = eq.s - eq.c / (2.0 * eq.s);
    if !(denominator.abs() >= 1e-14 * eq.s) {
        return Err(Error::SingularScalar {
            denominator,
            step: Some(step),
        });
    }
    let xi = (eq.r_n + eq.b / (2.0 * eq.s)) / denominator;
    let residual = eq.w(xi).abs();
    let phi_np1 = phi1.axpby_unchecked(1.0, &phi2, xi);
    finish_step(state, phi_np1, xi * eq.s, dt, gamma, xi, residual, p)
}

/// One VBDF2 step from a state with at least one completed step.
pub fn vbdf2_step(
    state: &StepState,
    dt_np1: f64,
    p: &SchemeParams,
    opts: &StepOptions,
) -> Result<(StepState, StepRecord)> {
    check_positive("dt", dt_np1)?;
    check_positive("E1", state.e1_n)?;
    let step = state.step_index + 1;
    let phi_nm1 = match (&state.phi_nm1, state.step_index) {
        (Some(prev), i) if i >= 1 && state.dt_n > 0.0 => prev,
        _ => {
            return Err(Error::InvalidParameter(
                "the VBDF2 step needs a completed first step".into(),
            ))
        }
    };
    let gamma = dt_np1 / state.dt_n;
    check_ratio(gamma, step, p, opts.ratio_policy)?;

    let sigma = p.sigma();
    let coeffs = bdf2_coeffs(gamma, sigma, dt_np1)?;
    let star = extrapolate(&state.phi_n, phi_nm1, sigma, gamma)?;
    let gp = nonlinear_term(&star, p);
    let h = rhs_spectral(&forward(&state.phi_n), &forward(phi_nm1), &coeffs, p)?;
    let (phi1, phi2) = split_solve(
        &h,
        &forward(&gp),
        coeffs.a_np1,
        sigma,
        p,
        opts.parallel_solves,
    )?;

    let eq = xi_equation(
        &phi1,
        &phi2,
        &state.phi_n,
        &gp,
        state.r_n,
        state.e1_n,
        p.v_kind(),
    );
    let (xi, residual) = eq.solve(opts.newton).map_err(|e| e.at_step(step))?;
    let phi_np1 = phi1.axpby_unchecked(1.0, &phi2, xi * p.v_kind().value(xi));
    finish_step(state, phi_np1, xi * eq.s, dt_np1, gamma, xi, residual, p)
}

#[allow(clippy::too_many_arguments)]
fn finish_step(
    state: &StepState,
    phi_np1: Field,
    r_np1: f64,
    dt: f64,
    gamma: f64,
    xi: f64,
    newton_residual: f64,
    p: &SchemeParams,
) -> Result<(StepState, StepRecord)> {
    let step = state.step_index + 1;
    if !phi_np1.is_finite() || !r_np1.is_finite() {
        return Err(Error::NonFinite { step });
    }
    let e1_np1 = e1(&phi_np1, p).map_err(|e| e.at_step(step))?;
    let next = StepState {
        phi_nm1: Some(state.phi_n.clone()),
        phi_n: phi_np1,
        r_n: r_np1,
        dt_n: dt,
        t_n: state.t_n + dt,
        step_index: step,
        e1_n: e1_np1,
    };
    let record = StepRecord {
        step,
        t_np1: next.t_n,
        dt_np1: dt,
        gamma_np1: gamma,
        xi,
        r: r_np1,
        energy: energy(&next.phi_n, p),
        modified_energy: modified_energy(&next.phi_n, r_np1, p),
        discrete_energy_h: discrete_energy_h(&next, 1.0, p)?,
        newton_residual,
        mass: next.phi_n.mean(),
        h2_seminorm: h2_seminorm(&next.phi_n),
    };
    Ok((next, record))
}

/// Discrete modified energy
/// `E_H = (2σ−1)γ^{3/2}/(2(1+γ))·‖φⁿ − φⁿ⁻¹‖²_★/Δtₙ + E_Mod`.
///
/// `γ` is the ratio of the upcoming step to the last completed one (1 when there is
/// none). `★` is the L² norm for the L² flow and the `∇⁻¹` norm for the H⁻¹ flow.
pub fn discrete_energy_h(state: &StepState, gamma_next: f64, p: &SchemeParams) -> Result<f64> {
    let e_mod = modified_energy(&state.phi_n, state.r_n, p);
    let prev = match &state.phi_nm1 {
        Some(prev) if state.step_index >= 1 && state.dt_n > 0.0 => prev,
        _ => return Ok(e_mod),
    };
    check_positive("gamma", gamma_next)?;
    let weight = history_weight(gamma_next, p.sigma());
    if weight == 0.0 {
        return Ok(e_mod);
    }
    let increment = state.phi_n.axpby(1.0, prev, -1.0)?;
    let sq = match p.flow() {
        crate::model::Flow::L2 => l2_norm(&increment).powi(2),
        crate::model::Flow::Hminus1 => {
            // Mass drift is judged against the field scale: increments of a slowly varying
            // solution can be far smaller than the round-off in the mean.
            let scale = state.phi_n.max_abs().max(prev.max_abs());
            let mean = increment.mean();
            if mean.abs() > crate::spectral::MEAN_ZERO_TOL * scale {
                return Err(Error::NotMeanZero { mean, scale });
            }
            hminus1_norm_projected(&increment).powi(2)
        }
    };
    Ok(e_mod + weight * sq / state.dt_n)
}

/// Relative residual of the discrete equations `F₂φ = G_H μ^{n+σ}`,
/// `μ^{n+σ} = (−ε²Δ+λ)φ^{n+σ} + ξV(ξ)g'(φ*)`, for a computed `(φⁿ⁺¹, ξ)`.
///
/// This is the only place μ is formed explicitly.
#[allow(clippy::too_many_arguments)]
pub fn scheme_residual(
    phi_nm1: &Field,
    phi_n: &Field,
    phi_np1: &Field,
    xi: f64,
    gamma: f64,
    dt: f64,
    p: &SchemeParams,
) -> Result<f64> {
    phi_n.same_grid(phi_nm1)?;
    phi_n.same_grid(phi_np1)?;
    let sigma = p.sigma();
    let coeffs = bdf2_coeffs(gamma, sigma, dt)?;
    let (hat_nm1, hat_n, hat_np1) = (forward(phi_nm1), forward(phi_n), forward(phi_np1));
    let stencil =
        hat_np1
            .axpby(coeffs.a_np1, &hat_n, coeffs.a_n)?
            .axpby(1.0, &hat_nm1, coeffs.a_nm1)?;

    let star = extrapolate(phi_n, phi_nm1, sigma, gamma)?;
    let gp = forward(&nonlinear_term(&star, p));
    let phi_sigma = hat_np1.axpby(sigma, &hat_n, 1.0 - sigma)?;
    let mu = phi_sigma.apply_symbol(|k2| p.linear_symbol(k2)).axpby(
        1.0,
        &gp,
        xi * p.v_kind().value(xi),
    )?;
    let flow = p.flow();
    let rhs = mu.apply_symbol(|k2| flow.symbol(k2));

    let diff = stencil.axpby(1.0, &rhs, -1.0)?;
    let norm = |s: &SpectralField| l2_norm(&inverse(s));
    let scale = norm(&stencil).max(norm(&rhs));
    Ok(if scale > 0.0 {
        norm(&diff) / scale
    } else {
        0.0
    })
}
