//! Free energy, the nonlinear potential and the scalar-auxiliary-variable quantities.
//!
//! The energy is `E(φ) = ∫ ε²/2 |∇φ|² + F(φ)`. The SAV splitting writes
//! `F(φ) = λ/2 φ² + g(φ)` and carries `r = √E₁(φ)` with `E₁(φ) = ∫ g(φ) + C₀`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::gamma_star_star;
use crate::spectral::{h1_seminorm, l2_norm, Field};

/// Regularity of a potential. The growth conditions on `F''` and `F'''` are assumed, not
/// checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothness {
    C2,
    C3,
    Smooth,
}

/// A pointwise nonlinear potential `F` with its derivative.
pub trait Potential: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
    fn smoothness(&self) -> Smoothness;
}

/// `F(φ) = (φ² − 1)²/4`, `F'(φ) = φ³ − φ`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DoubleWell;

impl Potential for DoubleWell {
    fn name(&self) -> &str {
        "double-well"
    }

    fn value(&self, x: f64) -> f64 {
        let s = x * x - 1.0;
        0.25 * s * s
    }

    fn derivative(&self, x: f64) -> f64 {
        x * x * x - x
    }

    fn smoothness(&self) -> Smoothness {
        Smoothness::Smooth
    }
}

/// Looks up a shipped potential by name.
pub fn potential_by_name(name: &str) -> Result<Arc<dyn Potential>> {
    match name {
        "double-well" => Ok(Arc::new(DoubleWell)),
        other => Err(Error::UnknownKind {
            what: "potential",
            name: other.to_string(),
        }),
    }
}

/// Gradient-flow metric: `G_H = −I` for L², `G_H = Δ` for H⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flow {
    #[serde(rename = "l2")]
    L2,
    #[serde(rename = "h-1")]
    Hminus1,
}

impl Flow {
    /// Fourier symbol of `G_H`.
    pub fn symbol(self, k2: f64) -> f64 {
        match self {
            Flow::L2 => -1.0,
            Flow::Hminus1 => -k2,
        }
    }
}

impl FromStr for Flow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" | "L2" => Ok(Flow::L2),
            "h-1" | "hminus1" | "H-1" => Ok(Flow::Hminus1),
            other => Err(Error::UnknownKind {
                what: "flow",
                name: other.to_string(),
            }),
        }
    }
}

/// Relaxation function `V(ξ)` multiplying the nonlinear term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VKind {
    /// `2 − ξ`
    Linear,
    /// `exp(1 − ξ)`
    Exponential,
    /// `1 + sin(1 − ξ)`
    Sine,
    /// `1`; only used by the first-order start-up step.
    ConstantOne,
}

impl VKind {
    pub const ALL: [VKind; 4] = [
        VKind::Linear,
        VKind::Exponential,
        VKind::Sine,
        VKind::ConstantOne,
    ];

    pub fn value(self, xi: f64) -> f64 {
        match self {
            VKind::Linear => 2.0 - xi,
            VKind::Exponential => (1.0 - xi).exp(),
            VKind::Sine => 1.0 + (1.0 - xi).sin(),
            VKind::ConstantOne => 1.0,
        }
    }

    pub fn derivative(self, xi: f64) -> f64 {
        match self {
            VKind::Linear => -1.0,
            VKind::Exponential => -(1.0 - xi).exp(),
            VKind::Sine => -(1.0 - xi).cos(),
            VKind::ConstantOne => 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            VKind::Linear => "linear",
            VKind::Exponential => "exponential",
            VKind::Sine => "sine",
            VKind::ConstantOne => "constant-one",
        }
    }
}

impl FromStr for VKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" | "2-xi" => Ok(VKind::Linear),
            "exponential" | "exp" => Ok(VKind::Exponential),
            "sine" | "sin" => Ok(VKind::Sine),
            "constant-one" | "one" => Ok(VKind::ConstantOne),
            other => Err(Error::UnknownKind {
                what: "V kind",
                name: other.to_string(),
            }),
        }
    }
}

pub fn v_of_xi(kind: VKind, xi: f64) -> f64 {
    kind.value(xi)
}

pub fn v_prime_of_xi(kind: VKind, xi: f64) -> f64 {
    kind.derivative(xi)
}

fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Model and scheme constants. Construct through [`SchemeParams::new`], which validates
/// every invariant.
#[derive(Debug, Clone)]
pub struct SchemeParams {
    eps2: f64,
    lambda: f64,
    c0: f64,
    sigma: f64,
    v_kind: VKind,
    flow: Flow,
    potential: Arc<dyn Potential>,
    dealias: bool,
    ratio_bound: Option<f64>,
}

impl SchemeParams {
    pub fn new(
        eps2: f64,
        lambda: f64,
        c0: f64,
        sigma: f64,
        v_kind: VKind,
        flow: Flow,
    ) -> Result<Self> {
        Self::with_potential(eps2, lambda, c0, sigma, v_kind, flow, Arc::new(DoubleWell))
    }

    pub fn with_potential(
        eps2: f64,
        lambda: f64,
        c0: f64,
        sigma: f64,
        v_kind: VKind,
        flow: Flow,
        potential: Arc<dyn Potential>,
    ) -> Result<Self> {
        if !(eps2.is_finite() && eps2 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eps2 = {eps2} must be > 0"
            )));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda = {lambda} must be >= 0"
            )));
        }
        if !c0.is_finite() {
            return Err(Error::InvalidParameter(format!("c0 = {c0} must be finite")));
        }
        if !(0.5..=1.0).contains(&sigma) {
            return Err(Error::InvalidParameter(format!(
                "sigma = {sigma} must lie in [1/2, 1]"
            )));
        }
        check_v_kind(v_kind)?;
        check_potential(potential.as_ref())?;
        let ratio_bound = if sigma > 0.5 {
            Some(gamma_star_star(sigma)?)
        } else {
            None
        };
        Ok(SchemeParams {
            eps2,
            lambda,
            c0,
            sigma,
            v_kind,
            flow,
            potential,
            dealias: false,
            ratio_bound,
        })
    }

    /// Same parameters with a different SAV shift.
    pub fn with_c0(mut self, c0: f64) -> Result<Self> {
        if !c0.is_finite() {
            return Err(Error::InvalidParameter(format!("c0 = {c0} must be finite")));
        }
        self.c0 = c0;
        Ok(self)
    }

    /// Enables 2/3-rule truncation of the explicit nonlinear term.
    pub fn with_dealiasing(mut self, on: bool) -> Self {
        self.dealias = on;
        self
    }

    pub fn eps2(&self) -> f64 {
        self.eps2
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn v_kind(&self) -> VKind {
        self.v_kind
    }

    pub fn flow(&self) -> Flow {
        self.flow
    }

    pub fn potential(&self) -> &dyn Potential {
        self.potential.as_ref()
    }

    pub fn dealias(&self) -> bool {
        self.dealias
    }

    /// `γ**(σ)`, or `None` for `σ = 1/2` where every ratio is admissible.
    pub fn ratio_bound(&self) -> Option<f64> {
        self.ratio_bound
    }

    /// Symbol of `−ε²Δ + λ`.
    pub fn linear_symbol(&self, k2: f64) -> f64 {
        self.eps2 * k2 + self.lambda
    }

    /// Symbol of `−G_H(−ε²Δ + λ)`, non-negative for both flows.
    pub fn dissipation_symbol(&self, k2: f64) -> f64 {
        -self.flow.symbol(k2) * self.linear_symbol(k2)
    }
}

fn check_v_kind(kind: VKind) -> Result<()> {
    if kind == VKind::ConstantOne {
        return Err(Error::InvalidParameter(
            "V = 1 violates V'(1) = -1; it is reserved for the first-order start-up step".into(),
        ));
    }
    let v1 = kind.value(1.0);
    let dv1 = central_difference(|x| kind.value(x), 1.0, 1e-5);
    if (v1 - 1.0).abs() > 1e-12 || (dv1 + 1.0).abs() > 1e-6 {
        return Err(Error::InvalidParameter(format!(
            "V kind {} fails V(1)=1, V'(1)=-1 (got {v1}, {dv1})",
            kind.name()
        )));
    }
    Ok(())
}

fn check_potential(potential: &dyn Potential) -> Result<()> {
    const SAMPLES: [f64; 7] = [-1.7, -1.0, -0.3, 0.0, 0.45, 1.0, 2.1];
    for x in SAMPLES {
        let fd = central_difference(|s| potential.value(s), x, 1e-5);
        if (fd - potential.derivative(x)).abs() > 1e-6 {
            return Err(Error::InvalidParameter(format!(
                "potential {}: F' disagrees with finite difference of F at {x}",
                potential.name()
            )));
        }
    }
    Ok(())
}

/// Pointwise `g(φ) = F(φ) − λ/2 φ²`.
pub fn g_value(phi: &Field, p: &SchemeParams) -> Field {
    let f = p.potential();
    let half_lambda = 0.5 * p.lambda;
    phi.map(|v| f.value(v) - half_lambda * v * v)
}

/// Pointwise `g'(φ) = F'(φ) − λφ`.
pub fn g_prime(phi: &Field, p: &SchemeParams) -> Field {
    let f = p.potential();
    let lambda = p.lambda;
    phi.map(|v| f.derivative(v) - lambda * v)
}

/// `E₁(φ) = ∫ g(φ) + C₀`; fails when the result is not positive.
pub fn e1(phi: &Field, p: &SchemeParams) -> Result<f64> {
    let integral = g_value(phi, p).integral();
    let value = integral + p.c0;
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::EnergyShiftTooSmall {
            e1: value,
            suggested_c0: suggested_c0(integral),
            step: None,
        })
    }
}

/// Smallest admissible shift making `E₁ = 1`, never negative.
pub fn suggested_c0(g_integral: f64) -> f64 {
    (1.0 - g_integral).max(0.0)
}

/// Original free energy `∫ ε²/2 |∇φ|² + F(φ)`.
pub fn energy(phi: &Field, p: &SchemeParams) -> f64 {
    let f = p.potential();
    let grad = h1_seminorm(phi);
    0.5 * p.eps2 * grad * grad + phi.map(|v| f.value(v)).integral()
}

/// `ε²/2 ‖∇φ‖² + λ/2 ‖φ‖² + r²`.
pub fn modified_energy(phi: &Field, r: f64, p: &SchemeParams) -> f64 {
    let grad = h1_seminorm(phi);
    let l2 = l2_norm(phi);
    0.5 * p.eps2 * grad * grad + 0.5 * p.lambda * l2 * l2 + r * r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Grid;
    use std::f64::consts::PI;

    fn params(lambda: f64, c0: f64) -> SchemeParams {
        SchemeParams::new(0.01, lambda, c0, 1.0, VKind::Linear, Flow::L2).unwrap()
    }

    fn grid() -> Arc<Grid> {
        Grid::square_2pi(16).unwrap()
    }

    #[test]
    fn g_at_constants() {
        let p = params(1.0, 0.0);
        let zero = Field::zeros(grid());
        assert!(g_value(&zero, &p).values().iter().all(|&v| v == 0.25));
        assert!(g_prime(&zero, &p).values().iter().all(|&v| v == 0.0));

        let one = Field::constant(grid(), 1.0);
        assert!(g_value(&one, &p).values().iter().all(|&v| v == -0.5));
        assert!(g_prime(&one, &p).values().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn g_equals_f_without_stabilization() {
        let p = params(0.0, 0.0);
        let phi = Field::from_fn(grid(), |x, y| 1.3 * x.sin() * y.cos());
        let g = g_value(&phi, &p);
        let gp = g_prime(&phi, &p);
        for ((v, gv), gpv) in phi.values().iter().zip(g.values()).zip(gp.values()) {
            assert_eq!(*gv, DoubleWell.value(*v));
            assert_eq!(*gpv, DoubleWell.derivative(*v));
        }
    }

    #[test]
    fn g_prime_matches_finite_difference() {
        let p = params(1.0, 0.0);
        let h = 1e-5;
        for x in [-1.5, -0.7, 0.0, 0.2, 0.99, 1.8] {
            let fx = |s: f64| {
                let f = Field::constant(grid(), s);
                g_value(&f, &p).values()[0]
            };
            let fd = (fx(x + h) - fx(x - h)) / (2.0 * h);
            let exact = g_prime(&Field::constant(grid(), x), &p).values()[0];
            assert!((fd - exact).abs() < 1e-6);
        }
    }

    #[test]
    fn e1_values_and_shift_error() {
        let p = params(1.0, 0.0);
        let zero = Field::zeros(grid());
        assert!((e1(&zero, &p).unwrap() - PI * PI).abs() < 1e-12);

        let one = Field::constant(grid(), 1.0);
        match e1(&one, &p) {
            Err(Error::EnergyShiftTooSmall {
                e1, suggested_c0, ..
            }) => {
                assert!((e1 + 2.0 * PI * PI).abs() < 1e-12);
                assert!((suggested_c0 - (1.0 + 2.0 * PI * PI)).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }

        let phi = Field::from_fn(grid(), |x, y| 0.8 * (x + y).sin());
        let integral = g_value(&phi, &p).integral();
        let p1 = params(1.0, 1.0 - integral);
        assert!((e1(&phi, &p1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn e1_shift_is_additive() {
        let phi = Field::from_fn(grid(), |x, y| 0.3 * x.cos() + 0.1 * y.sin());
        let a = e1(&phi, &params(1.0, 7.5)).unwrap();
        let b = e1(&phi, &params(1.0, 2.0)).unwrap();
        assert!((a - b - 5.5).abs() < 1e-12);
    }

    #[test]
    fn energy_of_zero_field() {
        let p = params(1.0, 0.0);
        assert!((energy(&Field::zeros(grid()), &p) - PI * PI).abs() < 1e-12);
        assert_eq!(modified_energy(&Field::zeros(grid()), 0.0, &p), 0.0);
        assert!((modified_energy(&Field::zeros(grid()), PI, &p) - PI * PI).abs() < 1e-14);
    }

    #[test]
    fn energy_of_sine_product() {
        // ∫F(sin x sin y) = ∫(s⁴ − 2s² + 1)/4 = (9π²/16 − 2π² + 4π²)/4 = 41π²/64.
        let p = params(1.0, 0.0);
        let phi = Field::from_fn(grid(), |x, y| x.sin() * y.sin());
        let expected = 0.01 / 2.0 * 2.0 * PI * PI + 41.0 * PI * PI / 64.0;
        assert!((energy(&phi, &p) - expected).abs() < 1e-10);
    }

    #[test]
    fn energy_is_resolution_independent_for_band_limited_fields() {
        let p = params(1.0, 0.0);
        let f = |x: f64, y: f64| 0.4 * x.sin() * (2.0 * y).cos() + 0.2 * (x + y).cos();
        let coarse = energy(&Field::from_fn(Grid::square_2pi(32).unwrap(), f), &p);
        let fine = energy(&Field::from_fn(Grid::square_2pi(64).unwrap(), f), &p);
        assert!((coarse - fine).abs() <= 1e-10 * fine.abs());
    }

    #[test]
    fn modified_energy_matches_energy_plus_shift_initially() {
        let p = params(1.0, 3.0);
        let phi = Field::from_fn(grid(), |x, y| 0.5 * x.sin() * y.sin());
        let r = e1(&phi, &p).unwrap().sqrt();
        let lhs = modified_energy(&phi, r, &p);
        assert!((lhs - energy(&phi, &p) - 3.0).abs() < 1e-10);
    }

    #[test]
    fn v_kinds() {
        for kind in VKind::ALL {
            assert_eq!(v_of_xi(kind, 1.0), 1.0);
        }
        for kind in [VKind::Linear, VKind::Exponential, VKind::Sine] {
            let fd = central_difference(|x| kind.value(x), 1.0, 1e-5);
            assert!((fd + 1.0).abs() < 1e-6);
            for xi in [0.3, 0.9, 1.4] {
                let fd = central_difference(|x| kind.value(x), xi, 1e-5);
                assert!((fd - v_prime_of_xi(kind, xi)).abs() < 1e-6);
            }
        }
        assert!([0.0, 5.0, -3.0]
            .iter()
            .all(|&x| v_prime_of_xi(VKind::Linear, x) == -1.0));
        assert!((v_of_xi(VKind::Exponential, 0.0) - std::f64::consts::E).abs() < 1e-15);
        assert!("cubic".parse::<VKind>().is_err());
        assert_eq!("exp".parse::<VKind>().unwrap(), VKind::Exponential);
    }

    #[test]
    fn parameter_validation() {
        assert!(SchemeParams::new(0.0, 1.0, 0.0, 1.0, VKind::Linear, Flow::L2).is_err());
        assert!(SchemeParams::new(0.01, -1.0, 0.0, 1.0, VKind::Linear, Flow::L2).is_err());
        assert!(SchemeParams::new(0.01, 1.0, 0.0, 0.4, VKind::Linear, Flow::L2).is_err());
        assert!(SchemeParams::new(0.01, 1.0, 0.0, 1.1, VKind::Linear, Flow::L2).is_err());
        assert!(SchemeParams::new(0.01, 1.0, 0.0, 1.0, VKind::ConstantOne, Flow::L2).is_err());
        let half = SchemeParams::new(0.01, 1.0, 0.0, 0.5, VKind::Sine, Flow::Hminus1).unwrap();
        assert!(half.ratio_bound().is_none());
        let one = params(1.0, 0.0);
        assert!((one.ratio_bound().unwrap() - 4.8645).abs() < 5e-4);
    }

    #[derive(Debug)]
    struct Broken;

    impl Potential for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn value(&self, x: f64) -> f64 {
            x * x
        }
        fn derivative(&self, x: f64) -> f64 {
            x
        }
        fn smoothness(&self) -> Smoothness {
            Smoothness::Smooth
        }
    }

    #[test]
    fn inconsistent_potential_is_rejected() {
        let r = SchemeParams::with_potential(
            0.01,
            1.0,
            0.0,
            1.0,
            VKind::Linear,
            Flow::L2,
            Arc::new(Broken),
        );
        assert!(r.is_err());
        assert!(potential_by_name("flory-huggins").is_err());
        assert_eq!(
            potential_by_name("double-well").unwrap().name(),
            "double-well"
        );
    }
}
