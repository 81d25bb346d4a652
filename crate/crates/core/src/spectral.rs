//! Doubly periodic Fourier pseudo-spectral machinery.
//!
//! Nodal fields live on the uniform grid `x_i = i·lx/nx`, `y_j = j·ly/ny` and are stored
//! row-major (`index = j·nx + i`). Spectral coefficients use the same layout over mode
//! indices in the symmetric range `{0, 1, …, n/2−1, −n/2, …, −1}`.
//!
//! Transform convention: the forward transform is unnormalized,
//! `F[k] = Σ_j f[j]·exp(−i k·x_j)`, and the inverse carries the full `1/(nx·ny)` factor.
//! The `(0,0)` coefficient is therefore `nx·ny·mean(f)`. Every norm and inner product is
//! computed with the physical quadrature weight `lx·ly/(nx·ny)` so reported values do not
//! depend on this choice.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Relative tolerance (against `‖f‖_∞`) for treating a field as mean-zero.
pub const MEAN_ZERO_TOL: f64 = 1e-10;

/// Periodic 2D grid together with its wavenumbers and FFT plans.
///
/// Immutable after construction; share it behind an `Arc`.
pub struct Grid {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    kx: Vec<f64>,
    ky: Vec<f64>,
    k2: Vec<f64>,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("nx", &self.nx)
            .field("ny", &self.ny)
            .field("lx", &self.lx)
            .field("ly", &self.ly)
            .finish()
    }
}

/// Signed mode index for position `i` of an `n`-point transform.
fn mode_index(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

impl Grid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Arc<Self>> {
        for (name, n) in [("nx", nx), ("ny", ny)] {
            if n < 4 || n % 2 != 0 {
                return Err(Error::InvalidGrid(format!(
                    "{name} = {n} must be an even integer >= 4"
                )));
            }
        }
        for (name, l) in [("lx", lx), ("ly", ly)] {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidGrid(format!("{name} = {l} must be positive")));
            }
        }

        let kx: Vec<f64> = (0..nx)
            .map(|i| 2.0 * PI * mode_index(i, nx) as f64 / lx)
            .collect();
        let ky: Vec<f64> = (0..ny)
            .map(|j| 2.0 * PI * mode_index(j, ny) as f64 / ly)
            .collect();
        let mut k2 = Vec::with_capacity(nx * ny);
        for kyj in &ky {
            for kxi in &kx {
                k2.push(kxi * kxi + kyj * kyj);
            }
        }

        let mut planner = FftPlanner::new();
        Ok(Arc::new(Grid {
            nx,
            ny,
            lx,
            ly,
            kx,
            ky,
            k2,
            fwd_x: planner.plan_fft_forward(nx),
            inv_x: planner.plan_fft_inverse(nx),
            fwd_y: planner.plan_fft_forward(ny),
            inv_y: planner.plan_fft_inverse(ny),
        }))
    }

    /// The paper-style square domain `(0, 2π)²`.
    pub fn square_2pi(n: usize) -> Result<Arc<Self>> {
        Self::new(n, n, 2.0 * PI, 2.0 * PI)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn lx(&self) -> f64 {
        self.lx
    }

    pub fn ly(&self) -> f64 {
        self.ly
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn kx(&self) -> &[f64] {
        &self.kx
    }

    pub fn ky(&self) -> &[f64] {
        &self.ky
    }

    /// `|k|²` per mode, row-major like the coefficients.
    pub fn k2(&self) -> &[f64] {
        &self.k2
    }

    /// Quadrature weight of a single node.
    pub fn cell_weight(&self) -> f64 {
        self.lx * self.ly / (self.nx * self.ny) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.lx / self.nx as f64
    }

    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.ly / self.ny as f64
    }

    /// Signed mode indices `(mx, my)` of flat coefficient position `idx`.
    pub fn modes_of(&self, idx: usize) -> (i64, i64) {
        (
            mode_index(idx % self.nx, self.nx),
            mode_index(idx / self.nx, self.ny),
        )
    }

    /// Flat coefficient position of signed modes `(mx, my)`.
    pub fn index_of(&self, mx: i64, my: i64) -> usize {
        let ix = mx.rem_euclid(self.nx as i64) as usize;
        let iy = my.rem_euclid(self.ny as i64) as usize;
        iy * self.nx + ix
    }

    /// True when the mode survives 2/3-rule truncation.
    pub fn dealias_keeps(&self, idx: usize) -> bool {
        let (mx, my) = self.modes_of(idx);
        mx.unsigned_abs() as usize <= self.nx / 3 && my.unsigned_abs() as usize <= self.ny / 3
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.lx == other.lx && self.ly == other.ly
    }

    fn describe(&self) -> String {
        format!("{}x{} on {}x{}", self.nx, self.ny, self.lx, self.ly)
    }

    /// In-place 2D FFT over row-major data.
    fn transform(&self, data: &mut [Complex64], forward: bool) {
        let (row_plan, col_plan) = if forward {
            (&self.fwd_x, &self.fwd_y)
        } else {
            (&self.inv_x, &self.inv_y)
        };
        row_plan.process(data);

        let (nx, ny) = (self.nx, self.ny);
        let mut columns = vec![Complex64::new(0.0, 0.0); nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                columns[i * ny + j] = data[j * nx + i];
            }
        }
        col_plan.process(&mut columns);
        for i in 0..nx {
            for j in 0..ny {
                data[j * nx + i] = columns[i * ny + j];
            }
        }
    }
}

/// Convenience wrapper matching the grid constructor.
pub fn make_grid(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Arc<Grid>> {
    Grid::new(nx, ny, lx, ly)
}

fn check_grids(a: &Arc<Grid>, b: &Arc<Grid>) -> Result<()> {
    if Arc::ptr_eq(a, b) || a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::GridMismatch {
            left: a.describe(),
            right: b.describe(),
        })
    }
}

/// Real nodal values on a [`Grid`].
#[derive(Clone)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Field")
            .field("grid", &self.grid)
            .field("mean", &self.mean())
            .field("max_abs", &self.max_abs())
            .finish()
    }
}

impl Field {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidField(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!(
                "non-finite value at node {pos}"
            )));
        }
        Ok(Field { grid, values })
    }

    pub(crate) fn from_raw(grid: Arc<Grid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Field { grid, values }
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Arc<Grid>, value: f64) -> Self {
        let n = grid.len();
        Field {
            grid,
            values: vec![value; n],
        }
    }

    /// Samples `f(x, y)` at the grid nodes.
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny() {
            let y = grid.y(j);
            for i in 0..grid.nx() {
                values.push(f(grid.x(i), y));
            }
        }
        Field { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_grid(&self, other: &Field) -> Result<()> {
        check_grids(&self.grid, &other.grid)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Quadrature of the field over the domain.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_weight()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Quadrature inner product `(self, other)`.
    pub fn inner(&self, other: &Field) -> Result<f64> {
        self.same_grid(other)?;
        Ok(self.inner_unchecked(other))
    }

    pub(crate) fn inner_unchecked(&self, other: &Field) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * self.grid.cell_weight()
    }

    /// `a·self + b·other`.
    pub fn axpby(&self, a: f64, other: &Field, b: f64) -> Result<Field> {
        self.same_grid(other)?;
        Ok(self.axpby_unchecked(a, other, b))
    }

    pub(crate) fn axpby_unchecked(&self, a: f64, other: &Field, b: f64) -> Field {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Field::from_raw(self.grid.clone(), values)
    }

    pub fn scaled(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_raw(
            self.grid.clone(),
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Copy with every mode outside the 2/3-rule band removed.
    pub fn dealiased(&self) -> Field {
        let grid = self.grid.clone();
        let spec = forward(self).map_modes(|idx, c| {
            if grid.dealias_keeps(idx) {
                c
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        inverse(&spec)
    }

    fn check_mean_zero(&self) -> Result<()> {
        let mean = self.mean();
        let scale = self.max_abs();
        if mean.abs() <= MEAN_ZERO_TOL * scale || mean == 0.0 {
            Ok(())
        } else {
            Err(Error::NotMeanZero { mean, scale })
        }
    }
}

/// Complex Fourier coefficients of a real field.
#[derive(Clone)]
pub struct SpectralField {
    grid: Arc<Grid>,
    coeffs: Vec<Complex64>,
}

impl fmt::Debug for SpectralField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralField")
            .field("grid", &self.grid)
            .finish()
    }
}

impl SpectralField {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Coefficient of signed modes `(mx, my)`.
    pub fn mode(&self, mx: i64, my: i64) -> Complex64 {
        self.coeffs[self.grid.index_of(mx, my)]
    }

    /// Multiplies each coefficient by a real symbol of `|k|²`.
    pub fn apply_symbol(&self, symbol: impl Fn(f64) -> f64) -> SpectralField {
        let coeffs = self
            .coeffs
            .iter()
            .zip(self.grid.k2())
            .map(|(c, &k2)| c * symbol(k2))
            .collect();
        SpectralField {
            grid: self.grid.clone(),
            coeffs,
        }
    }

    pub fn map_modes(&self, f: impl Fn(usize, Complex64) -> Complex64) -> SpectralField {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| f(i, c))
            .collect();
        SpectralField {
            grid: self.grid.clone(),
            coeffs,
        }
    }

    /// `a·self + b·other`.
    pub fn axpby(&self, a: f64, other: &SpectralField, b: f64) -> Result<SpectralField> {
        check_grids(&self.grid, &other.grid)?;
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(x, y)| x * a + y * b)
            .collect();
        Ok(SpectralField {
            grid: self.grid.clone(),
            coeffs,
        })
    }

    /// `∫ w(|k|²)·|f̂|²`-type quadratic form evaluated through Parseval.
    fn weighted_square_sum(&self, weight: impl Fn(f64) -> f64) -> f64 {
        let n = self.grid.len() as f64;
        let scale = self.grid.lx() * self.grid.ly() / (n * n);
        self.coeffs
            .iter()
            .zip(self.grid.k2())
            .map(|(c, &k2)| weight(k2) * c.norm_sqr())
            .sum::<f64>()
            * scale
    }
}

pub fn forward(f: &Field) -> SpectralField {
    let mut coeffs: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    f.grid.transform(&mut coeffs, true);
    SpectralField {
        grid: f.grid.clone(),
        coeffs,
    }
}

/// Inverse transform; the (round-off level) imaginary part is discarded.
pub fn inverse(spec: &SpectralField) -> Field {
    let mut data = spec.coeffs.clone();
    spec.grid.transform(&mut data, false);
    let scale = 1.0 / spec.grid.len() as f64;
    Field::from_raw(
        spec.grid.clone(),
        data.into_iter().map(|c| c.re * scale).collect(),
    )
}

pub fn apply_laplacian(f: &Field) -> Field {
    inverse(&forward(f).apply_symbol(|k2| -k2))
}

/// Solves `Δu = f` for mean-zero `u`; `f` itself must be mean-zero.
pub fn inverse_laplacian(f: &Field) -> Result<Field> {
    f.check_mean_zero()?;
    Ok(inverse(&forward(f).apply_symbol(|k2| {
        if k2 > 0.0 {
            -1.0 / k2
        } else {
            0.0
        }
    })))
}

pub fn l2_norm(f: &Field) -> f64 {
    f.inner_unchecked(f).sqrt()
}

pub fn linf_norm(f: &Field) -> f64 {
    f.max_abs()
}

/// `‖∇f‖`.
pub fn h1_seminorm(f: &Field) -> f64 {
    forward(f).weighted_square_sum(|k2| k2).sqrt()
}

/// `‖Δf‖`.
pub fn h2_seminorm(f: &Field) -> f64 {
    forward(f).weighted_square_sum(|k2| k2 * k2).sqrt()
}

/// `‖∇⁻¹f‖ = (f, (−Δ)⁻¹f)^{1/2}` for mean-zero `f`.
pub fn hminus1_norm(f: &Field) -> Result<f64> {
    f.check_mean_zero()?;
    Ok(hminus1_norm_projected(f))
}

/// `‖∇⁻¹(f − mean f)‖`: the zero mode is dropped without a tolerance check.
pub fn hminus1_norm_projected(f: &Field) -> f64 {
    forward(f)
        .weighted_square_sum(|k2| if k2 > 0.0 { 1.0 / k2 } else { 0.0 })
        .sqrt()
}

/// Inner product evaluated from the spectral coefficients (Parseval).
pub fn spectral_inner(f: &Field, g: &Field) -> Result<f64> {
    f.same_grid(g)?;
    let (a, b) = (forward(f), forward(g));
    let n = f.grid.len() as f64;
    let scale = f.grid.lx() * f.grid.ly() / (n * n);
    Ok(a.coeffs
        .iter()
        .zip(&b.coeffs)
        .map(|(x, y)| (x * y.conj()).re)
        .sum::<f64>()
        * scale)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub l2: f64,
    pub linf: f64,
    pub h1_semi: f64,
    /// `None` when the field is not mean-zero.
    pub hminus1: Option<f64>,
}

pub fn norms(f: &Field) -> Norms {
    Norms {
        l2: l2_norm(f),
        linf: linf_norm(f),
        h1_semi: h1_seminorm(f),
        hminus1: hminus1_norm(f).ok(),
    }
}

/// Solves `(a0 − a1·Δ + a2·Δ²) u = rhs`, i.e. divides each mode by `a0 + a1|k|² + a2|k|⁴`.
pub fn solve_symbol(a0: f64, a1: f64, a2: f64, rhs: &Field) -> Result<Field> {
    Ok(inverse(&solve_symbol_spectral(a0, a1, a2, &forward(rhs))?))
}

pub(crate) fn solve_symbol_spectral(
    a0: f64,
    a1: f64,
    a2: f64,
    rhs: &SpectralField,
) -> Result<SpectralField> {
    let grid = rhs.grid.clone();
    let mut coeffs = Vec::with_capacity(rhs.coeffs.len());
    for (idx, (c, &k2)) in rhs.coeffs.iter().zip(grid.k2()).enumerate() {
        let s = a0 + a1 * k2 + a2 * k2 * k2;
        let magnitude = a0.abs() + a1.abs() * k2 + a2.abs() * k2 * k2;
        if !s.is_finite() || s.abs() <= f64::EPSILON * magnitude || s == 0.0 {
            let (mx, my) = grid.modes_of(idx);
            return Err(Error::SingularSymbol { mx, my });
        }
        coeffs.push(c / s);
    }
    Ok(SpectralField { grid, coeffs })
}
