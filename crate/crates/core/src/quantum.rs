//! Exact quantum predictions for the ideal spin-singlet experiment.
//!
//! Angles follow the spin-1/2 convention: a measurement along angle `θ` in
//! the x–z plane uses the unit vector `n(θ) = (sin θ, 0, cos θ)` and the
//! singlet correlation is `−cos(θ_x − θ_y)`. Photon-polarization experiments
//! use doubled angles (`−cos 2θ`); convert at the boundary if needed.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};

const MAX_DIM: usize = 8;
const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);

/// Dense row-major complex matrix, at most 8×8.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 || rows > MAX_DIM || cols > MAX_DIM {
            return Err(Error::input(format!(
                "matrix dimensions {rows}x{cols} outside 1..={MAX_DIM}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::input(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::input("matrix entries must be finite"));
        }
        Ok(ComplexMatrix { rows, cols, data })
    }

    pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::new(rows, cols, data.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        ComplexMatrix {
            rows,
            cols,
            data: vec![C0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = C1;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn matmul(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.cols != other.rows {
            return Err(Error::input(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == C0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        let rows = self.rows * other.rows;
        let cols = self.cols * other.cols;
        if rows > MAX_DIM || cols > MAX_DIM {
            return Err(Error::input(format!(
                "tensor product {rows}x{cols} exceeds the {MAX_DIM}x{MAX_DIM} engine limit"
            )));
        }
        let mut out = Self::zeros(rows, cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self.get(i, j);
                for k in 0..other.rows {
                    for l in 0..other.cols {
                        out.set(i * other.rows + k, j * other.cols + l, a * other.get(k, l));
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn adjoint(&self) -> ComplexMatrix {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j).conj());
            }
        }
        out
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn scale(&self, s: Complex64) -> ComplexMatrix {
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &ComplexMatrix) -> f64 {
        if self.rows != other.rows || self.cols != other.cols {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.rows == self.cols && self.max_abs_diff(&self.adjoint()) <= tol
    }

    /// Traces out one factor of a `da·db` square matrix viewed as `A ⊗ B`.
    /// `keep_first = true` returns the reduced matrix on `A`.
    pub fn partial_trace(&self, da: usize, db: usize, keep_first: bool) -> Result<ComplexMatrix> {
        if self.rows != da * db || self.cols != da * db {
            return Err(Error::input("partial trace dimensions do not match"));
        }
        let n = if keep_first { da } else { db };
        let mut out = Self::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = C0;
                if keep_first {
                    for k in 0..db {
                        acc += self.get(i * db + k, j * db + k);
                    }
                } else {
                    for k in 0..da {
                        acc += self.get(k * db + i, k * db + j);
                    }
                }
                out.set(i, j, acc);
            }
        }
        Ok(out)
    }

    /// Eigenvalues of a Hermitian matrix, ascending. Uses the real symmetric
    /// embedding `[[Re, −Im], [Im, Re]]`, whose spectrum is the Hermitian
    /// spectrum with every value doubled, diagonalised by cyclic Jacobi.
    pub fn hermitian_eigenvalues(&self) -> Result<Vec<f64>> {
        if !self.is_hermitian(1e-9) {
            return Err(Error::input("eigenvalues requested for a non-Hermitian matrix"));
        }
        let n = self.rows;
        let m = 2 * n;
        let mut a = vec![0.0; m * m];
        for i in 0..n {
            for j in 0..n {
                let z = self.get(i, j);
                a[i * m + j] = z.re;
                a[(i + n) * m + (j + n)] = z.re;
                a[i * m + (j + n)] = -z.im;
                a[(i + n) * m + j] = z.im;
            }
        }
        let mut ev = jacobi_eigenvalues(&mut a, m);
        ev.sort_by(f64::total_cmp);
        Ok(ev.chunks(2).map(|p| 0.5 * (p[0] + p[1])).collect())
    }
}

fn jacobi_eigenvalues(a: &mut [f64], n: usize) -> Vec<f64> {
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

/// Density matrix of a one- or two-qubit system.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    rho: ComplexMatrix,
}

impl QuantumState {
    /// Validates Hermiticity, unit trace and positivity before accepting `rho`.
    pub fn from_density_matrix(rho: ComplexMatrix) -> Result<Self> {
        if rho.rows() != rho.cols() || !(rho.rows() == 2 || rho.rows() == 4) {
            return Err(Error::input("density matrix must be 2x2 or 4x4"));
        }
        if !rho.is_hermitian(1e-12) {
            return Err(Error::input("density matrix is not Hermitian"));
        }
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > 1e-12 || tr.im.abs() > 1e-12 {
            return Err(Error::input(format!("density matrix trace {tr} is not 1")));
        }
        let min_ev = rho.hermitian_eigenvalues()?[0];
        if min_ev < -1e-10 {
            return Err(Error::input(format!(
                "density matrix has negative eigenvalue {min_ev:e}"
            )));
        }
        Ok(QuantumState { rho })
    }

    pub fn rho(&self) -> &ComplexMatrix {
        &self.rho
    }

    pub fn dim(&self) -> usize {
        self.rho.rows()
    }

    /// Re-runs the validity checks at tolerance `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let tr = self.rho.trace();
        self.rho.is_hermitian(tol)
            && (tr.re - 1.0).abs() <= tol
            && tr.im.abs() <= tol
            && self
                .rho
                .hermitian_eigenvalues()
                .map(|ev| ev[0] >= -tol)
                .unwrap_or(false)
    }
}

/// The two-particle singlet `(|+−⟩ − |−+⟩)/√2`, written in the `θ = 0`
/// eigenbasis.
pub fn singlet_vector() -> [Complex64; 4] {
    let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
    [C0, h, -h, C0]
}

pub fn singlet_state() -> QuantumState {
    let psi = singlet_vector();
    let mut rho = ComplexMatrix::zeros(4, 4);
    for i in 0..4 {
        for j in 0..4 {
            rho.set(i, j, psi[i] * psi[j].conj());
        }
    }
    QuantumState { rho }
}

/// Spin projection `σ·n(θ)` with `n(θ) = (sin θ, 0, cos θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinObservable {
    angle: f64,
    matrix: ComplexMatrix,
}

impl SpinObservable {
    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    /// Normalised eigenvector for eigenvalue `outcome` (±1), closed form.
    pub fn eigenvector(&self, outcome: i8) -> [Complex64; 2] {
        let (s, c) = (0.5 * self.angle).sin_cos();
        if outcome > 0 {
            [Complex64::new(c, 0.0), Complex64::new(s, 0.0)]
        } else {
            [Complex64::new(-s, 0.0), Complex64::new(c, 0.0)]
        }
    }

    /// Rank-one projector onto the `outcome` eigenspace.
    pub fn projector(&self, outcome: i8) -> ComplexMatrix {
        let v = self.eigenvector(outcome);
        let mut p = ComplexMatrix::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                p.set(i, j, v[i] * v[j].conj());
            }
        }
        p
    }
}

pub fn spin_observable(theta: f64) -> Result<SpinObservable> {
    if !theta.is_finite() {
        return Err(Error::input(format!("angle {theta} is not finite")));
    }
    let (s, c) = theta.sin_cos();
    let matrix = ComplexMatrix::from_real(2, 2, &[c, s, s, -c])?;
    Ok(SpinObservable {
        angle: theta,
        matrix,
    })
}

/// `p(α, β)` for α, β ∈ {+1, −1}, indexed `[α][β]` with index 0 for `+1`.
pub type JointTable = [[f64; 2]; 2];

pub const OUTCOMES: [i8; 2] = [1, -1];

fn require_two_qubits(state: &QuantumState) -> Result<()> {
    if state.dim() != 4 {
        return Err(Error::input(format!(
            "two-arm prediction needs a 4-dimensional state, got dimension {}",
            state.dim()
        )));
    }
    Ok(())
}

/// Born-rule joint outcome probabilities `Tr(ρ P_α ⊗ P_β)`.
pub fn joint_probabilities(state: &QuantumState, theta_x: f64, theta_y: f64) -> Result<JointTable> {
    require_two_qubits(state)?;
    let ax = spin_observable(theta_x)?;
    let by = spin_observable(theta_y)?;
    let mut table = [[0.0; 2]; 2];
    for (i, &alpha) in OUTCOMES.iter().enumerate() {
        for (j, &beta) in OUTCOMES.iter().enumerate() {
            let proj = ax.projector(alpha).kron(&by.projector(beta))?;
            let p = state.rho.matmul(&proj)?.trace().re;
            // round-off can leave tiny negatives on exact zeros
            table[i][j] = p.max(0.0);
        }
    }
    Ok(table)
}

/// `E(A_x B_y) = Tr(ρ Â_x ⊗ B̂_y)`.
pub fn correlation(state: &QuantumState, theta_x: f64, theta_y: f64) -> Result<f64> {
    require_two_qubits(state)?;
    let op = spin_observable(theta_x)?
        .matrix
        .kron(spin_observable(theta_y)?.matrix())?;
    Ok(state.rho.matmul(&op)?.trace().re)
}

/// CHSH combination of singlet correlations for settings `(a, a', b, b')`.
pub fn chsh_quantum(a: f64, a_prime: f64, b: f64, b_prime: f64) -> Result<f64> {
    let state = singlet_state();
    let e = [
        correlation(&state, a, b)?,
        correlation(&state, a, b_prime)?,
        correlation(&state, a_prime, b)?,
        correlation(&state, a_prime, b_prime)?,
    ];
    Ok(crate::chsh::chsh_combination(e))
}

/// Weight function over a smearing interval.
#[derive(Clone)]
pub enum SmearingDensity {
    Uniform,
    /// Symmetric triangle peaked at the centre.
    Triangular,
    /// Arbitrary density in absolute angle; must integrate to 1 over the interval.
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for SmearingDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SmearingDensity::Uniform => f.write_str("Uniform"),
            SmearingDensity::Triangular => f.write_str("Triangular"),
            SmearingDensity::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// A setting known only up to an interval `[center − δ, center + δ]`.
#[derive(Debug, Clone)]
pub struct AngleSmearing {
    center: f64,
    half_width: f64,
    density: SmearingDensity,
}

impl AngleSmearing {
    pub fn new(center: f64, half_width: f64, density: SmearingDensity) -> Result<Self> {
        if !center.is_finite() || !half_width.is_finite() || half_width < 0.0 {
            return Err(Error::input(
                "smearing needs a finite centre and a finite half-width >= 0",
            ));
        }
        let s = AngleSmearing {
            center,
            half_width,
            density,
        };
        if half_width > 0.0 {
            let (mass, _) = adaptive_simpson(&|t| s.weight(t), s.lo(), s.hi(), 1e-12);
            if (mass - 1.0).abs() > 1e-9 {
                return Err(Error::input(format!(
                    "smearing density integrates to {mass}, not 1"
                )));
            }
        }
        Ok(s)
    }

    pub fn uniform(center: f64, half_width: f64) -> Result<Self> {
        Self::new(center, half_width, SmearingDensity::Uniform)
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    fn lo(&self) -> f64 {
        self.center - self.half_width
    }

    fn hi(&self) -> f64 {
        self.center + self.half_width
    }

    fn weight(&self, theta: f64) -> f64 {
        let d = self.half_width;
        match &self.density {
            SmearingDensity::Uniform => 0.5 / d,
            SmearingDensity::Triangular => ((d - (theta - self.center).abs()) / (d * d)).max(0.0),
            SmearingDensity::Custom(f) => f(theta),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error_estimate: f64,
}

/// Default absolute tolerance for [`smeared_correlation`].
pub const SMEARING_TOLERANCE: f64 = 1e-9;

/// `−∬ cos(θ₁ − θ₂) dρ_x(θ₁) dρ_y(θ₂)` by nested adaptive Simpson.
pub fn smeared_correlation(sx: &AngleSmearing, sy: &AngleSmearing) -> Quadrature {
    smeared_correlation_with_tolerance(sx, sy, SMEARING_TOLERANCE)
}

pub fn smeared_correlation_with_tolerance(
    sx: &AngleSmearing,
    sy: &AngleSmearing,
    tol: f64,
) -> Quadrature {
    let inner = |t1: f64| -> (f64, f64) {
        if sy.half_width == 0.0 {
            return (-(t1 - sy.center).cos(), 0.0);
        }
        adaptive_simpson(
            &|t2| -(t1 - t2).cos() * sy.weight(t2),
            sy.lo(),
            sy.hi(),
            0.5 * tol,
        )
    };
    if sx.half_width == 0.0 {
        let (value, err) = inner(sx.center);
        return Quadrature {
            value,
            error_estimate: err,
        };
    }
    let inner_err = std::cell::Cell::new(0.0f64);
    let (value, outer_err) = adaptive_simpson(
        &|t1| {
            let (v, e) = inner(t1);
            let w = sx.weight(t1);
            inner_err.set(inner_err.get().max(e * w));
            v * w
        },
        sx.lo(),
        sx.hi(),
        0.5 * tol,
    );
    Quadrature {
        value,
        error_estimate: outer_err + inner_err.get() * (sx.hi() - sx.lo()),
    }
}

/// Adaptive Simpson quadrature. Returns `(integral, error estimate)`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, f64) {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> (f64, f64) {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    // depth floor keeps kinks in the integrand from being skipped
    if depth == 0 || (depth < 46 && delta.abs() <= 15.0 * tol) {
        return (left + right + delta / 15.0, delta.abs() / 15.0);
    }
    let (l, el) = simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1);
    let (r, er) = simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
    (l + r, el + er)
}
