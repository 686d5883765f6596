//! Gaussian and cosine-modulated ("wavelet") kernels.
//!
//! A wavelet kernel is a Gaussian envelope multiplied by the nonnegative
//! modulation `½·[β·cos(f·(x − μ)) + 1]`. With `f = 0` and `β = 1` it is
//! exactly the Gaussian, which is what makes the Gaussian primitive a subset
//! of the wavelet primitive.
//!
//! Frequencies are angular: radians per pixel in screen space and radians per
//! world unit in 3D.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::covariance::{invert_spd_2x2, CovError};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;

/// Symmetric 2×2 matrix stored as its unique upper-triangular entries.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SymMat2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl SymMat2 {
    pub const IDENTITY: SymMat2 = SymMat2 { xx: 1.0, xy: 0.0, yy: 1.0 };

    pub const fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub const fn diagonal(xx: f64, yy: f64) -> Self {
        Self { xx, xy: 0.0, yy }
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn is_finite(&self) -> bool {
        self.xx.is_finite() && self.xy.is_finite() && self.yy.is_finite()
    }

    pub fn is_positive_definite(&self) -> bool {
        self.is_finite() && self.det() > 0.0 && self.trace() > 0.0
    }

    /// `dᵀ·M·d`.
    #[inline]
    pub fn quad_form(&self, d: Vec2) -> f64 {
        self.xx * d.x * d.x + 2.0 * self.xy * d.x * d.y + self.yy * d.y * d.y
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec2) -> Vec2 {
        Vec2::new(self.xx * v.x + self.xy * v.y, self.xy * v.x + self.yy * v.y)
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let mid = 0.5 * (self.xx + self.yy);
        let half_diff = 0.5 * (self.xx - self.yy);
        let radius = (half_diff * half_diff + self.xy * self.xy).sqrt();
        (mid + radius, mid - radius)
    }

    pub fn to_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.xx, self.xy, self.xy, self.yy)
    }

    /// Symmetrizes `m` by averaging its off-diagonal entries.
    pub fn from_matrix(m: &Matrix2<f64>) -> Self {
        Self::new(m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)])
    }

    pub fn add_diagonal(&self, value: f64) -> Self {
        Self::new(self.xx + value, self.xy, self.yy + value)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.xx, self.xy, self.yy]
    }
}

/// Symmetric 3×3 matrix stored as `(xx, xy, xz, yy, yz, zz)`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SymMat3 {
    pub xx: f64,
    pub xy: f64,
    pub xz: f64,
    pub yy: f64,
    pub yz: f64,
    pub zz: f64,
}

impl SymMat3 {
    pub const IDENTITY: SymMat3 = SymMat3 { xx: 1.0, xy: 0.0, xz: 0.0, yy: 1.0, yz: 0.0, zz: 1.0 };

    pub const fn new(xx: f64, xy: f64, xz: f64, yy: f64, yz: f64, zz: f64) -> Self {
        Self { xx, xy, xz, yy, yz, zz }
    }

    pub const fn diagonal(xx: f64, yy: f64, zz: f64) -> Self {
        Self::new(xx, 0.0, 0.0, yy, 0.0, zz)
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.xx, self.xy, self.xz, self.yy, self.yz, self.zz]
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.xx, self.xy, self.xz, //
            self.xy, self.yy, self.yz, //
            self.xz, self.yz, self.zz,
        )
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let sym = |i: usize, j: usize| 0.5 * (m[(i, j)] + m[(j, i)]);
        Self::new(m[(0, 0)], sym(0, 1), sym(0, 2), m[(1, 1)], sym(1, 2), m[(2, 2)])
    }

    /// Upper-left 2×2 block.
    pub fn upper_left(&self) -> SymMat2 {
        SymMat2::new(self.xx, self.xy, self.yy)
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    pub fn is_positive_definite(&self) -> bool {
        // Sylvester's criterion on leading principal minors.
        let m = self.to_matrix();
        self.is_finite() && self.xx > 0.0 && self.upper_left().det() > 0.0 && m.determinant() > 0.0
    }
}

/// Screen-space kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WaveletKernel2D {
    /// Center in pixels.
    pub mu: Vec2,
    /// Inverse covariance in px⁻².
    pub inv_cov: SymMat2,
    /// Modulation frequency in rad/px.
    pub freq: Vec2,
    /// Cosine amplitude in `[0, 1]`.
    pub beta: f64,
}

impl WaveletKernel2D {
    pub fn new(mu: Vec2, inv_cov: SymMat2, freq: Vec2, beta: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&beta));
        Self { mu, inv_cov, freq, beta }
    }

    /// Builds the kernel from a covariance, inverting it once.
    pub fn from_covariance(mu: Vec2, cov: SymMat2, freq: Vec2, beta: f64) -> Result<Self, CovError> {
        let (inv_cov, _) = invert_spd_2x2(&cov)?;
        Ok(Self::new(mu, inv_cov, freq, beta))
    }

    pub fn covariance(&self) -> SymMat2 {
        // The inverse of an SPD matrix is SPD, so this cannot be near-singular
        // unless inv_cov itself is degenerate.
        let det = self.inv_cov.det();
        SymMat2::new(self.inv_cov.yy / det, -self.inv_cov.xy / det, self.inv_cov.xx / det)
    }
}

/// World-space kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WaveletKernel3D {
    pub mu: Vec3,
    pub cov: SymMat3,
    pub freq: Vec3,
    inv_cov: Matrix3<f64>,
}

impl WaveletKernel3D {
    pub fn new(mu: Vec3, cov: SymMat3, freq: Vec3) -> Result<Self, CovError> {
        if !cov.is_positive_definite() {
            return Err(CovError::NotPositiveDefinite);
        }
        let inv_cov = cov.to_matrix().try_inverse().ok_or(CovError::NotPositiveDefinite)?;
        Ok(Self { mu, cov, freq, inv_cov })
    }

    pub fn inv_cov(&self) -> &Matrix3<f64> {
        &self.inv_cov
    }
}

/// Point evaluation shared by 2D and 3D kernels.
pub trait Kernel {
    type Point;

    /// `exp(−½·dᵀΣ⁻¹d)` with `d = x − μ`.
    fn eval_gaussian(&self, x: &Self::Point) -> f64;

    /// `½·[β·cos(f·d) + 1]·G(x)`.
    fn eval_wavelet(&self, x: &Self::Point) -> f64;
}

impl Kernel for WaveletKernel2D {
    type Point = Vec2;

    fn eval_gaussian(&self, x: &Vec2) -> f64 {
        let d = x - self.mu;
        (-0.5 * self.inv_cov.quad_form(d)).exp()
    }

    fn eval_wavelet(&self, x: &Vec2) -> f64 {
        let d = x - self.mu;
        let envelope = (-0.5 * self.inv_cov.quad_form(d)).exp();
        modulation(self.beta, self.freq.dot(&d)) * envelope
    }
}

impl Kernel for WaveletKernel3D {
    type Point = Vec3;

    fn eval_gaussian(&self, x: &Vec3) -> f64 {
        let d = x - self.mu;
        (-0.5 * d.dot(&(self.inv_cov * d))).exp()
    }

    fn eval_wavelet(&self, x: &Vec3) -> f64 {
        let d = x - self.mu;
        let envelope = (-0.5 * d.dot(&(self.inv_cov * d))).exp();
        modulation(1.0, self.freq.dot(&d)) * envelope
    }
}

/// `½·[β·cos(phase) + 1]`.
#[inline]
pub fn modulation(beta: f64, phase: f64) -> f64 {
    0.5 * (beta * phase.cos() + 1.0)
}

pub fn eval_gaussian<K: Kernel>(kernel: &K, x: &K::Point) -> f64 {
    kernel.eval_gaussian(x)
}

pub fn eval_wavelet<K: Kernel>(kernel: &K, x: &K::Point) -> f64 {
    kernel.eval_wavelet(x)
}

/// Continuous Fourier transform of a peak-1 Gaussian with covariance `cov`,
/// evaluated at angular frequency `omega`: `2π·√det Σ·exp(−½ ωᵀΣω)`.
pub fn gaussian_spectrum(cov: &SymMat2, omega: Vec2) -> f64 {
    2.0 * PI * cov.det().sqrt() * (-0.5 * cov.quad_form(omega)).exp()
}

/// Magnitude of the continuous Fourier transform of the wavelet kernel.
///
/// The cosine splits into two half-amplitude copies of the envelope spectrum
/// shifted to `±f`; the `+1` term keeps a copy at DC. All three terms share
/// the phase `e^{−iω·μ}`, so the magnitude is their plain sum.
pub fn analytic_spectrum(kernel: &WaveletKernel2D, omega: Vec2) -> f64 {
    let cov = kernel.covariance();
    let dc = gaussian_spectrum(&cov, omega);
    let up = gaussian_spectrum(&cov, omega - kernel.freq);
    let down = gaussian_spectrum(&cov, omega + kernel.freq);
    0.5 * dc + 0.25 * kernel.beta * (up + down)
}
