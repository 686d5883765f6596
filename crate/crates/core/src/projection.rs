//! Projection of 3D wavelet primitives to screen-space kernels.
//!
//! The local affine approximation of the perspective map at the primitive
//! center (the ray-space Jacobian `J`) transforms the covariance as
//! `Σ̂ = J·W·Σ·Wᵀ·Jᵀ`. Frequencies transform contravariantly, by
//! `(J·W)⁻ᵀ`, which keeps the modulation phase `f·(x − μ)` unchanged.
//! The z-marginal is then taken in ray space.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::covariance::{invert_spd_2x2, CovError};
use crate::primitive::{SymMat2, SymMat3, Vec2, Vec3, WaveletKernel2D};

/// Screen-space dilation added to the projected covariance diagonal, in px².
pub const SCREEN_DILATION: f64 = 0.3;

const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("primitive is behind the near plane (z = {z})")]
    BehindCamera { z: f64 },
    #[error("primitive is beyond the far plane (z = {z})")]
    BeyondFar { z: f64 },
    #[error(transparent)]
    Covariance(#[from] CovError),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

/// Pinhole camera with a world-to-camera rigid transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// World-to-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    /// World-to-camera translation.
    pub translation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub near: f64,
    pub far: f64,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    /// Camera at the origin looking down +z with the principal point at the
    /// image center.
    pub fn looking_down_z(width: u32, height: u32, focal: f64) -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            near: 0.01,
            far: 100.0,
            width,
            height,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.rotation[i][j])
    }

    pub fn translation_vector(&self) -> Vec3 {
        Vector3::from(self.translation)
    }

    pub fn validate(&self) -> Result<(), ProjectionError> {
        let r = self.rotation_matrix();
        let err = (r.transpose() * r - Matrix3::identity()).norm();
        if !(err <= ORTHONORMAL_TOL) {
            return Err(ProjectionError::InvalidCamera(format!("rotation is not orthonormal (‖RᵀR − I‖ = {err:e})")));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(ProjectionError::InvalidCamera("require 0 < near < far".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(ProjectionError::InvalidCamera("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(ProjectionError::InvalidCamera("image dimensions must be at least 1".into()));
        }
        Ok(())
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation_matrix() * p + self.translation_vector()
    }

    pub fn project_point(&self, p_cam: &Vec3) -> Vec2 {
        Vec2::new(self.fx * p_cam.x / p_cam.z + self.cx, self.fy * p_cam.y / p_cam.z + self.cy)
    }
}

/// World-space primitive as authored in a scene file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Primitive3D {
    pub mu: Vec3,
    pub cov: SymMat3,
    pub freq: Vec3,
    pub color: [f64; 3],
    /// Opacity in `[0, 1]`.
    pub opacity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMode {
    /// Upper-left block and `(f̂x, f̂y)`, amplitude 1.
    Paper,
    /// Closed-form z-marginal with cross-covariance frequency correction
    /// and cosine attenuation.
    #[default]
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedKernel {
    pub kernel: WaveletKernel2D,
    /// Screen covariance including dilation.
    pub cov: SymMat2,
    /// Camera-space depth.
    pub depth: f64,
}

impl ProjectedKernel {
    pub fn beta(&self) -> f64 {
        self.kernel.beta
    }
}

/// Result of marginalizing a ray-space kernel over z.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZMarginal {
    pub cov: SymMat2,
    pub freq: Vec2,
    pub beta: f64,
}

pub fn jacobian_ray_space(mu_cam: &Vec3, camera: &Camera) -> Result<Matrix3<f64>, ProjectionError> {
    let (x, y, z) = (mu_cam.x, mu_cam.y, mu_cam.z);
    if !(z >= camera.near) {
        return Err(ProjectionError::BehindCamera { z });
    }
    let z2 = z * z;
    Ok(Matrix3::new(
        camera.fx / z, 0.0, -camera.fx * x / z2, //
        0.0, camera.fy / z, -camera.fy * y / z2, //
        0.0, 0.0, 1.0,
    ))
}

/// Returns the ray-space covariance and the dilated screen covariance.
pub fn project_cov(cov3: &SymMat3, camera: &Camera, jacobian: &Matrix3<f64>) -> Result<(SymMat3, SymMat2), ProjectionError> {
    let t = jacobian * camera.rotation_matrix();
    let sigma_hat = SymMat3::from_matrix(&(t * cov3.to_matrix() * t.transpose()));
    let screen = sigma_hat.upper_left().add_diagonal(SCREEN_DILATION);
    invert_spd_2x2(&screen)?;
    Ok((sigma_hat, screen))
}

pub fn project_freq(f3: &Vec3, camera: &Camera, jacobian: &Matrix3<f64>) -> Result<Vec3, ProjectionError> {
    let t = jacobian * camera.rotation_matrix();
    let inv = t.try_inverse().ok_or(ProjectionError::Covariance(CovError::NearSingular(0.0)))?;
    Ok(inv.transpose() * f3)
}

/// Marginalizes `½[cos(f̂·Δ) + 1]·G(Δ; Σ̂)` over `Δz`.
///
/// In exact mode, with `Σ̂ = [[Σ′, σ], [σᵀ, s]]` and conditional variance
/// `v = s − σᵀΣ′⁻¹σ`, the Gaussian conditional on `Δ′` has mean
/// `σᵀΣ′⁻¹Δ′`, so the cosine integrates to
/// `cos((f̂xy + f̂z·Σ′⁻¹σ)·Δ′)·exp(−½ f̂z² v)`. The common factor `√(2πv)` is
/// dropped so kernels stay peak-1.
pub fn integrate_z(sigma_hat: &SymMat3, f_hat: &Vec3, mode: ProjectionMode) -> Result<ZMarginal, ProjectionError> {
    let cov = sigma_hat.upper_left();
    let (inv, _) = invert_spd_2x2(&cov)?;
    let f_xy = Vec2::new(f_hat.x, f_hat.y);
    match mode {
        ProjectionMode::Paper => Ok(ZMarginal { cov, freq: f_xy, beta: 1.0 }),
        ProjectionMode::Exact => {
            let cross = Vec2::new(sigma_hat.xz, sigma_hat.yz);
            let gain = inv.mul_vec(cross);
            let v = sigma_hat.zz - cross.dot(&gain);
            if !(v > 0.0) {
                return Err(ProjectionError::Covariance(CovError::NotPositiveDefinite));
            }
            let freq = f_xy + f_hat.z * gain;
            let beta = (-0.5 * f_hat.z * f_hat.z * v).exp();
            Ok(ZMarginal { cov, freq, beta })
        }
    }
}

/// Full world-to-screen projection of one primitive.
pub fn project_primitive(prim: &Primitive3D, camera: &Camera, mode: ProjectionMode) -> Result<ProjectedKernel, ProjectionError> {
    let mu_cam = camera.world_to_camera(&prim.mu);
    let jacobian = jacobian_ray_space(&mu_cam, camera)?;
    if mu_cam.z > camera.far {
        return Err(ProjectionError::BeyondFar { z: mu_cam.z });
    }
    let (sigma_hat, _) = project_cov(&prim.cov, camera, &jacobian)?;
    let f_hat = project_freq(&prim.freq, camera, &jacobian)?;
    let marginal = integrate_z(&sigma_hat, &f_hat, mode)?;
    let cov = marginal.cov.add_diagonal(SCREEN_DILATION);
    let kernel = WaveletKernel2D::from_covariance(camera.project_point(&mu_cam), cov, marginal.freq, marginal.beta)?;
    Ok(ProjectedKernel { kernel, cov, depth: mu_cam.z })
}
