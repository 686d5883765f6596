//! Learnable 2D covariance parameterizations and their Jacobians.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::primitive::SymMat2;

/// Diagonal regularizer added to every built covariance, in px².
pub const COV_EPSILON: f64 = 1e-6;

/// Determinant floor below which a covariance is treated as degenerate.
pub const MIN_DETERMINANT: f64 = 1e-12;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum CovError {
    #[error("covariance is near-singular (det = {0:e})")]
    NearSingular(f64),
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
}

/// `Σ = L·Lᵀ + ε·I` with `L = [[l1, 0], [l2, l3]]`. The diagonal of `L` is
/// not sign-constrained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CholeskyParams {
    pub l: [f64; 3],
}

/// `Σ = R(θ)·diag(exp(2·s_raw))·R(θ)ᵀ + ε·I`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RsParams {
    pub theta: f64,
    pub s_raw: [f64; 2],
}

/// A built covariance together with `∂(xx, xy, yy)/∂params`, one row per
/// covariance entry and one column per parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CovWithJacobian {
    pub cov: SymMat2,
    pub jacobian: [[f64; 3]; 3],
}

impl CovWithJacobian {
    /// Pulls a gradient w.r.t. the covariance entries back to the parameters.
    /// `grad_cov` holds `∂L/∂xx`, `∂L/∂xy` and `∂L/∂yy`, with the off-diagonal
    /// entry treated as a single variable.
    pub fn pullback(&self, grad_cov: [f64; 3]) -> [f64; 3] {
        let j = &self.jacobian;
        let mut out = [0.0; 3];
        for (p, o) in out.iter_mut().enumerate() {
            *o = grad_cov[0] * j[0][p] + grad_cov[1] * j[1][p] + grad_cov[2] * j[2][p];
        }
        out
    }
}

pub fn build_cov_cholesky(p: &CholeskyParams) -> CovWithJacobian {
    let [l1, l2, l3] = p.l;
    let cov = SymMat2::new(l1 * l1, l1 * l2, l2 * l2 + l3 * l3).add_diagonal(COV_EPSILON);
    let jacobian = [
        [2.0 * l1, 0.0, 0.0],
        [l2, l1, 0.0],
        [0.0, 2.0 * l2, 2.0 * l3],
    ];
    CovWithJacobian { cov, jacobian }
}

pub fn build_cov_rs(p: &RsParams) -> CovWithJacobian {
    let (s, c) = p.theta.sin_cos();
    let a = (2.0 * p.s_raw[0]).exp();
    let b = (2.0 * p.s_raw[1]).exp();
    let (cc, ss, cs) = (c * c, s * s, c * s);
    let cov = SymMat2::new(cc * a + ss * b, cs * (a - b), ss * a + cc * b).add_diagonal(COV_EPSILON);
    let jacobian = [
        [2.0 * cs * (b - a), 2.0 * a * cc, 2.0 * b * ss],
        [(cc - ss) * (a - b), 2.0 * a * cs, -2.0 * b * cs],
        [2.0 * cs * (a - b), 2.0 * a * ss, 2.0 * b * cc],
    ];
    CovWithJacobian { cov, jacobian }
}

/// Which parameterization a primitive set uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CovKind {
    Cholesky,
    Rs,
}

impl std::fmt::Display for CovKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CovKind::Cholesky => "cholesky",
            CovKind::Rs => "rs",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CovParams {
    Cholesky(CholeskyParams),
    Rs(RsParams),
}

impl CovParams {
    pub fn kind(&self) -> CovKind {
        match self {
            CovParams::Cholesky(_) => CovKind::Cholesky,
            CovParams::Rs(_) => CovKind::Rs,
        }
    }

    pub fn build(&self) -> CovWithJacobian {
        match self {
            CovParams::Cholesky(p) => build_cov_cholesky(p),
            CovParams::Rs(p) => build_cov_rs(p),
        }
    }

    /// Raw parameters in storage order: `l1, l2, l3` or `theta, s_raw0, s_raw1`.
    pub fn to_array(&self) -> [f64; 3] {
        match self {
            CovParams::Cholesky(p) => p.l,
            CovParams::Rs(p) => [p.theta, p.s_raw[0], p.s_raw[1]],
        }
    }

    pub fn from_array(kind: CovKind, v: [f64; 3]) -> Self {
        match kind {
            CovKind::Cholesky => CovParams::Cholesky(CholeskyParams { l: v }),
            CovKind::Rs => CovParams::Rs(RsParams { theta: v[0], s_raw: [v[1], v[2]] }),
        }
    }

    /// Parameters whose built covariance is approximately `σ²·I`.
    pub fn isotropic(kind: CovKind, sigma: f64, theta: f64) -> Self {
        match kind {
            CovKind::Cholesky => CovParams::Cholesky(CholeskyParams { l: [sigma, 0.0, sigma] }),
            CovKind::Rs => CovParams::Rs(RsParams { theta, s_raw: [sigma.ln(), sigma.ln()] }),
        }
    }
}

/// Returns `(Σ⁻¹, det Σ)`.
pub fn invert_spd_2x2(cov: &SymMat2) -> Result<(SymMat2, f64), CovError> {
    let det = cov.det();
    if !det.is_finite() || det < MIN_DETERMINANT {
        return Err(CovError::NearSingular(det));
    }
    if cov.xx <= 0.0 {
        return Err(CovError::NotPositiveDefinite);
    }
    let inv = SymMat2::new(cov.yy / det, -cov.xy / det, cov.xx / det);
    Ok((inv, det))
}
