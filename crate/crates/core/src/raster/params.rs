use serde::{Deserialize, Serialize};

use super::backward::SplatGrad;
use super::tiles::{bound_splat, Aabb};
use super::{Splat, CUTOFF_SIGMA};
use crate::covariance::{invert_spd_2x2, CovError, CovKind, CovParams, CovWithJacobian};
use crate::primitive::{SymMat2, Vec2};

/// Learnable scalars per 2D primitive: mu[2], cov[3], freq[2], color[3],
/// opacity_raw[1].
pub const PARAMS_PER_PRIMITIVE: usize = 11;

/// Image-plane primitive with its raw learnable parameterization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive2D {
    pub mu: [f64; 2],
    pub cov: CovParams,
    pub freq: [f64; 2],
    pub color: [f64; 3],
    pub opacity_raw: f64,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Primitive2D {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_raw)
    }

    pub fn to_params(&self) -> [f64; PARAMS_PER_PRIMITIVE] {
        let c = self.cov.to_array();
        [
            self.mu[0], self.mu[1], c[0], c[1], c[2], self.freq[0], self.freq[1],
            self.color[0], self.color[1], self.color[2], self.opacity_raw,
        ]
    }

    pub fn from_params(kind: CovKind, p: &[f64; PARAMS_PER_PRIMITIVE]) -> Self {
        Self {
            mu: [p[0], p[1]],
            cov: CovParams::from_array(kind, [p[2], p[3], p[4]]),
            freq: [p[5], p[6]],
            color: [p[7], p[8], p[9]],
            opacity_raw: p[10],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_params().iter().all(|v| v.is_finite())
    }

    /// Splat and covariance Jacobian, or an error when the built covariance
    /// cannot be inverted.
    pub fn prepare(&self) -> Result<(Splat, CovWithJacobian), CovError> {
        let built = self.cov.build();
        let (conic, _) = invert_spd_2x2(&built.cov)?;
        let splat = Splat {
            mean: Vec2::new(self.mu[0], self.mu[1]),
            conic,
            cov: built.cov,
            freq: Vec2::new(self.freq[0], self.freq[1]),
            beta: 1.0,
            color: self.color,
            opacity: self.opacity(),
            depth: 0.0,
        };
        Ok((splat, built))
    }
}

/// Screen AABB of a primitive at the default 3σ cutoff.
pub fn bound_primitive(p: &Primitive2D, width: usize, height: usize) -> Option<Aabb> {
    let (splat, _) = p.prepare().ok()?;
    bound_splat(&splat, width, height, CUTOFF_SIGMA)
}

/// Gradient of the loss with respect to one primitive's raw parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PrimitiveGrad {
    pub mu: [f64; 2],
    pub cov: [f64; 3],
    pub freq: [f64; 2],
    pub color: [f64; 3],
    pub opacity_raw: f64,
}

impl PrimitiveGrad {
    pub fn to_array(&self) -> [f64; PARAMS_PER_PRIMITIVE] {
        [
            self.mu[0], self.mu[1], self.cov[0], self.cov[1], self.cov[2], self.freq[0], self.freq[1],
            self.color[0], self.color[1], self.color[2], self.opacity_raw,
        ]
    }
}

/// Per-primitive gradient accumulators, aligned with the primitive slice.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradBuffers {
    pub grads: Vec<PrimitiveGrad>,
}

impl GradBuffers {
    pub fn zeros(n: usize) -> Self {
        Self { grads: vec![PrimitiveGrad::default(); n] }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.to_array())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(|g| g.to_array().iter().all(|v| v.is_finite()))
    }
}

/// Splats for the renderable subset of a primitive set. Primitives whose
/// covariance is degenerate are skipped for the frame and get zero gradient.
#[derive(Clone, Debug)]
pub struct PreparedPrimitives {
    pub splats: Vec<Splat>,
    /// Primitive index of each splat.
    pub source: Vec<usize>,
    jacobians: Vec<CovWithJacobian>,
    count: usize,
}

impl PreparedPrimitives {
    pub fn new(prims: &[Primitive2D]) -> Self {
        let mut splats = Vec::with_capacity(prims.len());
        let mut source = Vec::with_capacity(prims.len());
        let mut jacobians = Vec::with_capacity(prims.len());
        for (i, p) in prims.iter().enumerate() {
            if let Ok((s, j)) = p.prepare() {
                splats.push(s);
                source.push(i);
                jacobians.push(j);
            }
        }
        Self { splats, source, jacobians, count: prims.len() }
    }

    pub fn num_skipped(&self) -> usize {
        self.count - self.splats.len()
    }

    /// Chains splat-space gradients to the raw primitive parameters.
    ///
    /// With `A = Σ⁻¹`, `∂L/∂Σ = −A·(∂L/∂A)·A`; the off-diagonal entries are
    /// folded together because both parameterizations treat `Σxy` as one
    /// variable. Opacity goes through the sigmoid derivative `α(1 − α)`.
    pub fn chain(&self, splat_grads: &[SplatGrad]) -> GradBuffers {
        let mut out = GradBuffers::zeros(self.count);
        for ((g, s), (&i, jac)) in splat_grads.iter().zip(&self.splats).zip(self.source.iter().zip(&self.jacobians)) {
            let a = s.conic;
            let gm = SymMat2::new(g.conic[0], 0.5 * g.conic[1], g.conic[2]);
            let p = sandwich(&a, &gm);
            let d_cov = [-p.xx, -2.0 * p.xy, -p.yy];
            let alpha = s.opacity;
            out.grads[i] = PrimitiveGrad {
                mu: g.mean,
                cov: jac.pullback(d_cov),
                freq: g.freq,
                color: g.color,
                opacity_raw: g.opacity * alpha * (1.0 - alpha),
            };
        }
        out
    }
}

/// `A·M·A` for symmetric `A`, `M`.
fn sandwich(a: &SymMat2, m: &SymMat2) -> SymMat2 {
    let am = a.to_matrix() * m.to_matrix();
    SymMat2::from_matrix(&(am * a.to_matrix()))
}
