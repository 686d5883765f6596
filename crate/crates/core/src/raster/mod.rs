//! Tile-binned CPU rasterizer for screen-space wavelet splats.
//!
//! Two accumulation modes are provided: an order-independent weighted sum
//! `C = Σ cᵢ·αᵢ·Wᵢ` used for image fitting, and front-to-back α-blending
//! used for projected 3D scenes. Both have analytic backward passes.

mod backward;
mod forward;
mod params;
mod tiles;

use serde::{Deserialize, Serialize};

use crate::primitive::{SymMat2, Vec2, WaveletKernel2D};

pub use backward::{backward_alpha, backward_sum, SplatGrad};
pub use forward::{forward_alpha, forward_sum, pixel_transmittance_sequence, AlphaForward, SumForward};
pub use params::{bound_primitive, GradBuffers, PreparedPrimitives, Primitive2D, PrimitiveGrad, PARAMS_PER_PRIMITIVE};
pub use tiles::{bound_splat, Aabb, TileGrid, TILE_SIZE};

/// Contributions whose weight `α·W` falls below this are skipped.
pub const MIN_CONTRIBUTION: f64 = 1.0 / 255.0;
/// Kernel support half-extent in standard deviations.
pub const CUTOFF_SIGMA: f64 = 3.0;
/// Upper bound on the per-primitive effective alpha in α-blending.
pub const ALPHA_CLAMP: f64 = 0.99;
/// α-blending stops once transmittance drops below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;

/// Which kernel the rasterizer evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    /// Cosine-modulated Gaussian.
    #[default]
    Wavelet,
    /// Plain Gaussian; modulation frequency and amplitude are ignored.
    Gaussian,
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            KernelFamily::Wavelet => "wavelet",
            KernelFamily::Gaussian => "gaussian",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AccumMode {
    #[default]
    Sum,
    Alpha,
}

impl std::fmt::Display for AccumMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AccumMode::Sum => "sum",
            AccumMode::Alpha => "alpha",
        })
    }
}

/// How per-tile gradient partials are merged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MergeMode {
    /// Tiles are merged in tile order; results do not depend on thread count.
    #[default]
    Deterministic,
    /// Per-thread partial buffers reduced in whatever order rayon picks.
    Unordered,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RasterConfig {
    pub family: KernelFamily,
    pub min_contribution: f64,
    pub cutoff_sigma: f64,
    pub alpha_clamp: f64,
    pub min_transmittance: f64,
    pub merge: MergeMode,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            family: KernelFamily::Wavelet,
            min_contribution: MIN_CONTRIBUTION,
            cutoff_sigma: CUTOFF_SIGMA,
            alpha_clamp: ALPHA_CLAMP,
            min_transmittance: MIN_TRANSMITTANCE,
            merge: MergeMode::Deterministic,
        }
    }
}

impl RasterConfig {
    pub fn with_family(family: KernelFamily) -> Self {
        Self { family, ..Self::default() }
    }

    /// Removes every truncation that makes the rendered image a
    /// discontinuous function of the parameters (contribution skip, early
    /// termination, and a support radius wide enough that the cut-off kernel
    /// value is below 1e−21). Used when comparing against finite differences.
    pub fn smooth(family: KernelFamily) -> Self {
        Self {
            family,
            min_contribution: 0.0,
            cutoff_sigma: 10.0,
            min_transmittance: 0.0,
            ..Self::default()
        }
    }
}

/// A screen-space kernel ready for rasterization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat {
    pub mean: Vec2,
    pub conic: SymMat2,
    pub cov: SymMat2,
    pub freq: Vec2,
    pub beta: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    /// Sort key for α-blending (smaller is nearer).
    pub depth: f64,
}

impl Splat {
    pub fn from_kernel(kernel: &WaveletKernel2D, cov: SymMat2, color: [f64; 3], opacity: f64, depth: f64) -> Self {
        Self {
            mean: kernel.mu,
            conic: kernel.inv_cov,
            cov,
            freq: kernel.freq,
            beta: kernel.beta,
            color,
            opacity,
            depth,
        }
    }

    /// Kernel value and saved intermediates at pixel offset `d = x − μ`.
    #[inline(always)]
    pub(crate) fn eval(&self, d: Vec2, family: KernelFamily) -> KernelSample {
        let q = self.conic.quad_form(d);
        let envelope = (-0.5 * q).exp();
        match family {
            KernelFamily::Gaussian => KernelSample { value: envelope, envelope, sin: 0.0 },
            KernelFamily::Wavelet => {
                let (sin, cos) = self.freq.dot(&d).sin_cos();
                let value = 0.5 * (self.beta * cos + 1.0) * envelope;
                KernelSample { value, envelope, sin }
            }
        }
    }

    /// Largest Mahalanobis² at which `α·G` can still reach `threshold`.
    #[inline]
    pub(crate) fn max_quad(&self, threshold: f64) -> f64 {
        if threshold <= 0.0 || self.opacity <= 0.0 {
            return f64::INFINITY;
        }
        let ratio = threshold / self.opacity;
        if ratio >= 1.0 {
            // Nothing can pass; allow q = 0 through so the exact test decides.
            return 0.0;
        }
        -2.0 * ratio.ln()
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct KernelSample {
    pub value: f64,
    pub envelope: f64,
    /// `sin(f·d)`.
    pub sin: f64,
}

/// Pixel center of integer pixel `(x, y)`.
#[inline(always)]
pub(crate) fn pixel_center(x: usize, y: usize) -> Vec2 {
    Vec2::new(x as f64 + 0.5, y as f64 + 0.5)
}

/// Kernel samples along one row segment of a tile, in visiting order.
pub(crate) struct RowSamples {
    pub len: usize,
    pub dy: f64,
    pub x: [usize; TILE_SIZE],
    pub dx: [f64; TILE_SIZE],
    pub value: [f64; TILE_SIZE],
    pub envelope: [f64; TILE_SIZE],
    /// `sin(f·d)`.
    pub sin: [f64; TILE_SIZE],
}

impl RowSamples {
    pub fn new() -> Self {
        Self {
            len: 0,
            dy: 0.0,
            x: [0; TILE_SIZE],
            dx: [0.0; TILE_SIZE],
            value: [0.0; TILE_SIZE],
            envelope: [0.0; TILE_SIZE],
            sin: [0.0; TILE_SIZE],
        }
    }

    #[inline(always)]
    fn push(&mut self, x: usize, dx: f64, value: f64, envelope: f64, sin: f64) {
        let i = self.len;
        self.x[i] = x;
        self.dx[i] = dx;
        self.value[i] = value;
        self.envelope[i] = envelope;
        self.sin[i] = sin;
        self.len += 1;
    }
}

/// Row sampler for one splat.
///
/// Along a row the quadratic form, the envelope and the phasor all obey
/// multiplicative recurrences, so only the first pixel of a row needs `exp`
/// and `sin_cos`. A scan starts at the column nearest the row minimum of `q`
/// and walks outward in both directions, so the envelope only shrinks and
/// `q` only grows, which lets each direction stop at the first pixel past
/// `q_max` and keeps the recurrences free of overflow.
pub(crate) struct RowScanner<'a> {
    s: &'a Splat,
    wavelet: bool,
    q_max: f64,
    /// Minimum of `q` over a row is `dy²·det(A)/A_xx`.
    row_min_coef: f64,
    curvature: f64,
    curvature_row: f64,
    cross: f64,
    step_sin: f64,
    step_cos: f64,
    row_sin: f64,
    row_cos: f64,
    half_beta: f64,
}

impl<'a> RowScanner<'a> {
    pub fn new(s: &'a Splat, family: KernelFamily, q_max: f64) -> Self {
        let wavelet = family == KernelFamily::Wavelet;
        let (step_sin, step_cos) = if wavelet { s.freq.x.sin_cos() } else { (0.0, 1.0) };
        let (row_sin, row_cos) = if wavelet { s.freq.y.sin_cos() } else { (0.0, 1.0) };
        Self {
            s,
            wavelet,
            q_max,
            row_min_coef: s.conic.det() / s.conic.xx,
            curvature: (-s.conic.xx).exp(),
            curvature_row: (-s.conic.yy).exp(),
            cross: (-s.conic.xy).exp(),
            step_sin,
            step_cos,
            row_sin,
            row_cos,
            half_beta: 0.5 * s.beta,
        }
    }

    #[inline(always)]
    fn value(&self, env: f64, cos: f64) -> f64 {
        if self.wavelet {
            (self.half_beta * cos + 0.5) * env
        } else {
            env
        }
    }

    /// Samples the pixels of row `y` in `x0..x1` (at most one tile wide)
    /// whose Mahalanobis² is at most `q_max`.
    #[inline]
    pub fn scan(&self, y: usize, x0: usize, x1: usize, out: &mut RowSamples) {
        debug_assert!(x1 <= x0 + TILE_SIZE);
        out.len = 0;
        if x0 >= x1 {
            return;
        }
        let s = self.s;
        let a = s.conic;
        let dy = y as f64 + 0.5 - s.mean.y;
        out.dy = dy;
        if dy * dy * self.row_min_coef > self.q_max {
            return;
        }
        let peak = s.mean.x - a.xy * dy / a.xx - 0.5;
        let start = if peak <= x0 as f64 {
            x0
        } else if peak >= (x1 - 1) as f64 {
            x1 - 1
        } else {
            peak.round() as usize
        };
        let dx0 = start as f64 + 0.5 - s.mean.x;
        let q0 = a.xx * dx0 * dx0 + 2.0 * a.xy * dx0 * dy + a.yy * dy * dy;
        if q0 > self.q_max {
            return;
        }
        let env0 = (-0.5 * q0).exp();
        let (sin0, cos0) = if self.wavelet { (s.freq.x * dx0 + s.freq.y * dy).sin_cos() } else { (0.0, 1.0) };
        out.push(start, dx0, self.value(env0, cos0), env0, sin0);
        let slope = a.xx * dx0 + a.xy * dy;
        if start + 1 < x1 {
            self.walk(start, x1, 1.0, q0, slope, env0, sin0, cos0, out);
        }
        if start > x0 {
            self.walk(start, x0, -1.0, q0, slope, env0, sin0, cos0, out);
        }
    }

    #[inline(always)]
    #[allow(clippy::too_many_arguments)]
    fn walk(&self, start: usize, end: usize, dir: f64, q0: f64, slope: f64, env0: f64, sin0: f64, cos0: f64, out: &mut RowSamples) {
        let s = self.s;
        let a_xx = s.conic.xx;
        let (mut q, mut env, mut sin, mut cos) = (q0, env0, sin0, cos0);
        let mut dq = 2.0 * dir * slope + a_xx;
        let mut ratio = (-0.5 * dq).exp();
        let ss = dir * self.step_sin;
        let mut x = start;
        loop {
            if dir > 0.0 {
                x += 1;
                if x >= end {
                    break;
                }
            } else {
                if x == end {
                    break;
                }
                x -= 1;
            }
            q += dq;
            if q > self.q_max {
                break;
            }
            env *= ratio;
            ratio *= self.curvature;
            dq += 2.0 * a_xx;
            (sin, cos) = (sin * self.step_cos + cos * ss, cos * self.step_cos - sin * ss);
            out.push(x, x as f64 + 0.5 - s.mean.x, self.value(env, cos), env, sin);
        }
    }
}

/// Largest Mahalanobis² over a tile rectangle for which the 2D recurrence
/// is used; below it every envelope ratio stays within `e^±300`.
const RECURRENCE_MAX_QUAD: f64 = 600.0;

/// Row-by-row sampler of one splat over one tile rectangle.
///
/// When the quadratic form stays moderate over the whole rectangle, the row
/// start values are carried from row to row by the same kind of
/// multiplicative recurrence, so the pair costs a fixed number of
/// transcendental calls. Otherwise each row is scanned independently.
pub(crate) struct TileScan<'a> {
    scanner: &'a RowScanner<'a>,
    x0: usize,
    x1: usize,
    y: usize,
    carried: Option<Carried>,
}

/// Values at the first column of the current row.
struct Carried {
    q: f64,
    /// `q(x0 + 1) − q(x0)` on this row.
    dq: f64,
    /// `q(y + 1) − q(y)` at column `x0`.
    dq_row: f64,
    env: f64,
    ratio: f64,
    ratio_row: f64,
    sin: f64,
    cos: f64,
}

impl<'a> RowScanner<'a> {
    pub fn tile(&'a self, rect: &Aabb) -> TileScan<'a> {
        let s = self.s;
        let a = s.conic;
        let corner_q = |x: usize, y: usize| a.quad_form(pixel_center(x, y) - s.mean);
        let (xl, yl) = (rect.x1.saturating_sub(1), rect.y1.saturating_sub(1));
        let q_far = corner_q(rect.x0, rect.y0).max(corner_q(xl, rect.y0)).max(corner_q(rect.x0, yl)).max(corner_q(xl, yl));
        let carried = (!rect.is_empty() && q_far <= RECURRENCE_MAX_QUAD).then(|| {
            let d = pixel_center(rect.x0, rect.y0) - s.mean;
            let q = a.quad_form(d);
            let dq = 2.0 * (a.xx * d.x + a.xy * d.y) + a.xx;
            let dq_row = 2.0 * (a.xy * d.x + a.yy * d.y) + a.yy;
            let (sin, cos) = if self.wavelet { s.freq.dot(&d).sin_cos() } else { (0.0, 1.0) };
            Carried {
                q,
                dq,
                dq_row,
                env: (-0.5 * q).exp(),
                ratio: (-0.5 * dq).exp(),
                ratio_row: (-0.5 * dq_row).exp(),
                sin,
                cos,
            }
        });
        TileScan { scanner: self, x0: rect.x0, x1: rect.x1, y: rect.y0, carried }
    }
}

impl TileScan<'_> {
    /// Samples the next row of the rectangle, calling `visit(x, value,
    /// envelope, sin)` for each pixel within `q_max`. `scratch` is used when
    /// the row is scanned independently. Returns the row offset `dy`.
    #[inline(always)]
    pub fn visit_row(&mut self, scratch: &mut RowSamples, mut visit: impl FnMut(usize, f64, f64, f64)) -> f64 {
        let sc = self.scanner;
        let y = self.y;
        self.y += 1;
        let Some(c) = self.carried.as_mut() else {
            sc.scan(y, self.x0, self.x1, scratch);
            for i in 0..scratch.len {
                visit(scratch.x[i], scratch.value[i], scratch.envelope[i], scratch.sin[i]);
            }
            return scratch.dy;
        };
        let s = sc.s;
        let a = s.conic;
        let dy = y as f64 + 0.5 - s.mean.y;
        if dy * dy * sc.row_min_coef <= sc.q_max {
            let (mut q, mut dq, mut env, mut ratio, mut sin, mut cos) = (c.q, c.dq, c.env, c.ratio, c.sin, c.cos);
            for x in self.x0..self.x1 {
                if q <= sc.q_max {
                    visit(x, sc.value(env, cos), env, sin);
                }
                q += dq;
                dq += 2.0 * a.xx;
                env *= ratio;
                ratio *= sc.curvature;
                if sc.wavelet {
                    (sin, cos) = (sin * sc.step_cos + cos * sc.step_sin, cos * sc.step_cos - sin * sc.step_sin);
                }
            }
        }
        // Advance the row start by one row.
        c.q += c.dq_row;
        c.dq += 2.0 * a.xy;
        c.dq_row += 2.0 * a.yy;
        c.env *= c.ratio_row;
        c.ratio *= sc.cross;
        c.ratio_row *= sc.curvature_row;
        (c.sin, c.cos) = (c.sin * sc.row_cos + c.cos * sc.row_sin, c.cos * sc.row_cos - c.sin * sc.row_sin);
        dy
    }
}
