//! Central finite-difference check of the analytic rasterizer gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::covariance::{CovKind, CovParams, CholeskyParams, RsParams};
use crate::imaging::ImageBuffer;
use crate::raster::{AccumMode, KernelFamily, Primitive2D, RasterConfig, PARAMS_PER_PRIMITIVE};
use crate::trainer::{render, render_and_backprop};

pub const GROUP_NAMES: [&str; 5] = ["mu", "cov", "freq", "color", "opacity"];

/// Parameter group of each flat slot.
const SLOT_GROUP: [usize; PARAMS_PER_PRIMITIVE] = [0, 0, 1, 1, 1, 2, 2, 3, 3, 3, 4];

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub trials: usize,
    /// Modes to cycle through; each trial also alternates the covariance kind.
    pub modes: Vec<AccumMode>,
    pub family: KernelFamily,
    pub primitives_per_trial: usize,
    pub width: usize,
    pub height: usize,
    pub step: f64,
    /// Relative errors use `max(|analytic|, |numeric|, floor)` as denominator.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            trials: 200,
            modes: vec![AccumMode::Sum, AccumMode::Alpha],
            family: KernelFamily::Wavelet,
            primitives_per_trial: 3,
            width: 14,
            height: 12,
            step: 1e-5,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub trials: usize,
    pub max_rel_error: [f64; 5],
}

impl GradcheckReport {
    pub fn max(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }
}

/// Random primitive well inside a `width × height` image: σ between 1 and
/// 3 px, |f| up to about 1.4 rad/px, opacity below 0.9.
pub fn random_primitive(rng: &mut impl Rng, kind: CovKind, width: usize, height: usize) -> Primitive2D {
    let mu = [rng.gen_range(0.25..0.75) * width as f64, rng.gen_range(0.25..0.75) * height as f64];
    let cov = match kind {
        CovKind::Cholesky => CovParams::Cholesky(CholeskyParams {
            l: [rng.gen_range(1.0..3.0), rng.gen_range(-1.0..1.0), rng.gen_range(1.0..3.0)],
        }),
        CovKind::Rs => CovParams::Rs(RsParams {
            theta: rng.gen_range(0.0..std::f64::consts::PI),
            s_raw: [rng.gen_range(0.0..1.1), rng.gen_range(0.0..1.1)],
        }),
    };
    Primitive2D {
        mu,
        cov,
        freq: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
        color: [rng.gen(), rng.gen(), rng.gen()],
        opacity_raw: rng.gen_range(-2.0..2.0),
    }
}

fn weighted_sum(img: &ImageBuffer, weights: &ImageBuffer) -> f64 {
    img.data.iter().zip(&weights.data).map(|(a, b)| a * b).sum()
}

/// Runs the check and returns the worst relative error per parameter group.
pub fn run_gradcheck(opts: &GradcheckOptions) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let raster = RasterConfig::smooth(opts.family);
    let (w, h) = (opts.width, opts.height);
    let mut worst = [0.0f64; 5];
    for trial in 0..opts.trials {
        let kind = if trial % 2 == 0 { CovKind::Cholesky } else { CovKind::Rs };
        let mode = opts.modes[(trial / 2) % opts.modes.len()];
        let mut prims: Vec<Primitive2D> =
            (0..opts.primitives_per_trial).map(|_| random_primitive(&mut rng, kind, w, h)).collect();
        let weights = ImageBuffer::from_fn(w, h, |_, _| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);

        let (_, _, grads) = render_and_backprop(&prims, w, h, mode, &raster, |img| {
            Ok::<_, ()>((weighted_sum(img, &weights), weights.clone()))
        })
        .expect("infallible loss");
        let loss = |ps: &[Primitive2D]| weighted_sum(&render(ps, w, h, mode, &raster), &weights);

        for i in 0..prims.len() {
            let analytic = grads.grads[i].to_array();
            let base = prims[i].to_params();
            for slot in 0..PARAMS_PER_PRIMITIVE {
                let mut p = base;
                p[slot] = base[slot] + opts.step;
                prims[i] = Primitive2D::from_params(kind, &p);
                let plus = loss(&prims);
                p[slot] = base[slot] - opts.step;
                prims[i] = Primitive2D::from_params(kind, &p);
                let minus = loss(&prims);
                prims[i] = Primitive2D::from_params(kind, &base);
                let numeric = (plus - minus) / (2.0 * opts.step);
                let a = analytic[slot];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
                let g = SLOT_GROUP[slot];
                worst[g] = worst[g].max(rel);
            }
        }
    }
    GradcheckReport { trials: opts.trials, max_rel_error: worst }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_check_passes_for_both_families() {
        for family in [KernelFamily::Wavelet, KernelFamily::Gaussian] {
            let report = run_gradcheck(&GradcheckOptions { trials: 8, family, ..GradcheckOptions::default() });
            assert!(report.max() < 1e-4, "{family}: {:?}", report.max_rel_error);
        }
    }
}
