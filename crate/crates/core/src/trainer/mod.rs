//! Fixed-count fitting of 2D primitives to an image with Adam.

mod adam;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{AdamState, BETA1, BETA2, EPSILON as ADAM_EPSILON};

use crate::covariance::{CovKind, CovParams};
use crate::imaging::{self, ImageBuffer, ImagingError, SSIM_MIN_SIDE};
use crate::raster::{
    backward_alpha, backward_sum, forward_alpha, forward_sum, AccumMode, GradBuffers, KernelFamily, MergeMode,
    PreparedPrimitives, Primitive2D, RasterConfig, PARAMS_PER_PRIMITIVE,
};

/// Default standard deviation of the initial modulation frequencies, rad/px.
pub const DEFAULT_FREQ_INIT_STD: f64 = 0.05;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{requested} primitives requested for an image with {pixels} pixels")]
    ImageTooSmall { requested: usize, pixels: usize },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

/// Per-group learning rates. The position rate decays exponentially from
/// `mu` to `mu_final` over the run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub mu: f64,
    pub mu_final: f64,
    pub cov: f64,
    pub freq: f64,
    pub color: f64,
    pub opacity: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self { mu: 5e-3, mu_final: 5e-5, cov: 5e-3, freq: 2.5e-3, color: 1e-2, opacity: 5e-2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    L2,
    /// `(1 − w)·L2 + w·(1 − SSIM)`.
    L2Ssim { weight: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub num_primitives: usize,
    pub steps: usize,
    pub mode: AccumMode,
    pub cov: CovKind,
    pub family: KernelFamily,
    pub lr: LearningRates,
    pub freq_init_std: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub loss: LossKind,
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_primitives: 1000,
            steps: 5000,
            mode: AccumMode::Sum,
            cov: CovKind::Cholesky,
            family: KernelFamily::Wavelet,
            lr: LearningRates::default(),
            freq_init_std: DEFAULT_FREQ_INIT_STD,
            seed: 0,
            eval_every: 500,
            loss: LossKind::L2,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    /// Gaussian-primitive baseline of this configuration: Gaussian kernel,
    /// zero initial frequency, frozen frequency group.
    pub fn gaussian_baseline(&self) -> Self {
        let mut c = self.clone();
        c.family = KernelFamily::Gaussian;
        c.freq_init_std = 0.0;
        c.lr.freq = 0.0;
        c
    }

    pub fn raster_config(&self) -> RasterConfig {
        RasterConfig {
            family: self.family,
            merge: if self.deterministic { MergeMode::Deterministic } else { MergeMode::Unordered },
            ..RasterConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.num_primitives == 0 || self.steps == 0 || self.eval_every == 0 {
            return bad("counts must be at least 1");
        }
        let lr = &self.lr;
        for (name, v) in [("mu", lr.mu), ("mu_final", lr.mu_final), ("cov", lr.cov), ("color", lr.color), ("opacity", lr.opacity)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(&format!("learning rate {name} must be positive"));
            }
        }
        // Zero is allowed: it freezes the frequency group.
        if !(lr.freq.is_finite() && lr.freq >= 0.0) {
            return bad("frequency learning rate must be nonnegative");
        }
        if !(self.freq_init_std.is_finite() && self.freq_init_std >= 0.0) {
            return bad("freq_init_std must be nonnegative");
        }
        if let LossKind::L2Ssim { weight } = self.loss {
            if !(0.0..=1.0).contains(&weight) {
                return bad("ssim weight must lie in [0, 1]");
            }
        }
        Ok(())
    }

    /// Learning rate of flat parameter slot `slot` at optimizer step `step`.
    pub fn learning_rate(&self, slot: usize, step: u64) -> f64 {
        match slot {
            0 | 1 => {
                let t = (step as f64 / self.steps as f64).min(1.0);
                self.lr.mu * (self.lr.mu_final / self.lr.mu).powf(t)
            }
            2..=4 => self.lr.cov,
            5 | 6 => self.lr.freq,
            7..=9 => self.lr.color,
            _ => self.lr.opacity,
        }
    }
}

/// Positions uniform over the image, colors sampled bilinearly from the
/// target, opacity 0.5, isotropic covariance of standard deviation
/// `√(W·H/N)` px, and frequencies drawn from `N(0, freq_init_std²)`.
///
/// The random stream does not depend on the covariance kind or kernel
/// family, so a Gaussian baseline with the same seed starts from the same
/// positions.
pub fn init_primitives(target: &ImageBuffer, config: &TrainConfig) -> Result<Vec<Primitive2D>, TrainError> {
    config.validate()?;
    let (w, h) = (target.width as f64, target.height as f64);
    let pixels = target.width * target.height;
    if config.num_primitives > pixels {
        return Err(TrainError::ImageTooSmall { requested: config.num_primitives, pixels });
    }
    let sigma = (w * h / config.num_primitives as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let prims = (0..config.num_primitives)
        .map(|_| {
            let x = rng.gen::<f64>() * w;
            let y = rng.gen::<f64>() * h;
            let theta = rng.gen::<f64>() * std::f64::consts::PI;
            let fx: f64 = rng.sample(StandardNormal);
            let fy: f64 = rng.sample(StandardNormal);
            Primitive2D {
                mu: [x, y],
                cov: CovParams::isotropic(config.cov, sigma, theta),
                freq: [fx * config.freq_init_std, fy * config.freq_init_std],
                color: target.sample_bilinear(x, y),
                opacity_raw: 0.0,
            }
        })
        .collect();
    Ok(prims)
}

/// Forward render plus gradients of `L` given `dL/dC`.
pub fn render(prims: &[Primitive2D], width: usize, height: usize, mode: AccumMode, raster: &RasterConfig) -> ImageBuffer {
    let prepared = PreparedPrimitives::new(prims);
    match mode {
        AccumMode::Sum => {
            let mut fwd = forward_sum(&prepared.splats, width, height, raster);
            let image = std::mem::take(&mut fwd.image);
            fwd.recycle();
            image
        }
        AccumMode::Alpha => forward_alpha(&prepared.splats, width, height, raster).image,
    }
}

/// Renders, then back-propagates the loss produced by `loss_grad`, which
/// maps the rendered image to `(loss, dL/dC)`.
pub fn render_and_backprop<E>(
    prims: &[Primitive2D],
    width: usize,
    height: usize,
    mode: AccumMode,
    raster: &RasterConfig,
    loss_grad: impl FnOnce(&ImageBuffer) -> Result<(f64, ImageBuffer), E>,
) -> Result<(f64, ImageBuffer, GradBuffers), E> {
    let prepared = PreparedPrimitives::new(prims);
    let splats = &prepared.splats;
    let (loss, image, splat_grads) = match mode {
        AccumMode::Sum => {
            let mut fwd = forward_sum(splats, width, height, raster);
            let (loss, dl) = match loss_grad(&fwd.image) {
                Ok(v) => v,
                Err(e) => {
                    fwd.recycle();
                    return Err(e);
                }
            };
            let g = backward_sum(splats, &fwd, &dl, raster);
            let image = std::mem::take(&mut fwd.image);
            fwd.recycle();
            (loss, image, g)
        }
        AccumMode::Alpha => {
            let fwd = forward_alpha(splats, width, height, raster);
            let (loss, dl) = loss_grad(&fwd.image)?;
            let g = backward_alpha(splats, &fwd, &dl, raster);
            (loss, fwd.image, g)
        }
    };
    Ok((loss, image, prepared.chain(&splat_grads)))
}

/// Mean squared error over pixels and channels, and its gradient.
pub fn l2_loss(rendered: &ImageBuffer, target: &ImageBuffer) -> Result<(f64, ImageBuffer), ImagingError> {
    rendered.same_dims(target)?;
    let n = rendered.data.len() as f64;
    let mut grad = ImageBuffer::new(rendered.width, rendered.height);
    let mut sum = 0.0;
    for ((g, r), t) in grad.data.iter_mut().zip(&rendered.data).zip(&target.data) {
        let d = r - t;
        sum += d * d;
        *g = 2.0 * d / n;
    }
    Ok((sum / n, grad))
}

/// One forward/backward/Adam update. Returns the L2 loss before the update.
pub fn train_step(
    prims: &mut [Primitive2D],
    target: &ImageBuffer,
    adam: &mut AdamState,
    config: &TrainConfig,
) -> Result<f64, TrainError> {
    let raster = config.raster_config();
    let mut l2 = f64::NAN;
    let (_, _, grads) = render_and_backprop(prims, target.width, target.height, config.mode, &raster, |img| {
        let (loss, mut grad) = l2_loss(img, target)?;
        l2 = loss;
        if let LossKind::L2Ssim { weight } = config.loss {
            let (_, ssim_grad) = imaging::ssim_with_grad(img, target)?;
            for (g, s) in grad.data.iter_mut().zip(&ssim_grad.data) {
                *g = (1.0 - weight) * *g - weight * s;
            }
        }
        Ok::<_, TrainError>((loss, grad))
    })?;
    if !l2.is_finite() || !grads.is_finite() {
        return Err(TrainError::NonFiniteLoss { step: adam.step });
    }

    let mut params: Vec<f64> = prims.iter().flat_map(|p| p.to_params()).collect();
    let flat: Vec<f64> = grads.grads.iter().flat_map(|g| g.to_array()).collect();
    let step = adam.step;
    adam.update(&mut params, &flat, |i| config.learning_rate(i % PARAMS_PER_PRIMITIVE, step));
    for (p, chunk) in prims.iter_mut().zip(params.chunks_exact(PARAMS_PER_PRIMITIVE)) {
        *p = Primitive2D::from_params(config.cov, chunk.try_into().expect("chunk size"));
    }
    Ok(l2)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalMetrics {
    pub psnr: f64,
    /// NaN when the image is too small for the SSIM window.
    pub ssim: f64,
}

/// Renders in the configured mode, clamps to `[0, 1]` and scores against
/// the target.
pub fn evaluate(prims: &[Primitive2D], target: &ImageBuffer, config: &TrainConfig) -> EvalMetrics {
    let img = render(prims, target.width, target.height, config.mode, &config.raster_config()).clamped();
    let psnr = imaging::psnr(&img, target).expect("render matches target dimensions");
    let ssim = if target.width >= SSIM_MIN_SIDE && target.height >= SSIM_MIN_SIDE {
        imaging::ssim(&img, target).expect("render matches target dimensions")
    } else {
        f64::NAN
    };
    EvalMetrics { psnr, ssim }
}

/// Owns a primitive set, its optimizer state and the target between steps.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub primitives: Vec<Primitive2D>,
    pub adam: AdamState,
    target: ImageBuffer,
}

impl Trainer {
    pub fn new(target: ImageBuffer, config: TrainConfig) -> Result<Self, TrainError> {
        if matches!(config.loss, LossKind::L2Ssim { .. }) && (target.width < SSIM_MIN_SIDE || target.height < SSIM_MIN_SIDE) {
            return Err(TrainError::InvalidConfig("SSIM loss needs an image of at least 11x11".into()));
        }
        let primitives = init_primitives(&target, &config)?;
        let adam = AdamState::new(primitives.len() * PARAMS_PER_PRIMITIVE);
        Ok(Self { config, primitives, adam, target })
    }

    /// Resumes from saved state.
    pub fn from_state(target: ImageBuffer, config: TrainConfig, primitives: Vec<Primitive2D>, adam: AdamState) -> Result<Self, TrainError> {
        config.validate()?;
        if adam.len() != primitives.len() * PARAMS_PER_PRIMITIVE {
            return Err(TrainError::InvalidConfig("optimizer state does not match primitive count".into()));
        }
        Ok(Self { config, primitives, adam, target })
    }

    pub fn target(&self) -> &ImageBuffer {
        &self.target
    }

    /// Number of optimizer steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.adam.step
    }

    pub fn step(&mut self) -> Result<f64, TrainError> {
        train_step(&mut self.primitives, &self.target, &mut self.adam, &self.config)
    }

    pub fn evaluate(&self) -> EvalMetrics {
        evaluate(&self.primitives, &self.target, &self.config)
    }

    pub fn render(&self) -> ImageBuffer {
        render(&self.primitives, self.target.width, self.target.height, self.config.mode, &self.config.raster_config())
    }

    /// Current loss without updating anything.
    pub fn loss(&self) -> f64 {
        l2_loss(&self.render(), &self.target).expect("render matches target dimensions").0
    }
}
