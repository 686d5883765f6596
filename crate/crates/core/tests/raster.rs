use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wipes::covariance::{CovKind, CovParams};
use wipes::gradcheck::random_primitive;
use wipes::imaging::ImageBuffer;
use wipes::primitive::{Kernel, Vec2, WaveletKernel2D};
use wipes::trainer::render;
use wipes::raster::{
    forward_alpha, forward_sum, pixel_transmittance_sequence, AccumMode, KernelFamily, PreparedPrimitives, Primitive2D,
    RasterConfig, Splat, ALPHA_CLAMP, CUTOFF_SIGMA, MIN_CONTRIBUTION,
};

fn random_scene(rng: &mut impl Rng, n: usize, w: usize, h: usize) -> Vec<Primitive2D> {
    (0..n)
        .map(|i| {
            let kind = if i % 2 == 0 { CovKind::Cholesky } else { CovKind::Rs };
            let mut p = random_primitive(rng, kind, w, h);
            p.mu = [rng.gen_range(-2.0..w as f64 + 2.0), rng.gen_range(-2.0..h as f64 + 2.0)];
            p
        })
        .collect()
}

fn splats(prims: &[Primitive2D], rng: &mut impl Rng) -> Vec<Splat> {
    let mut s = PreparedPrimitives::new(prims).splats;
    for sp in &mut s {
        sp.depth = rng.gen_range(0.0..10.0);
    }
    s
}

fn kernel_of(s: &Splat) -> WaveletKernel2D {
    WaveletKernel2D::new(s.mean, s.conic, s.freq, s.beta)
}

fn center(x: usize, y: usize) -> Vec2 {
    Vec2::new(x as f64 + 0.5, y as f64 + 0.5)
}

fn untruncated_sum(splats: &[Splat], w: usize, h: usize) -> ImageBuffer {
    ImageBuffer::from_fn(w, h, |x, y| {
        let mut c = [0.0; 3];
        for s in splats {
            let v = s.opacity * kernel_of(s).eval_wavelet(&center(x, y));
            for k in 0..3 {
                c[k] += s.color[k] * v;
            }
        }
        c
    })
}

/// Front-to-back compositor over every splat, sorted by (depth, index), with
/// the same support box, skip threshold, clamp and early stop.
fn brute_force_alpha(splats: &[Splat], w: usize, h: usize) -> (ImageBuffer, Vec<f64>) {
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| splats[a].depth.total_cmp(&splats[b].depth).then(a.cmp(&b)));
    let mut trans = vec![1.0; w * h];
    let img = ImageBuffer::from_fn(w, h, |x, y| {
        let p = center(x, y);
        let mut t = 1.0;
        let mut c = [0.0; 3];
        for &i in &order {
            let s = &splats[i];
            let r = CUTOFF_SIGMA * s.cov.eigenvalues().0.sqrt();
            if (p.x - s.mean.x).abs() > r || (p.y - s.mean.y).abs() > r {
                continue;
            }
            let a = (s.opacity * kernel_of(s).eval_wavelet(&p)).min(ALPHA_CLAMP);
            if a < MIN_CONTRIBUTION {
                continue;
            }
            for k in 0..3 {
                c[k] += s.color[k] * a * t;
            }
            t *= 1.0 - a;
            if t < 1e-4 {
                break;
            }
        }
        trans[y * w + x] = t;
        c
    });
    (img, trans)
}

#[test]
fn smooth_sum_matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let prims = random_scene(&mut rng, 12, 37, 29);
        let s = splats(&prims, &mut rng);
        let fwd = forward_sum(&s, 37, 29, &RasterConfig::smooth(KernelFamily::Wavelet));
        assert!(fwd.image.max_abs_diff(&untruncated_sum(&s, 37, 29)) < 1e-12);
    }
}

#[test]
fn truncation_error_is_bounded_per_splat() {
    // Each splat loses at most max(skip threshold, α·e^{−9/2}) per channel.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let prims = random_scene(&mut rng, 15, 40, 32);
        let s = splats(&prims, &mut rng);
        let fwd = forward_sum(&s, 40, 32, &RasterConfig::default());
        let exact = untruncated_sum(&s, 40, 32);
        let bound: f64 = s
            .iter()
            .map(|sp| {
                let cmax = sp.color.iter().copied().fold(0.0, f64::max);
                cmax * MIN_CONTRIBUTION.max(sp.opacity * (-0.5 * CUTOFF_SIGMA * CUTOFF_SIGMA).exp())
            })
            .sum();
        let err = fwd.image.max_abs_diff(&exact);
        assert!(err <= bound, "{err} > {bound}");
        for (a, b) in fwd.image.data.iter().zip(&exact.data) {
            assert!(*a <= *b + 1e-12, "truncation only removes energy");
        }
    }
}

#[test]
fn alpha_mode_matches_brute_force_compositor() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let n = rng.gen_range(1..=5);
        let prims = random_scene(&mut rng, n, 24, 20);
        let s = splats(&prims, &mut rng);
        let cfg = RasterConfig::default();
        let fwd = forward_alpha(&s, 24, 20, &cfg);
        let (img, trans) = brute_force_alpha(&s, 24, 20);
        assert!(fwd.image.max_abs_diff(&img) < 1e-12);
        for (a, b) in fwd.final_transmittance.iter().zip(&trans) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn gaussian_family_equals_zero_frequency_wavelet() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut prims = random_scene(&mut rng, 20, 48, 48);
    for p in &mut prims {
        p.freq = [0.0, 0.0];
    }
    let s = splats(&prims, &mut rng);
    let (wave, gauss) = (RasterConfig::with_family(KernelFamily::Wavelet), RasterConfig::with_family(KernelFamily::Gaussian));
    assert_eq!(forward_sum(&s, 48, 48, &wave).image.data, forward_sum(&s, 48, 48, &gauss).image.data);
    assert_eq!(forward_alpha(&s, 48, 48, &wave).image.data, forward_alpha(&s, 48, 48, &gauss).image.data);
}

fn point(mu: [f64; 2], sigma: f64, color: [f64; 3], opacity_raw: f64) -> Primitive2D {
    Primitive2D { mu, cov: CovParams::isotropic(CovKind::Cholesky, sigma, 0.0), freq: [0.0, 0.0], color, opacity_raw }
}

#[test]
fn forward_examples() {
    let cfg = RasterConfig::default();
    let half = point([8.5, 8.5], 2.0, [1.0, 0.0, 0.0], 0.0);
    let img = render(&[half], 17, 17, AccumMode::Sum, &cfg);
    let c = img.pixel(8, 8);
    assert!((c[0] - 0.5).abs() < 1e-6 && c[1] == 0.0 && c[2] == 0.0);
    assert!(render(&[], 17, 17, AccumMode::Sum, &cfg).data.iter().all(|&v| v == 0.0));

    let solid = point([8.5, 8.5], 2.0, [0.4, 0.8, 1.0], 40.0);
    let c = render(&[solid], 17, 17, AccumMode::Alpha, &cfg).pixel(8, 8);
    for (got, want) in c.iter().zip([0.4, 0.8, 1.0]) {
        assert!((got - 0.99 * want).abs() < 1e-12);
    }

    let rear = point([8.5, 8.5], 3.0, [1.0, 1.0, 1.0], 40.0);
    let both = render(&[solid, rear], 17, 17, AccumMode::Alpha, &cfg).pixel(8, 8);
    for (b, s) in both.iter().zip(c) {
        assert!(b - s <= 0.01 + 1e-12);
    }
}

#[test]
fn contribution_skip_changes_pixels_by_less_than_three_levels() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let no_skip = RasterConfig { min_contribution: 0.0, ..RasterConfig::default() };
    for _ in 0..40 {
        let n = rng.gen_range(20..=100);
        let prims = random_scene(&mut rng, n, 64, 64);
        let s = splats(&prims, &mut rng);
        let a = forward_sum(&s, 64, 64, &RasterConfig::default()).image;
        let b = forward_sum(&s, 64, 64, &no_skip).image;
        let diff = a.max_abs_diff(&b);
        assert!(diff < 3.0 / 255.0, "{n} primitives: {diff}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sum_mode_is_linear_in_color(seed in 0u64..1000, scale in 0.1f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prims = random_scene(&mut rng, 8, 30, 30);
        let s = splats(&prims, &mut rng);
        let mut scaled = s.clone();
        for sp in &mut scaled {
            for c in &mut sp.color {
                *c *= scale;
            }
        }
        let cfg = RasterConfig::default();
        let a = forward_sum(&s, 30, 30, &cfg).image;
        let b = forward_sum(&scaled, 30, 30, &cfg).image;
        for (x, y) in a.data.iter().zip(&b.data) {
            prop_assert!((x * scale - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn sum_mode_is_additive_over_splats(seed in 0u64..1000, split in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prims = random_scene(&mut rng, 8, 30, 30);
        let s = splats(&prims, &mut rng);
        let cfg = RasterConfig::default();
        let all = forward_sum(&s, 30, 30, &cfg).image;
        let a = forward_sum(&s[..split], 30, 30, &cfg).image;
        let b = forward_sum(&s[split..], 30, 30, &cfg).image;
        for ((t, x), y) in all.data.iter().zip(&a.data).zip(&b.data) {
            prop_assert!((t - x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn compositing_invariants(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=5);
        let prims = random_scene(&mut rng, n, 20, 20);
        let s = splats(&prims, &mut rng);
        let cfg = RasterConfig::default();
        let fwd = forward_alpha(&s, 20, 20, &cfg);
        let lo: [f64; 3] = std::array::from_fn(|k| s.iter().map(|p| p.color[k]).fold(f64::INFINITY, f64::min));
        let hi: [f64; 3] = std::array::from_fn(|k| s.iter().map(|p| p.color[k]).fold(0.0, f64::max));
        for y in 0..20 {
            for x in 0..20 {
                let seq = pixel_transmittance_sequence(&s, &fwd, x, y, &cfg);
                prop_assert!(seq.windows(2).all(|w| w[1] <= w[0]));
                prop_assert!(seq.iter().all(|t| (0.0..=1.0).contains(t)));
                let covered = 1.0 - fwd.final_transmittance[y * 20 + x];
                let c = fwd.image.pixel(x, y);
                for k in 0..3 {
                    prop_assert!(c[k] >= lo[k] * covered - 1e-12 && c[k] <= hi[k] * covered + 1e-12);
                }
            }
        }
    }
}
