use rayon::prelude::*;

use super::forward::{effective_alpha, AlphaForward, SumForward};
use super::tiles::TileGrid;
use super::tiles::TILE_SIZE;
use super::{pixel_center, KernelFamily, KernelSample, MergeMode, RasterConfig, Splat};
use crate::imaging::ImageBuffer;
use crate::primitive::Vec2;

/// Loss gradient with respect to one splat's screen-space quantities.
/// `conic` holds `∂L/∂(a, b, c)` for the quadratic form `a·dx² + 2b·dx·dy + c·dy²`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SplatGrad {
    pub mean: [f64; 2],
    pub conic: [f64; 3],
    pub freq: [f64; 2],
    pub color: [f64; 3],
    pub opacity: f64,
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        for i in 0..2 {
            self.mean[i] += o.mean[i];
            self.freq[i] += o.freq[i];
        }
        for i in 0..3 {
            self.conic[i] += o.conic[i];
            self.color[i] += o.color[i];
        }
        self.opacity += o.opacity;
    }
}

/// Accumulates `∂L/∂W · ∂W/∂(μ, conic, f)` for one pixel.
///
/// With `q = dᵀAd`, `φ = f·d` and `W = ½[β cos φ + 1]·exp(−q/2)`:
/// `∂W/∂q = −W/2`, `∂W/∂φ = −½β sin φ · G`, `∂q/∂μ = −2Ad`, `∂φ/∂μ = −f`
/// and `∂φ/∂f = d`.
#[inline(always)]
fn accumulate_geometry(g: &mut SplatGrad, s: &Splat, d: Vec2, k: &KernelSample, dl_dw: f64, family: KernelFamily) {
    let dl_dq = -0.5 * k.value * dl_dw;
    g.conic[0] += dl_dq * d.x * d.x;
    g.conic[1] += dl_dq * 2.0 * d.x * d.y;
    g.conic[2] += dl_dq * d.y * d.y;
    let ad = s.conic.mul_vec(d);
    g.mean[0] -= 2.0 * dl_dq * ad.x;
    g.mean[1] -= 2.0 * dl_dq * ad.y;
    if family == KernelFamily::Wavelet {
        let dl_dphase = -0.5 * s.beta * k.sin * k.envelope * dl_dw;
        g.mean[0] -= dl_dphase * s.freq.x;
        g.mean[1] -= dl_dphase * s.freq.y;
        g.freq[0] += dl_dphase * d.x;
        g.freq[1] += dl_dphase * d.y;
    }
}

fn merge(grid: &TileGrid, n: usize, per_tile: impl Fn(usize) -> Vec<SplatGrad> + Sync, mode: MergeMode) -> Vec<SplatGrad> {
    match mode {
        MergeMode::Deterministic => {
            let partials: Vec<Vec<SplatGrad>> = (0..grid.num_tiles()).into_par_iter().map(&per_tile).collect();
            let mut out = vec![SplatGrad::default(); n];
            for (t, local) in partials.iter().enumerate() {
                for (g, &si) in local.iter().zip(grid.tile_entries(t)) {
                    out[si as usize].add(g);
                }
            }
            out
        }
        MergeMode::Unordered => (0..grid.num_tiles())
            .into_par_iter()
            .fold(
                || vec![SplatGrad::default(); n],
                |mut acc, t| {
                    for (g, &si) in per_tile(t).iter().zip(grid.tile_entries(t)) {
                        acc[si as usize].add(g);
                    }
                    acc
                },
            )
            .reduce(
                || vec![SplatGrad::default(); n],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(&b) {
                        x.add(y);
                    }
                    a
                },
            ),
    }
}

/// Gradients of a scalar loss through [`forward_sum`](super::forward_sum),
/// given `∂L/∂C` per pixel and channel.
pub fn backward_sum(splats: &[Splat], fwd: &SumForward, dl_dimage: &ImageBuffer, cfg: &RasterConfig) -> Vec<SplatGrad> {
    let grid = &fwd.grid;
    let wavelet = cfg.family == KernelFamily::Wavelet;
    let width = dl_dimage.width;
    let per_tile = |t: usize| -> Vec<SplatGrad> {
        let rect = grid.tile_rect(t);
        let entries = grid.tile_entries(t);
        let ts = &fwd.samples[t];
        let mut local = vec![SplatGrad::default(); entries.len()];
        for (k, (g, &si)) in local.iter_mut().zip(entries).enumerate() {
            let s = &splats[si as usize];
            // Moments of ∂L/∂q and ∂L/∂φ over the pixel offsets; the conic
            // and frequency factors are applied once at the end.
            let (mut q_xx, mut q_xy, mut q_yy, mut q_x, mut q_y) = (0.0, 0.0, 0.0, 0.0, 0.0);
            let (mut p_1, mut p_x, mut p_y) = (0.0, 0.0, 0.0);
            let (mut c0, mut c1, mut c2, mut op) = (0.0, 0.0, 0.0, 0.0);
            let half_beta = 0.5 * s.beta;
            for j in ts.offsets[k] as usize..ts.offsets[k + 1] as usize {
                let p = ts.pixel[j] as usize;
                let (x, y) = (rect.x0 + p % TILE_SIZE, rect.y0 + p / TILE_SIZE);
                let dx = x as f64 + 0.5 - s.mean.x;
                let dy = y as f64 + 0.5 - s.mean.y;
                let value = ts.value[j];
                let w = s.opacity * value;
                let at = (y * width + x) * 3;
                let dl_dc = &dl_dimage.data[at..at + 3];
                c0 += dl_dc[0] * w;
                c1 += dl_dc[1] * w;
                c2 += dl_dc[2] * w;
                let dl_dweight = dl_dc[0] * s.color[0] + dl_dc[1] * s.color[1] + dl_dc[2] * s.color[2];
                op += dl_dweight * value;
                let dl_dw = dl_dweight * s.opacity;
                let dl_dq = -0.5 * value * dl_dw;
                q_xx += dl_dq * dx * dx;
                q_xy += dl_dq * dx * dy;
                q_yy += dl_dq * dy * dy;
                q_x += dl_dq * dx;
                q_y += dl_dq * dy;
                if wavelet {
                    let dl_dphase = -half_beta * ts.env_sin[j] * dl_dw;
                    p_1 += dl_dphase;
                    p_x += dl_dphase * dx;
                    p_y += dl_dphase * dy;
                }
            }
            let a = s.conic;
            g.color = [c0, c1, c2];
            g.opacity = op;
            g.conic = [q_xx, 2.0 * q_xy, q_yy];
            g.mean = [
                -2.0 * (a.xx * q_x + a.xy * q_y) - p_1 * s.freq.x,
                -2.0 * (a.xy * q_x + a.yy * q_y) - p_1 * s.freq.y,
            ];
            g.freq = [p_x, p_y];
        }
        local
    };
    merge(grid, splats.len(), per_tile, cfg.merge)
}

/// Gradients through [`forward_alpha`](super::forward_alpha). Each pixel is
/// walked back to front from its last processed contribution, recovering
/// `Tᵢ = Tᵢ₊₁ / (1 − aᵢ)` and the color accumulated behind each splat.
pub fn backward_alpha(splats: &[Splat], fwd: &AlphaForward, dl_dimage: &ImageBuffer, cfg: &RasterConfig) -> Vec<SplatGrad> {
    let grid = &fwd.grid;
    let width = grid.width;
    let per_tile = |t: usize| -> Vec<SplatGrad> {
        let rect = grid.tile_rect(t);
        let entries = grid.tile_entries(t);
        let q_max: Vec<f64> = entries.iter().map(|&i| splats[i as usize].max_quad(cfg.min_contribution)).collect();
        let mut local = vec![SplatGrad::default(); entries.len()];
        for y in rect.y0..rect.y1 {
            for x in rect.x0..rect.x1 {
                let n = fwd.n_contrib[y * width + x] as usize;
                if n == 0 {
                    continue;
                }
                let dl_dc = dl_dimage.pixel(x, y);
                let mut t = fwd.final_transmittance[y * width + x];
                let mut behind = [0.0; 3];
                for k in (0..n).rev() {
                    let si = entries[k];
                    let Some(a) = effective_alpha(splats, grid, si, q_max[k], x, y, cfg) else { continue };
                    let s = &splats[si as usize];
                    let one_minus = 1.0 - a.alpha;
                    t /= one_minus;
                    let wt = a.alpha * t;
                    let g = &mut local[k];
                    g.color[0] += dl_dc[0] * wt;
                    g.color[1] += dl_dc[1] * wt;
                    g.color[2] += dl_dc[2] * wt;
                    let front = dl_dc[0] * s.color[0] + dl_dc[1] * s.color[1] + dl_dc[2] * s.color[2];
                    let back = dl_dc[0] * behind[0] + dl_dc[1] * behind[1] + dl_dc[2] * behind[2];
                    let dl_dalpha = t * front - back / one_minus;
                    for c in 0..3 {
                        behind[c] += s.color[c] * wt;
                    }
                    if a.clamped {
                        continue;
                    }
                    g.opacity += dl_dalpha * a.value;
                    let d = pixel_center(x, y) - s.mean;
                    let sample = KernelSample { value: a.value, envelope: a.envelope, sin: a.sin };
                    accumulate_geometry(g, s, d, &sample, dl_dalpha * s.opacity, cfg.family);
                }
            }
        }
        local
    };
    merge(grid, splats.len(), per_tile, cfg.merge)
}
