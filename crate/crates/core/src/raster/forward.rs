use std::sync::Mutex;

use rayon::prelude::*;

use super::tiles::{TileGrid, TILE_SIZE};
use super::{pixel_center, RasterConfig, RowSamples, RowScanner, Splat};
use crate::imaging::ImageBuffer;

/// Weighted-sum render plus what the backward pass needs.
#[derive(Clone, Debug)]
pub struct SumForward {
    pub image: ImageBuffer,
    pub grid: TileGrid,
    pub(crate) samples: Vec<TileSamples>,
}

impl SumForward {
    pub fn num_samples(&self) -> usize {
        self.samples.iter().map(|t| t.value.len()).sum()
    }

    /// Hands the sample buffers back for reuse by later forward passes.
    pub fn recycle(self) {
        let mut pool = SAMPLE_POOL.lock().unwrap_or_else(|e| e.into_inner());
        let room = MAX_POOLED.saturating_sub(pool.len());
        pool.extend(self.samples.into_iter().take(room));
    }
}

const MAX_POOLED: usize = 4096;

static SAMPLE_POOL: Mutex<Vec<TileSamples>> = Mutex::new(Vec::new());

fn pooled_samples(entries: usize, capacity: usize) -> TileSamples {
    let mut t = SAMPLE_POOL.lock().unwrap_or_else(|e| e.into_inner()).pop().unwrap_or_default();
    t.offsets.clear();
    t.pixel.clear();
    t.value.clear();
    t.env_sin.clear();
    t.offsets.reserve(entries + 1);
    t.pixel.reserve(capacity);
    t.value.reserve(capacity);
    t.env_sin.reserve(capacity);
    t
}

/// Kernel samples of one tile that passed the contribution test, grouped by
/// tile entry, so the backward pass need not evaluate kernels again.
#[derive(Clone, Debug, Default)]
pub(crate) struct TileSamples {
    /// `offsets[k]..offsets[k + 1]` are the samples of tile entry `k`.
    pub offsets: Vec<u32>,
    /// Row-major pixel index within the tile.
    pub pixel: Vec<u8>,
    pub value: Vec<f64>,
    /// `envelope · sin(f·d)`.
    pub env_sin: Vec<f64>,
}

/// α-blended render plus the per-pixel transmittance trace.
#[derive(Clone, Debug)]
pub struct AlphaForward {
    pub image: ImageBuffer,
    pub grid: TileGrid,
    /// Transmittance after the last processed contribution, row-major.
    pub final_transmittance: Vec<f64>,
    /// One past the tile-list position of the last processed contribution.
    pub n_contrib: Vec<u32>,
}

struct TileOut {
    color: Vec<f64>,
    transmittance: Vec<f64>,
    n_contrib: Vec<u32>,
}

/// `C(x) = Σᵢ cᵢ·αᵢ·Wᵢ(x)` over splats binned to the pixel's tile.
pub fn forward_sum(splats: &[Splat], width: usize, height: usize, cfg: &RasterConfig) -> SumForward {
    let grid = TileGrid::build_indexed(splats, width, height, cfg.cutoff_sigma);
    let (tiles, samples): (Vec<Vec<f64>>, Vec<TileSamples>) = (0..grid.num_tiles())
        .into_par_iter()
        .map(|t| sum_tile(splats, &grid, t, cfg))
        .unzip();

    let mut image = ImageBuffer::new(width, height);
    for (t, buf) in tiles.iter().enumerate() {
        let rect = grid.tile_rect(t);
        for y in rect.y0..rect.y1 {
            for x in rect.x0..rect.x1 {
                let local = ((y - rect.y0) * TILE_SIZE + (x - rect.x0)) * 3;
                image.set_pixel(x, y, [buf[local], buf[local + 1], buf[local + 2]]);
            }
        }
    }
    SumForward { image, grid, samples }
}

fn sum_tile(splats: &[Splat], grid: &TileGrid, tile: usize, cfg: &RasterConfig) -> (Vec<f64>, TileSamples) {
    let rect = grid.tile_rect(tile);
    let entries = grid.tile_entries(tile);
    let mut buf = vec![0.0; TILE_SIZE * TILE_SIZE * 3];
    let mut row = RowSamples::new();
    let capacity: usize = entries
        .iter()
        .filter_map(|&si| grid.bounds(si as usize).map(|b| rect.intersect(b).area()))
        .sum();
    let mut samples = pooled_samples(entries.len(), capacity);
    samples.offsets.push(0);
    for &si in entries {
        let s = &splats[si as usize];
        let Some(bounds) = grid.bounds(si as usize) else {
            samples.offsets.push(samples.value.len() as u32);
            continue;
        };
        let r = rect.intersect(bounds);
        let scanner = RowScanner::new(s, cfg.family, s.max_quad(cfg.min_contribution));
        let mut rows = scanner.tile(&r);
        for y in r.y0..r.y1 {
            let row_start = (y - rect.y0) * TILE_SIZE;
            rows.visit_row(&mut row, |x, value, env, sin| {
                let w = s.opacity * value;
                if w < cfg.min_contribution {
                    return;
                }
                let pixel = row_start + x - rect.x0;
                let local = pixel * 3;
                buf[local] += s.color[0] * w;
                buf[local + 1] += s.color[1] * w;
                buf[local + 2] += s.color[2] * w;
                samples.pixel.push(pixel as u8);
                samples.value.push(value);
                samples.env_sin.push(env * sin);
            });
        }
        samples.offsets.push(samples.value.len() as u32);
    }
    (buf, samples)
}

/// `C(x) = Σᵢ cᵢ·aᵢ·Πⱼ<ᵢ(1 − aⱼ)` with `aᵢ = min(αᵢ·Wᵢ(x), clamp)`, front to
/// back by depth (ties by index).
pub fn forward_alpha(splats: &[Splat], width: usize, height: usize, cfg: &RasterConfig) -> AlphaForward {
    let grid = TileGrid::build_depth_sorted(splats, width, height, cfg.cutoff_sigma);
    let tiles: Vec<TileOut> = (0..grid.num_tiles())
        .into_par_iter()
        .map(|t| alpha_tile(splats, &grid, t, cfg))
        .collect();

    let mut image = ImageBuffer::new(width, height);
    let mut final_transmittance = vec![1.0; width * height];
    let mut n_contrib = vec![0u32; width * height];
    for (t, out) in tiles.iter().enumerate() {
        let rect = grid.tile_rect(t);
        for y in rect.y0..rect.y1 {
            for x in rect.x0..rect.x1 {
                let local = (y - rect.y0) * TILE_SIZE + (x - rect.x0);
                let c = &out.color[local * 3..local * 3 + 3];
                image.set_pixel(x, y, [c[0], c[1], c[2]]);
                final_transmittance[y * width + x] = out.transmittance[local];
                n_contrib[y * width + x] = out.n_contrib[local];
            }
        }
    }
    AlphaForward { image, grid, final_transmittance, n_contrib }
}

fn alpha_tile(splats: &[Splat], grid: &TileGrid, tile: usize, cfg: &RasterConfig) -> TileOut {
    let rect = grid.tile_rect(tile);
    let entries = grid.tile_entries(tile);
    let q_max: Vec<f64> = entries.iter().map(|&i| splats[i as usize].max_quad(cfg.min_contribution)).collect();
    let n = TILE_SIZE * TILE_SIZE;
    let mut out = TileOut { color: vec![0.0; n * 3], transmittance: vec![1.0; n], n_contrib: vec![0; n] };
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            let local = (y - rect.y0) * TILE_SIZE + (x - rect.x0);
            let mut t = 1.0;
            let mut acc = [0.0; 3];
            let mut last = 0u32;
            for (k, &si) in entries.iter().enumerate() {
                let Some(a) = effective_alpha(splats, grid, si, q_max[k], x, y, cfg) else { continue };
                let s = &splats[si as usize];
                let wt = a.alpha * t;
                acc[0] += s.color[0] * wt;
                acc[1] += s.color[1] * wt;
                acc[2] += s.color[2] * wt;
                t *= 1.0 - a.alpha;
                last = k as u32 + 1;
                if t < cfg.min_transmittance {
                    break;
                }
            }
            out.color[local * 3..local * 3 + 3].copy_from_slice(&acc);
            out.transmittance[local] = t;
            out.n_contrib[local] = last;
        }
    }
    out
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct AlphaSample {
    /// Effective (clamped) alpha.
    pub alpha: f64,
    /// Whether the clamp was active.
    pub clamped: bool,
    pub value: f64,
    pub envelope: f64,
    /// `sin(f·d)`.
    pub sin: f64,
}

/// Effective alpha of splat `si` at pixel `(x, y)`, or `None` if the
/// contribution is outside the support or skipped.
#[inline(always)]
pub(crate) fn effective_alpha(
    splats: &[Splat],
    grid: &TileGrid,
    si: u32,
    q_max: f64,
    x: usize,
    y: usize,
    cfg: &RasterConfig,
) -> Option<AlphaSample> {
    let bounds = grid.bounds(si as usize)?;
    if !bounds.contains(x, y) {
        return None;
    }
    let s = &splats[si as usize];
    let d = pixel_center(x, y) - s.mean;
    if s.conic.quad_form(d) > q_max {
        return None;
    }
    let k = s.eval(d, cfg.family);
    let raw = s.opacity * k.value;
    let clamped = raw > cfg.alpha_clamp;
    let alpha = if clamped { cfg.alpha_clamp } else { raw };
    if alpha < cfg.min_contribution {
        return None;
    }
    Some(AlphaSample { alpha, clamped, value: k.value, envelope: k.envelope, sin: k.sin })
}

/// Transmittance before each processed contribution at one pixel, followed by
/// the final transmittance. Diagnostic helper; recomputes from scratch.
pub fn pixel_transmittance_sequence(splats: &[Splat], fwd: &AlphaForward, x: usize, y: usize, cfg: &RasterConfig) -> Vec<f64> {
    let grid = &fwd.grid;
    let tile = (y / TILE_SIZE) * grid.tiles_x + x / TILE_SIZE;
    let entries = grid.tile_entries(tile);
    let n = fwd.n_contrib[y * grid.width + x] as usize;
    let mut t = 1.0;
    let mut seq = vec![t];
    for &si in &entries[..n] {
        let q_max = splats[si as usize].max_quad(cfg.min_contribution);
        if let Some(a) = effective_alpha(splats, grid, si, q_max, x, y, cfg) {
            t *= 1.0 - a.alpha;
            seq.push(t);
        }
    }
    seq
}
