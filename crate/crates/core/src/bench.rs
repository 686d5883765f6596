//! Paired wavelet / Gaussian-baseline fitting sweeps.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::error::Error;
use crate::imaging::ImageBuffer;
use crate::raster::KernelFamily;
use crate::trainer::{TrainConfig, TrainError, Trainer};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub pattern: String,
    pub n: usize,
    pub seed: u64,
    pub family: KernelFamily,
    pub psnr: f64,
    pub ssim: f64,
    /// Zero unless timing was requested.
    pub wall_s: f64,
}

/// Trains `config` to completion and returns final (psnr, ssim).
pub fn fit_once(target: &ImageBuffer, config: TrainConfig) -> Result<(f64, f64), TrainError> {
    let mut trainer = Trainer::new(target.clone(), config)?;
    for _ in 0..trainer.config.steps {
        trainer.step()?;
    }
    let m = trainer.evaluate();
    Ok((m.psnr, m.ssim))
}

/// For every N and seed, one wavelet fit with `base` and one fit with its
/// Gaussian baseline. Seeds are `base.seed .. base.seed + seeds`.
pub fn run_bench(
    target: &ImageBuffer,
    pattern: &str,
    n_list: &[usize],
    seeds: u64,
    base: &TrainConfig,
    timed: bool,
    mut on_row: impl FnMut(&BenchRow),
) -> Result<Vec<BenchRow>, TrainError> {
    let mut rows = Vec::new();
    for &n in n_list {
        for seed in base.seed..base.seed + seeds {
            let wavelet = TrainConfig { num_primitives: n, seed, family: KernelFamily::Wavelet, ..base.clone() };
            for config in [wavelet.clone(), wavelet.gaussian_baseline()] {
                let family = config.family;
                let start = Instant::now();
                let (psnr, ssim) = fit_once(target, config)?;
                let wall_s = if timed { start.elapsed().as_secs_f64() } else { 0.0 };
                let row = BenchRow { pattern: pattern.to_string(), n, seed, family, psnr, ssim, wall_s };
                on_row(&row);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

pub const BENCH_CSV_HEADER: &str = "pattern,n,seed,family,psnr,ssim,wall_s";

pub fn write_bench_csv(rows: &[BenchRow], path: impl AsRef<Path>) -> Result<(), Error> {
    let path = path.as_ref();
    let mut out = String::from(BENCH_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{},{},{},{},{}\n", r.pattern, r.n, r.seed, r.family, r.psnr, r.ssim, r.wall_s));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Median of a nonempty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Ranks starting at 1, ties sharing their average rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; NaN when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx * vy).sqrt()
}
