use super::ImageBuffer;

/// Radially chirped zone plate `½ + ½·sin(k·(u² + v²))` with `u, v`
/// spanning `[−1, 1]` from the first to the last pixel. The local angular
/// frequency grows linearly with radius, reaching `2k·r` per unit of `u`.
pub fn gen_zone_plate(size: usize, strength: f64) -> ImageBuffer {
    assert!(size >= 2, "zone plate needs at least two pixels per side");
    let span = (size - 1) as f64;
    let coord = |i: usize| (2.0 * i as f64 - span) / span;
    ImageBuffer::from_fn(size, size, |x, y| {
        let (u, v) = (coord(x), coord(y));
        let value = 0.5 + 0.5 * (strength * (u * u + v * v)).sin();
        [value; 3]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    #[test]
    fn center_is_mid_gray() {
        let img = gen_zone_plate(65, 40.0);
        assert_eq!(img.pixel(32, 32), [0.5; 3]);
    }

    #[test]
    fn zero_strength_is_constant() {
        let img = gen_zone_plate(32, 0.0);
        assert!(img.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn values_in_unit_interval() {
        for k in [1.0, 40.0, 123.4, 1000.0] {
            let img = gen_zone_plate(48, k);
            assert!(img.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    /// Index of the largest non-DC bin (as radial frequency in bins) of a
    /// Hann-windowed 32×32 patch.
    fn peak_radius(img: &ImageBuffer, x0: usize, y0: usize) -> f64 {
        let n = 32;
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(n);
        let hann = |i: usize| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
        let mut data: Vec<Complex<f64>> = (0..n * n)
            .map(|i| {
                let (x, y) = (i % n, i / n);
                Complex::new((img.pixel(x0 + x, y0 + y)[0] - 0.5) * hann(x) * hann(y), 0.0)
            })
            .collect();
        for row in data.chunks_mut(n) {
            fft.process(row);
        }
        let mut col = vec![Complex::new(0.0, 0.0); n];
        for x in 0..n {
            for y in 0..n {
                col[y] = data[y * n + x];
            }
            fft.process(&mut col);
            for y in 0..n {
                data[y * n + x] = col[y];
            }
        }
        let signed = |k: usize| if k > n / 2 { k as f64 - n as f64 } else { k as f64 };
        let (mut best, mut radius) = (0.0, 0.0);
        for (i, v) in data.iter().enumerate() {
            let (kx, ky) = (signed(i % n), signed(i / n));
            let r = (kx * kx + ky * ky).sqrt();
            if r >= 1.5 && v.norm() > best {
                best = v.norm();
                radius = r;
            }
        }
        radius
    }

    #[test]
    fn outer_patch_has_higher_peak_frequency_than_center() {
        let img = gen_zone_plate(128, 40.0);
        let center = peak_radius(&img, 48, 48);
        let outer = peak_radius(&img, 96, 48);
        assert!(outer > center, "outer {outer} vs center {center}");
    }
}
