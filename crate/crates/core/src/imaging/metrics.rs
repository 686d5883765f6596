use super::{ImageBuffer, ImagingError};

/// PSNR reported for (near-)identical images.
pub const PSNR_CAP_DB: f64 = 99.0;
const MSE_FLOOR: f64 = 1e-10;

pub const SSIM_MIN_SIDE: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, ImagingError> {
    a.same_dims(b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data.len() as f64)
}

/// `10·log10(1/MSE)` for unit peak signal, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, ImagingError> {
    let m = mse(a, b)?;
    if m < MSE_FLOOR {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}

fn window() -> [f64; SSIM_MIN_SIDE] {
    let mut w = [0.0; SSIM_MIN_SIDE];
    let r = (SSIM_MIN_SIDE / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let t = i as f64 - r;
        *v = (-0.5 * t * t / (SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable "valid" correlation of an `h × w` plane with the window.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_MIN_SIDE]) -> Vec<f64> {
    let n = SSIM_MIN_SIDE;
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&src[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc += kj * rows[(y + j) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters an `(h−10) × (w−10)` map back to `h × w`.
fn filter_valid_adjoint(map: &[f64], w: usize, h: usize, k: &[f64; SSIM_MIN_SIDE]) -> Vec<f64> {
    let n = SSIM_MIN_SIDE;
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = map[y * ow + x];
            for (j, kj) in k.iter().enumerate() {
                rows[(y + j) * ow + x] += kj * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = rows[y * ow + x];
            for (i, ki) in k.iter().enumerate() {
                out[y * w + x + i] += ki * v;
            }
        }
    }
    out
}

fn channel(img: &ImageBuffer, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(3).copied().collect()
}

fn check_ssim_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<(), ImagingError> {
    a.same_dims(b)?;
    if a.width < SSIM_MIN_SIDE || a.height < SSIM_MIN_SIDE {
        return Err(ImagingError::TooSmall(a.width, a.height, SSIM_MIN_SIDE));
    }
    Ok(())
}

/// Single-scale SSIM with an 11×11 Gaussian window (σ = 1.5), K1 = 0.01,
/// K2 = 0.03 and unit dynamic range, averaged over valid window positions
/// and the three channels.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, ImagingError> {
    Ok(ssim_impl(a, b, false)?.0)
}

/// SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &ImageBuffer, b: &ImageBuffer) -> Result<(f64, ImageBuffer), ImagingError> {
    let (v, g) = ssim_impl(a, b, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn ssim_impl(a: &ImageBuffer, b: &ImageBuffer, want_grad: bool) -> Result<(f64, Option<ImageBuffer>), ImagingError> {
    check_ssim_dims(a, b)?;
    let (w, h) = (a.width, a.height);
    let k = window();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let positions = ((w - SSIM_MIN_SIDE + 1) * (h - SSIM_MIN_SIDE + 1)) as f64;
    let norm = 1.0 / (positions * 3.0);

    let mut total = 0.0;
    let mut grad = want_grad.then(|| ImageBuffer::new(w, h));
    for c in 0..3 {
        let x = channel(a, c);
        let y = channel(b, c);
        let sq = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
        let mu_x = filter_valid(&x, w, h, &k);
        let mu_y = filter_valid(&y, w, h, &k);
        let s_xx = filter_valid(&sq(&x, &x), w, h, &k);
        let s_yy = filter_valid(&sq(&y, &y), w, h, &k);
        let s_xy = filter_valid(&sq(&x, &y), w, h, &k);

        let m = mu_x.len();
        let (mut d_mu, mut d_var, mut d_var_mu, mut d_cov, mut d_cov_mu) =
            (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        for p in 0..m {
            let (mx, my) = (mu_x[p], mu_y[p]);
            let var_x = s_xx[p] - mx * mx;
            let var_y = s_yy[p] - my * my;
            let cov = s_xy[p] - mx * my;
            let a1 = 2.0 * mx * my + c1;
            let a2 = 2.0 * cov + c2;
            let b1 = mx * mx + my * my + c1;
            let b2 = var_x + var_y + c2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                // Partials of S in terms of (μx, σx², σxy), each scaled by the mean.
                let ds_dmu = 2.0 * my * a2 / (b1 * b2) - 2.0 * mx * s / b1;
                let ds_dvar = -s / b2;
                let ds_dcov = 2.0 * a1 / (b1 * b2);
                d_mu[p] = norm * ds_dmu;
                d_var[p] = norm * ds_dvar;
                d_var_mu[p] = norm * ds_dvar * mx;
                d_cov[p] = norm * ds_dcov;
                d_cov_mu[p] = norm * ds_dcov * my;
            }
        }
        if let Some(g) = grad.as_mut() {
            let t_mu = filter_valid_adjoint(&d_mu, w, h, &k);
            let t_var = filter_valid_adjoint(&d_var, w, h, &k);
            let t_var_mu = filter_valid_adjoint(&d_var_mu, w, h, &k);
            let t_cov = filter_valid_adjoint(&d_cov, w, h, &k);
            let t_cov_mu = filter_valid_adjoint(&d_cov_mu, w, h, &k);
            for q in 0..w * h {
                g.data[q * 3 + c] =
                    t_mu[q] + 2.0 * x[q] * t_var[q] - 2.0 * t_var_mu[q] + y[q] * t_cov[q] - t_cov_mu[q];
            }
        }
    }
    Ok((total / (positions * 3.0), grad))
}
