//! Image quality and inference cost metrics.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::image::RgbImage;
use crate::mlp::MlpArchitecture;
use crate::{Error, Result};

/// Mean squared error over all pixels and channels.
pub fn mse(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    a.same_shape(b)?;
    let n = a.pixels.len() * 3;
    if n == 0 {
        return Err(Error::ShapeMismatch("empty image".into()));
    }
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .flat_map(|(p, q)| (0..3).map(move |k| (p[k] as f64 - q[k] as f64).powi(2)))
        .sum();
    Ok(sum / n as f64)
}

/// `−10 log₁₀ mse`; positive infinity for identical images.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_taps() -> [f64; 2 * SSIM_RADIUS + 1] {
    let mut taps = [0.0; 2 * SSIM_RADIUS + 1];
    for (i, t) in taps.iter_mut().enumerate() {
        let x = i as f64 - SSIM_RADIUS as f64;
        *t = (-0.5 * x * x / (SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.map(|t| t / s)
}

/// Separable 11×11 Gaussian filter over the valid region only.
fn filter_valid(img: &[f64], w: usize, h: usize) -> Vec<f64> {
    let taps = gaussian_taps();
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|t| taps[t] * img[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|t| taps[t] * rows[(y + t) * ow + x]).sum();
        }
    }
    out
}

/// Mean windowed SSIM of two single-channel images with values in `[0, 1]`,
/// Gaussian window (11 taps, σ = 1.5), averaged over window positions that lie
/// fully inside the image.
pub fn ssim_gray(a: &[f64], b: &[f64], width: usize, height: usize) -> Result<f64> {
    let win = 2 * SSIM_RADIUS + 1;
    if a.len() != width * height || b.len() != a.len() {
        return Err(Error::ShapeMismatch("ssim: buffer sizes differ from dimensions".into()));
    }
    if width < win || height < win {
        return Err(Error::ShapeMismatch(alloc::format!("ssim needs at least {win}x{win} pixels")));
    }
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let ux = filter_valid(a, width, height);
    let uy = filter_valid(b, width, height);
    let uxx = filter_valid(&prod(a, a), width, height);
    let uyy = filter_valid(&prod(b, b), width, height);
    let uxy = filter_valid(&prod(a, b), width, height);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for i in 0..ux.len() {
        let (mx, my) = (ux[i], uy[i]);
        let vx = uxx[i] - mx * mx;
        let vy = uyy[i] - my * my;
        let vxy = uxy[i] - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * vxy + c2);
        let den = (mx * mx + my * my + c1) * (vx + vy + c2);
        total += num / den;
    }
    Ok(total / ux.len() as f64)
}

/// SSIM of the Rec. 601 luma of two RGB images.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    a.same_shape(b)?;
    ssim_gray(&a.luma(), &b.luma(), a.width as usize, a.height as usize)
}

/// Network invocations per pixel: coarse pass plus fine pass over the
/// merged samples, `(N_c + (N_c + N_f)) / N_p`.
pub fn count_run(n_coarse: usize, n_fine: usize, group_size: usize) -> usize {
    (n_coarse + n_coarse + n_fine) / group_size
}

/// Multiply-accumulates of one invocation (biases not counted).
pub fn macs_per_run(arch: &MlpArchitecture) -> u64 {
    if arch.depth == 0 {
        return 0;
    }
    arch.layer_dims().iter().map(|(i, o)| (*i * *o) as u64).sum()
}

/// Floating-point operations per pixel: `2 · MACs · #Run`.
pub fn flops_estimate(arch: &MlpArchitecture, n_coarse: usize, n_fine: usize) -> u64 {
    let g = arch.group_size().max(1);
    2 * macs_per_run(arch) * count_run(n_coarse, n_fine, g) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldSpec;

    fn flat(w: u32, h: u32, v: f32) -> RgbImage {
        RgbImage::from_pixels(w, h, vec![[v; 3]; (w * h) as usize]).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = flat(4, 4, 0.3);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
        assert_eq!(psnr(&flat(2, 2, 0.0), &flat(2, 2, 1.0)).unwrap(), 0.0);
        assert!(psnr(&a, &flat(4, 3, 0.3)).is_err());
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let mut a = RgbImage::new(16, 13);
        let mut b = RgbImage::new(16, 13);
        for y in 0..13 {
            for x in 0..16 {
                let v = (x * 7 + y * 3) as f32 / 150.0;
                a.set(x, y, [v, v * 0.5, 1.0 - v]);
                b.set(x, y, [1.0 - v, v, 0.5]);
            }
        }
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let ab = ssim(&a, &b).unwrap();
        assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-15);
        assert!((-1.0..=1.0).contains(&ab));
        assert!(ssim(&flat(8, 8, 0.1), &flat(8, 8, 0.1)).is_err());
    }

    #[test]
    fn run_counts() {
        assert_eq!(count_run(64, 128, 1), 256);
        assert_eq!(count_run(64, 64, 8), 24);
        assert_eq!(count_run(32, 32, 4), 24);
        assert_eq!(count_run(32, 32, 1), 96);
    }

    #[test]
    fn full_scale_flops() {
        let nerf = flops_estimate(&FieldSpec::full_scale(1).architecture(), 64, 128);
        assert_eq!(nerf, 303_824_896);
        let mimo2 = flops_estimate(&FieldSpec::full_scale(2).architecture(), 64, 128);
        assert_eq!(mimo2, 160_333_824);
        let mimo4 = flops_estimate(&FieldSpec::full_scale(4).architecture(), 64, 128);
        assert!(nerf > mimo2 && mimo2 > mimo4);
    }

    #[test]
    fn doubling_group_size_halves_runs_but_not_cost_per_run() {
        let a = FieldSpec::desk(2).architecture();
        let b = FieldSpec::desk(4).architecture();
        let (ma, mb) = (macs_per_run(&a), macs_per_run(&b));
        assert!(mb > ma && mb < 2 * ma);
        assert_eq!(count_run(32, 32, 2), 2 * count_run(32, 32, 4));
        let degenerate = MlpArchitecture {
            input_dim: 3,
            hidden_width: 4,
            depth: 0,
            skip_layers: vec![],
            aux_input_dim: 0,
            output_dim: 4,
        };
        assert_eq!(macs_per_run(&degenerate), 0);
    }
}
