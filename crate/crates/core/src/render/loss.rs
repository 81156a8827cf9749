//! Training loss `(1 - lambda) L1 + lambda (1 - SSIM)` and its image gradient.
//!
//! SSIM uses an 11x11 Gaussian window (sigma 1.5), zero padding, the standard
//! constants `C1 = 0.01^2`, `C2 = 0.03^2`, and is averaged over pixels and
//! channels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the SSIM term.
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 0.2 }
    }
}

pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable zero-padded Gaussian blur of a single-channel plane. The kernel is
/// symmetric, so the operator is its own adjoint.
fn blur(plane: &[f64], width: usize, height: usize, w: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut s = 0.0;
            for (k, wk) in w.iter().enumerate() {
                let xx = x as isize + k as isize - r;
                if xx >= 0 && (xx as usize) < width {
                    s += wk * plane[y * width + xx as usize];
                }
            }
            tmp[y * width + x] = s;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut s = 0.0;
            for (k, wk) in w.iter().enumerate() {
                let yy = y as isize + k as isize - r;
                if yy >= 0 && (yy as usize) < height {
                    s += wk * tmp[yy as usize * width + x];
                }
            }
            out[y * width + x] = s;
        }
    }
    out
}

fn channel(img: &Image, ch: usize) -> Vec<f64> {
    img.data.iter().skip(ch).step_by(3).copied().collect()
}

fn check_shapes(img: &Image, target: &Image) -> Result<()> {
    if img.same_shape(target) {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "image {}x{} vs target {}x{}",
            img.width, img.height, target.width, target.height
        )))
    }
}

/// Mean SSIM and, optionally, its gradient with respect to `img`.
fn ssim_impl(img: &Image, target: &Image, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let (w, h) = (img.width, img.height);
    let win = gaussian_window();
    let count = (w * h * 3) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; img.data.len()]);
    for ch in 0..3 {
        let x = channel(img, ch);
        let y = channel(target, ch);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let mu_x = blur(&x, w, h, &win);
        let mu_y = blur(&y, w, h, &win);
        let e_xx = blur(&xx, w, h, &win);
        let e_yy = blur(&yy, w, h, &win);
        let e_xy = blur(&xy, w, h, &win);
        let n = w * h;
        let mut d_mu = vec![0.0; n];
        let mut d_exx = vec![0.0; n];
        let mut d_exy = vec![0.0; n];
        for i in 0..n {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let sxx = e_xx[i] - mx * mx;
            let syy = e_yy[i] - my * my;
            let sxy = e_xy[i] - mx * my;
            let a1 = 2.0 * mx * my + C1;
            let a2 = 2.0 * sxy + C2;
            let b1 = mx * mx + my * my + C1;
            let b2 = sxx + syy + C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let g = 1.0 / count;
                let ds_dmx = 2.0 * my * a2 / (b1 * b2) - s * 2.0 * mx / b1;
                let ds_dsxy = 2.0 * a1 / (b1 * b2);
                let ds_dsxx = -s / b2;
                d_mu[i] = g * (ds_dmx + ds_dsxx * (-2.0 * mx) + ds_dsxy * (-my));
                d_exx[i] = g * ds_dsxx;
                d_exy[i] = g * ds_dsxy;
            }
        }
        if let Some(grad) = grad.as_mut() {
            let b_mu = blur(&d_mu, w, h, &win);
            let b_xx = blur(&d_exx, w, h, &win);
            let b_xy = blur(&d_exy, w, h, &win);
            for i in 0..n {
                grad[3 * i + ch] = b_mu[i] + 2.0 * x[i] * b_xx[i] + y[i] * b_xy[i];
            }
        }
    }
    (total / count, grad)
}

pub fn ssim(img: &Image, target: &Image) -> Result<f64> {
    check_shapes(img, target)?;
    Ok(ssim_impl(img, target, false).0)
}

pub fn l1(img: &Image, target: &Image) -> Result<f64> {
    check_shapes(img, target)?;
    let n = img.data.len().max(1) as f64;
    Ok(img.data.iter().zip(&target.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

pub fn loss(img: &Image, target: &Image, cfg: &LossConfig) -> Result<f64> {
    Ok(loss_and_grad_impl(img, target, cfg, false)?.0)
}

/// Loss and `dL/dimg` (interleaved RGB, same layout as `img.data`).
pub fn loss_and_grad(img: &Image, target: &Image, cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    let (l, g) = loss_and_grad_impl(img, target, cfg, true)?;
    Ok((l, g.expect("gradient requested")))
}

fn loss_and_grad_impl(
    img: &Image,
    target: &Image,
    cfg: &LossConfig,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    check_shapes(img, target)?;
    let n = img.data.len().max(1) as f64;
    let l1v = img.data.iter().zip(&target.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let mut grad = want_grad.then(|| {
        img.data
            .iter()
            .zip(&target.data)
            .map(|(a, b)| {
                let d = a - b;
                let sign = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                (1.0 - cfg.lambda) * sign / n
            })
            .collect::<Vec<f64>>()
    });
    let mut total = (1.0 - cfg.lambda) * l1v;
    if cfg.lambda != 0.0 {
        let (s, sg) = ssim_impl(img, target, want_grad);
        total += cfg.lambda * (1.0 - s);
        if let (Some(g), Some(sg)) = (grad.as_mut(), sg) {
            for (gi, si) in g.iter_mut().zip(sg) {
                *gi -= cfg.lambda * si;
            }
        }
    }
    Ok((total, grad))
}
