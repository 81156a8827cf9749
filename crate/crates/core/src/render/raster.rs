//! Per-pixel front-to-back alpha blending over globally depth-sorted splats.
//!
//! Blending follows the usual splatting conventions: `alpha = min(0.99, o G)`
//! and a pixel stops accepting splats once its transmittance would fall below
//! `1e-4`. The splat that would cross the threshold is not blended.

use rayon::prelude::*;

use super::camera::Camera;
use super::loss::{loss_and_grad, LossConfig};
use super::model::{GradientSet, Model};
use super::project::{project_backward, project_model, Projected, SplatGrad};
use crate::error::{Error, Result};
use crate::image::Image;

pub const MAX_ALPHA: f64 = 0.99;
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Splats are skipped where their exponent exceeds this (`G < 1e-13`).
pub const MAX_POWER: f64 = 30.0;
/// Rows per work band. Bands are fixed so reductions do not depend on the
/// number of worker threads.
const BAND_ROWS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOptions {
    pub background: [f64; 3],
    pub clamp_color: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            clamp_color: true,
        }
    }
}

struct Prepared {
    /// Projected splats in front-to-back order with their primitive index.
    sorted: Vec<(usize, Projected)>,
    /// Per image row, positions into `sorted` whose support overlaps the row.
    rows: Vec<Vec<usize>>,
    /// Pixel-space x extent of each sorted splat's support.
    x_range: Vec<(f64, f64)>,
}

fn prepare(model: &Model, cam: &Camera, opts: &RenderOptions) -> Prepared {
    let mut sorted: Vec<(usize, Projected)> = model
        .primitives
        .iter()
        .enumerate()
        .filter_map(|(i, p)| project_model(p, cam, opts.clamp_color).map(|pr| (i, pr)))
        .collect();
    // Stable: equal depths keep primitive order.
    sorted.sort_by(|a, b| a.1.splat.depth.total_cmp(&b.1.splat.depth));

    let mut rows = vec![Vec::new(); cam.height];
    let mut x_range = Vec::with_capacity(sorted.len());
    for (k, (_, pr)) in sorted.iter().enumerate() {
        let [a, _, c] = pr.splat.cov2d;
        let rx = (2.0 * MAX_POWER * a).sqrt();
        let ry = (2.0 * MAX_POWER * c).sqrt();
        let m = pr.splat.mean2d;
        x_range.push((m.x - rx, m.x + rx));
        let y0 = ((m.y - ry - 0.5).ceil().max(0.0)) as usize;
        let y1 = (m.y + ry - 0.5).floor();
        if y1 < 0.0 {
            continue;
        }
        let y1 = (y1 as usize).min(cam.height.saturating_sub(1));
        for row in rows.iter_mut().take(y1 + 1).skip(y0) {
            row.push(k);
        }
    }
    Prepared {
        sorted,
        rows,
        x_range,
    }
}

/// One splat's contribution at one pixel.
struct Hit {
    k: usize,
    alpha: f64,
    gauss: f64,
    transmittance: f64,
    clamped: bool,
    dx: f64,
    dy: f64,
}

/// Blends one pixel. Returns the color, the final transmittance and, when
/// `hits` is given, the per-splat record of what was blended.
fn blend_pixel(
    prep: &Prepared,
    px: f64,
    py: f64,
    row: &[usize],
    opts: &RenderOptions,
    mut hits: Option<&mut Vec<Hit>>,
) -> ([f64; 3], f64) {
    let mut t = 1.0;
    let mut c = [0.0; 3];
    for &k in row {
        let (x0, x1) = prep.x_range[k];
        if px < x0 || px > x1 {
            continue;
        }
        let pr = &prep.sorted[k].1;
        let dx = px - pr.splat.mean2d.x;
        let dy = py - pr.splat.mean2d.y;
        let [ca, cb, cc] = pr.conic;
        let power = 0.5 * (ca * dx * dx + cc * dy * dy) + cb * dx * dy;
        if !(power <= MAX_POWER) {
            continue;
        }
        let gauss = (-power).exp();
        let raw = pr.splat.opacity * gauss;
        let (alpha, clamped) = if raw > MAX_ALPHA { (MAX_ALPHA, true) } else { (raw, false) };
        let next_t = t * (1.0 - alpha);
        if next_t < MIN_TRANSMITTANCE {
            break;
        }
        let w = alpha * t;
        for ch in 0..3 {
            c[ch] += pr.splat.color[ch] * w;
        }
        if let Some(h) = hits.as_deref_mut() {
            h.push(Hit {
                k,
                alpha,
                gauss,
                transmittance: t,
                clamped,
                dx,
                dy,
            });
        }
        t = next_t;
    }
    for ch in 0..3 {
        c[ch] += t * opts.background[ch];
    }
    (c, t)
}

fn bands(height: usize) -> Vec<(usize, usize)> {
    (0..height)
        .step_by(BAND_ROWS)
        .map(|y| (y, (y + BAND_ROWS).min(height)))
        .collect()
}

pub fn render_model(model: &Model, cam: &Camera, opts: &RenderOptions) -> Image {
    let prep = prepare(model, cam, opts);
    let width = cam.width;
    let mut img = Image::new(width, cam.height);
    img.data
        .par_chunks_mut(3 * width)
        .enumerate()
        .for_each(|(y, row_px)| {
            let py = y as f64 + 0.5;
            for x in 0..width {
                let (c, _) = blend_pixel(&prep, x as f64 + 0.5, py, &prep.rows[y], opts, None);
                row_px[3 * x..3 * x + 3].copy_from_slice(&c);
            }
        });
    img
}

/// Per-pixel final transmittance, row-major.
pub fn transmittance_map(model: &Model, cam: &Camera, opts: &RenderOptions) -> Vec<f64> {
    let prep = prepare(model, cam, opts);
    let mut out = vec![0.0; cam.width * cam.height];
    for y in 0..cam.height {
        for x in 0..cam.width {
            out[y * cam.width + x] =
                blend_pixel(&prep, x as f64 + 0.5, y as f64 + 0.5, &prep.rows[y], opts, None).1;
        }
    }
    out
}

/// Back-propagates `d_image` (dL/dpixel, interleaved RGB) to the model.
pub fn backward_from_image_grad(
    model: &Model,
    cam: &Camera,
    opts: &RenderOptions,
    d_image: &[f64],
) -> Result<GradientSet> {
    if d_image.len() != cam.width * cam.height * 3 {
        return Err(Error::Shape(format!(
            "image gradient has {} values, camera expects {}",
            d_image.len(),
            cam.width * cam.height * 3
        )));
    }
    let prep = prepare(model, cam, opts);
    let n_sorted = prep.sorted.len();
    let width = cam.width;
    let partials: Vec<Vec<SplatGrad>> = bands(cam.height)
        .into_par_iter()
        .map(|(y0, y1)| {
            let mut acc = vec![SplatGrad::default(); n_sorted];
            let mut hits = Vec::new();
            for y in y0..y1 {
                let py = y as f64 + 0.5;
                for x in 0..width {
                    let i = 3 * (y * width + x);
                    let dc = [d_image[i], d_image[i + 1], d_image[i + 2]];
                    if dc == [0.0; 3] {
                        continue;
                    }
                    hits.clear();
                    let (_, t_final) =
                        blend_pixel(&prep, x as f64 + 0.5, py, &prep.rows[y], opts, Some(&mut hits));
                    // Color accumulated behind the current splat, background included.
                    let mut behind: f64 = (0..3).map(|ch| dc[ch] * t_final * opts.background[ch]).sum();
                    for h in hits.iter().rev() {
                        let pr = &prep.sorted[h.k].1;
                        let g = &mut acc[h.k];
                        let w = h.alpha * h.transmittance;
                        let dc_dot_color: f64 = (0..3).map(|ch| dc[ch] * pr.splat.color[ch]).sum();
                        for ch in 0..3 {
                            g.color[ch] += dc[ch] * w;
                        }
                        let d_alpha = h.transmittance * dc_dot_color - behind / (1.0 - h.alpha);
                        behind += dc_dot_color * w;
                        if h.clamped {
                            continue;
                        }
                        g.opacity += d_alpha * h.gauss;
                        let d_gauss = d_alpha * pr.splat.opacity;
                        let dg = d_gauss * h.gauss;
                        let [ca, cb, cc] = pr.conic;
                        // G = exp(-power); dpower/dmean = -(conic * d).
                        g.mean2d.x += dg * (ca * h.dx + cb * h.dy);
                        g.mean2d.y += dg * (cb * h.dx + cc * h.dy);
                        g.conic[0] += -0.5 * dg * h.dx * h.dx;
                        g.conic[1] += -dg * h.dx * h.dy;
                        g.conic[2] += -0.5 * dg * h.dy * h.dy;
                    }
                }
            }
            acc
        })
        .collect();

    let mut merged = vec![SplatGrad::default(); n_sorted];
    for band in &partials {
        for (m, g) in merged.iter_mut().zip(band) {
            m.add(g);
        }
    }
    let mut grads = model.zeros_like();
    for ((idx, pr), g) in prep.sorted.iter().zip(&merged) {
        project_backward(&model.primitives[*idx], cam, pr, g, &mut grads.primitives[*idx]);
    }
    if let Some(i) = grads.first_non_finite() {
        return Err(Error::NumericalFailure { primitive: i });
    }
    Ok(grads)
}

/// Loss against `target` and its gradient with respect to every parameter.
pub fn render_backward(
    model: &Model,
    cam: &Camera,
    target: &Image,
    loss_cfg: &LossConfig,
    opts: &RenderOptions,
) -> Result<(f64, GradientSet)> {
    if target.width != cam.width || target.height != cam.height {
        return Err(Error::Shape(format!(
            "target is {}x{}, camera renders {}x{}",
            target.width, target.height, cam.width, cam.height
        )));
    }
    let img = render_model(model, cam, opts);
    let (loss, d_image) = loss_and_grad(&img, target, loss_cfg)?;
    let grads = backward_from_image_grad(model, cam, opts, &d_image)?;
    Ok((loss, grads))
}

/// Sum over every camera and covered pixel of each primitive's blend weight
/// `alpha * T`.
pub fn accumulate_importance(model: &Model, cams: &[Camera], opts: &RenderOptions) -> Vec<f64> {
    let mut importance = vec![0.0; model.len()];
    for cam in cams {
        let prep = prepare(model, cam, opts);
        let partials: Vec<Vec<f64>> = bands(cam.height)
            .into_par_iter()
            .map(|(y0, y1)| {
                let mut acc = vec![0.0; prep.sorted.len()];
                let mut hits = Vec::new();
                for y in y0..y1 {
                    for x in 0..cam.width {
                        hits.clear();
                        blend_pixel(&prep, x as f64 + 0.5, y as f64 + 0.5, &prep.rows[y], opts, Some(&mut hits));
                        for h in &hits {
                            acc[h.k] += h.alpha * h.transmittance;
                        }
                    }
                }
                acc
            })
            .collect();
        for band in &partials {
            for ((idx, _), w) in prep.sorted.iter().zip(band) {
                importance[*idx] += w;
            }
        }
    }
    importance
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{GaussianPrimitive, Scene};

    fn cam(w: usize, h: usize) -> Camera {
        Camera {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0, 0.0, 0.0],
            fx: 20.0,
            fy: 20.0,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            width: w,
            height: h,
            near: 0.01,
        }
    }

    fn model(prims: Vec<GaussianPrimitive>) -> Model {
        Model::from_scene(&Scene::new_sg(prims, 3))
    }

    #[test]
    fn empty_scene_renders_background() {
        let opts = RenderOptions {
            background: [0.1, 0.2, 0.3],
            ..Default::default()
        };
        let img = render_model(&model(vec![]), &cam(5, 4), &opts);
        assert_eq!(img, Image::filled(5, 4, [0.1, 0.2, 0.3]));
    }

    #[test]
    fn opaque_gray_center_pixel() {
        let m = model(vec![GaussianPrimitive::isotropic([0.0, 0.0, 2.0], 5.0, 1.0, [0.5; 3])]);
        let img = render_model(&m, &cam(9, 9), &RenderOptions::default());
        let c = img.pixel(4, 4);
        assert!((c[0] - 0.495).abs() < 1e-3, "{c:?}");
    }

    #[test]
    fn two_layer_composition() {
        let front = GaussianPrimitive::isotropic([0.0, 0.0, 2.0], 0.3, 0.6, [1.0, 0.0, 0.0]);
        let back = GaussianPrimitive::isotropic([0.0, 0.0, 4.0], 0.6, 0.7, [0.0, 0.0, 1.0]);
        let c = cam(9, 9);
        let img = render_model(&model(vec![back.clone(), front.clone()]), &c, &RenderOptions::default());
        // Pixel (4, 4) is centered on both projected means, and (5, 4) one pixel off.
        let alpha = |p: &GaussianPrimitive, z: f64, d: f64| {
            let sigma_px2 = (c.fx * f64::from(p.scale[0]) / z).powi(2) + 0.3;
            f64::from(p.opacity) * (-0.5 * d * d / sigma_px2).exp()
        };
        let (a1, a2) = (alpha(&front, 2.0, 0.0), alpha(&back, 4.0, 0.0));
        let px = img.pixel(4, 4);
        assert!((px[0] - a1).abs() < 1e-12);
        assert!((px[2] - a2 * (1.0 - a1)).abs() < 1e-12);
        let (a1, a2) = (alpha(&front, 2.0, 1.0), alpha(&back, 4.0, 1.0));
        let px = img.pixel(5, 4);
        assert!((px[0] - a1).abs() < 1e-12);
        assert!((px[2] - a2 * (1.0 - a1)).abs() < 1e-12);
    }
}
