#![allow(dead_code)]

use megs2_core::image::Image;
use megs2_core::render::{loss, render_model, Camera, LossConfig, Model, ParamKind, RenderOptions};
use megs2_core::scene::{GaussianPrimitive, Scene, SgLobe};
use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn unit(rng: &mut ChaCha8Rng) -> [f32; 3] {
    let v = Vector3::new(
        rng.gen_range(-1.0..1.0f64),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    let v = v.normalize();
    [v.x as f32, v.y as f32, v.z as f32]
}

/// A slightly rotated camera looking down `+z` at the origin region.
pub fn gradcheck_camera(rng: &mut ChaCha8Rng, size: usize) -> Camera {
    let eye = Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), -0.5);
    let target = Vector3::new(0.0, 0.0, 4.0);
    let mut cam = Camera::look_at(eye, target, Vector3::new(0.0, -1.0, 0.0), 0.9, size, size);
    cam.cx += rng.gen_range(-0.5..0.5);
    cam.cy += rng.gen_range(-0.5..0.5);
    cam
}

/// Smooth-regime scene: splats several pixels wide, opacity well below the
/// alpha clamp, transmittance far above the cutoff and colors positive.
pub fn gradcheck_scene(rng: &mut ChaCha8Rng, n: usize) -> Scene {
    let prims = (0..n)
        .map(|_| {
            let q = UnitQuaternion::from_euler_angles(
                rng.gen_range(-3.0..3.0f64),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            );
            let n_lobes = rng.gen_range(0..=3);
            GaussianPrimitive {
                position: [
                    rng.gen_range(-0.6..0.6),
                    rng.gen_range(-0.6..0.6),
                    rng.gen_range(3.0..5.0),
                ],
                rotation: [q.w as f32, q.i as f32, q.j as f32, q.k as f32],
                scale: [0, 1, 2].map(|_| rng.gen_range(0.35..0.8)),
                opacity: rng.gen_range(0.2..0.7),
                diffuse: [0, 1, 2].map(|_| rng.gen_range(0.35..0.8)),
                lobes: (0..n_lobes)
                    .map(|_| {
                        SgLobe::new(
                            unit(rng),
                            rng.gen_range(0.5..6.0),
                            [0, 1, 2].map(|_| rng.gen_range(-0.1..0.3)),
                        )
                    })
                    .collect(),
            }
        })
        .collect();
    Scene::new_sg(prims, 3)
}

pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    let mut img = Image::new(w, h);
    img.data.iter_mut().for_each(|v| *v = rng.gen_range(0.0..1.0));
    img
}

/// Adds `h` to the `j`-th scalar of primitive `i` (in `for_each_mut` order).
pub fn perturbed(model: &Model, i: usize, j: usize, h: f64) -> Model {
    let mut m = model.clone();
    let mut k = 0;
    m.primitives[i].for_each_mut(|_, v| {
        if k == j {
            *v += h;
        }
        k += 1;
    });
    m
}

pub fn scalar_loss(model: &Model, cam: &Camera, target: &Image, cfg: &LossConfig) -> f64 {
    loss(&render_model(model, cam, &RenderOptions::default()), target, cfg).unwrap()
}

/// One mismatch between an analytic and a finite-difference partial.
#[derive(Debug)]
pub struct Mismatch {
    pub primitive: usize,
    pub kind: ParamKind,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn within_tolerance(analytic: f64, numeric: f64) -> bool {
    let err = (analytic - numeric).abs();
    err <= 1e-6 || err <= 1e-3 * numeric.abs()
}

/// Central differences with step `h` for every scalar of every primitive.
/// Returns the classes seen and every mismatch.
pub fn check_gradients(
    model: &Model,
    grads: &Model,
    cam: &Camera,
    target: &Image,
    cfg: &LossConfig,
    h: f64,
) -> (Vec<ParamKind>, Vec<Mismatch>) {
    let mut seen = Vec::new();
    let mut bad = Vec::new();
    for i in 0..model.len() {
        let analytic = grads.primitives[i].values();
        for (j, (kind, a)) in analytic.into_iter().enumerate() {
            let lp = scalar_loss(&perturbed(model, i, j, h), cam, target, cfg);
            let lm = scalar_loss(&perturbed(model, i, j, -h), cam, target, cfg);
            let fd = (lp - lm) / (2.0 * h);
            if !seen.contains(&kind) {
                seen.push(kind);
            }
            if !within_tolerance(a, fd) {
                bad.push(Mismatch {
                    primitive: i,
                    kind,
                    analytic: a,
                    numeric: fd,
                });
            }
        }
    }
    (seen, bad)
}
