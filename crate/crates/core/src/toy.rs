//! Procedural scenes for desk-scale end-to-end runs.
//!
//! A seeded ground-truth scene is rendered from a ring of cameras; the model
//! to be trained starts overparameterized, with several jittered copies of
//! every ground-truth center (a stand-in for a structure-from-motion point
//! cloud) and a full set of lobes on every primitive.

use std::f64::consts::PI;

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prune::View;
use crate::render::{render, Camera, RenderOptions};
use crate::scene::{GaussianPrimitive, Scene, SgLobe};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub gt_primitives: usize,
    pub model_primitives: usize,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub max_lobes: usize,
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
    pub camera_distance: f64,
    /// Standard deviation of the jitter applied to model centers.
    pub init_jitter: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            gt_primitives: 30,
            model_primitives: 120,
            views: 8,
            width: 64,
            height: 64,
            max_lobes: 3,
            fov_deg: 50.0,
            camera_distance: 4.0,
            init_jitter: 0.08,
            seed: 7,
        }
    }
}

pub struct ToyScene {
    pub ground_truth: Scene,
    pub views: Vec<View>,
    pub init: Scene,
}

fn unit_vector(rng: &mut ChaCha8Rng) -> [f32; 3] {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).sqrt();
    [(r * phi.cos()) as f32, (r * phi.sin()) as f32, z as f32]
}

fn random_rotation(rng: &mut ChaCha8Rng) -> [f32; 4] {
    let q = UnitQuaternion::from_euler_angles(
        rng.gen_range(-PI..PI),
        rng.gen_range(-PI..PI),
        rng.gen_range(-PI..PI),
    );
    [q.w as f32, q.i as f32, q.j as f32, q.k as f32]
}

/// Cameras on a ring around the origin with alternating elevation.
pub fn ring_cameras(cfg: &ToyConfig) -> Vec<Camera> {
    (0..cfg.views)
        .map(|i| {
            let theta = 2.0 * PI * i as f64 / cfg.views as f64;
            let elev: f64 = if i % 2 == 0 { 0.35 } else { -0.2 };
            let d = cfg.camera_distance;
            let eye = Vector3::new(d * elev.cos() * theta.cos(), d * elev.cos() * theta.sin(), d * elev.sin());
            Camera::look_at(
                eye,
                Vector3::zeros(),
                Vector3::z(),
                cfg.fov_deg.to_radians(),
                cfg.width,
                cfg.height,
            )
        })
        .collect()
}

pub fn ground_truth(cfg: &ToyConfig, rng: &mut ChaCha8Rng) -> Scene {
    let prims = (0..cfg.gt_primitives)
        .map(|_| {
            let position = [0, 1, 2].map(|_| rng.gen_range(-0.9f32..0.9));
            let scale = [0, 1, 2].map(|_| rng.gen_range(0.08f32..0.22));
            let n_lobes = rng.gen_range(0..=cfg.max_lobes.min(2));
            let lobes = (0..n_lobes)
                .map(|_| {
                    SgLobe::new(
                        unit_vector(rng),
                        rng.gen_range(2.0f32..10.0),
                        [0, 1, 2].map(|_| rng.gen_range(0.05f32..0.35)),
                    )
                })
                .collect();
            GaussianPrimitive {
                position,
                rotation: random_rotation(rng),
                scale,
                opacity: rng.gen_range(0.6f32..0.95),
                diffuse: [0, 1, 2].map(|_| rng.gen_range(0.1f32..0.8)),
                lobes,
            }
        })
        .collect();
    Scene::new_sg(prims, cfg.max_lobes)
}

/// Overparameterized starting point: jittered copies of the ground-truth
/// centers, gray, half-transparent, isotropic, with weak random lobes.
pub fn initial_model(cfg: &ToyConfig, gt: &Scene, rng: &mut ChaCha8Rng) -> Scene {
    let prims = (0..cfg.model_primitives)
        .map(|i| {
            let anchor = gt.primitives[i % gt.len()].position;
            let position = anchor.map(|c| c + (rng.gen_range(-1.0f32..1.0) * cfg.init_jitter as f32));
            let lobes = (0..cfg.max_lobes)
                .map(|_| SgLobe::new(unit_vector(rng), 1.0, [0.02; 3]))
                .collect();
            GaussianPrimitive {
                position,
                rotation: [1.0, 0.0, 0.0, 0.0],
                scale: [0.1; 3],
                opacity: 0.5,
                diffuse: [0.4; 3],
                lobes,
            }
        })
        .collect();
    Scene::new_sg(prims, cfg.max_lobes)
}

pub fn build(cfg: &ToyConfig) -> Result<ToyScene> {
    if cfg.gt_primitives == 0 || cfg.views == 0 {
        return Err(Error::Config("toy scene needs primitives and views".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gt = ground_truth(cfg, &mut rng);
    let opts = RenderOptions::default();
    let views = ring_cameras(cfg)
        .into_iter()
        .map(|cam| render(&gt, &cam, &opts).map(|img| (cam, img)))
        .collect::<Result<Vec<_>>>()?;
    let init = initial_model(cfg, &gt, &mut rng);
    Ok(ToyScene {
        ground_truth: gt,
        views,
        init,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_shaped() {
        let cfg = ToyConfig::default();
        let a = build(&cfg).unwrap();
        let b = build(&cfg).unwrap();
        assert_eq!(a.ground_truth, b.ground_truth);
        assert_eq!(a.init, b.init);
        assert_eq!(a.views.len(), 8);
        assert_eq!(a.init.len(), 120);
        assert_eq!(a.init.lobe_count(), 360);
        for (_, img) in &a.views {
            let mean = img.data.iter().sum::<f64>() / img.data.len() as f64;
            assert!(mean > 0.02, "view nearly empty: {mean}");
        }
    }
}
