use std::f64::consts::PI;

use megs2_core::postprocess::{
    estimate_vram, finetune, remove_lobes, remove_primitives, LobeCriterion, SPLAT2D_RECORD_BYTES,
    TILE_ENTRY_BYTES,
};
use megs2_core::prune::PrunerConfig;
use megs2_core::render::{loss, render, Camera, LossConfig, RenderOptions};
use megs2_core::scene::{GaussianPrimitive, Scene, SgLobe};
use megs2_core::sg::{eval_color, ViewDirection};
use megs2_core::sphere::fibonacci_sphere;
use megs2_core::toy::{self, ToyConfig};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_lobe(rng: &mut ChaCha8Rng) -> SgLobe {
    let a = Vector3::new(rng.gen_range(-1.0..1.0f64), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
    SgLobe::new(
        [a.x as f32, a.y as f32, a.z as f32],
        rng.gen_range(0.0..20.0),
        [0, 1, 2].map(|_| rng.gen_range(-1.0..1.0)),
    )
}

#[test]
fn survivor_count_matches_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let prims: Vec<_> = (0..rng.gen_range(0..40))
            .map(|_| GaussianPrimitive::isotropic([0.0; 3], 1.0, rng.gen_range(0.0..0.02), [0.0; 3]))
            .collect();
        let want = prims.iter().filter(|p| f64::from(p.opacity) >= 0.005).count();
        let scene = Scene::new_sg(prims, 3);
        assert_eq!(remove_primitives(&scene, 0.005).unwrap().len(), want);
    }
}

#[test]
fn compensation_beats_plain_removal_on_the_sphere() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dirs = fibonacci_sphere(10_000);
    for _ in 0..100 {
        let lobe = random_lobe(&mut rng);
        if lobe.sharpness == 0.0 {
            continue;
        }
        let base = GaussianPrimitive::isotropic([0.0; 3], 1.0, 1.0, [0.3, 0.2, 0.1]);
        let full = Scene::new_sg(vec![base.clone().with_lobes(vec![lobe])], 3);
        let comp = remove_lobes(&full, f64::INFINITY, LobeCriterion::Sharpness).unwrap();
        let mut avg = (Vector3::zeros(), Vector3::zeros());
        let (mut err_comp, mut err_plain) = (0.0, 0.0);
        for d in &dirs {
            let v = ViewDirection::new(*d).unwrap();
            let truth = eval_color(&v, &full.primitives[0]);
            let c = eval_color(&v, &comp.primitives[0]);
            let p = eval_color(&v, &base);
            avg.0 += truth;
            avg.1 += c;
            err_comp += (truth - c).norm_squared();
            err_plain += (truth - p).norm_squared();
        }
        assert!((avg.0 - avg.1).norm() / dirs.len() as f64 <= 1e-4 * (avg.0.norm() / dirs.len() as f64).max(1e-3));
        assert!(err_comp <= err_plain * (1.0 + 1e-9));
    }
}

#[test]
fn range_criterion_keeps_bright_sharp_lobes() {
    let dim = SgLobe::new([0.0, 0.0, 1.0], 20.0, [0.001, 0.0, 0.0]);
    let bright = SgLobe::new([0.0, 0.0, 1.0], 0.5, [1.0, 1.0, 1.0]);
    let p = GaussianPrimitive::isotropic([0.0; 3], 1.0, 1.0, [0.0; 3]).with_lobes(vec![dim, bright]);
    let out = remove_lobes(&Scene::new_sg(vec![p], 3), 0.01, LobeCriterion::Range).unwrap();
    assert_eq!(out.primitives[0].lobes, vec![bright]);
}

#[test]
fn finetune_recovers_after_aggressive_lobe_removal() {
    let cfg = ToyConfig { gt_primitives: 8, model_primitives: 8, views: 4, width: 32, height: 32, ..Default::default() };
    let t = toy::build(&cfg).unwrap();
    let stripped = remove_lobes(&t.ground_truth, f64::INFINITY, LobeCriterion::Sharpness).unwrap();
    let mean_loss = |s: &Scene| {
        t.views
            .iter()
            .map(|(c, img)| loss(&render(s, c, &RenderOptions::default()).unwrap(), img, &LossConfig::default()).unwrap())
            .sum::<f64>()
    };
    let pcfg = PrunerConfig::default();
    let (tuned, _) = finetune(&stripped, &t.views, 200, &pcfg).unwrap();
    assert!(mean_loss(&tuned) <= mean_loss(&stripped));
    assert_eq!(tuned.len(), stripped.len());
    assert_eq!(tuned.lobe_count(), 0);
    let (same, losses) = finetune(&stripped, &t.views, 0, &pcfg).unwrap();
    assert_eq!(same, stripped);
    assert!(losses.is_empty());
}

/// Independent recount: project by hand and count covered tiles.
fn brute_force_dynamic(scene: &Scene, cam: &Camera, tile: usize) -> u64 {
    let r = cam.rotation_matrix();
    let t = cam.translation_vector();
    let mut bytes = 0;
    for p in &scene.primitives {
        let pw = Vector3::from(p.position.map(f64::from));
        let c = r * pw + t;
        if c.z <= cam.near {
            continue;
        }
        let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            f64::from(p.rotation[0]),
            f64::from(p.rotation[1]),
            f64::from(p.rotation[2]),
            f64::from(p.rotation[3]),
        ));
        let m = q.to_rotation_matrix().into_inner() * Matrix3::from_diagonal(&Vector3::from(p.scale.map(f64::from)));
        let sigma = m * m.transpose();
        let j = nalgebra::Matrix2x3::new(
            cam.fx / c.z, 0.0, -cam.fx * c.x / (c.z * c.z),
            0.0, cam.fy / c.z, -cam.fy * c.y / (c.z * c.z),
        ) * r;
        let cov = j * sigma * j.transpose();
        let (sx, sy) = ((cov[(0, 0)] + 0.3).sqrt() * 3.0, (cov[(1, 1)] + 0.3).sqrt() * 3.0);
        let (mx, my) = (cam.fx * c.x / c.z + cam.cx, cam.fy * c.y / c.z + cam.cy);
        let mut tiles = 0;
        for ty in 0..cam.height.div_ceil(tile) {
            for tx in 0..cam.width.div_ceil(tile) {
                let (x0, y0) = ((tx * tile) as f64, (ty * tile) as f64);
                let (x1, y1) = (x0 + tile as f64, y0 + tile as f64);
                let hit_x = mx + sx >= x0 && mx - sx < x1;
                let hit_y = my + sy >= y0 && my - sy < y1;
                let on_image = mx + sx >= 0.0 && my + sy >= 0.0 && mx - sx < cam.width as f64 && my - sy < cam.height as f64;
                if hit_x && hit_y && on_image {
                    tiles += 1;
                }
            }
        }
        if tiles > 0 {
            bytes += SPLAT2D_RECORD_BYTES + TILE_ENTRY_BYTES * tiles;
        }
    }
    bytes
}

#[test]
fn vram_model_matches_independent_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let prims: Vec<_> = (0..30)
            .map(|_| {
                let mut p = GaussianPrimitive::isotropic(
                    [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-1.0..6.0)],
                    1.0,
                    0.5,
                    [0.5; 3],
                );
                p.scale = [0, 1, 2].map(|_| rng.gen_range(0.01..0.5));
                let q = Vector3::new(rng.gen_range(-1.0..1.0f64), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let w: f64 = rng.gen_range(-1.0..1.0);
                let n = (q.norm_squared() + w * w).sqrt();
                p.rotation = [w / n, q.x / n, q.y / n, q.z / n].map(|v| v as f32);
                p
            })
            .collect();
        let scene = Scene::new_sg(prims, 3);
        let cam = Camera::look_at(Vector3::new(0.0, 0.0, -2.0), Vector3::new(0.0, 0.0, 1.0), -Vector3::y(), 1.2, 80, 60);
        let est = estimate_vram(&scene, &cam, 16).unwrap();
        assert_eq!(est.dynamic_bytes, brute_force_dynamic(&scene, &cam, 16));
        assert_eq!(est.peak_bytes, est.static_bytes + est.dynamic_bytes);
    }
    let _ = PI;
}
