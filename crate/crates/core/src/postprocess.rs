//! Hard removal after sparse training, lobe compensation, short fine-tuning
//! and the memory model.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::prune::{PrunerConfig, PrunerState, View};
use crate::render::{project, Camera, Model};
use crate::scene::{budget_report, BudgetReport, Scene, SgLobe};
use crate::sg::{dynamic_range, lobe_compensation, Lobe};

pub const DEFAULT_OPACITY_THRESHOLD: f64 = 0.005;
pub const DEFAULT_SHARPNESS_THRESHOLD: f64 = 0.01;
/// Bytes per projected splat: mean 2, covariance 3, depth 1, color 3, opacity 1.
pub const SPLAT2D_RECORD_BYTES: u64 = 40;
/// Bytes per splat-tile pair: 8-byte sort key plus 4-byte splat id.
pub const TILE_ENTRY_BYTES: u64 = 12;

/// Which quantity decides that a lobe is negligible.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LobeCriterion {
    #[default]
    Sharpness,
    Range,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    pub opacity_threshold: f64,
    pub lobe_threshold: f64,
    pub lobe_criterion: LobeCriterion,
    pub finetune_steps: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            opacity_threshold: DEFAULT_OPACITY_THRESHOLD,
            lobe_threshold: DEFAULT_SHARPNESS_THRESHOLD,
            lobe_criterion: LobeCriterion::Sharpness,
            finetune_steps: 200,
        }
    }
}

/// Drops primitives whose opacity is below `eps_o`, keeping survivor order.
pub fn remove_primitives(scene: &Scene, eps_o: f64) -> Result<Scene> {
    scene.require_sg()?;
    let keep: Vec<bool> = scene.primitives.iter().map(|p| f64::from(p.opacity) >= eps_o).collect();
    Ok(retain_primitives(scene, &keep))
}

fn retain_primitives(scene: &Scene, keep: &[bool]) -> Scene {
    let mut out = scene.clone();
    out.primitives = scene
        .primitives
        .iter()
        .zip(keep)
        .filter(|(_, k)| **k)
        .map(|(p, _)| p.clone())
        .collect();
    out
}

fn is_negligible(lobe: &SgLobe, eps_s: f64, criterion: LobeCriterion) -> bool {
    match criterion {
        LobeCriterion::Sharpness => f64::from(lobe.sharpness) < eps_s,
        LobeCriterion::Range => dynamic_range(&Lobe::from(lobe)) < eps_s,
    }
}

/// Removes negligible lobes, folding each one's sphere average into the
/// diffuse color.
pub fn remove_lobes(scene: &Scene, eps_s: f64, criterion: LobeCriterion) -> Result<Scene> {
    scene.require_sg()?;
    let masks: Vec<Vec<bool>> = scene
        .primitives
        .iter()
        .map(|p| p.lobes.iter().map(|l| !is_negligible(l, eps_s, criterion)).collect())
        .collect();
    Ok(retain_lobes(scene, &masks))
}

fn retain_lobes(scene: &Scene, keep: &[Vec<bool>]) -> Scene {
    let mut out = scene.clone();
    for (p, mask) in out.primitives.iter_mut().zip(keep) {
        let mut diffuse = Vector3::from(p.diffuse.map(f64::from));
        let mut kept = Vec::with_capacity(p.lobes.len());
        for (l, &k) in p.lobes.iter().zip(mask) {
            if k {
                kept.push(*l);
            } else {
                diffuse += lobe_compensation(&Lobe::from(l));
            }
        }
        p.diffuse = diffuse.map(|v| v as f32).into();
        p.lobes = kept;
    }
    out
}

/// Applies the final proxy support of a pruner run and then the thresholds.
///
/// A primitive survives only with a nonzero proxy opacity and an opacity of
/// at least the threshold; a lobe survives only with a nonzero proxy
/// sharpness and above the lobe threshold. Removed lobes are compensated.
/// The result therefore never exceeds the budget of the run.
pub fn finalize(state: &PrunerState, max_lobes: usize, cfg: &PostprocessConfig) -> Result<Scene> {
    let scene = state.model.to_scene(max_lobes);
    let mut slot = 0;
    let lobe_masks: Vec<Vec<bool>> = scene
        .primitives
        .iter()
        .map(|p| {
            p.lobes
                .iter()
                .map(|_| {
                    let k = state.sharpness_proxy[slot] != 0.0;
                    slot += 1;
                    k
                })
                .collect()
        })
        .collect();
    let scene = retain_lobes(&scene, &lobe_masks);
    let keep: Vec<bool> = state.opacity_proxy.iter().map(|o| *o != 0.0).collect();
    let scene = retain_primitives(&scene, &keep);
    let scene = remove_primitives(&scene, cfg.opacity_threshold)?;
    remove_lobes(&scene, cfg.lobe_threshold, cfg.lobe_criterion)
}

/// Plain gradient descent with structure frozen: the pruner's step with no
/// penalty and no projection. Returns the scene and the per-step losses.
pub fn finetune(scene: &Scene, views: &[View], steps: usize, cfg: &PrunerConfig) -> Result<(Scene, Vec<f64>)> {
    let max_lobes = scene.require_sg()?;
    if steps == 0 {
        return Ok((scene.clone(), Vec::new()));
    }
    let plain = PrunerConfig {
        delta: 0.0,
        iterations: steps,
        prox_every: usize::MAX,
        ..cfg.clone()
    };
    let run = crate::prune::run_unconstrained(Model::from_scene(scene), views, &plain)?;
    let mut out = run.0.model.to_scene(max_lobes);
    out.provenance = scene.provenance.clone();
    Ok((out, run.1))
}

/// Analytic memory model for rendering one view.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VramEstimate {
    pub static_bytes: u64,
    pub dynamic_bytes: u64,
    pub peak_bytes: u64,
    pub visible_splats: u64,
    pub tile_pairs: u64,
}

/// Static bytes from the budget report; dynamic bytes count one projected
/// record per visible splat and one key-value entry per splat-tile pair, where
/// a splat covers the tiles touched by its 3-sigma bounding box.
pub fn estimate_vram(scene: &Scene, cam: &Camera, tile_px: usize) -> Result<VramEstimate> {
    let report = budget_report(scene)?;
    cam.validate()?;
    if tile_px == 0 {
        return Err(crate::Error::Config("tile size must be positive".into()));
    }
    let tiles_x = cam.width.div_ceil(tile_px) as i64;
    let tiles_y = cam.height.div_ceil(tile_px) as i64;
    let t = tile_px as f64;
    let mut visible = 0u64;
    let mut pairs = 0u64;
    for p in &scene.primitives {
        let Some(s) = project(p, cam) else { continue };
        let rx = 3.0 * s.cov2d[0].sqrt();
        let ry = 3.0 * s.cov2d[2].sqrt();
        let (x0, x1) = (s.mean2d.x - rx, s.mean2d.x + rx);
        let (y0, y1) = (s.mean2d.y - ry, s.mean2d.y + ry);
        if x1 < 0.0 || y1 < 0.0 || x0 >= cam.width as f64 || y0 >= cam.height as f64 {
            continue;
        }
        let tx0 = ((x0 / t).floor() as i64).clamp(0, tiles_x - 1);
        let tx1 = ((x1 / t).floor() as i64).clamp(0, tiles_x - 1);
        let ty0 = ((y0 / t).floor() as i64).clamp(0, tiles_y - 1);
        let ty1 = ((y1 / t).floor() as i64).clamp(0, tiles_y - 1);
        visible += 1;
        pairs += ((tx1 - tx0 + 1) * (ty1 - ty0 + 1)) as u64;
    }
    let dynamic = visible * SPLAT2D_RECORD_BYTES + pairs * TILE_ENTRY_BYTES;
    Ok(VramEstimate {
        static_bytes: report.static_bytes,
        dynamic_bytes: dynamic,
        peak_bytes: report.static_bytes + dynamic,
        visible_splats: visible,
        tile_pairs: pairs,
    })
}

/// Everything `stats` reports about a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneStats {
    pub color_model: String,
    #[serde(flatten)]
    pub budget: BudgetReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vram: Option<VramEstimate>,
}

pub fn scene_stats(scene: &Scene, cam: Option<(&Camera, usize)>) -> Result<SceneStats> {
    Ok(SceneStats {
        color_model: scene.color_model.describe(),
        budget: budget_report(scene)?,
        vram: cam.map(|(c, t)| estimate_vram(scene, c, t)).transpose()?,
    })
}
