//! Desk-scale CPU splatting with an analytic reverse pass.

mod camera;
mod loss;
mod model;
mod project;
mod raster;

pub use camera::Camera;
pub use loss::{gaussian_window, l1, loss, loss_and_grad, ssim, LossConfig};
pub use model::{GradientSet, Model, ModelLobe, ModelPrimitive, ParamKind};
pub use project::{covariance3d, perspective_jacobian, Splat2D, LOW_PASS_VARIANCE};
pub use raster::{
    accumulate_importance, backward_from_image_grad, render_backward, render_model,
    transmittance_map, RenderOptions, MAX_ALPHA, MAX_POWER, MIN_TRANSMITTANCE,
};

use crate::error::Result;
use crate::image::Image;
use crate::scene::Scene;

/// Projects a single primitive; `None` when it lies behind the near plane.
pub fn project(prim: &crate::scene::GaussianPrimitive, cam: &Camera) -> Option<Splat2D> {
    let scene = Scene::new_sg(vec![prim.clone()], prim.lobes.len().max(1));
    let model = Model::from_scene(&scene);
    project::project_model(&model.primitives[0], cam, true).map(|p| p.splat)
}

/// Renders an SG scene.
pub fn render(scene: &Scene, cam: &Camera, opts: &RenderOptions) -> Result<Image> {
    scene.require_sg()?;
    cam.validate()?;
    Ok(render_model(&Model::from_scene(scene), cam, opts))
}
