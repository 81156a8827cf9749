use nalgebra::{Vector3, Vector4};

use crate::scene::{GaussianPrimitive, Scene, SgLobe};

/// Differentiable parameters of one primitive.
///
/// Rotation and lobe axes are unnormalized, scale is stored as its logarithm.
/// Opacity and sharpness are kept in activated form: they are the variables
/// constrained by the memory budget, and zero is meaningful for both.
/// The same struct doubles as a gradient record.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelPrimitive {
    pub position: Vector3<f64>,
    /// `(w, x, y, z)`.
    pub rotation: Vector4<f64>,
    pub log_scale: Vector3<f64>,
    pub opacity: f64,
    pub diffuse: Vector3<f64>,
    pub lobes: Vec<ModelLobe>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelLobe {
    pub axis: Vector3<f64>,
    pub sharpness: f64,
    pub amplitude: Vector3<f64>,
}

impl ModelLobe {
    pub fn zeros() -> Self {
        Self {
            axis: Vector3::zeros(),
            sharpness: 0.0,
            amplitude: Vector3::zeros(),
        }
    }
}

impl ModelPrimitive {
    /// An all-zero record with the same lobe layout.
    pub fn zeros_like(&self) -> Self {
        Self {
            position: Vector3::zeros(),
            rotation: Vector4::zeros(),
            log_scale: Vector3::zeros(),
            opacity: 0.0,
            diffuse: Vector3::zeros(),
            lobes: vec![ModelLobe::zeros(); self.lobes.len()],
        }
    }

    /// Number of scalar parameters.
    pub fn param_count(&self) -> usize {
        14 + 7 * self.lobes.len()
    }

    /// Visits every scalar in a fixed order: position, rotation, log-scale,
    /// opacity, diffuse, then per lobe axis, sharpness, amplitude.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(ParamKind, &mut f64)) {
        self.position.iter_mut().for_each(|v| f(ParamKind::Position, v));
        self.rotation.iter_mut().for_each(|v| f(ParamKind::Rotation, v));
        self.log_scale.iter_mut().for_each(|v| f(ParamKind::Scale, v));
        f(ParamKind::Opacity, &mut self.opacity);
        self.diffuse.iter_mut().for_each(|v| f(ParamKind::Diffuse, v));
        for l in &mut self.lobes {
            l.axis.iter_mut().for_each(|v| f(ParamKind::LobeAxis, v));
            f(ParamKind::Sharpness, &mut l.sharpness);
            l.amplitude.iter_mut().for_each(|v| f(ParamKind::Amplitude, v));
        }
    }

    pub fn values(&self) -> Vec<(ParamKind, f64)> {
        let mut out = Vec::with_capacity(self.param_count());
        let mut me = self.clone();
        me.for_each_mut(|k, v| out.push((k, *v)));
        out
    }

    fn is_finite(&self) -> bool {
        self.values().iter().all(|(_, v)| v.is_finite())
    }
}

/// Parameter classes, used for per-group learning rates and reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamKind {
    Position,
    Rotation,
    Scale,
    Opacity,
    Diffuse,
    LobeAxis,
    Sharpness,
    Amplitude,
}

impl ParamKind {
    pub const ALL: [ParamKind; 8] = [
        ParamKind::Position,
        ParamKind::Rotation,
        ParamKind::Scale,
        ParamKind::Opacity,
        ParamKind::Diffuse,
        ParamKind::LobeAxis,
        ParamKind::Sharpness,
        ParamKind::Amplitude,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamKind::Position => "position",
            ParamKind::Rotation => "rotation",
            ParamKind::Scale => "scale",
            ParamKind::Opacity => "opacity",
            ParamKind::Diffuse => "diffuse",
            ParamKind::LobeAxis => "lobe_axis",
            ParamKind::Sharpness => "sharpness",
            ParamKind::Amplitude => "amplitude",
        }
    }
}

/// A scene in optimization form.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub primitives: Vec<ModelPrimitive>,
}

/// Per-primitive partial derivatives, laid out exactly like [`Model`].
pub type GradientSet = Model;

impl Model {
    pub fn from_scene(scene: &Scene) -> Self {
        let primitives = scene
            .primitives
            .iter()
            .map(|p| ModelPrimitive {
                position: Vector3::from(p.position.map(f64::from)),
                rotation: Vector4::from(p.rotation.map(f64::from)),
                log_scale: Vector3::from(p.scale.map(|s| f64::from(s).ln())),
                opacity: f64::from(p.opacity),
                diffuse: Vector3::from(p.diffuse.map(f64::from)),
                lobes: p
                    .lobes
                    .iter()
                    .map(|l| ModelLobe {
                        axis: Vector3::from(l.axis.map(f64::from)),
                        sharpness: f64::from(l.sharpness),
                        amplitude: Vector3::from(l.amplitude.map(f64::from)),
                    })
                    .collect(),
            })
            .collect();
        Self { primitives }
    }

    /// Activated `f32` scene with normalized rotations and axes.
    pub fn to_scene(&self, max_lobes: usize) -> Scene {
        let primitives = self
            .primitives
            .iter()
            .map(|p| {
                let q = normalize4(&p.rotation);
                GaussianPrimitive {
                    position: to_f32(&p.position),
                    rotation: [q[0] as f32, q[1] as f32, q[2] as f32, q[3] as f32],
                    scale: to_f32(&p.log_scale.map(f64::exp)).map(|s| s.max(f32::MIN_POSITIVE)),
                    opacity: p.opacity.clamp(0.0, 1.0) as f32,
                    diffuse: to_f32(&p.diffuse),
                    lobes: p
                        .lobes
                        .iter()
                        .map(|l| {
                            let n = l.axis.norm();
                            let axis = if n > 0.0 { l.axis / n } else { Vector3::z() };
                            SgLobe::new(to_f32(&axis), l.sharpness.max(0.0) as f32, to_f32(&l.amplitude))
                        })
                        .collect(),
                }
            })
            .collect();
        Scene::new_sg(primitives, max_lobes)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            primitives: self.primitives.iter().map(|p| p.zeros_like()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn lobe_slots(&self) -> usize {
        self.primitives.iter().map(|p| p.lobes.len()).sum()
    }

    /// Index of the first primitive holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.primitives.iter().position(|p| !p.is_finite())
    }

    /// Flattened opacities, one per primitive.
    pub fn opacities(&self) -> Vec<f64> {
        self.primitives.iter().map(|p| p.opacity).collect()
    }

    /// Flattened sharpness over every lobe slot in primitive order.
    pub fn sharpnesses(&self) -> Vec<f64> {
        self.primitives
            .iter()
            .flat_map(|p| p.lobes.iter().map(|l| l.sharpness))
            .collect()
    }

    /// Euclidean amplitude norms aligned with [`Model::sharpnesses`].
    pub fn amplitude_norms(&self) -> Vec<f64> {
        self.primitives
            .iter()
            .flat_map(|p| p.lobes.iter().map(|l| l.amplitude.norm()))
            .collect()
    }

    /// `(primitive, lobe)` for each flattened lobe slot.
    pub fn lobe_index(&self) -> Vec<(usize, usize)> {
        self.primitives
            .iter()
            .enumerate()
            .flat_map(|(i, p)| (0..p.lobes.len()).map(move |j| (i, j)))
            .collect()
    }
}

fn to_f32(v: &Vector3<f64>) -> [f32; 3] {
    [v.x as f32, v.y as f32, v.z as f32]
}

pub(crate) fn normalize4(q: &Vector4<f64>) -> Vector4<f64> {
    let n = q.norm();
    if n > 0.0 {
        q / n
    } else {
        Vector4::new(1.0, 0.0, 0.0, 0.0)
    }
}
