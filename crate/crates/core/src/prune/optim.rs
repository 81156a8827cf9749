use serde::{Deserialize, Serialize};

use crate::render::{Model, ParamKind};

/// Step sizes per parameter class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub position: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub diffuse: f64,
    pub lobe_axis: f64,
    pub sharpness: f64,
    pub amplitude: f64,
}

impl LearningRates {
    /// The same step size `eta` for every class.
    pub fn uniform(eta: f64) -> Self {
        Self {
            position: eta,
            rotation: eta,
            scale: eta,
            opacity: eta,
            diffuse: eta,
            lobe_axis: eta,
            sharpness: eta,
            amplitude: eta,
        }
    }

    pub fn get(&self, kind: ParamKind) -> f64 {
        match kind {
            ParamKind::Position => self.position,
            ParamKind::Rotation => self.rotation,
            ParamKind::Scale => self.scale,
            ParamKind::Opacity => self.opacity,
            ParamKind::Diffuse => self.diffuse,
            ParamKind::LobeAxis => self.lobe_axis,
            ParamKind::Sharpness => self.sharpness,
            ParamKind::Amplitude => self.amplitude,
        }
    }
}

impl Default for LearningRates {
    /// Adam step sizes tuned for desk-scale toy scenes of unit extent.
    fn default() -> Self {
        Self {
            position: 2e-3,
            rotation: 5e-3,
            scale: 1e-2,
            opacity: 2e-2,
            diffuse: 1e-2,
            lobe_axis: 2e-2,
            sharpness: 5e-2,
            amplitude: 1e-2,
        }
    }
}

/// Update rule applied to the combined gradient of each variable.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// `x <- x - eta g`, exactly as written in the algorithm.
    Sgd,
    /// Adam with the usual moment decay rates.
    #[default]
    Adam,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-15;

/// Per-parameter optimizer memory over the flattened model.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct StepRule {
    kind: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl StepRule {
    pub fn new(kind: Optimizer, len: usize) -> Self {
        Self {
            kind,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn tick(&mut self) {
        self.t += 1;
    }

    /// Updates `x[i]` for every `i` with `mask[i]`.
    pub fn step(&mut self, x: &mut [f64], g: &[f64], lr: &[f64], mask: &[bool]) {
        match self.kind {
            Optimizer::Sgd => {
                for i in 0..x.len() {
                    if mask[i] {
                        x[i] -= lr[i] * g[i];
                    }
                }
            }
            Optimizer::Adam => {
                let t = self.t.max(1) as i32;
                let c1 = 1.0 - BETA1.powi(t);
                let c2 = 1.0 - BETA2.powi(t);
                for i in 0..x.len() {
                    if mask[i] {
                        self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g[i];
                        self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g[i] * g[i];
                        let mh = self.m[i] / c1;
                        let vh = self.v[i] / c2;
                        x[i] -= lr[i] * mh / (vh.sqrt() + EPS);
                    }
                }
            }
        }
    }
}

/// Flat view of a model in [`crate::render::ModelPrimitive::for_each_mut`] order.
pub(crate) fn flatten(model: &Model) -> (Vec<f64>, Vec<ParamKind>) {
    let mut values = Vec::new();
    let mut kinds = Vec::new();
    for p in &model.primitives {
        for (k, v) in p.values() {
            values.push(v);
            kinds.push(k);
        }
    }
    (values, kinds)
}

pub(crate) fn unflatten(model: &mut Model, flat: &[f64]) {
    let mut i = 0;
    for p in &mut model.primitives {
        p.for_each_mut(|_, v| {
            *v = flat[i];
            i += 1;
        });
    }
}
