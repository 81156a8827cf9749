//! Scene and primitive types plus their on-disk representations.
//!
//! Values held in a [`Scene`] are *activated*: opacity in `[0, 1]`, positive
//! per-axis standard deviations, non-negative sharpness. Storage is `f32`,
//! matching the compact file layout bit for bit. Optimization code converts to
//! an `f64` raw parameterization (see [`crate::render::Model`]).

mod budget;
mod compact;
mod ply;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use budget::{
    budget_report, sh_color_floats_per_primitive, BudgetReport, FLOATS_PER_LOBE,
    FLOATS_PER_PRIMITIVE, LOBE_WEIGHT, PRIMITIVE_WEIGHT,
};
pub use compact::{read_compact, write_compact, COMPACT_MAGIC, COMPACT_VERSION};
pub use ply::parse_ply;

use crate::error::{Error, Result};
use crate::sg::ShBlock;

/// Default number of lobe slots per primitive.
pub const DEFAULT_MAX_LOBES: usize = 3;

/// One spherical-Gaussian lobe `a * exp(s * (mu . v - 1))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgLobe {
    /// Lobe axis. May be unnormalized; [`SgLobe::unit_axis`] normalizes on read.
    pub axis: [f32; 3],
    pub sharpness: f32,
    /// RGB amplitude; channels may be negative.
    pub amplitude: [f32; 3],
}

impl SgLobe {
    pub fn new(axis: [f32; 3], sharpness: f32, amplitude: [f32; 3]) -> Self {
        Self {
            axis,
            sharpness,
            amplitude,
        }
    }

    /// The normalized axis in `f64`. A zero axis maps to `+z`.
    pub fn unit_axis(&self) -> [f64; 3] {
        let a = self.axis.map(f64::from);
        let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        if n == 0.0 {
            [0.0, 0.0, 1.0]
        } else {
            [a[0] / n, a[1] / n, a[2] / n]
        }
    }
}

/// A single Gaussian splat with an SG color model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrimitive {
    pub position: [f32; 3],
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f32; 4],
    /// Per-axis standard deviations.
    pub scale: [f32; 3],
    pub opacity: f32,
    /// Direction-independent color `c0`.
    pub diffuse: [f32; 3],
    pub lobes: Vec<SgLobe>,
}

impl GaussianPrimitive {
    /// An isotropic, axis-aligned primitive without lobes.
    pub fn isotropic(position: [f32; 3], sigma: f32, opacity: f32, diffuse: [f32; 3]) -> Self {
        Self {
            position,
            rotation: [1.0, 0.0, 0.0, 0.0],
            scale: [sigma; 3],
            opacity,
            diffuse,
            lobes: Vec::new(),
        }
    }

    pub fn with_lobes(mut self, lobes: Vec<SgLobe>) -> Self {
        self.lobes = lobes;
        self
    }
}

/// Color model shared by every primitive of a scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColorModel {
    Sh { degree: usize },
    Sg { max_lobes: usize },
}

impl ColorModel {
    pub fn describe(&self) -> String {
        match self {
            ColorModel::Sh { degree } => format!("SH(degree {degree})"),
            ColorModel::Sg { max_lobes } => format!("SG(max {max_lobes} lobes)"),
        }
    }
}

/// An ordered collection of primitives sharing one color model.
///
/// SH-tagged scenes carry their coefficients in `sh` (one block per
/// primitive) and keep every lobe list empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub primitives: Vec<GaussianPrimitive>,
    pub color_model: ColorModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sh: Option<Vec<ShBlock>>,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

impl Scene {
    pub fn new_sg(primitives: Vec<GaussianPrimitive>, max_lobes: usize) -> Self {
        Self {
            primitives,
            color_model: ColorModel::Sg { max_lobes },
            sh: None,
            provenance: BTreeMap::new(),
        }
    }

    pub fn empty_sg() -> Self {
        Self::new_sg(Vec::new(), DEFAULT_MAX_LOBES)
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn lobe_count(&self) -> usize {
        self.primitives.iter().map(|p| p.lobes.len()).sum()
    }

    /// Returns the lobe limit, or an error for SH-tagged scenes.
    pub fn require_sg(&self) -> Result<usize> {
        match self.color_model {
            ColorModel::Sg { max_lobes } => Ok(max_lobes),
            other => Err(Error::WrongColorModel {
                expected: "SG",
                found: other.describe(),
            }),
        }
    }

    /// Checks the structural invariants of the scene.
    pub fn validate(&self) -> Result<()> {
        match self.color_model {
            ColorModel::Sg { max_lobes } => {
                if self.sh.is_some() {
                    return Err(Error::Format("SG scene carries an SH block".into()));
                }
                if let Some(i) = self.primitives.iter().position(|p| p.lobes.len() > max_lobes) {
                    return Err(Error::Format(format!(
                        "primitive {i} has {} lobes, limit is {max_lobes}",
                        self.primitives[i].lobes.len()
                    )));
                }
            }
            ColorModel::Sh { degree } => {
                if degree > 3 {
                    return Err(Error::UnsupportedDegree(degree));
                }
                let sh = self
                    .sh
                    .as_ref()
                    .ok_or_else(|| Error::Format("SH scene without coefficients".into()))?;
                if sh.len() != self.primitives.len() {
                    return Err(Error::Format(format!(
                        "{} SH blocks for {} primitives",
                        sh.len(),
                        self.primitives.len()
                    )));
                }
                if self.primitives.iter().any(|p| !p.lobes.is_empty()) {
                    return Err(Error::Format("SH scene with SG lobes".into()));
                }
            }
        }
        if let Some(i) = self.primitives.iter().position(|p| p.scale.iter().any(|&s| !(s > 0.0))) {
            return Err(Error::Format(format!("primitive {i} has a non-positive scale")));
        }
        Ok(())
    }
}
