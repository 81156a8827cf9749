use serde::{Deserialize, Serialize};

use super::Scene;
use crate::error::Result;

/// Budget weight of one primitive.
pub const PRIMITIVE_WEIGHT: u64 = 11;
/// Budget weight of one SG lobe (axis 3, sharpness 1, amplitude 3).
pub const LOBE_WEIGHT: u64 = 7;
/// Floats stored per primitive: position 3, rotation 4, scale 3, opacity 1, diffuse 3.
pub const FLOATS_PER_PRIMITIVE: u64 = 14;
pub const FLOATS_PER_LOBE: u64 = 7;

/// Parameter and memory accounting for an SG scene.
///
/// `budget_units` follows the constraint weights (11 per primitive, 7 per lobe),
/// which leave out the diffuse color; `static_floats` counts what is actually
/// stored, 14 per primitive plus 7 per lobe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub primitive_count: u64,
    pub lobe_count: u64,
    pub budget_units: u64,
    pub static_floats: u64,
    pub static_bytes: u64,
    /// Numerator of the average color cost: `3 N + 7 L`.
    pub color_floats: u64,
    pub avg_color_floats_per_primitive: f64,
}

impl BudgetReport {
    pub fn from_counts(primitive_count: u64, lobe_count: u64) -> Self {
        let static_floats = primitive_count * FLOATS_PER_PRIMITIVE + lobe_count * FLOATS_PER_LOBE;
        let color_floats = 3 * primitive_count + FLOATS_PER_LOBE * lobe_count;
        let avg = if primitive_count == 0 {
            0.0
        } else {
            color_floats as f64 / primitive_count as f64
        };
        Self {
            primitive_count,
            lobe_count,
            budget_units: PRIMITIVE_WEIGHT * primitive_count + LOBE_WEIGHT * lobe_count,
            static_floats,
            static_bytes: 4 * static_floats,
            color_floats,
            avg_color_floats_per_primitive: avg,
        }
    }
}

pub fn budget_report(scene: &Scene) -> Result<BudgetReport> {
    scene.require_sg()?;
    Ok(BudgetReport::from_counts(
        scene.len() as u64,
        scene.lobe_count() as u64,
    ))
}

/// Color floats per primitive for a real SH expansion of the given degree.
pub fn sh_color_floats_per_primitive(degree: usize) -> u64 {
    3 * ((degree as u64 + 1) * (degree as u64 + 1))
}
