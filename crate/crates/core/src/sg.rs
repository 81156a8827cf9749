//! Spherical-Gaussian and spherical-harmonics color functions.
//!
//! A lobe is `G(v) = a * exp(s * (mu . v - 1))` and a primitive's color is
//! `c(v) = c0 + sum_i G_i(v)`. The lobe integrates to
//! `2 pi a (1 - exp(-2 s)) / s` over the sphere, so replacing it by its
//! sphere average `a (1 - exp(-2 s)) / (2 s)` keeps the mean color unchanged.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{GaussianPrimitive, SgLobe};

pub type Rgb = Vector3<f64>;

/// Below this sharpness the integral formulas use their series expansion.
pub const SHARPNESS_SERIES_THRESHOLD: f64 = 1e-8;

/// A unit viewing direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewDirection(Vector3<f64>);

impl ViewDirection {
    /// Normalizes `v`; returns `None` for the zero vector or non-finite input.
    pub fn new(v: Vector3<f64>) -> Option<Self> {
        let n = v.norm();
        (n > 0.0 && n.is_finite()).then(|| Self(v / n))
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }
}

/// `f64` view of a lobe with a unit axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lobe {
    pub axis: Vector3<f64>,
    pub sharpness: f64,
    pub amplitude: Rgb,
}

impl From<&SgLobe> for Lobe {
    fn from(l: &SgLobe) -> Self {
        Self {
            axis: Vector3::from(l.unit_axis()),
            sharpness: f64::from(l.sharpness),
            amplitude: Vector3::from(l.amplitude.map(f64::from)),
        }
    }
}

/// Value of a single lobe seen from direction `v`.
pub fn eval_sg_lobe(v: &ViewDirection, lobe: &Lobe) -> Rgb {
    lobe.amplitude * (lobe.sharpness * (lobe.axis.dot(&v.0) - 1.0)).exp()
}

/// Unclamped color `c0 + sum of lobes`.
pub fn eval_color(v: &ViewDirection, prim: &GaussianPrimitive) -> Rgb {
    let c0 = Vector3::from(prim.diffuse.map(f64::from));
    prim.lobes
        .iter()
        .fold(c0, |acc, l| acc + eval_sg_lobe(v, &Lobe::from(l)))
}

/// Color as used for display: negative channels clamped to zero.
pub fn eval_color_clamped(v: &ViewDirection, prim: &GaussianPrimitive) -> Rgb {
    eval_color(v, prim).map(|c| c.max(0.0))
}

/// `(1 - exp(-2 s)) / (2 s)`, the sphere average of `exp(s (mu . v - 1))`.
pub fn lobe_mean_factor(sharpness: f64) -> f64 {
    if sharpness < SHARPNESS_SERIES_THRESHOLD {
        1.0 - sharpness
    } else {
        -(-2.0 * sharpness).exp_m1() / (2.0 * sharpness)
    }
}

/// Integral of the lobe over the unit sphere.
pub fn sphere_integral_sg(lobe: &Lobe) -> Rgb {
    lobe.amplitude * (4.0 * PI * lobe_mean_factor(lobe.sharpness))
}

/// Diffuse offset that replaces a removed lobe with its sphere average.
pub fn lobe_compensation(lobe: &Lobe) -> Rgb {
    lobe.amplitude * lobe_mean_factor(lobe.sharpness)
}

/// Peak-to-trough swing of a lobe, `|a| (1 - exp(-2 s))`, with the Euclidean
/// norm of the RGB amplitude.
pub fn dynamic_range(lobe: &Lobe) -> f64 {
    dynamic_range_of(lobe.amplitude.norm(), lobe.sharpness)
}

pub fn dynamic_range_of(amplitude_norm: f64, sharpness: f64) -> f64 {
    amplitude_norm * -(-2.0 * sharpness.max(0.0)).exp_m1()
}

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Real SH coefficients of one primitive, one RGB triple per basis function.
///
/// Basis order follows the usual splatting convention: index 0 is the DC term,
/// 1..4 degree one, 4..9 degree two, 9..16 degree three. PLY files store the
/// non-DC coefficients channel-major; the parser transposes them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShBlock {
    pub degree: usize,
    pub coefficients: Vec<[f32; 3]>,
}

impl ShBlock {
    pub fn new(degree: usize, coefficients: Vec<[f32; 3]>) -> Result<Self> {
        if degree > 3 {
            return Err(Error::UnsupportedDegree(degree));
        }
        let want = (degree + 1) * (degree + 1);
        if coefficients.len() != want {
            return Err(Error::Shape(format!(
                "degree {degree} needs {want} coefficients, got {}",
                coefficients.len()
            )));
        }
        Ok(Self {
            degree,
            coefficients,
        })
    }

    /// A degree-0 block whose color (after the `+0.5` offset) is `color`.
    pub fn constant(color: [f64; 3]) -> Self {
        Self {
            degree: 0,
            coefficients: vec![color.map(|c| ((c - 0.5) / SH_C0) as f32)],
        }
    }

    pub fn dc(&self) -> Rgb {
        Vector3::from(self.coefficients[0].map(f64::from))
    }
}

/// Sum of the SH basis weighted by the block's coefficients. Callers add the
/// conventional `+0.5` offset to obtain a color.
pub fn eval_sh(v: &ViewDirection, sh: &ShBlock) -> Result<Rgb> {
    if sh.degree > 3 {
        return Err(Error::UnsupportedDegree(sh.degree));
    }
    let basis = sh_basis(v.as_vector(), sh.degree);
    if sh.coefficients.len() < basis.len() {
        return Err(Error::Shape(format!(
            "degree {} needs {} coefficients, got {}",
            sh.degree,
            basis.len(),
            sh.coefficients.len()
        )));
    }
    Ok(basis
        .iter()
        .zip(&sh.coefficients)
        .fold(Vector3::zeros(), |acc, (b, c)| {
            acc + Vector3::from(c.map(f64::from)) * *b
        }))
}

/// Color seen from `v`: `0.5 + eval_sh`.
pub fn sh_color(v: &ViewDirection, sh: &ShBlock) -> Result<Rgb> {
    Ok(eval_sh(v, sh)?.add_scalar(0.5))
}

/// Basis values up to `degree`, `(degree + 1)^2` entries.
pub fn sh_basis(d: &Vector3<f64>, degree: usize) -> Vec<f64> {
    let (x, y, z) = (d.x, d.y, d.z);
    let mut out = Vec::with_capacity(16);
    out.push(SH_C0);
    if degree >= 1 {
        out.extend([-SH_C1 * y, SH_C1 * z, -SH_C1 * x]);
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out.extend([
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2.0 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
        ]);
        if degree >= 3 {
            out.extend([
                SH_C3[0] * y * (3.0 * xx - yy),
                SH_C3[1] * x * y * z,
                SH_C3[2] * y * (4.0 * zz - xx - yy),
                SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
                SH_C3[4] * x * (4.0 * zz - xx - yy),
                SH_C3[5] * z * (xx - yy),
                SH_C3[6] * x * (xx - 3.0 * yy),
            ]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::{fibonacci_sphere, integrate};
    use nalgebra::{Rotation3, Unit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dir(x: f64, y: f64, z: f64) -> ViewDirection {
        ViewDirection::new(Vector3::new(x, y, z)).unwrap()
    }

    fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 0.1 && n <= 1.0 {
                return v / n;
            }
        }
    }

    fn lobe(axis: Vector3<f64>, s: f64, a: [f64; 3]) -> Lobe {
        Lobe {
            axis: axis.normalize(),
            sharpness: s,
            amplitude: Vector3::from(a),
        }
    }

    #[test]
    fn lobe_peak_and_flat_cases() {
        let l = lobe(Vector3::new(0.3, -0.2, 0.9), 7.0, [0.4, -0.1, 2.0]);
        let at_axis = eval_sg_lobe(&ViewDirection::new(l.axis).unwrap(), &l);
        assert!((at_axis - l.amplitude).norm() < 1e-15);
        let flat = Lobe { sharpness: 0.0, ..l };
        assert_eq!(eval_sg_lobe(&dir(1.0, 0.0, 0.0), &flat), flat.amplitude);
    }

    #[test]
    fn antipodal_value() {
        let l = lobe(Vector3::z(), 1.0, [1.0; 3]);
        let v = eval_sg_lobe(&dir(0.0, 0.0, -1.0), &l);
        // e^-2 to 17 digits.
        let e2 = 0.135_335_283_236_612_7;
        for c in v.iter() {
            assert!((c - e2).abs() < 1e-15);
        }
    }

    #[test]
    fn color_sums_lobes() {
        let p = GaussianPrimitive::isotropic([0.0; 3], 1.0, 1.0, [0.2; 3]);
        assert_eq!(eval_color(&dir(0.0, 1.0, 0.0), &p), Vector3::new(0.2, 0.2, 0.2).map(|c: f64| c as f32 as f64));
        let p = p.with_lobes(vec![SgLobe::new([0.0, 0.0, 1.0], 4.0, [0.5, 0.0, 0.0])]);
        let c = eval_color(&dir(0.0, 0.0, 1.0), &p);
        assert!((c - Vector3::new(0.7, 0.2, 0.2)).norm() < 1e-7);
    }

    #[test]
    fn color_matches_straight_line_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let lobes: Vec<SgLobe> = (0..3)
                .map(|_| {
                    let a = random_unit(&mut rng);
                    SgLobe::new(
                        [a.x as f32, a.y as f32, a.z as f32],
                        rng.gen_range(0.0..20.0),
                        [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                    )
                })
                .collect();
            let p = GaussianPrimitive::isotropic([0.0; 3], 1.0, 1.0, [0.3, 0.1, 0.6]).with_lobes(lobes);
            let v = random_unit(&mut rng);
            let got = eval_color(&ViewDirection::new(v).unwrap(), &p);
            for ch in 0..3 {
                let mut want = p.diffuse[ch] as f64;
                for l in &p.lobes {
                    let ax = l.axis.map(|c| c as f64);
                    let n = (ax[0] * ax[0] + ax[1] * ax[1] + ax[2] * ax[2]).sqrt();
                    let dot = (ax[0] * v.x + ax[1] * v.y + ax[2] * v.z) / n;
                    want += l.amplitude[ch] as f64 * (l.sharpness as f64 * (dot - 1.0)).exp();
                }
                assert!((got[ch] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clamping_only_removes_negatives() {
        let p = GaussianPrimitive::isotropic([0.0; 3], 1.0, 1.0, [-0.5, 0.25, 0.0]);
        let c = eval_color_clamped(&dir(0.0, 0.0, 1.0), &p);
        assert_eq!(c, Vector3::new(0.0, 0.25, 0.0));
    }

    #[test]
    fn rotation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let l = lobe(random_unit(&mut rng), rng.gen_range(0.0..40.0), [0.7, -0.3, 1.2]);
            let v = random_unit(&mut rng);
            let rot = Rotation3::from_axis_angle(&Unit::new_normalize(random_unit(&mut rng)), rng.gen_range(0.0..6.28));
            let rl = Lobe { axis: rot * l.axis, ..l };
            let a = eval_sg_lobe(&ViewDirection::new(v).unwrap(), &l);
            let b = eval_sg_lobe(&ViewDirection::new(rot * v).unwrap(), &rl);
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn integral_limits_and_values() {
        let flat = lobe(Vector3::z(), 0.0, [1.0; 3]);
        assert!((sphere_integral_sg(&flat) - Vector3::repeat(4.0 * PI)).norm() < 1e-12);
        let tiny = lobe(Vector3::z(), 1e-12, [1.0; 3]);
        assert!((sphere_integral_sg(&tiny) - Vector3::repeat(4.0 * PI)).norm() < 1e-10);
        let one = lobe(Vector3::z(), 1.0, [1.0, 0.0, 0.0]);
        let got = sphere_integral_sg(&one);
        assert!((got.x - 5.432_848_644_004_314).abs() < 1e-12);
        assert_eq!(got.y, 0.0);
    }

    #[test]
    fn integral_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let s = 10f64.powf(rng.gen_range(-3.0..1.5));
            let l = lobe(random_unit(&mut rng), s, [1.0, -0.5, 0.25]);
            let q: Rgb = integrate(10_000, |v| eval_sg_lobe(&ViewDirection::new(*v).unwrap(), &l));
            let exact = sphere_integral_sg(&l);
            assert!((q - exact).norm() <= 1e-4 * exact.norm(), "s = {s}");
        }
    }

    #[test]
    fn compensation_is_sphere_average() {
        let l = lobe(Vector3::x(), 1.0, [1.0; 3]);
        let c = lobe_compensation(&l);
        let want = (1.0 - (-2.0f64).exp()) / 2.0;
        assert!((c.x - want).abs() < 1e-15);
        assert!((c.x - 0.432_332_358_381_693_6).abs() < 1e-12);
        let flat = lobe(Vector3::x(), 0.0, [0.3, 0.0, 0.0]);
        assert_eq!(lobe_compensation(&flat), flat.amplitude);
        assert_eq!(lobe_compensation(&l) * (4.0 * PI), sphere_integral_sg(&l));
    }

    #[test]
    fn compensation_minimizes_squared_residual() {
        let l = lobe(Vector3::new(0.2, 0.5, -0.8), 3.0, [0.8, 0.8, 0.8]);
        let dirs = fibonacci_sphere(10_000);
        let values: Vec<f64> = dirs
            .iter()
            .map(|v| eval_sg_lobe(&ViewDirection::new(*v).unwrap(), &l).x)
            .collect();
        let residual = |d: f64| values.iter().map(|g| (d - g) * (d - g)).sum::<f64>();
        let best = lobe_compensation(&l).x;
        let r0 = residual(best);
        for eps in [1e-3, 1e-2, 0.05, 0.2] {
            assert!(residual(best + eps) > r0);
            assert!(residual(best - eps) > r0);
        }
    }

    #[test]
    fn dynamic_range_values() {
        assert_eq!(dynamic_range(&lobe(Vector3::z(), 0.0, [5.0, 1.0, 0.0])), 0.0);
        let big = dynamic_range(&lobe(Vector3::z(), 1e3, [0.6, 0.8, 0.0]));
        assert!((big - 1.0).abs() < 1e-12);
        let three = dynamic_range(&lobe(Vector3::z(), 1.0, [3.0, 0.0, 0.0]));
        assert!((three - 2.593_994_150_290_161_7).abs() < 1e-12);
    }

    #[test]
    fn dynamic_range_is_extremal_swing() {
        let l = lobe(Vector3::new(1.0, 1.0, 0.0), 2.5, [0.3, -0.4, 0.0]);
        let dirs = fibonacci_sphere(20_000);
        let norms: Vec<f64> = dirs
            .iter()
            .chain([l.axis, -l.axis].iter())
            .map(|v| eval_sg_lobe(&ViewDirection::new(*v).unwrap(), &l).norm())
            .collect();
        let max = norms.iter().cloned().fold(f64::MIN, f64::max);
        let min = norms.iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - min - dynamic_range(&l)).abs() < 1e-12);
    }

    #[test]
    fn sh_constant_and_odd_symmetry() {
        let c = [0.1, 0.6, 0.9];
        let sh = ShBlock::new(0, vec![c.map(|x| (x / SH_C0) as f32)]).unwrap();
        for v in fibonacci_sphere(20) {
            let got = eval_sh(&ViewDirection::new(v).unwrap(), &sh).unwrap();
            for ch in 0..3 {
                assert!((got[ch] - c[ch]).abs() < 1e-7);
            }
        }
        let mut coeffs = vec![[0.0f32; 3]; 4];
        coeffs[0] = [0.4, 0.4, 0.4];
        coeffs[2] = [0.7, -0.2, 0.1];
        let sh = ShBlock::new(1, coeffs).unwrap();
        let dc = sh.dc() * SH_C0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let v = random_unit(&mut rng);
            let a = eval_sh(&ViewDirection::new(v).unwrap(), &sh).unwrap() - dc;
            let b = eval_sh(&ViewDirection::new(-v).unwrap(), &sh).unwrap() - dc;
            assert!((a + b).norm() < 1e-12);
        }
    }

    #[test]
    fn sh_integral_is_dc_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let coeffs: Vec<[f32; 3]> = (0..16)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let sh = ShBlock::new(3, coeffs).unwrap();
        let q: Rgb = integrate(10_000, |v| eval_sh(&ViewDirection::new(*v).unwrap(), &sh).unwrap());
        let want = sh.dc() * (4.0 * PI * SH_C0);
        assert!((q - want).norm() < 1e-3);
    }

    #[test]
    fn sh_degree_above_three_is_rejected() {
        assert!(matches!(ShBlock::new(4, vec![[0.0; 3]; 25]), Err(Error::UnsupportedDegree(4))));
        let bad = ShBlock { degree: 4, coefficients: vec![[0.0; 3]; 25] };
        assert!(matches!(eval_sh(&dir(0.0, 0.0, 1.0), &bad), Err(Error::UnsupportedDegree(4))));
    }
}
