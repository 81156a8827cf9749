//! First-order (EWA) projection of 3D Gaussians and its reverse pass.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3, Vector4};

use super::camera::Camera;
use super::model::{normalize4, ModelPrimitive};

/// Variance added to both diagonal entries of every projected covariance.
pub const LOW_PASS_VARIANCE: f64 = 0.3;

/// A primitive projected to the image plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    pub mean2d: Vector2<f64>,
    /// Symmetric covariance `(xx, xy, yy)`, low-pass floor included.
    pub cov2d: [f64; 3],
    pub depth: f64,
    pub color: Vector3<f64>,
    pub opacity: f64,
}

/// Forward intermediates needed by the reverse pass.
#[derive(Clone, Debug)]
pub(crate) struct Projected {
    pub splat: Splat2D,
    /// Inverse covariance `(A, B, C)`; the Gaussian is `exp(-(A dx^2 + 2 B dx dy + C dy^2) / 2)`.
    pub conic: [f64; 3],
    pub p_cam: Vector3<f64>,
    pub rot: Matrix3<f64>,
    pub scale: Vector3<f64>,
    pub sigma3: Matrix3<f64>,
    pub jw: Matrix2x3<f64>,
    pub view_dir: Vector3<f64>,
    pub view_dist: f64,
    /// Per-lobe `exp(s (mu . v - 1))` and unit axes.
    pub lobe_terms: Vec<(f64, Vector3<f64>)>,
    /// Channels that were clamped at zero.
    pub clamped: [bool; 3],
}

pub(crate) fn quat_to_matrix(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// World covariance `R diag(s^2) R^T`.
pub fn covariance3d(prim: &ModelPrimitive) -> Matrix3<f64> {
    let rot = quat_to_matrix(&normalize4(&prim.rotation));
    let m = rot * Matrix3::from_diagonal(&prim.log_scale.map(f64::exp));
    m * m.transpose()
}

/// Perspective Jacobian of `(fx x / z + cx, fy y / z + cy)` at `p`.
pub fn perspective_jacobian(p: &Vector3<f64>, fx: f64, fy: f64) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    Matrix2x3::new(
        fx * iz,
        0.0,
        -fx * p.x * iz * iz,
        0.0,
        fy * iz,
        -fy * p.y * iz * iz,
    )
}

pub(crate) fn project_model(prim: &ModelPrimitive, cam: &Camera, clamp_color: bool) -> Option<Projected> {
    let w = cam.rotation_matrix();
    let p_cam = w * prim.position + cam.translation_vector();
    if p_cam.z <= cam.near {
        return None;
    }
    let iz = 1.0 / p_cam.z;
    let mean2d = Vector2::new(cam.fx * p_cam.x * iz + cam.cx, cam.fy * p_cam.y * iz + cam.cy);

    let rot = quat_to_matrix(&normalize4(&prim.rotation));
    let scale = prim.log_scale.map(f64::exp);
    let m = rot * Matrix3::from_diagonal(&scale);
    let sigma3 = m * m.transpose();
    let jw = perspective_jacobian(&p_cam, cam.fx, cam.fy) * w;
    let cov = jw * sigma3 * jw.transpose();
    let (a, b, c) = (cov[(0, 0)] + LOW_PASS_VARIANCE, cov[(0, 1)], cov[(1, 1)] + LOW_PASS_VARIANCE);
    let det = a * c - b * b;
    if !(det > 0.0) {
        return None;
    }
    let conic = [c / det, -b / det, a / det];

    let offset = prim.position - cam.center();
    let view_dist = offset.norm();
    let view_dir = if view_dist > 0.0 { offset / view_dist } else { Vector3::z() };
    let mut color = prim.diffuse;
    let mut lobe_terms = Vec::with_capacity(prim.lobes.len());
    for l in &prim.lobes {
        let n = l.axis.norm();
        let mu = if n > 0.0 { l.axis / n } else { Vector3::z() };
        let e = (l.sharpness * (mu.dot(&view_dir) - 1.0)).exp();
        color += l.amplitude * e;
        lobe_terms.push((e, mu));
    }
    let mut clamped = [false; 3];
    if clamp_color {
        for ch in 0..3 {
            if color[ch] < 0.0 {
                color[ch] = 0.0;
                clamped[ch] = true;
            }
        }
    }

    Some(Projected {
        splat: Splat2D {
            mean2d,
            cov2d: [a, b, c],
            depth: p_cam.z,
            color,
            opacity: prim.opacity,
        },
        conic,
        p_cam,
        rot,
        scale,
        sigma3,
        jw,
        view_dir,
        view_dist,
        lobe_terms,
        clamped,
    })
}

/// Upstream gradients with respect to one projected splat.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct SplatGrad {
    pub mean2d: Vector2<f64>,
    pub conic: [f64; 3],
    pub color: Vector3<f64>,
    pub opacity: f64,
}

impl SplatGrad {
    pub fn add(&mut self, o: &SplatGrad) {
        self.mean2d += o.mean2d;
        self.conic[0] += o.conic[0];
        self.conic[1] += o.conic[1];
        self.conic[2] += o.conic[2];
        self.color += o.color;
        self.opacity += o.opacity;
    }
}

/// Chains splat-level gradients back to the primitive's parameters and adds
/// them into `out`.
pub(crate) fn project_backward(
    prim: &ModelPrimitive,
    cam: &Camera,
    pr: &Projected,
    g: &SplatGrad,
    out: &mut ModelPrimitive,
) {
    out.opacity += g.opacity;

    // Color path.
    let mut dcolor = g.color;
    for ch in 0..3 {
        if pr.clamped[ch] {
            dcolor[ch] = 0.0;
        }
    }
    out.diffuse += dcolor;
    let mut d_view = Vector3::zeros();
    for ((l, (e, mu)), gl) in prim.lobes.iter().zip(&pr.lobe_terms).zip(out.lobes.iter_mut()) {
        let ga = dcolor.dot(&l.amplitude) * e;
        gl.amplitude += dcolor * *e;
        let cos = mu.dot(&pr.view_dir);
        gl.sharpness += ga * (cos - 1.0);
        // d/d mu of s (mu . v), then through the axis normalization.
        let d_mu = pr.view_dir * (ga * l.sharpness);
        gl.axis += normalize_backward(&l.axis, mu, &d_mu);
        d_view += mu * (ga * l.sharpness);
    }
    if pr.view_dist > 0.0 {
        out.position += (d_view - pr.view_dir * pr.view_dir.dot(&d_view)) / pr.view_dist;
    }

    // Conic -> covariance.
    let [ga_c, gb_c, gc_c] = g.conic;
    let [a, b, c] = pr.splat.cov2d;
    let det = a * c - b * b;
    let d2 = det * det;
    let d_a = ga_c * (-c * c / d2) + gb_c * (b * c / d2) + gc_c * (-b * b / d2);
    let d_b = ga_c * (2.0 * b * c / d2) + gb_c * (-(a * c + b * b) / d2) + gc_c * (2.0 * a * b / d2);
    let d_c = ga_c * (-b * b / d2) + gb_c * (a * b / d2) + gc_c * (-a * a / d2);
    let g2 = Matrix2::new(d_a, 0.5 * d_b, 0.5 * d_b, d_c);

    // Covariance -> 3D covariance and the projection Jacobian.
    let g3 = pr.jw.transpose() * g2 * pr.jw;
    let d_jw = 2.0 * g2 * pr.jw * pr.sigma3;
    let w = cam.rotation_matrix();
    let d_j = d_jw * w.transpose();

    let (x, y, z) = (pr.p_cam.x, pr.p_cam.y, pr.p_cam.z);
    let (fx, fy) = (cam.fx, cam.fy);
    let iz = 1.0 / z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut d_pcam = Vector3::new(
        g.mean2d.x * fx * iz,
        g.mean2d.y * fy * iz,
        -g.mean2d.x * fx * x * iz2 - g.mean2d.y * fy * y * iz2,
    );
    d_pcam.z += d_j[(0, 0)] * (-fx * iz2) + d_j[(1, 1)] * (-fy * iz2);
    d_pcam.x += d_j[(0, 2)] * (-fx * iz2);
    d_pcam.z += d_j[(0, 2)] * (2.0 * fx * x * iz3);
    d_pcam.y += d_j[(1, 2)] * (-fy * iz2);
    d_pcam.z += d_j[(1, 2)] * (2.0 * fy * y * iz3);
    out.position += w.transpose() * d_pcam;

    // 3D covariance -> rotation and scale.
    let s = &pr.scale;
    let m = pr.rot * Matrix3::from_diagonal(s);
    let d_m = 2.0 * g3 * m;
    let mut d_rot = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            d_rot[(i, j)] = d_m[(i, j)] * s[j];
        }
    }
    for j in 0..3 {
        let ds: f64 = (0..3).map(|i| d_m[(i, j)] * pr.rot[(i, j)]).sum();
        out.log_scale[j] += ds * s[j];
    }
    let q = normalize4(&prim.rotation);
    let d_qhat = rotation_matrix_backward(&q, &d_rot);
    let qn = prim.rotation.norm();
    if qn > 0.0 {
        out.rotation += (d_qhat - q * q.dot(&d_qhat)) / qn;
    }
}

/// Gradient of `x / |x|` pulled back from `d_unit` to `x`.
fn normalize_backward(x: &Vector3<f64>, unit: &Vector3<f64>, d_unit: &Vector3<f64>) -> Vector3<f64> {
    let n = x.norm();
    if n > 0.0 {
        (d_unit - unit * unit.dot(d_unit)) / n
    } else {
        Vector3::zeros()
    }
}

/// Pullback of a gradient on the rotation matrix to the unit quaternion.
fn rotation_matrix_backward(q: &Vector4<f64>, d_r: &Matrix3<f64>) -> Vector4<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let dw = Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0);
    let dx = Matrix3::new(0.0, 2.0 * y, 2.0 * z, 2.0 * y, -4.0 * x, -2.0 * w, 2.0 * z, 2.0 * w, -4.0 * x);
    let dy = Matrix3::new(-4.0 * y, 2.0 * x, 2.0 * w, 2.0 * x, 0.0, 2.0 * z, -2.0 * w, 2.0 * z, -4.0 * y);
    let dz = Matrix3::new(-4.0 * z, -2.0 * w, 2.0 * x, 2.0 * w, -4.0 * z, 2.0 * y, 2.0 * x, 2.0 * y, 0.0);
    Vector4::new(
        d_r.component_mul(&dw).sum(),
        d_r.component_mul(&dx).sum(),
        d_r.component_mul(&dy).sum(),
        d_r.component_mul(&dz).sum(),
    )
}
