//! Deterministic direction sets on the unit sphere.

use std::f64::consts::PI;

use nalgebra::Vector3;

/// `n` near-uniform directions on the Fibonacci spiral.
pub fn fibonacci_sphere(n: usize) -> Vec<Vector3<f64>> {
    let golden = PI * (3.0 - 5.0f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Equal-weight quadrature of `f` over the sphere using `n` Fibonacci points.
pub fn integrate<F, T>(n: usize, mut f: F) -> T
where
    F: FnMut(&Vector3<f64>) -> T,
    T: std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T> + Default,
{
    let w = 4.0 * PI / n as f64;
    fibonacci_sphere(n)
        .iter()
        .fold(T::default(), |acc, v| acc + f(v))
        * w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_are_unit_and_balanced() {
        let pts = fibonacci_sphere(1000);
        let mut mean = Vector3::zeros();
        for p in &pts {
            assert!((p.norm() - 1.0).abs() < 1e-12);
            mean += p;
        }
        assert!((mean / 1000.0).norm() < 1e-3);
    }

    #[test]
    fn area_and_polynomial_moments() {
        let area: f64 = integrate(10_000, |_| 1.0);
        assert!((area - 4.0 * PI).abs() < 1e-9);
        // Integral of z^2 over the sphere is 4 pi / 3.
        let z2: f64 = integrate(10_000, |v| v.z * v.z);
        assert!((z2 - 4.0 * PI / 3.0).abs() < 1e-6);
    }
}
