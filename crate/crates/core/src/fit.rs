//! Conversion of SH color functions into diffuse plus spherical-Gaussian lobes.
//!
//! The fit alternates a closed-form least-squares solve for the diffuse term
//! and lobe amplitudes (with axes and sharpness fixed) with a damped
//! Gauss-Newton step on the lobe axes (through normalization) and the log of
//! the sharpness. A step is kept only when the re-solved residual does not
//! grow, so the residual history is non-increasing.

use nalgebra::{DMatrix, DVector, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{ColorModel, Scene, SgLobe, DEFAULT_MAX_LOBES};
use crate::sg::{sh_color, Lobe, Rgb, ShBlock, ViewDirection};
use crate::sphere::fibonacci_sphere;

pub const INITIAL_SHARPNESS: f64 = 5.0;
const LOG_SHARPNESS_RANGE: (f64, f64) = (-9.0, 8.0);
const NEIGHBORS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub n_lobes: usize,
    pub max_lobes: usize,
    pub n_samples: usize,
    pub max_iters: usize,
    /// Relative residual change below which iteration stops.
    pub tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_lobes: DEFAULT_MAX_LOBES,
            max_lobes: DEFAULT_MAX_LOBES,
            n_samples: 256,
            max_iters: 200,
            tol: 1e-6,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_lobes > self.max_lobes {
            return Err(Error::Config(format!(
                "n_lobes {} exceeds max_lobes {}",
                self.n_lobes, self.max_lobes
            )));
        }
        let needed = 4 * (1 + 7 * self.n_lobes);
        if self.n_samples < needed {
            return Err(Error::Config(format!(
                "n_samples {} is below {needed} for {} lobes",
                self.n_samples, self.n_lobes
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub diffuse: Rgb,
    pub lobes: Vec<Lobe>,
    /// RMS over samples of the RGB residual norm.
    pub residual: f64,
    /// Residual after initialization and after every iteration.
    pub history: Vec<f64>,
}

/// Fits `c0 + sum of lobes` to color samples `values` taken at unit `dirs`.
pub fn fit_sg_samples(dirs: &[Vector3<f64>], values: &[Rgb], cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    if dirs.len() != values.len() {
        return Err(Error::Shape(format!(
            "{} directions for {} values",
            dirs.len(),
            values.len()
        )));
    }
    let problem = Problem { dirs, values };
    let mut axes = Vec::with_capacity(cfg.n_lobes);
    let base = problem.solve(&[], &[]);
    for k in initial_axes(dirs, &base.residuals, cfg.n_lobes) {
        axes.push(dirs[k]);
    }
    let mut log_s = vec![INITIAL_SHARPNESS.ln(); cfg.n_lobes];
    let mut sol = problem.solve(&axes, &log_s);
    let mut history = vec![sol.rms];
    let mut damping = 1e-3;

    for _ in 0..cfg.max_iters {
        if cfg.n_lobes == 0 || sol.rms == 0.0 {
            break;
        }
        let (jtj, jtr) = problem.normal_equations(&axes, &log_s, &sol);
        let mut accepted = None;
        while damping < 1e12 {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += damping * (jtj[(i, i)] + 1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&jtr)) else {
                damping *= 10.0;
                continue;
            };
            let (new_axes, new_log_s) = apply_step(&axes, &log_s, &step);
            let trial = problem.solve(&new_axes, &new_log_s);
            if trial.rms.is_finite() && trial.rms <= sol.rms {
                accepted = Some((new_axes, new_log_s, trial));
                damping = (damping / 3.0).max(1e-9);
                break;
            }
            damping *= 4.0;
        }
        let Some((new_axes, new_log_s, trial)) = accepted else {
            break;
        };
        let change = (sol.rms - trial.rms) / sol.rms.max(f64::MIN_POSITIVE);
        axes = new_axes;
        log_s = new_log_s;
        sol = trial;
        history.push(sol.rms);
        if change < cfg.tol {
            break;
        }
    }

    let lobes = axes
        .iter()
        .zip(&log_s)
        .zip(&sol.amplitudes)
        .map(|((axis, ls), amp)| Lobe {
            axis: *axis,
            sharpness: ls.exp(),
            amplitude: *amp,
        })
        .collect();
    Ok(FitResult {
        diffuse: sol.diffuse,
        lobes,
        residual: sol.rms,
        history,
    })
}

/// Fits the display color `0.5 + SH(v)` on `cfg.n_samples` Fibonacci directions.
pub fn fit_sg_to_sh(sh: &ShBlock, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let dirs = fibonacci_sphere(cfg.n_samples);
    let values = dirs
        .iter()
        .map(|d| sh_color(&ViewDirection::new(*d).expect("unit direction"), sh))
        .collect::<Result<Vec<_>>>()?;
    fit_sg_samples(&dirs, &values, cfg)
}

/// Converts every primitive of an SH scene, in parallel and in order.
/// Returns the SG scene and the per-primitive residuals.
pub fn fit_scene(scene: &Scene, cfg: &FitConfig) -> Result<(Scene, Vec<f64>)> {
    let ColorModel::Sh { .. } = scene.color_model else {
        return Err(Error::WrongColorModel {
            expected: "SH",
            found: scene.color_model.describe(),
        });
    };
    scene.validate()?;
    let blocks = scene.sh.as_ref().expect("validated SH scene");
    let fits = blocks
        .par_iter()
        .map(|b| fit_sg_to_sh(b, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut primitives = Vec::with_capacity(scene.len());
    let mut residuals = Vec::with_capacity(scene.len());
    for (p, f) in scene.primitives.iter().zip(fits) {
        let mut q = p.clone();
        q.diffuse = f.diffuse.map(|v| v as f32).into();
        q.lobes = f
            .lobes
            .iter()
            .map(|l| {
                SgLobe::new(
                    l.axis.map(|v| v as f32).into(),
                    l.sharpness as f32,
                    l.amplitude.map(|v| v as f32).into(),
                )
            })
            .collect();
        primitives.push(q);
        residuals.push(f.residual);
    }
    let mut out = Scene::new_sg(primitives, cfg.max_lobes);
    out.provenance = scene.provenance.clone();
    out.provenance.insert("fit_lobes".into(), cfg.n_lobes.to_string());
    Ok((out, residuals))
}

struct Problem<'a> {
    dirs: &'a [Vector3<f64>],
    values: &'a [Rgb],
}

struct Solution {
    diffuse: Rgb,
    amplitudes: Vec<Rgb>,
    residuals: Vec<Rgb>,
    rms: f64,
}

impl Problem<'_> {
    fn basis(&self, axes: &[Vector3<f64>], log_s: &[f64]) -> DMatrix<f64> {
        let k = self.dirs.len();
        DMatrix::from_fn(k, 1 + axes.len(), |r, c| {
            if c == 0 {
                1.0
            } else {
                let s = log_s[c - 1].exp();
                (s * (axes[c - 1].dot(&self.dirs[r]) - 1.0)).exp()
            }
        })
    }

    /// Least-squares diffuse and amplitudes for fixed axes and sharpness.
    fn solve(&self, axes: &[Vector3<f64>], log_s: &[f64]) -> Solution {
        let k = self.dirs.len();
        let b = self.basis(axes, log_s);
        let rhs = DMatrix::from_fn(k, 3, |r, c| self.values[r][c]);
        let coef = b
            .clone()
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .unwrap_or_else(|_| DMatrix::zeros(b.ncols(), 3));
        let fitted = &b * &coef;
        let residuals: Vec<Rgb> = (0..k)
            .map(|r| Vector3::new(rhs[(r, 0)] - fitted[(r, 0)], rhs[(r, 1)] - fitted[(r, 1)], rhs[(r, 2)] - fitted[(r, 2)]))
            .collect();
        let rms = (residuals.iter().map(|r| r.norm_squared()).sum::<f64>() / k as f64).sqrt();
        let row = |i: usize| Vector3::new(coef[(i, 0)], coef[(i, 1)], coef[(i, 2)]);
        Solution {
            diffuse: row(0),
            amplitudes: (1..coef.nrows()).map(row).collect(),
            residuals,
            rms,
        }
    }

    /// Gauss-Newton system for the nonlinear parameters, four per lobe
    /// (raw axis, log sharpness), with amplitudes held at their solved values.
    fn normal_equations(&self, axes: &[Vector3<f64>], log_s: &[f64], sol: &Solution) -> (DMatrix<f64>, DVector<f64>) {
        let n = 4 * axes.len();
        let mut jtj = DMatrix::zeros(n, n);
        let mut jtr = DVector::zeros(n);
        let mut row = vec![[0.0; 3]; n];
        for (k, d) in self.dirs.iter().enumerate() {
            for (j, (mu, ls)) in axes.iter().zip(log_s).enumerate() {
                let s = ls.exp();
                let cos = mu.dot(d);
                let e = (s * (cos - 1.0)).exp();
                // d(mu . d)/d(raw axis) at unit norm: tangential part of d.
                let tangent = d - mu * cos;
                let amp = sol.amplitudes[j];
                for c in 0..3 {
                    let f = amp[c] * e;
                    for a in 0..3 {
                        row[4 * j + a][c] = f * s * tangent[a];
                    }
                    row[4 * j + 3][c] = f * s * (cos - 1.0);
                }
            }
            let res = sol.residuals[k];
            for p in 0..n {
                for c in 0..3 {
                    jtr[p] += row[p][c] * res[c];
                }
                for q in p..n {
                    let v: f64 = (0..3).map(|c| row[p][c] * row[q][c]).sum();
                    jtj[(p, q)] += v;
                }
            }
        }
        for p in 0..n {
            for q in 0..p {
                jtj[(p, q)] = jtj[(q, p)];
            }
        }
        (jtj, jtr)
    }
}

fn apply_step(axes: &[Vector3<f64>], log_s: &[f64], step: &DVector<f64>) -> (Vec<Vector3<f64>>, Vec<f64>) {
    let new_axes = axes
        .iter()
        .enumerate()
        .map(|(j, mu)| {
            let a = mu + Vector3::new(step[4 * j], step[4 * j + 1], step[4 * j + 2]);
            let n = a.norm();
            if n > 0.0 {
                a / n
            } else {
                *mu
            }
        })
        .collect();
    let new_log_s = log_s
        .iter()
        .enumerate()
        .map(|(j, ls)| (ls + step[4 * j + 3]).clamp(LOG_SHARPNESS_RANGE.0, LOG_SHARPNESS_RANGE.1))
        .collect();
    (new_axes, new_log_s)
}

/// Sample indices of the `n` largest local maxima of the residual norm, where
/// a sample is a local maximum when no nearby sample exceeds it. Falls back
/// to the largest remaining samples when there are too few maxima.
fn initial_axes(dirs: &[Vector3<f64>], residuals: &[Rgb], n: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let norms: Vec<f64> = residuals.iter().map(|r| r.norm()).collect();
    let mut order: Vec<usize> = (0..dirs.len()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let is_max = |i: usize| {
        let mut near: Vec<(f64, usize)> = dirs
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(j, d)| (-d.dot(&dirs[i]), j))
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0));
        near.iter().take(NEIGHBORS).all(|&(_, j)| norms[j] <= norms[i])
    };
    let mut picked: Vec<usize> = order.iter().copied().filter(|&i| is_max(i)).take(n).collect();
    for i in order {
        if picked.len() == n {
            break;
        }
        if !picked.contains(&i) {
            picked.push(i);
        }
    }
    picked
}
