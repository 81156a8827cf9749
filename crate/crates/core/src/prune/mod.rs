//! Memory-constrained joint sparsification of opacity and sharpness.
//!
//! The budget `11 ||o||_0 + 7 ||s||_0 <= kappa` is enforced through proxy
//! copies `o~`, `s~` that live on the budget set and dual variables that
//! accumulate the primal-proxy disagreement. Primal variables are pulled
//! towards `proxy - dual` with penalties `delta_o = 11 delta` and
//! `delta_s = 7 delta`.

mod optim;
mod prox;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use optim::{LearningRates, Optimizer};
pub use prox::{
    project_top_k, prox_project, top_k_mask, OpacityOperator, ProxConfig, ProxScores,
    SharpnessOperator,
};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::render::{
    accumulate_importance, loss, render_backward, render_model, Camera, GradientSet, LossConfig,
    Model, ParamKind, RenderOptions,
};
use crate::scene::{LOBE_WEIGHT, PRIMITIVE_WEIGHT};
use optim::{flatten, unflatten, StepRule};

/// A training view: camera and target image.
pub type View = (Camera, Image);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrunerConfig {
    /// Total budget in `11 N + 7 L` units. When absent it is derived from
    /// `keep_ratio` and `lobe_keep_ratio`.
    pub budget: Option<u64>,
    /// Fraction of primitives that keep a nonzero opacity.
    pub keep_ratio: f64,
    /// Fraction of the kept primitives' lobe slots granted when `budget` is
    /// derived.
    pub lobe_keep_ratio: f64,
    pub delta: f64,
    pub learning_rates: LearningRates,
    pub optimizer: Optimizer,
    pub iterations: usize,
    pub prox_every: usize,
    pub opacity_operator: OpacityOperator,
    pub sharpness_operator: SharpnessOperator,
    pub seed: u64,
    pub loss: LossConfig,
    pub background: [f64; 3],
    pub clamp_color: bool,
}

impl Default for PrunerConfig {
    fn default() -> Self {
        Self {
            budget: None,
            keep_ratio: 0.5,
            lobe_keep_ratio: 0.5,
            delta: 5e-3,
            learning_rates: LearningRates::default(),
            optimizer: Optimizer::Adam,
            iterations: 2000,
            prox_every: 50,
            opacity_operator: OpacityOperator::Magnitude,
            sharpness_operator: SharpnessOperator::Sharpness,
            seed: 0,
            loss: LossConfig::default(),
            background: [0.0; 3],
            clamp_color: true,
        }
    }
}

impl PrunerConfig {
    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            background: self.background,
            clamp_color: self.clamp_color,
        }
    }

    pub fn delta_o(&self) -> f64 {
        self.delta * PRIMITIVE_WEIGHT as f64
    }

    pub fn delta_s(&self) -> f64 {
        self.delta * LOBE_WEIGHT as f64
    }

    /// Resolves `kappa` and its split for a model with `n` primitives and
    /// `slots` lobe slots, `max_lobes` per primitive.
    pub fn split(&self, n: usize, slots: usize, max_lobes: usize) -> Result<BudgetSplit> {
        if self.prox_every == 0 {
            return Err(Error::Config("prox_every must be at least 1".into()));
        }
        if !(self.keep_ratio > 0.0 && self.keep_ratio <= 1.0) {
            return Err(Error::Config(format!("keep_ratio {} outside (0, 1]", self.keep_ratio)));
        }
        let kappa_o = (self.keep_ratio * n as f64).ceil() as usize;
        let kappa = match self.budget {
            Some(k) => k,
            None => {
                if !(0.0..=1.0).contains(&self.lobe_keep_ratio) {
                    return Err(Error::Config(format!(
                        "lobe_keep_ratio {} outside [0, 1]",
                        self.lobe_keep_ratio
                    )));
                }
                let lobes = (self.lobe_keep_ratio * (kappa_o * max_lobes) as f64).floor() as u64;
                PRIMITIVE_WEIGHT * kappa_o as u64 + LOBE_WEIGHT * lobes
            }
        };
        BudgetSplit::new(kappa, kappa_o, slots)
    }
}

/// `kappa` and its division into opacity and sharpness budgets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetSplit {
    pub kappa: u64,
    pub kappa_o: usize,
    pub kappa_s: usize,
}

impl BudgetSplit {
    /// Primitives get `kappa_o`; lobes absorb the remainder, capped at the
    /// number of slots.
    pub fn new(kappa: u64, kappa_o: usize, slots: usize) -> Result<Self> {
        let primitive_units = PRIMITIVE_WEIGHT * kappa_o as u64;
        if primitive_units > kappa {
            return Err(Error::Config(format!(
                "budget {kappa} cannot hold {kappa_o} primitives ({primitive_units} units)"
            )));
        }
        let kappa_s = (((kappa - primitive_units) / LOBE_WEIGHT) as usize).min(slots);
        Ok(Self {
            kappa,
            kappa_o,
            kappa_s,
        })
    }

    pub fn units(&self) -> u64 {
        PRIMITIVE_WEIGHT * self.kappa_o as u64 + LOBE_WEIGHT * self.kappa_s as u64
    }
}

/// Optimizer snapshot: primal model, proxies and duals.
#[derive(Clone, Debug, PartialEq)]
pub struct PrunerState {
    pub model: Model,
    pub opacity_proxy: Vec<f64>,
    pub sharpness_proxy: Vec<f64>,
    pub opacity_dual: Vec<f64>,
    pub sharpness_dual: Vec<f64>,
    pub iteration: usize,
    rule: StepRule,
}

/// Sums of two parameter vectors in the proxy layout.
fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn nonzero(v: &[f64]) -> usize {
    v.iter().filter(|x| **x != 0.0).count()
}

impl PrunerState {
    /// Zero duals; proxies start equal to the primal values.
    pub fn new(model: Model, optimizer: Optimizer) -> Self {
        let o = model.opacities();
        let s = model.sharpnesses();
        let len = flatten(&model).0.len();
        Self {
            opacity_dual: vec![0.0; o.len()],
            sharpness_dual: vec![0.0; s.len()],
            opacity_proxy: o,
            sharpness_proxy: s,
            model,
            iteration: 0,
            rule: StepRule::new(optimizer, len),
        }
    }

    /// One gradient step with the penalty pulls.
    ///
    /// `grad` returns the loss and its gradient at a given model. It is called
    /// twice: once at `(theta^k, o^k, s^k)` for geometry, lobes and opacity,
    /// then at `(theta^k, o^{k+1}, s^k)` for sharpness. Returns the first loss.
    pub fn gradient_step_with<F>(&mut self, cfg: &PrunerConfig, mut grad: F) -> Result<f64>
    where
        F: FnMut(&Model) -> Result<(f64, GradientSet)>,
    {
        let (x0, kinds) = flatten(&self.model);
        let lr: Vec<f64> = kinds.iter().map(|k| cfg.learning_rates.get(*k)).collect();
        let (loss, g1) = grad(&self.model)?;
        check_finite(&g1)?;
        let (mut g, _) = flatten(&g1);
        let pull_o: Vec<f64> = (0..self.opacity_proxy.len())
            .map(|i| cfg.delta_o() * (self.model.primitives[i].opacity - self.opacity_proxy[i] + self.opacity_dual[i]))
            .collect();
        add_pull(&mut g, &kinds, ParamKind::Opacity, &pull_o);

        self.rule.tick();
        let mut x = x0.clone();
        let not_s: Vec<bool> = kinds.iter().map(|k| *k != ParamKind::Sharpness).collect();
        self.rule.step(&mut x, &g, &lr, &not_s);
        clamp_kind(&mut x, &kinds, ParamKind::Opacity, 0.0, 1.0);

        // Sharpness sees the updated opacity but the old geometry.
        let mut probe = self.model.clone();
        let new_o: Vec<f64> = pick(&x, &kinds, ParamKind::Opacity);
        for (p, o) in probe.primitives.iter_mut().zip(&new_o) {
            p.opacity = *o;
        }
        let (_, g2) = grad(&probe)?;
        check_finite(&g2)?;
        let (mut gs, _) = flatten(&g2);
        let s_now = self.model.sharpnesses();
        let pull_s: Vec<f64> = (0..s_now.len())
            .map(|j| cfg.delta_s() * (s_now[j] - self.sharpness_proxy[j] + self.sharpness_dual[j]))
            .collect();
        add_pull(&mut gs, &kinds, ParamKind::Sharpness, &pull_s);
        let only_s: Vec<bool> = not_s.iter().map(|m| !m).collect();
        self.rule.step(&mut x, &gs, &lr, &only_s);
        clamp_kind(&mut x, &kinds, ParamKind::Sharpness, 0.0, f64::INFINITY);

        unflatten(&mut self.model, &x);
        if let Some(i) = self.model.first_non_finite() {
            return Err(Error::NumericalFailure { primitive: i });
        }
        self.iteration += 1;
        Ok(loss)
    }

    /// [`Self::gradient_step_with`] using the renderer on one view.
    pub fn gradient_step(&mut self, view: &View, cfg: &PrunerConfig) -> Result<f64> {
        let opts = cfg.render_options();
        self.gradient_step_with(cfg, |m| render_backward(m, &view.0, &view.1, &cfg.loss, &opts))
    }

    /// Projects `(o + lambda_o, s + lambda_s)` onto the budget set.
    pub fn prox_step(&mut self, cfg: &ProxConfig, importance: Option<&[f64]>) -> Result<()> {
        let o_in = add(&self.model.opacities(), &self.opacity_dual);
        let s_in = add(&self.model.sharpnesses(), &self.sharpness_dual);
        let amps = self.model.amplitude_norms();
        let scores = ProxScores {
            importance,
            amplitude_norms: Some(&amps),
        };
        let (po, ps) = prox_project(&o_in, &s_in, cfg, &scores)?;
        self.opacity_proxy = po;
        self.sharpness_proxy = ps;
        Ok(())
    }

    /// `lambda += primal - proxy`.
    pub fn dual_update(&mut self) {
        let o = self.model.opacities();
        let s = self.model.sharpnesses();
        for (l, (x, p)) in self.opacity_dual.iter_mut().zip(o.iter().zip(&self.opacity_proxy)) {
            *l += x - p;
        }
        for (l, (x, p)) in self.sharpness_dual.iter_mut().zip(s.iter().zip(&self.sharpness_proxy)) {
            *l += x - p;
        }
    }

    pub fn residual_o(&self) -> f64 {
        distance(&self.model.opacities(), &self.opacity_proxy)
    }

    pub fn residual_s(&self) -> f64 {
        distance(&self.model.sharpnesses(), &self.sharpness_proxy)
    }

    pub fn active_primitives(&self) -> usize {
        nonzero(&self.opacity_proxy)
    }

    pub fn active_lobes(&self) -> usize {
        nonzero(&self.sharpness_proxy)
    }

    /// Budget units of the current proxy support.
    pub fn proxy_units(&self) -> u64 {
        PRIMITIVE_WEIGHT * self.active_primitives() as u64 + LOBE_WEIGHT * self.active_lobes() as u64
    }
}

fn check_finite(g: &GradientSet) -> Result<()> {
    match g.first_non_finite() {
        Some(i) => Err(Error::NumericalFailure { primitive: i }),
        None => Ok(()),
    }
}

fn add_pull(g: &mut [f64], kinds: &[ParamKind], kind: ParamKind, pull: &[f64]) {
    let mut j = 0;
    for (gi, k) in g.iter_mut().zip(kinds) {
        if *k == kind {
            *gi += pull[j];
            j += 1;
        }
    }
}

fn pick(x: &[f64], kinds: &[ParamKind], kind: ParamKind) -> Vec<f64> {
    x.iter().zip(kinds).filter(|(_, k)| **k == kind).map(|(v, _)| *v).collect()
}

fn clamp_kind(x: &mut [f64], kinds: &[ParamKind], kind: ParamKind, lo: f64, hi: f64) {
    for (v, k) in x.iter_mut().zip(kinds) {
        if *k == kind {
            *v = v.clamp(lo, hi);
        }
    }
}

/// One row per proximal event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// Mean training loss over the steps since the previous event.
    pub loss: f64,
    pub residual_o: f64,
    pub residual_s: f64,
    pub active_primitives: usize,
    pub active_lobes: usize,
    pub budget_units: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("iteration,loss,residual_o,residual_s,active_primitives,active_lobes,budget_units\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.iteration, r.loss, r.residual_o, r.residual_s, r.active_primitives, r.active_lobes, r.budget_units
            );
        }
        out
    }

    pub fn max_residual_o(&self) -> f64 {
        self.rows.iter().map(|r| r.residual_o).fold(0.0, f64::max)
    }
}

/// Result of [`run`]: final optimizer state, the budget used and the trace.
#[derive(Clone, Debug)]
pub struct PrunerRun {
    pub state: PrunerState,
    pub split: BudgetSplit,
    pub trace: Trace,
}

fn mean_loss(model: &Model, views: &[View], cfg: &PrunerConfig) -> Result<f64> {
    let opts = cfg.render_options();
    let mut total = 0.0;
    for (cam, target) in views {
        total += loss(&render_model(model, cam, &opts), target, &cfg.loss)?;
    }
    Ok(total / views.len() as f64)
}

/// Runs the memory-constrained optimization for `cfg.iterations` steps. One
/// view per step, visiting views in a seeded order each epoch. The proximal
/// and dual updates run every `cfg.prox_every` steps; an initial projection
/// at iteration 0 seeds the proxies.
pub fn run(model: Model, max_lobes: usize, views: &[View], cfg: &PrunerConfig) -> Result<PrunerRun> {
    if views.is_empty() {
        return Err(Error::Config("at least one training view is required".into()));
    }
    let split = cfg.split(model.len(), model.lobe_slots(), max_lobes)?;
    let prox_cfg = ProxConfig {
        kappa_o: split.kappa_o,
        kappa_s: split.kappa_s,
        opacity: cfg.opacity_operator,
        sharpness: cfg.sharpness_operator,
    };
    let cams: Vec<Camera> = views.iter().map(|v| v.0.clone()).collect();
    let opts = cfg.render_options();
    let importance = |m: &Model| match cfg.opacity_operator {
        OpacityOperator::Importance => Some(accumulate_importance(m, &cams, &opts)),
        OpacityOperator::Magnitude => None,
    };

    let mut state = PrunerState::new(model, cfg.optimizer);
    let mut trace = Trace::default();
    let initial_loss = mean_loss(&state.model, views, cfg)?;
    state.prox_step(&prox_cfg, importance(&state.model).as_deref())?;
    record(&mut trace, &state, initial_loss, &split)?;

    let mut views_in_order = ViewOrder::new(views.len(), cfg.seed);
    let mut window = (0.0, 0usize);
    for k in 0..cfg.iterations {
        let l = state.gradient_step(&views[views_in_order.next_view()], cfg)?;
        window.0 += l;
        window.1 += 1;
        if (k + 1) % cfg.prox_every == 0 {
            state.prox_step(&prox_cfg, importance(&state.model).as_deref())?;
            state.dual_update();
            record(&mut trace, &state, window.0 / window.1 as f64, &split)?;
            window = (0.0, 0);
        }
    }
    Ok(PrunerRun { state, split, trace })
}

/// Plain training with the same step and view order as [`run`] but no
/// proximal or dual updates. Returns the state and the per-step losses.
pub fn run_unconstrained(model: Model, views: &[View], cfg: &PrunerConfig) -> Result<(PrunerState, Vec<f64>)> {
    if views.is_empty() {
        return Err(Error::Config("at least one training view is required".into()));
    }
    let mut state = PrunerState::new(model, cfg.optimizer);
    let mut views_in_order = ViewOrder::new(views.len(), cfg.seed);
    let mut losses = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        losses.push(state.gradient_step(&views[views_in_order.next_view()], cfg)?);
    }
    Ok((state, losses))
}

/// Visits every view once per epoch in a seeded random order.
struct ViewOrder {
    rng: ChaCha8Rng,
    n: usize,
    pending: Vec<usize>,
}

impl ViewOrder {
    fn new(n: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            n,
            pending: Vec::new(),
        }
    }

    fn next_view(&mut self) -> usize {
        if self.pending.is_empty() {
            self.pending = (0..self.n).collect();
            self.pending.shuffle(&mut self.rng);
            self.pending.reverse();
        }
        self.pending.pop().expect("refilled above")
    }
}

fn record(trace: &mut Trace, state: &PrunerState, loss: f64, split: &BudgetSplit) -> Result<()> {
    let units = state.proxy_units();
    if units > split.kappa {
        return Err(Error::Config(format!(
            "proxy support uses {units} units, budget is {}",
            split.kappa
        )));
    }
    trace.rows.push(TraceRow {
        iteration: state.iteration,
        loss,
        residual_o: state.residual_o(),
        residual_s: state.residual_s(),
        active_primitives: state.active_primitives(),
        active_lobes: state.active_lobes(),
        budget_units: units,
    });
    Ok(())
}
