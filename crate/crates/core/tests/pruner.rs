use megs2_core::postprocess::{finalize, finetune, PostprocessConfig};
use megs2_core::prune::{
    prox_project, run, run_unconstrained, LearningRates, OpacityOperator, Optimizer, PrunerConfig,
    PrunerState, ProxConfig, ProxScores, SharpnessOperator, View,
};
use megs2_core::render::{render_backward, GradientSet, LossConfig, Model, RenderOptions};
use megs2_core::scene::{budget_report, Scene};
use megs2_core::toy::{self, ToyConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_toy() -> (Scene, Vec<View>) {
    let cfg = ToyConfig {
        gt_primitives: 6,
        model_primitives: 12,
        views: 3,
        width: 24,
        height: 24,
        seed: 3,
        ..Default::default()
    };
    let t = toy::build(&cfg).unwrap();
    (t.init, t.views)
}

fn sgd(eta: f64, delta: f64) -> PrunerConfig {
    PrunerConfig {
        optimizer: Optimizer::Sgd,
        learning_rates: LearningRates::uniform(eta),
        delta,
        ..Default::default()
    }
}

/// Algorithm 1 written out directly on flat parameter lists.
fn hand_step(model: &Model, state: &PrunerState, view: &View, eta: f64, delta: f64) -> Model {
    let grad = |m: &Model| -> GradientSet {
        render_backward(m, &view.0, &view.1, &LossConfig::default(), &RenderOptions::default()).unwrap().1
    };
    let g = grad(model);
    let mut next = model.clone();
    for (i, (p, gp)) in next.primitives.iter_mut().zip(&g.primitives).enumerate() {
        p.position -= eta * gp.position;
        p.rotation -= eta * gp.rotation;
        p.log_scale -= eta * gp.log_scale;
        p.diffuse -= eta * gp.diffuse;
        for (l, gl) in p.lobes.iter_mut().zip(&gp.lobes) {
            l.axis -= eta * gl.axis;
            l.amplitude -= eta * gl.amplitude;
        }
        let o = model.primitives[i].opacity;
        let pull = 11.0 * delta * (o - state.opacity_proxy[i] + state.opacity_dual[i]);
        p.opacity = (o - eta * (gp.opacity + pull)).clamp(0.0, 1.0);
    }
    let mut probe = model.clone();
    for (p, n) in probe.primitives.iter_mut().zip(&next.primitives) {
        p.opacity = n.opacity;
    }
    let gs = grad(&probe);
    let mut slot = 0;
    for (i, p) in next.primitives.iter_mut().enumerate() {
        for (j, l) in p.lobes.iter_mut().enumerate() {
            let s = model.primitives[i].lobes[j].sharpness;
            let pull = 7.0 * delta * (s - state.sharpness_proxy[slot] + state.sharpness_dual[slot]);
            l.sharpness = (s - eta * (gs.primitives[i].lobes[j].sharpness + pull)).max(0.0);
            slot += 1;
        }
    }
    next
}

#[test]
fn single_step_matches_hand_stepped_algorithm() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (init, views) = small_toy();
    let model = Model::from_scene(&Scene::new_sg(init.primitives[..5].to_vec(), 3));
    let cfg = sgd(0.01, 0.02);
    let mut state = PrunerState::new(model.clone(), Optimizer::Sgd);
    state.opacity_proxy.iter_mut().for_each(|v| *v = if rng.gen_bool(0.5) { 0.0 } else { *v });
    state.opacity_dual.iter_mut().for_each(|v| *v = rng.gen_range(-0.2..0.2));
    state.sharpness_proxy.iter_mut().for_each(|v| *v = rng.gen_range(0.0..2.0));
    state.sharpness_dual.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
    let want = hand_step(&model, &state, &views[0], 0.01, 0.02);
    state.gradient_step(&views[0], &cfg).unwrap();
    for (a, b) in state.model.primitives.iter().zip(&want.primitives) {
        for ((_, x), (_, y)) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }
}

#[test]
fn dual_update_matches_script() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (init, _) = small_toy();
    let mut state = PrunerState::new(Model::from_scene(&init), Optimizer::Sgd);
    state.opacity_dual.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    state.sharpness_proxy.iter_mut().for_each(|v| *v = rng.gen_range(0.0..3.0));
    let o = state.model.opacities();
    let s = state.model.sharpnesses();
    let want_o: Vec<f64> = (0..o.len()).map(|i| state.opacity_dual[i] + o[i] - state.opacity_proxy[i]).collect();
    let want_s: Vec<f64> = (0..s.len()).map(|j| state.sharpness_dual[j] + s[j] - state.sharpness_proxy[j]).collect();
    state.dual_update();
    assert_eq!(state.opacity_dual, want_o);
    assert_eq!(state.sharpness_dual, want_s);
}

#[test]
fn prox_matches_brute_force_on_length_ten() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let x: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k = rng.gen_range(0..=10);
        let cfg = ProxConfig {
            kappa_o: k,
            kappa_s: 0,
            opacity: OpacityOperator::Magnitude,
            sharpness: SharpnessOperator::Sharpness,
        };
        let (got, _) = prox_project(&x, &[], &cfg, &ProxScores::default()).unwrap();
        let best = (0u32..1 << 10)
            .filter(|m| m.count_ones() as usize == k)
            .min_by(|a, b| {
                let cost = |m: u32| (0..10).filter(|i| m & (1 << i) == 0).map(|i| x[i] * x[i]).sum::<f64>();
                cost(*a).total_cmp(&cost(*b))
            })
            .unwrap();
        let want: Vec<f64> = (0..10).map(|i| if best & (1 << i) != 0 { x[i] } else { 0.0 }).collect();
        assert_eq!(got, want);
    }
}

#[test]
fn inactive_budget_lowers_the_loss() {
    let (init, views) = small_toy();
    let cfg = PrunerConfig {
        budget: Some(u64::MAX / 2),
        keep_ratio: 1.0,
        iterations: 200,
        prox_every: 10,
        ..Default::default()
    };
    let r = run(Model::from_scene(&init), 3, &views, &cfg).unwrap();
    let losses: Vec<f64> = r.trace.rows.iter().map(|t| t.loss).collect();
    assert!(losses.last().unwrap() <= &losses[0]);
    let window = |w: &[f64]| w.iter().sum::<f64>() / w.len() as f64;
    assert!(window(&losses[losses.len() - 10..]) < window(&losses[1..11]));
}

#[test]
fn no_penalty_and_no_projection_is_plain_training() {
    let (init, views) = small_toy();
    let cfg = PrunerConfig {
        delta: 0.0,
        prox_every: usize::MAX,
        keep_ratio: 1.0,
        budget: Some(u64::MAX / 2),
        iterations: 30,
        ..Default::default()
    };
    let admm = run(Model::from_scene(&init), 3, &views, &cfg).unwrap();
    let (plain, _) = run_unconstrained(Model::from_scene(&init), &views, &cfg).unwrap();
    assert_eq!(admm.state.model, plain.model);
}

#[test]
fn half_keep_ratio_halves_primitives_after_postprocessing() {
    let (init, views) = small_toy();
    let cfg = PrunerConfig {
        keep_ratio: 0.5,
        iterations: 150,
        prox_every: 25,
        ..Default::default()
    };
    let r = run(Model::from_scene(&init), 3, &views, &cfg).unwrap();
    for row in &r.trace.rows {
        assert!(row.budget_units <= r.split.kappa);
        assert!(row.active_primitives <= r.split.kappa_o);
    }
    let scene = finalize(&r.state, 3, &PostprocessConfig::default()).unwrap();
    assert!(scene.len() <= init.len() / 2);
    assert!(budget_report(&scene).unwrap().budget_units <= r.split.kappa);
    let (tuned, _) = finetune(&scene, &views, 5, &cfg).unwrap();
    assert_eq!((tuned.len(), tuned.lobe_count()), (scene.len(), scene.lobe_count()));
}

#[test]
fn importance_and_range_operators_respect_the_budget() {
    let (init, views) = small_toy();
    let cfg = PrunerConfig {
        keep_ratio: 0.25,
        lobe_keep_ratio: 0.3,
        iterations: 60,
        prox_every: 20,
        opacity_operator: OpacityOperator::Importance,
        sharpness_operator: SharpnessOperator::Range,
        ..Default::default()
    };
    let r = run(Model::from_scene(&init), 3, &views, &cfg).unwrap();
    assert_eq!(r.trace.rows.len(), 4);
    for row in &r.trace.rows {
        assert!(row.budget_units <= r.split.kappa);
    }
}

#[test]
fn runs_are_deterministic() {
    let (init, views) = small_toy();
    let cfg = PrunerConfig { iterations: 40, prox_every: 10, seed: 11, ..Default::default() };
    let a = run(Model::from_scene(&init), 3, &views, &cfg).unwrap();
    let b = run(Model::from_scene(&init), 3, &views, &cfg).unwrap();
    assert_eq!(a.state.model, b.state.model);
    assert_eq!(a.trace, b.trace);
}
