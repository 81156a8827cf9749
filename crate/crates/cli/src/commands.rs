use std::path::{Path, PathBuf};
use std::time::Instant;

use megs2_core::fit::fit_scene;
use megs2_core::image::Image;
use megs2_core::postprocess::{finalize, finetune, scene_stats};
use megs2_core::prune::{run, run_unconstrained, View};
use megs2_core::render::{render, Camera, Model, RenderOptions};
use megs2_core::scene::{
    budget_report, sh_color_floats_per_primitive, write_compact, ColorModel, Scene, FLOATS_PER_PRIMITIVE,
};
use megs2_core::toy;
use nalgebra::Vector3;
use serde_json::json;

use crate::config::{self, Config};
use crate::io::{read_camera, read_scene, read_views, write_bytes, write_scene, write_views};
use crate::manifest::RunManifest;
use crate::{Cli, Command, Failure};

pub fn dispatch(cli: Cli) -> Result<(), Failure> {
    let started = Instant::now();
    let mut cfg = config::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.prune.seed = seed;
        cfg.toy.seed = seed;
    }
    match cli.command {
        Command::Ingest { input, out } => ingest(cfg, &input, &out, started),
        Command::Fit { scene, lobes, out } => {
            if let Some(n) = lobes {
                cfg.fit.n_lobes = n;
                cfg.fit.max_lobes = cfg.fit.max_lobes.max(n);
            }
            fit(cfg, &scene, &out, started)
        }
        Command::TrainToy { out, iterations } => {
            if let Some(n) = iterations {
                cfg.train.iterations = n;
            }
            train_toy(cfg, &out, started)
        }
        Command::Prune {
            scene,
            views,
            budget,
            keep_ratio,
            lobe_keep_ratio,
            opacity_operator,
            sharpness_operator,
            lobe_criterion,
            iterations,
            prox_every,
            delta,
            finetune_steps,
            trace,
            out,
        } => {
            let p = &mut cfg.prune;
            if budget.is_some() {
                p.budget = budget;
            }
            if let Some(r) = keep_ratio {
                p.keep_ratio = r;
                p.budget = None;
            }
            set(&mut p.lobe_keep_ratio, lobe_keep_ratio);
            set(&mut p.opacity_operator, opacity_operator);
            set(&mut p.sharpness_operator, sharpness_operator);
            set(&mut p.iterations, iterations);
            set(&mut p.prox_every, prox_every);
            set(&mut p.delta, delta);
            set(&mut cfg.postprocess.lobe_criterion, lobe_criterion);
            set(&mut cfg.postprocess.finetune_steps, finetune_steps);
            let trace = trace.unwrap_or_else(|| with_suffix(&out, ".trace.csv"));
            prune(cfg, &scene, &views, &trace, &out, started)
        }
        Command::Compact { scene, out } => compact(cfg, &scene, &out, started),
        Command::Render { scene, camera, out } => render_cmd(cfg, &scene, &camera, &out, started),
        Command::Stats {
            scene,
            camera,
            json,
            out,
        } => stats(cfg, &scene, camera.as_deref(), json, out.as_deref(), started),
        Command::Bench {
            scene,
            camera,
            runs,
            out,
        } => {
            set(&mut cfg.render.bench_runs, runs);
            bench(cfg, &scene, camera.as_deref(), out.as_deref(), started)
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

fn core<T>(r: megs2_core::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::core)
}

fn finish(
    mut m: RunManifest,
    inputs: &[&Path],
    outputs: &[&Path],
    summary: serde_json::Value,
    started: Instant,
) -> Result<(), Failure> {
    m.inputs = inputs.iter().map(|p| p.to_path_buf()).collect();
    m.outputs = outputs.iter().map(|p| p.to_path_buf()).collect();
    m.duration_s = started.elapsed().as_secs_f64();
    m.summary = summary;
    m.write(outputs[0])
}

fn mean_psnr(scene: &Scene, views: &[View], opts: &RenderOptions) -> Result<f64, Failure> {
    let mut total = 0.0;
    for (cam, img) in views {
        total += core(core(render(scene, cam, opts))?.psnr(img))?;
    }
    Ok(total / views.len() as f64)
}

fn ingest(cfg: Config, input: &Path, out: &Path, started: Instant) -> Result<(), Failure> {
    let scene = read_scene(input)?;
    write_scene(out, &scene)?;
    println!("ingested {} primitives ({})", scene.len(), scene.color_model.describe());
    let summary = json!({ "primitives": scene.len(), "color_model": scene.color_model });
    finish(RunManifest::new("ingest", &cfg, 0, started), &[input], &[out], summary, started)
}

fn fit(cfg: Config, input: &Path, out: &Path, started: Instant) -> Result<(), Failure> {
    let sh = read_scene(input)?;
    let (sg, residuals) = core(fit_scene(&sh, &cfg.fit))?;
    write_scene(out, &sg)?;
    let mean = residuals.iter().sum::<f64>() / residuals.len().max(1) as f64;
    let max = residuals.iter().cloned().fold(0.0, f64::max);
    println!("fitted {} primitives, {} lobes, mean residual {mean:.3e}", sg.len(), sg.lobe_count());
    let summary = json!({ "primitives": sg.len(), "lobes": sg.lobe_count(), "mean_residual": mean, "max_residual": max });
    finish(RunManifest::new("fit", &cfg, 0, started), &[input], &[out], summary, started)
}

fn train_toy(cfg: Config, out: &Path, started: Instant) -> Result<(), Failure> {
    let t = core(toy::build(&cfg.toy))?;
    let views_dir = out.join("views");
    write_views(&views_dir, &t.views)?;
    write_scene(&out.join("ground_truth.json"), &t.ground_truth)?;
    write_scene(&out.join("init.json"), &t.init)?;
    let train = megs2_core::prune::PrunerConfig {
        iterations: cfg.train.iterations,
        ..cfg.prune.clone()
    };
    let (state, losses) = core(run_unconstrained(Model::from_scene(&t.init), &t.views, &train))?;
    let trained = state.model.to_scene(cfg.toy.max_lobes);
    write_scene(&out.join("trained.json"), &trained)?;
    let psnr = mean_psnr(&trained, &t.views, &cfg.prune.render_options())?;
    println!(
        "toy scene: {} ground-truth, {} model primitives, {} views; trained PSNR {psnr:.2} dB",
        t.ground_truth.len(),
        t.init.len(),
        t.views.len()
    );
    let summary = json!({
        "ground_truth_primitives": t.ground_truth.len(),
        "model_primitives": trained.len(),
        "views": t.views.len(),
        "final_loss": losses.last(),
        "mean_psnr": psnr,
    });
    finish(RunManifest::new("train-toy", &cfg, cfg.toy.seed, started), &[], &[out], summary, started)
}

fn prune(cfg: Config, input: &Path, views_dir: &Path, trace_path: &Path, out: &Path, started: Instant) -> Result<(), Failure> {
    let scene = read_scene(input)?;
    let max_lobes = core(scene.require_sg())?;
    let views = read_views(views_dir)?;
    let result = core(run(Model::from_scene(&scene), max_lobes, &views, &cfg.prune))?;
    write_bytes(trace_path, result.trace.to_csv().as_bytes())?;
    let cleaned = core(finalize(&result.state, max_lobes, &cfg.postprocess))?;
    let (tuned, _) = core(finetune(&cleaned, &views, cfg.postprocess.finetune_steps, &cfg.prune))?;
    write_scene(out, &tuned)?;
    let report = core(budget_report(&tuned))?;
    let psnr = mean_psnr(&tuned, &views, &cfg.prune.render_options())?;
    println!(
        "pruned {} -> {} primitives, {} lobes; {} / {} budget units; PSNR {psnr:.2} dB",
        scene.len(),
        report.primitive_count,
        report.lobe_count,
        report.budget_units,
        result.split.kappa
    );
    let summary = json!({
        "kappa": result.split.kappa,
        "kappa_o": result.split.kappa_o,
        "kappa_s": result.split.kappa_s,
        "input_primitives": scene.len(),
        "budget": report,
        "mean_psnr": psnr,
        "max_residual_o": result.trace.max_residual_o(),
    });
    finish(RunManifest::new("prune", &cfg, cfg.prune.seed, started), &[input, views_dir], &[out, trace_path], summary, started)
}

fn compact(cfg: Config, input: &Path, out: &Path, started: Instant) -> Result<(), Failure> {
    let scene = read_scene(input)?;
    let bytes = write_compact(&scene).map_err(|e| Failure::from_core(input, e))?;
    write_bytes(out, &bytes)?;
    let report = core(budget_report(&scene))?;
    println!("wrote {} bytes, {} budget units", bytes.len(), report.budget_units);
    let summary = json!({ "bytes": bytes.len(), "budget": report });
    finish(RunManifest::new("compact", &cfg, 0, started), &[input], &[out], summary, started)
}

fn render_cmd(cfg: Config, input: &Path, camera: &Path, out: &Path, started: Instant) -> Result<(), Failure> {
    let scene = read_scene(input)?;
    let cam = read_camera(camera)?;
    let img = core(render(&scene, &cam, &cfg.prune.render_options()))?;
    let bytes = if out.extension().is_some_and(|e| e == "f32") {
        img.to_float_dump()
    } else {
        core(img.to_png())?
    };
    write_bytes(out, &bytes)?;
    let summary = json!({ "width": img.width, "height": img.height, "mean": mean(&img) });
    finish(RunManifest::new("render", &cfg, 0, started), &[input, camera], &[out], summary, started)
}

fn mean(img: &Image) -> f64 {
    img.data.iter().sum::<f64>() / img.data.len().max(1) as f64
}

fn stats(cfg: Config, input: &Path, camera: Option<&Path>, as_json: bool, out: Option<&Path>, started: Instant) -> Result<(), Failure> {
    let scene = read_scene(input)?;
    let report = match scene.color_model {
        ColorModel::Sg { .. } => {
            let cam = camera.map(read_camera).transpose()?;
            let stats = core(scene_stats(&scene, cam.as_ref().map(|c| (c, cfg.render.tile_px))))?;
            serde_json::to_value(stats).expect("stats serialize")
        }
        ColorModel::Sh { degree } => {
            let per = FLOATS_PER_PRIMITIVE - 3 + sh_color_floats_per_primitive(degree);
            let n = scene.len() as u64;
            json!({
                "color_model": scene.color_model.describe(),
                "primitive_count": n,
                "static_floats": n * per,
                "static_bytes": 4 * n * per,
                "avg_color_floats_per_primitive": sh_color_floats_per_primitive(degree),
            })
        }
    };
    if as_json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        print_table(&report, "");
    }
    if let Some(out) = out {
        write_bytes(out, &serde_json::to_vec_pretty(&report).expect("report serializes"))?;
        let mut inputs = vec![input];
        inputs.extend(camera);
        finish(RunManifest::new("stats", &cfg, 0, started), &inputs, &[out], report, started)?;
    }
    Ok(())
}

fn print_table(v: &serde_json::Value, prefix: &str) {
    if let serde_json::Value::Object(map) = v {
        for (k, v) in map {
            match v {
                serde_json::Value::Object(_) => print_table(v, &format!("{prefix}{k}.")),
                serde_json::Value::String(s) => println!("{prefix}{k:<32} {s}"),
                _ => println!("{prefix}{k:<32} {v}"),
            }
        }
    }
}

/// Frames the scene's bounding sphere from the -z side.
fn auto_camera(scene: &Scene, cfg: &Config) -> Camera {
    let pts: Vec<Vector3<f64>> = scene
        .primitives
        .iter()
        .map(|p| Vector3::from(p.position.map(f64::from)))
        .collect();
    let center = pts.iter().sum::<Vector3<f64>>() / pts.len().max(1) as f64;
    let radius = pts.iter().map(|p| (p - center).norm()).fold(1e-3, f64::max);
    let fov = 50f64.to_radians();
    let eye = center - Vector3::z() * (1.2 * radius / (0.5 * fov).tan() + radius);
    Camera::look_at(eye, center, -Vector3::y(), fov, cfg.render.auto_width, cfg.render.auto_height)
}

fn bench(cfg: Config, input: &Path, camera: Option<&Path>, out: Option<&Path>, started: Instant) -> Result<(), Failure> {
    let scene = read_scene(input)?;
    let cam = match camera {
        Some(p) => read_camera(p)?,
        None => auto_camera(&scene, &cfg),
    };
    let runs = cfg.render.bench_runs.max(1);
    let opts = cfg.prune.render_options();
    let mut ms = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t = Instant::now();
        core(render(&scene, &cam, &opts))?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let m = ms.iter().sum::<f64>() / runs as f64;
    let sd = (ms.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / runs as f64).sqrt();
    println!(
        "{} primitives, {}x{}: {m:.2} ms ± {sd:.2} ms over {runs} renders ({} workers)",
        scene.len(),
        cam.width,
        cam.height,
        rayon::current_num_threads()
    );
    let report = json!({
        "primitives": scene.len(),
        "width": cam.width,
        "height": cam.height,
        "runs": runs,
        "mean_ms": m,
        "std_ms": sd,
        "workers": rayon::current_num_threads(),
    });
    if let Some(out) = out {
        write_bytes(out, &serde_json::to_vec_pretty(&report).expect("report serializes"))?;
        finish(RunManifest::new("bench", &cfg, 0, started), &[input], &[out], report, started)?;
    }
    Ok(())
}
