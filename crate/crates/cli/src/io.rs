//! Scene, camera and view-set files.
//!
//! Scenes are recognized by content: the MEGS2 magic, a PLY header, or else
//! the JSON scene document written by `ingest` and `fit`. A view set is a
//! directory holding `cameras.json` and one `view_NNN.f32` float dump per
//! camera.

use std::path::{Path, PathBuf};

use megs2_core::image::Image;
use megs2_core::prune::View;
use megs2_core::render::Camera;
use megs2_core::scene::{parse_ply, read_compact, write_compact, Scene, COMPACT_MAGIC};

use crate::Failure;

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::input(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::input(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Failure::input(path, e))
}

pub fn read_scene(path: &Path) -> Result<Scene, Failure> {
    let bytes = read_bytes(path)?;
    let scene = if bytes.starts_with(COMPACT_MAGIC) {
        read_compact(&bytes)
    } else if bytes.starts_with(b"ply") {
        parse_ply(&bytes)
    } else {
        let scene: Scene = serde_json::from_slice(&bytes).map_err(|e| Failure::input(path, e))?;
        Ok(scene)
    };
    let scene = scene.map_err(|e| Failure::from_core(path, e))?;
    scene.validate().map_err(|e| Failure::from_core(path, e))?;
    Ok(scene)
}

/// `.megs2` paths get the compact format, everything else the JSON scene.
pub fn write_scene(path: &Path, scene: &Scene) -> Result<(), Failure> {
    let bytes = if path.extension().is_some_and(|e| e == "megs2") {
        write_compact(scene).map_err(|e| Failure::from_core(path, e))?
    } else {
        serde_json::to_vec(scene).expect("scene serializes")
    };
    write_bytes(path, &bytes)
}

pub fn read_camera(path: &Path) -> Result<Camera, Failure> {
    let cam: Camera = serde_json::from_slice(&read_bytes(path)?).map_err(|e| Failure::input(path, e))?;
    cam.validate().map_err(|e| Failure::from_core(path, e))?;
    Ok(cam)
}

fn view_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("view_{i:03}.f32"))
}

pub fn read_views(dir: &Path) -> Result<Vec<View>, Failure> {
    let cams_path = dir.join("cameras.json");
    let cams: Vec<Camera> = serde_json::from_slice(&read_bytes(&cams_path)?).map_err(|e| Failure::input(&cams_path, e))?;
    cams.into_iter()
        .enumerate()
        .map(|(i, cam)| {
            let path = view_path(dir, i);
            cam.validate().map_err(|e| Failure::from_core(&cams_path, e))?;
            let img = Image::from_float_dump(&read_bytes(&path)?).map_err(|e| Failure::from_core(&path, e))?;
            if (img.width, img.height) != (cam.width, cam.height) {
                return Err(Failure::Input(format!(
                    "{}: image is {}x{} but camera {i} is {}x{}",
                    path.display(),
                    img.width,
                    img.height,
                    cam.width,
                    cam.height
                )));
            }
            Ok((cam, img))
        })
        .collect()
}

pub fn write_views(dir: &Path, views: &[View]) -> Result<(), Failure> {
    let cams: Vec<&Camera> = views.iter().map(|(c, _)| c).collect();
    write_bytes(&dir.join("cameras.json"), &serde_json::to_vec_pretty(&cams).expect("cameras serialize"))?;
    for (i, (_, img)) in views.iter().enumerate() {
        write_bytes(&view_path(dir, i), &img.to_float_dump())?;
    }
    Ok(())
}
