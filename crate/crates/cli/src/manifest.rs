use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::Config;
use crate::io::write_bytes;
use crate::Failure;

/// Everything needed to replay a run; written beside its primary output.
#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub config: Config,
    pub seed: u64,
    pub workers: usize,
    pub version: &'static str,
    pub duration_s: f64,
    pub summary: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, config: &Config, seed: u64, started: Instant) -> Self {
        Self {
            command: command.into(),
            args: std::env::args().skip(1).collect(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: config.clone(),
            seed,
            workers: rayon::current_num_threads(),
            version: env!("CARGO_PKG_VERSION"),
            duration_s: started.elapsed().as_secs_f64(),
            summary: serde_json::Value::Null,
        }
    }

    /// `<out>.manifest.json`, or `manifest.json` inside an output directory.
    pub fn path_for(out: &Path) -> PathBuf {
        if out.is_dir() {
            out.join("manifest.json")
        } else {
            let mut s = out.as_os_str().to_owned();
            s.push(".manifest.json");
            s.into()
        }
    }

    pub fn write(&self, out: &Path) -> Result<(), Failure> {
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        write_bytes(&Self::path_for(out), &json)
    }
}
