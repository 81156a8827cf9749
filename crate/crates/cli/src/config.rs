//! Run configuration: one TOML file with a table per stage. Every field has a
//! default, so a file only names what it changes; the resolved value is what
//! lands in the manifest.

use std::path::Path;

use megs2_core::fit::FitConfig;
use megs2_core::postprocess::PostprocessConfig;
use megs2_core::prune::PrunerConfig;
use megs2_core::toy::ToyConfig;
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub fit: FitConfig,
    pub prune: PrunerConfig,
    pub postprocess: PostprocessConfig,
    pub toy: ToyConfig,
    pub train: TrainConfig,
    pub render: RenderConfig,
}

/// Plain photometric training of the toy model before pruning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { iterations: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Tile edge in pixels used by the memory estimate.
    pub tile_px: usize,
    pub bench_runs: usize,
    /// Image size of the automatic camera used when none is given.
    pub auto_width: usize,
    pub auto_height: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            tile_px: 16,
            bench_runs: 20,
            auto_width: 256,
            auto_height: 256,
        }
    }
}

#[derive(Deserialize)]
struct ManifestConfig {
    config: Config,
}

/// Reads a TOML config, or the `config` table of an earlier run manifest so
/// that runs can be replayed.
pub fn load(path: Option<&Path>) -> Result<Config, Failure> {
    let Some(path) = path else {
        return Ok(Config::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Failure::input(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str::<ManifestConfig>(&text)
            .map(|m| m.config)
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {}", path.display(), e.message())))
    }
}
