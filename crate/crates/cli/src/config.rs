//! Run configuration file (TOML). Every section and key is optional;
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use tdcbf::engine::{EngineConfig, PRESET_NAMES};
use tdcbf::experiment::{EvalSpec, ExperimentSpec};
use tdcbf::rirsim::{RoomSpec, SceneSpec, CORPUS_ENV};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Seconds per simulated mixture.
    pub duration: f64,
    pub engine: EngineConfig,
    pub room: RoomSpec,
    pub scene: SceneSpec,
    pub eval: EvalSpec,
    pub bench: BenchConfig,
    pub io: IoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            duration: ExperimentSpec::default().duration,
            engine: EngineConfig::default(),
            room: RoomSpec::default(),
            scene: SceneSpec::default(),
            eval: EvalSpec::default(),
            bench: BenchConfig::default(),
            io: IoConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub angle_pairs: Vec<[f64; 2]>,
    pub trials: usize,
    pub presets: Vec<String>,
    /// Samples per engine push.
    pub chunk_samples: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let e = ExperimentSpec::default();
        Self {
            angle_pairs: e.angle_pairs,
            trials: e.trials,
            presets: PRESET_NAMES.iter().map(|s| s.to_string()).collect(),
            chunk_samples: e.chunk_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// WAV corpus directory; falls back to the corpus environment variable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
}

pub const REFERENCE_HEADER: &str = "\
# tdcbf reference configuration: every key at its default.
# All sections and keys are optional; unknown keys are rejected.
# engine: any preset can be loaded with --preset (TD-IVA-32ms, FD-CBF-4ms,
#   TD-CBF-32ms, TD-CBF-4ms); the section below is TD-CBF-4ms.
# room.max_image_order: optional, defaults to ceil(343 * t60 / min(dimensions)) + 1.
# room.absorption_model: \"calibrated\" (default) or \"sabine\".
# io.input, io.output_dir, io.corpus: optional paths.
";

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::config(e.to_string()))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => Self::parse(&std::fs::read_to_string(p)?),
        }
    }

    pub fn reference_toml() -> String {
        let body = toml::to_string(&Self::default()).expect("defaults serialize");
        format!("{REFERENCE_HEADER}\n{body}")
    }

    /// Corpus from the config, else from the environment.
    pub fn corpus(&self) -> Option<PathBuf> {
        self.io
            .corpus
            .clone()
            .or_else(|| std::env::var_os(CORPUS_ENV).map(PathBuf::from))
    }

    /// Experiment built from the config, without protocol validation.
    pub fn experiment(&self, synthetic: bool) -> Result<ExperimentSpec> {
        let corpus = if synthetic {
            None
        } else {
            Some(self.corpus().ok_or_else(|| {
                CliError::config(format!(
                    "no corpus: pass --synthetic-sources, set io.corpus or {CORPUS_ENV}"
                ))
            })?)
        };
        Ok(ExperimentSpec {
            room: self.room,
            scene: self.scene,
            angle_pairs: self.bench.angle_pairs.clone(),
            trials: self.bench.trials,
            duration: self.duration,
            seed: self.seed,
            presets: self.bench.presets.clone(),
            eval: self.eval.clone(),
            chunk_samples: self.bench.chunk_samples.max(1),
            corpus,
        })
    }
}
