//! Run configuration: a TOML key/value file whose values command-line flags
//! override.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use soh_core::features::{CurrentSource, Variant};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub variant: Option<Variant>,
    pub alpha: Option<f64>,
    pub level: Option<f64>,
    pub eol: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub max_degree: Option<u8>,
    pub max_cycles: Option<usize>,
    pub current_source: Option<String>,
    pub sequential: Option<bool>,
    pub group: Option<u8>,
    pub phases: Option<usize>,
    pub cell_id: Option<String>,
    pub capacity: Option<f64>,
    pub fade_per_ah: Option<f64>,
    pub recoverable_per_ah: Option<f64>,
    pub recoverable_max: Option<f64>,
    pub recovery_tau_h: Option<f64>,
    pub resistance: Option<f64>,
    pub ambient: Option<f64>,
    pub long_rests: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse(path.to_path_buf(), e.to_string()))
    }
}

#[derive(Debug)]
pub enum ConfigError {
    Io(PathBuf, std::io::Error),
    Parse(PathBuf, String),
}

pub fn parse_current_source(s: &str) -> Result<CurrentSource, String> {
    match s {
        "nominal" => Ok(CurrentSource::Nominal),
        "sampled_mean" | "sampled" => Ok(CurrentSource::SampledMean),
        _ => Err(format!("unknown current source `{s}` (expected nominal or sampled_mean)")),
    }
}

/// Resolved settings shared by every command.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub variant: Variant,
    pub alpha: f64,
    pub level: f64,
    pub eol: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub max_degree: u8,
    pub max_cycles: usize,
    pub current_source: CurrentSource,
    pub sequential: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: Variant::C,
            alpha: 0.05,
            level: 0.90,
            eol: soh_core::metrics::DEFAULT_EOL_FRACTION,
            seed: 0,
            out: PathBuf::from("."),
            max_degree: 2,
            max_cycles: 5,
            current_source: CurrentSource::Nominal,
            sequential: false,
        }
    }
}

impl RunConfig {
    pub fn from_file(file: &FileConfig) -> Result<Self, String> {
        let d = RunConfig::default();
        Ok(RunConfig {
            variant: file.variant.unwrap_or(d.variant),
            alpha: file.alpha.unwrap_or(d.alpha),
            level: file.level.unwrap_or(d.level),
            eol: file.eol.unwrap_or(d.eol),
            seed: file.seed.unwrap_or(d.seed),
            out: file.out.clone().unwrap_or(d.out),
            max_degree: file.max_degree.unwrap_or(d.max_degree),
            max_cycles: file.max_cycles.unwrap_or(d.max_cycles),
            current_source: match &file.current_source {
                Some(s) => parse_current_source(s)?,
                None => d.current_source,
            },
            sequential: file.sequential.unwrap_or(d.sequential),
        })
    }

    pub fn exec(&self) -> soh_core::Exec {
        if self.sequential {
            soh_core::Exec::Sequential
        } else {
            soh_core::Exec::default()
        }
    }
}
