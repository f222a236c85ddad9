//! Optional TOML config file. A flag beats the file, the file beats the
//! built-in default, and the resolved values are echoed into every output.

use std::path::{Path, PathBuf};

use bookend_core::backends::{BackendIds, BackendSuite};
use bookend_core::Markers;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub markers: Option<Markers>,
    pub backend: BackendFile,
    pub preprocess: PreprocessFile,
    pub generate: GenerateFile,
    pub eval: EvalFile,
    pub serve: ServeFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendFile {
    pub kind: Option<BackendKind>,
    pub url: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessFile {
    pub gamma: Option<f64>,
    pub negatives: Option<usize>,
    pub split: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateFile {
    pub scheme: Option<SchemeKind>,
    pub method: Option<u8>,
    pub variant: Option<VariantKind>,
    pub n: Option<usize>,
    pub jobs: Option<usize>,
    pub max_new_tokens: Option<u32>,
    pub temperature: Option<f64>,
    pub system_prompt: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalFile {
    pub smoothing: Option<SmoothingKind>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeFile {
    pub data_dir: Option<PathBuf>,
    pub host: Option<String>,
    pub port: Option<u16>,
    pub static_dir: Option<PathBuf>,
    pub cors: Option<bool>,
    pub n: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let raw = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&raw).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Stub,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Lm,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantKind {
    Bookend,
    Long,
    Baseline,
    Ablation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmoothingKind {
    None,
    AddOne,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// Model backends: deterministic stubs or one remote model server.
    #[arg(long, value_enum, env = "BOOKEND_BACKEND")]
    pub backend: Option<BackendKind>,
    /// Base URL of the model server, required for --backend remote.
    #[arg(long, env = "BOOKEND_BACKEND_URL")]
    pub backend_url: Option<String>,
}

#[derive(Debug, Args)]
pub struct MarkerArgs {
    #[arg(long)]
    pub mask_marker: Option<String>,
    #[arg(long)]
    pub sep_marker: Option<String>,
    #[arg(long)]
    pub plist_marker: Option<String>,
    #[arg(long)]
    pub stop_marker: Option<String>,
}

impl MarkerArgs {
    pub fn resolve(&self, file: &FileConfig) -> CliResult<Markers> {
        let mut m = file.markers.clone().unwrap_or_default();
        for (flag, slot) in [
            (&self.mask_marker, &mut m.mask),
            (&self.sep_marker, &mut m.sep),
            (&self.plist_marker, &mut m.plist),
            (&self.stop_marker, &mut m.stop),
        ] {
            if let Some(v) = flag {
                *slot = v.clone();
            }
        }
        let all = m.all();
        if all.iter().any(|s| s.trim().is_empty()) {
            return Err(CliError::Usage("marker literals must be non-empty".into()));
        }
        if (1..all.len()).any(|i| all[..i].contains(&all[i])) {
            return Err(CliError::Usage("marker literals must be distinct".into()));
        }
        Ok(m)
    }
}

#[derive(Clone, Serialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    pub ids: BackendIds,
    #[serde(skip)]
    pub suite: BackendSuite,
}

impl BackendArgs {
    pub fn resolve(&self, file: &FileConfig, markers: &Markers) -> CliResult<BackendConfig> {
        let kind = self.backend.or(file.backend.kind).unwrap_or(BackendKind::Stub);
        let url = self.backend_url.clone().or_else(|| file.backend.url.clone());
        let suite = match (kind, &url) {
            (BackendKind::Stub, _) => BackendSuite::stubs(&markers.mask),
            (BackendKind::Remote, Some(url)) => BackendSuite::remote(url, &markers.mask),
            (BackendKind::Remote, None) => {
                return Err(CliError::Usage("--backend remote needs --backend-url".into()));
            }
        };
        Ok(BackendConfig {
            kind,
            url: url.filter(|_| kind == BackendKind::Remote),
            ids: suite.ids(),
            suite,
        })
    }
}
