//! Run configuration: a TOML file whose keys can each be overridden by flags.

use std::path::{Path, PathBuf};

use cropspec::analysis::GroupBy;
use cropspec::classify::{PriorMode, SparseClassPolicy};
use cropspec::dataset::IngestConfig;
use cropspec::eval::{Algorithm, DEFAULT_FOLDS, DEFAULT_SEED};
use serde::Deserialize;

use crate::CliError;

pub const DEFAULT_OUTPUT_DIR: &str = "cropspec-out";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    /// `toolkit`, `ghisaconus`, or a path to an ingest TOML file.
    pub ingest: Option<String>,
    pub output_dir: Option<PathBuf>,
    /// Algorithm descriptors, or `suite` for the full comparison suite.
    pub algorithms: Option<Vec<String>>,
    pub lambda: Option<f64>,
    pub grid: Option<Vec<f64>>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub priors: Option<PriorMode>,
    pub sparse_classes: Option<SparseClassPolicy>,
    pub components: Option<usize>,
    pub group_by: Option<GroupBy>,
    /// One-based component numbers for the scatter axes.
    pub axes: Option<[usize; 2]>,
    pub model: Option<PathBuf>,
    pub spec: Option<PathBuf>,
}

impl RunConfig {
    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(v) = p {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        };
        fix(&mut cfg.dataset);
        fix(&mut cfg.output_dir);
        fix(&mut cfg.model);
        fix(&mut cfg.spec);
        if let Some(ingest) = &cfg.ingest {
            if !is_profile(ingest) && Path::new(ingest).is_relative() {
                cfg.ingest = Some(base.join(ingest).to_string_lossy().into_owned());
            }
        }
        Ok(cfg)
    }

    pub fn dataset(&self) -> Result<&Path, CliError> {
        self.dataset
            .as_deref()
            .ok_or_else(|| CliError::Usage("no dataset given (use --dataset or `dataset` in the config)".into()))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn k(&self) -> Result<usize, CliError> {
        let k = self.k.unwrap_or(DEFAULT_FOLDS);
        if k < 2 {
            return Err(CliError::Usage(format!("k must be at least 2, got {k}")));
        }
        Ok(k)
    }

    pub fn ingest(&self) -> Result<IngestConfig, CliError> {
        match self.ingest.as_deref() {
            None | Some("toolkit") => Ok(IngestConfig::toolkit()),
            Some("ghisaconus") => Ok(IngestConfig::ghisaconus()),
            Some(path) => Ok(IngestConfig::from_file(path)?),
        }
    }

    /// Parsed algorithm list; `default` applies when none were requested.
    pub fn algorithms(&self, default: &[&str]) -> Result<Vec<Algorithm>, CliError> {
        let names: Vec<String> = match &self.algorithms {
            Some(v) if !v.is_empty() => v.clone(),
            _ => default.iter().map(|s| s.to_string()).collect(),
        };
        if names.is_empty() {
            return Err(CliError::Usage("no algorithm given (use --algorithm)".into()));
        }
        let mut out = Vec::new();
        for name in names {
            if name.eq_ignore_ascii_case("suite") {
                out.extend(Algorithm::comparison_suite());
                continue;
            }
            let name = match self.lambda {
                Some(l) if !name.contains(':') && !name.starts_with("mlp") => format!("{name}:{l}"),
                _ => name,
            };
            let mut alg: Algorithm = name.parse()?;
            if let (Algorithm::Discriminant(s), Some(p)) = (&mut alg, self.priors) {
                s.priors = p;
            }
            out.push(alg);
        }
        Ok(out)
    }
}

fn is_profile(s: &str) -> bool {
    matches!(s, "toolkit" | "ghisaconus")
}
