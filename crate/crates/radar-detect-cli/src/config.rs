use std::path::{Path, PathBuf};

use radar_detect::error::{Error, Result};
use serde::Deserialize;

/// One job file can describe several stages; each subcommand reads its
/// own section and ignores the rest, so a whole experiment fits in a
/// single file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Config {
    /// Fallback seed when the command line gives none.
    pub seed: Option<u64>,
    pub generate: Option<GenerateJob>,
    pub tune: Option<TuneJob>,
    pub features: Option<FeaturesJob>,
    pub select: Option<SelectJob>,
    pub train: Option<TrainJob>,
    pub eval_cluster: Option<EvalClusterJob>,
    pub eval_class: Option<EvalClassJob>,
    pub eval_pipeline: Option<EvalPipelineJob>,
    pub report: Option<ReportJob>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        match ext {
            "toml" => toml::from_str(&text)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display()))),
            "json" => serde_json::from_str(&text)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display()))),
            other => Err(Error::InvalidConfig(format!(
                "job file must end in .toml or .json, got {other:?}"
            ))),
        }
    }
}

/// `cfg.section.as_ref()` with a readable error for the missing case.
pub fn section<'a, T>(field: &'a Option<T>, name: &str) -> Result<&'a T> {
    field
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig(format!("job file has no [{name}] section")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct GenerateJob {
    pub out_dir: PathBuf,
    /// Sensor profiles to render, by preset name.
    #[serde(default = "default_profiles")]
    pub profiles: Vec<String>,
    /// Scene scripts (JSON list). Defaults to the built-in benchmark
    /// suite derived from the seed.
    pub scripts: Option<PathBuf>,
}

fn default_profiles() -> Vec<String> {
    vec!["A".into(), "B".into()]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TuneJob {
    pub dataset: PathBuf,
    #[serde(default = "default_budget")]
    pub budget: usize,
    pub out: PathBuf,
    /// JSONL evaluation log; reruns resume from it.
    pub history: Option<PathBuf>,
}

fn default_budget() -> usize {
    60
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FeaturesJob {
    pub dataset: PathBuf,
    /// Tuning result; its clustering config shapes the background
    /// samples.
    pub tuned: PathBuf,
    pub out: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SelectJob {
    pub features: PathBuf,
    pub out: PathBuf,
    /// Width of the throwaway nets that score candidate subsets.
    #[serde(default = "default_probe_hidden")]
    pub hidden: usize,
    #[serde(default = "default_probe_epochs")]
    pub epochs: usize,
    #[serde(default = "default_probe_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_probe_batch")]
    pub batch_size: usize,
}

fn default_probe_hidden() -> usize {
    12
}

fn default_probe_epochs() -> usize {
    12
}

fn default_probe_rate() -> f64 {
    3e-3
}

fn default_probe_batch() -> usize {
    32
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainJob {
    pub dataset: PathBuf,
    pub tuned: PathBuf,
    /// Per-net feature subsets; the full catalog when absent.
    pub subsets: Option<PathBuf>,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub out: PathBuf,
}

fn default_hidden() -> usize {
    radar_detect::classifier::DEFAULT_HIDDEN
}

fn default_epochs() -> usize {
    60
}

fn default_rate() -> f64 {
    1e-3
}

fn default_batch() -> usize {
    64
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvalClusterJob {
    pub dataset: PathBuf,
    pub tuned: PathBuf,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvalClassJob {
    pub dataset: PathBuf,
    pub tuned: PathBuf,
    pub model: PathBuf,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvalPipelineJob {
    pub dataset: PathBuf,
    pub tuned: PathBuf,
    pub model: PathBuf,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ReportJob {
    pub rows: Vec<ReportRow>,
    /// Two subset files to compare by Jaccard overlap, net by net.
    pub subsets: Option<SubsetPair>,
    pub out: Option<PathBuf>,
}

/// One table line: a label plus whichever saved reports exist for it.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ReportRow {
    pub label: String,
    pub cluster: Option<PathBuf>,
    pub class: Option<PathBuf>,
    pub pipeline: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SubsetPair {
    pub a: PathBuf,
    pub b: PathBuf,
}
