//! Settings resolution: command-line flags override environment variables,
//! which override a `key = value` config file, which overrides defaults.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, ValueEnum};
use phrasemine::annotator::{AnnotatorConfig, Metric, DEFAULT_PERCENTILE};
use phrasemine::bridge::DEFAULT_MAX_PHRASES;
use phrasemine::encoder::{CachedBackend, EncoderBackend, ReferenceBackend, RemoteBackend, RemoteConfig, DEFAULT_DIM};
use phrasemine::FilterConfig;
use serde::Serialize;

use crate::error::CliError;

pub const ENV_BACKEND_URL: &str = "PHRASEMINE_BACKEND_URL";
pub const ENV_SEED: &str = "PHRASEMINE_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Reference,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MetricArg {
    Euclidean,
    Cosine,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Euclidean => Metric::Euclidean,
            MetricArg::Cosine => Metric::CosineDistance,
        }
    }
}

/// Config file contents, keys normalized to snake_case.
#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    table: toml::Table,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let raw: toml::Table = text
            .parse()
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        let table = raw.into_iter().map(|(k, v)| (k.replace('-', "_"), v)).collect();
        Ok(Self { table })
    }

    fn value(&self, key: &str) -> Option<&toml::Value> {
        self.table.get(key)
    }

    pub fn string(&self, key: &str) -> Result<Option<String>, CliError> {
        match self.value(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(CliError::Usage(format!("config key {key}: expected string, got {other}"))),
        }
    }

    pub fn path(&self, key: &str) -> Result<Option<PathBuf>, CliError> {
        Ok(self.string(key)?.map(PathBuf::from))
    }

    pub fn integer(&self, key: &str) -> Result<Option<i64>, CliError> {
        match self.value(key) {
            None => Ok(None),
            Some(toml::Value::Integer(i)) => Ok(Some(*i)),
            Some(other) => Err(CliError::Usage(format!("config key {key}: expected integer, got {other}"))),
        }
    }

    pub fn unsigned(&self, key: &str) -> Result<Option<u64>, CliError> {
        self.integer(key)?
            .map(|i| u64::try_from(i).map_err(|_| CliError::Usage(format!("config key {key}: must be non-negative"))))
            .transpose()
    }

    pub fn float(&self, key: &str) -> Result<Option<f64>, CliError> {
        match self.value(key) {
            None => Ok(None),
            Some(toml::Value::Float(f)) => Ok(Some(*f)),
            Some(toml::Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(other) => Err(CliError::Usage(format!("config key {key}: expected number, got {other}"))),
        }
    }

    pub fn boolean(&self, key: &str) -> Result<Option<bool>, CliError> {
        match self.value(key) {
            None => Ok(None),
            Some(toml::Value::Boolean(b)) => Ok(Some(*b)),
            Some(other) => Err(CliError::Usage(format!("config key {key}: expected boolean, got {other}"))),
        }
    }

    pub fn choice<T: ValueEnum>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.string(key)?
            .map(|s| T::from_str(&s, true).map_err(|e| CliError::Usage(format!("config key {key}: {e}"))))
            .transpose()
    }
}

/// Flags selecting and configuring the encoder backend.
#[derive(Debug, Clone, Default, Args)]
pub struct BackendArgs {
    /// Encoder backend
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Encoder service base URL (remote backend)
    #[arg(long, env = ENV_BACKEND_URL)]
    pub url: Option<String>,
    /// Global seed of the reference backend
    #[arg(long, env = ENV_SEED)]
    pub seed: Option<u64>,
    /// Embedding dimension of the reference backend
    #[arg(long)]
    pub dim: Option<usize>,
    /// Encoder cache entries (0 disables)
    #[arg(long)]
    pub cache_size: Option<usize>,
    /// Remote request timeout in seconds
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    /// Remote retries after transport failures
    #[arg(long)]
    pub retries: Option<u32>,
    /// Hidden layer requested from the remote encoder
    #[arg(long, allow_hyphen_values = true)]
    pub layer: Option<i64>,
    /// Requests per remote batch call
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Concurrent remote batch calls
    #[arg(long)]
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackendSettings {
    pub kind: BackendKind,
    pub url: Option<String>,
    pub seed: u64,
    pub dim: usize,
    pub cache_size: usize,
    pub timeout_secs: u64,
    pub retries: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer: Option<i64>,
    pub batch_size: usize,
    pub max_in_flight: usize,
}

impl BackendArgs {
    pub fn resolve(&self, file: &ConfigFile) -> Result<BackendSettings, CliError> {
        let remote_defaults = RemoteConfig::default();
        let settings = BackendSettings {
            kind: or(self.backend, file.choice("backend")?).unwrap_or(BackendKind::Reference),
            url: or(self.url.clone(), file.string("url")?),
            seed: or(self.seed, file.unsigned("seed")?).unwrap_or(0),
            dim: or(self.dim, file.unsigned("dim")?.map(|v| v as usize)).unwrap_or(DEFAULT_DIM),
            cache_size: or(self.cache_size, file.unsigned("cache_size")?.map(|v| v as usize)).unwrap_or(100_000),
            timeout_secs: or(self.timeout_secs, file.unsigned("timeout_secs")?)
                .unwrap_or(remote_defaults.timeout.as_secs()),
            retries: or(self.retries, file.unsigned("retries")?.map(|v| v as u32)).unwrap_or(remote_defaults.retries),
            layer: or(self.layer, file.integer("layer")?),
            batch_size: or(self.batch_size, file.unsigned("batch_size")?.map(|v| v as usize))
                .unwrap_or(remote_defaults.batch_size),
            max_in_flight: or(self.max_in_flight, file.unsigned("max_in_flight")?.map(|v| v as usize))
                .unwrap_or(remote_defaults.max_in_flight),
        };
        if settings.dim == 0 {
            return Err(CliError::Usage("dim must be positive".into()));
        }
        if settings.kind == BackendKind::Remote && settings.url.is_none() {
            return Err(CliError::Usage(format!("remote backend needs --url or {ENV_BACKEND_URL}")));
        }
        Ok(settings)
    }
}

impl BackendSettings {
    pub fn build(&self) -> Result<CachedBackend<Box<dyn EncoderBackend>>, CliError> {
        let inner: Box<dyn EncoderBackend> = match self.kind {
            BackendKind::Reference => Box::new(ReferenceBackend::with_dim(self.seed, self.dim)),
            BackendKind::Remote => {
                let config = RemoteConfig {
                    url: self.url.clone().unwrap_or_default(),
                    timeout: Duration::from_secs(self.timeout_secs),
                    retries: self.retries,
                    layer: self.layer,
                    batch_size: self.batch_size,
                    max_in_flight: self.max_in_flight,
                };
                Box::new(RemoteBackend::connect(config).map_err(|e| CliError::Backend(e.to_string()))?)
            }
        };
        Ok(CachedBackend::new(inner, self.cache_size))
    }
}

/// Flags for segmentation and filtering.
#[derive(Debug, Clone, Default, Args)]
pub struct MiningArgs {
    /// Percentile of adjacent-word impacts used as the join threshold
    #[arg(long = "q")]
    pub percentile: Option<f64>,
    /// Distance between perturbed representations
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    /// Stopword list, one word per line (defaults to the bundled list)
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// Skip the noun-phrase POS pattern check
    #[arg(long)]
    pub no_pos_filter: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MiningSettings {
    pub percentile: f64,
    pub metric: MetricArg,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stopwords: Option<PathBuf>,
    pub pos_filter: bool,
}

impl MiningArgs {
    pub fn resolve(&self, file: &ConfigFile) -> Result<MiningSettings, CliError> {
        let pos_filter = if self.no_pos_filter {
            false
        } else {
            file.boolean("pos_filter")?.unwrap_or(true)
        };
        let settings = MiningSettings {
            percentile: or(self.percentile, file.float("q")?).unwrap_or(DEFAULT_PERCENTILE),
            metric: or(self.metric, file.choice("metric")?).unwrap_or(MetricArg::Euclidean),
            stopwords: or(self.stopwords.clone(), file.path("stopwords")?),
            pos_filter,
        };
        if !(settings.percentile > 0.0 && settings.percentile <= 100.0) {
            return Err(CliError::Usage(format!("q must be in (0, 100], got {}", settings.percentile)));
        }
        if let Some(p) = &settings.stopwords {
            require_file(p)?;
        }
        Ok(settings)
    }
}

impl MiningSettings {
    pub fn annotator(&self) -> AnnotatorConfig {
        AnnotatorConfig {
            percentile: self.percentile,
            metric: self.metric.into(),
        }
    }
}

/// Builds the filter configuration, warning when POS filtering is off.
pub fn filter_config(stopwords: Option<&Path>, pos_filter: bool) -> Result<FilterConfig, CliError> {
    let mut config = match stopwords {
        Some(p) => FilterConfig::load(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
        None => FilterConfig::default(),
    };
    if config.stopwords().is_empty() {
        return Err(CliError::Usage("stopword list is empty".into()));
    }
    if !pos_filter {
        log::warn!("POS pattern filtering disabled; candidates are not checked for noun-phrase shape");
        config = config.without_pos_filter();
    }
    Ok(config)
}

pub fn threads(cli: Option<usize>, file: &ConfigFile) -> Result<usize, CliError> {
    Ok(or(cli, file.unsigned("threads")?.map(|v| v as usize)).unwrap_or(0))
}

pub fn max_phrases(cli: Option<usize>, file: &ConfigFile) -> Result<usize, CliError> {
    let m = or(cli, file.unsigned("max_phrases")?.map(|v| v as usize)).unwrap_or(DEFAULT_MAX_PHRASES);
    if m == 0 {
        return Err(CliError::Usage("max_phrases must be positive".into()));
    }
    Ok(m)
}

fn or<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

/// Picks a path from the flag or the config file and requires it.
pub fn required_path(flag: &Option<PathBuf>, file: &ConfigFile, key: &str) -> Result<PathBuf, CliError> {
    or(flag.clone(), file.path(key)?).ok_or_else(|| CliError::Usage(format!("missing --{}", key.replace('_', "-"))))
}

pub fn optional_path(flag: &Option<PathBuf>, file: &ConfigFile, key: &str) -> Result<Option<PathBuf>, CliError> {
    Ok(or(flag.clone(), file.path(key)?))
}

pub fn require_file(path: &Path) -> Result<(), CliError> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("input file {} does not exist", path.display())));
    }
    Ok(())
}

/// Output paths need an existing parent directory.
pub fn require_output(path: &Path) -> Result<(), CliError> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(CliError::Usage(format!("output directory {} does not exist", parent.display())));
    }
    Ok(())
}
