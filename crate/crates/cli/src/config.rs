use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use metric_chain::synthetic::{GeneratorConfig, SyntheticMetric};
use metric_chain::tokenizer::DEFAULT_BINS;
use metric_chain::{ModelConfig, Strategy};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub tokenizer: TokenizerConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub decode: DecodeConfig,
}

/// Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub registry: PathBuf,
    pub data_dir: PathBuf,
    pub codec_dir: PathBuf,
    pub model: PathBuf,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub n: usize,
    #[serde(default = "default_ratios")]
    pub ratios: [f64; 3],
    pub latent_dim: usize,
    pub feature_dim: usize,
    #[serde(default = "one")]
    pub loading_scale: f64,
    #[serde(default)]
    pub feature_noise: f64,
    pub metrics: Vec<SyntheticMetric>,
}

fn default_ratios() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

fn one() -> f64 {
    1.0
}

impl SimulateConfig {
    pub fn generator(&self, seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            latent_dim: self.latent_dim,
            feature_dim: self.feature_dim,
            loading_scale: self.loading_scale,
            feature_noise: self.feature_noise,
            seed,
            metrics: self.metrics.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub strategy: Strategy,
    pub bins: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Percentile,
            bins: DEFAULT_BINS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Pool {
    #[default]
    Best,
    All,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub beam: usize,
    /// Step 2 candidate width; defaults to `beam`.
    pub candidates: Option<usize>,
    pub pool: Pool,
    pub score_metadata: bool,
    /// `order-mr`, `order-c2f` or `file:PATH`; dynamic order when absent.
    pub order_preset: Option<String>,
    /// Metric names to predict; every registered metric when empty.
    pub query: Vec<String>,
    pub teacher_forced: bool,
    /// Dataset split to decode and evaluate.
    pub split: String,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam: 2,
            candidates: None,
            pool: Pool::Best,
            score_metadata: true,
            order_preset: None,
            query: Vec::new(),
            teacher_forced: false,
            split: "test".into(),
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub beam: Option<usize>,
    pub tokens: Option<usize>,
    pub strategy: Option<Strategy>,
    pub order_preset: Option<String>,
    pub query: Option<Vec<String>>,
    pub teacher_forced: bool,
}

/// A loaded config plus what is needed to reproduce it.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub path: PathBuf,
    pub base_dir: PathBuf,
    /// SHA-256 of the config file bytes.
    pub file_hash: String,
}

impl Loaded {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let text = std::str::from_utf8(&bytes).with_context(|| format!("{} is not UTF-8", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(text).with_context(|| format!("parsing {}", path.display()))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for p in [
            &mut config.paths.registry,
            &mut config.paths.data_dir,
            &mut config.paths.codec_dir,
            &mut config.paths.model,
            &mut config.paths.output_dir,
        ] {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        overrides.apply(&mut config);
        config.model.seed = config.seed;
        config.check()?;
        Ok(Self {
            config,
            path: path.to_path_buf(),
            base_dir,
            file_hash: crate::manifest::sha256_hex(&bytes),
        })
    }
}

impl Overrides {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(b) = self.beam {
            c.decode.beam = b;
        }
        if let Some(t) = self.tokens {
            c.tokenizer.bins = t;
        }
        if let Some(s) = self.strategy {
            c.tokenizer.strategy = s;
        }
        if let Some(p) = &self.order_preset {
            c.decode.order_preset = Some(p.clone());
        }
        if let Some(q) = &self.query {
            c.decode.query = q.clone();
        }
        if self.teacher_forced {
            c.decode.teacher_forced = true;
        }
    }
}

impl RunConfig {
    fn check(&self) -> Result<()> {
        if self.decode.beam == 0 {
            bail!("decode.beam must be at least 1");
        }
        if self.decode.candidates == Some(0) {
            bail!("decode.candidates must be at least 1");
        }
        if self.tokenizer.bins < 2 {
            bail!("tokenizer.bins must be at least 2");
        }
        if !["train", "dev", "test"].contains(&self.decode.split.as_str()) {
            bail!("decode.split must be train, dev or test");
        }
        Ok(())
    }

    pub fn split_path(&self, split: &str) -> PathBuf {
        self.paths.data_dir.join(format!("{split}.jsonl"))
    }
}
