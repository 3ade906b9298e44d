//! Run configuration, read from TOML. Every section has defaults, and every
//! random choice is driven by a seed written in the config.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use shad_core::corpus::GeneratorConfig;
use shad_core::lm::{Arch, TrainConfig};
use shad_core::rft::WeightScheme;

pub const WORKDIR_ENV: &str = "SHAD_WORKDIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_workdir")]
    pub workdir: PathBuf,
    /// Target corpus.
    #[serde(default = "default_generator")]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub pretraining: PretrainingConfig,
    #[serde(default)]
    pub vocab: VocabConfig,
    #[serde(default)]
    pub model: ModelConfig,
    /// Pretraining of the base model θ_o.
    #[serde(default = "default_base_train")]
    pub base: TrainConfig,
    #[serde(default)]
    pub grad_check: GradCheckConfig,
    #[serde(default)]
    pub shad: ShadConfig,
    /// Fine-tuning on the target corpus.
    #[serde(default = "default_train")]
    pub train: TrainConfig,
    #[serde(default)]
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

/// Source corpus for θ_o: prose answers over the same domain, never the
/// target format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainingConfig {
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabConfig {
    pub max_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub context: usize,
    pub init_seed: u64,
}

/// Finite-difference check run on the freshly initialised base model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradCheckConfig {
    pub probes: usize,
    pub seed: u64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShadConfig {
    pub ratio: f64,
    pub shuffle_seed: u64,
    pub margin: f64,
    pub format_threshold: Option<f64>,
    pub threshold_candidates: Vec<f64>,
    pub tune: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    Sft,
    Rft,
    AlphaFt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum LabelKind {
    Shad,
    Regex,
    Truth,
}

impl LabelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelKind::Shad => "shad",
            LabelKind::Regex => "regex",
            LabelKind::Truth => "truth",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub tau: f64,
    pub alpha: f64,
    pub labels: LabelKind,
    /// Trailing share of the target corpus kept out of training.
    pub heldout_fraction: f64,
}

impl SchemeConfig {
    pub fn scheme(&self) -> Result<WeightScheme> {
        let s = match self.kind {
            SchemeKind::Sft => WeightScheme::Sft,
            SchemeKind::Rft => WeightScheme::rft(self.tau)?,
            SchemeKind::AlphaFt => WeightScheme::AlphaFt { alpha: self.alpha },
        };
        s.validate()?;
        Ok(s)
    }

    /// Directory name of a training run, e.g. `rft-tau1-shad`.
    pub fn run_name(&self) -> String {
        let param = match self.kind {
            SchemeKind::Sft => String::new(),
            SchemeKind::Rft => format!("-tau{}", self.tau),
            SchemeKind::AlphaFt => format!("-alpha{}", self.alpha),
        };
        let kind = match self.kind {
            SchemeKind::Sft => "sft",
            SchemeKind::Rft => "rft",
            SchemeKind::AlphaFt => "alpha-ft",
        };
        format!("{kind}{param}-{}", self.labels.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    /// 1/τ grid of the temperature sweep; 0 means equal group weights.
    pub inv_taus: Vec<f64>,
}

fn default_workdir() -> PathBuf {
    PathBuf::from("shad-run")
}

fn default_generator() -> GeneratorConfig {
    GeneratorConfig::with_defaults(10_000, 1)
}

fn default_base_train() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        log_interval: 50,
        ..TrainConfig::new(8, 1)
    }
}

fn default_train() -> TrainConfig {
    TrainConfig {
        log_interval: 25,
        ..TrainConfig::new(2, 1)
    }
}

impl Default for PretrainingConfig {
    fn default() -> Self {
        Self {
            n_samples: 4000,
            seed: 1001,
        }
    }
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self { max_size: 2048 }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        let a = Arch::desk(0);
        Self {
            d_model: a.d_model,
            n_layers: a.n_layers,
            n_heads: a.n_heads,
            context: a.context,
            init_seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn arch(&self, vocab_size: usize) -> Arch {
        Arch {
            vocab_size,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            context: self.context,
        }
    }
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            probes: 16,
            seed: 1,
            epsilon: 1e-5,
        }
    }
}

impl Default for ShadConfig {
    fn default() -> Self {
        Self {
            ratio: 0.01,
            shuffle_seed: 1,
            margin: 0.0,
            format_threshold: Some(shad_core::shad::DEFAULT_FORMAT_THRESHOLD),
            threshold_candidates: vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0],
            tune: TrainConfig {
                batch_size: 4,
                ..TrainConfig::new(3, 1)
            },
        }
    }
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            kind: SchemeKind::Rft,
            tau: 1.0,
            alpha: 0.2,
            labels: LabelKind::Shad,
            heldout_fraction: 0.05,
        }
    }
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            inv_taus: vec![0.0, 0.5, 1.0, 1.5, 2.0],
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            workdir: default_workdir(),
            generator: default_generator(),
            pretraining: PretrainingConfig::default(),
            vocab: VocabConfig::default(),
            model: ModelConfig::default(),
            base: default_base_train(),
            grad_check: GradCheckConfig::default(),
            shad: ShadConfig::default(),
            train: default_train(),
            scheme: SchemeConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("invalid run config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        for (name, t) in [
            ("base", &self.base),
            ("shad.tune", &self.shad.tune),
            ("train", &self.train),
        ] {
            t.validate().with_context(|| format!("[{name}]"))?;
        }
        if self.pretraining.n_samples == 0 {
            bail!("pretraining.n_samples must be >= 1");
        }
        if !(self.shad.ratio > 0.0 && self.shad.ratio <= 1.0) {
            bail!("shad.ratio must lie in (0, 1], got {}", self.shad.ratio);
        }
        if !(0.0..1.0).contains(&self.scheme.heldout_fraction) {
            bail!(
                "scheme.heldout_fraction must lie in [0, 1), got {}",
                self.scheme.heldout_fraction
            );
        }
        self.scheme.scheme()?;
        self.model.arch(16).validate()?;
        Ok(())
    }

    /// The workdir in force: `--workdir` first, then the environment
    /// variable, then the config file.
    pub fn resolve_workdir(&mut self, flag: Option<PathBuf>) {
        if let Some(dir) = flag.or_else(|| std::env::var_os(WORKDIR_ENV).map(PathBuf::from)) {
            self.workdir = dir;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_config_reloads_equal() {
        let mut cfg = RunConfig::default();
        cfg.scheme.tau = 0.5;
        cfg.shad.format_threshold = None;
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_takes_defaults() {
        let cfg = RunConfig::from_toml("workdir = \"w\"\n[generator]\nn_samples = 50\nseed = 9\n")
            .unwrap();
        assert_eq!(cfg.generator.n_samples, 50);
        assert_eq!(cfg.generator.seed, 9);
        assert_eq!(cfg.shad, ShadConfig::default());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::from_toml("wrkdir = \"w\"").is_err());
        assert!(RunConfig::from_toml("[shad]\nratio = 0.0\nshuffle_seed = 1\nmargin = 0.0\nthreshold_candidates = []\n[shad.tune]\nepochs = 1\nseed = 1\n").is_err());
        assert!(RunConfig::from_toml("[scheme]\nkind = \"rft\"\ntau = 0.0\nalpha = 0.1\nlabels = \"shad\"\nheldout_fraction = 0.1\n").is_err());
    }

    #[test]
    fn train_seed_is_required() {
        let err = RunConfig::from_toml("[train]\nepochs = 1\n").unwrap_err();
        assert!(format!("{err:#}").contains("seed"), "{err:#}");
    }

    #[test]
    fn run_names() {
        let mut s = SchemeConfig::default();
        assert_eq!(s.run_name(), "rft-tau1-shad");
        s.kind = SchemeKind::Sft;
        s.labels = LabelKind::Truth;
        assert_eq!(s.run_name(), "sft-truth");
    }
}
