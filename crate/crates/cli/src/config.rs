//! Run configuration: a TOML document with explicit seeds everywhere.
//! Unknown keys are rejected and referenced files must exist at load time.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use headscope::backend::oracle::RetrievalPhase;
use headscope::backend::tokenize::{TemplateId, VisionTokenMode};
use headscope::backend::EligibilityPattern;
use headscope::detector::{DEFAULT_DEPTHS, DEFAULT_QUESTIONS_PER_CONDITION, DEFAULT_SELECT_FRACTION};
use headscope::error::{Error, Result};
use headscope::niah::Task;
use headscope::persist::{sha256_hex, FORMAT_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub backend: BackendConfig,
    #[serde(default)]
    pub task: TaskConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub pool: PoolConfig,
    #[serde(default)]
    pub seeds: SeedConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Oracle,
    Toy,
    Binding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default = "default_model_id")]
    pub model_id: String,
    #[serde(default = "default_layers")]
    pub layers: u32,
    #[serde(default = "default_heads")]
    pub heads: u32,
    #[serde(default)]
    pub kv_heads: Option<u32>,
    #[serde(default = "default_backend_seed")]
    pub seed: u64,
    /// Layers between consecutive global-attention layers; 1 means every
    /// layer attends globally.
    #[serde(default = "default_one")]
    pub global_every: u32,
    #[serde(default = "default_vision_tokens")]
    pub vision_tokens: usize,
    #[serde(default)]
    pub context_window: Option<usize>,
    // oracle knobs
    #[serde(default)]
    pub planted: Vec<(u32, u32)>,
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    #[serde(default = "default_phase")]
    pub retrieval_phase: RetrievalPhase,
    // toy/binding knobs
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_vocab")]
    pub vocab: u32,
    /// Prompt framing: `markered` wraps units in begin/separator tokens,
    /// `plain` concatenates units and question directly.
    #[serde(default = "default_template")]
    pub template: TemplateId,
}

fn default_template() -> TemplateId {
    TemplateId::Markered
}

fn default_model_id() -> String {
    "oracle".to_string()
}
fn default_layers() -> u32 {
    4
}
fn default_heads() -> u32 {
    4
}
fn default_backend_seed() -> u64 {
    1234
}
fn default_one() -> u32 {
    1
}
fn default_vision_tokens() -> usize {
    64
}
fn default_concentration() -> f64 {
    0.95
}
fn default_phase() -> RetrievalPhase {
    RetrievalPhase::Prefill
}
fn default_d_model() -> usize {
    64
}
fn default_vocab() -> u32 {
    512
}

impl BackendConfig {
    pub fn eligibility(&self) -> EligibilityPattern {
        if self.global_every <= 1 {
            EligibilityPattern::AllGlobal
        } else {
            EligibilityPattern::GlobalEvery {
                period: self.global_every,
            }
        }
    }

    pub fn vision_mode(&self) -> VisionTokenMode {
        VisionTokenMode::Fixed {
            tokens: self.vision_tokens,
        }
    }

    pub fn template(&self) -> TemplateId {
        self.template
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    #[serde(default = "default_tasks")]
    pub tasks: Vec<Task>,
    /// Context lengths, written as "8k".."128k" or plain token counts.
    #[serde(default = "default_lengths")]
    pub lengths: Vec<String>,
    #[serde(default = "default_depths")]
    pub depths: Vec<f64>,
    #[serde(default = "default_count")]
    pub count: usize,
    /// Haystack image ratios for generation.
    #[serde(default = "default_ratios")]
    pub ratios: Vec<f64>,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            tasks: default_tasks(),
            lengths: default_lengths(),
            depths: default_depths(),
            count: default_count(),
            ratios: default_ratios(),
            max_new_tokens: default_max_new_tokens(),
        }
    }
}

fn default_tasks() -> Vec<Task> {
    Task::ALL.to_vec()
}
fn default_lengths() -> Vec<String> {
    ["8k", "16k", "32k", "64k", "128k"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}
fn default_depths() -> Vec<f64> {
    DEFAULT_DEPTHS.to_vec()
}
fn default_count() -> usize {
    DEFAULT_QUESTIONS_PER_CONDITION
}
fn default_ratios() -> Vec<f64> {
    vec![0.1]
}
fn default_max_new_tokens() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    #[serde(default = "default_true")]
    pub calibrate: bool,
    #[serde(default = "default_null_question")]
    pub null_question: String,
}

fn default_fraction() -> f64 {
    DEFAULT_SELECT_FRACTION
}
fn default_true() -> bool {
    true
}
fn default_null_question() -> String {
    headscope::detector::NULL_QUESTION.to_string()
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            fraction: default_fraction(),
            calibrate: true,
            null_question: default_null_question(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    /// Generate a synthetic pool; otherwise corpus paths are required.
    #[serde(default = "default_true")]
    pub synthetic: bool,
    #[serde(default = "default_pool_seed")]
    pub seed: u64,
    #[serde(default = "default_text_units")]
    pub text_units: usize,
    #[serde(default = "default_image_units")]
    pub image_units: usize,
    #[serde(default)]
    pub text_corpus: Option<PathBuf>,
    #[serde(default)]
    pub image_dir: Option<PathBuf>,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            synthetic: true,
            seed: default_pool_seed(),
            text_units: default_text_units(),
            image_units: default_image_units(),
            text_corpus: None,
            image_dir: None,
        }
    }
}

fn default_pool_seed() -> u64 {
    7
}
fn default_text_units() -> usize {
    320
}
fn default_image_units() -> usize {
    160
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    #[serde(default = "default_base_seed")]
    pub base: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig {
            base: default_base_seed(),
        }
    }
}

fn default_base_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

/// Parses "8k"/"128K" suffixes or plain token counts; the k suffix means
/// multiples of 1024 tokens.
pub fn parse_length(s: &str) -> Result<usize> {
    let trimmed = s.trim();
    if let Some(stripped) = trimmed
        .strip_suffix('k')
        .or_else(|| trimmed.strip_suffix('K'))
    {
        let n: usize = stripped
            .parse()
            .map_err(|_| Error::config(format!("bad context length: {s}")))?;
        Ok(n * 1024)
    } else {
        trimmed
            .parse()
            .map_err(|_| Error::config(format!("bad context length: {s}")))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::config(format!("config parse: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("config serialize: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::config(format!(
                "config format_version {} unsupported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.task.tasks.is_empty() || self.task.lengths.is_empty() {
            return Err(Error::config("task grid is empty"));
        }
        for l in &self.task.lengths {
            parse_length(l)?;
        }
        for d in &self.task.depths {
            if !(0.0..=1.0).contains(d) {
                return Err(Error::config(format!("depth {d} outside [0, 1]")));
            }
        }
        for r in &self.task.ratios {
            if !(0.0..=1.0).contains(r) {
                return Err(Error::config(format!("image ratio {r} outside [0, 1]")));
            }
        }
        if !(self.selection.fraction > 0.0 && self.selection.fraction <= 1.0) {
            return Err(Error::config("selection fraction outside (0, 1]"));
        }
        if !self.pool.synthetic {
            let corpus = self.pool.text_corpus.as_ref().ok_or_else(|| {
                Error::config("non-synthetic pool needs text_corpus")
            })?;
            if !corpus.exists() {
                return Err(Error::config(format!(
                    "text_corpus {} does not exist",
                    corpus.display()
                )));
            }
            if let Some(dir) = &self.pool.image_dir {
                if !dir.exists() {
                    return Err(Error::config(format!(
                        "image_dir {} does not exist",
                        dir.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Hash of the canonical serialized form; stamped into manifests.
    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_toml()?.as_bytes()))
    }

    /// A small self-contained default: oracle backend, synthetic pool.
    pub fn default_with_output(dir: PathBuf) -> Self {
        RunConfig {
            format_version: FORMAT_VERSION,
            backend: BackendConfig {
                kind: BackendKind::Oracle,
                model_id: default_model_id(),
                layers: default_layers(),
                heads: default_heads(),
                kv_heads: None,
                seed: default_backend_seed(),
                global_every: 1,
                vision_tokens: default_vision_tokens(),
                context_window: None,
                planted: vec![(2, 1)],
                concentration: default_concentration(),
                retrieval_phase: RetrievalPhase::Prefill,
                d_model: default_d_model(),
                vocab: default_vocab(),
                template: default_template(),
            },
            task: TaskConfig {
                tasks: default_tasks(),
                lengths: default_lengths(),
                depths: default_depths(),
                count: default_count(),
                ratios: default_ratios(),
                max_new_tokens: default_max_new_tokens(),
            },
            selection: SelectionConfig::default(),
            pool: PoolConfig {
                synthetic: true,
                seed: default_pool_seed(),
                text_units: default_text_units(),
                image_units: default_image_units(),
                text_corpus: None,
                image_dir: None,
            },
            seeds: SeedConfig {
                base: default_base_seed(),
            },
            output: OutputConfig { dir },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let config = RunConfig::default_with_output(PathBuf::from("runs/x"));
        let text = config.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(config, back);
        // byte-identical re-serialization
        assert_eq!(text, back.to_toml().unwrap());
    }

    #[test]
    fn unknown_keys_rejected() {
        let config = RunConfig::default_with_output(PathBuf::from("runs/x"));
        let mut text = config.to_toml().unwrap();
        text.push_str("\nunexpected_key = 1\n");
        assert!(toml::from_str::<RunConfig>(&text).is_err());
    }

    #[test]
    fn length_parsing() {
        assert_eq!(parse_length("8k").unwrap(), 8192);
        assert_eq!(parse_length("128K").unwrap(), 131072);
        assert_eq!(parse_length("3000").unwrap(), 3000);
        assert!(parse_length("8q").is_err());
    }

    #[test]
    fn missing_corpus_fails_validation() {
        let mut config = RunConfig::default_with_output(PathBuf::from("runs/x"));
        config.pool.synthetic = false;
        config.pool.text_corpus = Some(PathBuf::from("/definitely/not/here.txt"));
        assert!(config.validate().is_err());
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = RunConfig::default_with_output(PathBuf::from("runs/x"));
        let mut b = a.clone();
        assert_eq!(a.content_hash().unwrap(), b.content_hash().unwrap());
        b.seeds.base = 43;
        assert_ne!(a.content_hash().unwrap(), b.content_hash().unwrap());
    }
}
