//! One module per subcommand; each takes the shared context and returns
//! the artifacts it registered.

pub mod analyze;
pub mod detect;
pub mod gen;
pub mod mask_eval;
pub mod rerank;
pub mod report;

pub use analyze::cmd_analyze;
pub use detect::cmd_detect;
pub use gen::cmd_gen;
pub use mask_eval::cmd_mask_eval;
pub use rerank::cmd_rerank;
pub use report::cmd_report;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use headscope::error::{Error, Result};
use headscope::niah::{BuilderConfig, DistractorPool, NiahExample, Task};
use headscope::persist::FORMAT_VERSION;

use crate::config::RunConfig;
use crate::manifest::Clock;

/// Everything a command needs: the validated config, the run directory,
/// and the manifest clock.
pub struct CmdContext {
    pub config: RunConfig,
    pub run_dir: PathBuf,
    pub clock: Clock,
}

impl CmdContext {
    pub fn new(config: RunConfig, clock: Clock) -> Self {
        let run_dir = config.output.dir.clone();
        CmdContext {
            config,
            run_dir,
            clock,
        }
    }

    pub fn builder_config(&self) -> BuilderConfig {
        BuilderConfig {
            vision_tokens_per_image: self.config.backend.vision_tokens,
            length_tolerance: 0.10,
        }
    }

    pub fn pool(&self) -> Result<DistractorPool> {
        let p = &self.config.pool;
        if p.synthetic {
            return DistractorPool::synthetic(
                p.seed,
                p.text_units,
                p.image_units,
                self.config.backend.vision_tokens,
            );
        }
        let corpus_path = p
            .text_corpus
            .as_ref()
            .ok_or_else(|| Error::config("non-synthetic pool needs text_corpus"))?;
        let corpus = std::fs::read_to_string(corpus_path)?;
        let mut images = Vec::new();
        if let Some(dir) = &p.image_dir {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            paths.sort();
            for (i, path) in paths.iter().enumerate() {
                let bytes = std::fs::read(path)?;
                let handle = headscope::niah::ImageHandle::from_file(
                    path.to_string_lossy().to_string(),
                    &bytes,
                );
                images.push(headscope::niah::ContextUnit::image(
                    format!("pool-img-{i:05}"),
                    handle,
                    self.config.backend.vision_tokens,
                ));
            }
        }
        DistractorPool::from_corpus(&corpus, images)
    }
}

/// Catalog of generated dataset files, written next to them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub format_version: u32,
    pub entries: Vec<DatasetEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub path: String,
    pub task: Task,
    pub length_label: String,
    pub length_tokens: usize,
    pub image_ratio: f64,
    pub depths: Vec<f64>,
    pub count: usize,
}

impl DatasetIndex {
    pub fn new(entries: Vec<DatasetEntry>) -> Self {
        DatasetIndex {
            format_version: FORMAT_VERSION,
            entries,
        }
    }
}

pub const DATASET_INDEX: &str = "datasets/index.json";

pub fn load_dataset(run_dir: &std::path::Path, entry: &DatasetEntry) -> Result<Vec<NiahExample>> {
    headscope::persist::read_jsonl(&run_dir.join(&entry.path))
}

/// File-name fragment for a (task, length, ratio) cell.
pub fn cell_stem(task: Task, length_label: &str, ratio: f64) -> String {
    format!(
        "{}_{}_r{:02}",
        task.as_str(),
        length_label,
        (ratio * 100.0).round() as u32
    )
}
