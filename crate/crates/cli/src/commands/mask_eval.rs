//! `mask-eval`: masked retrieval accuracy over the generated datasets —
//! identity baseline, the supplied head set under one or both scopes, and
//! seeded random-head controls of the same size.

use std::path::Path;

use serde::{Deserialize, Serialize};

use headscope::backend::{MaskScope, MaskSpec};
use headscope::detector::HeadSet;
use headscope::error::{Error, Result};
use headscope::masker::{run_masked_eval, sample_random_heads, EvalGrid, NiahAnswerChecker};
use headscope::niah::Task;
use headscope::persist::{read_json, write_json, FORMAT_VERSION};
use headscope::rng::SeededRng;

use crate::backend_factory::build_backend;
use crate::manifest::ManifestWriter;

use super::{load_dataset, CmdContext, DatasetIndex, DATASET_INDEX};

/// Which scopes to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeChoice {
    Both,
    PrefillAndDecode,
    DecodeOnly,
}

impl ScopeChoice {
    fn scopes(self) -> Vec<MaskScope> {
        match self {
            ScopeChoice::Both => vec![MaskScope::PrefillAndDecode, MaskScope::DecodeOnly],
            ScopeChoice::PrefillAndDecode => vec![MaskScope::PrefillAndDecode],
            ScopeChoice::DecodeOnly => vec![MaskScope::DecodeOnly],
        }
    }
}

impl std::str::FromStr for ScopeChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(ScopeChoice::Both),
            "prefill_and_decode" => Ok(ScopeChoice::PrefillAndDecode),
            "decode_only" => Ok(ScopeChoice::DecodeOnly),
            other => Err(Error::config(format!("unknown scope: {other}"))),
        }
    }
}

/// Random-head control draws per evaluation.
pub const RANDOM_CONTROL_DRAWS: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskEvalReport {
    pub format_version: u32,
    pub grids: Vec<EvalGrid>,
}

pub fn cmd_mask_eval(
    ctx: &CmdContext,
    heads_file: &Path,
    scope_choice: ScopeChoice,
    random_control: bool,
    control_seed: u64,
) -> Result<MaskEvalReport> {
    let config = &ctx.config;
    let mut writer = ManifestWriter::open(&ctx.run_dir, &config.content_hash()?, ctx.clock)?;
    if !writer.stage_complete("gen") {
        return Err(Error::InvalidDataset(
            "no generated datasets in the run directory; run `gen` first".into(),
        ));
    }
    let index: DatasetIndex = read_json(&ctx.run_dir.join(DATASET_INDEX))?;
    let head_set: HeadSet = read_json(heads_file)?;
    headscope::persist::check_format_version(head_set.format_version, "head set")?;
    let backend = build_backend(&config.backend)?;
    let checker = NiahAnswerChecker;
    let max_new = config.task.max_new_tokens;

    // group dataset entries per task so grids hold (length x depth) cells
    let mut grids: Vec<EvalGrid> = Vec::new();
    let tasks: Vec<Task> = config.task.tasks.clone();
    for task in tasks {
        let mut dataset = Vec::new();
        for entry in index.entries.iter().filter(|e| e.task == task) {
            dataset.extend(load_dataset(&ctx.run_dir, entry)?);
        }
        if dataset.is_empty() {
            continue;
        }

        // identity baseline once per task
        let identity = MaskSpec::identity(MaskScope::PrefillAndDecode);
        grids.push(run_masked_eval(
            &dataset,
            backend.as_ref(),
            &identity,
            &checker,
            max_new,
        )?);

        for scope in scope_choice.scopes() {
            let mask = MaskSpec::new(
                head_set.addrs(),
                scope,
                format!("detected:{}", head_set.source),
            )?;
            grids.push(run_masked_eval(
                &dataset,
                backend.as_ref(),
                &mask,
                &checker,
                max_new,
            )?);

            if random_control {
                for draw in 0..RANDOM_CONTROL_DRAWS {
                    let seed =
                        SeededRng::derive(control_seed, &format!("control-{draw}")).next_u64();
                    let control = sample_random_heads(head_set.len(), backend.as_ref(), seed)?;
                    let mask = MaskSpec::new(control.addrs(), scope, control.source.clone())?;
                    grids.push(run_masked_eval(
                        &dataset,
                        backend.as_ref(),
                        &mask,
                        &checker,
                        max_new,
                    )?);
                }
            }
        }
    }

    let report = MaskEvalReport {
        format_version: FORMAT_VERSION,
        grids,
    };

    let json_path = ctx.run_dir.join("mask_eval/grids.json");
    write_json(&json_path, &report)?;
    writer.register(&json_path)?;

    // heatmap-ready tabular form: one row per (grid, length, depth)
    let mut csv = String::from("task,mask_label,scope,context_length,depth,accuracy,n,failed\n");
    for grid in &report.grids {
        let scope = match grid.scope {
            Some(MaskScope::PrefillAndDecode) => "prefill_and_decode",
            Some(MaskScope::DecodeOnly) => "decode_only",
            None => "none",
        };
        for cell in &grid.cells {
            csv.push_str(&format!(
                "{},{},{},{},{},{:.6},{},{}\n",
                grid.task.as_str(),
                grid.mask_label.replace(',', ";"),
                scope,
                cell.context_length,
                cell.depth_fraction,
                cell.accuracy(),
                cell.n,
                cell.failed
            ));
        }
    }
    let csv_path = ctx.run_dir.join("mask_eval/grids.csv");
    super::analyze::write_text(&csv_path, &csv)?;
    writer.register(&csv_path)?;

    writer.complete_stage("mask_eval");
    writer.write()?;
    for grid in &report.grids {
        let failed: usize = grid.cells.iter().map(|c| c.failed).sum();
        if failed > 0 {
            println!(
                "mask-eval: {} / {}: {failed} generation failures excluded from n",
                grid.task.as_str(),
                grid.mask_label
            );
        }
    }
    println!("mask-eval: {} grids emitted", report.grids.len());
    Ok(report)
}
