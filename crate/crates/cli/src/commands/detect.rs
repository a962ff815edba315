//! `detect`: score every head over each generated dataset, persist the
//! score tables and the top-fraction head sets, and print a sparsity
//! summary per condition.

use headscope::analyzer::sparsity_rho;
use headscope::detector::{run_detection_with_null, select_top, DetectionCondition, HeadSet};
use headscope::error::{Error, Result};
use headscope::persist::{read_json, write_json};

use crate::backend_factory::build_backend;
use crate::manifest::ManifestWriter;

use super::{cell_stem, load_dataset, CmdContext, DatasetIndex, DATASET_INDEX};

pub struct DetectOutcome {
    pub head_set_paths: Vec<String>,
    pub table_paths: Vec<String>,
}

pub fn cmd_detect(ctx: &CmdContext) -> Result<DetectOutcome> {
    let config = &ctx.config;
    let mut writer = ManifestWriter::open(&ctx.run_dir, &config.content_hash()?, ctx.clock)?;
    if !writer.stage_complete("gen") {
        return Err(Error::InvalidDataset(
            "no generated datasets in the run directory; run `gen` first".into(),
        ));
    }
    let index: DatasetIndex = read_json(&ctx.run_dir.join(DATASET_INDEX))?;
    let backend = build_backend(&config.backend)?;

    let mut head_set_paths = Vec::new();
    let mut table_paths = Vec::new();
    for entry in &index.entries {
        let dataset = load_dataset(&ctx.run_dir, entry)?;
        let condition = DetectionCondition {
            task: entry.task,
            context_length: entry.length_tokens,
            depths: entry.depths.clone(),
            n_questions: entry.count,
            model_id: backend.model_id().to_string(),
            image_ratio: Some(entry.image_ratio),
        };
        let table = run_detection_with_null(
            &condition,
            &dataset,
            backend.as_ref(),
            &config.selection.null_question,
        )?;
        let stem = cell_stem(entry.task, &entry.length_label, entry.image_ratio);

        // the persisted document orders per-head records score-descending
        let mut persisted = table.clone();
        persisted.scores.sort_by(|a, b| {
            b.calibrated
                .partial_cmp(&a.calibrated)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.layer.cmp(&b.layer))
                .then(a.head.cmp(&b.head))
        });
        let table_rel = format!("detect/{stem}.table.json");
        let table_path = ctx.run_dir.join(&table_rel);
        write_json(&table_path, &persisted)?;
        writer.register(&table_path)?;
        table_paths.push(table_rel);

        let set: HeadSet = select_top(&table, config.selection.fraction)?;
        let set_rel = format!("detect/{stem}.heads.json");
        let set_path = ctx.run_dir.join(&set_rel);
        write_json(&set_path, &set)?;
        writer.register(&set_path)?;
        head_set_paths.push(set_rel);

        match sparsity_rho(&table, 0.5) {
            Ok(s) => println!(
                "detect: {stem}: top-{} heads selected; rho_0.5 = {:.4} ({} of {} heads)",
                set.len(),
                s.rho,
                s.k_heads,
                s.total_heads
            ),
            Err(Error::NoPositiveMass) => println!(
                "detect: {stem}: top-{} heads selected; no positive calibrated mass",
                set.len()
            ),
            Err(e) => return Err(e),
        }
    }

    writer.complete_stage("detect");
    writer.write()?;
    Ok(DetectOutcome {
        head_set_paths,
        table_paths,
    })
}
