//! `gen`: synthesize detection datasets for every (task, length, ratio)
//! cell of the configured grid.

use headscope::error::Result;
use headscope::niah::generate_detection_dataset;
use headscope::persist::write_jsonl;
use headscope::rng::SeededRng;

use crate::config::parse_length;
use crate::manifest::ManifestWriter;

use super::{cell_stem, CmdContext, DatasetEntry, DatasetIndex, DATASET_INDEX};

pub fn cmd_gen(ctx: &CmdContext) -> Result<DatasetIndex> {
    let config = &ctx.config;
    let pool = ctx.pool()?;
    let builder_cfg = ctx.builder_config();
    let mut writer = ManifestWriter::open(&ctx.run_dir, &config.content_hash()?, ctx.clock)?;

    let mut entries = Vec::new();
    for &task in &config.task.tasks {
        for length_label in &config.task.lengths {
            let length_tokens = parse_length(length_label)?;
            // the seed is shared across ratios: a ratio sweep preserves
            // the answer-bearing needles and varies only the haystack
            let seed = SeededRng::derive(
                config.seeds.base,
                &format!("gen-{}-{length_label}", task.as_str()),
            )
            .next_u64();
            for &ratio in &config.task.ratios {
                let stem = cell_stem(task, length_label, ratio);
                let dataset = generate_detection_dataset(
                    task,
                    length_tokens,
                    &config.task.depths,
                    config.task.count,
                    ratio,
                    &pool,
                    &builder_cfg,
                    seed,
                )?;
                let rel = format!("datasets/{stem}.jsonl");
                let path = ctx.run_dir.join(&rel);
                write_jsonl(&path, &dataset)?;
                writer.register(&path)?;
                println!(
                    "gen: {} ({} examples, {} tokens target)",
                    rel,
                    dataset.len(),
                    length_tokens
                );
                entries.push(DatasetEntry {
                    path: rel,
                    task,
                    length_label: length_label.clone(),
                    length_tokens,
                    image_ratio: ratio,
                    depths: config.task.depths.clone(),
                    count: config.task.count,
                });
            }
        }
    }

    let index = DatasetIndex::new(entries);
    let index_path = ctx.run_dir.join(DATASET_INDEX);
    headscope::persist::write_json(&index_path, &index)?;
    writer.register(&index_path)?;
    writer.complete_stage("gen");
    writer.write()?;
    Ok(index)
}
