//! `analyze`: head-set structure over the detect stage's outputs —
//! sparsity per condition, overlap across lengths / tasks / haystack
//! ratios, and layer distributions between the extreme lengths.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use headscope::analyzer::{head_set_overlap, layer_distribution, sparsity_rho, LayerHistogram};
use headscope::detector::{HeadScoreTable, HeadSet};
use headscope::error::{Error, Result};
use headscope::niah::Task;
use headscope::persist::{read_json, write_json, FORMAT_VERSION};

use crate::manifest::ManifestWriter;

use super::{cell_stem, CmdContext, DatasetIndex, DATASET_INDEX};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparsityRow {
    pub task: Task,
    pub length_label: String,
    pub image_ratio: f64,
    pub rho: f64,
    pub k_heads: usize,
    pub total_heads: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlapRow {
    pub task: Task,
    pub reference: String,
    pub other: String,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub format_version: u32,
    pub sparsity: Vec<SparsityRow>,
    /// Overlap of each length's set with the shortest length's set.
    pub length_overlap: Vec<OverlapRow>,
    /// Overlap between task pairs at each length.
    pub task_overlap: Vec<OverlapRow>,
    /// Overlap of each ratio's set with the smallest ratio's set.
    pub ratio_overlap: Vec<OverlapRow>,
    /// Shared / only-shortest / only-longest layer histograms per task.
    pub layer_hists: Vec<(String, Vec<LayerHistogram>)>,
}

fn tsv_escape(s: &str) -> String {
    s.replace(['\t', '\n'], " ")
}

pub fn cmd_analyze(ctx: &CmdContext) -> Result<AnalysisReport> {
    let config = &ctx.config;
    let mut writer = ManifestWriter::open(&ctx.run_dir, &config.content_hash()?, ctx.clock)?;
    if !writer.stage_complete("detect") {
        return Err(Error::InvalidDataset(
            "no detection outputs in the run directory; run `detect` first".into(),
        ));
    }
    let index: DatasetIndex = read_json(&ctx.run_dir.join(DATASET_INDEX))?;

    // load per-cell tables and head sets
    let mut tables: BTreeMap<String, HeadScoreTable> = BTreeMap::new();
    let mut sets: BTreeMap<String, HeadSet> = BTreeMap::new();
    for entry in &index.entries {
        let stem = cell_stem(entry.task, &entry.length_label, entry.image_ratio);
        tables.insert(
            stem.clone(),
            read_json(&ctx.run_dir.join(format!("detect/{stem}.table.json")))?,
        );
        sets.insert(
            stem.clone(),
            read_json(&ctx.run_dir.join(format!("detect/{stem}.heads.json")))?,
        );
    }

    let mut sparsity = Vec::new();
    for entry in &index.entries {
        let stem = cell_stem(entry.task, &entry.length_label, entry.image_ratio);
        match sparsity_rho(&tables[&stem], 0.5) {
            Ok(s) => sparsity.push(SparsityRow {
                task: entry.task,
                length_label: entry.length_label.clone(),
                image_ratio: entry.image_ratio,
                rho: s.rho,
                k_heads: s.k_heads,
                total_heads: s.total_heads,
            }),
            Err(Error::NoPositiveMass) => {}
            Err(e) => return Err(e),
        }
    }

    // cross-length overlap: reference = first configured length
    let mut length_overlap = Vec::new();
    let reference_length = config.task.lengths.first().cloned().unwrap_or_default();
    for &task in &config.task.tasks {
        for &ratio in &config.task.ratios {
            let ref_stem = cell_stem(task, &reference_length, ratio);
            let Some(ref_set) = sets.get(&ref_stem) else {
                continue;
            };
            for length in &config.task.lengths {
                let stem = cell_stem(task, length, ratio);
                if let Some(set) = sets.get(&stem) {
                    let o = head_set_overlap(ref_set, set)?;
                    length_overlap.push(OverlapRow {
                        task,
                        reference: reference_length.clone(),
                        other: length.clone(),
                        ratio: o.ratio,
                    });
                }
            }
        }
    }

    // task-pair overlap at each length, against text retrieval
    let mut task_overlap = Vec::new();
    for length in &config.task.lengths {
        for &ratio in &config.task.ratios {
            let text_stem = cell_stem(Task::TextRetrieval, length, ratio);
            let Some(text_set) = sets.get(&text_stem) else {
                continue;
            };
            for &task in &config.task.tasks {
                if task == Task::TextRetrieval {
                    continue;
                }
                let stem = cell_stem(task, length, ratio);
                if let Some(set) = sets.get(&stem) {
                    let o = head_set_overlap(text_set, set)?;
                    task_overlap.push(OverlapRow {
                        task,
                        reference: format!("text_retrieval@{length}"),
                        other: format!("{}@{length}", task.as_str()),
                        ratio: o.ratio,
                    });
                }
            }
        }
    }

    // ratio sweep overlap: reference = smallest configured ratio
    let mut ratio_overlap = Vec::new();
    if config.task.ratios.len() > 1 {
        let mut ratios = config.task.ratios.clone();
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let base_ratio = ratios[0];
        for &task in &config.task.tasks {
            for length in &config.task.lengths {
                let base_stem = cell_stem(task, length, base_ratio);
                let Some(base_set) = sets.get(&base_stem) else {
                    continue;
                };
                for &ratio in &ratios {
                    let stem = cell_stem(task, length, ratio);
                    if let Some(set) = sets.get(&stem) {
                        let o = head_set_overlap(base_set, set)?;
                        ratio_overlap.push(OverlapRow {
                            task,
                            reference: format!("r{:02}", (base_ratio * 100.0).round() as u32),
                            other: format!("r{:02}", (ratio * 100.0).round() as u32),
                            ratio: o.ratio,
                        });
                    }
                }
            }
        }
    }

    // layer histograms: shortest vs longest length per task
    let mut layer_hists = Vec::new();
    if config.task.lengths.len() > 1 {
        let shortest = &config.task.lengths[0];
        let longest = config.task.lengths.last().unwrap();
        for &task in &config.task.tasks {
            for &ratio in &config.task.ratios {
                let a = sets.get(&cell_stem(task, shortest, ratio));
                let b = sets.get(&cell_stem(task, longest, ratio));
                if let (Some(a), Some(b)) = (a, b) {
                    let hists = layer_distribution(a, Some(b))?;
                    layer_hists.push((format!("{}_{shortest}_vs_{longest}", task.as_str()), hists));
                }
            }
        }
    }

    let report = AnalysisReport {
        format_version: FORMAT_VERSION,
        sparsity,
        length_overlap,
        task_overlap,
        ratio_overlap,
        layer_hists,
    };

    // structured document
    let json_path = ctx.run_dir.join("analysis/analysis.json");
    write_json(&json_path, &report)?;
    writer.register(&json_path)?;

    // plot-ready tabular files
    let mut sparsity_tsv = String::from("task\tlength\timage_ratio\trho\tk_heads\ttotal_heads\n");
    for row in &report.sparsity {
        sparsity_tsv.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\t{}\t{}\n",
            row.task.as_str(),
            tsv_escape(&row.length_label),
            row.image_ratio,
            row.rho,
            row.k_heads,
            row.total_heads
        ));
    }
    let sparsity_path = ctx.run_dir.join("analysis/sparsity.tsv");
    write_text(&sparsity_path, &sparsity_tsv)?;
    writer.register(&sparsity_path)?;

    for (name, rows) in [
        ("length_overlap", &report.length_overlap),
        ("task_overlap", &report.task_overlap),
        ("ratio_overlap", &report.ratio_overlap),
    ] {
        let mut tsv = String::from("task\treference\tother\toverlap\n");
        for row in rows {
            tsv.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\n",
                row.task.as_str(),
                tsv_escape(&row.reference),
                tsv_escape(&row.other),
                row.ratio
            ));
        }
        let path = ctx.run_dir.join(format!("analysis/{name}.tsv"));
        write_text(&path, &tsv)?;
        writer.register(&path)?;
    }

    writer.complete_stage("analyze");
    writer.write()?;
    println!(
        "analyze: {} sparsity rows, {} length-overlap rows, {} task-overlap rows",
        report.sparsity.len(),
        report.length_overlap.len(),
        report.task_overlap.len()
    );
    Ok(report)
}

pub(crate) fn write_text(path: &std::path::Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text.as_bytes())?;
    Ok(())
}
