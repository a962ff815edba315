//! `report`: turn persisted analysis, masking, and recall artifacts into
//! plot tables and rendered figures. Never recomputes; missing inputs for
//! a completed stage are hard errors.

use std::collections::BTreeMap;

use headscope::backend::MaskScope;
use headscope::error::{Error, Result};
use headscope::persist::read_json;

use crate::manifest::ManifestWriter;
use crate::plots::{heatmap_svg, line_chart_svg};

use super::analyze::{write_text, AnalysisReport};
use super::mask_eval::MaskEvalReport;
use super::CmdContext;

pub struct ReportOutcome {
    pub files: Vec<String>,
}

pub fn cmd_report(ctx: &CmdContext) -> Result<ReportOutcome> {
    let config = &ctx.config;
    let mut writer = ManifestWriter::open(&ctx.run_dir, &config.content_hash()?, ctx.clock)?;

    let mut files = Vec::new();
    let mut emitted_any = false;

    if writer.stage_complete("analyze") {
        let path = ctx.run_dir.join("analysis/analysis.json");
        if !path.exists() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{} missing despite completed analyze stage", path.display()),
            )));
        }
        let analysis: AnalysisReport = read_json(&path)?;
        emit_sparsity(ctx, &mut writer, &analysis, &mut files)?;
        emit_overlap(ctx, &mut writer, &analysis, &mut files)?;
        emit_layer_hists(ctx, &mut writer, &analysis, &mut files)?;
        emitted_any = true;
    }

    if writer.stage_complete("mask_eval") {
        let path = ctx.run_dir.join("mask_eval/grids.json");
        if !path.exists() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{} missing despite completed mask_eval stage", path.display()),
            )));
        }
        let report: MaskEvalReport = read_json(&path)?;
        emit_masking(ctx, &mut writer, &report, &mut files)?;
        emitted_any = true;
    }

    if !emitted_any {
        return Err(Error::InvalidDataset(
            "nothing to report: run `analyze` or `mask-eval` first".into(),
        ));
    }

    writer.complete_stage("report");
    writer.write()?;
    println!("report: {} files", files.len());
    Ok(ReportOutcome { files })
}

fn register(
    ctx: &CmdContext,
    writer: &mut ManifestWriter,
    files: &mut Vec<String>,
    rel: &str,
    content: &str,
) -> Result<()> {
    let path = ctx.run_dir.join(rel);
    write_text(&path, content)?;
    writer.register(&path)?;
    files.push(rel.to_string());
    Ok(())
}

fn emit_sparsity(
    ctx: &CmdContext,
    writer: &mut ManifestWriter,
    analysis: &AnalysisReport,
    files: &mut Vec<String>,
) -> Result<()> {
    // rows: task, cols: length label
    let mut rows: Vec<String> = Vec::new();
    let mut cols: Vec<String> = Vec::new();
    for r in &analysis.sparsity {
        let task = r.task.as_str().to_string();
        if !rows.contains(&task) {
            rows.push(task);
        }
        if !cols.contains(&r.length_label) {
            cols.push(r.length_label.clone());
        }
    }
    let mut grid = vec![vec![None; cols.len()]; rows.len()];
    let mut tsv = String::from("task\tlength\trho\n");
    for r in &analysis.sparsity {
        let ri = rows.iter().position(|t| t == r.task.as_str()).unwrap();
        let ci = cols.iter().position(|l| l == &r.length_label).unwrap();
        grid[ri][ci] = Some(r.rho);
        tsv.push_str(&format!("{}\t{}\t{:.6}\n", r.task.as_str(), r.length_label, r.rho));
    }
    register(ctx, writer, files, "report/sparsity.tsv", &tsv)?;
    let svg = heatmap_svg("score-mass sparsity rho@0.5", &rows, &cols, &grid);
    register(ctx, writer, files, "report/sparsity.svg", &svg)
}

fn emit_overlap(
    ctx: &CmdContext,
    writer: &mut ManifestWriter,
    analysis: &AnalysisReport,
    files: &mut Vec<String>,
) -> Result<()> {
    let mut tsv = String::from("task\treference\tother\toverlap\n");
    let mut by_task: BTreeMap<&str, (Vec<String>, Vec<f64>)> = BTreeMap::new();
    for row in &analysis.length_overlap {
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\n",
            row.task.as_str(),
            row.reference,
            row.other,
            row.ratio
        ));
        let slot = by_task.entry(row.task.as_str()).or_default();
        slot.0.push(row.other.clone());
        slot.1.push(row.ratio);
    }
    register(ctx, writer, files, "report/length_overlap.tsv", &tsv)?;

    // an empty series still yields a well-formed (axes-only) figure
    let x_labels: Vec<String> = by_task
        .values()
        .next()
        .map(|(labels, _)| labels.clone())
        .unwrap_or_default();
    let series: Vec<(String, Vec<f64>)> = by_task
        .into_iter()
        .map(|(task, (_, ys))| (task.to_string(), ys))
        .collect();
    let svg = line_chart_svg("top-set overlap vs detection length", &x_labels, &series);
    register(ctx, writer, files, "report/length_overlap.svg", &svg)
}

fn emit_layer_hists(
    ctx: &CmdContext,
    writer: &mut ManifestWriter,
    analysis: &AnalysisReport,
    files: &mut Vec<String>,
) -> Result<()> {
    let mut tsv = String::from("comparison\tpartition\tlayer\tcount\tmean_layer\n");
    let mut rows: Vec<String> = Vec::new();
    let mut n_layers = 0usize;
    let mut counts: Vec<Vec<usize>> = Vec::new();
    for (name, hists) in &analysis.layer_hists {
        for hist in hists {
            let partition = partition_name(hist.partition);
            let mean = hist
                .mean_layer
                .map(|m| format!("{m:.3}"))
                .unwrap_or_default();
            for (layer, count) in hist.counts.iter().enumerate() {
                tsv.push_str(&format!("{name}\t{partition}\t{layer}\t{count}\t{mean}\n"));
            }
            rows.push(format!("{name}|{partition}"));
            counts.push(hist.counts.clone());
            n_layers = n_layers.max(hist.counts.len());
        }
    }
    register(ctx, writer, files, "report/layer_hist.tsv", &tsv)?;

    let max_count = counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    let col_labels: Vec<String> = (0..n_layers).map(|l| l.to_string()).collect();
    let values: Vec<Vec<Option<f64>>> = counts
        .iter()
        .map(|row| {
            (0..n_layers)
                .map(|l| row.get(l).map(|&c| c as f64 / max_count))
                .collect()
        })
        .collect();
    let svg = heatmap_svg("selected-head layer distribution", &rows, &col_labels, &values);
    register(ctx, writer, files, "report/layer_hist.svg", &svg)
}

fn partition_name(p: headscope::analyzer::Partition) -> &'static str {
    match p {
        headscope::analyzer::Partition::Shared => "shared",
        headscope::analyzer::Partition::OnlyA => "only_a",
        headscope::analyzer::Partition::OnlyB => "only_b",
    }
}

fn emit_masking(
    ctx: &CmdContext,
    writer: &mut ManifestWriter,
    report: &MaskEvalReport,
    files: &mut Vec<String>,
) -> Result<()> {
    // one row per (length, depth, mask); the scope distinguishes grids
    let mut tsv = String::from("task\tmask_label\tscope\tcontext_length\tdepth\taccuracy\tn\n");
    let mut rows: Vec<String> = Vec::new();
    let mut cols: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(String, String), f64> = BTreeMap::new();
    for grid in &report.grids {
        let scope = match grid.scope {
            Some(MaskScope::PrefillAndDecode) => "prefill_and_decode",
            Some(MaskScope::DecodeOnly) => "decode_only",
            None => "none",
        };
        let row_key = format!("{}|{}|{}", grid.task.as_str(), grid.mask_label, scope);
        if !rows.contains(&row_key) {
            rows.push(row_key.clone());
        }
        for cell in &grid.cells {
            let col_key = format!("{}@{}", cell.context_length, cell.depth_fraction);
            if !cols.contains(&col_key) {
                cols.push(col_key.clone());
            }
            cells.insert((row_key.clone(), col_key), cell.accuracy());
            tsv.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{:.6}\t{}\n",
                grid.task.as_str(),
                grid.mask_label,
                scope,
                cell.context_length,
                cell.depth_fraction,
                cell.accuracy(),
                cell.n
            ));
        }
    }
    register(ctx, writer, files, "report/masking_grid.tsv", &tsv)?;

    let grid_values: Vec<Vec<Option<f64>>> = rows
        .iter()
        .map(|r| {
            cols.iter()
                .map(|c| cells.get(&(r.clone(), c.clone())).copied())
                .collect()
        })
        .collect();
    let svg = heatmap_svg("masked retrieval accuracy", &rows, &cols, &grid_values);
    register(ctx, writer, files, "report/masking_grid.svg", &svg)
}
