//! `rerank`: rank candidate pages or layout regions for each query in a
//! query file and report macro/micro Recall@k.

use std::path::Path;

use serde::{Deserialize, Serialize};

use headscope::detector::HeadSet;
use headscope::error::{Error, Result};
use headscope::niah::ImageHandle;
use headscope::persist::{read_json, read_jsonl, write_json, write_jsonl, FORMAT_VERSION};
use headscope::reranker::{
    rank_query, recall_at_k, CandidateKind, CandidatePayload, CandidateUnit, QueryRanking,
    RecallGrouping, RecallReport, RerankOptions,
};

use crate::backend_factory::build_backend;
use crate::manifest::ManifestWriter;

use super::CmdContext;

/// One line of the query file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub question: String,
    pub domain_label: String,
    pub candidates: Vec<CandidateRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub candidate_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
    #[serde(default)]
    pub gold: bool,
}

impl CandidateRecord {
    fn to_unit(&self, kind: CandidateKind, domain: &str) -> Result<CandidateUnit> {
        let payload = match (&self.text, &self.image_id) {
            (Some(t), None) => CandidatePayload::Text(t.clone()),
            (None, Some(id)) => CandidatePayload::Image(ImageHandle::synthetic(id.clone())),
            _ => {
                return Err(Error::InvalidDataset(format!(
                    "candidate {} must carry exactly one of text / image_id",
                    self.candidate_id
                )))
            }
        };
        Ok(CandidateUnit {
            candidate_id: self.candidate_id.clone(),
            kind,
            payload,
            domain_label: domain.to_string(),
            gold: self.gold,
        })
    }
}

pub fn cmd_rerank(
    ctx: &CmdContext,
    heads_file: &Path,
    queries_file: &Path,
    kind: CandidateKind,
    ks: &[usize],
    options: RerankOptions,
) -> Result<RecallReport> {
    let config = &ctx.config;
    let mut writer = ManifestWriter::open(&ctx.run_dir, &config.content_hash()?, ctx.clock)?;
    let head_set: HeadSet = read_json(heads_file)?;
    headscope::persist::check_format_version(head_set.format_version, "head set")?;
    let queries: Vec<QueryRecord> = read_jsonl(queries_file)?;
    if queries.is_empty() {
        return Err(Error::InvalidDataset("query file is empty".into()));
    }
    let backend = build_backend(&config.backend)?;

    let mut rankings: Vec<QueryRanking> = Vec::with_capacity(queries.len());
    for record in &queries {
        let candidates: Vec<CandidateUnit> = record
            .candidates
            .iter()
            .map(|c| c.to_unit(kind, &record.domain_label))
            .collect::<Result<_>>()?;
        rankings.push(rank_query(
            &record.query_id,
            &record.question,
            &record.domain_label,
            &candidates,
            kind,
            &head_set,
            backend.as_ref(),
            options,
        )?);
    }

    let report = recall_at_k(&rankings, ks, RecallGrouping::Both)?;

    let rankings_path = ctx.run_dir.join("rerank/rankings.jsonl");
    write_jsonl(&rankings_path, &rankings)?;
    writer.register(&rankings_path)?;

    #[derive(Serialize)]
    struct RecallDoc<'a> {
        format_version: u32,
        kind: CandidateKind,
        calibrated: bool,
        group_size_normalization: bool,
        #[serde(flatten)]
        report: &'a RecallReport,
    }
    let recall_path = ctx.run_dir.join("rerank/recall.json");
    write_json(
        &recall_path,
        &RecallDoc {
            format_version: FORMAT_VERSION,
            kind,
            calibrated: options.calibrate,
            group_size_normalization: options.group_size_normalization,
            report: &report,
        },
    )?;
    writer.register(&recall_path)?;

    let mut tsv = String::from("k\tmacro_recall\tmicro_recall\n");
    for (i, k) in report.ks.iter().enumerate() {
        tsv.push_str(&format!(
            "{k}\t{:.6}\t{:.6}\n",
            report.macro_recall[i], report.micro_recall[i]
        ));
    }
    let tsv_path = ctx.run_dir.join("rerank/recall.tsv");
    super::analyze::write_text(&tsv_path, &tsv)?;
    writer.register(&tsv_path)?;

    writer.complete_stage("rerank");
    writer.write()?;
    for (i, k) in report.ks.iter().enumerate() {
        println!(
            "rerank: R@{k} macro {:.4} micro {:.4} over {} queries / {} domains",
            report.macro_recall[i], report.micro_recall[i], report.n_queries, report.n_domains
        );
    }
    Ok(report)
}
