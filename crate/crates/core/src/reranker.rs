//! Training-free candidate re-ranking through selected-head attention.
//!
//! Candidates (document pages or layout regions) are laid out as context
//! units with the question last; each candidate's score is its
//! question-averaged attention mass, averaged over the selected heads,
//! optionally null-calibrated. Forward passes are capped at 200 pages or
//! 50 layout images per group; groups merge by calibrated score.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, SpanSel};
use crate::detector::{HeadSet, NULL_QUESTION};
use crate::error::{Error, Result};
use crate::niah::{ContextUnit, ImageHandle, NiahExample, Task};

/// Page-retrieval cap per forward pass.
pub const PAGE_GROUP_CAP: usize = 200;
/// Layout-retrieval cap per forward pass.
pub const LAYOUT_GROUP_CAP: usize = 50;
/// Builder-side token estimate for an image candidate; the backend's own
/// vision-token accounting decides the real span length at layout time.
const CANDIDATE_IMAGE_TOKEN_ESTIMATE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    Page,
    LayoutRegion,
}

impl CandidateKind {
    pub fn group_cap(self) -> usize {
        match self {
            CandidateKind::Page => PAGE_GROUP_CAP,
            CandidateKind::LayoutRegion => LAYOUT_GROUP_CAP,
        }
    }
}

/// One candidate unit to rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateUnit {
    pub candidate_id: String,
    pub kind: CandidateKind,
    pub payload: CandidatePayload,
    pub domain_label: String,
    pub gold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidatePayload {
    Text(String),
    Image(ImageHandle),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub candidate_id: String,
    pub score: f64,
    /// 1-based; ranks are a permutation of 1..=n with scores
    /// non-increasing.
    pub rank: usize,
}

/// One query's final ranking plus what would count as a hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRanking {
    pub query_id: String,
    pub domain_label: String,
    pub ranked: Vec<RankedCandidate>,
    pub gold_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub ks: Vec<usize>,
    /// Unweighted mean over domains of per-domain query recall.
    pub macro_recall: Vec<f64>,
    /// Hits over all queries.
    pub micro_recall: Vec<f64>,
    pub n_queries: usize,
    pub n_domains: usize,
}

fn candidate_unit(c: &CandidateUnit) -> Result<ContextUnit> {
    match &c.payload {
        CandidatePayload::Text(t) => ContextUnit::text(c.candidate_id.clone(), t.clone()),
        CandidatePayload::Image(h) => Ok(ContextUnit::image(
            c.candidate_id.clone(),
            h.clone(),
            CANDIDATE_IMAGE_TOKEN_ESTIMATE,
        )),
    }
}

/// Splits candidates into forward-pass groups of at most the kind's cap,
/// preserving input order; every candidate lands in exactly one group.
pub fn batch_candidates(candidates: &[CandidateUnit], kind: CandidateKind) -> Vec<Vec<CandidateUnit>> {
    candidates
        .chunks(kind.group_cap())
        .map(|chunk| chunk.to_vec())
        .collect()
}

/// Scores one group of candidates in a single forward pass.
///
/// Per candidate: attention mass summed over its tokens, averaged over
/// question tokens (inside the backend), then averaged over the selected
/// heads. With `calibrate`, the same layout is re-run with the null
/// question and subtracted. Ties break by candidate id ascending.
pub fn score_candidates(
    question: &str,
    candidates: &[CandidateUnit],
    head_set: &HeadSet,
    backend: &dyn Backend,
    calibrate: bool,
) -> Result<Vec<RankedCandidate>> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    if head_set.is_empty() {
        return Err(Error::invalid_input("selected head set is empty"));
    }
    let mut seen = BTreeSet::new();
    for c in candidates {
        if !seen.insert(c.candidate_id.clone()) {
            return Err(Error::invalid_input(format!(
                "duplicate candidate id {}",
                c.candidate_id
            )));
        }
    }

    let units: Vec<ContextUnit> = candidates
        .iter()
        .map(candidate_unit)
        .collect::<Result<_>>()?;
    let example = NiahExample::from_units(units, question, None, Task::TextRetrieval, 0);
    let layout = backend.layout_prompt(&example, None).map_err(|e| match e {
        Error::ContextOverflow { required, available } => Error::invalid_input(format!(
            "candidate group needs {required} tokens but the window holds {available}; \
             split it with batch_candidates before scoring"
        )),
        other => other,
    })?;

    let sels: Vec<SpanSel> = candidates
        .iter()
        .map(|c| SpanSel::Unit(c.candidate_id.clone()))
        .collect();
    let table = backend.attention_masses(&layout, &sels, None)?;
    let null_table = if calibrate {
        let null_layout = backend.layout_prompt(&example, Some(NULL_QUESTION))?;
        Some(backend.attention_masses(&null_layout, &sels, None)?)
    } else {
        None
    };

    let addrs = head_set.addrs();
    let mut scored: Vec<(String, f64)> = Vec::with_capacity(candidates.len());
    for c in candidates {
        let key = format!("unit:{}", c.candidate_id);
        let mut total = 0.0;
        for addr in &addrs {
            let raw = table.mass_for(*addr, &key).ok_or_else(|| {
                Error::config(format!("head {addr} missing from backend inventory"))
            })?;
            let null = match &null_table {
                Some(t) => t.mass_for(*addr, &key).ok_or_else(|| {
                    Error::config(format!("head {addr} missing from null-run table"))
                })?,
                None => 0.0,
            };
            total += raw - null;
        }
        scored.push((c.candidate_id.clone(), total / addrs.len() as f64));
    }

    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (candidate_id, score))| RankedCandidate {
            candidate_id,
            score,
            rank: i + 1,
        })
        .collect())
}

/// Merges per-group rankings into one global ranking by score descending,
/// candidate id ascending. Group softmax normalization differs per group,
/// so cross-group scores are compared as calibrated values.
pub fn merge_group_rankings(groups: &[Vec<RankedCandidate>]) -> Result<Vec<RankedCandidate>> {
    let mut all: Vec<RankedCandidate> = Vec::new();
    let mut seen = BTreeSet::new();
    for group in groups {
        for rc in group {
            if !seen.insert(rc.candidate_id.clone()) {
                return Err(Error::invalid_input(format!(
                    "duplicate candidate id {} across groups",
                    rc.candidate_id
                )));
            }
            all.push(rc.clone());
        }
    }
    all.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.candidate_id.cmp(&b.candidate_id))
    });
    for (i, rc) in all.iter_mut().enumerate() {
        rc.rank = i + 1;
    }
    Ok(all)
}

/// Scoring switches for a full query ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RerankOptions {
    /// Subtract the null-question run.
    pub calibrate: bool,
    /// Softmax normalization differs per group, so cross-group scores are
    /// not strictly commensurate; this rescales each group's scores by its
    /// candidate count before merging. Off by default.
    pub group_size_normalization: bool,
}

impl Default for RerankOptions {
    fn default() -> Self {
        RerankOptions {
            calibrate: true,
            group_size_normalization: false,
        }
    }
}

/// End-to-end ranking for one query: batch, score each group, merge.
#[allow(clippy::too_many_arguments)]
pub fn rank_query(
    query_id: &str,
    question: &str,
    domain_label: &str,
    candidates: &[CandidateUnit],
    kind: CandidateKind,
    head_set: &HeadSet,
    backend: &dyn Backend,
    options: RerankOptions,
) -> Result<QueryRanking> {
    let groups = batch_candidates(candidates, kind);
    let mut rankings = Vec::with_capacity(groups.len());
    for group in &groups {
        let mut ranked = score_candidates(question, group, head_set, backend, options.calibrate)?;
        if options.group_size_normalization {
            for rc in &mut ranked {
                rc.score *= group.len() as f64;
            }
        }
        rankings.push(ranked);
    }
    let ranked = merge_group_rankings(&rankings)?;
    let gold_ids: BTreeSet<String> = candidates
        .iter()
        .filter(|c| c.gold)
        .map(|c| c.candidate_id.clone())
        .collect();
    Ok(QueryRanking {
        query_id: query_id.to_string(),
        domain_label: domain_label.to_string(),
        ranked,
        gold_ids,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecallGrouping {
    Macro,
    Micro,
    Both,
}

/// A query hits at k iff any gold candidate ranks within the top k.
/// Macro averages per-domain recalls; micro averages over all queries.
pub fn recall_at_k(
    rankings: &[QueryRanking],
    ks: &[usize],
    grouping: RecallGrouping,
) -> Result<RecallReport> {
    if rankings.is_empty() {
        return Err(Error::InvalidDataset("no query rankings".into()));
    }
    if ks.is_empty() {
        return Err(Error::invalid_input("no k values requested"));
    }
    for q in rankings {
        if q.gold_ids.is_empty() {
            return Err(Error::InvalidDataset(format!(
                "query {} has no gold candidate",
                q.query_id
            )));
        }
    }

    let hit_at = |q: &QueryRanking, k: usize| -> bool {
        q.ranked
            .iter()
            .take(k)
            .any(|rc| q.gold_ids.contains(&rc.candidate_id))
    };

    let want_macro = matches!(grouping, RecallGrouping::Macro | RecallGrouping::Both);
    let want_micro = matches!(grouping, RecallGrouping::Micro | RecallGrouping::Both);
    let mut macro_recall = Vec::with_capacity(ks.len());
    let mut micro_recall = Vec::with_capacity(ks.len());
    let mut domains: BTreeMap<&str, Vec<&QueryRanking>> = BTreeMap::new();
    for q in rankings {
        domains.entry(q.domain_label.as_str()).or_default().push(q);
    }

    for &k in ks {
        if want_micro {
            let hits = rankings.iter().filter(|q| hit_at(q, k)).count();
            micro_recall.push(hits as f64 / rankings.len() as f64);
        }
        if want_macro {
            let mut domain_recalls = Vec::with_capacity(domains.len());
            for queries in domains.values() {
                let hits = queries.iter().filter(|q| hit_at(q, k)).count();
                domain_recalls.push(hits as f64 / queries.len() as f64);
            }
            macro_recall.push(domain_recalls.iter().sum::<f64>() / domain_recalls.len() as f64);
        }
    }

    Ok(RecallReport {
        ks: ks.to_vec(),
        macro_recall,
        micro_recall,
        n_queries: rankings.len(),
        n_domains: domains.len(),
    })
}
