//! Per-head retrieval scoring, null-question calibration, detection-set
//! averaging, and top-fraction selection.
//!
//! A head's score on one example is the mean over question tokens of its
//! summed post-softmax attention into the needle spans. Subtracting the
//! score obtained with an uninformative null question in the same prompt
//! slot removes question-independent attention bias; negative calibrated
//! scores are kept. Scores are averaged over a detection set
//! (questions x depths), then ranked.

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, HeadId, PromptLayout, SpanSel};
use crate::error::{Error, Result};
use crate::niah::{NiahExample, Task};
use crate::persist::FORMAT_VERSION;

/// The default null question.
pub const NULL_QUESTION: &str = "N/A";

/// Top-selection fraction used throughout: 5% of the full inventory.
pub const DEFAULT_SELECT_FRACTION: f64 = 0.05;

/// The depth grid: six positions covering both boundaries.
pub const DEFAULT_DEPTHS: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

/// Questions per detection condition.
pub const DEFAULT_QUESTIONS_PER_CONDITION: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionCondition {
    pub task: Task,
    pub context_length: usize,
    pub depths: Vec<f64>,
    pub n_questions: usize,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ratio: Option<f64>,
}

impl DetectionCondition {
    pub fn validate(&self) -> Result<()> {
        if self.n_questions == 0 {
            return Err(Error::config("detection needs at least one question"));
        }
        if self.depths.is_empty() {
            return Err(Error::config("detection needs at least one depth"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadScore {
    pub layer: u32,
    pub head: u32,
    pub eligible: bool,
    /// Detection-set mean of the raw needle mass.
    pub raw: f64,
    /// Detection-set mean under the null question.
    pub null: f64,
    /// raw - null, exactly.
    pub calibrated: f64,
}

impl HeadScore {
    pub fn addr(&self) -> crate::backend::HeadAddr {
        crate::backend::HeadAddr::new(self.layer, self.head)
    }
}

/// Per-head raw, null, and calibrated means over a detection set, in
/// inventory order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadScoreTable {
    pub format_version: u32,
    pub model_id: String,
    pub condition: DetectionCondition,
    pub n_examples: usize,
    pub scores: Vec<HeadScore>,
}

impl HeadScoreTable {
    pub fn total_heads(&self) -> usize {
        self.scores.len()
    }

    pub fn eligible_heads(&self) -> usize {
        self.scores.iter().filter(|s| s.eligible).count()
    }
}

/// An ordered top-fraction selection of eligible heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSet {
    pub format_version: u32,
    pub model_id: String,
    /// Score-descending (ties: layer then head ascending).
    pub heads: Vec<HeadId>,
    /// Calibrated scores aligned with `heads`.
    pub scores: Vec<f64>,
    pub fraction: f64,
    /// Inventory shape, for address-space compatibility checks.
    pub n_layers: u32,
    pub n_heads_per_layer: u32,
    pub total_heads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<DetectionCondition>,
    /// Provenance label: "detected", "random(seed=..)", etc.
    pub source: String,
}

impl HeadSet {
    pub fn addrs(&self) -> Vec<crate::backend::HeadAddr> {
        self.heads.iter().map(|h| h.addr()).collect()
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn same_address_space(&self, other: &HeadSet) -> bool {
        self.n_layers == other.n_layers && self.n_heads_per_layer == other.n_heads_per_layer
    }
}

/// Per-example scores for every head, in inventory order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleScores {
    pub heads: Vec<HeadId>,
    pub raw: Vec<f64>,
    pub null: Vec<f64>,
    pub calibrated: Vec<f64>,
}

/// Raw per-head needle mass for one laid-out prompt: the mean over
/// question tokens of summed attention into the needle spans.
pub fn score_example(layout: &PromptLayout, backend: &dyn Backend) -> Result<Vec<f64>> {
    if layout.needle_spans.is_empty() {
        return Err(Error::InvalidLayout(
            "scoring requires needle spans; lay out an annotated example".into(),
        ));
    }
    let sels: Vec<SpanSel> = (0..layout.needle_spans.len()).map(SpanSel::Needle).collect();
    let table = backend.attention_masses(layout, &sels, None)?;
    Ok(table.per_head_totals())
}

/// Raw and null-question scores for one example; calibrated is their
/// difference, computed per head so the identity holds exactly.
pub fn calibrate(
    example: &NiahExample,
    backend: &dyn Backend,
    null_question: &str,
) -> Result<ExampleScores> {
    let layout = backend.layout_prompt(example, None)?;
    let null_layout = backend.layout_prompt(example, Some(null_question))?;
    let raw = score_example(&layout, backend)?;
    let null = score_example(&null_layout, backend)?;
    let calibrated: Vec<f64> = raw.iter().zip(&null).map(|(r, n)| r - n).collect();
    Ok(ExampleScores {
        heads: backend.head_inventory(),
        raw,
        null,
        calibrated,
    })
}

/// Scores every example in the detection set and averages per head.
/// The calibrated mean is computed as raw mean minus null mean so the
/// `calibrated = raw - null` identity is exact in the emitted table.
pub fn run_detection(
    condition: &DetectionCondition,
    dataset: &[NiahExample],
    backend: &dyn Backend,
) -> Result<HeadScoreTable> {
    run_detection_with_null(condition, dataset, backend, NULL_QUESTION)
}

pub fn run_detection_with_null(
    condition: &DetectionCondition,
    dataset: &[NiahExample],
    backend: &dyn Backend,
    null_question: &str,
) -> Result<HeadScoreTable> {
    condition.validate()?;
    if dataset.is_empty() {
        return Err(Error::config("detection dataset is empty"));
    }
    for ex in dataset {
        if ex.task != condition.task {
            return Err(Error::config(format!(
                "dataset example {} is task {}, condition expects {}",
                ex.example_id,
                ex.task.as_str(),
                condition.task.as_str()
            )));
        }
        if ex.target_length_tokens != condition.context_length {
            return Err(Error::config(format!(
                "dataset example {} targets {} tokens, condition expects {}",
                ex.example_id, ex.target_length_tokens, condition.context_length
            )));
        }
        let depth_known = condition
            .depths
            .iter()
            .any(|d| (d - ex.depth_fraction).abs() < 1e-9);
        if !depth_known {
            return Err(Error::config(format!(
                "dataset example {} depth {} not in the condition grid",
                ex.example_id, ex.depth_fraction
            )));
        }
    }

    let inventory = backend.head_inventory();
    let mut raw_sum = vec![0.0f64; inventory.len()];
    let mut null_sum = vec![0.0f64; inventory.len()];
    for ex in dataset {
        let scores = calibrate(ex, backend, null_question)?;
        for (i, (r, n)) in scores.raw.iter().zip(&scores.null).enumerate() {
            raw_sum[i] += r;
            null_sum[i] += n;
        }
    }
    let n = dataset.len() as f64;
    let scores: Vec<HeadScore> = inventory
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let raw = raw_sum[i] / n;
            let null = null_sum[i] / n;
            HeadScore {
                layer: h.layer,
                head: h.head,
                eligible: h.eligible,
                raw,
                null,
                calibrated: raw - null,
            }
        })
        .collect();

    Ok(HeadScoreTable {
        format_version: FORMAT_VERSION,
        model_id: backend.model_id().to_string(),
        condition: condition.clone(),
        n_examples: dataset.len(),
        scores,
    })
}

/// Selects the top `fraction` of heads. The selection count is
/// ceil(fraction x full inventory size) while the pool is eligible heads
/// only; ordering is (calibrated desc, layer asc, head asc).
pub fn select_top(table: &HeadScoreTable, fraction: f64) -> Result<HeadSet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid_input(format!(
            "selection fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let total = table.total_heads();
    let k = (fraction * total as f64).ceil() as usize;
    let mut pool: Vec<&HeadScore> = table.scores.iter().filter(|s| s.eligible).collect();
    if k > pool.len() {
        return Err(Error::SelectionPool {
            requested: k,
            eligible: pool.len(),
        });
    }
    pool.sort_by(|a, b| {
        b.calibrated
            .partial_cmp(&a.calibrated)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.layer.cmp(&b.layer))
            .then(a.head.cmp(&b.head))
    });
    pool.truncate(k);

    let n_layers = table.scores.iter().map(|s| s.layer).max().unwrap_or(0) + 1;
    let n_heads = table.scores.iter().map(|s| s.head).max().unwrap_or(0) + 1;
    Ok(HeadSet {
        format_version: FORMAT_VERSION,
        model_id: table.model_id.clone(),
        heads: pool
            .iter()
            .map(|s| HeadId {
                layer: s.layer,
                head: s.head,
                eligible: true,
            })
            .collect(),
        scores: pool.iter().map(|s| s.calibrated).collect(),
        fraction,
        n_layers,
        n_heads_per_layer: n_heads,
        total_heads: total,
        condition: Some(table.condition.clone()),
        source: "detected".to_string(),
    })
}

/// Pairwise overlap of head sets selected from disjoint detection subsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub pair_overlaps: Vec<f64>,
    pub mean_overlap: f64,
    pub subset_sizes: Vec<usize>,
}

/// Selects a head set per subset and reports the pairwise overlap ratios.
///
/// `backends` holds either one backend shared by every subset or one
/// backend per subset. Subsets must be disjoint (by example id) and of
/// equal size.
pub fn detection_stability(
    condition: &DetectionCondition,
    subsets: &[Vec<NiahExample>],
    backends: &[&dyn Backend],
    fraction: f64,
) -> Result<StabilityReport> {
    if subsets.len() < 2 {
        return Err(Error::invalid_input("stability needs at least two subsets"));
    }
    if backends.len() != 1 && backends.len() != subsets.len() {
        return Err(Error::invalid_input(
            "provide one shared backend or one per subset",
        ));
    }
    let first_len = subsets[0].len();
    for (i, subset) in subsets.iter().enumerate() {
        if subset.len() != first_len {
            return Err(Error::invalid_input(format!(
                "subset {i} has {} examples, expected {first_len}",
                subset.len()
            )));
        }
        for (j, other) in subsets.iter().enumerate().skip(i + 1) {
            for ex in subset {
                if other.iter().any(|o| o.example_id == ex.example_id) {
                    return Err(Error::invalid_input(format!(
                        "subsets {i} and {j} share example {}",
                        ex.example_id
                    )));
                }
            }
        }
    }

    let mut sets = Vec::with_capacity(subsets.len());
    for (i, subset) in subsets.iter().enumerate() {
        let backend = if backends.len() == 1 {
            backends[0]
        } else {
            backends[i]
        };
        let table = run_detection(condition, subset, backend)?;
        sets.push(select_top(&table, fraction)?);
    }
    stability_from_head_sets(&sets)
}

/// The overlap arithmetic behind [`detection_stability`], usable directly
/// when the head sets were produced elsewhere.
pub fn stability_from_head_sets(sets: &[HeadSet]) -> Result<StabilityReport> {
    if sets.len() < 2 {
        return Err(Error::invalid_input("stability needs at least two sets"));
    }
    let mut pair_overlaps = Vec::new();
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            let overlap = crate::analyzer::head_set_overlap(&sets[i], &sets[j])?;
            pair_overlaps.push(overlap.ratio);
        }
    }
    let mean_overlap = pair_overlaps.iter().sum::<f64>() / pair_overlaps.len() as f64;
    Ok(StabilityReport {
        pair_overlaps,
        mean_overlap,
        subset_sizes: sets.iter().map(|s| s.len()).collect(),
    })
}
