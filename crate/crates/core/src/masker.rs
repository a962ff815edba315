//! Head-masking evaluation: zero selected heads, measure needle-retrieval
//! accuracy on (context length x depth) grids, compare against random-head
//! controls, transfer detected sets across lengths, and contrast masking
//! scopes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, HeadId, MaskScope, MaskSpec};
use crate::detector::HeadSet;
use crate::error::{Error, Result};
use crate::niah::{Answer, NiahExample, Task};
use crate::persist::FORMAT_VERSION;
use crate::rng::SeededRng;

/// Default decode budget for needle answers.
pub const DEFAULT_MAX_NEW_TOKENS: usize = 16;

/// Accuracy in one (length, depth) cell. Failed generations are excluded
/// from `n` and counted separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub context_length: usize,
    pub depth_fraction: f64,
    pub correct: usize,
    pub n: usize,
    pub failed: usize,
}

impl EvalCell {
    pub fn accuracy(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.correct as f64 / self.n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalGrid {
    pub format_version: u32,
    pub task: Task,
    pub mask_label: String,
    pub scope: Option<MaskScope>,
    /// Sorted by (context_length, depth_fraction).
    pub cells: Vec<EvalCell>,
}

impl EvalGrid {
    pub fn cell(&self, length: usize, depth: f64) -> Option<&EvalCell> {
        self.cells
            .iter()
            .find(|c| c.context_length == length && (c.depth_fraction - depth).abs() < 1e-9)
    }

    pub fn mean_accuracy(&self) -> f64 {
        if self.cells.is_empty() {
            return 0.0;
        }
        self.cells.iter().map(EvalCell::accuracy).sum::<f64>() / self.cells.len() as f64
    }
}

/// Decides whether a generation answers an example.
pub trait AnswerChecker {
    fn check(&self, example: &NiahExample, generated: &str) -> bool;
}

/// Normalized exact match for text answers (case-fold, strip punctuation
/// and articles); first-integer match for option answers.
#[derive(Debug, Clone, Copy, Default)]
pub struct NiahAnswerChecker;

fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let cleaned: String = lowered
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn first_integer(text: &str) -> Option<usize> {
    let mut digits = String::new();
    for c in text.chars() {
        if c.is_ascii_digit() {
            digits.push(c);
        } else if !digits.is_empty() {
            break;
        }
    }
    digits.parse().ok()
}

impl AnswerChecker for NiahAnswerChecker {
    fn check(&self, example: &NiahExample, generated: &str) -> bool {
        let Some(needle) = &example.needle else {
            return false;
        };
        match &needle.gold {
            Answer::Text(gold) => normalize_answer(generated) == normalize_answer(gold),
            Answer::OptionIndex(idx) => first_integer(generated) == Some(*idx),
        }
    }
}

/// Uniform sample of `n` eligible heads, without replacement, deterministic
/// per seed.
pub fn sample_random_heads(n: usize, backend: &dyn Backend, seed: u64) -> Result<HeadSet> {
    let inventory = backend.head_inventory();
    let eligible: Vec<&HeadId> = inventory.iter().filter(|h| h.eligible).collect();
    if n > eligible.len() {
        return Err(Error::SelectionPool {
            requested: n,
            eligible: eligible.len(),
        });
    }
    let mut rng = SeededRng::derive(seed, "random-heads");
    let mut picks: Vec<HeadId> = rng
        .sample_indices(eligible.len(), n)
        .into_iter()
        .map(|i| *eligible[i])
        .collect();
    picks.sort_by_key(|h| (h.layer, h.head));

    let n_layers = inventory.iter().map(|h| h.layer).max().unwrap_or(0) + 1;
    let n_heads = inventory.iter().map(|h| h.head).max().unwrap_or(0) + 1;
    Ok(HeadSet {
        format_version: FORMAT_VERSION,
        model_id: backend.model_id().to_string(),
        scores: vec![0.0; picks.len()],
        heads: picks,
        fraction: n as f64 / inventory.len() as f64,
        n_layers,
        n_heads_per_layer: n_heads,
        total_heads: inventory.len(),
        condition: None,
        source: format!("random(seed={seed})"),
    })
}

/// Runs masked greedy generation over the dataset and buckets accuracy per
/// (context length, depth) cell.
pub fn run_masked_eval(
    dataset: &[NiahExample],
    backend: &dyn Backend,
    mask: &MaskSpec,
    checker: &dyn AnswerChecker,
    max_new_tokens: usize,
) -> Result<EvalGrid> {
    if dataset.is_empty() {
        return Err(Error::InvalidDataset("masked eval needs examples".into()));
    }
    let task = dataset[0].task;
    for ex in dataset {
        if ex.needle.is_none() {
            return Err(Error::InvalidDataset(format!(
                "example {} carries no gold answer",
                ex.example_id
            )));
        }
        if ex.task != task {
            return Err(Error::InvalidDataset(
                "masked eval dataset mixes tasks".into(),
            ));
        }
    }

    // (length, depth in nanofraction) -> cell; integer depth key keeps
    // ordering exact.
    let mut cells: BTreeMap<(usize, u64), EvalCell> = BTreeMap::new();
    for ex in dataset {
        let key = (ex.target_length_tokens, depth_key(ex.depth_fraction));
        let cell = cells.entry(key).or_insert_with(|| EvalCell {
            context_length: ex.target_length_tokens,
            depth_fraction: ex.depth_fraction,
            correct: 0,
            n: 0,
            failed: 0,
        });
        let layout = match backend.layout_prompt(ex, None) {
            Ok(l) => l,
            Err(_) => {
                cell.failed += 1;
                continue;
            }
        };
        match backend.generate(&layout, Some(mask), max_new_tokens) {
            Ok(generation) => {
                cell.n += 1;
                if checker.check(ex, &generation.text) {
                    cell.correct += 1;
                }
            }
            Err(_) => {
                cell.failed += 1;
            }
        }
    }

    Ok(EvalGrid {
        format_version: FORMAT_VERSION,
        task,
        mask_label: mask.label.clone(),
        scope: Some(mask.scope),
        cells: cells.into_values().collect(),
    })
}

fn depth_key(depth: f64) -> u64 {
    (depth * 1e9).round() as u64
}

/// One row per detected head set, one grid per evaluation length:
/// heads detected at one length evaluated at every other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    /// (detected_at_length, evaluated_at_length) -> grid, row-major in the
    /// order of the inputs.
    pub rows: Vec<TransferRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub detected_at: usize,
    pub evaluated_at: usize,
    pub grid: EvalGrid,
}

/// Evaluates each detected head set at each evaluation length, including
/// the off-diagonal transfers.
pub fn cross_length_transfer(
    head_sets: &BTreeMap<usize, HeadSet>,
    eval_lengths: &[usize],
    dataset_factory: &dyn Fn(usize) -> Result<Vec<NiahExample>>,
    backend: &dyn Backend,
    scope: MaskScope,
    checker: &dyn AnswerChecker,
    max_new_tokens: usize,
) -> Result<TransferMatrix> {
    if head_sets.is_empty() {
        return Err(Error::invalid_input("no detected head sets supplied"));
    }
    let mut rows = Vec::new();
    for (&detected_at, set) in head_sets {
        let mask = MaskSpec::new(
            set.addrs(),
            scope,
            format!("detected@{detected_at}"),
        )?;
        for &eval_len in eval_lengths {
            let dataset = dataset_factory(eval_len)?;
            let grid = run_masked_eval(&dataset, backend, &mask, checker, max_new_tokens)?;
            rows.push(TransferRow {
                detected_at,
                evaluated_at: eval_len,
                grid,
            });
        }
    }
    Ok(TransferMatrix { rows })
}

/// Paired grids for the two masking scopes plus per-cell accuracy deltas
/// (prefill+decode minus decode-only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeComparison {
    pub prefill_and_decode: EvalGrid,
    pub decode_only: EvalGrid,
    pub deltas: Vec<(usize, f64, f64)>,
}

pub fn scope_comparison(
    dataset: &[NiahExample],
    backend: &dyn Backend,
    mask_heads: &[crate::backend::HeadAddr],
    label: &str,
    checker: &dyn AnswerChecker,
    max_new_tokens: usize,
) -> Result<ScopeComparison> {
    let run = |scope: MaskScope| -> Result<EvalGrid> {
        let mask = if mask_heads.is_empty() {
            MaskSpec::identity(scope)
        } else {
            MaskSpec::new(mask_heads.iter().copied(), scope, label)?
        };
        run_masked_eval(dataset, backend, &mask, checker, max_new_tokens)
    };
    let prefill_and_decode = run(MaskScope::PrefillAndDecode)?;
    let decode_only = run(MaskScope::DecodeOnly)?;
    let deltas = prefill_and_decode
        .cells
        .iter()
        .zip(&decode_only.cells)
        .map(|(p, d)| {
            (
                p.context_length,
                p.depth_fraction,
                p.accuracy() - d.accuracy(),
            )
        })
        .collect();
    Ok(ScopeComparison {
        prefill_and_decode,
        decode_only,
        deltas,
    })
}
