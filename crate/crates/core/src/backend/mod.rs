//! The model contract: prompt layout, span-aggregated attention masses,
//! masked greedy generation, and head inventory.
//!
//! Scoring only ever needs the *mass* a head's question rows place on a
//! token span (the inner sums of the retrieval score), so the contract is
//! mass-level: backends aggregate post-softmax attention internally and
//! never export full attention matrices, which would be O(heads x tokens^2)
//! at long context. A debug dump of raw question rows exists for small
//! prompts only.
//!
//! Two reference backends ship here: [`oracle::OracleBackend`], whose
//! attention rows are constructed so a known planted head set attends the
//! needle, and [`toy::ToyBackend`], a tiny randomly initialized decoder with
//! real softmax attention that exercises the numerical paths the oracle
//! bypasses.

pub mod oracle;
pub mod tokenize;
pub mod toy;

use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::niah::{Answer, NiahExample, UnitKind};

/// Raw attention dumps are limited to prompts of at most this many tokens.
pub const DUMP_MAX_TOKENS: usize = 512;

/// (layer, head) address, unique within a backend inventory.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct HeadAddr {
    pub layer: u32,
    pub head: u32,
}

impl HeadAddr {
    pub fn new(layer: u32, head: u32) -> Self {
        HeadAddr { layer, head }
    }
}

impl std::fmt::Display for HeadAddr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "L{}H{}", self.layer, self.head)
    }
}

/// One attention head plus its selection eligibility. Heads on
/// sliding-window layers cannot perform long-range retrieval and are
/// excluded from selection pools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: u32,
    pub head: u32,
    pub eligible: bool,
}

impl HeadId {
    pub fn addr(&self) -> HeadAddr {
        HeadAddr::new(self.layer, self.head)
    }
}

/// Which layers attend globally (eligible) versus through a sliding window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EligibilityPattern {
    /// Every layer attends globally.
    AllGlobal,
    /// One global layer per `period` layers, at positions
    /// `layer % period == period - 1`.
    GlobalEvery { period: u32 },
    /// Explicit per-layer global flags.
    Explicit(Vec<bool>),
}

impl EligibilityPattern {
    pub fn layer_is_global(&self, layer: u32, n_layers: u32) -> Result<bool> {
        match self {
            EligibilityPattern::AllGlobal => Ok(true),
            EligibilityPattern::GlobalEvery { period } => {
                if *period == 0 {
                    return Err(Error::config("eligibility period must be positive"));
                }
                Ok(layer % period == period - 1)
            }
            EligibilityPattern::Explicit(flags) => {
                if flags.len() != n_layers as usize {
                    return Err(Error::config(format!(
                        "eligibility pattern has {} entries for {} layers",
                        flags.len(),
                        n_layers
                    )));
                }
                Ok(flags[layer as usize])
            }
        }
    }
}

/// Layer-major inventory enumeration shared by all backends.
pub fn build_inventory(
    n_layers: u32,
    n_heads: u32,
    pattern: &EligibilityPattern,
) -> Result<Vec<HeadId>> {
    let mut out = Vec::with_capacity((n_layers * n_heads) as usize);
    for layer in 0..n_layers {
        let eligible = pattern.layer_is_global(layer, n_layers)?;
        for head in 0..n_heads {
            out.push(HeadId {
                layer,
                head,
                eligible,
            });
        }
    }
    Ok(out)
}

/// Half-open token interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Self {
        TokenSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, token: usize) -> bool {
        token >= self.start && token < self.end
    }

    pub fn overlap_len(&self, other: &TokenSpan) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        hi.saturating_sub(lo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSpan {
    pub unit_id: String,
    pub span: TokenSpan,
    pub kind: UnitKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeedleSpan {
    pub span: TokenSpan,
    pub kind: UnitKind,
}

/// Deterministic tokenized view of one example: where every unit, the
/// question, and the needle landed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptLayout {
    pub total_tokens: usize,
    pub question_span: TokenSpan,
    pub unit_spans: Vec<UnitSpan>,
    pub needle_spans: Vec<NeedleSpan>,
    pub question_text: String,
    /// Template/marker tokens outside units and question.
    pub template_tokens: usize,
    /// First token index of the context region.
    pub context_start: usize,
    /// One past the last context token.
    pub context_end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Answer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub needle_unit_id: Option<String>,
    /// Materialized token ids; backends with analytic attention omit them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<u32>>,
}

impl PromptLayout {
    pub fn unit_span(&self, unit_id: &str) -> Option<&UnitSpan> {
        self.unit_spans.iter().find(|u| u.unit_id == unit_id)
    }

    /// Basic structural checks: spans in bounds, needle spans inside
    /// exactly one unit, pairwise-disjoint needle spans.
    pub fn validate(&self) -> Result<()> {
        if self.question_span.end > self.total_tokens {
            return Err(Error::InvalidLayout("question span out of bounds".into()));
        }
        for u in &self.unit_spans {
            if u.span.end > self.total_tokens {
                return Err(Error::InvalidLayout(format!(
                    "unit {} span out of bounds",
                    u.unit_id
                )));
            }
            if u.span.overlap_len(&self.question_span) != 0 {
                return Err(Error::InvalidLayout(format!(
                    "unit {} overlaps the question span",
                    u.unit_id
                )));
            }
        }
        for (i, n) in self.needle_spans.iter().enumerate() {
            if n.span.end > self.total_tokens || n.span.is_empty() {
                return Err(Error::InvalidLayout(format!("needle span {i} invalid")));
            }
            let containing = self
                .unit_spans
                .iter()
                .filter(|u| u.span.start <= n.span.start && n.span.end <= u.span.end)
                .count();
            if containing != 1 {
                return Err(Error::InvalidLayout(format!(
                    "needle span {i} contained in {containing} unit spans, expected 1"
                )));
            }
            for m in &self.needle_spans[i + 1..] {
                if n.span.overlap_len(&m.span) != 0 {
                    return Err(Error::InvalidLayout("needle spans overlap".into()));
                }
            }
        }
        Ok(())
    }
}

/// Selects a span known to a layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpanSel {
    /// A context unit by id.
    Unit(String),
    /// A needle span by index.
    Needle(usize),
    /// Everything attendable: `[0, question_end)`. Under causal masking the
    /// per-row sum over this span is the full softmax normalization.
    FullPrompt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedSpan {
    pub key: String,
    pub span: TokenSpan,
}

/// Resolves selectors against a layout, rejecting unknown ids.
pub fn resolve_spans(layout: &PromptLayout, sels: &[SpanSel]) -> Result<Vec<ResolvedSpan>> {
    sels.iter()
        .map(|sel| match sel {
            SpanSel::Unit(id) => layout
                .unit_span(id)
                .map(|u| ResolvedSpan {
                    key: format!("unit:{id}"),
                    span: u.span,
                })
                .ok_or_else(|| Error::SpanLookup(format!("unit:{id}"))),
            SpanSel::Needle(i) => layout
                .needle_spans
                .get(*i)
                .map(|n| ResolvedSpan {
                    key: format!("needle:{i}"),
                    span: n.span,
                })
                .ok_or_else(|| Error::SpanLookup(format!("needle:{i}"))),
            SpanSel::FullPrompt => Ok(ResolvedSpan {
                key: "full_prompt".to_string(),
                span: TokenSpan::new(0, layout.question_span.end),
            }),
        })
        .collect()
}

/// When a mask applies: while the model processes the prompt and during
/// every decode step, or only during decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskScope {
    PrefillAndDecode,
    DecodeOnly,
}

/// Heads whose post-softmax attention weights are zeroed (no
/// renormalization of the remaining mass; masked head outputs become zero
/// vectors).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub heads: BTreeSet<HeadAddr>,
    pub scope: MaskScope,
    pub label: String,
}

pub const IDENTITY_MASK_LABEL: &str = "identity";

impl MaskSpec {
    pub fn new(
        heads: impl IntoIterator<Item = HeadAddr>,
        scope: MaskScope,
        label: impl Into<String>,
    ) -> Result<Self> {
        let heads: BTreeSet<HeadAddr> = heads.into_iter().collect();
        let label = label.into();
        if heads.is_empty() && label != IDENTITY_MASK_LABEL {
            return Err(Error::invalid_input(
                "mask head set may only be empty for the identity mask",
            ));
        }
        Ok(MaskSpec {
            heads,
            scope,
            label,
        })
    }

    /// The do-nothing mask; masking the empty set reproduces unmasked
    /// outputs bit-for-bit.
    pub fn identity(scope: MaskScope) -> Self {
        MaskSpec {
            heads: BTreeSet::new(),
            scope,
            label: IDENTITY_MASK_LABEL.to_string(),
        }
    }

    /// Union of several head address collections, deduped by (layer, head).
    pub fn union_of(
        sets: &[&[HeadAddr]],
        scope: MaskScope,
        label: impl Into<String>,
    ) -> Result<Self> {
        let heads: BTreeSet<HeadAddr> = sets.iter().flat_map(|s| s.iter().copied()).collect();
        MaskSpec::new(heads, scope, label)
    }

    pub fn is_identity(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn masks(&self, layer: u32, head: u32) -> bool {
        self.heads.contains(&HeadAddr::new(layer, head))
    }

    /// Masks must address heads that exist in the inventory.
    pub fn validate_against(&self, n_layers: u32, n_heads: u32) -> Result<()> {
        for addr in &self.heads {
            if addr.layer >= n_layers || addr.head >= n_heads {
                return Err(Error::config(format!(
                    "mask head {addr} outside inventory ({n_layers} layers x {n_heads} heads)"
                )));
            }
        }
        Ok(())
    }
}

/// Span-aggregated attention masses: per (head, span), the mean over
/// question tokens of summed post-softmax attention from that question
/// token to the span's tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMassTable {
    heads: Vec<HeadId>,
    spans: Vec<ResolvedSpan>,
    /// Head-major: `masses[head_idx * spans.len() + span_idx]`.
    masses: Vec<f64>,
}

impl AttentionMassTable {
    pub fn new(heads: Vec<HeadId>, spans: Vec<ResolvedSpan>, masses: Vec<f64>) -> Self {
        debug_assert_eq!(heads.len() * spans.len(), masses.len());
        AttentionMassTable {
            heads,
            spans,
            masses,
        }
    }

    pub fn heads(&self) -> &[HeadId] {
        &self.heads
    }

    pub fn spans(&self) -> &[ResolvedSpan] {
        &self.spans
    }

    pub fn mass_at(&self, head_idx: usize, span_idx: usize) -> f64 {
        self.masses[head_idx * self.spans.len() + span_idx]
    }

    pub fn mass_for(&self, addr: HeadAddr, span_key: &str) -> Option<f64> {
        let head_idx = self.heads.iter().position(|h| h.addr() == addr)?;
        let span_idx = self.spans.iter().position(|s| s.key == span_key)?;
        Some(self.mass_at(head_idx, span_idx))
    }

    /// Sum of this head's masses across all requested spans.
    pub fn span_total(&self, head_idx: usize) -> f64 {
        (0..self.spans.len()).map(|s| self.mass_at(head_idx, s)).sum()
    }

    /// Span totals for every head, in inventory order.
    pub fn per_head_totals(&self) -> Vec<f64> {
        (0..self.heads.len()).map(|h| self.span_total(h)).collect()
    }
}

/// Greedy-decoded output plus optional per-step capture.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub text: String,
    pub tokens: Vec<u32>,
    /// Per decode step, per head (inventory order): attention mass the new
    /// token's rows place on the needle spans. Present only when the
    /// backend is configured to capture and the layout has needle spans.
    pub step_needle_masses: Option<Vec<Vec<f64>>>,
}

/// The model contract. Implementations are immutable once constructed and
/// safe to share across threads; every method is a deterministic function
/// of its arguments.
pub trait Backend {
    fn model_id(&self) -> &str;

    fn context_window(&self) -> usize;

    /// Complete, stable head enumeration with eligibility flags.
    fn head_inventory(&self) -> Vec<HeadId>;

    /// Deterministic tokenized layout. `question_override` (used for the
    /// null question) replaces the question in the same prompt slot without
    /// moving context spans.
    fn layout_prompt(
        &self,
        example: &NiahExample,
        question_override: Option<&str>,
    ) -> Result<PromptLayout>;

    /// One mass per (head, requested span). With a mask, masked heads
    /// report exactly 0 and remaining heads reflect re-execution with the
    /// mask applied, not post-hoc renormalization.
    fn attention_masses(
        &self,
        layout: &PromptLayout,
        spans: &[SpanSel],
        mask: Option<&MaskSpec>,
    ) -> Result<AttentionMassTable>;

    /// Greedy decoding under the mask's scope.
    fn generate(
        &self,
        layout: &PromptLayout,
        mask: Option<&MaskSpec>,
        max_new_tokens: usize,
    ) -> Result<Generation>;

    /// Raw question-row export for small prompts (debugging and
    /// cross-checking the aggregated masses).
    fn dump_attention(
        &self,
        layout: &PromptLayout,
        mask: Option<&MaskSpec>,
    ) -> Result<AttentionDump>;
}

/// Self-describing container of raw per-head question rows.
///
/// Binary layout: magic `HSAD`, then little-endian u32 version, u32 layer
/// count, u32 head count, u64 question start, u64 question end, u64 total
/// tokens, followed by `layers x heads x question_len` rows of
/// `total_tokens` f64 values (row-major, little-endian).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDump {
    pub layers: u32,
    pub heads: u32,
    pub question_start: u64,
    pub question_end: u64,
    pub total_tokens: u64,
    rows: Vec<f64>,
}

const DUMP_MAGIC: &[u8; 4] = b"HSAD";
const DUMP_VERSION: u32 = 1;

impl AttentionDump {
    pub fn new(
        layers: u32,
        heads: u32,
        question_start: u64,
        question_end: u64,
        total_tokens: u64,
        rows: Vec<f64>,
    ) -> Self {
        let q_len = (question_end - question_start) as usize;
        debug_assert_eq!(
            rows.len(),
            layers as usize * heads as usize * q_len * total_tokens as usize
        );
        AttentionDump {
            layers,
            heads,
            question_start,
            question_end,
            total_tokens,
            rows,
        }
    }

    pub fn question_len(&self) -> usize {
        (self.question_end - self.question_start) as usize
    }

    /// The attention row of question token `q_idx` (relative to question
    /// start) for the given head.
    pub fn row(&self, layer: u32, head: u32, q_idx: usize) -> &[f64] {
        let q_len = self.question_len();
        let n = self.total_tokens as usize;
        let row_idx = ((layer as usize * self.heads as usize) + head as usize) * q_len + q_idx;
        &self.rows[row_idx * n..(row_idx + 1) * n]
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&DUMP_VERSION.to_le_bytes())?;
        w.write_all(&self.layers.to_le_bytes())?;
        w.write_all(&self.heads.to_le_bytes())?;
        w.write_all(&self.question_start.to_le_bytes())?;
        w.write_all(&self.question_end.to_le_bytes())?;
        w.write_all(&self.total_tokens.to_le_bytes())?;
        for v in &self.rows {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::Format("bad attention dump magic".into()));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != DUMP_VERSION {
            return Err(Error::Format(format!(
                "attention dump version {version} unsupported"
            )));
        }
        r.read_exact(&mut u32buf)?;
        let layers = u32::from_le_bytes(u32buf);
        r.read_exact(&mut u32buf)?;
        let heads = u32::from_le_bytes(u32buf);
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let question_start = u64::from_le_bytes(u64buf);
        r.read_exact(&mut u64buf)?;
        let question_end = u64::from_le_bytes(u64buf);
        r.read_exact(&mut u64buf)?;
        let total_tokens = u64::from_le_bytes(u64buf);
        let q_len = question_end.saturating_sub(question_start) as usize;
        let count = layers as usize * heads as usize * q_len * total_tokens as usize;
        let mut rows = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut u64buf)?;
            rows.push(f64::from_le_bytes(u64buf));
        }
        Ok(AttentionDump {
            layers,
            heads,
            question_start,
            question_end,
            total_tokens,
            rows,
        })
    }
}
