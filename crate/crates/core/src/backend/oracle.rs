//! Planted-head oracle backend.
//!
//! Attention rows are constructed directly rather than computed: planted
//! heads place a concentration `c` (default 0.95) on needle-span tokens and
//! spread the remainder uniformly over the other context tokens; non-planted
//! heads attend uniformly; optional positional-bias heads attend a fixed
//! leading window regardless of the question. Under the null question the
//! planted heads fall back to uniform attention, so calibration recovers
//! exactly `c` minus the uniform needle share.
//!
//! Generation copies the unit most attended by the live (unmasked) planted
//! heads and emits the example's gold answer when that unit is the needle,
//! else a fallback marker. The copy decision resolves at a configurable
//! phase (prefill or decode), which is what gives decode-only masking its
//! distinct behavior.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::niah::{Answer, NiahExample};

use super::tokenize::{PromptTokenizer, TemplateId, VisionTokenMode};
use super::{
    build_inventory, resolve_spans, AttentionDump, AttentionMassTable, Backend, EligibilityPattern,
    Generation, HeadAddr, HeadId, MaskScope, MaskSpec, PromptLayout, SpanSel, TokenSpan,
    DUMP_MAX_TOKENS,
};

/// Which phase resolves the oracle's copy decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalPhase {
    /// Retrieval happens while processing the prompt; decode-only masking
    /// arrives too late to disturb it.
    Prefill,
    /// Retrieval happens at every decode step.
    Decode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub model_id: String,
    pub layers: u32,
    pub heads: u32,
    pub eligibility: EligibilityPattern,
    /// Heads constructed to attend the needle under the real question.
    pub planted: Vec<HeadAddr>,
    /// Needle attention mass of a planted head.
    pub concentration: f64,
    /// Question-independent heads attending the first
    /// `bias_prefix_tokens` context tokens with `bias_concentration` mass.
    pub bias_heads: Vec<HeadAddr>,
    pub bias_prefix_tokens: usize,
    pub bias_concentration: f64,
    /// The uninformative question that suppresses planted attention.
    pub null_question: String,
    pub retrieval_phase: RetrievalPhase,
    /// Emitted when no live planted head can reach the needle.
    pub fallback_text: String,
    pub context_window: usize,
    pub vision_tokens_per_image: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            model_id: "oracle".to_string(),
            layers: 4,
            heads: 4,
            eligibility: EligibilityPattern::AllGlobal,
            planted: vec![HeadAddr::new(2, 1)],
            concentration: 0.95,
            bias_heads: Vec::new(),
            bias_prefix_tokens: 8,
            bias_concentration: 0.9,
            null_question: "N/A".to_string(),
            retrieval_phase: RetrievalPhase::Prefill,
            fallback_text: "[no-evidence]".to_string(),
            context_window: 1 << 21,
            vision_tokens_per_image: 64,
        }
    }
}

pub struct OracleBackend {
    config: OracleConfig,
    inventory: Vec<HeadId>,
    planted: BTreeSet<HeadAddr>,
    bias: BTreeSet<HeadAddr>,
    tokenizer: PromptTokenizer,
}

impl OracleBackend {
    pub fn new(config: OracleConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.concentration) {
            return Err(Error::config("concentration must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&config.bias_concentration) {
            return Err(Error::config("bias concentration must lie in [0, 1]"));
        }
        let inventory = build_inventory(config.layers, config.heads, &config.eligibility)?;
        let planted: BTreeSet<HeadAddr> = config.planted.iter().copied().collect();
        let bias: BTreeSet<HeadAddr> = config.bias_heads.iter().copied().collect();
        if let Some(overlap) = planted.intersection(&bias).next() {
            return Err(Error::config(format!(
                "head {overlap} is both planted and bias"
            )));
        }
        for addr in planted.iter().chain(bias.iter()) {
            let found = inventory.iter().find(|h| h.addr() == *addr);
            match found {
                None => {
                    return Err(Error::config(format!("head {addr} outside inventory")));
                }
                Some(h) if !h.eligible => {
                    return Err(Error::config(format!(
                        "head {addr} sits on a sliding-window layer and cannot retrieve"
                    )));
                }
                _ => {}
            }
        }
        let tokenizer = PromptTokenizer::new(
            1024,
            VisionTokenMode::Fixed {
                tokens: config.vision_tokens_per_image,
            },
            TemplateId::Markered,
        )?;
        Ok(OracleBackend {
            config,
            inventory,
            planted,
            bias,
            tokenizer,
        })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    pub fn planted_heads(&self) -> Vec<HeadAddr> {
        self.planted.iter().copied().collect()
    }

    fn is_null_question(&self, layout: &PromptLayout) -> bool {
        layout.question_text == self.config.null_question
    }

    /// Mass one head's question rows place on `span`, derived from the
    /// constructed row shape. Rows are identical across question tokens,
    /// so the question mean equals any single row's value.
    fn head_span_mass(&self, addr: HeadAddr, layout: &PromptLayout, span: &TokenSpan) -> f64 {
        let context = TokenSpan::new(layout.context_start, layout.context_end);
        let context_len = context.len();
        if context_len == 0 {
            return 0.0;
        }
        let in_context = span.overlap_len(&context);

        let needle_total: usize = layout.needle_spans.iter().map(|n| n.span.len()).sum();
        let needle_overlap: usize = layout
            .needle_spans
            .iter()
            .map(|n| n.span.overlap_len(span))
            .sum();

        if self.planted.contains(&addr) && !self.is_null_question(layout) && needle_total > 0 {
            let c = self.config.concentration;
            let other_len = context_len - needle_total;
            let other_overlap = in_context - needle_overlap;
            let needle_part = c * needle_overlap as f64 / needle_total as f64;
            let other_part = if other_len == 0 {
                // needle covers the whole context; fold the remainder in
                (1.0 - c) * needle_overlap as f64 / needle_total as f64
            } else {
                (1.0 - c) * other_overlap as f64 / other_len as f64
            };
            return needle_part + other_part;
        }

        if self.bias.contains(&addr) {
            let prefix_len = self.config.bias_prefix_tokens.min(context_len);
            let prefix = TokenSpan::new(context.start, context.start + prefix_len);
            let b = self.config.bias_concentration;
            let prefix_overlap = span.overlap_len(&prefix);
            let rest_len = context_len - prefix_len;
            let rest_overlap = in_context - prefix_overlap;
            let prefix_part = if prefix_len == 0 {
                0.0
            } else {
                b * prefix_overlap as f64 / prefix_len as f64
            };
            let rest_part = if rest_len == 0 {
                (1.0 - b) * prefix_overlap as f64 / prefix_len.max(1) as f64
            } else {
                (1.0 - b) * rest_overlap as f64 / rest_len as f64
            };
            return prefix_part + rest_part;
        }

        in_context as f64 / context_len as f64
    }

    /// The copy decision: the unit most attended by live planted heads.
    fn copy_decision(&self, layout: &PromptLayout, live_planted: &BTreeSet<HeadAddr>) -> String {
        if live_planted.is_empty() {
            return self.config.fallback_text.clone();
        }
        let mut best: Option<(f64, usize)> = None;
        for (idx, unit) in layout.unit_spans.iter().enumerate() {
            let mass: f64 = live_planted
                .iter()
                .map(|addr| self.head_span_mass(*addr, layout, &unit.span))
                .sum();
            let better = match best {
                None => true,
                Some((best_mass, _)) => mass > best_mass,
            };
            if better {
                best = Some((mass, idx));
            }
        }
        let Some((_, idx)) = best else {
            return self.config.fallback_text.clone();
        };
        let unit = &layout.unit_spans[idx];
        if Some(&unit.unit_id) == layout.needle_unit_id.as_ref() {
            match &layout.gold {
                Some(Answer::Text(s)) => s.clone(),
                Some(Answer::OptionIndex(i)) => i.to_string(),
                None => self.config.fallback_text.clone(),
            }
        } else {
            format!("[copied:{}]", unit.unit_id)
        }
    }

    fn check_window(&self, layout: &PromptLayout) -> Result<()> {
        if layout.total_tokens > self.config.context_window {
            return Err(Error::ContextOverflow {
                required: layout.total_tokens,
                available: self.config.context_window,
            });
        }
        Ok(())
    }
}

impl Backend for OracleBackend {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn context_window(&self) -> usize {
        self.config.context_window
    }

    fn head_inventory(&self) -> Vec<HeadId> {
        self.inventory.clone()
    }

    fn layout_prompt(
        &self,
        example: &NiahExample,
        question_override: Option<&str>,
    ) -> Result<PromptLayout> {
        let layout = self.tokenizer.layout(example, question_override, false)?;
        self.check_window(&layout)?;
        Ok(layout)
    }

    fn attention_masses(
        &self,
        layout: &PromptLayout,
        spans: &[SpanSel],
        mask: Option<&MaskSpec>,
    ) -> Result<AttentionMassTable> {
        if let Some(m) = mask {
            m.validate_against(self.config.layers, self.config.heads)?;
        }
        let resolved = resolve_spans(layout, spans)?;
        let mut masses = Vec::with_capacity(self.inventory.len() * resolved.len());
        for head in &self.inventory {
            // masses are prefill-phase captures: a decode-only mask does
            // not touch them, matching the toy backend's row semantics
            let masked = mask.is_some_and(|m| {
                m.scope == MaskScope::PrefillAndDecode && m.masks(head.layer, head.head)
            });
            for r in &resolved {
                if masked {
                    masses.push(0.0);
                } else {
                    masses.push(self.head_span_mass(head.addr(), layout, &r.span));
                }
            }
        }
        Ok(AttentionMassTable::new(
            self.inventory.clone(),
            resolved,
            masses,
        ))
    }

    fn generate(
        &self,
        layout: &PromptLayout,
        mask: Option<&MaskSpec>,
        max_new_tokens: usize,
    ) -> Result<Generation> {
        if max_new_tokens == 0 {
            return Err(Error::invalid_input("max_new_tokens must be at least 1"));
        }
        self.check_window(layout)?;
        if let Some(m) = mask {
            m.validate_against(self.config.layers, self.config.heads)?;
        }

        // The mask disturbs the copy decision only if it is active during
        // the phase where this oracle resolves retrieval.
        let mask_active_at_decision = mask.is_some_and(|m| {
            !m.is_identity()
                && (m.scope == MaskScope::PrefillAndDecode
                    || self.config.retrieval_phase == RetrievalPhase::Decode)
        });
        let live: BTreeSet<HeadAddr> = if mask_active_at_decision {
            let m = mask.unwrap();
            self.planted
                .iter()
                .copied()
                .filter(|addr| !m.masks(addr.layer, addr.head))
                .collect()
        } else {
            self.planted.clone()
        };

        let text = self.copy_decision(layout, &live);
        Ok(Generation {
            text,
            tokens: Vec::new(),
            step_needle_masses: None,
        })
    }

    fn dump_attention(
        &self,
        layout: &PromptLayout,
        mask: Option<&MaskSpec>,
    ) -> Result<AttentionDump> {
        if layout.total_tokens > DUMP_MAX_TOKENS {
            return Err(Error::invalid_input(format!(
                "attention dump limited to {DUMP_MAX_TOKENS}-token prompts, got {}",
                layout.total_tokens
            )));
        }
        if let Some(m) = mask {
            m.validate_against(self.config.layers, self.config.heads)?;
        }
        let n = layout.total_tokens;
        let q = layout.question_span;
        let mut rows = Vec::with_capacity(
            self.inventory.len() * q.len() * n,
        );
        for head in &self.inventory {
            let masked = mask.is_some_and(|m| {
                m.scope == MaskScope::PrefillAndDecode && m.masks(head.layer, head.head)
            });
            for _q_idx in 0..q.len() {
                for t in 0..n {
                    if masked {
                        rows.push(0.0);
                    } else {
                        let point = TokenSpan::new(t, t + 1);
                        rows.push(self.head_span_mass(head.addr(), layout, &point));
                    }
                }
            }
        }
        Ok(AttentionDump::new(
            self.config.layers,
            self.config.heads,
            q.start as u64,
            q.end as u64,
            n as u64,
            rows,
        ))
    }
}
