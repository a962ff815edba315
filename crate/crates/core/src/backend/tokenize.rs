//! Shared prompt tokenization and layout for the reference backends.
//!
//! Text maps to one token per four characters (hashed into the text id
//! range); images expand to pseudo-visual tokens derived deterministically
//! from the image content hash, in a reserved id range. The prompt shape is
//! context first, question last, so head roles transfer between detection
//! and candidate-scoring prompts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::niah::{ImageSource, NiahExample, Payload, CHARS_PER_TOKEN};
use crate::rng::SeededRng;

use super::{NeedleSpan, PromptLayout, TokenSpan, UnitSpan};

/// How many pseudo-visual tokens one image expands to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisionTokenMode {
    /// Every image costs the same fixed count.
    Fixed { tokens: usize },
    /// Content-dependent count in `[min, max]`, derived from the image
    /// content hash.
    Dynamic { min: usize, max: usize },
}

impl VisionTokenMode {
    pub fn count_for(&self, content_hash: &str) -> usize {
        match *self {
            VisionTokenMode::Fixed { tokens } => tokens.max(1),
            VisionTokenMode::Dynamic { min, max } => {
                let lo = min.max(1);
                let hi = max.max(lo);
                let h = fnv64(content_hash.as_bytes());
                lo + (h % (hi - lo + 1) as u64) as usize
            }
        }
    }
}

/// Prompt framing around units and question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    /// Units then question, no extra tokens.
    Plain,
    /// A begin marker, units, a separator, then the question.
    Markered,
}

pub const TOKEN_PAD: u32 = 0;
pub const TOKEN_BOS: u32 = 1;
pub const TOKEN_SEP: u32 = 2;
const FIRST_TEXT_TOKEN: u32 = 3;

fn fnv64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTokenizer {
    pub vocab: u32,
    pub vision: VisionTokenMode,
    pub template: TemplateId,
}

impl PromptTokenizer {
    pub fn new(vocab: u32, vision: VisionTokenMode, template: TemplateId) -> Result<Self> {
        if vocab < 16 {
            return Err(Error::config("vocabulary must hold at least 16 ids"));
        }
        Ok(PromptTokenizer {
            vocab,
            vision,
            template,
        })
    }

    fn vision_base(&self) -> u32 {
        self.vocab / 2
    }

    /// ceil(chars/4) text token ids, each hashed from its 4-char chunk.
    pub fn text_tokens(&self, text: &str) -> Vec<u32> {
        let chars: Vec<char> = text.chars().collect();
        let range = self.vision_base() - FIRST_TEXT_TOKEN;
        chars
            .chunks(CHARS_PER_TOKEN)
            .map(|chunk| {
                let s: String = chunk.iter().collect();
                FIRST_TEXT_TOKEN + (fnv64(s.as_bytes()) % u64::from(range)) as u32
            })
            .collect()
    }

    /// Pseudo-visual token ids for an image content hash.
    pub fn vision_tokens(&self, content_hash: &str, count: usize) -> Vec<u32> {
        let base = self.vision_base();
        let range = self.vocab - base;
        let mut rng = SeededRng::new(fnv64(content_hash.as_bytes()));
        (0..count)
            .map(|_| base + (rng.next_u64() % u64::from(range)) as u32)
            .collect()
    }

    /// Tokens for one unit, plus the embedded-needle sub-range when the
    /// unit is a composite image (needle tokens surrounded by host tokens).
    pub fn unit_tokens(&self, payload: &Payload) -> (Vec<u32>, Option<(usize, usize)>) {
        match payload {
            Payload::Text(t) => (self.text_tokens(t), None),
            Payload::Image(handle) => match &handle.source {
                ImageSource::Composite {
                    host,
                    embedded,
                    offset_frac,
                } => {
                    let host_count = self.vision.count_for(&host.content_hash);
                    let needle_count = self.vision.count_for(&embedded.content_hash);
                    let host_tokens = self.vision_tokens(&host.content_hash, host_count);
                    let needle_tokens = self.vision_tokens(&embedded.content_hash, needle_count);
                    let pre = ((offset_frac * host_count as f64).floor() as usize).min(host_count);
                    let mut tokens = Vec::with_capacity(host_count + needle_count);
                    tokens.extend_from_slice(&host_tokens[..pre]);
                    tokens.extend_from_slice(&needle_tokens);
                    tokens.extend_from_slice(&host_tokens[pre..]);
                    (tokens, Some((pre, pre + needle_count)))
                }
                _ => {
                    let count = self.vision.count_for(&handle.content_hash);
                    (self.vision_tokens(&handle.content_hash, count), None)
                }
            },
        }
    }

    /// Builds the full layout. With `materialize` false only spans are
    /// computed (analytic backends need no token ids).
    pub fn layout(
        &self,
        example: &NiahExample,
        question_override: Option<&str>,
        materialize: bool,
    ) -> Result<PromptLayout> {
        let question_text = question_override.unwrap_or(&example.question).to_string();
        if question_text.is_empty() {
            return Err(Error::invalid_input("question must be non-empty"));
        }

        let mut tokens: Vec<u32> = Vec::new();
        let mut cursor = 0usize;
        let mut template_tokens = 0usize;

        if matches!(self.template, TemplateId::Markered) {
            if materialize {
                tokens.push(TOKEN_BOS);
            }
            cursor += 1;
            template_tokens += 1;
        }
        let context_start = cursor;

        let mut unit_spans = Vec::with_capacity(example.units.len());
        let mut needle_spans = Vec::new();
        let needle_info = example.needle.as_ref();

        for unit in &example.units {
            let (unit_toks, sub) = self.unit_tokens(&unit.payload);
            let span = TokenSpan::new(cursor, cursor + unit_toks.len());
            if let Some(info) = needle_info {
                if info.unit_id == unit.unit_id {
                    let needle_span = match (info.embedded, sub) {
                        (true, Some((s, e))) => TokenSpan::new(cursor + s, cursor + e),
                        _ => span,
                    };
                    needle_spans.push(NeedleSpan {
                        span: needle_span,
                        kind: unit.kind,
                    });
                }
            }
            unit_spans.push(UnitSpan {
                unit_id: unit.unit_id.clone(),
                span,
                kind: unit.kind,
            });
            if materialize {
                tokens.extend_from_slice(&unit_toks);
            }
            cursor = span.end;
        }
        let context_end = cursor;

        if matches!(self.template, TemplateId::Markered) {
            if materialize {
                tokens.push(TOKEN_SEP);
            }
            cursor += 1;
            template_tokens += 1;
        }

        let question_tokens = self.text_tokens(&question_text);
        let question_span = TokenSpan::new(cursor, cursor + question_tokens.len());
        if materialize {
            tokens.extend_from_slice(&question_tokens);
        }
        cursor = question_span.end;

        let layout = PromptLayout {
            total_tokens: cursor,
            question_span,
            unit_spans,
            needle_spans,
            question_text,
            template_tokens,
            context_start,
            context_end,
            gold: needle_info.map(|n| n.gold.clone()),
            needle_unit_id: needle_info.map(|n| n.unit_id.clone()),
            tokens: materialize.then_some(tokens),
        };
        layout.validate()?;
        Ok(layout)
    }
}
