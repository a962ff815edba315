//! Bindings from the backend contract to declared production
//! architectures: inventory and eligibility mapping, vision-token
//! accounting (fixed or content-dynamic), prompt templating, and in-pass
//! attention-mass aggregation.
//!
//! Execution sits behind [`EngineSpec`]. The reference engine synthesizes
//! a deterministic decoder at the bound dimensions so every contract
//! surface is exercisable end to end; binding an external checkpoint
//! requires attention hooks this build does not ship and reports them in a
//! capability error. Cross-attention vision-language architectures are
//! declared unsupported the same way.

use serde::{Deserialize, Serialize};

use crate::backend::tokenize::{TemplateId, VisionTokenMode};
use crate::backend::toy::{ToyBackend, ToyConfig};
use crate::backend::{
    AttentionDump, AttentionMassTable, Backend, EligibilityPattern, Generation, HeadId, MaskSpec,
    PromptLayout, SpanSel,
};
use crate::error::{Error, Result};
use crate::niah::NiahExample;

/// How vision and text streams meet in the architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStyle {
    /// Vision tokens interleave with text in one decoder stream.
    DecoderInterleaved,
    /// Vision enters through cross-attention blocks; unsupported here.
    CrossAttention,
}

/// What executes the forward passes behind a binding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineSpec {
    /// Deterministic synthesized decoder at the bound dimensions.
    Reference { seed: u64, d_model: usize, vocab: u32 },
    /// A production checkpoint on disk. Binding it needs runtime hooks
    /// (post-softmax capture, placeholder expansion) not shipped here.
    ExternalCheckpoint { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindOptions {
    pub layers: u32,
    pub heads: u32,
    /// Key/value heads for grouped-query attention; defaults to `heads`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kv_heads: Option<u32>,
    pub eligibility: EligibilityPattern,
    pub vision: VisionTokenMode,
    pub fusion: FusionStyle,
    pub context_window: usize,
    pub template: TemplateId,
    pub engine: EngineSpec,
}

impl BindOptions {
    /// A small reference binding for tests and self-contained runs.
    pub fn reference(layers: u32, heads: u32, seed: u64) -> Self {
        BindOptions {
            layers,
            heads,
            kv_heads: None,
            eligibility: EligibilityPattern::AllGlobal,
            vision: VisionTokenMode::Fixed { tokens: 16 },
            fusion: FusionStyle::DecoderInterleaved,
            context_window: 2048,
            template: TemplateId::Markered,
            engine: EngineSpec::Reference {
                seed,
                d_model: (heads as usize) * 2,
                vocab: 512,
            },
        }
    }
}

/// Immutable description of what was bound; byte-stable for identical
/// options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindingDescriptor {
    pub model_id: String,
    pub layers: u32,
    pub heads: u32,
    pub kv_heads: u32,
    pub inventory_size: usize,
    pub eligible_heads: usize,
    pub eligibility: EligibilityPattern,
    pub vision: VisionTokenMode,
    pub fusion: FusionStyle,
    pub context_window: usize,
    pub template: TemplateId,
}

/// A bound model exposing the full backend contract.
pub struct ModelBinding {
    descriptor: BindingDescriptor,
    engine: ToyBackend,
}

/// Resolves options into a live binding.
pub fn bind(model_id: &str, options: &BindOptions) -> Result<ModelBinding> {
    if model_id.is_empty() {
        return Err(Error::config("model id must be non-empty"));
    }
    if matches!(options.fusion, FusionStyle::CrossAttention) {
        return Err(Error::Capability {
            missing: vec![
                "cross-attention vision fusion".to_string(),
                "per-block encoder attention capture".to_string(),
            ],
        });
    }
    let (seed, d_model, vocab) = match &options.engine {
        EngineSpec::Reference { seed, d_model, vocab } => (*seed, *d_model, *vocab),
        EngineSpec::ExternalCheckpoint { path } => {
            return Err(Error::Capability {
                missing: vec![
                    format!("checkpoint loader for {path}"),
                    "post-softmax attention capture hook".to_string(),
                    "processor placeholder expansion for vision spans".to_string(),
                ],
            });
        }
    };
    let kv_heads = options.kv_heads.unwrap_or(options.heads);
    if kv_heads == 0 || !options.heads.is_multiple_of(kv_heads) {
        return Err(Error::config(
            "query heads must group evenly over kv heads",
        ));
    }

    let engine = ToyBackend::new(ToyConfig {
        model_id: model_id.to_string(),
        layers: options.layers as usize,
        heads: options.heads as usize,
        kv_heads: kv_heads as usize,
        d_model,
        vocab,
        seed,
        context_window: options.context_window,
        eligibility: options.eligibility.clone(),
        vision: options.vision,
        template: options.template,
        capture_step_masses: false,
    })?;

    let inventory = engine.head_inventory();
    let eligible_heads = inventory.iter().filter(|h| h.eligible).count();
    let descriptor = BindingDescriptor {
        model_id: model_id.to_string(),
        layers: options.layers,
        heads: options.heads,
        kv_heads,
        inventory_size: inventory.len(),
        eligible_heads,
        eligibility: options.eligibility.clone(),
        vision: options.vision,
        fusion: options.fusion,
        context_window: options.context_window,
        template: options.template,
    };
    Ok(ModelBinding { descriptor, engine })
}

impl ModelBinding {
    pub fn descriptor(&self) -> &BindingDescriptor {
        &self.descriptor
    }

    /// Masses aggregated inside the forward pass, masked heads zeroed
    /// before aggregation. Same contract as `Backend::attention_masses`;
    /// kept as a named entry point for adapter callers.
    pub fn capture_masses(
        &self,
        layout: &PromptLayout,
        spans: &[SpanSel],
        mask: Option<&MaskSpec>,
    ) -> Result<AttentionMassTable> {
        self.engine.attention_masses(layout, spans, mask)
    }
}

impl Backend for ModelBinding {
    fn model_id(&self) -> &str {
        &self.descriptor.model_id
    }

    fn context_window(&self) -> usize {
        self.descriptor.context_window
    }

    fn head_inventory(&self) -> Vec<HeadId> {
        self.engine.head_inventory()
    }

    fn layout_prompt(
        &self,
        example: &NiahExample,
        question_override: Option<&str>,
    ) -> Result<PromptLayout> {
        self.engine.layout_prompt(example, question_override)
    }

    fn attention_masses(
        &self,
        layout: &PromptLayout,
        spans: &[SpanSel],
        mask: Option<&MaskSpec>,
    ) -> Result<AttentionMassTable> {
        self.engine.attention_masses(layout, spans, mask)
    }

    fn generate(
        &self,
        layout: &PromptLayout,
        mask: Option<&MaskSpec>,
        max_new_tokens: usize,
    ) -> Result<Generation> {
        self.engine.generate(layout, mask, max_new_tokens)
    }

    fn dump_attention(
        &self,
        layout: &PromptLayout,
        mask: Option<&MaskSpec>,
    ) -> Result<AttentionDump> {
        self.engine.dump_attention(layout, mask)
    }
}
