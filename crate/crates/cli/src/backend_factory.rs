//! Builds a live backend from the config's backend block.

use headscope::adapter::{bind, BindOptions, EngineSpec, FusionStyle};
use headscope::backend::oracle::{OracleBackend, OracleConfig};
use headscope::backend::toy::{ToyBackend, ToyConfig};
use headscope::backend::{Backend, HeadAddr};
use headscope::error::Result;

use crate::config::{BackendConfig, BackendKind};

pub fn build_backend(cfg: &BackendConfig) -> Result<Box<dyn Backend>> {
    match cfg.kind {
        BackendKind::Oracle => {
            let planted: Vec<HeadAddr> = if cfg.planted.is_empty() {
                vec![HeadAddr::new(cfg.layers / 2, cfg.heads / 2)]
            } else {
                cfg.planted
                    .iter()
                    .map(|&(l, h)| HeadAddr::new(l, h))
                    .collect()
            };
            let oracle = OracleBackend::new(OracleConfig {
                model_id: cfg.model_id.clone(),
                layers: cfg.layers,
                heads: cfg.heads,
                eligibility: cfg.eligibility(),
                planted,
                concentration: cfg.concentration,
                bias_heads: Vec::new(),
                bias_prefix_tokens: 8,
                bias_concentration: 0.9,
                null_question: headscope::detector::NULL_QUESTION.to_string(),
                retrieval_phase: cfg.retrieval_phase,
                fallback_text: "[no-evidence]".to_string(),
                context_window: cfg.context_window.unwrap_or(1 << 21),
                vision_tokens_per_image: cfg.vision_tokens,
            })?;
            Ok(Box::new(oracle))
        }
        BackendKind::Toy => {
            let toy = ToyBackend::new(ToyConfig {
                model_id: cfg.model_id.clone(),
                layers: cfg.layers as usize,
                heads: cfg.heads as usize,
                kv_heads: cfg.kv_heads.unwrap_or(cfg.heads) as usize,
                d_model: cfg.d_model,
                vocab: cfg.vocab,
                seed: cfg.seed,
                context_window: cfg.context_window.unwrap_or(2048),
                eligibility: cfg.eligibility(),
                vision: cfg.vision_mode(),
                template: cfg.template(),
                capture_step_masses: false,
            })?;
            Ok(Box::new(toy))
        }
        BackendKind::Binding => {
            let binding = bind(
                &cfg.model_id,
                &BindOptions {
                    layers: cfg.layers,
                    heads: cfg.heads,
                    kv_heads: cfg.kv_heads,
                    eligibility: cfg.eligibility(),
                    vision: cfg.vision_mode(),
                    fusion: FusionStyle::DecoderInterleaved,
                    context_window: cfg.context_window.unwrap_or(2048),
                    template: cfg.template(),
                    engine: EngineSpec::Reference {
                        seed: cfg.seed,
                        d_model: cfg.d_model,
                        vocab: cfg.vocab,
                    },
                },
            )?;
            Ok(Box::new(binding))
        }
    }
}
