//! Distractor pools: the text passages and images a haystack samples from.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

use super::{ContextUnit, ImageHandle, CHARS_PER_TOKEN, UNIT_TOKENS};

/// Word stock for the synthetic corpus generator.
pub(crate) const WORDS: &[&str] = &[
    "harbor", "lantern", "meadow", "granite", "orchard", "willow", "copper", "ledger", "canal",
    "quarry", "beacon", "saddle", "timber", "anchor", "mill", "ferry", "hollow", "ridge",
    "terrace", "garden", "vault", "bridge", "market", "tower", "cellar", "archive", "signal",
    "compass", "furnace", "paddock", "estuary", "grove", "causeway", "windmill", "jetty",
    "observatory", "reservoir", "foundry", "crossing", "parish", "manor", "wharf", "summit",
    "prairie", "lagoon", "basin", "plateau", "thicket", "dune", "glacier",
];

/// The sampling source for haystack construction: text units grouped to an
/// estimated 500 tokens each, plus an image list. Units are built by greedy
/// grouping in corpus order; sampling order is the caller's concern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistractorPool {
    text_units: Vec<ContextUnit>,
    image_units: Vec<ContextUnit>,
}

impl DistractorPool {
    pub fn new(text_units: Vec<ContextUnit>, image_units: Vec<ContextUnit>) -> Self {
        DistractorPool {
            text_units,
            image_units,
        }
    }

    pub fn text_units(&self) -> &[ContextUnit] {
        &self.text_units
    }

    pub fn image_units(&self) -> &[ContextUnit] {
        &self.image_units
    }

    /// Mean estimated tokens of one text unit; used for budget planning.
    pub fn mean_text_tokens(&self) -> f64 {
        if self.text_units.is_empty() {
            return 0.0;
        }
        self.text_units
            .iter()
            .map(|u| u.estimated_tokens as f64)
            .sum::<f64>()
            / self.text_units.len() as f64
    }

    /// Mean estimated tokens of one image unit.
    pub fn mean_image_tokens(&self) -> Option<f64> {
        if self.image_units.is_empty() {
            return None;
        }
        Some(
            self.image_units
                .iter()
                .map(|u| u.estimated_tokens as f64)
                .sum::<f64>()
                / self.image_units.len() as f64,
        )
    }

    /// Groups a newline-delimited corpus into ~500-token units in corpus
    /// order. A trailing unit under half size is merged into its
    /// predecessor so unit sizes stay near-uniform.
    pub fn from_corpus(corpus: &str, images: Vec<ContextUnit>) -> Result<Self> {
        let target_chars = UNIT_TOKENS * CHARS_PER_TOKEN;
        let mut units: Vec<String> = Vec::new();
        let mut current = String::new();
        for line in corpus.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if !current.is_empty() {
                current.push(' ');
            }
            current.push_str(line);
            if current.chars().count() >= target_chars {
                units.push(std::mem::take(&mut current));
            }
        }
        // a sub-half-size tail would skew unit statistics; drop it unless
        // it is all we have
        if !current.is_empty() && (units.is_empty() || current.chars().count() >= target_chars / 2)
        {
            units.push(current);
        }
        if units.is_empty() {
            return Err(Error::invalid_input("corpus produced no text units"));
        }
        let text_units = units
            .into_iter()
            .enumerate()
            .map(|(i, body)| ContextUnit::text(format!("pool-text-{i:05}"), body))
            .collect::<Result<Vec<_>>>()?;
        Ok(DistractorPool {
            text_units,
            image_units: images,
        })
    }

    /// Fully synthetic pool: seeded word-salad passages and placeholder
    /// images. The default data source for self-contained runs.
    pub fn synthetic(
        seed: u64,
        n_text_units: usize,
        n_image_units: usize,
        vision_tokens_per_image: usize,
    ) -> Result<Self> {
        let corpus = synthetic_corpus(seed, n_text_units);
        let mut images = Vec::with_capacity(n_image_units);
        let mut rng = SeededRng::derive(seed, "pool-images");
        for i in 0..n_image_units {
            let handle = ImageHandle::synthetic(format!("pool-img-{i:05}-{:08x}", rng.next_u64()));
            images.push(ContextUnit::image(
                format!("pool-img-{i:05}"),
                handle,
                vision_tokens_per_image,
            ));
        }
        DistractorPool::from_corpus(&corpus, images)
    }
}

/// Deterministic filler text sized to yield `n_units` pool units.
fn synthetic_corpus(seed: u64, n_units: usize) -> String {
    let target_chars = n_units * UNIT_TOKENS * CHARS_PER_TOKEN;
    let mut rng = SeededRng::derive(seed, "pool-corpus");
    let mut out = String::with_capacity(target_chars + 256);
    let mut sentence_len = 0usize;
    while out.chars().count() < target_chars {
        if sentence_len == 0 {
            sentence_len = 6 + rng.below(10);
            out.push_str("The ");
        }
        out.push_str(WORDS[rng.below(WORDS.len())]);
        sentence_len -= 1;
        if sentence_len == 0 {
            out.push_str(".\n");
        } else {
            out.push(' ');
        }
    }
    out
}
