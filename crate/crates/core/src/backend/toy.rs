//! Tiny randomly initialized decoder with real softmax attention.
//!
//! Small enough to run dense forward passes in tests, but numerically
//! honest: pre-LN residual blocks, causal scaled dot-product attention
//! (optionally grouped-query), post-softmax head masking without
//! renormalization, and greedy decoding. Masses requested through the
//! backend contract are aggregated inside the forward pass; full rows are
//! only materialized by the debug dump on small prompts.
//!
//! "Image" units are blocks of reserved-range token ids, so multimodal
//! prompts exercise the same numeric paths without rasterization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::niah::NiahExample;
use crate::rng::SeededRng;

use super::tokenize::{PromptTokenizer, TemplateId, VisionTokenMode};
use super::{
    build_inventory, resolve_spans, AttentionDump, AttentionMassTable, Backend,
    EligibilityPattern, Generation, HeadId, MaskScope, MaskSpec, PromptLayout, ResolvedSpan,
    SpanSel, TokenSpan, DUMP_MAX_TOKENS,
};

/// LayerNorm epsilon; part of the architecture contract that independent
/// recomputations must share.
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub model_id: String,
    pub layers: usize,
    pub heads: usize,
    /// Key/value heads; query heads share them in groups when fewer than
    /// `heads`. Scoring and masking stay per query head.
    pub kv_heads: usize,
    pub d_model: usize,
    pub vocab: u32,
    pub seed: u64,
    pub context_window: usize,
    pub eligibility: EligibilityPattern,
    pub vision: VisionTokenMode,
    pub template: TemplateId,
    /// Capture per-decode-step needle masses during generation.
    pub capture_step_masses: bool,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            model_id: "toy".to_string(),
            layers: 4,
            heads: 4,
            kv_heads: 4,
            d_model: 64,
            vocab: 512,
            seed: 1234,
            context_window: 2048,
            eligibility: EligibilityPattern::AllGlobal,
            vision: VisionTokenMode::Fixed { tokens: 16 },
            template: TemplateId::Markered,
            capture_step_masses: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyLayerWeights {
    pub ln1_g: Vec<f64>,
    pub ln1_b: Vec<f64>,
    /// d_model x (heads * head_dim)
    pub wq: Vec<f64>,
    /// d_model x (kv_heads * head_dim)
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    /// (heads * head_dim) x d_model
    pub wo: Vec<f64>,
    pub ln2_g: Vec<f64>,
    pub ln2_b: Vec<f64>,
    /// d_model x (4 * d_model)
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// (4 * d_model) x d_model
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ToyWeights {
    /// vocab x d_model
    pub embed: Vec<f64>,
    pub layers: Vec<ToyLayerWeights>,
    pub final_ln_g: Vec<f64>,
    pub final_ln_b: Vec<f64>,
    /// d_model x vocab
    pub unembed: Vec<f64>,
}

fn init_matrix(rng: &mut SeededRng, rows: usize, cols: usize, scale: f64) -> Vec<f64> {
    (0..rows * cols).map(|_| rng.uniform(-scale, scale)).collect()
}

impl ToyWeights {
    fn generate(cfg: &ToyConfig) -> Self {
        let d = cfg.d_model;
        let hd = d / cfg.heads;
        let proj = 1.0 / (d as f64).sqrt();
        let mut rng = SeededRng::derive(cfg.seed, "toy-weights");
        let embed = init_matrix(&mut rng, cfg.vocab as usize, d, 0.5);
        let mut layers = Vec::with_capacity(cfg.layers);
        for _ in 0..cfg.layers {
            layers.push(ToyLayerWeights {
                ln1_g: vec![1.0; d],
                ln1_b: vec![0.0; d],
                wq: init_matrix(&mut rng, d, cfg.heads * hd, proj),
                wk: init_matrix(&mut rng, d, cfg.kv_heads * hd, proj),
                wv: init_matrix(&mut rng, d, cfg.kv_heads * hd, proj),
                wo: init_matrix(&mut rng, cfg.heads * hd, d, proj),
                ln2_g: vec![1.0; d],
                ln2_b: vec![0.0; d],
                w1: init_matrix(&mut rng, d, 4 * d, proj),
                b1: vec![0.0; 4 * d],
                w2: init_matrix(&mut rng, 4 * d, d, proj),
                b2: vec![0.0; d],
            });
        }
        let final_ln_g = vec![1.0; d];
        let final_ln_b = vec![0.0; d];
        let unembed = init_matrix(&mut rng, d, cfg.vocab as usize, proj);
        ToyWeights {
            embed,
            layers,
            final_ln_g,
            final_ln_b,
            unembed,
        }
    }
}

/// Sinusoidal positional encoding, the standard interleaved sin/cos form.
pub fn positional_encoding(position: usize, d_model: usize) -> Vec<f64> {
    let mut out = vec![0.0; d_model];
    for k in 0..d_model / 2 {
        let rate = (position as f64) / 10000f64.powf(2.0 * k as f64 / d_model as f64);
        out[2 * k] = rate.sin();
        out[2 * k + 1] = rate.cos();
    }
    out
}

fn layer_norm(x: &[f64], n: usize, d: usize, gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean: f64 = row.iter().sum::<f64>() / d as f64;
        let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for j in 0..d {
            out[i * d + j] = (row[j] - mean) * inv * gamma[j] + beta[j];
        }
    }
    out
}

/// y[n x m] = x[n x d] @ w[d x m]
fn matmul(x: &[f64], w: &[f64], n: usize, d: usize, m: usize) -> Vec<f64> {
    let mut y = vec![0.0; n * m];
    for i in 0..n {
        for k in 0..d {
            let xv = x[i * d + k];
            if xv == 0.0 {
                continue;
            }
            let wrow = &w[k * m..(k + 1) * m];
            let yrow = &mut y[i * m..(i + 1) * m];
            for j in 0..m {
                yrow[j] += xv * wrow[j];
            }
        }
    }
    y
}

/// Aggregates question-row attention into per-(head, span) sums in-pass.
struct SpanAccumulator<'a> {
    rows: TokenSpan,
    spans: &'a [ResolvedSpan],
    /// [global_head][span]: sum over captured rows of span attention.
    sums: Vec<f64>,
    n_heads_total: usize,
}

impl<'a> SpanAccumulator<'a> {
    fn new(rows: TokenSpan, spans: &'a [ResolvedSpan], layers: usize, heads: usize) -> Self {
        SpanAccumulator {
            rows,
            spans,
            sums: vec![0.0; layers * heads * spans.len()],
            n_heads_total: layers * heads,
        }
    }

    fn add_row(&mut self, layer: usize, head: usize, heads: usize, row_pos: usize, attn: &[f64]) {
        if !self.rows.contains(row_pos) {
            return;
        }
        let g = layer * heads + head;
        for (s, span) in self.spans.iter().enumerate() {
            let lo = span.span.start.min(attn.len());
            let hi = span.span.end.min(attn.len());
            let sum: f64 = attn[lo..hi].iter().sum();
            self.sums[g * self.spans.len() + s] += sum;
        }
    }

    fn into_masses(self, question_len: usize) -> Vec<f64> {
        let q = question_len.max(1) as f64;
        let mut out = Vec::with_capacity(self.n_heads_total * self.spans.len());
        for g in 0..self.n_heads_total {
            for s in 0..self.spans.len() {
                out.push(self.sums[g * self.spans.len() + s] / q);
            }
        }
        out
    }
}

/// Materializes full question rows for the debug dump.
struct RowRecorder {
    rows: TokenSpan,
    total_tokens: usize,
    /// [layer][head][q_idx][t]
    data: Vec<f64>,
    heads: usize,
}

impl RowRecorder {
    fn new(rows: TokenSpan, total_tokens: usize, layers: usize, heads: usize) -> Self {
        RowRecorder {
            rows,
            total_tokens,
            data: vec![0.0; layers * heads * rows.len() * total_tokens],
            heads,
        }
    }

    fn record(&mut self, layer: usize, head: usize, row_pos: usize, attn: &[f64]) {
        if !self.rows.contains(row_pos) {
            return;
        }
        let q_idx = row_pos - self.rows.start;
        let q_len = self.rows.len();
        let base =
            (((layer * self.heads) + head) * q_len + q_idx) * self.total_tokens;
        self.data[base..base + attn.len()].copy_from_slice(attn);
    }
}

pub struct ToyBackend {
    config: ToyConfig,
    weights: ToyWeights,
    inventory: Vec<HeadId>,
    tokenizer: PromptTokenizer,
}

impl ToyBackend {
    pub fn new(config: ToyConfig) -> Result<Self> {
        if config.d_model == 0 || config.heads == 0 || config.layers == 0 {
            return Err(Error::config("toy dimensions must be positive"));
        }
        if !config.d_model.is_multiple_of(config.heads) {
            return Err(Error::config("d_model must divide evenly across heads"));
        }
        if config.kv_heads == 0 || !config.heads.is_multiple_of(config.kv_heads) {
            return Err(Error::config("query heads must group evenly over kv heads"));
        }
        if !config.d_model.is_multiple_of(2) {
            return Err(Error::config("d_model must be even for sin/cos positions"));
        }
        let inventory = build_inventory(
            config.layers as u32,
            config.heads as u32,
            &config.eligibility,
        )?;
        let tokenizer = PromptTokenizer::new(config.vocab, config.vision, config.template)?;
        let weights = ToyWeights::generate(&config);
        Ok(ToyBackend {
            config,
            weights,
            inventory,
            tokenizer,
        })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    /// Raw parameters, exposed so independent dense recomputations can
    /// cross-check the aggregated masses.
    pub fn weights(&self) -> &ToyWeights {
        &self.weights
    }

    fn check_window(&self, required: usize) -> Result<()> {
        if required > self.config.context_window {
            return Err(Error::ContextOverflow {
                required,
                available: self.config.context_window,
            });
        }
        Ok(())
    }

    fn layout_tokens<'a>(&self, layout: &'a PromptLayout) -> Result<&'a [u32]> {
        layout
            .tokens
            .as_deref()
            .ok_or_else(|| Error::InvalidLayout("layout carries no token ids".into()))
    }

    /// Whether the mask zeroes this head's row at `row_pos`, given where
    /// the prompt ends. Decode-only masks leave prompt rows untouched.
    fn row_masked(
        mask: Option<&MaskSpec>,
        layer: usize,
        head: usize,
        row_pos: usize,
        prompt_len: usize,
    ) -> bool {
        let Some(m) = mask else {
            return false;
        };
        if !m.masks(layer as u32, head as u32) {
            return false;
        }
        match m.scope {
            MaskScope::PrefillAndDecode => true,
            MaskScope::DecodeOnly => row_pos >= prompt_len,
        }
    }

    /// Full forward pass over `tokens`; returns logits of the last
    /// position. Attention rows visit the capture hooks after masking.
    #[allow(clippy::needless_range_loop)] // index loops mirror the math
    fn forward(
        &self,
        tokens: &[u32],
        prompt_len: usize,
        mask: Option<&MaskSpec>,
        mut span_acc: Option<&mut SpanAccumulator<'_>>,
        mut row_rec: Option<&mut RowRecorder>,
    ) -> Vec<f64> {
        let n = tokens.len();
        let d = self.config.d_model;
        let heads = self.config.heads;
        let kv_heads = self.config.kv_heads;
        let hd = d / heads;
        let group = heads / kv_heads;
        let scale = 1.0 / (hd as f64).sqrt();

        let mut x = vec![0.0; n * d];
        for (i, tok) in tokens.iter().enumerate() {
            let e = &self.weights.embed[(*tok as usize) * d..(*tok as usize + 1) * d];
            let p = positional_encoding(i, d);
            for j in 0..d {
                x[i * d + j] = e[j] + p[j];
            }
        }

        let mut attn_row = vec![0.0; n];
        for (l, lw) in self.weights.layers.iter().enumerate() {
            let h = layer_norm(&x, n, d, &lw.ln1_g, &lw.ln1_b);
            let q = matmul(&h, &lw.wq, n, d, heads * hd);
            let k = matmul(&h, &lw.wk, n, d, kv_heads * hd);
            let v = matmul(&h, &lw.wv, n, d, kv_heads * hd);

            let mut attn_out = vec![0.0; n * heads * hd];
            for head in 0..heads {
                let kv = head / group;
                for i in 0..n {
                    let masked = Self::row_masked(mask, l, head, i, prompt_len);
                    attn_row[..=i].fill(0.0);
                    if !masked {
                        let qi = &q[i * heads * hd + head * hd..i * heads * hd + (head + 1) * hd];
                        let mut max_score = f64::NEG_INFINITY;
                        for t in 0..=i {
                            let kt =
                                &k[t * kv_heads * hd + kv * hd..t * kv_heads * hd + (kv + 1) * hd];
                            let mut s = 0.0;
                            for j in 0..hd {
                                s += qi[j] * kt[j];
                            }
                            let s = s * scale;
                            attn_row[t] = s;
                            if s > max_score {
                                max_score = s;
                            }
                        }
                        let mut z = 0.0;
                        for t in 0..=i {
                            let e = (attn_row[t] - max_score).exp();
                            attn_row[t] = e;
                            z += e;
                        }
                        for t in 0..=i {
                            attn_row[t] /= z;
                        }
                    }
                    // hooks see the post-softmax, post-mask row
                    if let Some(acc) = span_acc.as_deref_mut() {
                        acc.add_row(l, head, heads, i, &attn_row[..=i]);
                    }
                    if let Some(rec) = row_rec.as_deref_mut() {
                        rec.record(l, head, i, &attn_row[..=i]);
                    }
                    if !masked {
                        let out =
                            &mut attn_out[i * heads * hd + head * hd..i * heads * hd + (head + 1) * hd];
                        for t in 0..=i {
                            let a = attn_row[t];
                            if a == 0.0 {
                                continue;
                            }
                            let vt =
                                &v[t * kv_heads * hd + kv * hd..t * kv_heads * hd + (kv + 1) * hd];
                            for j in 0..hd {
                                out[j] += a * vt[j];
                            }
                        }
                    }
                }
            }

            let proj = matmul(&attn_out, &lw.wo, n, heads * hd, d);
            for i in 0..n * d {
                x[i] += proj[i];
            }

            let h2 = layer_norm(&x, n, d, &lw.ln2_g, &lw.ln2_b);
            let mut m1 = matmul(&h2, &lw.w1, n, d, 4 * d);
            for i in 0..n {
                for j in 0..4 * d {
                    let val = m1[i * 4 * d + j] + lw.b1[j];
                    m1[i * 4 * d + j] = if val > 0.0 { val } else { 0.0 };
                }
            }
            let m2 = matmul(&m1, &lw.w2, n, 4 * d, d);
            for i in 0..n {
                for j in 0..d {
                    x[i * d + j] += m2[i * d + j] + lw.b2[j];
                }
            }
        }

        let final_h = layer_norm(
            &x[(n - 1) * d..n * d],
            1,
            d,
            &self.weights.final_ln_g,
            &self.weights.final_ln_b,
        );
        matmul(&final_h, &self.weights.unembed, 1, d, self.config.vocab as usize)
    }
}

impl Backend for ToyBackend {
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
        let layout = self.tokenizer.layout(example, question_override, true)?;
        self.check_window(layout.total_tokens)?;
        Ok(layout)
    }

    fn attention_masses(
        &self,
        layout: &PromptLayout,
        spans: &[SpanSel],
        mask: Option<&MaskSpec>,
    ) -> Result<AttentionMassTable> {
        if let Some(m) = mask {
            m.validate_against(self.config.layers as u32, self.config.heads as u32)?;
        }
        let tokens = self.layout_tokens(layout)?;
        self.check_window(tokens.len())?;
        let resolved = resolve_spans(layout, spans)?;
        let mut acc = SpanAccumulator::new(
            layout.question_span,
            &resolved,
            self.config.layers,
            self.config.heads,
        );
        self.forward(tokens, tokens.len(), mask, Some(&mut acc), None);
        let masses = acc.into_masses(layout.question_span.len());
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
        if let Some(m) = mask {
            m.validate_against(self.config.layers as u32, self.config.heads as u32)?;
        }
        let prompt = self.layout_tokens(layout)?;
        let prompt_len = prompt.len();
        self.check_window(prompt_len + max_new_tokens)?;

        let needle_spans: Vec<ResolvedSpan> = layout
            .needle_spans
            .iter()
            .enumerate()
            .map(|(i, n)| ResolvedSpan {
                key: format!("needle:{i}"),
                span: n.span,
            })
            .collect();
        let capture = self.config.capture_step_masses && !needle_spans.is_empty();

        let mut tokens: Vec<u32> = prompt.to_vec();
        let mut generated = Vec::with_capacity(max_new_tokens);
        let mut step_masses: Vec<Vec<f64>> = Vec::new();

        for _ in 0..max_new_tokens {
            let logits = if capture {
                let last = TokenSpan::new(tokens.len() - 1, tokens.len());
                let mut acc = SpanAccumulator::new(
                    last,
                    &needle_spans,
                    self.config.layers,
                    self.config.heads,
                );
                let logits = self.forward(&tokens, prompt_len, mask, Some(&mut acc), None);
                let masses = acc.into_masses(1);
                let per_head: Vec<f64> = (0..self.config.layers * self.config.heads)
                    .map(|g| {
                        (0..needle_spans.len())
                            .map(|s| masses[g * needle_spans.len() + s])
                            .sum()
                    })
                    .collect();
                step_masses.push(per_head);
                logits
            } else {
                self.forward(&tokens, prompt_len, mask, None, None)
            };

            let mut best = 0usize;
            for (i, &v) in logits.iter().enumerate() {
                if v > logits[best] {
                    best = i;
                }
            }
            let tok = best as u32;
            generated.push(tok);
            tokens.push(tok);
        }

        let text = generated
            .iter()
            .map(|t| format!("t{t}"))
            .collect::<Vec<_>>()
            .join(" ");
        Ok(Generation {
            text,
            tokens: generated,
            step_needle_masses: capture.then_some(step_masses),
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
            m.validate_against(self.config.layers as u32, self.config.heads as u32)?;
        }
        let tokens = self.layout_tokens(layout)?;
        let mut rec = RowRecorder::new(
            layout.question_span,
            layout.total_tokens,
            self.config.layers,
            self.config.heads,
        );
        self.forward(tokens, tokens.len(), mask, None, Some(&mut rec));
        Ok(AttentionDump::new(
            self.config.layers as u32,
            self.config.heads as u32,
            layout.question_span.start as u64,
            layout.question_span.end as u64,
            layout.total_tokens as u64,
            rec.data,
        ))
    }
}
