//! Independent dense reference for the toy decoder: re-derives the
//! forward pass from exported weights with straightforward nested loops,
//! materializes the full post-softmax attention tensor, and computes
//! question-to-span scores by brute-force summation. Shares no forward
//! code with the implementation under test.

#![allow(clippy::needless_range_loop)] // plain loops keep the reference naive

use headscope::backend::toy::{positional_encoding, ToyBackend, LN_EPS};
use headscope::backend::PromptLayout;

/// Full attention tensor indexed [layer][head][query][key].
pub type AttentionTensor = Vec<Vec<Vec<Vec<f64>>>>;

fn layer_norm_row(row: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let denom = (var + LN_EPS).sqrt();
    row.iter()
        .enumerate()
        .map(|(j, v)| (v - mean) / denom * gamma[j] + beta[j])
        .collect()
}

fn mat_vec(mat: &[f64], cols: usize, row: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (r, x) in row.iter().enumerate() {
        for (c, o) in out.iter_mut().enumerate() {
            *o += x * mat[r * cols + c];
        }
    }
    out
}

/// Materializes every attention row of an unmasked prefill pass.
pub fn full_attention(backend: &ToyBackend, tokens: &[u32]) -> AttentionTensor {
    let cfg = backend.config();
    let w = backend.weights();
    let n = tokens.len();
    let d = cfg.d_model;
    let heads = cfg.heads;
    let kv_heads = cfg.kv_heads;
    let head_dim = d / heads;
    let group = heads / kv_heads;

    let mut hidden: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let tok = tokens[i] as usize;
            let pos = positional_encoding(i, d);
            (0..d).map(|j| w.embed[tok * d + j] + pos[j]).collect()
        })
        .collect();

    let mut tensor: AttentionTensor = Vec::with_capacity(cfg.layers);
    for lw in &w.layers {
        let normed: Vec<Vec<f64>> = hidden
            .iter()
            .map(|row| layer_norm_row(row, &lw.ln1_g, &lw.ln1_b))
            .collect();
        let q: Vec<Vec<f64>> = normed
            .iter()
            .map(|row| mat_vec(&lw.wq, heads * head_dim, row))
            .collect();
        let k: Vec<Vec<f64>> = normed
            .iter()
            .map(|row| mat_vec(&lw.wk, kv_heads * head_dim, row))
            .collect();
        let v: Vec<Vec<f64>> = normed
            .iter()
            .map(|row| mat_vec(&lw.wv, kv_heads * head_dim, row))
            .collect();

        let mut layer_rows: Vec<Vec<Vec<f64>>> = Vec::with_capacity(heads);
        let mut concat = vec![vec![0.0; heads * head_dim]; n];
        for h in 0..heads {
            let kv = h / group;
            let mut head_rows: Vec<Vec<f64>> = Vec::with_capacity(n);
            for i in 0..n {
                // logits over the causal prefix
                let mut logits = Vec::with_capacity(i + 1);
                for t in 0..=i {
                    let mut dot = 0.0;
                    for j in 0..head_dim {
                        dot += q[i][h * head_dim + j] * k[t][kv * head_dim + j];
                    }
                    logits.push(dot / (head_dim as f64).sqrt());
                }
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = exps.iter().sum();
                let mut row = vec![0.0; n];
                for (t, e) in exps.iter().enumerate() {
                    row[t] = e / z;
                }
                for t in 0..=i {
                    for j in 0..head_dim {
                        concat[i][h * head_dim + j] += row[t] * v[t][kv * head_dim + j];
                    }
                }
                head_rows.push(row);
            }
            layer_rows.push(head_rows);
        }
        tensor.push(layer_rows);

        for i in 0..n {
            let projected = mat_vec(&lw.wo, d, &concat[i]);
            for j in 0..d {
                hidden[i][j] += projected[j];
            }
        }
        for i in 0..n {
            let normed = layer_norm_row(&hidden[i], &lw.ln2_g, &lw.ln2_b);
            let mut mid = mat_vec(&lw.w1, 4 * d, &normed);
            for (c, m) in mid.iter_mut().enumerate() {
                *m = (*m + lw.b1[c]).max(0.0);
            }
            let out = mat_vec(&lw.w2, d, &mid);
            for j in 0..d {
                hidden[i][j] += out[j] + lw.b2[j];
            }
        }
    }
    tensor
}

/// Brute-force retrieval score: for each head, mean over question tokens
/// of summed attention into the needle spans.
pub fn brute_force_scores(tensor: &AttentionTensor, layout: &PromptLayout) -> Vec<f64> {
    let q = layout.question_span;
    let mut out = Vec::new();
    for layer_rows in tensor {
        for head_rows in layer_rows {
            let mut total = 0.0;
            for q_pos in q.start..q.end {
                for needle in &layout.needle_spans {
                    for t in needle.span.start..needle.span.end {
                        total += head_rows[q_pos][t];
                    }
                }
            }
            out.push(total / q.len() as f64);
        }
    }
    out
}
