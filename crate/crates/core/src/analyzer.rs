//! Head-set structure metrics: score-mass sparsity, overlap between
//! equal-size selections, layer distributions, and base-vs-adapted
//! preservation.

use serde::{Deserialize, Serialize};

use crate::backend::HeadAddr;
use crate::detector::{HeadScoreTable, HeadSet};
use crate::error::{Error, Result};

/// Minimum fraction of all heads whose positive calibrated scores cover
/// `threshold` of the total positive score mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityResult {
    pub rho: f64,
    pub k_heads: usize,
    /// Denominator: the full inventory, ineligible heads included, so
    /// percentages compare across hybrid and uniform architectures.
    pub total_heads: usize,
    pub positive_mass: f64,
    pub threshold: f64,
}

/// Shared fraction between two equal-size head sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapResult {
    pub ratio: f64,
    pub shared: usize,
    pub set_a_id: String,
    pub set_b_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Shared,
    OnlyA,
    OnlyB,
}

/// Per-layer head counts for one partition of a set comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerHistogram {
    pub partition: Partition,
    /// counts[layer]
    pub counts: Vec<usize>,
    pub head_count: usize,
    /// Mean layer index; NaN-free: None when the partition is empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_layer: Option<f64>,
}

fn histogram(addrs: &[HeadAddr], n_layers: u32, partition: Partition) -> LayerHistogram {
    let mut counts = vec![0usize; n_layers as usize];
    for a in addrs {
        counts[a.layer as usize] += 1;
    }
    let head_count = addrs.len();
    let mean_layer = if head_count == 0 {
        None
    } else {
        Some(addrs.iter().map(|a| a.layer as f64).sum::<f64>() / head_count as f64)
    };
    LayerHistogram {
        partition,
        counts,
        head_count,
        mean_layer,
    }
}

/// Computes the sparsity metric: clamp negatives to zero, sort descending,
/// take the smallest prefix whose cumulative sum reaches
/// `threshold x` total positive mass (closed inequality).
pub fn sparsity_rho(table: &HeadScoreTable, threshold: f64) -> Result<SparsityResult> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid_input(format!(
            "sparsity threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let mut positives: Vec<f64> = table
        .scores
        .iter()
        .map(|s| s.calibrated.max(0.0))
        .collect();
    let total: f64 = positives.iter().sum();
    if total <= 0.0 {
        return Err(Error::NoPositiveMass);
    }
    positives.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));

    let target = threshold * total;
    let mut cumulative = 0.0;
    let mut k = positives.len();
    for (i, s) in positives.iter().enumerate() {
        cumulative += s;
        if cumulative >= target {
            k = i + 1;
            break;
        }
    }
    Ok(SparsityResult {
        rho: k as f64 / table.total_heads() as f64,
        k_heads: k,
        total_heads: table.total_heads(),
        positive_mass: total,
        threshold,
    })
}

/// |A intersect B| / |A| for equal-size sets; symmetric by construction.
pub fn head_set_overlap(a: &HeadSet, b: &HeadSet) -> Result<OverlapResult> {
    if a.len() != b.len() {
        return Err(Error::InvalidComparison(format!(
            "overlap is defined for equal-size sets, got {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidComparison("overlap of empty sets".into()));
    }
    let b_addrs: std::collections::BTreeSet<HeadAddr> = b.addrs().into_iter().collect();
    let shared = a.addrs().iter().filter(|x| b_addrs.contains(x)).count();
    Ok(OverlapResult {
        ratio: shared as f64 / a.len() as f64,
        shared,
        set_a_id: a.source.clone(),
        set_b_id: b.source.clone(),
    })
}

/// Layer histograms for one set, or the shared/only-a/only-b partitions of
/// two sets.
pub fn layer_distribution(a: &HeadSet, b: Option<&HeadSet>) -> Result<Vec<LayerHistogram>> {
    let Some(b) = b else {
        return Ok(vec![histogram(&a.addrs(), a.n_layers, Partition::Shared)]);
    };
    if !a.same_address_space(b) {
        return Err(Error::InvalidComparison(
            "layer distribution needs identical (layer, head) address spaces".into(),
        ));
    }
    let a_addrs: std::collections::BTreeSet<HeadAddr> = a.addrs().into_iter().collect();
    let b_addrs: std::collections::BTreeSet<HeadAddr> = b.addrs().into_iter().collect();
    let shared: Vec<HeadAddr> = a_addrs.intersection(&b_addrs).copied().collect();
    let only_a: Vec<HeadAddr> = a_addrs.difference(&b_addrs).copied().collect();
    let only_b: Vec<HeadAddr> = b_addrs.difference(&a_addrs).copied().collect();
    Ok(vec![
        histogram(&shared, a.n_layers, Partition::Shared),
        histogram(&only_a, a.n_layers, Partition::OnlyA),
        histogram(&only_b, a.n_layers, Partition::OnlyB),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Preserved,
    New,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreservationResult {
    pub shared: usize,
    pub new: usize,
    /// One label per adapted head, in the adapted set's order.
    pub labels: Vec<(HeadAddr, Provenance)>,
}

/// Labels each head of the adapted selection as preserved from the base
/// selection or newly entered. Requires identical address spaces; this
/// compares addresses, never weights.
pub fn preservation_compare(base: &HeadSet, adapted: &HeadSet) -> Result<PreservationResult> {
    if !base.same_address_space(adapted) {
        return Err(Error::InvalidComparison(format!(
            "address spaces differ: {}x{} vs {}x{}",
            base.n_layers, base.n_heads_per_layer, adapted.n_layers, adapted.n_heads_per_layer
        )));
    }
    let base_addrs: std::collections::BTreeSet<HeadAddr> = base.addrs().into_iter().collect();
    let labels: Vec<(HeadAddr, Provenance)> = adapted
        .addrs()
        .into_iter()
        .map(|a| {
            let p = if base_addrs.contains(&a) {
                Provenance::Preserved
            } else {
                Provenance::New
            };
            (a, p)
        })
        .collect();
    let shared = labels
        .iter()
        .filter(|(_, p)| *p == Provenance::Preserved)
        .count();
    Ok(PreservationResult {
        shared,
        new: labels.len() - shared,
        labels,
    })
}
