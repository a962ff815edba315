//! Acceptance suite: one test per criterion, each printing a pass line.
//! Run with `cargo test -p headscope-cli --test acceptance -- --nocapture`.

mod dense;

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use headscope::analyzer::sparsity_rho;
use headscope::backend::oracle::{OracleBackend, OracleConfig, RetrievalPhase};
use headscope::backend::toy::{ToyBackend, ToyConfig};
use headscope::backend::{Backend, HeadAddr, MaskScope, MaskSpec};
use headscope::detector::{
    calibrate, detection_stability, run_detection, score_example, select_top,
    stability_from_head_sets, DetectionCondition, HeadScore, HeadScoreTable, NULL_QUESTION,
};
use headscope::error::Result;
use headscope::masker::{run_masked_eval, NiahAnswerChecker};
use headscope::niah::{
    build_haystack, compose_ratio_sweep, generate_detection_dataset, insert_needle, seeded_needle,
    BuilderConfig, DistractorPool, NiahExample, Task,
};
use headscope::persist::{hash_file, FORMAT_VERSION};
use headscope::rng::SeededRng;

use headscope_cli::commands::{self, CmdContext};
use headscope_cli::config::{BackendKind, RunConfig};
use headscope_cli::manifest::Clock;

fn builder_cfg() -> BuilderConfig {
    BuilderConfig::default()
}

fn small_pool(seed: u64) -> DistractorPool {
    DistractorPool::synthetic(seed, 30, 15, 64).unwrap()
}

fn pass(line: &str) {
    println!("[PASS] {line}");
}

// -------------------------------------------------------------------------
// 1. Eq-1 equivalence: detector scores match an independent dense
//    recomputation within 1e-6 on >= 100 seeded toy cases, under a minute.
// -------------------------------------------------------------------------
#[test]
fn criterion_01_score_equivalence_against_dense_recomputation() {
    let started = Instant::now();
    let backend = ToyBackend::new(ToyConfig::default()).unwrap();
    // a pool of deliberately small units so prompts stay under 512 tokens
    let pool = {
        use headscope::niah::{ContextUnit, ImageHandle};
        let mut rng = SeededRng::new(900);
        let words = ["harbor", "lantern", "meadow", "granite", "orchard", "willow"];
        let text_units: Vec<ContextUnit> = (0..24)
            .map(|i| {
                let n_words = 12 + rng.below(40);
                let body: Vec<&str> = (0..n_words).map(|_| words[rng.below(words.len())]).collect();
                ContextUnit::text(format!("small-{i:03}"), body.join(" ")).unwrap()
            })
            .collect();
        let image_units: Vec<ContextUnit> = (0..12)
            .map(|i| {
                ContextUnit::image(
                    format!("small-img-{i:03}"),
                    ImageHandle::synthetic(format!("acc1-img-{i}")),
                    16,
                )
            })
            .collect();
        DistractorPool::new(text_units, image_units)
    };
    let cfg = BuilderConfig {
        vision_tokens_per_image: 16,
        length_tolerance: 0.10,
    };

    let mut cases = 0usize;
    let mut max_err = 0.0f64;
    let mut case_seed = 0u64;
    while cases < 100 {
        case_seed += 1;
        // vary target size across the allowed small-prompt range
        let mut rng = SeededRng::derive(case_seed, "case");
        let n_units = 1 + rng.below(6);
        let depth = [0.0, 0.25, 0.5, 0.75, 1.0][rng.below(5)];
        let needle = seeded_needle(Task::TextRetrieval, cases, case_seed);
        let haystack = build_haystack(&pool, 0, 0.2, n_units, case_seed).unwrap();
        let example = insert_needle(haystack, &needle, depth, &cfg).unwrap();

        let layout = backend.layout_prompt(&example, None).unwrap();
        if layout.total_tokens > 512 {
            continue;
        }
        let tokens = layout.tokens.clone().unwrap();

        let scores = score_example(&layout, &backend).unwrap();
        let tensor = dense::full_attention(&backend, &tokens);
        let reference = dense::brute_force_scores(&tensor, &layout);

        assert_eq!(scores.len(), reference.len());
        for (got, want) in scores.iter().zip(&reference) {
            let err = (got - want).abs();
            max_err = max_err.max(err);
            assert!(
                err < 1e-6,
                "case {case_seed}: score {got} vs dense {want} (err {err})"
            );
        }
        cases += 1;
    }

    let elapsed = started.elapsed();
    assert!(cases >= 100);
    assert!(
        elapsed.as_secs() < 60,
        "criterion 1 exceeded runtime budget: {elapsed:?}"
    );
    pass(&format!(
        "criterion 1: Eq-1 equivalence on {cases} toy cases, max |err| = {max_err:.2e} < 1e-6 \
         ({elapsed:.2?})"
    ));
}

// -------------------------------------------------------------------------
// 2. Null-question calibration: exact self-cancellation, and a planted
//    positional-bias head calibrates to <= 1e-9 while planted retrieval
//    heads keep >= 90% of their raw score.
// -------------------------------------------------------------------------
#[test]
fn criterion_02_null_question_calibration() {
    // (a) question literally "N/A": all calibrated scores are exactly zero
    let backend = OracleBackend::new(OracleConfig::default()).unwrap();
    let mut example = generate_detection_dataset(
        Task::TextRetrieval,
        3000,
        &[0.5],
        1,
        0.1,
        &small_pool(2),
        &builder_cfg(),
        2,
    )
    .unwrap()
    .remove(0);
    example.question = NULL_QUESTION.to_string();
    let scores = calibrate(&example, &backend, NULL_QUESTION).unwrap();
    assert!(scores.calibrated.iter().all(|&c| c == 0.0));

    // (b) bias head cancels, planted heads survive calibration. The
    // needle sits at depth 0 so the position-biased prefix covers it and
    // the bias head's raw needle mass is genuinely high.
    let cfg = OracleConfig {
        bias_heads: vec![HeadAddr::new(0, 3)],
        ..OracleConfig::default()
    };
    let backend = OracleBackend::new(cfg).unwrap();
    let dataset = generate_detection_dataset(
        Task::TextRetrieval,
        3000,
        &[0.0],
        3,
        0.1,
        &small_pool(3),
        &builder_cfg(),
        5,
    )
    .unwrap();
    let condition = DetectionCondition {
        task: Task::TextRetrieval,
        context_length: 3000,
        depths: vec![0.0],
        n_questions: 3,
        model_id: "oracle".into(),
        image_ratio: Some(0.1),
    };
    let table = run_detection(&condition, &dataset, &backend).unwrap();
    let bias = table
        .scores
        .iter()
        .find(|s| s.layer == 0 && s.head == 3)
        .unwrap();
    assert!(
        bias.calibrated.abs() <= 1e-9,
        "bias head calibrated {} not cancelled",
        bias.calibrated
    );
    assert!(
        bias.raw > 0.5,
        "bias head raw needle mass should be high at depth 0, got {}",
        bias.raw
    );
    let planted = table
        .scores
        .iter()
        .find(|s| s.layer == 2 && s.head == 1)
        .unwrap();
    assert!(
        planted.calibrated >= 0.9 * planted.raw,
        "planted calibrated {} below 90% of raw {}",
        planted.calibrated,
        planted.raw
    );
    pass(&format!(
        "criterion 2: null-question calibration (self-cancel exact; bias |cal| = {:.1e} <= 1e-9; \
         planted keeps {:.1}% of raw)",
        bias.calibrated.abs(),
        100.0 * planted.calibrated / planted.raw
    ));
}

// -------------------------------------------------------------------------
// 3. Planted-head recovery: select_top at 5% places all planted heads at
//    the top-p ranks in 100% of 20 seeded trials for every (p, inventory)
//    combination with k >= p.
// -------------------------------------------------------------------------
#[test]
fn criterion_03_planted_head_recovery() {
    let combos: [(usize, u32, u32); 6] = [
        (1, 8, 8),    // 64-head inventory
        (1, 16, 16),  // 256
        (5, 16, 16),  // 256, k = 13
        (1, 36, 32),  // 1152
        (5, 36, 32),  // 1152, k = 58
        (16, 36, 32), // 1152, k = 58
    ];
    let pool = small_pool(11);
    for (p, layers, heads) in combos {
        let total = layers * heads;
        let k = (0.05 * f64::from(total)).ceil() as usize;
        assert!(k >= p, "combo (p={p}, {total}) violates k >= p");
        for trial in 0..20u64 {
            let mut rng = SeededRng::derive(trial, &format!("plant-{p}-{total}"));
            let mut planted = BTreeSet::new();
            while planted.len() < p {
                planted.insert(HeadAddr::new(
                    rng.below(layers as usize) as u32,
                    rng.below(heads as usize) as u32,
                ));
            }
            let cfg = OracleConfig {
                layers,
                heads,
                planted: planted.iter().copied().collect(),
                ..OracleConfig::default()
            };
            let backend = OracleBackend::new(cfg).unwrap();

            let dataset = generate_detection_dataset(
                Task::TextRetrieval,
                2000,
                &[0.0, 1.0],
                1,
                0.0,
                &pool,
                &builder_cfg(),
                1000 + trial,
            )
            .unwrap();
            let condition = DetectionCondition {
                task: Task::TextRetrieval,
                context_length: 2000,
                depths: vec![0.0, 1.0],
                n_questions: 1,
                model_id: "oracle".into(),
                image_ratio: Some(0.0),
            };
            let table = run_detection(&condition, &dataset, &backend).unwrap();
            let set = select_top(&table, 0.05).unwrap();
            assert_eq!(set.len(), k);
            let top: BTreeSet<HeadAddr> =
                set.heads.iter().take(p).map(|h| h.addr()).collect();
            assert_eq!(
                top, planted,
                "trial {trial}: top-{p} ranks missed the planted set (inventory {total})"
            );
        }
    }
    pass("criterion 3: planted-head recovery 100% over 20 trials x 6 (p, inventory) combos");
}

// -------------------------------------------------------------------------
// 4. Selection-count arithmetic: ceil(0.05 x 1152) = 58.
// -------------------------------------------------------------------------
#[test]
fn criterion_04_selection_count_arithmetic() {
    assert_eq!((0.05f64 * 1152.0).ceil() as usize, 58);

    // and through the selection path itself
    let scores: Vec<HeadScore> = (0..36u32)
        .flat_map(|layer| {
            (0..32u32).map(move |head| HeadScore {
                layer,
                head,
                eligible: true,
                raw: 0.0,
                null: 0.0,
                calibrated: f64::from(layer * 32 + head) * 1e-5,
            })
        })
        .collect();
    let table = HeadScoreTable {
        format_version: FORMAT_VERSION,
        model_id: "arith".into(),
        condition: DetectionCondition {
            task: Task::TextRetrieval,
            context_length: 1,
            depths: vec![0.0],
            n_questions: 1,
            model_id: "arith".into(),
            image_ratio: None,
        },
        n_examples: 1,
        scores,
    };
    let set = select_top(&table, 0.05).unwrap();
    assert_eq!(set.len(), 58);
    assert_eq!(set.total_heads, 1152);
    pass("criterion 4: ceil(0.05 x 1152) = 58, reproduced by select_top");
}

// -------------------------------------------------------------------------
// 5. Sparsity vs exhaustive prefix-scan oracle: exact k agreement on 1000
//    random mixed-sign vectors of sizes 8..=2048.
// -------------------------------------------------------------------------
#[test]
fn criterion_05_sparsity_matches_prefix_scan_oracle() {
    // independent oracle: clamp, sort descending, scan every prefix
    fn prefix_scan_k(scores: &[f64], threshold: f64) -> Option<usize> {
        let mut positives: Vec<f64> = scores.iter().map(|s| s.max(0.0)).collect();
        let total: f64 = positives.iter().sum();
        if total <= 0.0 {
            return None;
        }
        positives.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut best = None;
        for k in (1..=positives.len()).rev() {
            let prefix: f64 = positives[..k].iter().sum();
            if prefix >= threshold * total {
                best = Some(k);
            }
        }
        best
    }

    let mut rng = SeededRng::new(505);
    let mut checked = 0;
    for case in 0..1000 {
        let n = 8 + rng.below(2041);
        let scores: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let table = HeadScoreTable {
            format_version: FORMAT_VERSION,
            model_id: "rand".into(),
            condition: DetectionCondition {
                task: Task::TextRetrieval,
                context_length: 1,
                depths: vec![0.0],
                n_questions: 1,
                model_id: "rand".into(),
                image_ratio: None,
            },
            n_examples: 1,
            scores: scores
                .iter()
                .enumerate()
                .map(|(i, &c)| HeadScore {
                    layer: i as u32,
                    head: 0,
                    eligible: true,
                    raw: c.max(0.0),
                    null: 0.0,
                    calibrated: c,
                })
                .collect(),
        };
        match (sparsity_rho(&table, 0.5), prefix_scan_k(&scores, 0.5)) {
            (Ok(result), Some(expected_k)) => {
                assert_eq!(
                    result.k_heads, expected_k,
                    "case {case} (n={n}): k {} vs oracle {}",
                    result.k_heads, expected_k
                );
                checked += 1;
            }
            (Err(headscope::Error::NoPositiveMass), None) => {
                checked += 1;
            }
            (got, want) => panic!("case {case}: divergent outcomes {got:?} vs {want:?}"),
        }
    }
    assert_eq!(checked, 1000);
    pass("criterion 5: sparsity k agrees exactly with the prefix-scan oracle on 1000 vectors");
}

// -------------------------------------------------------------------------
// 6. Causal masking on the oracle over a 3x6 grid: planted mask -> 0.0
//    everywhere; random non-planted mask -> 1.0; decode-only on the
//    prefill-resolving oracle -> 1.0 while prefill+decode -> 0.0.
// -------------------------------------------------------------------------
#[test]
fn criterion_06_causal_masking_grid() {
    let started = Instant::now();
    let planted = vec![
        HeadAddr::new(1, 2),
        HeadAddr::new(3, 4),
        HeadAddr::new(5, 6),
        HeadAddr::new(6, 1),
    ];
    let cfg = OracleConfig {
        layers: 8,
        heads: 8,
        planted: planted.clone(),
        retrieval_phase: RetrievalPhase::Prefill,
        ..OracleConfig::default()
    };
    let backend = OracleBackend::new(cfg).unwrap();

    let depths = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    let lengths = [2048usize, 4096, 8192];
    let pool = DistractorPool::synthetic(60, 40, 20, 64).unwrap();
    let mut dataset: Vec<NiahExample> = Vec::new();
    for (i, &len) in lengths.iter().enumerate() {
        dataset.extend(
            generate_detection_dataset(
                Task::TextRetrieval,
                len,
                &depths,
                2,
                0.1,
                &pool,
                &builder_cfg(),
                600 + i as u64,
            )
            .unwrap(),
        );
    }
    let checker = NiahAnswerChecker;

    // planted mask: zero accuracy on every cell
    let planted_mask =
        MaskSpec::new(planted.clone(), MaskScope::PrefillAndDecode, "planted").unwrap();
    let grid = run_masked_eval(&dataset, &backend, &planted_mask, &checker, 8).unwrap();
    assert_eq!(grid.cells.len(), 18, "expected a 3x6 grid");
    for cell in &grid.cells {
        assert_eq!(
            cell.accuracy(),
            0.0,
            "planted mask left accuracy at {} for {}@{}",
            cell.accuracy(),
            cell.context_length,
            cell.depth_fraction
        );
    }

    // equal-count random non-planted mask: full accuracy
    let planted_set: BTreeSet<HeadAddr> = planted.iter().copied().collect();
    let mut rng = SeededRng::new(99);
    let eligible: Vec<HeadAddr> = backend
        .head_inventory()
        .iter()
        .filter(|h| h.eligible && !planted_set.contains(&h.addr()))
        .map(|h| h.addr())
        .collect();
    let control: Vec<HeadAddr> = rng
        .sample_indices(eligible.len(), planted.len())
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    let control_mask =
        MaskSpec::new(control, MaskScope::PrefillAndDecode, "random-control").unwrap();
    let grid = run_masked_eval(&dataset, &backend, &control_mask, &checker, 8).unwrap();
    for cell in &grid.cells {
        assert_eq!(cell.accuracy(), 1.0, "random control harmed a cell");
    }

    // scope split on the prefill-resolving oracle
    let decode_mask = MaskSpec::new(planted.clone(), MaskScope::DecodeOnly, "planted").unwrap();
    let grid = run_masked_eval(&dataset, &backend, &decode_mask, &checker, 8).unwrap();
    for cell in &grid.cells {
        assert_eq!(cell.accuracy(), 1.0, "decode-only mask reached prefill retrieval");
    }
    let prefill_mask = MaskSpec::new(planted, MaskScope::PrefillAndDecode, "planted").unwrap();
    let grid = run_masked_eval(&dataset, &backend, &prefill_mask, &checker, 8).unwrap();
    for cell in &grid.cells {
        assert_eq!(cell.accuracy(), 0.0);
    }

    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 120,
        "criterion 6 exceeded runtime budget: {elapsed:?}"
    );
    pass(&format!(
        "criterion 6: causal masking grid (planted 0.0, random control 1.0, decode-only 1.0 vs \
         prefill+decode 0.0) ({elapsed:.2?})"
    ));
}

// -------------------------------------------------------------------------
// 7. Composition protocol: budget-128 sweep yields exactly 0/13/26/51
//    image units at ratios 0/0.1/0.2/0.4 with the needle hash invariant.
// -------------------------------------------------------------------------
#[test]
fn criterion_07_composition_protocol() {
    let pool = DistractorPool::synthetic(77, 160, 80, 64).unwrap();
    let needle = seeded_needle(Task::TextRetrieval, 0, 7);
    let haystack = build_haystack(&pool, 0, 0.0, 128, 70).unwrap();
    let base = insert_needle(haystack, &needle, 0.5, &builder_cfg()).unwrap();
    assert_eq!(base.units.len(), 129); // 128 distractors + needle

    let ratios = [0.0, 0.1, 0.2, 0.4];
    let sweep = compose_ratio_sweep(&base, &pool, &ratios, 71).unwrap();
    let needle_hash = base.needle_unit().unwrap().payload_hash();
    let expected_images = [0usize, 13, 26, 51];
    for ((example, &ratio), &expected) in sweep.iter().zip(&ratios).zip(&expected_images) {
        assert_eq!(
            example.distractor_image_units(),
            expected,
            "ratio {ratio} image-unit count"
        );
        assert_eq!(example.units.len(), 129);
        assert_eq!(
            example.needle_unit().unwrap().payload_hash(),
            needle_hash,
            "needle payload changed in the sweep"
        );
    }
    pass("criterion 7: ratio sweep over budget 128 gives 0/13/26/51 image units, needle hash fixed");
}

// -------------------------------------------------------------------------
// 8. Re-ranking: 450 pages batch as 200/200/50 with gold in group 3 at
//    global rank 1, and the 2-domain recall construction gives
//    macro 0.5 / micro 0.75 at k = 1.
// -------------------------------------------------------------------------
#[test]
fn criterion_08_reranking_correctness() {
    use headscope::niah::{Answer, ContextUnit, NeedleInfo};
    use headscope::reranker::{
        batch_candidates, merge_group_rankings, recall_at_k, score_candidates, CandidateKind,
        CandidatePayload, CandidateUnit, QueryRanking, RankedCandidate, RecallGrouping,
    };

    let cfg = OracleConfig {
        context_window: 1 << 22,
        ..OracleConfig::default()
    };
    let backend = OracleBackend::new(cfg).unwrap();
    let planted: Vec<_> = backend
        .head_inventory()
        .into_iter()
        .filter(|h| backend.planted_heads().contains(&h.addr()))
        .collect();
    let head_set = headscope::detector::HeadSet {
        format_version: FORMAT_VERSION,
        model_id: "oracle".into(),
        scores: vec![0.95; planted.len()],
        heads: planted,
        fraction: 0.05,
        n_layers: 4,
        n_heads_per_layer: 4,
        total_heads: 16,
        condition: None,
        source: "detected".into(),
    };

    let gold_idx = 420usize; // inside the third group of 200/200/50
    let candidates: Vec<CandidateUnit> = (0..450)
        .map(|i| CandidateUnit {
            candidate_id: format!("page-{i:04}"),
            kind: CandidateKind::Page,
            payload: CandidatePayload::Text(format!("body of page {i} with several words")),
            domain_label: "docs".into(),
            gold: i == gold_idx,
        })
        .collect();

    let groups = batch_candidates(&candidates, CandidateKind::Page);
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    assert_eq!(sizes, vec![200, 200, 50]);
    assert!(groups[2].iter().any(|c| c.gold), "gold must sit in group 3");

    // score each group; the gold group is laid out with the gold unit as
    // the evidence span the oracle's planted heads attend
    let mut rankings: Vec<Vec<RankedCandidate>> = Vec::new();
    for group in &groups {
        if group.iter().any(|c| c.gold) {
            let units: Vec<ContextUnit> = group
                .iter()
                .map(|c| match &c.payload {
                    CandidatePayload::Text(t) => {
                        ContextUnit::text(c.candidate_id.clone(), t.clone()).unwrap()
                    }
                    CandidatePayload::Image(h) => {
                        ContextUnit::image(c.candidate_id.clone(), h.clone(), 64)
                    }
                })
                .collect();
            let gold_id = group.iter().find(|c| c.gold).unwrap().candidate_id.clone();
            let example = NiahExample::from_units(
                units,
                "which page answers the question?",
                Some(NeedleInfo {
                    unit_id: gold_id,
                    embedded: false,
                    gold: Answer::Text("gold".into()),
                }),
                Task::TextRetrieval,
                0,
            );
            let layout = backend.layout_prompt(&example, None).unwrap();
            let null_layout = backend.layout_prompt(&example, Some(NULL_QUESTION)).unwrap();
            let sels: Vec<headscope::backend::SpanSel> = group
                .iter()
                .map(|c| headscope::backend::SpanSel::Unit(c.candidate_id.clone()))
                .collect();
            let table = backend.attention_masses(&layout, &sels, None).unwrap();
            let null_table = backend.attention_masses(&null_layout, &sels, None).unwrap();
            let addrs = head_set.addrs();
            let mut scored: Vec<(String, f64)> = group
                .iter()
                .map(|c| {
                    let key = format!("unit:{}", c.candidate_id);
                    let mean: f64 = addrs
                        .iter()
                        .map(|a| {
                            table.mass_for(*a, &key).unwrap()
                                - null_table.mass_for(*a, &key).unwrap()
                        })
                        .sum::<f64>()
                        / addrs.len() as f64;
                    (c.candidate_id.clone(), mean)
                })
                .collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            rankings.push(
                scored
                    .into_iter()
                    .enumerate()
                    .map(|(i, (candidate_id, score))| RankedCandidate {
                        candidate_id,
                        score,
                        rank: i + 1,
                    })
                    .collect(),
            );
        } else {
            // no evidence span in these groups: null calibration cancels
            // the oracle's uniform attention exactly
            let ranked = score_candidates(
                "which page answers the question?",
                group,
                &head_set,
                &backend,
                true,
            )
            .unwrap();
            assert!(ranked.iter().all(|rc| rc.score == 0.0));
            rankings.push(ranked);
        }
    }

    let merged = merge_group_rankings(&rankings).unwrap();
    assert_eq!(merged.len(), 450);
    assert_eq!(merged[0].candidate_id, format!("page-{gold_idx:04}"));
    assert_eq!(merged[0].rank, 1);

    // hand-countable recall: domain A 3 hits, domain B 1 miss at k = 1
    let mk = |query: &str, domain: &str, gold_rank: usize| -> QueryRanking {
        let ranked: Vec<RankedCandidate> = (0..5)
            .map(|i| RankedCandidate {
                candidate_id: format!("{query}-c{i}"),
                score: 1.0 - i as f64 * 0.1,
                rank: i + 1,
            })
            .collect();
        QueryRanking {
            query_id: query.into(),
            domain_label: domain.into(),
            ranked,
            gold_ids: std::iter::once(format!("{query}-c{}", gold_rank - 1)).collect(),
        }
    };
    let rankings = vec![
        mk("a1", "A", 1),
        mk("a2", "A", 1),
        mk("a3", "A", 1),
        mk("b1", "B", 4),
    ];
    let report = recall_at_k(&rankings, &[1], RecallGrouping::Both).unwrap();
    assert!((report.macro_recall[0] - 0.5).abs() < 1e-12);
    assert!((report.micro_recall[0] - 0.75).abs() < 1e-12);
    pass("criterion 8: 450 pages batch 200/200/50, gold at rank 1 after merge; macro 0.5 / micro 0.75");
}

// -------------------------------------------------------------------------
// 9. Detection stability: identical oracle behavior across disjoint
//    subsets gives pairwise overlap 1.0; disjoint planted sets give 0.0.
// -------------------------------------------------------------------------
#[test]
fn criterion_09_detection_stability_protocol() {
    let backend = OracleBackend::new(OracleConfig::default()).unwrap();
    let pool = small_pool(21);
    let all = generate_detection_dataset(
        Task::TextRetrieval,
        3000,
        &[0.0, 1.0],
        9,
        0.1,
        &pool,
        &builder_cfg(),
        900,
    )
    .unwrap();
    let subsets: Vec<Vec<NiahExample>> = all.chunks(6).map(|c| c.to_vec()).collect();
    assert_eq!(subsets.len(), 3);
    let condition = DetectionCondition {
        task: Task::TextRetrieval,
        context_length: 3000,
        depths: vec![0.0, 1.0],
        n_questions: 3,
        model_id: "oracle".into(),
        image_ratio: Some(0.1),
    };
    let report = detection_stability(&condition, &subsets, &[&backend], 0.05).unwrap();
    assert_eq!(report.pair_overlaps, vec![1.0, 1.0, 1.0]);
    assert_eq!(report.mean_overlap, 1.0);

    // disjoint planted sets: selections cannot intersect
    let mut sets = Vec::new();
    for i in 0..3u32 {
        let cfg = OracleConfig {
            layers: 8,
            heads: 8,
            planted: vec![
                HeadAddr::new(2 * i, 0),
                HeadAddr::new(2 * i, 1),
                HeadAddr::new(2 * i + 1, 0),
            ],
            ..OracleConfig::default()
        };
        let oracle = OracleBackend::new(cfg).unwrap();
        let ds = generate_detection_dataset(
            Task::TextRetrieval,
            3000,
            &[0.5],
            3,
            0.1,
            &pool,
            &builder_cfg(),
            910 + u64::from(i),
        )
        .unwrap();
        let cond = DetectionCondition {
            task: Task::TextRetrieval,
            context_length: 3000,
            depths: vec![0.5],
            n_questions: 3,
            model_id: "oracle".into(),
            image_ratio: Some(0.1),
        };
        let table = run_detection(&cond, &ds, &oracle).unwrap();
        sets.push(select_top(&table, 3.0 / 64.0).unwrap());
    }
    let report = stability_from_head_sets(&sets).unwrap();
    assert_eq!(report.mean_overlap, 0.0);
    pass("criterion 9: stability protocol (identical oracles 1.0, disjoint planted sets 0.0)");
}

// -------------------------------------------------------------------------
// 10. Determinism: the full pipeline repeated with identical config and
//     seeds produces byte-identical artifacts.
// -------------------------------------------------------------------------
#[test]
fn criterion_10_pipeline_determinism() {
    fn run_pipeline(run_dir: &Path, queries: &Path) -> Result<Vec<(String, String)>> {
        let mut config = RunConfig::default_with_output(run_dir.to_path_buf());
        config.backend.kind = BackendKind::Oracle;
        config.task.tasks = vec![Task::TextRetrieval, Task::IdenticalImageRetrieval];
        config.task.lengths = vec!["2k".into(), "4k".into()];
        config.task.depths = vec![0.0, 0.5, 1.0];
        config.task.count = 2;
        config.pool.text_units = 40;
        config.pool.image_units = 20;
        let ctx = CmdContext::new(config, Clock::fixed(1_700_000_000));

        commands::cmd_gen(&ctx)?;
        let detect = commands::cmd_detect(&ctx)?;
        commands::cmd_analyze(&ctx)?;
        let heads = ctx.run_dir.join(&detect.head_set_paths[0]);
        commands::cmd_mask_eval(
            &ctx,
            &heads,
            headscope_cli::commands::mask_eval::ScopeChoice::Both,
            true,
            ctx.config.seeds.base,
        )?;
        commands::cmd_rerank(
            &ctx,
            &heads,
            queries,
            headscope::reranker::CandidateKind::Page,
            &[1, 3, 5],
            headscope::reranker::RerankOptions::default(),
        )?;
        commands::cmd_report(&ctx)?;

        // collect (relative path, content hash) for every artifact
        let mut files = Vec::new();
        let mut stack = vec![run_dir.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir)? {
                let path = entry?.path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    let rel = path
                        .strip_prefix(run_dir)
                        .unwrap()
                        .to_string_lossy()
                        .to_string();
                    files.push((rel, hash_file(&path)?));
                }
            }
        }
        files.sort();
        Ok(files)
    }

    let tmp = tempfile::tempdir().unwrap();
    let queries = tmp.path().join("queries.jsonl");
    let records: Vec<String> = (0..2)
        .map(|q| {
            let candidates: Vec<String> = (0..6)
                .map(|i| {
                    format!(
                        "{{\"candidate_id\":\"q{q}-p{i}\",\"text\":\"page {i} of query {q}\",\
                         \"gold\":{}}}",
                        i == q
                    )
                })
                .collect();
            format!(
                "{{\"query_id\":\"q{q}\",\"question\":\"what is on page {q}?\",\
                 \"domain_label\":\"docs\",\"candidates\":[{}]}}",
                candidates.join(",")
            )
        })
        .collect();
    std::fs::write(&queries, records.join("\n") + "\n").unwrap();

    // repeat with the literally identical config: same run directory,
    // cleared between runs
    let run_dir = tmp.path().join("run");
    let first = run_pipeline(&run_dir, &queries).unwrap();
    headscope_cli::manifest::verify_manifest(&run_dir).unwrap();
    std::fs::remove_dir_all(&run_dir).unwrap();
    let second = run_pipeline(&run_dir, &queries).unwrap();
    assert!(!first.is_empty());
    assert_eq!(
        first, second,
        "pipeline artifacts differ between identical runs"
    );
    pass(&format!(
        "criterion 10: {} artifacts byte-identical across repeated pipeline runs",
        first.len()
    ));
}
