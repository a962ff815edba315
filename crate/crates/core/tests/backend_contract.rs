//! Contract property suite, run identically against the toy backend, a
//! reference binding, and the oracle: softmax row-stochasticity at the
//! mass level, identity-mask idempotence, mask zeroing, and masking-scope
//! separation, all on small prompts.

use headscope::adapter::{bind, BindOptions};
use headscope::backend::oracle::{OracleBackend, OracleConfig};
use headscope::backend::toy::{ToyBackend, ToyConfig};
use headscope::backend::{Backend, HeadAddr, MaskScope, MaskSpec, SpanSel};
use headscope::niah::{Answer, ContextUnit, ImageHandle, NeedleInfo, NiahExample, Task};

fn small_example(seed: u64) -> NiahExample {
    let units = vec![
        ContextUnit::text("u0", "granite ledger harbor lantern meadow orchard willow copper")
            .unwrap(),
        ContextUnit::text("needle", "the marker beside the canal is a windmill").unwrap(),
        ContextUnit::image("u1", ImageHandle::synthetic(format!("img-{seed}")), 16),
        ContextUnit::text("u2", "quarry beacon saddle timber anchor ferry hollow ridge").unwrap(),
    ];
    NiahExample::from_units(
        units,
        "what is the marker beside the canal?",
        Some(NeedleInfo {
            unit_id: "needle".into(),
            embedded: false,
            gold: Answer::Text("a windmill".into()),
        }),
        Task::TextRetrieval,
        seed,
    )
}

fn any_masked_head(backend: &dyn Backend) -> HeadAddr {
    backend.head_inventory()[0].addr()
}

fn assert_row_stochastic(backend: &dyn Backend) {
    let layout = backend.layout_prompt(&small_example(1), None).unwrap();
    let table = backend
        .attention_masses(&layout, &[SpanSel::FullPrompt], None)
        .unwrap();
    for (i, head) in table.heads().iter().enumerate() {
        let mass = table.mass_at(i, 0);
        assert!(
            (mass - 1.0).abs() < 1e-6,
            "{}: head L{}H{} full-prompt mass {mass}",
            backend.model_id(),
            head.layer,
            head.head
        );
    }
}

fn assert_identity_mask_idempotent(backend: &dyn Backend) {
    let layout = backend.layout_prompt(&small_example(2), None).unwrap();
    let spans = [SpanSel::Needle(0), SpanSel::Unit("u1".into())];
    let plain = backend.attention_masses(&layout, &spans, None).unwrap();
    for scope in [MaskScope::PrefillAndDecode, MaskScope::DecodeOnly] {
        let identity = MaskSpec::identity(scope);
        let masked = backend
            .attention_masses(&layout, &spans, Some(&identity))
            .unwrap();
        assert_eq!(plain, masked, "{}: identity mask shifted masses", backend.model_id());

        let g_plain = backend.generate(&layout, None, 4).unwrap();
        let g_masked = backend.generate(&layout, Some(&identity), 4).unwrap();
        assert_eq!(g_plain, g_masked, "{}: identity mask shifted generation", backend.model_id());
    }
}

fn assert_mask_zeroing(backend: &dyn Backend) {
    let layout = backend.layout_prompt(&small_example(3), None).unwrap();
    let victim = any_masked_head(backend);
    let mask = MaskSpec::new([victim], MaskScope::PrefillAndDecode, "victim").unwrap();
    let spans = [
        SpanSel::Needle(0),
        SpanSel::Unit("u0".into()),
        SpanSel::FullPrompt,
    ];
    let table = backend
        .attention_masses(&layout, &spans, Some(&mask))
        .unwrap();
    let idx = table
        .heads()
        .iter()
        .position(|h| h.addr() == victim)
        .unwrap();
    for s in 0..table.spans().len() {
        assert_eq!(
            table.mass_at(idx, s),
            0.0,
            "{}: masked head retains mass on span {s}",
            backend.model_id()
        );
    }
}

fn assert_scope_separation(backend: &dyn Backend) {
    let layout = backend.layout_prompt(&small_example(4), None).unwrap();
    let victim = any_masked_head(backend);
    let decode_only = MaskSpec::new([victim], MaskScope::DecodeOnly, "late").unwrap();
    let plain = backend.dump_attention(&layout, None).unwrap();
    let masked = backend.dump_attention(&layout, Some(&decode_only)).unwrap();
    assert_eq!(
        plain, masked,
        "{}: decode-only mask disturbed prefill captures",
        backend.model_id()
    );
}

/// The aggregated masses must equal a recomputation from the raw
/// question-row dump: sum over span tokens, mean over question tokens.
fn assert_masses_match_raw_dump(backend: &dyn Backend) {
    let layout = backend.layout_prompt(&small_example(7), None).unwrap();
    assert!(layout.total_tokens <= 512);
    let spans = [SpanSel::Needle(0), SpanSel::Unit("u2".into())];
    let table = backend.attention_masses(&layout, &spans, None).unwrap();
    let dump = backend.dump_attention(&layout, None).unwrap();

    let resolved = headscope::backend::resolve_spans(&layout, &spans).unwrap();
    let q_len = layout.question_span.len();
    for (h_idx, head) in table.heads().iter().enumerate() {
        for (s_idx, span) in resolved.iter().enumerate() {
            let mut total = 0.0;
            for q_rel in 0..q_len {
                let row = dump.row(head.layer, head.head, q_rel);
                total += row[span.span.start..span.span.end].iter().sum::<f64>();
            }
            let expected = total / q_len as f64;
            let got = table.mass_at(h_idx, s_idx);
            assert!(
                (got - expected).abs() < 1e-6,
                "{}: head L{}H{} span {}: mass {got} vs dump {expected}",
                backend.model_id(),
                head.layer,
                head.head,
                span.key
            );
        }
    }
}

fn run_suite(backend: &dyn Backend) {
    assert_row_stochastic(backend);
    assert_identity_mask_idempotent(backend);
    assert_mask_zeroing(backend);
    assert_scope_separation(backend);
    assert_masses_match_raw_dump(backend);
}

#[test]
fn toy_backend_passes_contract_suite() {
    let backend = ToyBackend::new(ToyConfig::default()).unwrap();
    run_suite(&backend);
}

#[test]
fn gqa_toy_backend_passes_contract_suite() {
    let cfg = ToyConfig {
        kv_heads: 2,
        ..ToyConfig::default()
    };
    let backend = ToyBackend::new(cfg).unwrap();
    run_suite(&backend);
}

#[test]
fn reference_binding_passes_contract_suite() {
    let binding = bind("contract-check", &BindOptions::reference(6, 8, 42)).unwrap();
    run_suite(&binding);
}

#[test]
fn gqa_binding_passes_contract_suite() {
    let mut options = BindOptions::reference(4, 8, 43);
    options.kv_heads = Some(2);
    let binding = bind("contract-check-gqa", &options).unwrap();
    run_suite(&binding);
}

#[test]
fn oracle_backend_passes_contract_suite() {
    let backend = OracleBackend::new(OracleConfig::default()).unwrap();
    run_suite(&backend);
}

#[test]
fn oracle_planted_set_recoverable_from_masses() {
    let cfg = OracleConfig {
        layers: 6,
        heads: 6,
        planted: vec![HeadAddr::new(1, 2), HeadAddr::new(4, 5)],
        ..OracleConfig::default()
    };
    let backend = OracleBackend::new(cfg.clone()).unwrap();
    let layout = backend.layout_prompt(&small_example(5), None).unwrap();
    let table = backend
        .attention_masses(&layout, &[SpanSel::Needle(0)], None)
        .unwrap();
    let mut ranked: Vec<(f64, HeadAddr)> = table
        .heads()
        .iter()
        .enumerate()
        .map(|(i, h)| (table.mass_at(i, 0), h.addr()))
        .collect();
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let top: std::collections::BTreeSet<HeadAddr> =
        ranked.iter().take(2).map(|(_, a)| *a).collect();
    let planted: std::collections::BTreeSet<HeadAddr> = cfg.planted.into_iter().collect();
    assert_eq!(top, planted);
}

#[test]
fn dump_serialization_round_trips_through_bytes() {
    let backend = ToyBackend::new(ToyConfig::default()).unwrap();
    let layout = backend.layout_prompt(&small_example(6), None).unwrap();
    let dump = backend.dump_attention(&layout, None).unwrap();
    let mut buf = Vec::new();
    dump.write_to(&mut buf).unwrap();
    let back = headscope::backend::AttentionDump::read_from(buf.as_slice()).unwrap();
    assert_eq!(dump, back);
}
