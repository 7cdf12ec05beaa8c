//! Property tests for the module-level invariants.

mod common;

use proptest::prelude::*;

use mpager::alignment::{align, edit_counts};
use mpager::llm::{build_prompt, guard_output, GuardPolicy, PromptTemplate};
use mpager::rover::{build_wtn, rover_combine, VoteOptions};
use mpager::scoring::{bucket_report, corpus_cer, paired_ttest, score_pair, ScoreRecord};
use mpager::textnorm::{normalize, tokenize, NormalizationOptions, TokenMode, TokenSequence};

use common::oracle_edit_distance;

fn small_seq() -> impl Strategy<Value = TokenSequence> {
    proptest::collection::vec(prop_oneof![Just('a'), Just('b'), Just('c')], 0..8)
        .prop_map(|chars| tokenize(&chars.into_iter().collect::<String>(), TokenMode::Char))
}

proptest! {
    #[test]
    fn normalize_is_idempotent(text in "\\PC*") {
        let opts = NormalizationOptions::default();
        let once = normalize(&text, &opts);
        prop_assert_eq!(normalize(&once, &opts), once);
    }

    #[test]
    fn normalize_without_folding_is_idempotent_too(text in "\\PC*") {
        let opts = NormalizationOptions {
            fold_width: false,
            ..Default::default()
        };
        let once = normalize(&text, &opts);
        prop_assert_eq!(normalize(&once, &opts), once);
    }

    #[test]
    fn char_tokens_count_non_whitespace_scalars(text in "\\PC*") {
        let seq = tokenize(&text, TokenMode::Char);
        let expected = text.chars().filter(|c| !c.is_whitespace()).count();
        prop_assert_eq!(seq.len(), expected);
        prop_assert!(seq.tokens().iter().all(|t| !t.is_empty()));
    }

    #[test]
    fn whitespace_tokens_are_never_empty(text in "\\PC*") {
        let seq = tokenize(&text, TokenMode::Whitespace);
        prop_assert!(seq.tokens().iter().all(|t| !t.is_empty() && !t.contains(char::is_whitespace)));
    }

    #[test]
    fn alignment_of_x_with_itself_is_zero(seq in small_seq()) {
        let a = align(&seq, &seq).unwrap();
        prop_assert_eq!(a.distance(), 0);
    }

    #[test]
    fn alignment_distance_is_symmetric(a in small_seq(), b in small_seq()) {
        let ab = align(&a, &b).unwrap().distance();
        let ba = align(&b, &a).unwrap().distance();
        prop_assert_eq!(ab, ba);
    }

    #[test]
    fn alignment_matches_oracle(a in small_seq(), b in small_seq()) {
        let got = align(&a, &b).unwrap().distance();
        let want = oracle_edit_distance(a.tokens(), b.tokens());
        prop_assert_eq!(got, want);
    }

    #[test]
    fn alignment_projections_round_trip(a in small_seq(), b in small_seq()) {
        let alignment = align(&a, &b).unwrap();
        let ref_side: Vec<&str> = alignment.ref_tokens();
        let hyp_side: Vec<&str> = alignment.hyp_tokens();
        prop_assert_eq!(ref_side, a.tokens().iter().map(String::as_str).collect::<Vec<_>>());
        prop_assert_eq!(hyp_side, b.tokens().iter().map(String::as_str).collect::<Vec<_>>());
        let counts = edit_counts(&alignment);
        prop_assert_eq!(counts.ref_len, a.len());
        prop_assert_eq!(counts.hits + counts.subs + counts.ins, b.len());
    }

    #[test]
    fn rover_vote_sums_equal_input_count(hyps in proptest::collection::vec(small_seq(), 1..6)) {
        let wtn = build_wtn(&hyps).unwrap();
        for slot in wtn.slots() {
            prop_assert_eq!(slot.total_votes() as usize, hyps.len());
        }
    }

    #[test]
    fn rover_is_identity_on_unanimous_inputs(seq in small_seq(), n in 1usize..6) {
        let hyps = vec![seq.clone(); n];
        let out = rover_combine(&hyps, &VoteOptions::default()).unwrap();
        prop_assert_eq!(out, seq);
    }

    #[test]
    fn rover_output_is_deterministic(hyps in proptest::collection::vec(small_seq(), 1..5)) {
        let opts = VoteOptions::default();
        let first = rover_combine(&hyps, &opts).unwrap();
        prop_assert_eq!(rover_combine(&hyps, &opts).unwrap(), first);
    }

    #[test]
    fn scoring_self_pair_has_zero_errors(text in "\\PC*") {
        let record = score_pair("u", &text, &text, &NormalizationOptions::default(), TokenMode::Char);
        prop_assert_eq!(record.errors(), 0);
    }

    #[test]
    fn corpus_cer_ignores_record_order(
        mut errs in proptest::collection::vec((0usize..5, 1usize..30), 1..20)
    ) {
        let records: Vec<ScoreRecord> = errs
            .iter()
            .enumerate()
            .map(|(i, &(e, len))| ScoreRecord {
                utt_id: format!("u{i}"),
                hits: len.saturating_sub(e),
                subs: e.min(len),
                dels: 0,
                ins: 0,
                ref_len: len,
                empty_ref: false,
            })
            .collect();
        let forward = corpus_cer(records.clone()).unwrap().corpus_cer;
        errs.reverse();
        let mut reversed = records;
        reversed.reverse();
        prop_assert_eq!(corpus_cer(reversed).unwrap().corpus_cer, forward);
    }

    #[test]
    fn buckets_recombine_to_corpus_totals(
        errs in proptest::collection::vec((0usize..5, 1usize..60), 1..30),
        width in 1usize..20
    ) {
        let records: Vec<ScoreRecord> = errs
            .iter()
            .enumerate()
            .map(|(i, &(e, len))| ScoreRecord {
                utt_id: format!("u{i}"),
                hits: len.saturating_sub(e),
                subs: e.min(len),
                dels: 0,
                ins: 0,
                ref_len: len,
                empty_ref: false,
            })
            .collect();
        let report = bucket_report(&records, width).unwrap();
        let count: usize = report.buckets.iter().map(|b| b.utterances).sum();
        prop_assert_eq!(count, records.len());
        let errors: usize = report.buckets.iter().map(|b| b.errors).sum();
        let ref_len: usize = report.buckets.iter().map(|b| b.ref_len).sum();
        let corpus = corpus_cer(records).unwrap();
        prop_assert_eq!(errors, corpus.totals.errors());
        prop_assert_eq!(ref_len, corpus.totals.ref_len);
    }

    #[test]
    fn ttest_is_antisymmetric(
        pairs in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2..40)
    ) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        match (paired_ttest(&a, &b), paired_ttest(&b, &a)) {
            (Ok(ab), Ok(ba)) => {
                prop_assert_eq!(ab.t, -ba.t);
                prop_assert_eq!(ab.p_two_sided, ba.p_two_sided);
            }
            (Err(e1), Err(e2)) => prop_assert_eq!(e1, e2),
            (ab, ba) => prop_assert!(false, "asymmetric outcome: {:?} vs {:?}", ab, ba),
        }
    }

    #[test]
    fn prompt_renders_one_line_per_candidate(
        candidates in proptest::collection::vec("[a-zあ-ん ]{0,12}", 1..6)
    ) {
        let template = PromptTemplate::english();
        let prompt = build_prompt(&candidates, &template).unwrap();
        let instruction_lines = template.instruction.lines().count() + 1;
        prop_assert_eq!(prompt.lines().count(), instruction_lines + candidates.len());
    }

    #[test]
    fn guard_yields_corrected_or_anchor(anchor in "\\PC{1,20}", corrected in "\\PC{0,80}") {
        let decision = guard_output(&anchor, &corrected, &GuardPolicy::default());
        let text = decision.text().to_string();
        prop_assert!(text == corrected || text == anchor);
    }
}

mod rederivation {
    use std::sync::Arc;

    use mpager::corpus::{Corpus, HypothesisEntry, MissingStreamPolicy, StreamSpec, Utterance};
    use mpager::llm::mock::{MockBackend, MockReply};
    use mpager::llm::{BackendConfig, GuardPolicy, LlmClient, PromptTemplate};
    use mpager::pipeline::{run_mpa, GerRun, GerVariant, MpaScheme};
    use mpager::rover::{rover_combine, VoteOptions};
    use mpager::textnorm::{tokenize, NormalizationOptions, TokenMode};

    use crate::common::{pool_reference, seeded_rng, shift_noise};
    use rand::prelude::*;

    /// The merged output recorded for each utterance must equal
    /// rover_combine of the recorded streams in the recorded order.
    #[test]
    fn merged_output_is_rederivable_from_the_report() {
        let mut rng = seeded_rng(31);
        let mut utts = Vec::new();
        let mut scripted = MockBackend::echo();
        for i in 0..40 {
            let utt_id = format!("u{i:02}");
            let reference = pool_reference(&mut rng, 20);
            let anchor = shift_noise(&mut rng, &reference, 0.1);
            if rng.random_bool(0.3) {
                let output = shift_noise(&mut rng, &reference, 0.05);
                scripted = scripted.with_reply(utt_id.clone(), MockReply::Output(output));
            } else if rng.random_bool(0.1) {
                scripted = scripted.with_reply(utt_id.clone(), MockReply::FailTransport);
            }
            utts.push(Utterance {
                utt_id,
                reference: Some(reference),
                entries: vec![HypothesisEntry {
                    system: "asr".into(),
                    rank: 1,
                    text: anchor,
                    score: None,
                }],
            });
        }
        let corpus = Corpus::from_utterances(utts).unwrap();
        let client = Arc::new(
            LlmClient::new(
                Arc::new(scripted),
                BackendConfig {
                    backoff_base_ms: 0,
                    max_retries: 0,
                    ..Default::default()
                },
            )
            .unwrap(),
        );
        let anchor_spec = StreamSpec::new("asr", 1);
        let scheme = MpaScheme {
            anchor: anchor_spec.clone(),
            ger_runs: vec![GerRun {
                variant: GerVariant::NBestOfOneSystem,
                streams: vec![anchor_spec],
                backend_id: "mock".into(),
                client,
                template: PromptTemplate::english(),
            }],
            merge: VoteOptions::default(),
            guard: GuardPolicy::default(),
            token_mode: TokenMode::Char,
            normalize_llm_input: false,
            normalization: NormalizationOptions::default(),
            missing_streams: MissingStreamPolicy::Error,
            config: serde_json::json!({"kind": "rederivation"}),
        };
        let report = run_mpa(&corpus, &scheme, 2).unwrap();
        assert_eq!(report.utterances.len(), corpus.len());
        for utt in &report.utterances {
            let mut sequences = vec![tokenize(&utt.anchor, TokenMode::Char)];
            sequences.extend(utt.outputs.iter().map(|o| tokenize(&o.text, TokenMode::Char)));
            let rederived = rover_combine(&sequences, &VoteOptions::default()).unwrap();
            assert_eq!(rederived.join(), utt.merged, "utterance {}", utt.utt_id);
        }
    }
}
