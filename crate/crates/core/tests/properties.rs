use std::collections::BTreeSet;

use proptest::prelude::*;

use memsum_dqa::corpus::{encode_instance, Dataset, Vocabulary, L_CAP};
use memsum_dqa::eval::{ema, gen_synthetic};
use memsum_dqa::policy::{render_answer, PredictionRecord};
use memsum_dqa::training::gold_sequence;

fn golds() -> Vec<memsum_dqa::corpus::QAInstance> {
    gen_synthetic(4, 8, 21).unwrap().instances(L_CAP).items
}

fn prediction(qid: &str, blocks: &BTreeSet<usize>) -> PredictionRecord {
    PredictionRecord {
        qid: qid.to_string(),
        predicted_blocks: blocks.iter().copied().collect(),
        answer: render_answer(blocks),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ema_ignores_input_order(keep in prop::collection::vec(any::<bool>(), 16), rot in 0usize..16) {
        let golds = golds();
        let preds: Vec<_> = golds
            .iter()
            .zip(&keep)
            .map(|(g, &k)| {
                let mut set = g.question.answers.clone();
                if !k {
                    set.insert(7);
                }
                prediction(&g.question.qid, &set)
            })
            .collect();
        let base = ema(&preds, &golds).unwrap();
        let mut p2 = preds.clone();
        p2.rotate_left(rot);
        let mut g2 = golds.clone();
        g2.rotate_right(rot % 5);
        let other = ema(&p2, &g2).unwrap();
        prop_assert_eq!(&base.parent, &other.parent);
        prop_assert_eq!(&base.child, &other.child);
        prop_assert_eq!(&base.overall_ema, &other.overall_ema);
    }

    #[test]
    fn report_is_recomputable_from_verdicts(drop in prop::collection::vec(any::<bool>(), 16)) {
        let golds = golds();
        let preds: Vec<_> = golds
            .iter()
            .zip(&drop)
            .filter(|(_, &d)| !d)
            .map(|(g, _)| prediction(&g.question.qid, &BTreeSet::from([0])))
            .collect();
        let r = ema(&preds, &golds).unwrap();
        let matched = r.verdicts.iter().filter(|v| v.matched).count();
        prop_assert_eq!(matched, r.overall.correct);
        prop_assert_eq!(r.verdicts.len(), r.overall.total);
        prop_assert_eq!(r.missing_predictions, drop.iter().filter(|&&d| d).count());
        let pct = 100.0 * matched as f64 / r.verdicts.len() as f64;
        prop_assert_eq!(format!("{pct:.2}"), r.overall_ema);
    }

    #[test]
    fn gold_sequences_are_ascending_then_stop(seed in 0u64..500, n_max in 1usize..=4) {
        let ds = gen_synthetic(1, 9, seed).unwrap();
        for inst in ds.instances(L_CAP).items {
            let g = gold_sequence(&inst, n_max);
            let actions: Vec<usize> = g.steps.iter().filter_map(|s| s.action).collect();
            prop_assert!(actions.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(actions.len() <= n_max);
            let last = g.steps.last().unwrap();
            prop_assert!(last.action.is_none() && last.stop_label == 1);
            for (k, s) in g.steps.iter().enumerate() {
                prop_assert_eq!(s.state.extracted(), &actions[..k]);
            }
        }
    }

    #[test]
    fn encoded_sentences_respect_caps(
        words in prop::collection::vec("[a-z]{1,6}", 1..60),
        question in prop::collection::vec("[a-z]{1,6}", 1..50),
        t_cap in 40usize..80,
        l_cap in 1usize..5,
    ) {
        let block_text = words.join(" ");
        let line = serde_json::json!({
            "doc_id": "d",
            "blocks": (0..6).map(|i| serde_json::json!({"id": i, "text": block_text})).collect::<Vec<_>>(),
            "questions": [{"qid": "q", "qtype": "child", "text": question.join(" "), "answers": []}],
        });
        let ds = Dataset::parse_str(&line.to_string()).unwrap();
        let inst = ds.instances(l_cap).items;
        let vocab = Vocabulary::build(&inst, 1).unwrap();
        let a = encode_instance(&inst[0], &vocab, t_cap, l_cap).unwrap();
        let b = encode_instance(&inst[0], &vocab, t_cap, l_cap).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), l_cap.min(6));
        for s in &a {
            prop_assert!(s.len() <= t_cap);
            prop_assert!(s.len() >= 3);
        }
    }

    #[test]
    fn dataset_text_round_trips(seed in 0u64..1000, docs in 1usize..4, blocks in 6usize..15) {
        let ds = gen_synthetic(docs, blocks, seed).unwrap();
        let text = ds.to_jsonl();
        let back = Dataset::parse_str(&text).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(back.to_jsonl(), text);
    }
}
