use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use moviedesc::analysis::{
    entropy_bits, mean_filter, sort_by_length, textual_nn, topic_report, visual_knn,
    ScoredSentence, TopicLexicon,
};
use moviedesc::classifiers::{
    clip_label_sets, negative_pool, roc_auc, score_split, select_labels, train_group_classifiers,
    ClassifierBank, SvmTrainConfig, TrainingMode,
};
use moviedesc::corpus::{
    assign_groups, extract_labels, match_unparsed, AnnotatedLabel, Group, GroupLexicon,
    GroupedLabel, KnownLabels, LabelVocabulary, ParsedAnnotation, Sentence,
};
use moviedesc::lstm::dropout::apply_dropout;
use moviedesc::lstm::{lr_at, Architecture, DropoutMode, DropoutSite, LrSchedule, Network};
use moviedesc::metrics::{bleu4, cider_scores, meteor, rouge_l, CiderConfig, MeteorConfig};
use moviedesc::synth::{self, SynthConfig};
use proptest::prelude::*;
use proptest::sample::select;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod common;

const LABELS: [&str; 8] = [
    "open",
    "door",
    "kitchen",
    "cat",
    "domestic cat",
    "run",
    "bed",
    "face",
];

fn annotation() -> impl Strategy<Value = ParsedAnnotation> {
    (
        prop::collection::vec((select(&LABELS[..]), any::<bool>()), 0..5),
        any::<bool>(),
        0..1000u32,
    )
        .prop_map(|(labels, parse_ok, id)| ParsedAnnotation {
            clip_id: format!("c{id}"),
            labels: if parse_ok {
                labels
                    .into_iter()
                    .map(|(t, verb)| AnnotatedLabel {
                        text: t.to_string(),
                        verb,
                    })
                    .collect()
            } else {
                vec![]
            },
            parse_ok,
        })
}

fn lexicon() -> GroupLexicon {
    GroupLexicon::new(["kitchen"], ["cat", "door", "bed", "face"]).unwrap()
}

proptest! {
    #[test]
    fn extract_labels_is_monotone_in_min_count(
        anns in prop::collection::vec(annotation(), 0..40),
        a in 1usize..6,
        b in 1usize..6,
    ) {
        let (lo, hi) = (a.min(b), a.max(b));
        let low = extract_labels(&anns, lo).unwrap();
        let high = extract_labels(&anns, hi).unwrap();
        let low_t: BTreeSet<_> = low.entries.iter().map(|e| &e.text).collect();
        for e in &high.entries {
            prop_assert!(low_t.contains(&e.text));
            prop_assert!(e.count >= hi);
            // Counted once per annotation.
            let direct = anns.iter().filter(|x| x.labels.iter().any(|l| l.text == e.text)).count();
            prop_assert_eq!(e.count, direct);
        }
    }

    #[test]
    fn assign_groups_output_is_grounded_in_input(
        anns in prop::collection::vec(annotation(), 0..40),
        grouped in any::<bool>(),
    ) {
        let counts = extract_labels(&anns, 1).unwrap();
        let policy = if grouped { synth::grouped_assignment() } else { synth::uniform_assignment() };
        let vocab = assign_groups(&counts, &lexicon(), &policy);
        let input: BTreeSet<&str> = counts.entries.iter().map(|e| e.text.as_str()).collect();
        let mut seen: BTreeMap<&str, Vec<Group>> = BTreeMap::new();
        for e in &vocab.entries {
            prop_assert!(input.contains(e.text.as_str()));
            prop_assert_eq!(&e.channels[..], policy.channels_for(e.group));
            seen.entry(e.text.as_str()).or_default().push(e.group);
        }
        for (text, groups) in seen {
            prop_assert!(groups.len() <= 2, "{text}: {groups:?}");
            if groups.len() == 2 {
                prop_assert!(groups.contains(&Group::Verb), "{text}: {groups:?}");
            }
        }
        // Canonical order: sorted by (group, text) without duplicates.
        let keys: Vec<(Group, &str)> = vocab.entries.iter().map(|e| (e.group, e.text.as_str())).collect();
        prop_assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn vocabulary_order_survives_serialization(anns in prop::collection::vec(annotation(), 0..40)) {
        let counts = extract_labels(&anns, 1).unwrap();
        let vocab = assign_groups(&counts, &lexicon(), &synth::grouped_assignment());
        let bytes = serde_json::to_vec(&vocab).unwrap();
        let back: LabelVocabulary = serde_json::from_slice(&bytes).unwrap();
        prop_assert_eq!(&back, &vocab);
        prop_assert_eq!(serde_json::to_vec(&back).unwrap(), bytes);
    }

    #[test]
    fn match_unparsed_leaves_parsed_annotations_alone(
        anns in prop::collection::vec(annotation(), 1..20),
        words in prop::collection::vec(select(&["someone", "opens", "the", "door", "cats", "runs"][..]), 1..8),
    ) {
        let mut anns = anns;
        for (i, a) in anns.iter_mut().enumerate() {
            a.clip_id = format!("c{i}");
        }
        let sentences: Vec<Sentence> =
            anns.iter().map(|a| Sentence::new(&a.clip_id, words.join(" "))).collect();
        let known = KnownLabels::from_parsed(&anns);
        let out = match_unparsed(&sentences, &anns, &known);
        prop_assert_eq!(out.len(), anns.len());
        for (before, after) in anns.iter().zip(&out) {
            if before.parse_ok {
                prop_assert_eq!(before, after);
            }
        }
    }
}

fn bank() -> &'static (ClassifierBank, moviedesc::corpus::CorpusSplit) {
    static BANK: OnceLock<(ClassifierBank, moviedesc::corpus::CorpusSplit)> = OnceLock::new();
    BANK.get_or_init(|| {
        let c = synth::generate(&SynthConfig::default());
        let counts = extract_labels(&c.train.annotations, 10).unwrap();
        let vocab = assign_groups(&counts, &c.lexicon, &synth::grouped_assignment());
        let bank = train_group_classifiers(
            &c.train,
            &vocab,
            &SvmTrainConfig::default(),
            TrainingMode::Trained,
        )
        .unwrap()
        .with_auc_on(&c.val)
        .unwrap();
        (bank, c.test)
    })
}

fn group_label(text: &str, group: Group) -> GroupedLabel {
    GroupedLabel {
        text: text.into(),
        group,
        count: 1,
        channels: vec!["dt".into()],
    }
}

proptest! {
    #[test]
    fn roc_auc_ignores_increasing_transforms(
        pairs in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..60),
    ) {
        let mut pairs = pairs;
        pairs[0].1 = true;
        pairs[1].1 = false;
        let (s, t): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
        let a = roc_auc(&s, &t).unwrap();
        let cubed: Vec<f64> = s.iter().map(|x| x * x * x + 2.0 * x).collect();
        let shifted: Vec<f64> = s.iter().map(|x| 3.0 * x - 7.0).collect();
        prop_assert_eq!(roc_auc(&cubed, &t).unwrap(), a);
        prop_assert_eq!(roc_auc(&shifted, &t).unwrap(), a);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn select_labels_is_monotone_in_threshold(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (bank, _) = bank();
        let (lo, hi) = (a.min(b), a.max(b));
        let keep = |t: f64| -> Vec<String> {
            bank.retain_by_auc(t).unwrap().classifiers.iter().map(|c| c.label.text.clone()).collect()
        };
        let (low, high) = (keep(lo), keep(hi));
        // Order-preserving subsequence.
        let mut it = low.iter();
        for h in &high {
            prop_assert!(it.any(|l| l == h), "{h} missing or out of order");
        }
    }

    #[test]
    fn trained_negatives_are_a_subset_of_retrieved(
        sets in prop::collection::vec(prop::collection::btree_set(select(&["a", "b", "c", "x", "y"][..]), 0..4), 1..30),
        target in select(&["a", "b", "x"][..]),
    ) {
        let groups: BTreeMap<Group, BTreeSet<&str>> = [
            (Group::Verb, ["a", "b", "c"].into_iter().collect()),
            (Group::Object, ["x", "y"].into_iter().collect()),
        ]
        .into_iter()
        .collect();
        let group = if target == "x" { Group::Object } else { Group::Verb };
        let label = group_label(target, group);
        let trained = negative_pool(&label, &sets, &groups, TrainingMode::Trained);
        let retrieved: BTreeSet<usize> =
            negative_pool(&label, &sets, &groups, TrainingMode::Retrieved).into_iter().collect();
        for i in &trained {
            prop_assert!(retrieved.contains(i));
            prop_assert!(!sets[*i].contains(target));
        }
    }
}

#[test]
fn score_vectors_are_open_unit_and_canonically_ordered() {
    let (bank, test) = bank();
    let selected = select_labels(bank, test, 0.7).unwrap();
    let a = score_split(&selected, test).unwrap();
    let reloaded = ClassifierBank::from_bytes(&selected.to_bytes().unwrap()).unwrap();
    let b = score_split(&reloaded, test).unwrap();
    assert_eq!(a, b);
    for v in &a {
        assert_eq!(v.scores.len(), selected.len());
        assert!(v.scores.iter().all(|&s| s > 0.0 && s < 1.0));
    }
    assert!(clip_label_sets(test).len() == test.clips.len());
}

#[test]
fn extreme_margins_stay_inside_the_unit_interval() {
    use moviedesc::classifiers::logistic;
    for z in [-1e6, -800.0, -40.0, 0.0, 40.0, 800.0, 1e6] {
        let p = logistic(z);
        assert!(p > 0.0 && p < 1.0, "logistic({z}) = {p}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_outputs_are_distributions(
        arch in select(&Architecture::ALL[..]),
        visual in prop::collection::vec(-3.0f64..3.0, 5),
        words in prop::collection::vec(0usize..12, 1..6),
        seed in 0u64..1000,
    ) {
        let mut cfg = common::toy_config(arch, DropoutSite::LstmDrop, LrSchedule::Step { base_lr: 0.1, step_size: 10 });
        cfg.seed = seed;
        let net = Network::new(cfg, common::toy_vocab()).unwrap();
        let mut state = net.initial_state();
        for w in words {
            let d = net.step(&visual, w, &mut state).unwrap();
            prop_assert!(d.iter().all(|p| *p >= 0.0));
            prop_assert!((d.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn lr_is_nonincreasing(
        base in 1e-4f64..1.0,
        step in 1usize..5000,
        power in 0.1f64..2.0,
        max_iter in 1usize..30000,
        a in 0usize..40000,
        b in 0usize..40000,
    ) {
        let (lo, hi) = (a.min(b), a.max(b));
        for s in [
            LrSchedule::Step { base_lr: base, step_size: step },
            LrSchedule::Poly { base_lr: base, power, max_iter },
        ] {
            prop_assert!(lr_at(&s, hi) <= lr_at(&s, lo));
            prop_assert!(lr_at(&s, lo) <= base && lr_at(&s, hi) >= 0.0);
        }
    }
}

#[test]
fn dropout_preserves_expectation() {
    let v = [0.3, -1.2, 2.5, 0.01, -0.7, 4.0];
    for r in [0.2, 0.5] {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 100_000;
        let mut mean = [0.0; 6];
        for _ in 0..n {
            let d = apply_dropout(&v, r, DropoutMode::Train, &mut rng);
            mean.iter_mut()
                .zip(&d)
                .for_each(|(m, x)| *m += x / n as f64);
        }
        for (m, x) in mean.iter().zip(&v) {
            assert!(((m - x) / x).abs() < 0.01, "r={r}: {m} vs {x}");
        }
    }
}

fn sentence(min: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..6, min..10)
}

fn render(s: &[usize], perm: &[usize], prefix: &str) -> Vec<String> {
    s.iter().map(|&i| format!("{prefix}{}", perm[i])).collect()
}

proptest! {
    #[test]
    fn metrics_ignore_bijective_relabeling(
        pairs in prop::collection::vec((sentence(1), sentence(1)), 2..5),
        perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let id: Vec<usize> = (0..6).collect();
        let cfg = MeteorConfig::default();
        let view = |p: &[usize], prefix: &str| -> (Vec<Vec<String>>, Vec<Vec<Vec<String>>>) {
            (
                pairs.iter().map(|(c, _)| render(c, p, prefix)).collect(),
                pairs.iter().map(|(_, r)| vec![render(r, p, prefix)]).collect(),
            )
        };
        let (c1, r1) = view(&id, "k");
        let (c2, r2) = view(&perm, "j");
        for k in 0..pairs.len() {
            prop_assert_eq!(meteor(&c1[k], &r1[k], &cfg).unwrap(), meteor(&c2[k], &r2[k], &cfg).unwrap());
            prop_assert_eq!(rouge_l(&c1[k], &r1[k][0]), rouge_l(&c2[k], &r2[k][0]));
        }
        prop_assert_eq!(bleu4(&c1, &r1, false).unwrap(), bleu4(&c2, &r2, false).unwrap());
        let cider1 = cider_scores(&c1, &r1, &CiderConfig::default()).unwrap();
        let cider2 = cider_scores(&c2, &r2, &CiderConfig::default()).unwrap();
        for (a, b) in cider1.iter().zip(&cider2) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn metric_ranges(pairs in prop::collection::vec((sentence(1), sentence(1)), 2..5), smoothing in any::<bool>()) {
        let cfg = MeteorConfig::default();
        let c: Vec<Vec<String>> = pairs.iter().map(|(c, _)| render(c, &[0, 1, 2, 3, 4, 5], "k")).collect();
        let r: Vec<Vec<Vec<String>>> = pairs.iter().map(|(_, r)| vec![render(r, &[0, 1, 2, 3, 4, 5], "k")]).collect();
        for k in 0..c.len() {
            let m = meteor(&c[k], &r[k], &cfg).unwrap();
            prop_assert!((0.0..=1.0).contains(&m));
            let l = rouge_l(&c[k], &r[k][0]);
            prop_assert!((0.0..=1.0).contains(&l));
        }
        let b = bleu4(&c, &r, smoothing).unwrap();
        prop_assert!((0.0..=1.0).contains(&b));
        prop_assert!(cider_scores(&c, &r, &CiderConfig::default()).unwrap().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn self_match_beats_fewer_matches(s in sentence(1), other in sentence(1)) {
        let cfg = MeteorConfig::default();
        let id = [0, 1, 2, 3, 4, 5];
        let s_w = render(&s, &id, "k");
        let mut o: Vec<usize> = other;
        o.resize(s.len(), 0);
        let o_w = render(&o, &id, "k");
        prop_assume!(o_w != s_w);
        let own = meteor(&s_w, std::slice::from_ref(&s_w), &cfg).unwrap();
        prop_assert!(own >= meteor(&s_w, std::slice::from_ref(&o_w), &cfg).unwrap());
        prop_assert!(own >= meteor(&o_w, std::slice::from_ref(&s_w), &cfg).unwrap());
    }
}

proptest! {
    #[test]
    fn mean_filter_stays_within_bounds(
        series in prop::collection::vec(-100.0f64..100.0, 1..60),
        window in 1usize..80,
        constant in -5.0f64..5.0,
    ) {
        let out = mean_filter(&series, window).unwrap();
        prop_assert_eq!(out.len(), series.len());
        let lo = series.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(out.iter().all(|v| *v >= lo && *v <= hi));
        let flat = vec![constant; series.len()];
        prop_assert_eq!(mean_filter(&flat, window).unwrap(), flat);
        prop_assert_eq!(mean_filter(&series, 1).unwrap(), series);
    }

    #[test]
    fn visual_knn_is_monotone_in_k(
        train in prop::collection::vec((prop::collection::vec(-1.0f64..1.0, 3), sentence(1)), 1..15),
        query in prop::collection::vec(-1.0f64..1.0, 3),
        reference in sentence(1),
    ) {
        let cfg = MeteorConfig::default();
        let id = [0, 1, 2, 3, 4, 5];
        let vectors: Vec<Vec<f64>> = train.iter().map(|(v, _)| v.clone()).collect();
        let sentences: Vec<Vec<String>> = train.iter().map(|(_, s)| render(s, &id, "k")).collect();
        let r = render(&reference, &id, "k");
        let mut prev = f64::NEG_INFINITY;
        for k in 1..=train.len() {
            let (best, nn) = visual_knn(&query, &vectors, &sentences, k, &r, &cfg).unwrap();
            prop_assert_eq!(nn.len(), k);
            prop_assert!(best >= prev);
            prev = best;
        }
        let (nn_score, _) = textual_nn(&r, &sentences, &cfg).unwrap();
        prop_assert!(nn_score >= prev);
    }

    #[test]
    fn entropy_is_maximal_when_uniform(counts in prop::collection::vec(1usize..20, 1..10), c in 1usize..20) {
        let m = counts.len() as f64;
        let h = entropy_bits(counts.iter().copied());
        prop_assert!(h <= m.log2() + 1e-12);
        let uniform = entropy_bits(std::iter::repeat_n(c, counts.len()));
        prop_assert!((uniform - m.log2()).abs() <= 1e-12);
        if counts.iter().any(|&x| x != counts[0]) {
            prop_assert!(h < m.log2() - 1e-12);
        }
    }

    #[test]
    fn length_sort_is_a_stable_ascending_permutation(lens in prop::collection::vec(0usize..12, 1..50)) {
        let sentences: Vec<Vec<String>> = lens.iter().map(|&n| vec!["w".to_string(); n]).collect();
        let order = sort_by_length(&sentences);
        let mut seen = order.clone();
        seen.sort();
        prop_assert_eq!(seen, (0..lens.len()).collect::<Vec<_>>());
        for w in order.windows(2) {
            let (a, b) = (w[0], w[1]);
            prop_assert!(lens[a] < lens[b] || (lens[a] == lens[b] && a < b));
        }
    }

    #[test]
    fn topic_counts_cover_single_verb_sentences(
        verbs in prop::collection::vec(prop::collection::vec(select(&["open", "run", "look", "sit"][..]), 0..3), 1..30),
    ) {
        let lexicon = TopicLexicon::parse("open\tcontact\nrun\tmotion\nlook\tperception\n", std::path::Path::new("t")).unwrap();
        let records: Vec<ScoredSentence> = verbs
            .iter()
            .enumerate()
            .map(|(i, v)| ScoredSentence {
                clip_id: format!("c{i}"),
                tokens: vec!["someone".into()],
                verbs: v.iter().map(|s| s.to_string()).collect(),
                score: 0.5,
            })
            .collect();
        let report = topic_report(&records, &lexicon);
        let single = verbs.iter().filter(|v| v.len() == 1).count();
        prop_assert_eq!(report.topics.iter().map(|t| t.count).sum::<usize>(), single);
    }
}
