use std::path::PathBuf;

use ideoaxis_core::embedding::HashedNgramProvider;
use ideoaxis_core::nlproc::{
    classify, prepare_sentences, segment, stratified_split, train_classifier, EmbeddingClassifier,
    LabeledSet, SentenceType, TrainOptions,
};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

#[test]
fn segmentation_matches_hand_split_fixture() {
    let text = include_str!("fixtures/segmentation.txt");
    let mut total = 0;
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let expected: Vec<&str> = line.split('‖').map(str::trim).collect();
        let input = line.replace('‖', "");
        assert_eq!(segment(&input), expected, "input: {input}");
        total += expected.len();
    }
    assert_eq!(total, 50);
}

#[test]
fn labeled_fixture_is_balanced_and_contains_reference_items() {
    let set = LabeledSet::load_tsv(&data_dir().join("labeled/sentence_types.tsv")).unwrap();
    assert_eq!(set.items.len(), 300);
    for t in SentenceType::ALL {
        assert_eq!(set.items.iter().filter(|(_, l)| *l == t).count(), 60, "{t}");
    }
    assert_eq!(set.label_of("私は反対です。"), Some(SentenceType::Opinion));
    assert_eq!(set.label_of("これは何条に基づくのですか。"), Some(SentenceType::Question));
}

#[test]
fn baseline_classifier_on_fixture() {
    let set = LabeledSet::load_tsv(&data_dir().join("labeled/sentence_types.tsv")).unwrap();
    let provider = HashedNgramProvider::new(768);
    let (train, eval) = stratified_split(&set, 0.2, 7);
    assert_eq!(eval.items.len(), 60);
    let opts = TrainOptions { seed: 7, ..Default::default() };
    let (_, report) = train_classifier(&train, Some(&eval), &provider, None, &opts).unwrap();
    let f1 = report.eval_macro_f1.unwrap();
    assert!(f1 >= 0.6, "held-out macro-F1 {f1}");

    // trained on everything, the reference sentences get their gold labels
    let (model, _) = train_classifier(&set, None, &provider, None, &opts).unwrap();
    let clf = EmbeddingClassifier::new(model, &provider, None).unwrap();
    let sentences = prepare_sentences("s1", "私は反対です。これは何条に基づくのですか。");
    let units = classify(&sentences, &clf).unwrap();
    assert_eq!(units[0].label, SentenceType::Opinion);
    assert_eq!(units[1].label, SentenceType::Question);
    assert!(units.iter().all(|u| (0.0..=1.0).contains(&u.confidence)));
}
