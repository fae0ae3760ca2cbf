use reflect_lab::corpus::{generate_corpus, read_jsonl, write_jsonl, CorpusSpec, CorpusStyle, CotExample};
use reflect_lab::TaskKind;

fn spec(task: TaskKind, style: CorpusStyle, count: u64, noise: f64, seed: u64) -> CorpusSpec {
    CorpusSpec { example_count: count, proposal_noise: noise, ..CorpusSpec::new(task, style, seed) }
}

#[test]
fn mixed_corpus_round_trips_through_gzip() {
    let mut corpus = Vec::new();
    for (i, style) in [CorpusStyle::None, CorpusStyle::Binary, CorpusStyle::Detailed, CorpusStyle::OptionalDetailed]
        .into_iter()
        .enumerate()
    {
        corpus.extend(generate_corpus(&spec(TaskKind::Mult, style, 100, 0.25, i as u64)).unwrap());
        corpus.extend(generate_corpus(&spec(TaskKind::Sudoku, style, 100, 0.25, 10 + i as u64)).unwrap());
    }
    corpus.truncate(1000);
    assert_eq!(corpus.len(), 1000);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mixed.jsonl.gz");
    write_jsonl(&corpus, &path).unwrap();
    let back: Vec<CotExample> = read_jsonl(&path).unwrap();
    assert_eq!(back, corpus);
    assert!(back.iter().all(CotExample::labels_match_oracle));
}

#[test]
fn proposal_noise_sets_the_negative_label_rate() {
    let corpus = generate_corpus(&spec(TaskKind::Mult, CorpusStyle::Binary, 10_000, 0.3, 7)).unwrap();
    let labels: Vec<_> = corpus.iter().flat_map(|ex| ex.labels()).collect();
    let negative = labels.iter().filter(|v| v.is_rejected()).count();
    let rate = negative as f64 / labels.len() as f64;
    assert!((rate - 0.3).abs() <= 0.01, "negative rate {rate} over {} steps", labels.len());
}

#[test]
fn detailed_labels_have_one_negative_per_corrupted_step() {
    let corpus = generate_corpus(&spec(TaskKind::Mult, CorpusStyle::Detailed, 500, 0.5, 3)).unwrap();
    for ex in &corpus {
        for v in ex.labels() {
            assert!(v.negative_positions().len() <= 1, "{v}");
        }
    }
}
