use phrasemine::stem::{stem, stem_phrase};

#[test]
fn frozen_stems_match() {
    let fixture = include_str!("data/porter_fixture.tsv");
    let mut checked = 0;
    for line in fixture.lines().filter(|l| !l.trim().is_empty()) {
        let (word, expected) = line.split_once('\t').expect("word<TAB>stem");
        assert_eq!(stem(word), expected, "stem of {word}");
        checked += 1;
    }
    assert!(checked >= 50);
}

#[test]
fn phrases_stem_per_word() {
    assert_eq!(stem_phrase("Neural Networks"), vec!["neural", "network"]);
    assert_eq!(stem_phrase("  graph   embeddings "), vec!["graph", "embed"]);
}
