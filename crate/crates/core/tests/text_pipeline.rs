use std::collections::BTreeMap;

use mmfuse_core::text::{
    decode, normalize_text, tokenize, train_vocabulary, EmojiPolicy, NormalizerConfig, Vocabulary, CLS, PAD,
    SPECIAL_TOKENS, UNK,
};
use mmfuse_core::Error;
use proptest::prelude::*;

fn rules() -> NormalizerConfig {
    NormalizerConfig::default()
}

#[test]
fn normalization_examples() {
    assert_eq!(normalize_text("  a,, b  ", &rules()), "a b");
    assert_eq!(normalize_text("", &rules()), "");
    assert_eq!(normalize_text("!?.,;:\"'()", &rules()), "");
    assert_eq!(normalize_text("ভাই!!  ভালো\tআছো?", &rules()), "ভাই ভালো আছো");
}

#[test]
fn emoji_policies() {
    let text = "great 😀 day 🎉";
    assert_eq!(normalize_text(text, &rules()), "great day");
    let mut map = BTreeMap::new();
    map.insert("😀".to_string(), "smile".to_string());
    let cfg = NormalizerConfig { emoji_policy: EmojiPolicy::MapToToken, emoji_tokens: map, ..rules() };
    assert_eq!(normalize_text(text, &cfg), "great smile day");
}

#[test]
fn spelling_table_applies_to_whole_words() {
    let mut fixes = BTreeMap::new();
    fixes.insert("teh".to_string(), "the".to_string());
    let cfg = NormalizerConfig { spelling_corrections: fixes, ..rules() };
    assert_eq!(normalize_text("teh tehran, teh!", &cfg), "the tehran the");
}

#[test]
fn vocabulary_hand_traces() {
    let v = train_vocabulary(&["aaaa"], 8).unwrap();
    assert!(v.contains("a"));
    assert!(v.contains("aa"), "{:?}", v.tokens());
    assert_eq!(&v.tokens()[..4], &SPECIAL_TOKENS.map(String::from));

    let v = train_vocabulary(&["x x x x", "xxxx"], 12).unwrap();
    for t in &v.tokens()[4..] {
        let bare = t.trim_start_matches("##");
        assert!(!bare.is_empty() && bare.chars().all(|c| c == 'x'), "{t}");
    }
    assert!(v.contains("x"));

    let empty: [&str; 0] = [];
    assert!(matches!(train_vocabulary(&empty, 50), Err(Error::Config(_))));
    assert!(matches!(train_vocabulary(&["abcdef"], 9), Err(Error::Config(_))));
}

#[test]
fn tokenize_examples() {
    let v = train_vocabulary(&["hello world", "hello there"], 40).unwrap();
    let e = tokenize("", &v, 6);
    assert_eq!(e.ids, vec![CLS, PAD, PAD, PAD, PAD, PAD]);
    assert_eq!(e.attention_mask, vec![1, 0, 0, 0, 0, 0]);
    let u = tokenize("😀", &v, 4);
    assert_eq!(u.ids, vec![CLS, UNK, PAD, PAD]);
    let rt = tokenize("hello world there", &v, 16);
    assert_eq!(decode(&rt.ids, &v), "hello world there");
}

#[test]
fn vocabulary_file_round_trip() {
    let v = train_vocabulary(&["the cat sat on the mat", "a cat"], 30).unwrap();
    let back = Vocabulary::from_file_string(&v.to_file_string()).unwrap();
    assert_eq!(back, v);
    assert_eq!(back.to_file_string().lines().count(), v.len());
}

fn corpus() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[a-e]{1,6}( [a-e]{1,6}){0,4}", 1..12)
}

proptest! {
    #[test]
    fn tokenize_is_total_and_well_formed(text in "\\PC{0,40}", max_len in 2usize..20) {
        let v = train_vocabulary(&["some words here", "more words"], 40).unwrap();
        let s = tokenize(&text, &v, max_len);
        prop_assert_eq!(s.ids.len(), max_len);
        prop_assert_eq!(s.attention_mask.len(), max_len);
        prop_assert_eq!(s.ids[0], CLS);
        let real = s.attention_mask.iter().filter(|&&m| m == 1).count();
        prop_assert!(s.attention_mask[..real].iter().all(|&m| m == 1));
        for (id, m) in s.ids.iter().zip(&s.attention_mask) {
            prop_assert_eq!(*id == PAD, *m == 0);
            prop_assert!(*id < v.len());
        }
    }

    #[test]
    fn vocabulary_ignores_corpus_order(mut lines in corpus(), target in 30usize..60) {
        let a = train_vocabulary(&lines, target);
        lines.reverse();
        let b = train_vocabulary(&lines, target);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "order changed the outcome"),
        }
    }

    #[test]
    fn in_vocabulary_text_round_trips(lines in corpus()) {
        let v = match train_vocabulary(&lines, 60) {
            Ok(v) => v,
            Err(_) => return Ok(()),
        };
        let text = normalize_text(&lines[0], &rules());
        let s = tokenize(&text, &v, 64);
        prop_assert_eq!(decode(&s.ids, &v), text);
    }
}
