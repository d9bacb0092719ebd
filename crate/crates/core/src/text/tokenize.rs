use super::vocab::{Vocabulary, CLS, CONTINUATION, PAD, SEP, UNK};

/// Fixed-length id sequence with its attention mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub attention_mask: Vec<u8>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of real (unmasked) positions, `[CLS]` included.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }
}

/// Greedy longest-match pieces for one word. Whatever cannot be matched
/// from the current offset onwards collapses into a single `[UNK]`.
fn segment_word(word: &str, vocab: &Vocabulary, out: &mut Vec<usize>) {
    let bounds: Vec<usize> = word
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(word.len()))
        .collect();
    let mut start = 0; // index into bounds
    let mut candidate = String::new();
    while start + 1 < bounds.len() {
        let mut matched = None;
        for end in (start + 1..bounds.len()).rev() {
            let sub = &word[bounds[start]..bounds[end]];
            candidate.clear();
            if start > 0 {
                candidate.push_str(CONTINUATION);
            }
            candidate.push_str(sub);
            if let Some(id) = vocab.id(&candidate) {
                matched = Some((id, end));
                break;
            }
        }
        match matched {
            Some((id, end)) => {
                out.push(id);
                start = end;
            }
            None => {
                out.push(UNK);
                return;
            }
        }
    }
}

/// `[CLS]` followed by the subword ids of each whitespace-separated word,
/// truncated to `max_len` and padded with `[PAD]`.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    let max_len = max_len.max(2);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    for word in text.split_whitespace() {
        if ids.len() >= max_len {
            break;
        }
        segment_word(word, vocab, &mut ids);
    }
    ids.truncate(max_len);
    let real = ids.len();
    ids.resize(max_len, PAD);
    let mut attention_mask = vec![1u8; real];
    attention_mask.resize(max_len, 0);
    TokenSequence {
        ids,
        attention_mask,
    }
}

/// Inverse of [`tokenize`] for in-vocabulary text: continuation pieces are
/// glued to the previous piece, everything else starts a new word. `[PAD]`,
/// `[CLS]` and `[SEP]` are skipped.
pub fn decode(ids: &[usize], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for &id in ids {
        if matches!(id, PAD | CLS | SEP) {
            continue;
        }
        let Some(tok) = vocab.token(id) else { continue };
        match tok.strip_prefix(CONTINUATION) {
            Some(rest) if !out.is_empty() => out.push_str(rest),
            _ => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(tok);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::vocab::train_vocabulary;
    use super::*;

    fn vocab() -> Vocabulary {
        train_vocabulary(&["kolamo kolami ranu ranu kolamo bo"], 40).unwrap()
    }

    #[test]
    fn empty_text_is_cls_then_padding() {
        let seq = tokenize("", &vocab(), 5);
        assert_eq!(seq.ids, vec![CLS, PAD, PAD, PAD, PAD]);
        assert_eq!(seq.attention_mask, vec![1, 0, 0, 0, 0]);
    }

    #[test]
    fn unknown_glyph_is_unk() {
        let seq = tokenize("ঝ", &vocab(), 4);
        assert_eq!(seq.ids, vec![CLS, UNK, PAD, PAD]);
        assert_eq!(seq.attention_mask, vec![1, 1, 0, 0]);
    }

    #[test]
    fn unmatched_remainder_becomes_single_unk() {
        let v = vocab();
        let seq = tokenize("kolazz", &v, 8);
        assert_eq!(*seq.ids.iter().rev().find(|&&i| i != PAD).unwrap(), UNK);
        assert_eq!(seq.ids.iter().filter(|&&i| i == UNK).count(), 1);
    }

    #[test]
    fn round_trip_in_vocabulary_text() {
        let v = vocab();
        let text = "ranu kolami bo kolamo";
        let seq = tokenize(text, &v, 16);
        assert!(!seq.ids.contains(&UNK));
        assert_eq!(decode(&seq.ids, &v), text);
    }

    #[test]
    fn truncates_to_max_len() {
        let v = vocab();
        let seq = tokenize("ranu ranu ranu ranu ranu ranu", &v, 3);
        assert_eq!(seq.ids.len(), 3);
        assert_eq!(seq.attention_mask, vec![1, 1, 1]);
    }
}
