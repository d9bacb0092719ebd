//! Text cleaning and subword tokenization.

mod normalize;
mod tokenize;
mod vocab;

pub use normalize::{normalize_text, EmojiPolicy, Identity, Normalizer, NormalizerConfig, Transliterate};
pub use tokenize::{decode, tokenize, TokenSequence};
pub use vocab::{train_vocabulary, Vocabulary, CLS, CONTINUATION, PAD, SEP, SPECIAL_TOKENS, UNK};
