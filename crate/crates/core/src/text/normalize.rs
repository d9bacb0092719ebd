use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// What happens to emoji and pictographs during cleaning.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmojiPolicy {
    #[default]
    Strip,
    /// Replace emoji found in `emoji_tokens` by their mapped word; others are stripped.
    MapToToken,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizerConfig {
    /// Remove ASCII punctuation and common Unicode punctuation marks.
    pub strip_punctuation: bool,
    /// Extra characters treated as punctuation.
    pub extra_punctuation: String,
    pub emoji_policy: EmojiPolicy,
    pub emoji_tokens: BTreeMap<String, String>,
    /// Whole-word replacements applied after cleaning.
    pub spelling_corrections: BTreeMap<String, String>,
}

impl Default for NormalizerConfig {
    fn default() -> Self {
        NormalizerConfig {
            strip_punctuation: true,
            extra_punctuation: String::new(),
            emoji_policy: EmojiPolicy::Strip,
            emoji_tokens: BTreeMap::new(),
            spelling_corrections: BTreeMap::new(),
        }
    }
}

/// Pre-cleaning rewrite stage for mixed-script input.
pub trait Transliterate: Send + Sync {
    fn transliterate(&self, text: &str) -> String;
}

/// The default stage: returns its input unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl Transliterate for Identity {
    fn transliterate(&self, text: &str) -> String {
        text.to_string()
    }
}

/// Cleaning pipeline: transliterate, handle emoji, drop punctuation and
/// control characters, apply spelling fixes, collapse whitespace.
pub struct Normalizer {
    config: NormalizerConfig,
    stage: Box<dyn Transliterate>,
}

impl Normalizer {
    pub fn new(config: NormalizerConfig) -> Self {
        Normalizer {
            config,
            stage: Box::new(Identity),
        }
    }

    pub fn with_transliterator(mut self, stage: Box<dyn Transliterate>) -> Self {
        self.stage = stage;
        self
    }

    pub fn config(&self) -> &NormalizerConfig {
        &self.config
    }

    pub fn normalize(&self, raw: &str) -> String {
        let text = self.stage.transliterate(raw);
        let cfg = &self.config;
        let mut cleaned = String::with_capacity(text.len());
        let mut after_emoji = false;
        for ch in text.chars() {
            // a joiner only belongs to the emoji sequence it glues together
            if ch == '\u{200D}' && after_emoji {
                continue;
            }
            after_emoji = is_emoji(ch);
            if after_emoji {
                if cfg.emoji_policy == EmojiPolicy::MapToToken {
                    if let Some(word) = cfg.emoji_tokens.get(ch.encode_utf8(&mut [0; 4]) as &str) {
                        cleaned.push(' ');
                        cleaned.push_str(word);
                        cleaned.push(' ');
                    }
                }
                continue;
            }
            if cfg.strip_punctuation && (is_punctuation(ch) || cfg.extra_punctuation.contains(ch)) {
                continue;
            }
            if ch.is_control() {
                cleaned.push(' ');
                continue;
            }
            cleaned.push(ch);
        }
        let words = cleaned.split_whitespace().map(|w| {
            cfg.spelling_corrections
                .get(w)
                .map(String::as_str)
                .unwrap_or(w)
        });
        let mut out = String::with_capacity(cleaned.len());
        for w in words {
            if w.is_empty() {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(w);
        }
        out
    }
}

/// Cleans `raw` with the identity transliteration stage.
pub fn normalize_text(raw: &str, rules: &NormalizerConfig) -> String {
    Normalizer::new(rules.clone()).normalize(raw)
}

fn is_punctuation(ch: char) -> bool {
    ch.is_ascii_punctuation()
        || matches!(
            ch,
            '\u{0964}' | '\u{0965}' // danda, double danda
            | '\u{00A1}' | '\u{00AB}' | '\u{00BB}' | '\u{00BF}' | '\u{00B7}'
            | '\u{2010}'..='\u{2027}'
            | '\u{2030}'..='\u{205E}'
            | '\u{3001}' | '\u{3002}'
            | '\u{FF01}'..='\u{FF0F}'
        )
}

fn is_emoji(ch: char) -> bool {
    matches!(
        ch,
        '\u{1F000}'..='\u{1FAFF}'
            | '\u{2600}'..='\u{27BF}'
            | '\u{2B00}'..='\u{2BFF}'
            | '\u{FE00}'..='\u{FE0F}'
            | '\u{20E3}'
            | '\u{E0020}'..='\u{E007F}'
    )
}
