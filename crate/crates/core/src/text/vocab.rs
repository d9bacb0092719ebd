use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];
/// Marks a piece that continues a word rather than starting one.
pub const CONTINUATION: &str = "##";

/// Subword inventory with dense ids; ids 0..4 are the special tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from the ordered token list (line number = id).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len()
            || tokens[..SPECIAL_TOKENS.len()]
                .iter()
                .zip(SPECIAL_TOKENS)
                .any(|(a, b)| a != b)
        {
            return Err(Error::Data(format!(
                "vocabulary must start with {SPECIAL_TOKENS:?}"
            )));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok == CONTINUATION || tok.chars().any(char::is_whitespace) {
                return Err(Error::Data(format!("invalid vocabulary token {tok:?} at id {i}")));
            }
            if ids.insert(tok.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    /// One token per line; the line number is the id.
    pub fn to_file_string(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file_string(&text)
    }
}

fn piece(symbol: &str, word_start: bool) -> String {
    if word_start {
        symbol.to_string()
    } else {
        format!("{CONTINUATION}{symbol}")
    }
}

/// Greedy pair-merge training.
///
/// Words are whitespace-separated and start as character sequences. Every
/// round merges the most frequent adjacent pair (ties go to the
/// lexicographically smallest pair) until the vocabulary would exceed
/// `target_size` or no pair occurs at least twice. Each symbol is stored as a
/// word-initial piece and/or a `##` continuation piece, depending on where it
/// occurs.
pub fn train_vocabulary<S: AsRef<str>>(corpus: &[S], target_size: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::Config("cannot train a vocabulary on an empty corpus".into()));
    }
    // word multiset; BTreeMap keeps everything independent of corpus order
    let mut word_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for line in corpus {
        for w in line.as_ref().split_whitespace() {
            *word_counts.entry(w).or_default() += 1;
        }
    }
    let distinct_chars = word_counts
        .keys()
        .flat_map(|w| w.chars())
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    if target_size <= distinct_chars + SPECIAL_TOKENS.len() {
        return Err(Error::Config(format!(
            "vocabulary target size {target_size} must exceed {} ({} distinct characters + 4 specials)",
            distinct_chars + SPECIAL_TOKENS.len(),
            distinct_chars
        )));
    }

    let mut words: Vec<(Vec<String>, usize)> = word_counts
        .iter()
        .map(|(w, &c)| (w.chars().map(String::from).collect(), c))
        .collect();

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    let mut known: std::collections::HashSet<String> = tokens.iter().cloned().collect();
    let mut base: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();
    for (syms, _) in &words {
        for (i, s) in syms.iter().enumerate() {
            base.insert(piece(s, i == 0));
        }
    }
    for b in base {
        known.insert(b.clone());
        tokens.push(b);
    }

    loop {
        let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
        for (syms, c) in &words {
            for w in syms.windows(2) {
                *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += c;
            }
        }
        let best = pairs
            .into_iter()
            .filter(|&(_, c)| c >= 2)
            .min_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let Some(((l, r), _)) = best else { break };
        let (l, r) = (l.to_string(), r.to_string());
        let merged = format!("{l}{r}");

        let mut next = Vec::with_capacity(words.len());
        let mut new_pieces = std::collections::BTreeSet::new();
        for (syms, c) in &words {
            let mut out: Vec<String> = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                    new_pieces.insert(piece(&merged, out.is_empty()));
                    out.push(merged.clone());
                    i += 2;
                } else {
                    out.push(syms[i].clone());
                    i += 1;
                }
            }
            next.push((out, *c));
        }
        let fresh: Vec<String> = new_pieces.into_iter().filter(|p| !known.contains(p)).collect();
        if tokens.len() + fresh.len() > target_size {
            break;
        }
        words = next;
        for p in fresh {
            known.insert(p.clone());
            tokens.push(p);
        }
        if tokens.len() == target_size {
            break;
        }
    }
    Vocabulary::from_tokens(tokens)
}
