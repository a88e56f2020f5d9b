//! Uncased whole-word tokenization: normalization, vocabulary
//! construction, and fixed-length encoding with special tokens.
//!
//! Questions in this domain are short templated sentences, so the
//! tokenizer works on whole words over a learned vocabulary instead of
//! subwords. Punctuation characters become standalone tokens so "
//! diabetes?" and "diabetes" share a word id.

use std::collections::HashMap;

use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const SEP_ID: usize = 2;
pub const UNK_ID: usize = 3;

pub const PAD_TOKEN: &str = "[PAD]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const UNK_TOKEN: &str = "[UNK]";

const RESERVED: [&str; 4] = [PAD_TOKEN, CLS_TOKEN, SEP_TOKEN, UNK_TOKEN];

/// Lowercases, strips accents (canonical decomposition, combining marks
/// dropped), and collapses runs of whitespace to single spaces.
/// Idempotent.
pub fn normalize(text: &str) -> String {
    let folded: String = text
        .to_lowercase()
        .nfd()
        .filter(|c| !is_combining_mark(*c))
        .collect();
    let mut out = String::with_capacity(folded.len());
    for part in folded.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(part);
    }
    out
}

/// Splits normalized text into word and punctuation tokens. Alphanumeric
/// runs stay together; every other non-space character stands alone.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in normalize(text).chars() {
        if c.is_alphanumeric() {
            word.push(c);
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            if !c.is_whitespace() {
                tokens.push(c.to_string());
            }
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Token to dense-id bijection with four fixed reserved ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocab {
    /// Rebuilds a vocabulary from the non-reserved tokens in id order, as
    /// stored in a checkpoint.
    pub fn from_content_tokens(tokens: Vec<String>) -> Self {
        let mut id_to_token: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(tokens);
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { token_to_id, id_to_token }
    }

    /// Non-reserved tokens in id order, the checkpointable part.
    pub fn content_tokens(&self) -> &[String] {
        &self.id_to_token[RESERVED.len()..]
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }
}

/// Builds a vocabulary from a corpus: tokens with frequency >= `min_freq`,
/// capped at `max_size` total entries, ranked by frequency descending with
/// lexicographic ascending tie-break. Deterministic.
///
/// # Panics
/// If `max_size <= 4`, since the four reserved tokens leave no room.
pub fn build_vocab<I, S>(corpus: I, min_freq: usize, max_size: usize) -> Vocab
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    assert!(max_size > RESERVED.len(), "max_size must exceed the {} reserved tokens", RESERVED.len());
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in corpus {
        for token in tokenize(text.as_ref()) {
            *counts.entry(token).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> =
        counts.into_iter().filter(|(_, c)| *c >= min_freq.max(1)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - RESERVED.len());
    Vocab::from_content_tokens(ranked.into_iter().map(|(t, _)| t).collect())
}

/// Fixed-length model input: ids padded to `max_len` and the matching
/// attention mask (1 on real tokens including [CLS]/[SEP], 0 on padding).
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub ids: Vec<usize>,
    pub mask: Vec<u8>,
}

/// Encodes text as `[CLS] tokens... [SEP] [PAD]...`, mapping unknown
/// words to [UNK] and truncating from the right to fit `max_len - 2`
/// content tokens.
///
/// # Panics
/// If `max_len < 3`: there is no room for [CLS], [SEP], and content.
pub fn encode(text: &str, vocab: &Vocab, max_len: usize) -> Encoding {
    assert!(max_len >= 3, "max_len {} cannot fit [CLS] + content + [SEP]", max_len);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS_ID);
    for token in tokenize(text).into_iter().take(max_len - 2) {
        ids.push(vocab.id(&token).unwrap_or(UNK_ID));
    }
    ids.push(SEP_ID);
    let used = ids.len();
    ids.resize(max_len, PAD_ID);
    let mut mask = vec![1u8; used];
    mask.resize(max_len, 0);
    Encoding { ids, mask }
}
