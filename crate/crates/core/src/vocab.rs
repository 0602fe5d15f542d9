//! Vocabulary and the whitespace tokenizer.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const MASK: TokenId = 1;
pub const UNK: TokenId = 2;
pub const QMARK: TokenId = 3;
pub const DMARK: TokenId = 4;
pub const N_RESERVED: usize = 5;

const RESERVED: [&str; N_RESERVED] = ["[PAD]", "[MASK]", "[UNK]", "[Q]", "[D]"];

/// Bidirectional token/id map. Ids `0..5` are reserved for the special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    to_id: HashMap<String, TokenId>,
    to_token: Vec<String>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    /// A vocabulary holding only the reserved tokens.
    pub fn new() -> Self {
        let to_token: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let to_id = to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Self { to_id, to_token }
    }

    /// Builds a vocabulary from texts; ids are assigned in first-seen order.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab = Self::new();
        for text in texts {
            for word in split_words(text) {
                vocab.insert(&word);
            }
        }
        vocab
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < N_RESERVED || tokens[..N_RESERVED] != RESERVED {
            return Err(Error::format("vocab", "reserved tokens missing or reordered"));
        }
        let mut to_id = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if to_id.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::format("vocab", format!("duplicate token {t:?}")));
            }
        }
        Ok(Self {
            to_id,
            to_token: tokens,
        })
    }

    /// Adds `token` (lowercased by the caller) if absent and returns its id.
    pub fn insert(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.to_id.get(token) {
            return id;
        }
        let id = self.to_token.len() as TokenId;
        self.to_token.push(token.to_string());
        self.to_id.insert(token.to_string(), id);
        id
    }

    pub fn id(&self, token: &str) -> TokenId {
        match self.to_id.get(token) {
            Some(&id) if id as usize >= N_RESERVED => id,
            _ => UNK,
        }
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.to_token.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_token.is_empty()
    }

    /// Tokens in id order, reserved first.
    pub fn tokens(&self) -> &[String] {
        &self.to_token
    }
}

fn split_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

/// Whitespace-splits and lowercases `text`, mapping each word to its id.
///
/// Words spelled like a reserved token are not special: they map to UNK.
pub fn tokenize(text: &str, vocab: &Vocab) -> Vec<TokenId> {
    split_words(text).map(|w| vocab.id(&w)).collect()
}
