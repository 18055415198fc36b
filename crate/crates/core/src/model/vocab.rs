use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Bijective token ↔ id map. Ids 0 and 1 are reserved for padding and
/// unknown words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let mut v = Vocabulary::new();
        for t in tokens.into_iter().skip(2) {
            v.add(&t);
        }
        v
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Self { tokens, index }
    }

    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::new();
        for t in tokens {
            v.add(t.as_ref());
        }
        v
    }

    /// Adds a token (idempotent) and returns its id.
    pub fn add(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn contains(&self, id: TokenId) -> bool {
        (id as usize) < self.tokens.len()
    }

    pub fn is_reserved(id: TokenId) -> bool {
        id == PAD || id == UNK
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Ids of all non-reserved tokens, ascending.
    pub fn content_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        (2..self.tokens.len() as TokenId).map(|i| i as TokenId)
    }

    /// Whitespace tokenization with lowercasing; unknown words map to `<unk>`.
    pub fn encode(&self, text: &str) -> Result<TokenSequence> {
        let ids = tokenize(text)
            .map(|w| self.id(&w).unwrap_or(UNK))
            .collect::<Vec<_>>();
        TokenSequence::new(ids)
    }

    pub fn decode(&self, seq: &TokenSequence) -> String {
        seq.ids()
            .iter()
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn validate(&self, seq: &TokenSequence) -> Result<()> {
        match seq.ids().iter().find(|&&id| !self.contains(id)) {
            Some(&bad) => Err(Error::InvalidToken(bad)),
            None => Ok(()),
        }
    }
}

/// The single tokenizer: lowercase, split on whitespace.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

/// Non-empty ordered list of token ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<TokenId>", into = "Vec<TokenId>")]
pub struct TokenSequence(Vec<TokenId>);

impl TryFrom<Vec<TokenId>> for TokenSequence {
    type Error = Error;

    fn try_from(ids: Vec<TokenId>) -> Result<Self> {
        Self::new(ids)
    }
}

impl From<TokenSequence> for Vec<TokenId> {
    fn from(s: TokenSequence) -> Self {
        s.0
    }
}

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Empty("token sequence".into()));
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Copy with position `pos` replaced by `id`.
    pub fn with_token(&self, pos: usize, id: TokenId) -> TokenSequence {
        let mut ids = self.0.clone();
        ids[pos] = id;
        TokenSequence(ids)
    }

    pub fn concat(&self, suffix: &[TokenId]) -> TokenSequence {
        let mut ids = self.0.clone();
        ids.extend_from_slice(suffix);
        TokenSequence(ids)
    }

    /// Positions that take part in encoding (everything except padding).
    pub fn mask(&self) -> Vec<bool> {
        self.0.iter().map(|&id| id != PAD).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids() {
        let v = Vocabulary::new();
        assert_eq!(v.id(PAD_TOKEN), Some(PAD));
        assert_eq!(v.id(UNK_TOKEN), Some(UNK));
        assert!(v.is_empty());
    }

    #[test]
    fn encode_lowercases_and_maps_unknown() {
        let v = Vocabulary::from_tokens(["good", "film"]);
        let s = v.encode("Good  FILM awful").unwrap();
        assert_eq!(s.ids(), &[2, 3, UNK]);
        assert_eq!(v.decode(&s), "good film <unk>");
    }

    #[test]
    fn add_is_idempotent() {
        let mut v = Vocabulary::new();
        let a = v.add("x");
        assert_eq!(v.add("x"), a);
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn empty_sequence_rejected() {
        assert!(TokenSequence::new(vec![]).is_err());
        assert!(Vocabulary::new().encode("   ").is_err());
    }

    #[test]
    fn serde_round_trip() {
        let v = Vocabulary::from_tokens(["a", "b", "c"]);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
    }
}
