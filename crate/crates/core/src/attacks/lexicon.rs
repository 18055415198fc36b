use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{TokenId, Vocabulary};

/// Token → ordered substitute candidates.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    map: BTreeMap<TokenId, Vec<TokenId>>,
}

impl SynonymLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `word → synonyms`, dropping self-maps, reserved ids and duplicates.
    pub fn insert(&mut self, word: TokenId, synonyms: &[TokenId]) {
        if Vocabulary::is_reserved(word) {
            return;
        }
        let entry = self.map.entry(word).or_default();
        for &s in synonyms {
            if s != word && !Vocabulary::is_reserved(s) && !entry.contains(&s) {
                entry.push(s);
            }
        }
        if entry.is_empty() {
            self.map.remove(&word);
        }
    }

    pub fn candidates(&self, word: TokenId) -> &[TokenId] {
        self.map.get(&word).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TokenId, &[TokenId])> {
        self.map.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    /// Every `a → b` also gets `b → a`.
    pub fn symmetric_closure(&self) -> SynonymLexicon {
        let mut out = self.clone();
        for (word, syns) in self.iter() {
            for &s in syns {
                out.insert(s, &[word]);
            }
        }
        out
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        for (w, syns) in self.iter() {
            for &id in std::iter::once(&w).chain(syns) {
                if !vocab.contains(id) {
                    return Err(Error::InvalidToken(id));
                }
            }
        }
        Ok(())
    }

    /// Parses `word<TAB>syn1,syn2,…` lines. Returns the lexicon and the number
    /// of words (heads or synonyms) not found in the vocabulary.
    pub fn parse(text: &str, vocab: &Vocabulary) -> Result<(Self, usize)> {
        let mut lex = SynonymLexicon::new();
        let mut unknown = 0usize;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (head, rest) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("lexicon line {}: missing tab", n + 1)))?;
            let lookup = |w: &str| vocab.id(&w.trim().to_lowercase());
            let syns: Vec<TokenId> = rest
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .filter_map(|s| {
                    let id = lookup(s);
                    if id.is_none() {
                        unknown += 1;
                    }
                    id
                })
                .collect();
            match lookup(head) {
                Some(h) => lex.insert(h, &syns),
                None => unknown += 1,
            }
        }
        Ok((lex, unknown))
    }

    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let (lex, unknown) = Self::parse(&text, vocab)?;
        if unknown > 0 {
            log::warn!(
                "{}: ignored {unknown} word(s) not in the vocabulary",
                path.display()
            );
        }
        Ok(lex)
    }

    pub fn to_text(&self, vocab: &Vocabulary) -> String {
        let mut out = String::new();
        for (w, syns) in self.iter() {
            let names: Vec<&str> = syns.iter().filter_map(|s| vocab.token(*s)).collect();
            if let Some(head) = vocab.token(w) {
                out.push_str(&format!("{head}\t{}\n", names.join(",")));
            }
        }
        out
    }

    pub fn save(&self, path: &Path, vocab: &Vocabulary) -> Result<()> {
        std::fs::write(path, self.to_text(vocab)).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens(["good", "fine", "great", "bad", "poor"])
    }

    #[test]
    fn parse_counts_unknown_words() {
        let v = vocab();
        let text = "good\tfine,great,superb\nbad\tpoor\nawful\tbad\n";
        let (lex, unknown) = SynonymLexicon::parse(text, &v).unwrap();
        assert_eq!(unknown, 2);
        assert_eq!(lex.len(), 2);
        assert_eq!(
            lex.candidates(v.id("good").unwrap()),
            &[v.id("fine").unwrap(), v.id("great").unwrap()]
        );
        assert!(SynonymLexicon::parse("good fine", &v).is_err());
    }

    #[test]
    fn no_self_maps() {
        let v = vocab();
        let (lex, _) = SynonymLexicon::parse("good\tgood\nbad\tbad,poor\n", &v).unwrap();
        assert!(lex.candidates(v.id("good").unwrap()).is_empty());
        assert_eq!(
            lex.candidates(v.id("bad").unwrap()),
            &[v.id("poor").unwrap()]
        );
    }

    #[test]
    fn text_round_trip_and_closure() {
        let v = vocab();
        let (lex, _) = SynonymLexicon::parse("good\tfine,great\n", &v).unwrap();
        let (back, _) = SynonymLexicon::parse(&lex.to_text(&v), &v).unwrap();
        assert_eq!(back, lex);
        let sym = lex.symmetric_closure();
        assert_eq!(
            sym.candidates(v.id("fine").unwrap()),
            &[v.id("good").unwrap()]
        );
        assert!(sym.validate(&v).is_ok());
    }
}
