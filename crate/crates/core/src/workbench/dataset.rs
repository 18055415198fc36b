use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Target, TokenSequence, Vocabulary};

/// One JSON line `{"text": ..., "label": <class>}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    pub label: usize,
}

/// Same layout with a real-valued label, for regression heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub text: String,
    pub label: f64,
}

fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: no records", path.display())));
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<Example>> {
    read_lines(path)
}

pub fn read_scored_dataset(path: &Path) -> Result<Vec<ScoredExample>> {
    read_lines(path)
}

pub fn write_dataset<T: Serialize>(path: &Path, examples: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for ex in examples {
        serde_json::to_writer(&mut buf, ex)?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Vocabulary over every token of the given texts, in first-seen order.
/// Sorted vocabulary over every token of `texts`.
pub fn build_vocabulary<'a>(texts: impl IntoIterator<Item = &'a str>) -> Vocabulary {
    let tokens: BTreeSet<String> = texts.into_iter().flat_map(crate::model::tokenize).collect();
    Vocabulary::from_tokens(tokens)
}

pub fn encode_examples(
    vocab: &Vocabulary,
    examples: &[Example],
) -> Result<Vec<(TokenSequence, Target)>> {
    examples
        .iter()
        .map(|ex| Ok((vocab.encode(&ex.text)?, Target::Class(ex.label))))
        .collect()
}

pub fn encode_scored(
    vocab: &Vocabulary,
    examples: &[ScoredExample],
) -> Result<Vec<(TokenSequence, Target)>> {
    examples
        .iter()
        .map(|ex| {
            if !ex.label.is_finite() {
                return Err(Error::Data(format!("non-finite label for `{}`", ex.text)));
            }
            Ok((vocab.encode(&ex.text)?, Target::Score(ex.label)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let data = vec![
            Example {
                text: "a b".into(),
                label: 1,
            },
            Example {
                text: "c".into(),
                label: 0,
            },
        ];
        write_dataset(&p, &data).unwrap();
        assert_eq!(read_dataset(&p).unwrap(), data);
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "{\"text\":\"a b\",\"label\":1}\n{\"text\":\"c\",\"label\":0}\n"
        );
        std::fs::write(&p, "{\"text\": \"a\"}\n").unwrap();
        assert!(matches!(read_dataset(&p), Err(Error::Data(_))));
        std::fs::write(&p, "{\"text\": \"a\", \"label\": 0.5}\n").unwrap();
        assert!(read_dataset(&p).is_err());
        assert_eq!(read_scored_dataset(&p).unwrap()[0].label, 0.5);
        std::fs::write(&p, "\n").unwrap();
        assert!(read_dataset(&p).is_err());
    }

    #[test]
    fn vocabulary_and_encoding() {
        let data = vec![Example {
            text: "The cat the".into(),
            label: 2,
        }];
        let v = build_vocabulary(data.iter().map(|e| e.text.as_str()));
        assert_eq!(v.len(), 4);
        let enc = encode_examples(&v, &data).unwrap();
        assert_eq!(enc[0].0.ids(), &[3, 2, 3]);
        assert_eq!(enc[0].1, Target::Class(2));
    }
}
