//! Model file format.
//!
//! A model file is UTF-8 text: the magic line `MTAD-NGRAM`, a line
//! `version 1`, then one JSON document holding the label, order, δ, input
//! format, vocabulary and count tables. Tables are written with contexts in
//! sorted order so equal models produce identical bytes.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ngram::{Counts, ModelLabel, NGramModel};
use super::vocab::{InputFormat, TokenId, Vocabulary};
use super::LmError;

pub const MAGIC: &str = "MTAD-NGRAM";
pub const FORMAT_VERSION: u32 = 1;

/// One context: its tokens, total count and `(token, count)` continuations.
type TableEntry = (Vec<TokenId>, u64, Vec<(TokenId, u64)>);

#[derive(Serialize, Deserialize)]
struct ModelFile {
    label: ModelLabel,
    order: usize,
    delta: f64,
    format: InputFormat,
    vocab: Vec<String>,
    tables: Vec<Vec<TableEntry>>,
}

pub fn to_string(model: &NGramModel) -> String {
    let tables = model
        .tables
        .iter()
        .map(|table| {
            let mut entries: Vec<TableEntry> = table
                .iter()
                .map(|(k, c)| (k.clone(), c.total, c.next.clone()))
                .collect();
            entries.sort_unstable_by(|a, b| a.0.cmp(&b.0));
            entries
        })
        .collect();
    let file = ModelFile {
        label: model.label,
        order: model.order,
        delta: model.delta,
        format: model.format.clone(),
        vocab: model.vocab.tokens().to_vec(),
        tables,
    };
    let body = serde_json::to_string(&file).expect("model is serializable");
    format!("{MAGIC}\nversion {FORMAT_VERSION}\n{body}\n")
}

/// Parses a model file. The vocabulary is shared with `vocab` when the
/// token lists are equal, so models loaded together can be mixed cheaply.
pub fn from_str(text: &str, shared: Option<&Arc<Vocabulary>>) -> Result<NGramModel, LmError> {
    if text.trim().is_empty() {
        return Err(LmError::Format("empty model file".into()));
    }
    let mut lines = text.splitn(3, '\n');
    let magic = lines.next().unwrap_or_default();
    if magic.trim_end() != MAGIC {
        return Err(LmError::Version(format!("bad magic line `{}`", magic.trim_end())));
    }
    let version = lines.next().unwrap_or_default().trim_end();
    if version != format!("version {FORMAT_VERSION}") {
        return Err(LmError::Version(format!("unsupported `{version}`")));
    }
    let body = lines
        .next()
        .ok_or_else(|| LmError::Format("missing model body".into()))?;
    let file: ModelFile =
        serde_json::from_str(body).map_err(|e| LmError::Format(e.to_string()))?;

    if file.order == 0 || file.tables.len() != file.order {
        return Err(LmError::Format("table count does not match the order".into()));
    }
    let vocab = match shared {
        Some(v) if v.tokens() == file.vocab.as_slice() => v.clone(),
        _ => Arc::new(Vocabulary::from_tokens(file.vocab).map_err(LmError::Format)?),
    };
    let mut tables = Vec::with_capacity(file.order);
    for (len, entries) in file.tables.into_iter().enumerate() {
        let mut table = HashMap::with_capacity(entries.len());
        for (key, total, next) in entries {
            let sum: u64 = next.iter().map(|(_, c)| c).sum();
            let in_range = key.iter().chain(next.iter().map(|(t, _)| t)).all(|t| (*t as usize) < vocab.len());
            if key.len() != len || sum != total || total == 0 || !in_range {
                return Err(LmError::Format(format!("inconsistent table entry at length {len}")));
            }
            table.insert(key, Counts { total, next });
        }
        tables.push(table);
    }
    if !tables[0].contains_key(&Vec::new()) {
        return Err(LmError::Format("missing unigram counts".into()));
    }
    Ok(NGramModel {
        label: file.label,
        order: file.order,
        delta: file.delta,
        format: file.format,
        vocab,
        tables,
    })
}

pub fn save_model(model: &NGramModel, path: &Path) -> Result<(), LmError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(to_string(model).as_bytes())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<NGramModel, LmError> {
    from_str(&std::fs::read_to_string(path)?, None)
}

/// Loads a model, reusing `vocab` when the file's vocabulary matches it.
pub fn load_model_sharing(path: &Path, vocab: &Arc<Vocabulary>) -> Result<NGramModel, LmError> {
    from_str(&std::fs::read_to_string(path)?, Some(vocab))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::BalancedSet;
    use crate::lm::ngram::{train, NGramConfig};
    use crate::types::{Dialogue, Intent, Turn, UserProfile};

    fn model() -> NGramModel {
        let d = Dialogue {
            task_id: "t".into(),
            task_title: "T".into(),
            profile: UserProfile::regular(),
            seed: 0,
            turns: vec![
                Turn::new(Intent::Start, "let's start", "Step 1"),
                Turn::new(Intent::NextStep, "next please", "Step 2"),
                Turn::new(Intent::Stop, "stop", "bye"),
            ],
        };
        let vocab = Arc::new(Vocabulary::from_dialogues([&d]));
        train(ModelLabel::Regular, &BalancedSet::unbalanced(vec![d]), vocab, &NGramConfig::default())
            .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ngram");
        let m = model();
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);
        let n = m.vocab().len() as TokenId;
        for k in 0..100u32 {
            let ctx: Vec<TokenId> = (0..(k % 5)).map(|j| (k * 7 + j * 13) % n).collect();
            assert_eq!(m.next_token_distribution(&ctx), back.next_token_distribution(&ctx));
        }
        assert_eq!(to_string(&back), to_string(&m));
    }

    #[test]
    fn bad_files_are_rejected() {
        assert!(matches!(from_str("", None), Err(LmError::Format(_))));
        let good = to_string(&model());
        let corrupt = good.replacen("MTAD", "MTAX", 1);
        assert!(matches!(from_str(&corrupt, None), Err(LmError::Version(_))));
        let future = good.replacen("version 1", "version 9", 1);
        assert!(matches!(from_str(&future, None), Err(LmError::Version(_))));
        let truncated = &good[..good.len() / 2];
        assert!(matches!(from_str(truncated, None), Err(LmError::Format(_))));
    }

    #[test]
    fn shared_vocabulary_is_reused() {
        let m = model();
        let back = from_str(&to_string(&m), Some(m.vocab())).unwrap();
        assert!(Arc::ptr_eq(back.vocab(), m.vocab()));
    }
}
