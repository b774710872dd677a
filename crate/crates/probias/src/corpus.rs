//! Multi-label corpora: documents, tokenization, bundle IO, and chunking.
//!
//! A corpus bundle is a directory with `labels.tsv` (one `code<TAB>name`
//! per line, order defines the label index) and `train.jsonl` /
//! `dev.jsonl` / `test.jsonl`, one `{"id","text","labels"}` object per
//! line. An optional `vocab.txt` pins the token vocabulary; without it
//! the vocabulary is rebuilt from the training split in first-occurrence
//! order.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token id 0 is reserved for padding.
pub const PAD_ID: u32 = 0;
/// Token id 1 is reserved for unknown tokens.
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<u32>,
    pub label_ids: BTreeSet<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    /// (code, name) pairs; position defines the label index.
    pub label_names: Vec<(String, String)>,
    pub token_vocab: Vec<String>,
    pub train: Vec<Document>,
    pub dev: Vec<Document>,
    pub test: Vec<Document>,
}

impl Corpus {
    pub fn n_labels(&self) -> usize {
        self.label_names.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.token_vocab.len()
    }

    pub fn split(&self, name: &str) -> Option<&[Document]> {
        match name {
            "train" => Some(&self.train),
            "dev" => Some(&self.dev),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_labels();
        let mut seen_ids = BTreeSet::new();
        for doc in self.train.iter().chain(&self.dev).chain(&self.test) {
            if doc.tokens.is_empty() {
                return Err(Error::data(format!("document {} has no tokens", doc.id)));
            }
            if doc.label_ids.is_empty() {
                return Err(Error::data(format!("document {} has no labels", doc.id)));
            }
            for &l in &doc.label_ids {
                if l >= n {
                    return Err(Error::data(format!(
                        "document {} references label index {l} >= {n}",
                        doc.id
                    )));
                }
            }
            for &t in &doc.tokens {
                if t as usize >= self.token_vocab.len() {
                    return Err(Error::data(format!(
                        "document {} references token id {t} >= vocab size {}",
                        doc.id,
                        self.token_vocab.len()
                    )));
                }
            }
            if !seen_ids.insert(doc.id.clone()) {
                return Err(Error::data(format!("duplicate document id {}", doc.id)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chunk {
    pub doc_id: String,
    pub chunk_index: usize,
    pub token_ids: Vec<u32>,
    /// true = real token; pad positions form a suffix.
    pub pad_mask: Vec<bool>,
}

impl Chunk {
    pub fn real_len(&self) -> usize {
        self.pad_mask.iter().filter(|&&m| m).count()
    }
}

/// Whitespace-and-lowercase tokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

/// Fixed-length overlapping chunks covering every token at least once;
/// the final chunk is right-padded with PAD_ID.
pub fn chunk_document(doc: &Document, chunk_len: usize, overlap: usize) -> Result<Vec<Chunk>> {
    if overlap >= chunk_len {
        return Err(Error::data(format!(
            "overlap {overlap} must be smaller than chunk_len {chunk_len}"
        )));
    }
    let stride = chunk_len - overlap;
    let len = doc.tokens.len();
    let mut chunks = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + chunk_len).min(len);
        let mut token_ids = doc.tokens[start..end].to_vec();
        let real = token_ids.len();
        token_ids.resize(chunk_len, PAD_ID);
        let mut pad_mask = vec![true; real];
        pad_mask.resize(chunk_len, false);
        chunks.push(Chunk {
            doc_id: doc.id.clone(),
            chunk_index: chunks.len(),
            token_ids,
            pad_mask,
        });
        if start + chunk_len >= len {
            break;
        }
        start += stride;
    }
    Ok(chunks)
}

/// A copy of the document truncated to at most `max_tokens` tokens.
pub fn truncate_document(doc: &Document, max_tokens: usize) -> Document {
    if doc.tokens.len() <= max_tokens {
        doc.clone()
    } else {
        Document {
            id: doc.id.clone(),
            tokens: doc.tokens[..max_tokens].to_vec(),
            label_ids: doc.label_ids.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonDoc {
    id: String,
    text: String,
    labels: Vec<String>,
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let labels_path = dir.join("labels.tsv");
    let labels_raw = fs::read_to_string(&labels_path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", labels_path.display())))?;
    let mut label_names = Vec::new();
    let mut label_index: HashMap<String, usize> = HashMap::new();
    for (lineno, line) in labels_raw.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (code, name) = line.split_once('\t').ok_or_else(|| {
            Error::data(format!("labels.tsv line {}: expected code<TAB>name", lineno + 1))
        })?;
        if label_index.insert(code.to_string(), label_names.len()).is_some() {
            return Err(Error::data(format!(
                "labels.tsv line {}: duplicate code {code}",
                lineno + 1
            )));
        }
        label_names.push((code.to_string(), name.to_string()));
    }

    // raw (tokenized) docs per split, before vocab ids are assigned
    let mut raw: Vec<(String, Vec<(String, Vec<String>, BTreeSet<usize>)>)> = Vec::new();
    for split in ["train", "dev", "test"] {
        let path = dir.join(format!("{split}.jsonl"));
        let content = fs::read_to_string(&path)
            .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
        let mut docs = Vec::new();
        for (lineno, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let jd: JsonDoc = serde_json::from_str(line).map_err(|e| {
                Error::data(format!("{split}.jsonl line {}: {e}", lineno + 1))
            })?;
            let tokens = tokenize(&jd.text);
            if tokens.is_empty() {
                return Err(Error::data(format!(
                    "{split}.jsonl line {}: document {} is empty",
                    lineno + 1,
                    jd.id
                )));
            }
            if jd.labels.is_empty() {
                return Err(Error::data(format!(
                    "{split}.jsonl line {}: document {} has no labels",
                    lineno + 1,
                    jd.id
                )));
            }
            let mut label_ids = BTreeSet::new();
            for code in &jd.labels {
                let idx = label_index.get(code).ok_or_else(|| {
                    Error::data(format!(
                        "{split}.jsonl line {}: label \"{code}\" not in label vocabulary",
                        lineno + 1
                    ))
                })?;
                label_ids.insert(*idx);
            }
            docs.push((jd.id, tokens, label_ids));
        }
        raw.push((split.to_string(), docs));
    }

    // vocabulary: pinned file if present, else first occurrence over train
    let vocab_path = dir.join("vocab.txt");
    let mut token_vocab: Vec<String>;
    let mut token_index: HashMap<String, u32> = HashMap::new();
    if vocab_path.exists() {
        token_vocab = fs::read_to_string(&vocab_path)?
            .lines()
            .map(|s| s.to_string())
            .collect();
        if token_vocab.first().map(String::as_str) != Some(PAD_TOKEN)
            || token_vocab.get(1).map(String::as_str) != Some(UNK_TOKEN)
        {
            return Err(Error::data(
                "vocab.txt must start with the <pad> and <unk> tokens",
            ));
        }
        for (i, t) in token_vocab.iter().enumerate() {
            token_index.insert(t.clone(), i as u32);
        }
    } else {
        token_vocab = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        token_index.insert(PAD_TOKEN.to_string(), PAD_ID);
        token_index.insert(UNK_TOKEN.to_string(), UNK_ID);
        for (_, tokens, _) in &raw[0].1 {
            for t in tokens {
                if !token_index.contains_key(t) {
                    token_index.insert(t.clone(), token_vocab.len() as u32);
                    token_vocab.push(t.clone());
                }
            }
        }
    }

    let mut splits: Vec<Vec<Document>> = Vec::new();
    for (_, docs) in raw {
        splits.push(
            docs.into_iter()
                .map(|(id, tokens, label_ids)| Document {
                    id,
                    tokens: tokens
                        .iter()
                        .map(|t| *token_index.get(t).unwrap_or(&UNK_ID))
                        .collect(),
                    label_ids,
                })
                .collect(),
        );
    }
    let test = splits.pop().unwrap();
    let dev = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    let corpus = Corpus {
        label_names,
        token_vocab,
        train,
        dev,
        test,
    };
    corpus.validate()?;
    Ok(corpus)
}

pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let labels: String = corpus
        .label_names
        .iter()
        .map(|(c, n)| format!("{c}\t{n}\n"))
        .collect();
    crate::nn::checkpoint::write_atomic(&dir.join("labels.tsv"), labels.as_bytes())?;
    let vocab: String = corpus
        .token_vocab
        .iter()
        .map(|t| format!("{t}\n"))
        .collect();
    crate::nn::checkpoint::write_atomic(&dir.join("vocab.txt"), vocab.as_bytes())?;
    for (split, docs) in [
        ("train", &corpus.train),
        ("dev", &corpus.dev),
        ("test", &corpus.test),
    ] {
        let mut out = String::new();
        for doc in docs.iter() {
            let text = doc
                .tokens
                .iter()
                .map(|&t| corpus.token_vocab[t as usize].as_str())
                .collect::<Vec<_>>()
                .join(" ");
            let labels: Vec<String> = doc
                .label_ids
                .iter()
                .map(|&l| corpus.label_names[l].0.clone())
                .collect();
            let jd = JsonDoc {
                id: doc.id.clone(),
                text,
                labels,
            };
            out.push_str(&serde_json::to_string(&jd).expect("document serializes"));
            out.push('\n');
        }
        crate::nn::checkpoint::write_atomic(&dir.join(format!("{split}.jsonl")), out.as_bytes())?;
    }
    Ok(())
}
