//! Pretrained word-embedding tables in the word2vec/fastText text format
//! and bag-of-embeddings post vectors.
//!
//! The text format is a header line `<count> <dim>` followed by one line per
//! word: the word and `dim` space-separated reals. Vectors are stored as
//! `f32`; post vectors are accumulated and returned in `f64`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Lines parsed per parallel batch while loading.
const LOAD_BATCH: usize = 16 * 1024;

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, u32>,
    vectors: Vec<f32>,
    freq: Option<HashMap<String, u64>>,
}

impl EmbeddingTable {
    /// Builds a table from `(word, vector)` rows.
    pub fn from_rows<I, W>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (W, Vec<f32>)>,
        W: Into<String>,
    {
        if dim == 0 {
            return Err(Error::domain("embedding dimension must be positive"));
        }
        let mut table = EmbeddingTable {
            dim,
            words: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
            freq: None,
        };
        for (word, vector) in rows {
            let word = word.into();
            if vector.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: vector.len(),
                });
            }
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("embedding vector"));
            }
            table.push(word, &vector).map_err(Error::Domain)?;
        }
        if table.words.is_empty() {
            return Err(Error::domain("embedding table is empty"));
        }
        Ok(table)
    }

    fn push(&mut self, word: String, vector: &[f32]) -> std::result::Result<(), String> {
        let row = u32::try_from(self.words.len()).map_err(|_| "too many rows".to_string())?;
        if self.index.contains_key(&word) {
            return Err(format!("duplicate word {word:?}"));
        }
        self.index.insert(word.clone(), row);
        self.words.push(word);
        self.vectors.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, row: usize) -> &str {
        &self.words[row]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.vectors[row * self.dim..(row + 1) * self.dim]
    }

    pub fn row_of(&self, word: &str) -> Option<usize> {
        if word.chars().any(char::is_uppercase) {
            self.index.get(&word.to_lowercase()).map(|&r| r as usize)
        } else {
            self.index.get(word).map(|&r| r as usize)
        }
    }

    /// Exact-match lookup of the lowercased word.
    pub fn lookup(&self, word: &str) -> Option<&[f32]> {
        self.row_of(word).map(|r| self.row(r))
    }

    pub fn freq(&self) -> Option<&HashMap<String, u64>> {
        self.freq.as_ref()
    }

    pub fn with_freq(mut self, freq: HashMap<String, u64>) -> Self {
        self.freq = Some(freq);
        self
    }

    /// Mean of the vectors of in-vocabulary tokens, counting repeats, plus
    /// the number of tokens that matched. `None` when nothing matched.
    pub fn mean_vector<S: AsRef<str>>(&self, tokens: &[S]) -> (Option<Vec<f64>>, usize) {
        let mut sum = vec![0.0f64; self.dim];
        let mut matched = 0;
        for token in tokens {
            if let Some(v) = self.lookup(token.as_ref()) {
                matched += 1;
                for (s, &x) in sum.iter_mut().zip(v) {
                    *s += x as f64;
                }
            }
        }
        if matched == 0 {
            return (None, 0);
        }
        let n = matched as f64;
        sum.iter_mut().for_each(|s| *s /= n);
        (Some(sum), matched)
    }

    /// Content hash over dimension, words and vector bits (16 hex chars).
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.dim as u64).to_le_bytes());
        hasher.update((self.words.len() as u64).to_le_bytes());
        for (row, word) in self.words.iter().enumerate() {
            hasher.update(word.as_bytes());
            hasher.update([0u8]);
            for v in self.row(row) {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(&hasher.finalize()[..8])
    }

    pub fn write_vec<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.words.len(), self.dim)?;
        for (row, word) in self.words.iter().enumerate() {
            out.write_all(word.as_bytes())?;
            for v in self.row(row) {
                write!(out, " {v}")?;
            }
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn save_vec(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_vec(BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }
}

/// Loads a text-format embedding file.
pub fn load_vec(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_vec(BufReader::with_capacity(1 << 20, file), path)
}

fn parse_row(line: &str, dim: usize) -> std::result::Result<(&str, Vec<f32>), String> {
    let line = line.trim_end_matches(['\r', ' ']);
    let mut fields = line.split(' ');
    let word = match fields.next() {
        Some(w) if !w.is_empty() => w,
        _ => return Err("missing word".into()),
    };
    let mut vector = Vec::with_capacity(dim);
    for field in fields {
        let v: f32 = field
            .parse()
            .map_err(|_| format!("invalid value {field:?} for {word:?}"))?;
        if !v.is_finite() {
            return Err(format!("non-finite value for {word:?}"));
        }
        vector.push(v);
    }
    if vector.len() != dim {
        return Err(format!(
            "expected {dim} values for {word:?}, found {}",
            vector.len()
        ));
    }
    Ok((word, vector))
}

/// Parses the text format from any buffered reader; `source` names the input
/// in error messages. Rows are parsed in parallel batches of bounded size.
pub fn read_vec<R: BufRead>(mut reader: R, source: &Path) -> Result<EmbeddingTable> {
    let mut header = String::new();
    reader
        .read_line(&mut header)
        .map_err(|e| Error::io(source, e))?;
    let mut parts = header.split_whitespace();
    let count: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(source, 1, "header must be \"<count> <dim>\""))?;
    let dim: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::parse(source, 1, "header must be \"<count> <dim>\""))?;
    if parts.next().is_some() {
        return Err(Error::parse(source, 1, "header must be \"<count> <dim>\""));
    }

    let mut table = EmbeddingTable {
        dim,
        words: Vec::with_capacity(count),
        index: HashMap::with_capacity(count),
        vectors: Vec::with_capacity(count.saturating_mul(dim)),
        freq: None,
    };

    let mut line_no = 1;
    let mut batch: Vec<String> = Vec::with_capacity(LOAD_BATCH);
    let mut trailing_blank: Option<usize> = None;
    loop {
        batch.clear();
        let first_line = line_no + 1;
        while batch.len() < LOAD_BATCH {
            let mut line = String::new();
            let n = reader
                .read_line(&mut line)
                .map_err(|e| Error::io(source, e))?;
            if n == 0 {
                break;
            }
            line_no += 1;
            if line.ends_with('\n') {
                line.pop();
            }
            batch.push(line);
        }
        if batch.is_empty() {
            break;
        }

        let parsed: Vec<std::result::Result<(&str, Vec<f32>), String>> = batch
            .par_iter()
            .map(|line| {
                if line.trim().is_empty() {
                    Err(String::new())
                } else {
                    parse_row(line, dim)
                }
            })
            .collect();

        for (offset, result) in parsed.into_iter().enumerate() {
            let at = first_line + offset;
            match result {
                Ok((word, vector)) => {
                    if let Some(blank) = trailing_blank {
                        return Err(Error::parse(source, blank, "blank line"));
                    }
                    if table.words.len() == count {
                        return Err(Error::parse(
                            source,
                            at,
                            format!("more rows than the {count} declared in the header"),
                        ));
                    }
                    table
                        .push(word.to_string(), &vector)
                        .map_err(|m| Error::parse(source, at, m))?;
                }
                Err(message) if message.is_empty() => {
                    trailing_blank.get_or_insert(at);
                }
                Err(message) => return Err(Error::parse(source, at, message)),
            }
        }
    }

    if table.words.len() != count {
        return Err(Error::parse(
            source,
            line_no,
            format!("header declares {count} rows, found {}", table.words.len()),
        ));
    }
    if count == 0 {
        return Err(Error::parse(source, 1, "embedding table is empty"));
    }
    Ok(table)
}

/// Reads a `word,count` frequency sidecar.
pub fn load_freq(path: impl AsRef<Path>) -> Result<HashMap<String, u64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let mut freq = HashMap::new();
    for (i, record) in reader.deserialize::<(String, u64)>().enumerate() {
        let (word, count) = record.map_err(|e| Error::parse(path, i + 2, e.to_string()))?;
        freq.insert(word, count);
    }
    Ok(freq)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostVector {
    pub post_id: String,
    pub user_id: String,
    pub vector: Option<Vec<f64>>,
    pub n_matched: usize,
    pub n_tokens: usize,
}

/// Bag-of-embeddings vector of one tokenized post.
pub fn post_vector(table: &EmbeddingTable, post: &crate::textproc::TokenizedPost) -> PostVector {
    let (vector, n_matched) = table.mean_vector(&post.tokens);
    PostVector {
        post_id: post.post_id.clone(),
        user_id: post.user_id.clone(),
        vector,
        n_matched,
        n_tokens: post.tokens.len(),
    }
}
