//! Top-k unigram/bigram TF-IDF baseline vectorizer.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_VOCAB_SIZE: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfVocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    df: Vec<usize>,
    idf: Vec<f64>,
    n_docs: usize,
    stopwords: HashSet<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VocabRecord {
    term: String,
    df: usize,
    idf: f64,
}

/// Unigrams and adjacent-pair bigrams of the tokens left after stopword
/// removal. Bigrams are joined with a single space.
pub fn candidate_terms<S: AsRef<str>>(tokens: &[S], stopwords: &HashSet<String>) -> Vec<String> {
    let kept: Vec<&str> = tokens
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| !stopwords.contains(*t))
        .collect();
    let mut terms: Vec<String> = kept.iter().map(|t| t.to_string()).collect();
    terms.extend(kept.windows(2).map(|w| format!("{} {}", w[0], w[1])));
    terms
}

fn is_bigram(term: &str) -> bool {
    term.contains(' ')
}

/// Smoothed inverse document frequency, `ln((1 + n) / (1 + df)) + 1`.
pub fn smoothed_idf(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

impl TfidfVocabulary {
    /// Selects the `k` most frequent terms by total occurrence count. Ties go
    /// to unigrams before bigrams, then lexicographic order.
    pub fn build<S: AsRef<str>>(
        corpus: &[Vec<S>],
        stopwords: &HashSet<String>,
        k: usize,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::domain(
                "cannot build a TF-IDF vocabulary from an empty corpus",
            ));
        }
        let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
        for doc in corpus {
            let terms = candidate_terms(doc, stopwords);
            let mut seen: HashSet<&str> = HashSet::new();
            for term in &terms {
                let first = seen.insert(term.as_str());
                let entry = counts.entry(term.clone()).or_insert((0, 0));
                entry.0 += 1;
                if first {
                    entry.1 += 1;
                }
            }
        }
        let mut ranked: Vec<(String, usize, usize)> = counts
            .into_iter()
            .map(|(term, (total, df))| (term, total, df))
            .collect();
        ranked.sort_by(|a, b| {
            b.1.cmp(&a.1)
                .then(is_bigram(&a.0).cmp(&is_bigram(&b.0)))
                .then_with(|| a.0.cmp(&b.0))
        });
        ranked.truncate(k);

        let n_docs = corpus.len();
        let terms: Vec<String> = ranked.iter().map(|r| r.0.clone()).collect();
        let df: Vec<usize> = ranked.iter().map(|r| r.2).collect();
        let idf = df.iter().map(|&d| smoothed_idf(n_docs, d)).collect();
        Ok(Self::assemble(terms, df, idf, n_docs, stopwords.clone()))
    }

    fn assemble(
        terms: Vec<String>,
        df: Vec<usize>,
        idf: Vec<f64>,
        n_docs: usize,
        stopwords: HashSet<String>,
    ) -> Self {
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        TfidfVocabulary {
            terms,
            index,
            df,
            idf,
            n_docs,
            stopwords,
        }
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn df(&self, term: &str) -> Option<usize> {
        self.index.get(term).map(|&i| self.df[i])
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.index.get(term).map(|&i| self.idf[i])
    }

    pub fn stopwords(&self) -> &HashSet<String> {
        &self.stopwords
    }

    /// Sparse L2-normalized TF-IDF vector as `(term index, weight)` pairs in
    /// ascending index order. Posts without vocabulary terms give an empty
    /// vector.
    pub fn transform<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<(usize, f64)> {
        let mut tf: HashMap<usize, usize> = HashMap::new();
        for term in candidate_terms(tokens, &self.stopwords) {
            if let Some(&i) = self.index.get(&term) {
                *tf.entry(i).or_insert(0) += 1;
            }
        }
        let mut v: Vec<(usize, f64)> = tf
            .into_iter()
            .map(|(i, c)| (i, c as f64 * self.idf[i]))
            .collect();
        v.sort_unstable_by_key(|&(i, _)| i);
        let norm = v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|(_, x)| *x /= norm);
        }
        v
    }

    pub fn transform_dense<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<f64> {
        let mut dense = vec![0.0; self.len()];
        for (i, x) in self.transform(tokens) {
            dense[i] = x;
        }
        dense
    }

    /// Writes `term,df,idf` rows; the stopword list is not included.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        for (i, term) in self.terms.iter().enumerate() {
            writer.serialize(VocabRecord {
                term: term.clone(),
                df: self.df[i],
                idf: self.idf[i],
            })?;
        }
        writer.flush().map_err(|e| Error::io("<vocabulary>", e))?;
        Ok(())
    }

    /// Reads a vocabulary written by [`Self::write_csv`]. `n_docs` is not
    /// stored in the file and is recovered as unknown (0).
    pub fn read_csv(path: impl AsRef<Path>, stopwords: HashSet<String>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(BufReader::new(file));
        let (mut terms, mut df, mut idf) = (Vec::new(), Vec::new(), Vec::new());
        for (i, rec) in reader.deserialize::<VocabRecord>().enumerate() {
            let rec = rec.map_err(|e| Error::parse(path, i + 2, e.to_string()))?;
            if !(rec.idf.is_finite() && rec.idf > 0.0) {
                return Err(Error::parse(path, i + 2, "idf must be positive"));
            }
            terms.push(rec.term);
            df.push(rec.df);
            idf.push(rec.idf);
        }
        Ok(Self::assemble(terms, df, idf, 0, stopwords))
    }
}

/// Reads a stopword file: UTF-8, one word per line, blank lines ignored.
/// Words are lowercased to match tokenizer output.
pub fn load_stopwords(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut words = HashSet::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let word = line.trim();
        if !word.is_empty() {
            words.insert(word.to_lowercase());
        }
    }
    Ok(words)
}
