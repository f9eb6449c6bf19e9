//! Glue between posts on disk and the numerical modules: corpus ingestion,
//! vectorization, training-set assembly and batch prediction.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::io::for_each_post;
use crate::model::{LinearModel, TrainingSet, UserPrediction};
use crate::textproc::{
    should_filter, FilterReason, RawPost, SurfaceAccumulator, TokenizedPost, UserSurfaceFeatures,
};
use crate::tfidf::TfidfVocabulary;
use crate::wordrank::PostScorer;

/// Filtered, tokenized posts grouped by user (users in sorted order, posts
/// in input order).
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    users: BTreeMap<String, Vec<TokenizedPost>>,
    filtered: BTreeMap<FilterReason, usize>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies the post filter and keeps the survivors.
    pub fn push(&mut self, post: &RawPost) {
        match should_filter(post) {
            Some(reason) => *self.filtered.entry(reason).or_insert(0) += 1,
            None => self
                .users
                .entry(post.user_id.clone())
                .or_default()
                .push(TokenizedPost::from_raw(post)),
        }
    }

    pub fn from_posts<'a>(posts: impl IntoIterator<Item = &'a RawPost>) -> Self {
        let mut corpus = Corpus::new();
        for post in posts {
            corpus.push(post);
        }
        corpus
    }

    /// Reads a JSON-lines posts file. Duplicate post ids are a parse error.
    pub fn load(path: &Path) -> Result<Self> {
        let mut corpus = Corpus::new();
        let mut seen: HashSet<String> = HashSet::new();
        for_each_post(path, |line, post| {
            if !seen.insert(post.post_id.clone()) {
                return Err(Error::parse(
                    path,
                    line,
                    format!("duplicate post_id {:?}", post.post_id),
                ));
            }
            corpus.push(&post);
            Ok(())
        })?;
        Ok(corpus)
    }

    pub fn users(&self) -> impl Iterator<Item = (&str, &[TokenizedPost])> {
        self.users.iter().map(|(u, p)| (u.as_str(), p.as_slice()))
    }

    pub fn posts_of(&self, user: &str) -> Option<&[TokenizedPost]> {
        self.users.get(user).map(Vec::as_slice)
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_posts(&self) -> usize {
        self.users.values().map(Vec::len).sum()
    }

    pub fn filtered(&self) -> &BTreeMap<FilterReason, usize> {
        &self.filtered
    }

    pub fn posts(&self) -> impl Iterator<Item = &TokenizedPost> {
        self.users.values().flatten()
    }

    /// Token occurrence counts over every kept post.
    pub fn token_counts(&self) -> HashMap<String, u64> {
        let mut counts = HashMap::new();
        for post in self.posts() {
            for token in &post.tokens {
                *counts.entry(token.clone()).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Surface features for every user, in user order.
    pub fn surface_features(&self) -> Result<Vec<UserSurfaceFeatures>> {
        self.users
            .par_iter()
            .map(|(_, posts)| crate::textproc::surface_features(posts))
            .collect()
    }
}

/// Turns a tokenized post into a model input.
#[derive(Debug, Clone, Copy)]
pub enum Vectorizer<'a> {
    /// Mean of in-vocabulary word vectors; posts with no match have no vector.
    Embedding(&'a EmbeddingTable),
    /// L2-normalized TF-IDF over a fixed vocabulary; always defined.
    Tfidf(&'a TfidfVocabulary),
}

impl Vectorizer<'_> {
    pub fn dim(&self) -> usize {
        match self {
            Vectorizer::Embedding(t) => t.dim(),
            Vectorizer::Tfidf(v) => v.len(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Vectorizer::Embedding(_) => "embedding",
            Vectorizer::Tfidf(_) => "tfidf",
        }
    }

    pub fn vectorize(&self, tokens: &[String]) -> Option<Vec<f64>> {
        match self {
            Vectorizer::Embedding(t) => t.mean_vector(tokens).0,
            Vectorizer::Tfidf(v) => Some(v.transform_dense(tokens)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssemblyReport {
    pub rows: usize,
    pub users: usize,
    /// Posts dropped because no token had a vector.
    pub posts_without_vector: usize,
    /// Users in the corpus without a label.
    pub unlabeled_users: usize,
    /// Labeled users with no usable post.
    pub users_without_rows: usize,
}

/// Builds the post-level training set: every usable post of a labeled user
/// becomes one row carrying that user's label.
pub fn assemble_training_set(
    corpus: &Corpus,
    labels: &BTreeMap<String, f64>,
    vectorizer: Vectorizer<'_>,
) -> Result<(TrainingSet, AssemblyReport)> {
    let mut report = AssemblyReport::default();
    let labeled: Vec<(&str, &[TokenizedPost], f64)> = corpus
        .users()
        .filter_map(|(user, posts)| match labels.get(user) {
            Some(&y) => Some((user, posts, y)),
            None => {
                report.unlabeled_users += 1;
                None
            }
        })
        .collect();
    let vectors: Vec<Vec<Option<Vec<f64>>>> = labeled
        .par_iter()
        .map(|(_, posts, _)| {
            posts
                .iter()
                .map(|p| vectorizer.vectorize(&p.tokens))
                .collect()
        })
        .collect();

    let mut ts = TrainingSet::new(vectorizer.dim());
    for ((user, _, y), rows) in labeled.iter().zip(vectors) {
        let before = ts.n_rows();
        for v in rows {
            match v {
                Some(v) => ts.push(user, &v, *y)?,
                None => report.posts_without_vector += 1,
            }
        }
        if ts.n_rows() == before {
            report.users_without_rows += 1;
        }
    }
    report.rows = ts.n_rows();
    report.users = ts.n_groups();
    if ts.n_rows() == 0 {
        return Err(Error::domain("no labeled post has a usable vector"));
    }
    Ok((ts, report))
}

/// Per-user predictions over a whole corpus, in user order.
pub fn predict_corpus(
    model: &LinearModel,
    corpus: &Corpus,
    vectorizer: Vectorizer<'_>,
) -> Result<Vec<UserPrediction>> {
    if vectorizer.dim() != model.d {
        return Err(Error::DimensionMismatch {
            expected: model.d,
            got: vectorizer.dim(),
        });
    }
    let users: Vec<(&str, &[TokenizedPost])> = corpus.users().collect();
    users
        .par_iter()
        .map(|(user, posts)| {
            let vectors: Vec<Option<Vec<f64>>> = posts
                .iter()
                .map(|p| vectorizer.vectorize(&p.tokens))
                .collect();
            model.predict_user(user, vectors.iter().map(|v| v.as_deref()))
        })
        .collect()
}

/// Streams a JSON-lines file, scoring posts as they are read and keeping
/// only per-user running sums. Users whose posts were all filtered do not
/// appear; users whose posts had no usable vector get the fallback.
pub fn predict_stream(
    model: &LinearModel,
    path: &Path,
    vectorizer: Vectorizer<'_>,
) -> Result<Vec<UserPrediction>> {
    if vectorizer.dim() != model.d {
        return Err(Error::DimensionMismatch {
            expected: model.d,
            got: vectorizer.dim(),
        });
    }
    let scorer = match vectorizer {
        Vectorizer::Embedding(table) => Some(PostScorer::new(model, table)?),
        Vectorizer::Tfidf(_) => None,
    };
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for_each_post(path, |_, post| {
        if should_filter(&post).is_some() {
            return Ok(());
        }
        let tokens = crate::textproc::tokenize(&post.text);
        let entry = sums.entry(post.user_id).or_insert((0.0, 0));
        let score = match &scorer {
            Some(scorer) => scorer.score(&tokens).map(|(s, _)| s),
            None => match vectorizer.vectorize(&tokens) {
                Some(v) => Some(model.predict_post(&v)?),
                None => None,
            },
        };
        if let Some(s) = score {
            entry.0 += s;
            entry.1 += 1;
        }
        Ok(())
    })?;
    Ok(sums
        .into_iter()
        .map(|(user_id, (sum, n))| UserPrediction {
            user_id,
            predicted: if n == 0 {
                model.training_meta.target_mean
            } else {
                sum / n as f64
            },
            n_posts_used: n,
        })
        .collect())
}

/// Surface features per user straight from a JSON-lines file, holding one
/// accumulator per user rather than the posts themselves.
pub fn stream_surface_features(path: &Path) -> Result<Vec<UserSurfaceFeatures>> {
    let mut users: BTreeMap<String, SurfaceAccumulator> = BTreeMap::new();
    for_each_post(path, |_, post| {
        if should_filter(&post).is_none() {
            users
                .entry(post.user_id.clone())
                .or_default()
                .add(&TokenizedPost::from_raw(&post));
        }
        Ok(())
    })?;
    users
        .into_iter()
        .map(|(user, acc)| acc.finish(user))
        .collect()
}
