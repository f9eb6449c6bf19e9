//! File formats shared across the pipeline: JSON-lines posts and the small
//! CSV tables (labels, mappings, reference scores, predictions).

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::UserPrediction;
use crate::textproc::RawPost;

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(|f| BufReader::with_capacity(1 << 16, f))
        .map_err(|e| Error::io(path, e))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Streams posts from a JSON-lines file, one object per line. Blank lines
/// are skipped; `visit` receives the 1-based line number with each post.
pub fn for_each_post<F>(path: &Path, mut visit: F) -> Result<()>
where
    F: FnMut(usize, RawPost) -> Result<()>,
{
    let mut reader = open(path)?;
    let mut line = String::new();
    let mut line_no = 0;
    loop {
        line.clear();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if line.trim().is_empty() {
            continue;
        }
        let post: RawPost =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        visit(line_no, post)?;
    }
    Ok(())
}

pub fn write_posts_jsonl<'a, W, I>(mut out: W, posts: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a RawPost>,
{
    for post in posts {
        serde_json::to_writer(&mut out, post)?;
        out.write_all(b"\n").map_err(|e| Error::io("<posts>", e))?;
    }
    out.flush().map_err(|e| Error::io("<posts>", e))
}

/// Deserializes every record of a headed CSV file.
pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_reader(open(path)?);
    reader
        .deserialize()
        .enumerate()
        .map(|(i, rec)| rec.map_err(|e| Error::parse(path, i + 2, e.to_string())))
        .collect()
}

pub fn write_csv<T, I>(path: &Path, records: I) -> Result<()>
where
    T: Serialize,
    I: IntoIterator<Item = T>,
{
    let mut writer = csv::Writer::from_writer(create(path)?);
    for record in records {
        writer.serialize(record)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub user_id: String,
    pub score: f64,
}

/// Reads `user_id,score` labels. Duplicate users and non-finite scores are
/// errors.
pub fn read_labels(path: &Path) -> Result<BTreeMap<String, f64>> {
    keyed_scores(
        path,
        read_csv::<LabelRecord>(path)?
            .into_iter()
            .map(|r| (r.user_id, r.score)),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub institution_id: String,
    pub score: f64,
}

/// Reads `institution_id,score` reference scores.
pub fn read_reference(path: &Path) -> Result<BTreeMap<String, f64>> {
    keyed_scores(
        path,
        read_csv::<ReferenceRecord>(path)?
            .into_iter()
            .map(|r| (r.institution_id, r.score)),
    )
}

fn keyed_scores(
    path: &Path,
    rows: impl Iterator<Item = (String, f64)>,
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (i, (key, score)) in rows.enumerate() {
        if !score.is_finite() {
            return Err(Error::parse(
                path,
                i + 2,
                format!("non-finite score for {key:?}"),
            ));
        }
        if out.insert(key.clone(), score).is_some() {
            return Err(Error::parse(path, i + 2, format!("duplicate key {key:?}")));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingRecord {
    pub user_id: String,
    pub institution_id: String,
}

pub fn read_predictions(path: &Path) -> Result<Vec<UserPrediction>> {
    read_csv(path)
}

pub fn write_predictions(path: &Path, preds: &[UserPrediction]) -> Result<()> {
    write_csv(path, preds)
}

/// Reads a newline-separated list (stopwords, user exclusion lists).
pub fn read_lines(path: &Path) -> Result<HashSet<String>> {
    let mut out = HashSet::new();
    for line in open(path)?.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let item = line.trim();
        if !item.is_empty() {
            out.insert(item.to_string());
        }
    }
    Ok(out)
}
