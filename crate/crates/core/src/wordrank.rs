//! Word-level scores from a trained linear model. Since the model is affine
//! in the post vector and a post vector is the mean of its word vectors, a
//! post's score is the mean of its words' scores.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;
use crate::model::LinearModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordScore {
    pub word: String,
    pub score: f64,
    pub freq: Option<u64>,
    pub percentile: f64,
}

/// Where `min_count` frequencies come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum CountSource {
    /// Token counts over the labeled training posts.
    #[default]
    Training,
    /// The frequency sidecar shipped with the embeddings.
    Sidecar,
}

impl std::str::FromStr for CountSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "training" => Ok(CountSource::Training),
            "sidecar" => Ok(CountSource::Sidecar),
            other => Err(format!("unknown count source {other:?} (training|sidecar)")),
        }
    }
}

fn check_dim(model: &LinearModel, table: &EmbeddingTable) -> Result<()> {
    if model.d != table.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.d,
            got: table.dim(),
        });
    }
    Ok(())
}

fn row_score(model: &LinearModel, v: &[f32]) -> f64 {
    model
        .weights
        .iter()
        .zip(v)
        .map(|(w, &x)| w * x as f64)
        .sum::<f64>()
        + model.bias
}

/// `wᵀv + b` for an in-vocabulary word, `None` otherwise.
pub fn score_word(model: &LinearModel, table: &EmbeddingTable, word: &str) -> Result<Option<f64>> {
    check_dim(model, table)?;
    Ok(table.lookup(word).map(|v| row_score(model, v)))
}

/// Post scorer over precomputed word scores: one table pass up front, then
/// one lookup per token. Agrees with `predict_post` on the mean vector up
/// to rounding.
pub struct PostScorer<'a> {
    table: &'a EmbeddingTable,
    scores: Vec<f64>,
}

impl<'a> PostScorer<'a> {
    pub fn new(model: &LinearModel, table: &'a EmbeddingTable) -> Result<Self> {
        check_dim(model, table)?;
        let scores = (0..table.len())
            .into_par_iter()
            .map(|row| row_score(model, table.row(row)))
            .collect();
        Ok(PostScorer { table, scores })
    }

    /// Mean word score over in-vocabulary tokens and the number matched;
    /// `None` when no token is in the table.
    pub fn score<S: AsRef<str>>(&self, tokens: &[S]) -> Option<(f64, usize)> {
        let mut sum = 0.0;
        let mut n = 0;
        for token in tokens {
            if let Some(row) = self.table.row_of(token.as_ref()) {
                sum += self.scores[row];
                n += 1;
            }
        }
        (n > 0).then(|| (sum / n as f64, n))
    }
}

fn count_of(counts: &HashMap<String, u64>, word: &str) -> u64 {
    match counts.get(word) {
        Some(&c) => c,
        None if word.chars().any(char::is_uppercase) => {
            counts.get(&word.to_lowercase()).copied().unwrap_or(0)
        }
        None => 0,
    }
}

/// A scored, sorted vocabulary. Holds row indices into the table rather
/// than copies of the words.
pub struct Ranking<'a> {
    table: &'a EmbeddingTable,
    counts: Option<&'a HashMap<String, u64>>,
    entries: Vec<(u32, f64)>,
}

/// Scores every table row and sorts by descending score, ties broken by
/// the word. With `min_count > 0`, words seen fewer than `min_count` times
/// in `counts` are dropped before percentiles are assigned.
pub fn rank_all<'a>(
    model: &LinearModel,
    table: &'a EmbeddingTable,
    min_count: u64,
    counts: Option<&'a HashMap<String, u64>>,
) -> Result<Ranking<'a>> {
    check_dim(model, table)?;
    if min_count > 0 && counts.is_none() {
        return Err(Error::domain("min_count > 0 requires word frequencies"));
    }
    let mut entries: Vec<(u32, f64)> = (0..table.len())
        .into_par_iter()
        .filter(|&row| match counts {
            Some(c) if min_count > 0 => count_of(c, table.word(row)) >= min_count,
            _ => true,
        })
        .map(|row| (row as u32, row_score(model, table.row(row))))
        .collect();
    if let Some(bad) = entries.iter().find(|e| !e.1.is_finite()) {
        return Err(Error::NonFinite(if bad.1.is_nan() {
            "word score is NaN"
        } else {
            "word score is infinite"
        }));
    }
    entries.par_sort_unstable_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| table.word(a.0 as usize).cmp(table.word(b.0 as usize)))
    });
    Ok(Ranking {
        table,
        counts,
        entries,
    })
}

impl Ranking<'_> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// 100 for the top word, 0 for the bottom, linear in rank between.
    pub fn percentile(&self, rank: usize) -> f64 {
        let n = self.entries.len();
        if n <= 1 {
            100.0
        } else {
            100.0 * (n - 1 - rank) as f64 / (n - 1) as f64
        }
    }

    pub fn get(&self, rank: usize) -> WordScore {
        let (row, score) = self.entries[rank];
        let word = self.table.word(row as usize);
        WordScore {
            word: word.to_string(),
            score,
            freq: self.counts.map(|c| count_of(c, word)),
            percentile: self.percentile(rank),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = WordScore> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }

    pub fn top(&self, n: usize) -> Vec<WordScore> {
        (0..n.min(self.len())).map(|i| self.get(i)).collect()
    }

    /// The `n` lowest-scoring words, lowest last (ranking order).
    pub fn bottom(&self, n: usize) -> Vec<WordScore> {
        let len = self.len();
        (len - n.min(len)..len).map(|i| self.get(i)).collect()
    }

    /// Streams `word,score,freq,percentile` rows without materializing them.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_scores_csv(out, self.iter())
    }
}

pub fn write_scores_csv<W: Write>(out: W, rows: impl IntoIterator<Item = WordScore>) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|e| Error::io("<ranking>", e))
}

/// The two principal directions, each of length `d`.
pub type Loadings = [Vec<f64>; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedWord {
    pub word: String,
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

/// Coordinates of the selected words on the first two principal components
/// of their centered vectors. Each component's sign is fixed so that its
/// largest-magnitude loading is positive. A selection of rank one gets
/// `y = 0`; a selection with no spread at all is an error.
pub fn project_2d(selected: &[WordScore], table: &EmbeddingTable) -> Result<Vec<ProjectedWord>> {
    if selected.len() < 3 {
        return Err(Error::domain("projection needs at least 3 words"));
    }
    let d = table.dim();
    let m = selected.len();
    let mut x = Vec::with_capacity(m * d);
    for w in selected {
        let v = table
            .lookup(&w.word)
            .ok_or_else(|| Error::domain(format!("word {:?} is not in the table", w.word)))?;
        x.extend(v.iter().map(|&f| f as f64));
    }
    let (coords, _) = pca2(&mut x, m, d)?;
    Ok(selected
        .iter()
        .zip(coords)
        .map(|(w, (cx, cy))| ProjectedWord {
            word: w.word.clone(),
            x: cx,
            y: cy,
            score: w.score,
        })
        .collect())
}

/// Two-component PCA of the `m × d` row-major matrix `x` (centered in
/// place). Returns per-row coordinates and the two loading vectors.
pub fn pca2(x: &mut [f64], m: usize, d: usize) -> Result<(Vec<(f64, f64)>, Loadings)> {
    for j in 0..d {
        let mean = (0..m).map(|i| x[i * d + j]).sum::<f64>() / m as f64;
        for i in 0..m {
            x[i * d + j] -= mean;
        }
    }
    let mut loadings: [Vec<f64>; 2] = [vec![0.0; d], vec![0.0; d]];
    let eig: Vec<f64>;
    if m <= d {
        // Gram route: eigenvectors of X Xᵀ give the left singular vectors.
        let mut g = vec![0.0; m * m];
        for i in 0..m {
            for k in 0..=i {
                let s = crate::linalg::dot(&x[i * d..(i + 1) * d], &x[k * d..(k + 1) * d]);
                g[i * m + k] = s;
                g[k * m + i] = s;
            }
        }
        let (vals, vecs) = symmetric_eigen(&g, m);
        for c in 0..2.min(m) {
            if vals[c] <= 0.0 {
                continue;
            }
            let sigma = vals[c].sqrt();
            for (i, row) in x.chunks_exact(d).enumerate() {
                let u = vecs[i * m + c];
                for j in 0..d {
                    loadings[c][j] += row[j] * u / sigma;
                }
            }
        }
        eig = vals;
    } else {
        let mut cov = vec![0.0; d * d];
        for row in x.chunks_exact(d) {
            for a in 0..d {
                for b in 0..=a {
                    cov[a * d + b] += row[a] * row[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                cov[b * d + a] = cov[a * d + b];
            }
        }
        let (vals, vecs) = symmetric_eigen(&cov, d);
        for c in 0..2.min(d) {
            for j in 0..d {
                loadings[c][j] = vecs[j * d + c];
            }
        }
        eig = vals;
    }
    let top = eig.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Err(Error::domain("selected word vectors are all identical"));
    }
    let second = eig.get(1).copied().unwrap_or(0.0);
    if second <= 1e-12 * top {
        loadings[1].iter_mut().for_each(|v| *v = 0.0);
    }
    for l in loadings.iter_mut() {
        let pivot = l.iter().copied().fold(
            0.0_f64,
            |best, v| if v.abs() > best.abs() { v } else { best },
        );
        if pivot < 0.0 {
            l.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let coords = x
        .chunks_exact(d)
        .map(|row| {
            (
                crate::linalg::dot(row, &loadings[0]),
                crate::linalg::dot(row, &loadings[1]),
            )
        })
        .collect();
    Ok((coords, loadings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProjectionRow<'a> {
    word: &'a str,
    x: f64,
    y: f64,
    score: f64,
}

pub fn write_projection_csv<W: Write>(out: W, rows: &[ProjectedWord]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for r in rows {
        writer.serialize(ProjectionRow {
            word: &r.word,
            x: r.x,
            y: r.y,
            score: r.score,
        })?;
    }
    writer.flush().map_err(|e| Error::io("<projection>", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn post_scorer_matches_mean_vector_prediction() {
        let table = EmbeddingTable::from_rows(
            2,
            [
                ("a", vec![1.0f32, 0.0]),
                ("b", vec![0.5, -2.0]),
                ("c", vec![3.0, 1.0]),
            ],
        )
        .unwrap();
        let model = LinearModel {
            weights: vec![2.0, -0.5],
            bias: 1.0,
            lambda: 0.0,
            d: 2,
            training_meta: Default::default(),
        };
        let scorer = PostScorer::new(&model, &table).unwrap();
        for post in [vec!["a"], vec!["a", "b", "b", "zz"], vec!["C", "b"]] {
            let (mean, n) = table.mean_vector(&post);
            let direct = model.predict_post(&mean.unwrap()).unwrap();
            let (score, m) = scorer.score(&post).unwrap();
            assert_eq!(n, m);
            assert!((direct - score).abs() < 1e-12);
        }
        assert_eq!(scorer.score(&["zz"]), None);
    }
    use crate::model::TrainingMeta;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn model(weights: Vec<f64>, bias: f64) -> LinearModel {
        LinearModel {
            d: weights.len(),
            weights,
            bias,
            lambda: 0.0,
            training_meta: TrainingMeta::default(),
        }
    }

    fn table_1d(scores: &[(&str, f32)]) -> EmbeddingTable {
        EmbeddingTable::from_rows(1, scores.iter().map(|(w, s)| (*w, vec![*s]))).unwrap()
    }

    fn random_table(n: usize, d: usize, seed: u64) -> EmbeddingTable {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        EmbeddingTable::from_rows(
            d,
            (0..n).map(|i| {
                (
                    format!("w{i}"),
                    (0..d)
                        .map(|_| rng.random_range(-1.0..1.0f32))
                        .collect::<Vec<_>>(),
                )
            }),
        )
        .unwrap()
    }

    #[test]
    fn percentiles_follow_rank() {
        let t = table_1d(&[("lo", 490.0), ("mid", 500.0), ("hi", 510.0)]);
        let r = rank_all(&model(vec![1.0], 0.0), &t, 0, None).unwrap();
        let rows: Vec<_> = r.iter().collect();
        assert_eq!(
            rows.iter().map(|w| w.word.as_str()).collect::<Vec<_>>(),
            ["hi", "mid", "lo"]
        );
        assert_eq!(
            rows.iter().map(|w| w.percentile).collect::<Vec<_>>(),
            [100.0, 50.0, 0.0]
        );
        assert_eq!(r.bottom(1)[0].word, "lo");
        assert_eq!(r.top(10).len(), 3);
    }

    #[test]
    fn ties_are_lexicographic() {
        let t = table_1d(&[("b", 1.0), ("c", 1.0), ("a", 1.0)]);
        let r = rank_all(&model(vec![1.0], 0.0), &t, 0, None).unwrap();
        let words: Vec<_> = r.iter().map(|w| w.word).collect();
        assert_eq!(words, ["a", "b", "c"]);
    }

    #[test]
    fn zero_weights_score_bias() {
        let t = random_table(20, 4, 1);
        let m = model(vec![0.0; 4], 512.5);
        for w in t.words() {
            assert_eq!(score_word(&m, &t, w).unwrap(), Some(512.5));
        }
        assert_eq!(score_word(&m, &t, "absent").unwrap(), None);
        assert!(score_word(&model(vec![0.0; 3], 0.0), &t, "w0").is_err());
    }

    #[test]
    fn min_count_filter() {
        let t = table_1d(&[("rare", 3.0), ("common", 2.0), ("unseen", 1.0)]);
        let counts: HashMap<String, u64> = [("rare".into(), 4), ("common".into(), 5)].into();
        let m = model(vec![1.0], 0.0);
        assert!(rank_all(&m, &t, 5, None).is_err());
        let r = rank_all(&m, &t, 5, Some(&counts)).unwrap();
        let rows: Vec<_> = r.iter().collect();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].word, "common");
        assert_eq!(rows[0].freq, Some(5));
        assert_eq!(rows[0].percentile, 100.0);
        // Without a filter every table word is scored, seen or not.
        assert_eq!(rank_all(&m, &t, 0, Some(&counts)).unwrap().len(), 3);
    }

    #[test]
    fn csv_layout() {
        let t = table_1d(&[("x", 2.0), ("y", 1.0)]);
        let r = rank_all(&model(vec![1.0], 0.5), &t, 0, None).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "word,score,freq,percentile\nx,2.5,,100.0\ny,1.5,,0.0\n"
        );
    }

    #[test]
    fn post_score_is_mean_of_word_scores() {
        let t = random_table(200, 16, 2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let m = model(
            (0..16).map(|_| rng.random_range(-50.0..50.0)).collect(),
            480.0,
        );
        for _ in 0..200 {
            let len = rng.random_range(1..15);
            let tokens: Vec<String> = (0..len)
                .map(|_| format!("w{}", rng.random_range(0..200)))
                .collect();
            let v = t.mean_vector(&tokens).0.unwrap();
            let post = m.predict_post(&v).unwrap();
            let words = tokens
                .iter()
                .map(|w| score_word(&m, &t, w).unwrap().unwrap())
                .sum::<f64>()
                / len as f64;
            assert!((post - words).abs() < 1e-9, "{post} vs {words}");
        }
    }

    fn scores_for(words: &[&str]) -> Vec<WordScore> {
        words
            .iter()
            .map(|w| WordScore {
                word: w.to_string(),
                score: 0.0,
                freq: None,
                percentile: 0.0,
            })
            .collect()
    }

    #[test]
    fn pca_small_examples() {
        let t = EmbeddingTable::from_rows(
            2,
            [
                ("a", vec![1.0, 0.0]),
                ("b", vec![-1.0, 0.0]),
                ("c", vec![0.0, 0.0]),
            ],
        )
        .unwrap();
        let p = project_2d(&scores_for(&["a", "b", "c"]), &t).unwrap();
        let mut xs: Vec<f64> = p.iter().map(|r| r.x).collect();
        xs.sort_by(f64::total_cmp);
        assert!((xs[0] + 1.0).abs() < 1e-12 && xs[1].abs() < 1e-12 && (xs[2] - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|r| r.y.abs() < 1e-12));

        let collinear = EmbeddingTable::from_rows(
            3,
            [
                ("a", vec![1.0, 2.0, 3.0]),
                ("b", vec![2.0, 4.0, 6.0]),
                ("c", vec![-1.0, -2.0, -3.0]),
            ],
        )
        .unwrap();
        let p = project_2d(&scores_for(&["a", "b", "c"]), &collinear).unwrap();
        assert!(p.iter().all(|r| r.y.abs() < 1e-9));

        let same = EmbeddingTable::from_rows(
            2,
            [
                ("a", vec![1.0, 1.0]),
                ("b", vec![1.0, 1.0]),
                ("c", vec![1.0, 1.0]),
            ],
        )
        .unwrap();
        assert!(project_2d(&scores_for(&["a", "b", "c"]), &same).is_err());
        assert!(project_2d(&scores_for(&["a", "b"]), &same).is_err());
    }

    fn reconstruction_check(m: usize, d: usize, seed: u64) {
        let t = random_table(m, d, seed);
        let mut x: Vec<f64> = (0..m)
            .flat_map(|i| t.row(i).iter().map(|&v| v as f64))
            .collect();
        let (coords, loadings) = pca2(&mut x, m, d).unwrap();
        let mut err = 0.0;
        for (i, row) in x.chunks_exact(d).enumerate() {
            for j in 0..d {
                let rec = coords[i].0 * loadings[0][j] + coords[i].1 * loadings[1][j];
                err += (row[j] - rec).powi(2);
            }
        }
        let mat = nalgebra::DMatrix::from_row_slice(m, d, &x);
        let mut sv: Vec<f64> = mat.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let discarded: f64 = sv.iter().skip(2).map(|s| s * s).sum();
        assert!(
            (err - discarded).abs() < 1e-9 * discarded.max(1.0),
            "{err} vs {discarded}"
        );
    }

    #[test]
    fn reconstruction_matches_svd_both_routes() {
        reconstruction_check(12, 5, 4);
        reconstruction_check(6, 9, 5);
    }

    proptest! {
        #[test]
        fn projection_is_permutation_invariant(seed in 0u64..1000, shift in 1usize..9) {
            let t = random_table(10, 4, seed);
            let words: Vec<String> = t.words().to_vec();
            let refs: Vec<&str> = words.iter().map(String::as_str).collect();
            let mut rotated = refs.clone();
            rotated.rotate_left(shift);
            let a = project_2d(&scores_for(&refs), &t).unwrap();
            let b = project_2d(&scores_for(&rotated), &t).unwrap();
            let lookup: HashMap<&str, (f64, f64)> = b.iter().map(|r| (r.word.as_str(), (r.x, r.y))).collect();
            for r in &a {
                let (x, y) = lookup[r.word.as_str()];
                prop_assert!((r.x - x).abs() < 1e-9 && (r.y - y).abs() < 1e-9);
            }
        }

        #[test]
        fn percentiles_monotone(seed in 0u64..1000) {
            let t = random_table(50, 3, seed);
            let m = model(vec![1.0, -2.0, 0.5], 1.0);
            let r = rank_all(&m, &t, 0, None).unwrap();
            let rows: Vec<_> = r.iter().collect();
            for pair in rows.windows(2) {
                prop_assert!(pair[0].score >= pair[1].score);
                prop_assert!(pair[0].percentile > pair[1].percentile);
            }
        }
    }
}
