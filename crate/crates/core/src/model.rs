//! Linear regression on post vectors, per-user prediction and exact
//! leave-one-user-out cross-validation.
//!
//! The fit minimizes `sum (x'w + b - y)^2 + lambda |w|^2` with the bias left
//! unpenalized. Features and targets are centered first and the bias is
//! recovered from the means.
//!
//! Leave-one-user-out predictions are obtained by downdating the global
//! system instead of refitting. With `z = [x - mean_x, 1]` the augmented
//! normal matrix is `A = [[S + lambda I, 0], [0, n]]`; removing user `u`
//! gives `A - Z_u' Z_u` and `b - Z_u' (y_u - mean_y)`. Two exact solvers are
//! available for the downdated system:
//!
//! * [`LooStrategy::Direct`] forms and factors the downdated matrix.
//! * [`LooStrategy::LowRank`] keeps the global inverse and solves the small
//!   `n_u x n_u` system `(I - Z_u A^{-1} Z_u') e = y_u - Z_u beta`, where `e`
//!   are the held-out residuals.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Cholesky};
use crate::seeding::{derive_seed, rng_for};
use crate::stats::{bootstrap_ci, pearson_r};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Condition estimates above this trigger a warning suggesting `lambda > 0`.
pub const CONDITION_ADVISORY: f64 = 1e12;

/// Rows per partial Gram sum. Partial sums are merged in chunk order, which
/// keeps the result independent of the number of threads.
const GRAM_CHUNK: usize = 256;
const GRAM_WAVE: usize = 8;

/// Post-level design matrix with one target per row and a user per row.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    d: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    groups: Vec<usize>,
    group_ids: Vec<String>,
    group_index: HashMap<String, usize>,
    group_rows: Vec<Vec<usize>>,
}

impl TrainingSet {
    pub fn new(d: usize) -> Self {
        TrainingSet {
            d,
            x: Vec::new(),
            y: Vec::new(),
            groups: Vec::new(),
            group_ids: Vec::new(),
            group_index: HashMap::new(),
            group_rows: Vec::new(),
        }
    }

    pub fn push(&mut self, group_id: &str, x: &[f64], y: f64) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training row"));
        }
        let g = match self.group_index.get(group_id) {
            Some(&g) => g,
            None => {
                let g = self.group_ids.len();
                self.group_ids.push(group_id.to_string());
                self.group_index.insert(group_id.to_string(), g);
                self.group_rows.push(Vec::new());
                g
            }
        };
        self.group_rows[g].push(self.y.len());
        self.x.extend_from_slice(x);
        self.y.push(y);
        self.groups.push(g);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_groups(&self) -> usize {
        self.group_ids.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    pub fn group_of(&self, i: usize) -> usize {
        self.groups[i]
    }

    pub fn group_ids(&self) -> &[String] {
        &self.group_ids
    }

    pub fn group_rows(&self, g: usize) -> &[usize] {
        &self.group_rows[g]
    }

    /// Mean target over a group's rows (each user's label is copied to all
    /// of their posts, so this is the label itself).
    pub fn group_target(&self, g: usize) -> f64 {
        let rows = &self.group_rows[g];
        rows.iter().map(|&i| self.y[i]).sum::<f64>() / rows.len() as f64
    }

    /// New set holding the given rows, grouped as in `self`.
    pub fn select_rows(&self, rows: impl IntoIterator<Item = usize>) -> TrainingSet {
        let mut out = TrainingSet::new(self.d);
        for i in rows {
            out.push(&self.group_ids[self.groups[i]], self.row(i), self.y[i])
                .expect("rows of a valid set");
        }
        out
    }

    /// New set without the rows of group `g`.
    pub fn without_group(&self, g: usize) -> TrainingSet {
        self.select_rows((0..self.n_rows()).filter(|&i| self.groups[i] != g))
    }

    fn density(&self) -> f64 {
        if self.x.is_empty() {
            return 1.0;
        }
        self.x.iter().filter(|&&v| v != 0.0).count() as f64 / self.x.len() as f64
    }
}

/// Centered second moments of a training set.
#[derive(Debug, Clone)]
struct CenteredGram {
    n: usize,
    d: usize,
    mean_x: Vec<f64>,
    mean_y: f64,
    /// `sum (x - mean_x)(x - mean_x)'`, full symmetric `d x d`.
    sxx: Vec<f64>,
    /// `sum (x - mean_x)(y - mean_y)`.
    sxy: Vec<f64>,
    sst: f64,
}

fn chunked_mean(ts: &TrainingSet) -> (Vec<f64>, f64) {
    let d = ts.d;
    let n = ts.n_rows();
    let partials: Vec<(Vec<f64>, f64)> = (0..n)
        .step_by(GRAM_CHUNK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let mut sx = vec![0.0; d];
            let mut sy = 0.0;
            for i in start..(start + GRAM_CHUNK).min(n) {
                for (s, v) in sx.iter_mut().zip(ts.row(i)) {
                    *s += v;
                }
                sy += ts.y[i];
            }
            (sx, sy)
        })
        .collect();
    let mut sx = vec![0.0; d];
    let mut sy = 0.0;
    for (px, py) in partials {
        for (s, v) in sx.iter_mut().zip(&px) {
            *s += v;
        }
        sy += py;
    }
    let nf = n as f64;
    sx.iter_mut().for_each(|v| *v /= nf);
    (sx, sy / nf)
}

impl CenteredGram {
    fn compute(ts: &TrainingSet) -> Result<Self> {
        let n = ts.n_rows();
        let d = ts.d;
        if n == 0 {
            return Err(Error::domain("training set is empty"));
        }
        let (mean_x, mean_y) = chunked_mean(ts);
        // Sparse designs (TF-IDF) accumulate raw products over nonzeros and
        // subtract n m m' afterwards; dense designs center each row first.
        let sparse = ts.density() < 0.25;

        let starts: Vec<usize> = (0..n).step_by(GRAM_CHUNK).collect();
        let mut sxx = vec![0.0; d * d];
        let mut sxy = vec![0.0; d];
        let mut sst = 0.0;
        // waves bound the number of live d x d partial sums
        for wave in starts.chunks(GRAM_WAVE) {
            let partials: Vec<(Vec<f64>, Vec<f64>, f64)> = wave
                .par_iter()
                .map(|&start| {
                    let mut g = vec![0.0; d * d];
                    let mut sxy = vec![0.0; d];
                    let mut sst = 0.0;
                    let mut centered = vec![0.0; d];
                    let mut nz: Vec<(usize, f64)> = Vec::new();
                    for i in start..(start + GRAM_CHUNK).min(n) {
                        let dy = ts.y[i] - mean_y;
                        sst += dy * dy;
                        let row = ts.row(i);
                        if sparse {
                            nz.clear();
                            nz.extend(row.iter().copied().enumerate().filter(|&(_, v)| v != 0.0));
                            for &(a, va) in &nz {
                                sxy[a] += va * dy;
                                let ga = &mut g[a * d..a * d + d];
                                for &(b, vb) in nz.iter().take_while(|&&(b, _)| b <= a) {
                                    ga[b] += va * vb;
                                }
                            }
                        } else {
                            for (c, (v, m)) in centered.iter_mut().zip(row.iter().zip(&mean_x)) {
                                *c = v - m;
                            }
                            for a in 0..d {
                                let ca = centered[a];
                                sxy[a] += ca * dy;
                                if ca == 0.0 {
                                    continue;
                                }
                                let ga = &mut g[a * d..a * d + a + 1];
                                for (gb, cb) in ga.iter_mut().zip(&centered[..=a]) {
                                    *gb += ca * cb;
                                }
                            }
                        }
                    }
                    (g, sxy, sst)
                })
                .collect();

            for (g, s, t) in partials {
                for a in 0..d {
                    for b in 0..=a {
                        sxx[a * d + b] += g[a * d + b];
                    }
                    sxy[a] += s[a];
                }
                sst += t;
            }
        }
        let nf = n as f64;
        if sparse {
            // the sparse pass used raw x; y was centered so only sxx needs
            // the mean correction, and sxy picks up -m * sum(dy) = 0
            for a in 0..d {
                for b in 0..=a {
                    sxx[a * d + b] -= nf * mean_x[a] * mean_x[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                sxx[b * d + a] = sxx[a * d + b];
            }
        }
        Ok(CenteredGram {
            n,
            d,
            mean_x,
            mean_y,
            sxx,
            sxy,
            sst,
        })
    }

    fn penalized(&self, lambda: f64) -> Vec<f64> {
        let mut a = self.sxx.clone();
        for i in 0..self.d {
            a[i * self.d + i] += lambda;
        }
        a
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub n_posts: usize,
    pub n_users: usize,
    pub target_mean: f64,
    pub target_sd: f64,
    #[serde(default)]
    pub embedding_fingerprint: Option<String>,
    #[serde(default)]
    pub vectorizer: Option<String>,
    #[serde(default)]
    pub condition_estimate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
    pub d: usize,
    pub training_meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    d: usize,
    lambda: f64,
    weights: Vec<f64>,
    bias: f64,
    training_meta: TrainingMeta,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )))
    }
}

/// Fits the ridge (or, with `lambda = 0`, ordinary least squares) model.
pub fn fit(ts: &TrainingSet, lambda: f64) -> Result<LinearModel> {
    check_lambda(lambda)?;
    let n = ts.n_rows();
    if lambda == 0.0 && n < ts.d + 1 {
        return Err(Error::Singular(format!(
            "{n} rows cannot determine {} weights and a bias",
            ts.d
        )));
    }
    let gram = CenteredGram::compute(ts)?;
    let chol = Cholesky::factor(&gram.penalized(lambda), ts.d)?;
    let cond = chol.condition_estimate();
    if cond > CONDITION_ADVISORY {
        log::warn!(
            "normal equations are ill-conditioned (estimate {cond:.2e}); consider lambda > 0"
        );
    }
    let weights = chol.solve(&gram.sxy);
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("fitted weights"));
    }
    let bias = gram.mean_y - dot(&gram.mean_x, &weights);
    let target_sd = if n > 1 {
        (gram.sst / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(LinearModel {
        weights,
        bias,
        lambda,
        d: ts.d,
        training_meta: TrainingMeta {
            n_posts: n,
            n_users: ts.n_groups(),
            target_mean: gram.mean_y,
            target_sd,
            embedding_fingerprint: None,
            vectorizer: None,
            condition_estimate: Some(cond),
        },
    })
}

/// Penalized training loss `sum (x'w + b - y)^2 + lambda |w|^2`.
pub fn training_loss(ts: &TrainingSet, weights: &[f64], bias: f64, lambda: f64) -> f64 {
    let sse: f64 = (0..ts.n_rows())
        .map(|i| {
            let e = dot(ts.row(i), weights) + bias - ts.y[i];
            e * e
        })
        .sum();
    sse + lambda * dot(weights, weights)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserPrediction {
    pub user_id: String,
    pub predicted: f64,
    pub n_posts_used: usize,
}

impl LinearModel {
    pub fn predict_post(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        Ok(dot(&self.weights, x) + self.bias)
    }

    /// Mean prediction over the present vectors. With no usable vector the
    /// training target mean is returned and `n_posts_used` is 0.
    pub fn predict_user<'a, I>(&self, user_id: &str, vectors: I) -> Result<UserPrediction>
    where
        I: IntoIterator<Item = Option<&'a [f64]>>,
    {
        let mut sum = 0.0;
        let mut used = 0;
        for v in vectors.into_iter().flatten() {
            sum += self.predict_post(v)?;
            used += 1;
        }
        let predicted = if used == 0 {
            self.training_meta.target_mean
        } else {
            sum / used as f64
        };
        Ok(UserPrediction {
            user_id: user_id.to_string(),
            predicted,
            n_posts_used: used,
        })
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let record = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            d: self.d,
            lambda: self.lambda,
            weights: self.weights.clone(),
            bias: self.bias,
            training_meta: self.training_meta.clone(),
        };
        serde_json::to_writer_pretty(BufWriter::new(file), &record)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let record: ModelFile = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        if record.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::parse(
                path,
                1,
                format!("unsupported model format_version {}", record.format_version),
            ));
        }
        if record.weights.len() != record.d {
            return Err(Error::parse(
                path,
                1,
                format!("{} weights for d = {}", record.weights.len(), record.d),
            ));
        }
        if !record.bias.is_finite() || record.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(LinearModel {
            weights: record.weights,
            bias: record.bias,
            lambda: record.lambda,
            d: record.d,
            training_meta: record.training_meta,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LooStrategy {
    /// `LowRank` for users with fewer rows than the system dimension,
    /// `Direct` otherwise.
    #[default]
    Auto,
    Direct,
    LowRank,
}

/// Leave-one-user-out predictions: each user's posts are scored by a model
/// fit on every other user's posts, and averaged.
pub fn loo_user_cv(ts: &TrainingSet, lambda: f64) -> Result<Vec<UserPrediction>> {
    loo_user_cv_with(ts, lambda, LooStrategy::Auto)
}

pub fn loo_user_cv_with(
    ts: &TrainingSet,
    lambda: f64,
    strategy: LooStrategy,
) -> Result<Vec<UserPrediction>> {
    check_lambda(lambda)?;
    if ts.n_groups() < 2 {
        return Err(Error::domain("leave-one-user-out needs at least 2 users"));
    }
    let gram = CenteredGram::compute(ts)?;
    let d = ts.d;
    let p = d + 1;
    let penalized = gram.penalized(lambda);
    let global = Cholesky::factor(&penalized, d)?;
    let weights = global.solve(&gram.sxy);

    let needs_low_rank = (0..ts.n_groups()).any(|g| match strategy {
        LooStrategy::Auto => ts.group_rows(g).len() < p,
        LooStrategy::LowRank => true,
        LooStrategy::Direct => false,
    });
    let low_rank = needs_low_rank.then(|| LowRankContext::new(&global, &gram, &weights));

    (0..ts.n_groups())
        .into_par_iter()
        .map(|g| {
            let rows = ts.group_rows(g);
            let use_low_rank = match strategy {
                LooStrategy::Auto => rows.len() < p,
                LooStrategy::LowRank => true,
                LooStrategy::Direct => false,
            };
            let preds = if use_low_rank {
                low_rank
                    .as_ref()
                    .expect("low-rank context")
                    .held_out_predictions(ts, &gram, rows)
            } else {
                direct_held_out_predictions(ts, &gram, &penalized, rows)
            }
            .map_err(|e| match e {
                Error::Singular(m) => Error::Singular(format!(
                    "system without user {:?} is singular ({m})",
                    ts.group_ids()[g]
                )),
                other => other,
            })?;
            Ok(UserPrediction {
                user_id: ts.group_ids()[g].clone(),
                predicted: preds.iter().sum::<f64>() / preds.len() as f64,
                n_posts_used: rows.len(),
            })
        })
        .collect()
}

/// Refactors `A - Z_u' Z_u` and re-solves.
fn direct_held_out_predictions(
    ts: &TrainingSet,
    gram: &CenteredGram,
    penalized: &[f64],
    rows: &[usize],
) -> Result<Vec<f64>> {
    let d = gram.d;
    let p = d + 1;
    let mut a = vec![0.0; p * p];
    for i in 0..d {
        a[i * p..i * p + d].copy_from_slice(&penalized[i * d..i * d + d]);
    }
    a[d * p + d] = gram.n as f64;
    let mut b = vec![0.0; p];
    b[..d].copy_from_slice(&gram.sxy);

    let mut z = vec![0.0; p];
    z[d] = 1.0;
    for &i in rows {
        for (zk, (x, m)) in z.iter_mut().zip(ts.row(i).iter().zip(&gram.mean_x)) {
            *zk = x - m;
        }
        let dy = ts.y[i] - gram.mean_y;
        for r in 0..p {
            let zr = z[r];
            b[r] -= zr * dy;
            if zr == 0.0 {
                continue;
            }
            for c in 0..=r {
                a[r * p + c] -= zr * z[c];
            }
        }
    }
    let chol = Cholesky::factor(&a, p)?;
    let beta = chol.solve(&b);
    Ok(rows
        .iter()
        .map(|&i| {
            let centered: f64 = ts
                .row(i)
                .iter()
                .zip(&gram.mean_x)
                .zip(&beta[..d])
                .map(|((x, m), w)| (x - m) * w)
                .sum();
            centered + beta[d] + gram.mean_y
        })
        .collect())
}

/// Global quantities shared by every low-rank downdate.
struct LowRankContext {
    /// `(S + lambda I)^{-1}`, row-major.
    inv: Vec<f64>,
    /// `(S + lambda I)^{-1} mean_x`.
    inv_mean: Vec<f64>,
    weights: Vec<f64>,
    mean_dot_w: f64,
    inv_n: f64,
}

impl LowRankContext {
    fn new(chol: &Cholesky, gram: &CenteredGram, weights: &[f64]) -> Self {
        let d = chol.dim();
        let columns: Vec<Vec<f64>> = (0..d)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![0.0; d];
                e[j] = 1.0;
                chol.solve_in_place(&mut e);
                e
            })
            .collect();
        let mut inv = vec![0.0; d * d];
        for (j, col) in columns.iter().enumerate() {
            for i in 0..d {
                inv[i * d + j] = col[i];
            }
        }
        for i in 0..d {
            for j in (i + 1)..d {
                let v = 0.5 * (inv[i * d + j] + inv[j * d + i]);
                inv[i * d + j] = v;
                inv[j * d + i] = v;
            }
        }
        LowRankContext {
            inv_mean: chol.solve(&gram.mean_x),
            inv,
            weights: weights.to_vec(),
            mean_dot_w: dot(&gram.mean_x, weights),
            inv_n: 1.0 / gram.n as f64,
        }
    }

    /// `(S + lambda I)^{-1} (x - mean_x)`, touching only nonzero entries of x.
    fn inv_centered(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let mut v: Vec<f64> = self.inv_mean.iter().map(|m| -m).collect();
        for (k, &xk) in x.iter().enumerate() {
            if xk != 0.0 {
                let col = &self.inv[k * d..k * d + d];
                for (vi, c) in v.iter_mut().zip(col) {
                    *vi += xk * c;
                }
            }
        }
        v
    }

    fn held_out_predictions(
        &self,
        ts: &TrainingSet,
        gram: &CenteredGram,
        rows: &[usize],
    ) -> Result<Vec<f64>> {
        let m = rows.len();
        let vs: Vec<Vec<f64>> = rows.iter().map(|&i| self.inv_centered(ts.row(i))).collect();
        let mean_dot_v: Vec<f64> = vs.iter().map(|v| dot(&gram.mean_x, v)).collect();
        // I - H with H_ij = z_i' A^{-1} z_j = (x_i - m)' v_j + 1/n
        let mut system = vec![0.0; m * m];
        for (a, &i) in rows.iter().enumerate() {
            let xi = ts.row(i);
            for b in 0..=a {
                let sparse_dot: f64 = xi
                    .iter()
                    .zip(&vs[b])
                    .filter(|(x, _)| **x != 0.0)
                    .map(|(x, v)| x * v)
                    .sum();
                let h = sparse_dot - mean_dot_v[b] + self.inv_n;
                let value = if a == b { 1.0 - h } else { -h };
                system[a * m + b] = value;
                system[b * m + a] = value;
            }
        }
        let residuals: Vec<f64> = rows
            .iter()
            .map(|&i| {
                let fitted = dot(ts.row(i), &self.weights) - self.mean_dot_w;
                (ts.y[i] - gram.mean_y) - fitted
            })
            .collect();
        let chol = Cholesky::factor(&system, m)?;
        let held_out = chol.solve(&residuals);
        Ok(rows
            .iter()
            .zip(&held_out)
            .map(|(&i, e)| ts.y[i] - e)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub r: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub boot_median: f64,
    pub n_users: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveConfig {
    pub n_max: usize,
    pub bootstrap_reps: usize,
    pub level: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for CurveConfig {
    fn default() -> Self {
        CurveConfig {
            n_max: 20,
            bootstrap_reps: 1000,
            level: 0.9,
            lambda: 0.0,
            seed: 0,
        }
    }
}

/// Predictive power as a function of posts per user.
///
/// Only users with at least `n_max` rows take part. For each `N` in
/// `1..=n_max`, `N` rows per user are drawn without replacement (one draw per
/// `(seed, N, user)`), leave-one-user-out predictions are recomputed on the
/// reduced set, and Pearson r against the users' targets is reported with a
/// percentile bootstrap interval over users.
pub fn posts_curve(ts: &TrainingSet, config: &CurveConfig) -> Result<Vec<CurvePoint>> {
    if config.n_max == 0 {
        return Err(Error::domain("n_max must be positive"));
    }
    let eligible: Vec<usize> = (0..ts.n_groups())
        .filter(|&g| ts.group_rows(g).len() >= config.n_max)
        .collect();
    if eligible.is_empty() {
        return Err(Error::domain(format!(
            "no user has at least {} posts",
            config.n_max
        )));
    }
    let mut points = Vec::with_capacity(config.n_max);
    for n in 1..=config.n_max {
        let mut rows = Vec::with_capacity(eligible.len() * n);
        for &g in &eligible {
            let group = ts.group_rows(g);
            if group.len() < n {
                continue;
            }
            let mut rng = rng_for(config.seed, &[n as u64, g as u64]);
            let mut picked: Vec<usize> = sample(&mut rng, group.len(), n)
                .into_iter()
                .map(|k| group[k])
                .collect();
            picked.sort_unstable();
            rows.extend(picked);
        }
        let subset = ts.select_rows(rows);
        let preds = loo_user_cv(&subset, config.lambda)?;
        let pairs: Vec<(f64, f64)> = preds
            .iter()
            .enumerate()
            .map(|(g, p)| (p.predicted, subset.group_target(g)))
            .collect();
        let (pred, truth): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let r = pearson_r(&pred, &truth)
            .ok_or_else(|| Error::domain(format!("correlation undefined at N = {n}")))?;
        let ci = bootstrap_ci(
            &pairs,
            |sample: &[&(f64, f64)]| {
                let (a, b): (Vec<f64>, Vec<f64>) = sample.iter().map(|p| **p).unzip();
                pearson_r(&a, &b)
            },
            config.bootstrap_reps,
            config.level,
            derive_seed(config.seed, &[n as u64, u64::MAX]),
        )?;
        points.push(CurvePoint {
            n,
            r,
            ci_low: ci.low,
            ci_high: ci.high,
            boot_median: ci.median,
            n_users: pairs.len(),
        });
    }
    Ok(points)
}
