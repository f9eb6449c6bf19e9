//! Synthetic datasets with a planted linear signal.
//!
//! Words are drawn around `n_topics` Gaussian centers in embedding space.
//! Each user has a Dirichlet topic mixture; their latent score is a fixed
//! linear functional of the mixture's expected embedding, standardized
//! analytically and rescaled to mean 500, sd 100 together with label noise.
//! Posts sample topics from the mixture, then words within the topic by a
//! Zipf law. A fraction of every topic's words never occurs in any post but
//! is still in the embedding table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::io::{
    create, write_csv, write_posts_jsonl, LabelRecord, MappingRecord, ReferenceRecord,
};
use crate::seeding::rng_for;
use crate::textproc::RawPost;

const SCORE_MEAN: f64 = 500.0;
const SCORE_SD: f64 = 100.0;

// Stream tags for `rng_for`.
const WORLD: u64 = 0;
const TRAIN_USER: u64 = 1;
const INST_USER: u64 = 2;
const INST_USER_B: u64 = 3;
const INST_CENTER: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Embedding table rows, function words included.
    pub vocab_size: usize,
    pub dim: usize,
    pub n_topics: usize,
    pub n_users: usize,
    pub posts_per_user: usize,
    pub tokens_per_post: usize,
    /// Label noise sd in score units (total score sd is 100).
    pub noise_sd: f64,
    pub institution_count: usize,
    pub users_per_institution: usize,
    pub seed: u64,
    /// Share of each topic's words kept out of every post.
    pub holdout_fraction: f64,
    pub n_function_words: usize,
    /// Probability that a token is a function word.
    pub function_rate: f64,
    pub dirichlet_alpha: f64,
    /// Concentration of member mixtures around their institution's mixture.
    pub institution_concentration: f64,
    pub center_scale: f64,
    pub word_sd: f64,
    pub zipf_exponent: f64,
    /// Random capitalization and exclamation marks in post text.
    pub decorate: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: 5000,
            dim: 50,
            n_topics: 8,
            n_users: 300,
            posts_per_user: 20,
            tokens_per_post: 20,
            noise_sd: 71.414,
            institution_count: 20,
            users_per_institution: 25,
            seed: 0,
            holdout_fraction: 0.1,
            n_function_words: 20,
            function_rate: 0.25,
            dirichlet_alpha: 0.5,
            institution_concentration: 20.0,
            center_scale: 1.0,
            word_sd: 0.6,
            zipf_exponent: 0.0,
            decorate: true,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("dim", self.dim),
            ("n_topics", self.n_topics),
            ("n_users", self.n_users),
            ("posts_per_user", self.posts_per_user),
            ("tokens_per_post", self.tokens_per_post),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::domain(format!("{name} must be positive")));
            }
        }
        if self.dim < 2 {
            return Err(Error::domain("dim must be at least 2"));
        }
        if self.n_topics < 2 {
            return Err(Error::domain("n_topics must be at least 2"));
        }
        let content = self.vocab_size.saturating_sub(self.n_function_words);
        if self.n_topics > content {
            return Err(Error::domain(format!(
                "n_topics ({}) exceeds the {content} content words",
                self.n_topics
            )));
        }
        if content < 2 * self.n_topics {
            return Err(Error::domain("each topic needs at least two content words"));
        }
        if !(0.0..SCORE_SD).contains(&self.noise_sd) {
            return Err(Error::domain("noise_sd must be in [0, 100)"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::domain("holdout_fraction must be in [0, 1)"));
        }
        let rate_ok = (0.0..1.0).contains(&self.function_rate)
            && (self.n_function_words > 0 || self.function_rate == 0.0);
        if !rate_ok {
            return Err(Error::domain(
                "function_rate must be in [0, 1) and needs function words",
            ));
        }
        for (name, v) in [
            ("dirichlet_alpha", self.dirichlet_alpha),
            ("institution_concentration", self.institution_concentration),
            ("center_scale", self.center_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive")));
            }
        }
        if !(self.word_sd >= 0.0 && self.zipf_exponent >= 0.0) {
            return Err(Error::domain(
                "word_sd and zipf_exponent must be non-negative",
            ));
        }
        Ok(())
    }

    /// Correlation between labels and the noise-free latent score.
    pub fn r_star(&self) -> f64 {
        (1.0 - (self.noise_sd / SCORE_SD).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub config: SynthConfig,
    pub r_star: f64,
    /// Weights and bias mapping an expected post vector to the latent score.
    pub true_weights: Vec<f64>,
    pub true_bias: f64,
    /// Noise-free score per user, training and institution users alike.
    pub user_latent: BTreeMap<String, f64>,
    pub institution_latent: BTreeMap<String, f64>,
    /// Topic of every content word.
    pub word_topics: BTreeMap<String, usize>,
    /// Content words that occur in no post.
    pub heldout_words: Vec<String>,
    pub function_words: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub table: EmbeddingTable,
    /// Expected frequency in a large background corpus, table order.
    pub freq: Vec<(String, u64)>,
    pub stopwords: Vec<String>,
    pub posts: Vec<RawPost>,
    pub labels: Vec<(String, f64)>,
    pub institution_posts: Vec<RawPost>,
    /// Same institution users, independently sampled posts.
    pub institution_posts_b: Vec<RawPost>,
    pub institution_labels: Vec<(String, f64)>,
    pub mapping: Vec<(String, String)>,
    /// Mean observed label of each institution's members.
    pub reference: Vec<(String, f64)>,
    pub truth: SynthTruth,
}

/// Names from a 75-syllable alphabet in bijective numeration, so every
/// index maps to a distinct purely alphabetic word.
pub fn word_name(index: usize) -> String {
    const CONSONANTS: &[u8] = b"bdfgklmnprstvxz";
    const VOWELS: &[u8] = b"aeiou";
    let base = CONSONANTS.len() * VOWELS.len();
    let mut n = index + 1;
    let mut syllables = Vec::new();
    while n > 0 {
        let digit = (n - 1) % base;
        syllables.push([
            CONSONANTS[digit / VOWELS.len()],
            VOWELS[digit % VOWELS.len()],
        ]);
        n = (n - 1) / base;
    }
    syllables
        .iter()
        .rev()
        .flat_map(|s| s.iter().map(|&b| b as char))
        .collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn dirichlet(rng: &mut ChaCha8Rng, alpha: &[f64]) -> Vec<f64> {
    let mut g: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
        .collect();
    let total: f64 = g.iter().sum();
    if total > 0.0 {
        g.iter_mut().for_each(|v| *v /= total);
    } else {
        // All draws underflowed; fall back to the largest-shape component.
        let best = (0..alpha.len())
            .max_by(|&a, &b| alpha[a].total_cmp(&alpha[b]))
            .unwrap();
        g.iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = (i == best) as u8 as f64);
    }
    g
}

/// Everything shared by all users: vocabulary, vectors and word laws.
struct World {
    k: usize,
    names: Vec<String>,
    vectors: Vec<f64>,
    n_function: usize,
    /// Per topic: active word rows and their Zipf sampler.
    topic_words: Vec<(Vec<usize>, WeightedIndex<f64>)>,
    function_law: Option<WeightedIndex<f64>>,
    heldout: Vec<usize>,
    /// wᵀc_k per topic.
    topic_value: Vec<f64>,
    mean_value: f64,
    value_sd: f64,
    weights: Vec<f64>,
    function_mean_value: f64,
    background: Vec<f64>,
}

/// Weights under which the topic centers project to evenly spaced values
/// (rms `scale`), so no single topic dominates the latent score's tails.
/// Falls back to a random direction when the centers are not independent.
fn planted_weights(centers: &[Vec<f64>], scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (k, d) = (centers.len(), centers[0].len());
    let mid = (k as f64 - 1.0) / 2.0;
    let spread: f64 = (0..k).map(|t| (t as f64 - mid).powi(2)).sum();
    let step = scale * (k as f64 / spread).sqrt();
    let targets: Vec<f64> = (0..k).map(|t| step * (t as f64 - mid)).collect();
    if k <= d {
        let mut gram = vec![0.0; k * k];
        for a in 0..k {
            for b in 0..k {
                gram[a * k + b] = crate::linalg::dot(&centers[a], &centers[b]);
            }
        }
        if let Ok(chol) = crate::linalg::Cholesky::factor(&gram, k) {
            let u = chol.solve(&targets);
            return (0..d)
                .map(|j| (0..k).map(|t| u[t] * centers[t][j]).sum())
                .collect();
        }
    }
    (0..d).map(|_| normal(rng) / (d as f64).sqrt()).collect()
}

fn zipf_weights(n: usize, s: f64) -> Vec<f64> {
    (1..=n).map(|r| (r as f64).powf(-s)).collect()
}

impl World {
    fn build(cfg: &SynthConfig) -> World {
        let mut rng = rng_for(cfg.seed, &[WORLD]);
        let (d, k) = (cfg.dim, cfg.n_topics);
        let n_function = cfg.n_function_words;
        let n_content = cfg.vocab_size - n_function;

        let centers: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                (0..d)
                    .map(|_| cfg.center_scale * normal(&mut rng))
                    .collect()
            })
            .collect();
        let weights = planted_weights(&centers, cfg.center_scale, &mut rng);
        let names: Vec<String> = (0..cfg.vocab_size).map(word_name).collect();
        let mut vectors = Vec::with_capacity(cfg.vocab_size * d);
        for _ in 0..n_function {
            vectors.extend((0..d).map(|_| cfg.center_scale * normal(&mut rng)));
        }
        for j in 0..n_content {
            let c = &centers[j % k];
            vectors.extend((0..d).map(|i| c[i] + cfg.word_sd * normal(&mut rng)));
        }

        let mut topic_words = Vec::with_capacity(k);
        let mut heldout = Vec::new();
        let mut background = vec![0.0; cfg.vocab_size];
        for t in 0..k {
            let mut rows: Vec<usize> = (t..n_content).step_by(k).map(|j| n_function + j).collect();
            rows.shuffle(&mut rng);
            let n_hold = ((rows.len() as f64) * cfg.holdout_fraction).round() as usize;
            let n_hold = n_hold.min(rows.len() - 1);
            let active = rows.split_off(n_hold);
            heldout.extend(rows);
            let w = zipf_weights(active.len(), cfg.zipf_exponent);
            let total: f64 = w.iter().sum();
            for (&row, p) in active.iter().zip(&w) {
                background[row] = (1.0 - cfg.function_rate) * p / total / k as f64;
            }
            topic_words.push((active, WeightedIndex::new(w).expect("non-empty topic")));
        }
        heldout.sort_unstable();
        // Held-out words are rare in the background corpus, not absent.
        let floor = background
            .iter()
            .copied()
            .filter(|&p| p > 0.0)
            .fold(f64::MAX, f64::min);
        for &row in &heldout {
            background[row] = floor;
        }
        let function_law = (n_function > 0).then(|| {
            let w = zipf_weights(n_function, cfg.zipf_exponent);
            let total: f64 = w.iter().sum();
            for (row, p) in w.iter().enumerate() {
                background[row] = cfg.function_rate * p / total;
            }
            WeightedIndex::new(w).expect("function words")
        });

        let topic_value: Vec<f64> = centers
            .iter()
            .map(|c| crate::linalg::dot(&weights, c))
            .collect();
        let mean_value = topic_value.iter().sum::<f64>() / k as f64;
        let spread: f64 = topic_value.iter().map(|a| (a - mean_value).powi(2)).sum();
        // Var(Σ a_k θ_k) for θ ~ Dirichlet(α, ..., α).
        let value_sd = (spread / (k as f64 * (k as f64 * cfg.dirichlet_alpha + 1.0))).sqrt();

        let function_mean_value = function_law.as_ref().map_or(0.0, |_| {
            let w = zipf_weights(n_function, cfg.zipf_exponent);
            let total: f64 = w.iter().sum();
            (0..n_function)
                .map(|row| {
                    w[row] / total * crate::linalg::dot(&weights, &vectors[row * d..(row + 1) * d])
                })
                .sum()
        });

        World {
            k,
            names,
            vectors,
            n_function,
            topic_words,
            function_law,
            heldout,
            topic_value,
            mean_value,
            value_sd,
            weights,
            function_mean_value,
            background,
        }
    }

    fn standardized(&self, theta: &[f64]) -> f64 {
        let s: f64 = theta
            .iter()
            .zip(&self.topic_value)
            .map(|(t, a)| t * a)
            .sum();
        if self.value_sd > 0.0 {
            (s - self.mean_value) / self.value_sd
        } else {
            0.0
        }
    }

    fn post_text(
        &self,
        cfg: &SynthConfig,
        theta_law: &WeightedIndex<f64>,
        rng: &mut ChaCha8Rng,
    ) -> String {
        let mut text = String::new();
        for i in 0..cfg.tokens_per_post {
            let row = match &self.function_law {
                Some(law) if rng.random::<f64>() < cfg.function_rate => law.sample(rng),
                _ => {
                    let (rows, law) = &self.topic_words[theta_law.sample(rng)];
                    rows[law.sample(rng)]
                }
            };
            if i > 0 {
                text.push(' ');
            }
            let word = &self.names[row];
            if cfg.decorate && rng.random::<f64>() < 0.05 {
                let mut chars = word.chars();
                let first = chars.next().unwrap();
                text.extend(first.to_uppercase());
                text.push_str(chars.as_str());
            } else {
                text.push_str(word);
            }
        }
        if cfg.decorate && rng.random::<f64>() < 0.1 {
            text.push('!');
        }
        text
    }
}

struct User {
    latent: f64,
    label: f64,
    theta_law: WeightedIndex<f64>,
}

fn draw_user(world: &World, cfg: &SynthConfig, alpha: &[f64], rng: &mut ChaCha8Rng) -> User {
    let theta = dirichlet(rng, alpha);
    let z = world.standardized(&theta);
    let signal_sd = (SCORE_SD * SCORE_SD - cfg.noise_sd * cfg.noise_sd).sqrt();
    let latent = SCORE_MEAN + signal_sd * z;
    let label = latent + cfg.noise_sd * normal(rng);
    // A mixture with zero mass everywhere cannot happen after normalization,
    // but tiny alphas can leave exact zeros, which WeightedIndex accepts.
    let theta_law = WeightedIndex::new(&theta).expect("mixture has positive mass");
    User {
        latent,
        label,
        theta_law,
    }
}

fn posts_for(
    world: &World,
    cfg: &SynthConfig,
    user_id: &str,
    user: &User,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<RawPost>,
) {
    for p in 0..cfg.posts_per_user {
        let text = world.post_text(cfg, &user.theta_law, rng);
        out.push(RawPost::new(user_id, format!("{user_id}-{p}"), text));
    }
}

pub fn train_user_id(u: usize) -> String {
    format!("u{u:05}")
}

pub fn institution_id(i: usize) -> String {
    format!("inst{i:03}")
}

pub fn institution_user_id(i: usize, m: usize) -> String {
    format!("inst{i:03}-u{m:03}")
}

/// Builds the whole dataset in memory. Deterministic in the config.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let world = World::build(cfg);
    let d = cfg.dim;
    let alpha = vec![cfg.dirichlet_alpha; world.k];

    let mut truth = SynthTruth {
        config: cfg.clone(),
        r_star: cfg.r_star(),
        true_weights: Vec::new(),
        true_bias: 0.0,
        user_latent: BTreeMap::new(),
        institution_latent: BTreeMap::new(),
        word_topics: BTreeMap::new(),
        heldout_words: world
            .heldout
            .iter()
            .map(|&r| world.names[r].clone())
            .collect(),
        function_words: world.names[..world.n_function].to_vec(),
    };
    truth.heldout_words.sort();
    for j in 0..cfg.vocab_size - world.n_function {
        truth
            .word_topics
            .insert(world.names[world.n_function + j].clone(), j % world.k);
    }
    // Expected post vector x = (1-f)·Σθc + f·μ_F, so the latent score is
    // affine in x with these coefficients.
    let signal_sd = (SCORE_SD * SCORE_SD - cfg.noise_sd * cfg.noise_sd).sqrt();
    let slope = if world.value_sd > 0.0 {
        signal_sd / (world.value_sd * (1.0 - cfg.function_rate))
    } else {
        0.0
    };
    truth.true_weights = world.weights.iter().map(|w| w * slope).collect();
    truth.true_bias = SCORE_MEAN
        - slope
            * (cfg.function_rate * world.function_mean_value
                + (1.0 - cfg.function_rate) * world.mean_value);

    let mut posts = Vec::with_capacity(cfg.n_users * cfg.posts_per_user);
    let mut labels = Vec::with_capacity(cfg.n_users);
    for u in 0..cfg.n_users {
        let mut rng = rng_for(cfg.seed, &[TRAIN_USER, u as u64]);
        let user = draw_user(&world, cfg, &alpha, &mut rng);
        let id = train_user_id(u);
        posts_for(&world, cfg, &id, &user, &mut rng, &mut posts);
        truth.user_latent.insert(id.clone(), user.latent);
        labels.push((id, user.label));
    }

    let mut institution_posts = Vec::new();
    let mut institution_posts_b = Vec::new();
    let mut institution_labels = Vec::new();
    let mut mapping = Vec::new();
    let mut reference = Vec::new();
    for i in 0..cfg.institution_count {
        let mut rng = rng_for(cfg.seed, &[INST_CENTER, i as u64]);
        let center = dirichlet(&mut rng, &alpha);
        let member_alpha: Vec<f64> = center
            .iter()
            .map(|c| (cfg.institution_concentration * c).max(1e-3))
            .collect();
        let inst = institution_id(i);
        let (mut label_sum, mut latent_sum) = (0.0, 0.0);
        for m in 0..cfg.users_per_institution {
            let mut rng = rng_for(cfg.seed, &[INST_USER, i as u64, m as u64]);
            let user = draw_user(&world, cfg, &member_alpha, &mut rng);
            let id = institution_user_id(i, m);
            posts_for(&world, cfg, &id, &user, &mut rng, &mut institution_posts);
            let mut rng_b = rng_for(cfg.seed, &[INST_USER_B, i as u64, m as u64]);
            posts_for(
                &world,
                cfg,
                &id,
                &user,
                &mut rng_b,
                &mut institution_posts_b,
            );
            label_sum += user.label;
            latent_sum += user.latent;
            truth.user_latent.insert(id.clone(), user.latent);
            institution_labels.push((id.clone(), user.label));
            mapping.push((id, inst.clone()));
        }
        if cfg.users_per_institution > 0 {
            let n = cfg.users_per_institution as f64;
            reference.push((inst.clone(), label_sum / n));
            truth.institution_latent.insert(inst, latent_sum / n);
        }
    }

    let table = EmbeddingTable::from_rows(
        d,
        world.names.iter().enumerate().map(|(r, w)| {
            (
                w.as_str(),
                world.vectors[r * d..(r + 1) * d]
                    .iter()
                    .map(|&v| v as f32)
                    .collect::<Vec<f32>>(),
            )
        }),
    )?;
    let freq = world
        .names
        .iter()
        .zip(&world.background)
        .map(|(w, p)| (w.clone(), (p * 1e8).round() as u64 + 1))
        .collect();

    Ok(SynthData {
        table,
        freq,
        stopwords: truth.function_words.clone(),
        posts,
        labels,
        institution_posts,
        institution_posts_b,
        institution_labels,
        mapping,
        reference,
        truth,
    })
}

#[derive(Serialize)]
struct FreqRecord<'a> {
    word: &'a str,
    count: u64,
}

impl SynthData {
    /// Writes every artifact into `dir` (created if missing). Returns the
    /// file names written, in a fixed order.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<&'static str>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.table.save_vec(dir.join("embeddings.vec"))?;
        write_csv(
            &dir.join("freq.csv"),
            self.freq
                .iter()
                .map(|(w, c)| FreqRecord { word: w, count: *c }),
        )?;
        let mut stop = String::new();
        for w in &self.stopwords {
            let _ = writeln!(stop, "{w}");
        }
        let stop_path = dir.join("stopwords.txt");
        std::fs::write(&stop_path, stop).map_err(|e| Error::io(&stop_path, e))?;
        write_posts_jsonl(create(&dir.join("posts.jsonl"))?, &self.posts)?;
        write_posts_jsonl(
            create(&dir.join("institution_posts.jsonl"))?,
            &self.institution_posts,
        )?;
        write_posts_jsonl(
            create(&dir.join("institution_posts_b.jsonl"))?,
            &self.institution_posts_b,
        )?;
        let labels = |rows: &[(String, f64)]| {
            rows.iter()
                .map(|(u, s)| LabelRecord {
                    user_id: u.clone(),
                    score: *s,
                })
                .collect::<Vec<_>>()
        };
        write_csv(&dir.join("labels.csv"), labels(&self.labels))?;
        write_csv(
            &dir.join("institution_labels.csv"),
            labels(&self.institution_labels),
        )?;
        write_csv(
            &dir.join("mapping.csv"),
            self.mapping.iter().map(|(u, i)| MappingRecord {
                user_id: u.clone(),
                institution_id: i.clone(),
            }),
        )?;
        write_csv(
            &dir.join("reference.csv"),
            self.reference.iter().map(|(i, s)| ReferenceRecord {
                institution_id: i.clone(),
                score: *s,
            }),
        )?;
        let truth_path = dir.join("truth.json");
        let mut truth = serde_json::to_string_pretty(&self.truth)?;
        truth.push('\n');
        std::fs::write(&truth_path, truth).map_err(|e| Error::io(&truth_path, e))?;
        Ok(vec![
            "embeddings.vec",
            "freq.csv",
            "stopwords.txt",
            "posts.jsonl",
            "institution_posts.jsonl",
            "institution_posts_b.jsonl",
            "labels.csv",
            "institution_labels.csv",
            "mapping.csv",
            "reference.csv",
            "truth.json",
        ])
    }
}
