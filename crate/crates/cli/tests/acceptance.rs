//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs as a plain binary (`harness = false`).

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use postscore::dataset::{assemble_training_set, predict_corpus, Corpus, Vectorizer};
use postscore::model::{loo_user_cv_with, LooStrategy, TrainingSet};
use postscore::synth::{generate, SynthConfig, SynthData};
use postscore::transfer::{aggregate, attach_reference, compare, InstitutionMapping};
use postscore::wordrank::{rank_all, score_word, PostScorer};
use postscore::{
    fit, load_vec, loo_user_cv, pearson, post_vector, posts_curve, CurveConfig, EmbeddingTable,
    LinearModel, TfidfVocabulary,
};

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = fn() -> Outcome;

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.get(1).map(String::as_str) == Some(RANKING_CHILD) {
        ranking_export_child(Path::new(&args[2]));
        return;
    }
    let criteria: [(&str, Check); 11] = [
        ("1 linearity identity", linearity),
        ("2 LOOCV oracle equivalence", loo_oracle),
        ("3 fit oracle vs gradient descent", fit_oracle),
        ("4 signal recovery", signal_recovery),
        ("5 posts-per-user curve shape", curve_shape),
        ("6 embedding beats TF-IDF", embedding_vs_tfidf),
        ("7 aggregation gain", aggregation_gain),
        ("8 unseen-word generalization", unseen_words),
        ("9 statistics unit suite", statistics_suite),
        ("10 performance gate", performance),
        ("11 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "{} criterion {name}: {} [{:.1}s]",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- helpers

fn synth(seed: u64) -> SynthData {
    generate(&SynthConfig {
        seed,
        ..SynthConfig::default()
    })
    .expect("synth generation")
}

fn labels_of(data: &SynthData) -> BTreeMap<String, f64> {
    data.labels.iter().cloned().collect()
}

fn embedding_set(data: &SynthData) -> (Corpus, TrainingSet) {
    let corpus = Corpus::from_posts(&data.posts);
    let (ts, _) = assemble_training_set(
        &corpus,
        &labels_of(data),
        Vectorizer::Embedding(&data.table),
    )
    .expect("assemble");
    (corpus, ts)
}

fn loo_r(ts: &TrainingSet, labels: &BTreeMap<String, f64>, lambda: f64) -> f64 {
    let preds = loo_user_cv(ts, lambda).expect("loocv");
    let p: Vec<f64> = preds.iter().map(|u| u.predicted).collect();
    let y: Vec<f64> = preds.iter().map(|u| labels[&u.user_id]).collect();
    pearson(&p, &y).expect("pearson").r
}

fn random_set(rng: &mut ChaCha8Rng, users: usize, per_user: usize, d: usize) -> TrainingSet {
    let w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let mut ts = TrainingSet::new(d);
    for u in 0..users {
        let user = format!("u{u}");
        let offset: f64 = rng.sample(StandardNormal);
        for _ in 0..per_user {
            let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let noise: f64 = rng.sample(StandardNormal);
            let y = 3.0 + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + offset + noise;
            ts.push(&user, &x, y).unwrap();
        }
    }
    ts
}

fn frac(hits: usize, total: usize) -> f64 {
    hits as f64 / total as f64
}

// ---------------------------------------------------------------- 1

fn linearity() -> Outcome {
    let start = Instant::now();
    let data = synth(0);
    let (corpus, ts) = embedding_set(&data);
    let model = fit(&ts, 0.0).unwrap();
    let mut word_scores: HashMap<&str, f64> = HashMap::new();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for post in corpus.posts().take(1000) {
        let pv = post_vector(&data.table, post);
        let Some(v) = pv.vector else { continue };
        let direct = model.predict_post(&v).unwrap();
        let mut sum = 0.0;
        let mut n = 0;
        for tok in &post.tokens {
            if let Some(s) = word_scores.get(tok.as_str()) {
                sum += s;
                n += 1;
            } else if let Some(s) = score_word(&model, &data.table, tok).unwrap() {
                word_scores.insert(tok, s);
                sum += s;
                n += 1;
            }
        }
        worst = worst.max((direct - sum / n as f64).abs());
        checked += 1;
    }
    let elapsed = start.elapsed();
    outcome(
        checked == 1000 && worst < 1e-9 && elapsed < Duration::from_secs(5),
        format!(
            "{checked} posts, max |Δ| = {worst:.2e} (< 1e-9), {:.2}s (< 5s)",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 2

fn loo_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ts = random_set(&mut rng, 50, 10, 16);
    let mut worst = 0.0f64;
    for lambda in [0.0, 0.5] {
        let naive: Vec<f64> = (0..ts.n_groups())
            .map(|g| {
                let model = fit(&ts.without_group(g), lambda).unwrap();
                let rows = ts.group_rows(g);
                rows.iter()
                    .map(|&i| model.predict_post(ts.row(i)).unwrap())
                    .sum::<f64>()
                    / rows.len() as f64
            })
            .collect();
        for strategy in [LooStrategy::Auto, LooStrategy::Direct, LooStrategy::LowRank] {
            let fast = loo_user_cv_with(&ts, lambda, strategy).unwrap();
            for (p, q) in fast.iter().zip(&naive) {
                worst = worst.max((p.predicted - q).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-8 && elapsed < Duration::from_secs(30),
        format!(
            "50 users x 10 posts x 16 dims, all strategies, λ ∈ {{0, 0.5}}: max |Δ| = {worst:.2e} (< 1e-8), {:.2}s (< 30s)",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 3

/// Plain full-batch gradient descent on mean squared error over (w, b),
/// step 1/L with L bounded by the trace of the augmented Gram matrix.
fn gradient_descent(ts: &TrainingSet) -> (Vec<f64>, f64) {
    let (n, d) = (ts.n_rows(), ts.dim());
    let mut trace = 1.0;
    for i in 0..n {
        trace += ts.row(i).iter().map(|v| v * v).sum::<f64>() / n as f64;
    }
    let step = 1.0 / trace;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut grad = vec![0.0; d + 1];
    for _ in 0..2_000_000 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let x = ts.row(i);
            let r = x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b - ts.target(i);
            for j in 0..d {
                grad[j] += r * x[j];
            }
            grad[d] += r;
        }
        let mut norm = 0.0;
        for j in 0..d {
            w[j] -= step * grad[j] / n as f64;
            norm += (grad[j] / n as f64).powi(2);
        }
        b -= step * grad[d] / n as f64;
        norm += (grad[d] / n as f64).powi(2);
        if norm.sqrt() < 1e-13 {
            break;
        }
    }
    (w, b)
}

fn fit_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let ts = random_set(&mut rng, 200, 1, 10);
        let model: LinearModel = fit(&ts, 0.0).unwrap();
        let (w, b) = gradient_descent(&ts);
        for (p, q) in model.weights.iter().zip(&w) {
            worst = worst.max((p - q).abs());
        }
        worst = worst.max((model.bias - b).abs());
    }
    outcome(
        worst < 1e-6,
        format!("5 instances n=200 d=10: max coefficient |Δ| = {worst:.2e} (< 1e-6)"),
    )
}

// ---------------------------------------------------------------- 4

fn signal_recovery() -> Outcome {
    let start = Instant::now();
    let r_star = SynthConfig::default().r_star();
    let mut rs = Vec::new();
    for seed in 0..10 {
        let data = synth(seed);
        let (_, ts) = embedding_set(&data);
        rs.push(loo_r(&ts, &labels_of(&data), 0.0));
    }
    let elapsed = start.elapsed();
    let ok = rs.iter().all(|r| (r - r_star).abs() <= 0.1);
    let list: Vec<String> = rs.iter().map(|r| format!("{r:.3}")).collect();
    outcome(
        ok && elapsed < Duration::from_secs(120),
        format!(
            "r* = {r_star:.3}, LOOCV r over seeds 0..9 = [{}], all within ±0.1; {:.1}s (< 120s)",
            list.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 5

fn curve_shape() -> Outcome {
    let runs = 20;
    let mut increasing = 0;
    let mut every_step = 0;
    let mut ci_ok = true;
    let mut by_n: Vec<Vec<f64>> = vec![Vec::new(); 20];
    for seed in 0..runs {
        let data = synth(seed);
        let (_, ts) = embedding_set(&data);
        let points = posts_curve(
            &ts,
            &CurveConfig {
                seed,
                ..CurveConfig::default()
            },
        )
        .unwrap();
        let first = points.first().unwrap();
        let last = points.last().unwrap();
        if first.n == 1 && last.n == 20 && last.boot_median > first.boot_median {
            increasing += 1;
        }
        if points
            .windows(2)
            .all(|w| w[1].boot_median > w[0].boot_median)
        {
            every_step += 1;
        }
        ci_ok &= points.iter().all(|p| p.ci_low <= p.r && p.r <= p.ci_high);
        for p in &points {
            by_n[p.n - 1].push(p.r);
        }
    }
    let medians: Vec<f64> = by_n
        .iter_mut()
        .map(|rs| {
            rs.sort_by(f64::total_cmp);
            postscore::stats::quantile_sorted(rs, 0.5)
        })
        .collect();
    let pooled_steps = medians.windows(2).filter(|w| w[1] > w[0]).count();
    let share = frac(increasing, runs as usize);
    outcome(
        share >= 0.95 && ci_ok,
        format!(
            "median r(N=20) > r(N=1) in {increasing}/{runs} runs (≥ 95%); every CI contains its point estimate: {ci_ok}; strictly increasing at every step in {every_step}/{runs}, median-over-runs r(N) rises at {pooled_steps}/19 steps from {:.3} to {:.3} (reported only)",
            medians[0],
            medians[19]
        ),
    )
}

// ---------------------------------------------------------------- 6

fn embedding_vs_tfidf() -> Outcome {
    let runs = 20;
    let lambda = 1.0;
    let mut wins = 0;
    let mut gaps = Vec::new();
    for seed in 0..runs {
        let data = synth(seed);
        let labels = labels_of(&data);
        let (corpus, ts) = embedding_set(&data);
        let r_emb = loo_r(&ts, &labels, lambda);
        let stop = data.stopwords.iter().cloned().collect();
        let docs: Vec<Vec<&str>> = corpus
            .posts()
            .map(|p| p.tokens.iter().map(String::as_str).collect())
            .collect();
        let vocab = TfidfVocabulary::build(&docs, &stop, 1000).unwrap();
        let (ts_tfidf, _) =
            assemble_training_set(&corpus, &labels, Vectorizer::Tfidf(&vocab)).unwrap();
        let r_tfidf = loo_r(&ts_tfidf, &labels, lambda);
        if r_emb > r_tfidf {
            wins += 1;
        }
        gaps.push(r_emb - r_tfidf);
    }
    let min_gap = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
    outcome(
        frac(wins, runs as usize) >= 0.95,
        format!(
            "embedding r > TF-IDF r in {wins}/{runs} seeds (≥ 95%), smallest gap {min_gap:+.3}"
        ),
    )
}

// ---------------------------------------------------------------- 7

fn aggregation_gain() -> Outcome {
    let runs = 20;
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..runs {
        let data = synth(seed);
        let (_, ts) = embedding_set(&data);
        let model = fit(&ts, 0.0).unwrap();
        let corpus = Corpus::from_posts(&data.institution_posts);
        let preds = predict_corpus(&model, &corpus, Vectorizer::Embedding(&data.table)).unwrap();
        let truth: BTreeMap<&str, f64> = data
            .institution_labels
            .iter()
            .map(|(u, s)| (u.as_str(), *s))
            .collect();
        let p: Vec<f64> = preds.iter().map(|u| u.predicted).collect();
        let y: Vec<f64> = preds.iter().map(|u| truth[u.user_id.as_str()]).collect();
        let user_r = pearson(&p, &y).unwrap().r;
        let mapping = InstitutionMapping::from_pairs(data.mapping.iter().cloned());
        let reference: BTreeMap<String, f64> = data.reference.iter().cloned().collect();
        let (mut scores, _) = aggregate(&preds, &mapping, 5, None).unwrap();
        attach_reference(&mut scores, &reference);
        let inst_r = compare(&scores, &reference).unwrap().pearson.r;
        if inst_r > user_r {
            wins += 1;
        }
        pairs.push(inst_r - user_r);
    }
    let min_gain = pairs.iter().cloned().fold(f64::INFINITY, f64::min);
    outcome(
        frac(wins, runs as usize) >= 0.95,
        format!(
            "institution r > user r in {wins}/{runs} seeds (≥ 95%), 20 institutions x 25 users, smallest gain {min_gain:+.3}"
        ),
    )
}

// ---------------------------------------------------------------- 8

fn unseen_words() -> Outcome {
    let mut rs = Vec::new();
    for seed in 0..10 {
        let data = synth(seed);
        let (corpus, ts) = embedding_set(&data);
        let model = fit(&ts, 0.0).unwrap();
        let seen = corpus.token_counts();
        let truth = &data.truth;
        let mut topic_sum = vec![0.0; truth.config.n_topics];
        let mut topic_n = vec![0usize; truth.config.n_topics];
        for (word, &topic) in &truth.word_topics {
            if seen.contains_key(word) {
                topic_sum[topic] += score_word(&model, &data.table, word).unwrap().unwrap();
                topic_n[topic] += 1;
            }
        }
        let mut held = Vec::new();
        let mut cluster = Vec::new();
        for word in &truth.heldout_words {
            assert!(
                !seen.contains_key(word),
                "held-out word {word} occurs in posts"
            );
            let topic = truth.word_topics[word];
            held.push(score_word(&model, &data.table, word).unwrap().unwrap());
            cluster.push(topic_sum[topic] / topic_n[topic] as f64);
        }
        rs.push(pearson(&held, &cluster).unwrap().r);
    }
    let min = rs.iter().cloned().fold(f64::INFINITY, f64::min);
    outcome(
        min > 0.5,
        format!("held-out word score vs cluster training-word mean: min r over seeds 0..9 = {min:.3} (> 0.5)"),
    )
}

// ---------------------------------------------------------------- 9

fn statistics_suite() -> Outcome {
    let mut failures: Vec<String> = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };

    // pearson
    let r = pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
    check(
        r.r == 1.0 && r.p_two_sided < 1e-12,
        "pearson perfect positive",
    );
    let r = pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
    check(r.r == -1.0, "pearson perfect negative");
    check(
        pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err(),
        "pearson constant series errors",
    );
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let n = rng.random_range(3..60);
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let base = pearson(&x, &y).unwrap();
        check(pearson(&x, &x).unwrap().r == 1.0, "pearson(x, x) == 1");
        check(base.r.abs() <= 1.0, "|r| <= 1");
        check(base.r_squared == base.r * base.r, "r_squared == r^2");
        check((0.0..=1.0).contains(&base.p_two_sided), "0 <= p <= 1");
        let a: f64 = rng.random_range(-10.0..10.0);
        let b: f64 = rng.random_range(-10.0..10.0);
        if a.abs() > 1e-3 {
            let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let scaled = pearson(&ax, &y).unwrap().r;
            check(
                (scaled - a.signum() * base.r).abs() <= 1e-12,
                "scale/shift invariance",
            );
        }
    }
    let p = |r: f64, n: usize| postscore::stats::correlation_p_value(r, n);
    check(
        p(0.3, 50) < p(0.2, 50) && p(0.2, 50) < p(0.1, 50),
        "p decreasing in |r|",
    );
    check(
        p(0.2, 200) < p(0.2, 100) && p(0.2, 100) < p(0.2, 50),
        "p decreasing in n",
    );
    let p_large_n = p(0.20, 2468);
    check(
        (0.0..1e-15).contains(&p_large_n),
        "p(r=0.20, n=2468) < 1e-15",
    );

    // entropy
    let entropy = |counts: &[usize]| postscore::textproc::shannon_entropy(counts.iter().copied());
    check(entropy(&[3]).unwrap() == 0.0, "entropy {a:3} = 0");
    check(entropy(&[1, 1]).unwrap() == 1.0, "entropy {a:1,b:1} = 1");
    check(
        entropy(&[1, 1, 1, 1]).unwrap() == 2.0,
        "entropy uniform over 4 = 2",
    );
    check(
        (entropy(&[2, 1, 1]).unwrap() - 1.5).abs() < 1e-12,
        "entropy {2,1,1} = 1.5",
    );
    check(entropy(&[]).is_err(), "entropy of empty multiset errors");
    for k in 1..=64u64 {
        let counts = vec![5; k as usize];
        check(
            (entropy(&counts).unwrap() - (k as f64).log2()).abs() <= 1e-12,
            "entropy uniform over k == log2 k",
        );
    }

    // TF-IDF
    let no_stop = Default::default();
    let corpus = vec![vec!["a", "b"], vec!["a", "c"], vec!["a"]];
    let vocab = TfidfVocabulary::build(&corpus, &no_stop, 2).unwrap();
    check(vocab.terms() == ["a", "b"], "top-k terms {a, b}");
    check(vocab.idf("a") == Some(1.0), "idf(df = n_docs = 3) == 1");
    let stop = ["a".to_string()].into_iter().collect();
    let vocab_s = TfidfVocabulary::build(&corpus, &stop, 1000).unwrap();
    check(
        vocab_s
            .terms()
            .iter()
            .all(|t| t.split(' ').all(|w| w != "a")),
        "stopword excluded from unigrams and bigrams",
    );
    let single = TfidfVocabulary::build(&[vec!["a"]], &no_stop, 1).unwrap();
    check(
        single.transform_dense(&["a", "a"]) == [1.0],
        "[a, a] -> (1.0)",
    );
    check(
        vocab.transform_dense(&["zzz"]).iter().all(|v| *v == 0.0),
        "OOV post -> zero vector",
    );
    let big: Vec<Vec<String>> = (0..300)
        .map(|_| {
            (0..rng.random_range(1..12))
                .map(|_| format!("w{}", rng.random_range(0..40)))
                .collect()
        })
        .collect();
    let vocab_b = TfidfVocabulary::build(&big, &no_stop, 100).unwrap();
    for doc in &big {
        let v = vocab_b.transform_dense(doc);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        check(
            norm == 0.0 || (norm - 1.0).abs() <= 1e-9,
            "nonzero vectors have unit norm",
        );
    }
    let mut with_oov = big.clone();
    with_oov.push(vec!["never-seen".to_string()]);
    let vocab_o = TfidfVocabulary::build(&with_oov, &no_stop, 100).unwrap();
    check(
        vocab_o.terms() == vocab_b.terms(),
        "OOV post leaves terms unchanged",
    );
    let again = TfidfVocabulary::build(&big, &no_stop, 100).unwrap();
    check(again.terms() == vocab_b.terms(), "build is deterministic");

    failures.sort();
    failures.dedup();
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("pearson, entropy and TF-IDF identities hold; p(r=0.20, n=2468) = {p_large_n:.2e} (< 1e-15)")
        } else {
            format!("failed: {}", failures.join("; "))
        },
    )
}

// ---------------------------------------------------------------- 10

fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

/// Resets VmHWM to the current RSS (Linux 4.0+); harmless elsewhere.
fn reset_peak_rss() {
    let _ = std::fs::write("/proc/self/clear_refs", "5");
}

fn random_table(rng: &mut ChaCha8Rng, words: usize, dim: usize) -> EmbeddingTable {
    EmbeddingTable::from_rows(
        dim,
        (0..words).map(|i| {
            let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            (format!("w{i}"), v)
        }),
    )
    .unwrap()
}

fn performance() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);

    // Loading.
    let table = random_table(&mut rng, 100_000, 300);
    let path = dir.path().join("big.vec");
    table.save_vec(&path).unwrap();
    let start = Instant::now();
    let loaded = load_vec(&path).unwrap();
    let load_s = start.elapsed().as_secs_f64();
    let load_ok = loaded.len() == 100_000 && load_s < 5.0;
    std::fs::remove_file(&path).unwrap();

    // Scoring, single-threaded, already-tokenized posts.
    let model = random_model(&mut rng, 300);
    let posts: Vec<postscore::TokenizedPost> = (0..100_000)
        .map(|i| {
            let tokens = (0..20)
                .map(|_| format!("w{}", rng.random_range(0..120_000)))
                .collect();
            postscore::TokenizedPost {
                user_id: "u".into(),
                post_id: i.to_string(),
                tokens,
                n_capitalized: 0,
                n_emoji: 0,
                n_exclaim: 0,
                n_latin_chars: 0,
                n_alpha_chars: 0,
                char_len: 0,
            }
        })
        .collect();
    let start = Instant::now();
    let scorer = PostScorer::new(&model, &loaded).unwrap();
    let setup_s = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let mut acc = 0.0;
    for post in &posts {
        if let Some((s, _)) = scorer.score(&post.tokens) {
            acc += s;
        }
    }
    let score_s = start.elapsed().as_secs_f64();
    let rate = posts.len() as f64 / score_s;
    let score_ok = rate >= 100_000.0 && acc.is_finite();
    // The mean-vector route, for reference only.
    let start = Instant::now();
    let mut acc_vec = 0.0;
    for post in posts.iter().take(20_000) {
        if let Some(v) = post_vector(&loaded, post).vector {
            acc_vec += model.predict_post(&v).unwrap();
        }
    }
    let vec_rate = 20_000.0 / start.elapsed().as_secs_f64();
    assert!(acc_vec.is_finite());
    drop(posts);
    drop(loaded);
    drop(table);

    // Full-vocabulary ranking export, in a fresh process so that memory
    // freed by earlier work cannot hide growth.
    let out = dir.path().join("ranking.csv");
    let child = Command::new(std::env::current_exe().unwrap())
        .arg(RANKING_CHILD)
        .arg(&out)
        .output()
        .unwrap();
    let report = String::from_utf8_lossy(&child.stdout);
    let fields: Vec<f64> = report
        .split_whitespace()
        .filter_map(|f| f.parse().ok())
        .collect();
    let (rank_s, growth_mib) = match fields[..] {
        [s, g] => (s, (g >= 0.0).then_some(g)),
        _ => (f64::INFINITY, None),
    };
    let lines = std::fs::read_to_string(&out)
        .map(|t| t.lines().count())
        .unwrap_or(0);
    // The ranking holds a row index and a score per word (16 MB for 1M
    // words); anything proportional to the exported text would exceed this.
    let budget_mib = 64.0;
    let memory_ok = growth_mib.is_none_or(|g| g <= budget_mib);
    let rank_ok = child.status.success() && lines == 1_000_001 && rank_s < 60.0 && memory_ok;

    outcome(
        load_ok && score_ok && rank_ok,
        format!(
            "load 100k x 300: {load_s:.2}s (< 5s); scoring: {rate:.0} posts/s (≥ 100000) after {setup_s:.2}s word-score setup, mean-vector route {vec_rate:.0} posts/s (reported only); 1M-word ranking export: {rank_s:.2}s (< 60s), peak RSS growth {} (≤ {budget_mib} MiB)",
            growth_mib.map_or("n/a".to_string(), |g| format!("{g:.1} MiB"))
        ),
    )
}

const RANKING_CHILD: &str = "--ranking-export-child";

/// Child side of the ranking export: prints seconds and peak RSS growth in
/// MiB (-1 when unavailable).
fn ranking_export_child(out: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let dim = 32;
    let big = random_table(&mut rng, 1_000_000, dim);
    let model = random_model(&mut rng, dim);
    reset_peak_rss();
    let before = peak_rss_kib();
    let start = Instant::now();
    let ranking = rank_all(&model, &big, 0, None).unwrap();
    ranking
        .write_csv(std::io::BufWriter::new(std::fs::File::create(out).unwrap()))
        .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let growth = match (before, peak_rss_kib()) {
        (Some(b), Some(a)) => a.saturating_sub(b) as f64 / 1024.0,
        _ => -1.0,
    };
    println!("{secs} {growth}");
}

fn random_model(rng: &mut ChaCha8Rng, d: usize) -> LinearModel {
    LinearModel {
        weights: (0..d).map(|_| rng.sample(StandardNormal)).collect(),
        bias: 500.0,
        lambda: 0.0,
        d,
        training_meta: Default::default(),
    }
}

// ---------------------------------------------------------------- 11

fn run(cwd: &Path, args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_postscore"))
        .current_dir(cwd)
        .args(args)
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "postscore {args:?} failed: {}",
        String::from_utf8_lossy(&status.stderr)
    );
}

/// The full pipeline into `cwd`, with relative paths so manifests from
/// different directories can be compared byte for byte.
fn pipeline(cwd: &Path, threads: &str) {
    let t = ["--threads", threads];
    let small = [
        "--users",
        "120",
        "--institutions",
        "10",
        "--users-per-institution",
        "12",
    ];
    run(
        cwd,
        &[&["synth", "--out", "data", "--seed", "11"][..], &small, &t].concat(),
    );
    let emb = ["--posts", "data/posts.jsonl", "--labels", "data/labels.csv"];
    run(
        cwd,
        &[
            &[
                "train",
                "--out",
                "model",
                "--embeddings",
                "data/embeddings.vec",
            ][..],
            &emb,
            &t,
        ]
        .concat(),
    );
    run(
        cwd,
        &[
            &[
                "evaluate",
                "--out",
                "eval",
                "--embeddings",
                "data/embeddings.vec",
            ][..],
            &emb,
            &t,
        ]
        .concat(),
    );
    run(
        cwd,
        &[
            &["evaluate", "--out", "eval_tfidf", "--vectorizer", "tfidf"][..],
            &["--stopwords", "data/stopwords.txt", "--lambda", "1"],
            &emb,
            &t,
        ]
        .concat(),
    );
    run(
        cwd,
        &[
            &["predict", "--out", "pred", "--model", "model/model.json"][..],
            &[
                "--posts",
                "data/institution_posts.jsonl",
                "--embeddings",
                "data/embeddings.vec",
            ],
            &t,
        ]
        .concat(),
    );
    run(
        cwd,
        &[
            &[
                "aggregate",
                "--out",
                "agg",
                "--predictions",
                "pred/predictions.csv",
            ][..],
            &[
                "--mapping",
                "data/mapping.csv",
                "--reference",
                "data/reference.csv",
            ],
            &t,
        ]
        .concat(),
    );
    run(
        cwd,
        &[
            &[
                "rank-words",
                "--out",
                "words",
                "--model",
                "model/model.json",
            ][..],
            &[
                "--embeddings",
                "data/embeddings.vec",
                "--posts",
                "data/posts.jsonl",
            ],
            &["--min-count", "2"],
            &t,
        ]
        .concat(),
    );
    run(
        cwd,
        &[
            &[
                "curve",
                "--out",
                "curve",
                "--embeddings",
                "data/embeddings.vec",
            ][..],
            &emb,
            &["--bootstrap", "200", "--seed", "3"],
            &t,
        ]
        .concat(),
    );
}

fn files_under(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// Largest numeric difference between two CSV files with equal shape, or
/// `None` if they differ in shape or in a non-numeric field.
fn csv_max_diff(a: &str, b: &str) -> Option<f64> {
    let (la, lb): (Vec<&str>, Vec<&str>) = (a.lines().collect(), b.lines().collect());
    if la.len() != lb.len() {
        return None;
    }
    let mut worst = 0.0f64;
    for (x, y) in la.iter().zip(&lb) {
        let (fx, fy): (Vec<&str>, Vec<&str>) = (x.split(',').collect(), y.split(',').collect());
        if fx.len() != fy.len() {
            return None;
        }
        for (p, q) in fx.iter().zip(&fy) {
            match (p.parse::<f64>(), q.parse::<f64>()) {
                (Ok(u), Ok(v)) => worst = worst.max((u - v).abs()),
                _ if p == q => {}
                _ => return None,
            }
        }
    }
    Some(worst)
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let dirs: Vec<_> = ["a", "b", "t1", "t8"]
        .iter()
        .map(|d| {
            let p = root.path().join(d);
            std::fs::create_dir(&p).unwrap();
            p
        })
        .collect();
    pipeline(&dirs[0], "2");
    pipeline(&dirs[1], "2");
    pipeline(&dirs[2], "1");
    pipeline(&dirs[3], "8");

    let files = files_under(&dirs[0]);
    let mut differing = Vec::new();
    for f in &files {
        if std::fs::read(dirs[0].join(f)).ok() != std::fs::read(dirs[1].join(f)).ok() {
            differing.push(f.display().to_string());
        }
    }
    let same_set = files == files_under(&dirs[1]);

    let mut thread_diff = 0.0f64;
    let mut mismatched = Vec::new();
    for f in files
        .iter()
        .filter(|f| f.extension().is_some_and(|e| e == "csv"))
    {
        let a = std::fs::read_to_string(dirs[2].join(f)).unwrap_or_default();
        let b = std::fs::read_to_string(dirs[3].join(f)).unwrap_or_default();
        match csv_max_diff(&a, &b) {
            Some(d) => thread_diff = thread_diff.max(d),
            None => mismatched.push(f.display().to_string()),
        }
    }
    let ok = same_set && differing.is_empty() && mismatched.is_empty() && thread_diff <= 1e-9;
    outcome(
        ok,
        format!(
            "{} files from two identical runs: {} differ; --threads 1 vs 8 over all CSV outputs: max |Δ| = {thread_diff:.1e} (≤ 1e-9){}",
            files.len(),
            if differing.is_empty() { "none".to_string() } else { differing.join(", ") },
            if mismatched.is_empty() { String::new() } else { format!(", shape mismatch in {}", mismatched.join(", ")) }
        ),
    )
}
