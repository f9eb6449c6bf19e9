use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use log::{info, warn};
use serde::Serialize;

use postscore::dataset::{
    assemble_training_set, predict_stream, stream_surface_features, Corpus, Vectorizer,
};
use postscore::io::{read_labels, read_lines, read_predictions, read_reference, write_csv};
use postscore::model::posts_curve;
use postscore::stats::pearson;
use postscore::synth::{generate, SynthConfig};
use postscore::tfidf::load_stopwords;
use postscore::transfer::{
    aggregate as aggregate_scores, attach_reference, compare, cross_source_compare,
    InstitutionMapping,
};
use postscore::wordrank::{project_2d, rank_all, write_projection_csv, write_scores_csv};
use postscore::{
    fit, load_vec, loo_user_cv, CurveConfig, EmbeddingTable, Error, LinearModel, TfidfVocabulary,
    UserSurfaceFeatures,
};

use crate::manifest::Manifest;
use crate::{
    AggregateArgs, CliError, CorrelateArgs, CountSourceArg, CurveArgs, EvaluateArgs, FeaturizeArgs,
    OutArg, PredictArgs, RankWordsArgs, SynthArgs, TrainArgs, VectorizerArgs, VectorizerKind,
};

type Result<T> = std::result::Result<T, CliError>;

fn out_dir(out: &OutArg) -> Result<&Path> {
    std::fs::create_dir_all(&out.out).map_err(|e| Error::io(&out.out, e))?;
    Ok(&out.out)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(postscore::io::create(path)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

pub fn synth(args: &SynthArgs, threads: usize) -> Result<()> {
    let dir = out_dir(&args.out)?;
    let config = SynthConfig {
        vocab_size: args.vocab_size,
        dim: args.dim,
        n_topics: args.topics,
        n_users: args.users,
        posts_per_user: args.posts_per_user,
        tokens_per_post: args.tokens_per_post,
        noise_sd: args.noise_sd,
        institution_count: args.institutions,
        users_per_institution: args.users_per_institution,
        seed: args.seed,
        ..SynthConfig::default()
    };
    let data = generate(&config)?;
    let files = data.write_to(dir)?;
    let mut manifest = Manifest::new("synth", args, threads);
    manifest.seed = Some(args.seed);
    for f in files {
        manifest.output(f);
    }
    manifest.write(dir)?;
    println!(
        "seed {}: wrote {} posts from {} users; r* = {:.3}",
        args.seed,
        data.posts.len(),
        data.labels.len(),
        config.r_star()
    );
    Ok(())
}

pub fn featurize(args: &FeaturizeArgs, threads: usize) -> Result<()> {
    let dir = out_dir(&args.out)?;
    let mut manifest = Manifest::new("featurize", args, threads);
    manifest.input(&args.posts)?;
    let features = stream_surface_features(&args.posts)?;
    write_csv(&dir.join("features.csv"), &features)?;
    manifest.output("features.csv");
    manifest.write(dir)?;
    info!("features for {} users", features.len());
    Ok(())
}

#[derive(Serialize)]
struct MetricRow<'a> {
    metric: &'a str,
    r: f64,
    n: usize,
    p: f64,
    r_squared: f64,
}

pub fn correlate(args: &CorrelateArgs, threads: usize) -> Result<()> {
    let dir = out_dir(&args.out)?;
    let mut manifest = Manifest::new("correlate", args, threads);
    manifest.input(&args.posts)?;
    manifest.input(&args.labels)?;
    let labels = read_labels(&args.labels)?;
    let features: Vec<UserSurfaceFeatures> = stream_surface_features(&args.posts)?
        .into_iter()
        .filter(|f| labels.contains_key(&f.user_id))
        .collect();
    let y: Vec<f64> = features.iter().map(|f| labels[&f.user_id]).collect();
    let mut rows = Vec::new();
    for (j, metric) in UserSurfaceFeatures::COLUMNS.iter().enumerate() {
        let x: Vec<f64> = features.iter().map(|f| f.values()[j]).collect();
        match pearson(&x, &y) {
            Ok(rep) => {
                println!(
                    "{metric:>14}  r = {:+.3}  p = {:.3e}  n = {}",
                    rep.r, rep.p_two_sided, rep.n
                );
                rows.push(MetricRow {
                    metric,
                    r: rep.r,
                    n: rep.n,
                    p: rep.p_two_sided,
                    r_squared: rep.r_squared,
                });
            }
            Err(e) => warn!("{metric}: {e}"),
        }
    }
    write_csv(&dir.join("correlations.csv"), rows)?;
    manifest.output("correlations.csv");
    manifest.write(dir)?;
    Ok(())
}

/// The inputs a vectorizer needs, loaded once.
enum Loaded {
    Embedding(EmbeddingTable),
    Tfidf(TfidfVocabulary),
}

impl Loaded {
    fn vectorizer(&self) -> Vectorizer<'_> {
        match self {
            Loaded::Embedding(t) => Vectorizer::Embedding(t),
            Loaded::Tfidf(v) => Vectorizer::Tfidf(v),
        }
    }
}

fn stopwords(path: Option<&Path>, manifest: &mut Manifest) -> Result<HashSet<String>> {
    match path {
        Some(p) => {
            manifest.input(p)?;
            Ok(load_stopwords(p)?)
        }
        None => Ok(HashSet::new()),
    }
}

fn check_vectorizer_args(args: &VectorizerArgs) -> Result<()> {
    if args.vectorizer == VectorizerKind::Embedding && args.embeddings.is_none() {
        return Err(usage(
            "--embeddings is required with --vectorizer embedding",
        ));
    }
    Ok(())
}

/// Loads word vectors, or builds the TF-IDF vocabulary over every kept post
/// of the corpus (document frequencies use no labels).
fn load_vectorizer(
    args: &VectorizerArgs,
    corpus: &Corpus,
    manifest: &mut Manifest,
) -> Result<Loaded> {
    match args.vectorizer {
        VectorizerKind::Embedding => {
            let path = args
                .embeddings
                .as_deref()
                .ok_or_else(|| usage("--embeddings is required with --vectorizer embedding"))?;
            manifest.input(path)?;
            Ok(Loaded::Embedding(load_vec(path)?))
        }
        VectorizerKind::Tfidf => {
            let stop = stopwords(args.stopwords.as_deref(), manifest)?;
            let docs: Vec<Vec<&str>> = corpus
                .posts()
                .map(|p| p.tokens.iter().map(String::as_str).collect())
                .collect();
            Ok(Loaded::Tfidf(TfidfVocabulary::build(
                &docs,
                &stop,
                args.tfidf_terms,
            )?))
        }
    }
}

pub fn train(args: &TrainArgs, threads: usize) -> Result<()> {
    check_vectorizer_args(&args.vectorizer)?;
    let dir = out_dir(&args.out)?;
    let mut manifest = Manifest::new("train", args, threads);
    manifest.input(&args.posts)?;
    manifest.input(&args.labels)?;
    let labels = read_labels(&args.labels)?;
    let corpus = Corpus::load(&args.posts)?;
    let loaded = load_vectorizer(&args.vectorizer, &corpus, &mut manifest)?;
    let vectorizer = loaded.vectorizer();
    let (ts, report) = assemble_training_set(&corpus, &labels, vectorizer)?;
    info!("{report:?}");
    let mut model = fit(&ts, args.lambda)?;
    model.training_meta.vectorizer = Some(vectorizer.name().to_string());
    match &loaded {
        Loaded::Embedding(t) => model.training_meta.embedding_fingerprint = Some(t.fingerprint()),
        Loaded::Tfidf(v) => {
            v.write_csv(create(&dir.join("tfidf_vocab.csv"))?)?;
            manifest.output("tfidf_vocab.csv");
        }
    }
    model.save_json(dir.join("model.json"))?;
    manifest.output("model.json");
    manifest.write(dir)?;
    println!(
        "trained on {} posts from {} users (d = {})",
        ts.n_rows(),
        ts.n_groups(),
        ts.dim()
    );
    Ok(())
}

#[derive(Serialize)]
struct Evaluation {
    vectorizer: &'static str,
    lambda: f64,
    n_users: usize,
    n_posts: usize,
    pearson: postscore::CorrelationReport,
}

pub fn evaluate(args: &EvaluateArgs, threads: usize) -> Result<()> {
    check_vectorizer_args(&args.vectorizer)?;
    let dir = out_dir(&args.out)?;
    let mut manifest = Manifest::new("evaluate", args, threads);
    manifest.input(&args.posts)?;
    manifest.input(&args.labels)?;
    let labels = read_labels(&args.labels)?;
    let corpus = Corpus::load(&args.posts)?;
    let loaded = load_vectorizer(&args.vectorizer, &corpus, &mut manifest)?;
    let vectorizer = loaded.vectorizer();
    let (ts, _) = assemble_training_set(&corpus, &labels, vectorizer)?;
    let preds = loo_user_cv(&ts, args.lambda)?;
    let predicted: Vec<f64> = preds.iter().map(|p| p.predicted).collect();
    let observed: Vec<f64> = preds.iter().map(|p| labels[&p.user_id]).collect();
    let report = pearson(&predicted, &observed)?;
    write_csv(&dir.join("loo_predictions.csv"), &preds)?;
    write_json(
        &dir.join("evaluation.json"),
        &Evaluation {
            vectorizer: vectorizer.name(),
            lambda: args.lambda,
            n_users: ts.n_groups(),
            n_posts: ts.n_rows(),
            pearson: report,
        },
    )?;
    manifest.output("loo_predictions.csv");
    manifest.output("evaluation.json");
    manifest.write(dir)?;
    println!(
        "{}: r = {:.4} (p = {:.3e}, n = {} users)",
        vectorizer.name(),
        report.r,
        report.p_two_sided,
        report.n
    );
    Ok(())
}

pub fn predict(args: &PredictArgs, threads: usize) -> Result<()> {
    let dir = out_dir(&args.out)?;
    let mut manifest = Manifest::new("predict", args, threads);
    manifest.input(&args.model)?;
    manifest.input(&args.posts)?;
    let model = LinearModel::load_json(&args.model)?;
    let kind = model
        .training_meta
        .vectorizer
        .as_deref()
        .unwrap_or("embedding");
    let loaded = match kind {
        "embedding" => {
            let path = args
                .embeddings
                .as_deref()
                .ok_or_else(|| usage("--embeddings is required for an embedding model"))?;
            manifest.input(path)?;
            let table = load_vec(path)?;
            if let Some(expected) = &model.training_meta.embedding_fingerprint {
                if *expected != table.fingerprint() {
                    return Err(Error::domain(format!(
                        "{}: word vectors differ from the ones the model was trained on",
                        path.display()
                    ))
                    .into());
                }
            }
            Loaded::Embedding(table)
        }
        "tfidf" => {
            let path = args
                .tfidf_vocab
                .as_deref()
                .ok_or_else(|| usage("--tfidf-vocab is required for a TF-IDF model"))?;
            manifest.input(path)?;
            let stop = stopwords(args.stopwords.as_deref(), &mut manifest)?;
            Loaded::Tfidf(TfidfVocabulary::read_csv(path, stop)?)
        }
        other => {
            return Err(Error::domain(format!("unknown vectorizer {other:?} in model file")).into())
        }
    };
    let preds = predict_stream(&model, &args.posts, loaded.vectorizer())?;
    postscore::io::write_predictions(&dir.join("predictions.csv"), &preds)?;
    manifest.output("predictions.csv");
    manifest.write(dir)?;
    info!("predicted {} users", preds.len());
    Ok(())
}

pub fn aggregate(args: &AggregateArgs, threads: usize) -> Result<()> {
    let dir = out_dir(&args.out)?;
    let mut manifest = Manifest::new("aggregate", args, threads);
    manifest.input(&args.predictions)?;
    manifest.input(&args.mapping)?;
    let preds = read_predictions(&args.predictions)?;
    let mapping = InstitutionMapping::load_csv(&args.mapping)?;
    if !mapping.ambiguous_users().is_empty() {
        warn!(
            "{} users listed under several institutions were dropped",
            mapping.ambiguous_users().len()
        );
    }
    let exclude = match &args.exclude {
        Some(p) => {
            manifest.input(p)?;
            Some(read_lines(p)?)
        }
        None => None,
    };
    let (mut scores, report) =
        aggregate_scores(&preds, &mapping, args.min_users, exclude.as_ref())?;
    for (inst, n) in &report.below_min_users {
        info!("dropped {inst}: {n} users < {}", args.min_users);
    }
    if let Some(path) = &args.reference {
        manifest.input(path)?;
        let reference = read_reference(path)?;
        attach_reference(&mut scores, &reference);
        let comparison = compare(&scores, &reference)?;
        println!(
            "institutions: pearson r = {:.4} (p = {:.3e}), spearman r = {:.4}, n = {}",
            comparison.pearson.r,
            comparison.pearson.p_two_sided,
            comparison.spearman.r,
            comparison.pearson.n
        );
        write_json(&dir.join("comparison.json"), &comparison)?;
        manifest.output("comparison.json");
    }
    write_csv(&dir.join("institutions.csv"), &scores)?;
    manifest.output("institutions.csv");
    write_json(&dir.join("aggregation_report.json"), &report)?;
    manifest.output("aggregation_report.json");

    if let Some(path) = &args.predictions_b {
        manifest.input(path)?;
        let preds_b = read_predictions(path)?;
        let cross = cross_source_compare(&preds, &preds_b, &mapping)?;
        write_csv(&dir.join("cross_source.csv"), &cross.rows)?;
        write_json(&dir.join("cross_source.json"), &cross)?;
        manifest.output("cross_source.csv");
        manifest.output("cross_source.json");
        match &cross.pearson {
            Some(r) => println!(
                "cross-source: r = {:.4}, mean offset = {:+.3}",
                r.r, cross.mean_offset
            ),
            None => println!(
                "cross-source: correlation undefined, mean offset = {:+.3}",
                cross.mean_offset
            ),
        }
    }
    manifest.write(dir)?;
    Ok(())
}

pub fn rank_words(args: &RankWordsArgs, threads: usize) -> Result<()> {
    if args.min_count > 0
        && match args.count_source {
            CountSourceArg::Training => args.posts.is_none(),
            CountSourceArg::Sidecar => args.freq.is_none(),
        }
    {
        let needed = match args.count_source {
            CountSourceArg::Training => "--posts",
            CountSourceArg::Sidecar => "--freq",
        };
        return Err(usage(format!(
            "--min-count needs word counts; pass {needed}"
        )));
    }
    if args.project_2d && args.top.is_none() {
        return Err(usage("--project-2d needs --top"));
    }
    let dir = out_dir(&args.out)?;
    let mut manifest = Manifest::new("rank-words", args, threads);
    manifest.input(&args.model)?;
    manifest.input(&args.embeddings)?;
    let model = LinearModel::load_json(&args.model)?;
    let table = load_vec(&args.embeddings)?;
    let counts: Option<HashMap<String, u64>> = match args.count_source {
        CountSourceArg::Training => match &args.posts {
            Some(p) => {
                manifest.input(p)?;
                Some(Corpus::load(p)?.token_counts())
            }
            None => None,
        },
        CountSourceArg::Sidecar => match &args.freq {
            Some(p) => {
                manifest.input(p)?;
                Some(postscore::embeddings::load_freq(p)?)
            }
            None => None,
        },
    };
    let ranking = rank_all(&model, &table, args.min_count, counts.as_ref())?;
    let path = dir.join("word_scores.csv");
    match args.top {
        None => ranking.write_csv(create(&path)?)?,
        Some(n) => {
            let selected = if 2 * n >= ranking.len() {
                ranking.iter().collect()
            } else {
                let mut s = ranking.top(n);
                s.extend(ranking.bottom(n));
                s
            };
            write_scores_csv(create(&path)?, selected.iter().cloned())?;
            if args.project_2d {
                let rows = project_2d(&selected, &table)?;
                write_projection_csv(create(&dir.join("projection.csv"))?, &rows)?;
                manifest.output("projection.csv");
            }
        }
    }
    manifest.output("word_scores.csv");
    manifest.write(dir)?;
    info!("ranked {} words", ranking.len());
    Ok(())
}

pub fn curve(args: &CurveArgs, threads: usize) -> Result<()> {
    let dir = out_dir(&args.out)?;
    let mut manifest = Manifest::new("curve", args, threads);
    manifest.seed = Some(args.seed);
    manifest.input(&args.posts)?;
    manifest.input(&args.labels)?;
    manifest.input(&args.embeddings)?;
    let labels: BTreeMap<String, f64> = read_labels(&args.labels)?;
    let corpus = Corpus::load(&args.posts)?;
    let table = load_vec(&args.embeddings)?;
    let (ts, _) = assemble_training_set(&corpus, &labels, Vectorizer::Embedding(&table))?;
    let config = CurveConfig {
        n_max: args.n_max,
        bootstrap_reps: args.bootstrap,
        level: args.level,
        lambda: args.lambda,
        seed: args.seed,
    };
    let points = posts_curve(&ts, &config)?;
    println!("seed {}, {} bootstrap resamples", args.seed, args.bootstrap);
    for p in &points {
        println!(
            "N = {:>3}  r = {:.4}  [{:.4}, {:.4}]",
            p.n, p.r, p.ci_low, p.ci_high
        );
    }
    write_csv(&dir.join("curve.csv"), &points)?;
    manifest.output("curve.csv");
    manifest.write(dir)?;
    Ok(())
}
