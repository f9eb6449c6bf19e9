//! Predicting an outcome for the authors of short texts from averaged
//! pretrained word embeddings.
//!
//! The pipeline: posts are tokenized and filtered ([`textproc`]), turned
//! into bag-of-embeddings vectors ([`embeddings`]) or TF-IDF vectors
//! ([`tfidf`]), and fed to a linear model trained on posts ([`model`]). User
//! scores are the mean of their post scores; institution scores the mean of
//! their users ([`transfer`]). Because the model is affine, every word has a
//! score of its own and a post's score is the mean of its words' scores
//! ([`wordrank`]). [`synth`] generates datasets with a planted signal.

pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod seeding;
pub mod stats;
pub mod synth;
pub mod textproc;
pub mod tfidf;
pub mod transfer;
pub mod wordrank;

pub use embeddings::{load_vec, post_vector, EmbeddingTable, PostVector};
pub use error::{Error, Result};
pub use model::{
    fit, loo_user_cv, posts_curve, CurveConfig, CurvePoint, LinearModel, TrainingSet,
    UserPrediction,
};
pub use stats::{pearson, spearman, CorrelationReport};
pub use textproc::{RawPost, TokenizedPost, UserSurfaceFeatures};
pub use tfidf::TfidfVocabulary;
pub use transfer::InstitutionScore;
pub use wordrank::WordScore;
