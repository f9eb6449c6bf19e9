//! Tokenization, post filtering and per-user surface features.
//!
//! Tokens are maximal runs of Unicode letters and digits. An apostrophe or
//! hyphen is kept when it sits between two letters/digits, so `don't` and
//! `re-read` stay whole. Tokens are lowercased after the capitalization of
//! their first character has been recorded.

use std::collections::HashMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One short text as read from the posts file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPost {
    pub user_id: String,
    pub post_id: String,
    pub text: String,
    #[serde(default)]
    pub is_repost: bool,
}

impl RawPost {
    pub fn new(
        user_id: impl Into<String>,
        post_id: impl Into<String>,
        text: impl Into<String>,
    ) -> Self {
        RawPost {
            user_id: user_id.into(),
            post_id: post_id.into(),
            text: text.into(),
            is_repost: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedPost {
    pub user_id: String,
    pub post_id: String,
    pub tokens: Vec<String>,
    pub n_capitalized: usize,
    pub n_emoji: usize,
    pub n_exclaim: usize,
    pub n_latin_chars: usize,
    pub n_alpha_chars: usize,
    pub char_len: usize,
}

impl TokenizedPost {
    pub fn from_raw(post: &RawPost) -> Self {
        let (tokens, n_capitalized) = tokenize_counting_caps(&post.text);
        let mut n_exclaim = 0;
        let mut n_latin_chars = 0;
        let mut n_alpha_chars = 0;
        let mut char_len = 0;
        for c in post.text.chars() {
            char_len += 1;
            if c == '!' {
                n_exclaim += 1;
            }
            if c.is_alphabetic() {
                n_alpha_chars += 1;
                if is_latin_letter(c) {
                    n_latin_chars += 1;
                }
            }
        }
        TokenizedPost {
            user_id: post.user_id.clone(),
            post_id: post.post_id.clone(),
            tokens,
            n_capitalized,
            n_emoji: count_emoji(&post.text),
            n_exclaim,
            n_latin_chars,
            n_alpha_chars,
            char_len,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn is_joiner(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}' | '-')
}

/// Splits `text` into lowercase tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_counting_caps(text).0
}

/// Like [`tokenize`], also returning how many tokens started with an
/// uppercase letter in the original text.
pub fn tokenize_counting_caps(text: &str) -> (Vec<String>, usize) {
    let mut tokens = Vec::new();
    let mut n_caps = 0;
    let mut current = String::new();
    let mut chars = text.chars().peekable();

    while let Some(c) = chars.next() {
        if c.is_alphanumeric() {
            if current.is_empty() && c.is_uppercase() {
                n_caps += 1;
            }
            current.extend(c.to_lowercase());
        } else if is_joiner(c)
            && !current.is_empty()
            && chars.peek().is_some_and(|n| n.is_alphanumeric())
        {
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    (tokens, n_caps)
}

/// Latin-script letters: ASCII, Latin-1 Supplement, Latin Extended-A/B,
/// IPA, Latin Extended Additional and the Latin ligatures.
pub fn is_latin_letter(c: char) -> bool {
    if c.is_ascii_alphabetic() {
        return true;
    }
    if !c.is_alphabetic() {
        return false;
    }
    matches!(c as u32,
        0x00C0..=0x00D6 | 0x00D8..=0x00F6 | 0x00F8..=0x024F
        | 0x0250..=0x02AF | 0x1E00..=0x1EFF | 0x2C60..=0x2C7F
        | 0xA720..=0xA7FF | 0xAB30..=0xAB6F | 0xFB00..=0xFB06
        | 0xFF21..=0xFF3A | 0xFF41..=0xFF5A)
}

fn emoji_ranges() -> &'static [(u32, u32)] {
    static RANGES: OnceLock<Vec<(u32, u32)>> = OnceLock::new();
    RANGES.get_or_init(|| {
        include_str!("../data/emoji_ranges.txt")
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|l| {
                let mut parts = l.split_whitespace();
                let mut next = || {
                    u32::from_str_radix(parts.next().expect("range bound"), 16)
                        .expect("hex range bound")
                };
                (next(), next())
            })
            .collect()
    })
}

pub fn is_emoji(c: char) -> bool {
    let cp = c as u32;
    emoji_ranges()
        .iter()
        .any(|&(lo, hi)| (lo..=hi).contains(&cp))
}

/// Counts emoji code points; members of a ZWJ sequence after the first
/// are folded into their base, and skin-tone modifiers never count.
pub fn count_emoji(text: &str) -> usize {
    let mut count = 0;
    let mut after_zwj = false;
    for c in text.chars() {
        if c == '\u{200D}' {
            after_zwj = true;
            continue;
        }
        let modifier = matches!(c as u32, 0x1F3FB..=0x1F3FF);
        if is_emoji(c) && !after_zwj && !modifier {
            count += 1;
        }
        // variation selectors and skin-tone modifiers keep the sequence open
        if !(matches!(c as u32, 0xFE0E | 0xFE0F | 0x1F3FB..=0x1F3FF)) {
            after_zwj = false;
        }
    }
    count
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterReason {
    Repost,
    Url,
    Empty,
}

impl std::fmt::Display for FilterReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FilterReason::Repost => "repost",
            FilterReason::Url => "url",
            FilterReason::Empty => "empty",
        })
    }
}

pub fn contains_url(text: &str) -> bool {
    let lower = text.to_lowercase();
    lower.contains("http://")
        || lower.contains("https://")
        || lower.split_whitespace().any(|w| w.starts_with("www."))
}

/// Returns why a post must be dropped before scoring, or `None` to keep it.
pub fn should_filter(post: &RawPost) -> Option<FilterReason> {
    if post.is_repost {
        Some(FilterReason::Repost)
    } else if contains_url(&post.text) {
        Some(FilterReason::Url)
    } else if tokenize(&post.text).is_empty() {
        Some(FilterReason::Empty)
    } else {
        None
    }
}

/// Shannon entropy in bits of a token multiset.
pub fn shannon_entropy<I>(counts: I) -> Result<f64>
where
    I: IntoIterator<Item = usize>,
{
    let counts: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::domain("entropy of an empty token multiset"));
    }
    let total = total as f64;
    let h = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum::<f64>();
    // -0.0 for the degenerate distribution
    Ok(h.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSurfaceFeatures {
    pub user_id: String,
    pub caps_rate: f64,
    pub emoji_rate: f64,
    pub exclaim_rate: f64,
    pub latin_rate: f64,
    pub avg_post_len: f64,
    pub avg_word_len: f64,
    pub vocab_size: usize,
    pub entropy_bits: f64,
}

impl UserSurfaceFeatures {
    pub const COLUMNS: [&'static str; 8] = [
        "caps_rate",
        "emoji_rate",
        "exclaim_rate",
        "latin_rate",
        "avg_post_len",
        "avg_word_len",
        "vocab_size",
        "entropy_bits",
    ];

    /// Feature values in [`Self::COLUMNS`] order.
    pub fn values(&self) -> [f64; 8] {
        [
            self.caps_rate,
            self.emoji_rate,
            self.exclaim_rate,
            self.latin_rate,
            self.avg_post_len,
            self.avg_word_len,
            self.vocab_size as f64,
            self.entropy_bits,
        ]
    }
}

/// Streaming reduction of one user's posts into [`UserSurfaceFeatures`].
#[derive(Debug, Clone, Default)]
pub struct SurfaceAccumulator {
    n_posts: usize,
    caps_rate_sum: f64,
    emoji_rate_sum: f64,
    exclaim_rate_sum: f64,
    n_latin: usize,
    n_alpha: usize,
    n_tokens: usize,
    n_token_chars: usize,
    counts: HashMap<String, usize>,
}

impl SurfaceAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one unfiltered post. Posts without tokens are ignored.
    pub fn add(&mut self, post: &TokenizedPost) {
        let len = post.tokens.len();
        if len == 0 {
            return;
        }
        let len_f = len as f64;
        self.n_posts += 1;
        self.caps_rate_sum += post.n_capitalized as f64 / len_f;
        self.emoji_rate_sum += post.n_emoji as f64 / len_f;
        self.exclaim_rate_sum += post.n_exclaim as f64 / len_f;
        self.n_latin += post.n_latin_chars;
        self.n_alpha += post.n_alpha_chars;
        self.n_tokens += len;
        for token in &post.tokens {
            self.n_token_chars += token.chars().count();
            *self.counts.entry(token.clone()).or_insert(0) += 1;
        }
    }

    pub fn n_posts(&self) -> usize {
        self.n_posts
    }

    pub fn finish(self, user_id: impl Into<String>) -> Result<UserSurfaceFeatures> {
        if self.n_posts == 0 {
            return Err(Error::domain(
                "surface features need at least one post with tokens",
            ));
        }
        let n_posts = self.n_posts as f64;
        let entropy_bits = shannon_entropy(self.counts.values().copied())?;
        Ok(UserSurfaceFeatures {
            user_id: user_id.into(),
            caps_rate: self.caps_rate_sum / n_posts,
            emoji_rate: self.emoji_rate_sum / n_posts,
            exclaim_rate: self.exclaim_rate_sum / n_posts,
            latin_rate: if self.n_alpha == 0 {
                0.0
            } else {
                self.n_latin as f64 / self.n_alpha as f64
            },
            avg_post_len: self.n_tokens as f64 / n_posts,
            avg_word_len: self.n_token_chars as f64 / self.n_tokens as f64,
            vocab_size: self.counts.len(),
            entropy_bits,
        })
    }
}

/// Surface features of one user's posts.
pub fn surface_features(posts: &[TokenizedPost]) -> Result<UserSurfaceFeatures> {
    let user_id = posts
        .first()
        .map(|p| p.user_id.clone())
        .ok_or_else(|| Error::domain("surface features need at least one post"))?;
    let mut acc = SurfaceAccumulator::new();
    for post in posts {
        acc.add(post);
    }
    acc.finish(user_id)
}
