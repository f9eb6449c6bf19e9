//! Institution-level aggregation of user predictions and comparison against
//! external reference scores.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_csv, MappingRecord};
use crate::model::UserPrediction;
use crate::stats::{pearson, spearman, CorrelationReport};

pub const DEFAULT_MIN_USERS: usize = 5;

/// User to institution association. Users listed under more than one
/// institution are dropped, since their membership is ambiguous.
#[derive(Debug, Clone, Default)]
pub struct InstitutionMapping {
    user_to_inst: HashMap<String, String>,
    ambiguous: Vec<String>,
}

impl InstitutionMapping {
    pub fn from_pairs<I, U, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (U, S)>,
        U: Into<String>,
        S: Into<String>,
    {
        let mut seen: HashMap<String, HashSet<String>> = HashMap::new();
        for (u, s) in pairs {
            seen.entry(u.into()).or_default().insert(s.into());
        }
        let mut mapping = InstitutionMapping::default();
        for (user, insts) in seen {
            if insts.len() == 1 {
                let inst = insts.into_iter().next().unwrap();
                mapping.user_to_inst.insert(user, inst);
            } else {
                mapping.ambiguous.push(user);
            }
        }
        mapping.ambiguous.sort();
        mapping
    }

    /// Reads a `user_id,institution_id` CSV.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let rows: Vec<MappingRecord> = read_csv(path)?;
        Ok(Self::from_pairs(
            rows.into_iter().map(|r| (r.user_id, r.institution_id)),
        ))
    }

    pub fn institution_of(&self, user: &str) -> Option<&str> {
        self.user_to_inst.get(user).map(String::as_str)
    }

    pub fn n_users(&self) -> usize {
        self.user_to_inst.len()
    }

    /// Users removed for naming several institutions, sorted.
    pub fn ambiguous_users(&self) -> &[String] {
        &self.ambiguous
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstitutionScore {
    pub institution_id: String,
    pub n_users: usize,
    pub n_posts: usize,
    pub predicted_mean: f64,
    pub reference: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AggregationReport {
    /// Institutions below the user threshold, with their user counts.
    pub below_min_users: Vec<(String, usize)>,
    pub excluded_users: usize,
    pub unmapped_users: usize,
    /// Users whose prediction is the fallback (no usable post).
    pub users_without_posts: usize,
}

/// Averages user predictions per institution, each user counting once.
/// Institutions with fewer than `min_users` users are dropped and listed in
/// the report. Users in `exclude` (e.g. the training set) are skipped.
pub fn aggregate(
    preds: &[UserPrediction],
    mapping: &InstitutionMapping,
    min_users: usize,
    exclude: Option<&HashSet<String>>,
) -> Result<(Vec<InstitutionScore>, AggregationReport)> {
    let mut report = AggregationReport::default();
    let mut groups: BTreeMap<&str, (f64, usize, usize)> = BTreeMap::new();
    let mut matched = 0;
    for p in preds {
        let Some(inst) = mapping.institution_of(&p.user_id) else {
            report.unmapped_users += 1;
            continue;
        };
        matched += 1;
        if exclude.is_some_and(|ex| ex.contains(&p.user_id)) {
            report.excluded_users += 1;
            continue;
        }
        if p.n_posts_used == 0 {
            report.users_without_posts += 1;
            continue;
        }
        let g = groups.entry(inst).or_insert((0.0, 0, 0));
        g.0 += p.predicted;
        g.1 += 1;
        g.2 += p.n_posts_used;
    }
    if matched == 0 {
        return Err(Error::domain(
            "no predicted user appears in the institution mapping",
        ));
    }
    let mut scores = Vec::new();
    for (inst, (sum, n_users, n_posts)) in groups {
        if n_users < min_users.max(1) {
            report.below_min_users.push((inst.to_string(), n_users));
            continue;
        }
        scores.push(InstitutionScore {
            institution_id: inst.to_string(),
            n_users,
            n_posts,
            predicted_mean: sum / n_users as f64,
            reference: None,
        });
    }
    Ok((scores, report))
}

/// Fills in `reference` from a keyed table; unmatched institutions keep `None`.
pub fn attach_reference(scores: &mut [InstitutionScore], reference: &BTreeMap<String, f64>) {
    for s in scores {
        s.reference = reference.get(&s.institution_id).copied();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub pearson: CorrelationReport,
    pub spearman: CorrelationReport,
    /// `(institution_id, predicted_mean, reference)` for the matched set.
    pub matched: Vec<(String, f64, f64)>,
}

/// Correlates predicted institution means with reference scores over the
/// institutions that have both. Needs at least three matches.
pub fn compare(
    scores: &[InstitutionScore],
    reference: &BTreeMap<String, f64>,
) -> Result<Comparison> {
    let matched: Vec<(String, f64, f64)> = scores
        .iter()
        .filter_map(|s| {
            reference
                .get(&s.institution_id)
                .map(|&r| (s.institution_id.clone(), s.predicted_mean, r))
        })
        .collect();
    if matched.len() < 3 {
        return Err(Error::domain(format!(
            "need at least 3 institutions with a reference score, found {}",
            matched.len()
        )));
    }
    let x: Vec<f64> = matched.iter().map(|m| m.1).collect();
    let y: Vec<f64> = matched.iter().map(|m| m.2).collect();
    Ok(Comparison {
        pearson: pearson(&x, &y)?,
        spearman: spearman(&x, &y)?,
        matched,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedInstitution {
    pub institution_id: String,
    pub n_users: usize,
    pub mean_a: f64,
    pub mean_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossSourceReport {
    pub rows: Vec<PairedInstitution>,
    pub pearson: Option<CorrelationReport>,
    /// Mean over institutions of `mean_b - mean_a`.
    pub mean_offset: f64,
}

/// Pairs two prediction sets over the users present in both (with a usable
/// prediction in each) and compares their institution means. The
/// correlation is absent when fewer than three institutions pair up or a
/// side is constant.
pub fn cross_source_compare(
    a: &[UserPrediction],
    b: &[UserPrediction],
    mapping: &InstitutionMapping,
) -> Result<CrossSourceReport> {
    let b_by_user: HashMap<&str, &UserPrediction> =
        b.iter().map(|p| (p.user_id.as_str(), p)).collect();
    let mut groups: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for pa in a {
        let Some(pb) = b_by_user.get(pa.user_id.as_str()) else {
            continue;
        };
        let Some(inst) = mapping.institution_of(&pa.user_id) else {
            continue;
        };
        if pa.n_posts_used == 0 || pb.n_posts_used == 0 {
            continue;
        }
        let g = groups.entry(inst).or_insert((0.0, 0.0, 0));
        g.0 += pa.predicted;
        g.1 += pb.predicted;
        g.2 += 1;
    }
    if groups.is_empty() {
        return Err(Error::domain(
            "no mapped user has predictions from both sources",
        ));
    }
    let rows: Vec<PairedInstitution> = groups
        .into_iter()
        .map(|(inst, (sa, sb, n))| PairedInstitution {
            institution_id: inst.to_string(),
            n_users: n,
            mean_a: sa / n as f64,
            mean_b: sb / n as f64,
        })
        .collect();
    let xa: Vec<f64> = rows.iter().map(|r| r.mean_a).collect();
    let xb: Vec<f64> = rows.iter().map(|r| r.mean_b).collect();
    let mean_offset = xa.iter().zip(&xb).map(|(a, b)| b - a).sum::<f64>() / rows.len() as f64;
    let pearson = if rows.len() >= 3 {
        pearson(&xa, &xb).ok()
    } else {
        None
    };
    Ok(CrossSourceReport {
        rows,
        pearson,
        mean_offset,
    })
}
