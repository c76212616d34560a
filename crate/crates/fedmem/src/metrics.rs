//! Memorization-ratio computation: the pairwise matrix, weighted intra/inter
//! aggregates, union-based totals, per-category breakdown, and the
//! task-performance scores reported alongside them.
//!
//! Aggregation formulas are linear in the matrix entries, so they apply
//! unchanged whether the entries are fractions or percentages.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;
use crate::detector::Category;
use crate::error::{Error, Result};
use crate::flsim::ClientWeight;

/// Outcome of auditing one (source, target) client pair. Prefix ids are
/// relative to the source client's eval set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairResult {
    pub source: usize,
    pub target: usize,
    /// Prefixes that reached detection (failed/degenerate ones removed).
    pub evaluated: BTreeSet<String>,
    /// Prefixes whose generation matched any of the target's suffixes.
    pub memorizing: BTreeSet<String>,
    /// Memorizing prefixes by match category; the union equals `memorizing`.
    pub per_category: BTreeMap<Category, BTreeSet<String>>,
}

impl PairResult {
    pub fn new(
        source: usize,
        target: usize,
        evaluated: BTreeSet<String>,
        memorizing: BTreeSet<String>,
        per_category: BTreeMap<Category, BTreeSet<String>>,
    ) -> Result<Self> {
        let pair = PairResult {
            source,
            target,
            evaluated,
            memorizing,
            per_category,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.memorizing.is_subset(&self.evaluated) {
            return Err(Error::InconsistentInput(format!(
                "pair ({}, {}): memorizing set is not a subset of evaluated",
                self.source, self.target
            )));
        }
        let mut union: BTreeSet<&String> = BTreeSet::new();
        for set in self.per_category.values() {
            if !set.is_subset(&self.memorizing) {
                return Err(Error::InconsistentInput(format!(
                    "pair ({}, {}): a category set leaks outside memorizing",
                    self.source, self.target
                )));
            }
            union.extend(set.iter());
        }
        if union.len() != self.memorizing.len() {
            return Err(Error::InconsistentInput(format!(
                "pair ({}, {}): union of category sets differs from memorizing",
                self.source, self.target
            )));
        }
        Ok(())
    }
}

/// Which model produced the audited generations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "FL")]
    Fl,
    #[serde(rename = "CL")]
    Cl,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Fl => "FL",
            Regime::Cl => "CL",
        }
    }
}

/// Intra/inter/total values for one match category.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CategorySlice {
    pub intra: f64,
    pub inter: f64,
    pub total: f64,
}

/// Aggregated audit report for one trial under one regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemReport {
    pub version: u32,
    pub regime: Regime,
    pub l: usize,
    pub weights: Vec<ClientWeight>,
    /// matrix[j][k] = fraction of client j's evaluated prefixes eliciting a
    /// suffix of client k.
    pub matrix: Vec<Vec<f64>>,
    pub mr_intra: f64,
    pub mr_inter: f64,
    pub mr_total: f64,
    /// Keyed by category name (see [`Category::name`]).
    pub per_category: BTreeMap<String, CategorySlice>,
    pub evaluated_prefixes: usize,
    pub filtered_generations: usize,
    pub failed_generations: usize,
    /// Mean token-LCS F1 of each evaluated generation against its own true
    /// suffix; a generation-quality proxy, not a memorization signal.
    pub mean_rouge_l: f64,
    /// Exact-match accuracy of generations against sample labels, when every
    /// evaluated sample carries a label.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_accuracy: Option<f64>,
    pub pairs: Vec<PairResult>,
}

pub const REPORT_FORMAT_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Ratio operations
// ---------------------------------------------------------------------------

/// |memorizing| / |evaluated| for one client pair.
pub fn mr_pairwise(pair: &PairResult) -> Result<f64> {
    if pair.evaluated.is_empty() {
        return Err(Error::UndefinedRatio(format!(
            "pair ({}, {}) has an empty evaluated set",
            pair.source, pair.target
        )));
    }
    Ok(pair.memorizing.len() as f64 / pair.evaluated.len() as f64)
}

fn check_matrix(matrix: &[Vec<f64>], weights: &[ClientWeight]) -> Result<()> {
    let l = weights.len();
    if matrix.len() != l || matrix.iter().any(|row| row.len() != l) {
        return Err(Error::InvalidArgument(format!(
            "matrix must be {l}x{l} to match the weights"
        )));
    }
    let sum: f64 = weights.iter().map(|w| w.weight).sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidWeights(format!("weights sum to {sum}")));
    }
    Ok(())
}

/// Weighted diagonal: sum_j w_j * matrix[j][j].
pub fn mr_intra(matrix: &[Vec<f64>], weights: &[ClientWeight]) -> Result<f64> {
    check_matrix(matrix, weights)?;
    Ok(weights
        .iter()
        .enumerate()
        .map(|(j, w)| w.weight * matrix[j][j])
        .sum())
}

/// Weighted mean of each client's off-diagonal row average:
/// sum_j w_j * (1/(L-1)) * sum_{k != j} matrix[j][k].
pub fn mr_inter(matrix: &[Vec<f64>], weights: &[ClientWeight]) -> Result<f64> {
    check_matrix(matrix, weights)?;
    let l = weights.len();
    if l < 2 {
        return Err(Error::UndefinedInter);
    }
    Ok(weights
        .iter()
        .enumerate()
        .map(|(j, w)| {
            let row: f64 = matrix[j]
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != j)
                .map(|(_, &v)| v)
                .sum();
            w.weight * row / (l - 1) as f64
        })
        .sum())
}

/// Union semantics over all pairs: |union of memorizing| / |union of
/// evaluated|, with prefixes namespaced by their source client so one
/// prefix leaking to several targets counts once.
pub fn mr_total(pairs: &[PairResult]) -> Result<f64> {
    let mut evaluated_by_source: BTreeMap<usize, &BTreeSet<String>> = BTreeMap::new();
    for pair in pairs {
        match evaluated_by_source.get(&pair.source) {
            Some(existing) if *existing != &pair.evaluated => {
                return Err(Error::InconsistentInput(format!(
                    "source client {} has differing evaluated sets across pairs",
                    pair.source
                )));
            }
            Some(_) => {}
            None => {
                evaluated_by_source.insert(pair.source, &pair.evaluated);
            }
        }
    }
    let evaluated: usize = evaluated_by_source.values().map(|s| s.len()).sum();
    if evaluated == 0 {
        return Err(Error::UndefinedRatio("no evaluated prefixes".into()));
    }
    let mut memorizing: BTreeSet<(usize, &String)> = BTreeSet::new();
    for pair in pairs {
        memorizing.extend(pair.memorizing.iter().map(|id| (pair.source, id)));
    }
    Ok(memorizing.len() as f64 / evaluated as f64)
}

/// Restricts every pair to one category's memorizing set.
fn category_pairs(pairs: &[PairResult], category: Category) -> Vec<PairResult> {
    pairs
        .iter()
        .map(|p| {
            let set = p.per_category.get(&category).cloned().unwrap_or_default();
            PairResult {
                source: p.source,
                target: p.target,
                evaluated: p.evaluated.clone(),
                memorizing: set.clone(),
                per_category: BTreeMap::from([(category, set)]),
            }
        })
        .collect()
}

/// All aggregate formulas applied per category using the per-category
/// prefix sets.
pub fn category_breakdown(
    pairs: &[PairResult],
    weights: &[ClientWeight],
) -> Result<BTreeMap<String, CategorySlice>> {
    let l = weights.len();
    let mut out = BTreeMap::new();
    for category in Category::ALL {
        let restricted = category_pairs(pairs, category);
        let matrix = pair_matrix(&restricted, l)?;
        let slice = CategorySlice {
            intra: mr_intra(&matrix, weights)?,
            inter: if l >= 2 {
                mr_inter(&matrix, weights)?
            } else {
                0.0
            },
            total: mr_total(&restricted)?,
        };
        out.insert(category.name().to_string(), slice);
    }
    Ok(out)
}

/// Arranges pair ratios into the L x L matrix (sources down, targets across).
pub fn pair_matrix(pairs: &[PairResult], l: usize) -> Result<Vec<Vec<f64>>> {
    let mut matrix = vec![vec![0.0; l]; l];
    let mut seen = vec![vec![false; l]; l];
    for pair in pairs {
        if pair.source >= l || pair.target >= l {
            return Err(Error::InconsistentInput(format!(
                "pair ({}, {}) is outside the {l}-client matrix",
                pair.source, pair.target
            )));
        }
        if seen[pair.source][pair.target] {
            return Err(Error::InconsistentInput(format!(
                "duplicate pair ({}, {})",
                pair.source, pair.target
            )));
        }
        seen[pair.source][pair.target] = true;
        matrix[pair.source][pair.target] = mr_pairwise(pair)?;
    }
    if seen.iter().flatten().any(|&s| !s) {
        return Err(Error::InconsistentInput(
            "pairs do not cover every (source, target) combination".into(),
        ));
    }
    Ok(matrix)
}

// ---------------------------------------------------------------------------
// Performance scores
// ---------------------------------------------------------------------------

/// Token-level LCS F1 (ROUGE-L): P = LCS/|cand|, R = LCS/|ref|,
/// F = 2PR/(P+R); zero when either text is empty.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let reference = tokenize(reference);
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = subsequence_lcs(&cand, &reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / cand.len() as f64;
    let r = lcs / reference.len() as f64;
    2.0 * p * r / (p + r)
}

fn subsequence_lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            cur[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Fraction of (generated, reference) pairs that match exactly after
/// whitespace trimming. Zero for no pairs.
pub fn exact_match_accuracy<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> f64 {
    let mut total = 0usize;
    let mut hits = 0usize;
    for (gen, reference) in pairs {
        total += 1;
        if gen.trim() == reference.trim() {
            hits += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}
