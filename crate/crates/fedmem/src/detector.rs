//! The discriminative function: a seed-and-extend text aligner that decides
//! whether a generation reproduces a candidate suffix, and at which
//! granularity (verbatim, paraphrase split by confidence, or idea-level).
//!
//! Sentences from both texts are paired into seeds when their tf-idf cosine
//! and token-set Dice both clear thresholds; nearby seeds are clustered and
//! the covering passages validated. Independently, a pure-verbatim probe
//! records a span whenever the two texts share a long enough substring
//! (case-folded, whitespace runs collapsed), even when no seeds exist.
//! Everything here is a pure function over immutable inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Minimal match length in characters, applied per span.
    pub min_match_chars: usize,
    pub seed_cosine_min: f64,
    pub seed_dice_min: f64,
    /// Seeds within this many sentences on both texts join one cluster.
    pub max_gap_sentences: usize,
    pub passage_cosine_min: f64,
    /// A span is idea-level when the shorter side is at most this fraction
    /// of the longer one.
    pub idea_length_ratio: f64,
    /// Paraphrase confidence boundary: p above it is high, at or below low.
    pub paraphrase_confidence_split: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            min_match_chars: 50,
            seed_cosine_min: 0.30,
            seed_dice_min: 0.30,
            max_gap_sentences: 4,
            passage_cosine_min: 0.34,
            idea_length_ratio: 0.5,
            paraphrase_confidence_split: 0.5,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_match_chars < 1 {
            return Err(Error::InvalidArgument("min_match_chars must be >= 1".into()));
        }
        for (name, v) in [
            ("seed_cosine_min", self.seed_cosine_min),
            ("seed_dice_min", self.seed_dice_min),
            ("passage_cosine_min", self.passage_cosine_min),
            ("paraphrase_confidence_split", self.paraphrase_confidence_split),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.idea_length_ratio > 0.0 && self.idea_length_ratio <= 1.0) {
            return Err(Error::InvalidArgument("idea_length_ratio must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Match granularity. Per span the precedence is verbatim, then idea, then
/// paraphrase, so one span lands in exactly one category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Verbatim,
    Idea,
    ParaphraseHigh,
    ParaphraseLow,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Verbatim,
        Category::Idea,
        Category::ParaphraseHigh,
        Category::ParaphraseLow,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Category::Verbatim => "verbatim",
            Category::Idea => "idea",
            Category::ParaphraseHigh => "paraphrase_high",
            Category::ParaphraseLow => "paraphrase_low",
        }
    }
}

/// An aligned passage pair; ranges are byte offsets into the original texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSpan {
    pub gen_range: Range<usize>,
    pub suf_range: Range<usize>,
    /// Cosine of every seed in the cluster; empty for pure-verbatim probes.
    pub seed_cosines: Vec<f64>,
}

/// A categorized span inside a detection result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSpan {
    pub span: AlignmentSpan,
    pub category: Category,
    /// Mean seed cosine; present for paraphrase spans only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

/// Verdict for one (generation, suffix) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub matched: bool,
    pub categories: BTreeSet<Category>,
    pub spans: Vec<MatchSpan>,
    /// Highest paraphrase confidence among spans, when any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl DetectionResult {
    fn no_match() -> Self {
        DetectionResult {
            matched: false,
            categories: BTreeSet::new(),
            spans: Vec::new(),
            confidence: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Sentence splitting
// ---------------------------------------------------------------------------

/// A sentence with its byte range in the original text.
#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub range: Range<usize>,
    pub tokens: Vec<String>,
}

/// Splits on `.`/`?`/`!` followed by whitespace and on newlines. Sentences
/// shorter than 3 tokens merge into the following sentence; a trailing short
/// sentence merges backward. Ranges slice the original string back to each
/// sentence.
pub fn split_sentences(text: &str) -> Vec<Sentence> {
    let mut segments: Vec<Range<usize>> = Vec::new();
    let mut start = 0usize;
    let mut chars = text.char_indices().peekable();
    while let Some((i, ch)) = chars.next() {
        let end_of_char = i + ch.len_utf8();
        if ch == '\n' {
            segments.push(start..i);
            start = end_of_char;
        } else if matches!(ch, '.' | '?' | '!') {
            let followed_by_ws = chars.peek().map(|&(_, c)| c.is_whitespace()).unwrap_or(false);
            if followed_by_ws {
                segments.push(start..end_of_char);
                start = end_of_char;
            }
        }
    }
    segments.push(start..text.len());

    // Trim whitespace off each segment and drop empties.
    let trimmed: Vec<Range<usize>> = segments
        .into_iter()
        .filter_map(|r| {
            let slice = &text[r.clone()];
            let ltrim = slice.len() - slice.trim_start().len();
            let rtrim = slice.len() - slice.trim_end().len();
            let out = r.start + ltrim..r.end - rtrim;
            (out.start < out.end).then_some(out)
        })
        .collect();

    let mut sentences: Vec<Range<usize>> = Vec::new();
    let mut pending: Option<Range<usize>> = None;
    for seg in trimmed {
        let merged = match pending.take() {
            Some(p) => p.start..seg.end,
            None => seg,
        };
        if tokenize(&text[merged.clone()]).len() < 3 {
            pending = Some(merged);
        } else {
            sentences.push(merged);
        }
    }
    if let Some(p) = pending {
        match sentences.last_mut() {
            Some(last) => last.end = p.end,
            None => sentences.push(p),
        }
    }
    sentences
        .into_iter()
        .map(|range| Sentence {
            tokens: tokenize(&text[range.clone()]),
            range,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Longest common substring (case-folded, whitespace collapsed)
// ---------------------------------------------------------------------------

/// Normalized view of a text: lowercased chars with whitespace runs collapsed
/// to single spaces, plus each char's byte span in the original.
struct NormText {
    chars: Vec<char>,
    spans: Vec<(usize, usize)>,
}

fn normalize(text: &str) -> NormText {
    let mut chars = Vec::new();
    let mut spans = Vec::new();
    let mut pending_space: Option<(usize, usize)> = None;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if pending_space.is_none() {
                pending_space = Some((i, i + ch.len_utf8()));
            }
            continue;
        }
        if let Some(span) = pending_space.take() {
            if !chars.is_empty() {
                chars.push(' ');
                spans.push(span);
            }
        }
        for low in ch.to_lowercase() {
            chars.push(low);
            spans.push((i, i + ch.len_utf8()));
        }
    }
    NormText { chars, spans }
}

/// Rolling-array DP over normalized chars; returns the best length and the
/// exclusive end positions in both char sequences.
fn lcs_ends(a: &NormText, b: &NormText) -> (usize, usize, usize) {
    if a.chars.is_empty() || b.chars.is_empty() {
        return (0, 0, 0);
    }
    let mut prev = vec![0u32; b.chars.len() + 1];
    let mut cur = vec![0u32; b.chars.len() + 1];
    let mut best = (0usize, 0usize, 0usize);
    for (i, &ca) in a.chars.iter().enumerate() {
        for (j, &cb) in b.chars.iter().enumerate() {
            cur[j + 1] = if ca == cb { prev[j] + 1 } else { 0 };
            if cur[j + 1] as usize > best.0 {
                best = (cur[j + 1] as usize, i + 1, j + 1);
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// Length in characters of the longest common contiguous substring after
/// case folding and whitespace normalization. Symmetric in its arguments.
pub fn longest_common_substring_len(a: &str, b: &str) -> usize {
    lcs_ends(&normalize(a), &normalize(b)).0
}

/// Records a verbatim span when the texts share a substring of at least
/// `min_chars` normalized characters, mapped back to original byte ranges.
fn verbatim_probe(gen: &str, suffix: &str, min_chars: usize) -> Option<AlignmentSpan> {
    let ng = normalize(gen);
    let ns = normalize(suffix);
    let (len, g_end, s_end) = lcs_ends(&ng, &ns);
    if len < min_chars {
        return None;
    }
    let g_start = ng.spans[g_end - len].0;
    let g_stop = ng.spans[g_end - 1].1;
    let s_start = ns.spans[s_end - len].0;
    let s_stop = ns.spans[s_end - 1].1;
    Some(AlignmentSpan {
        gen_range: g_start..g_stop,
        suf_range: s_start..s_stop,
        seed_cosines: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

/// A sentence-pair seed: generated sentence `gen_idx` aligned with suffix
/// sentence `suf_idx`.
#[derive(Debug, Clone, PartialEq)]
pub struct Seed {
    pub gen_idx: usize,
    pub suf_idx: usize,
    pub cosine: f64,
}

fn token_counts(tokens: &[String]) -> BTreeMap<&str, f64> {
    let mut counts: BTreeMap<&str, f64> = BTreeMap::new();
    for t in tokens {
        *counts.entry(t.as_str()).or_insert(0.0) += 1.0;
    }
    counts
}

/// idf = ln(1 + S/df) over the union of both texts' sentences.
fn sentence_idf<'a>(gen: &'a [Sentence], suf: &'a [Sentence]) -> BTreeMap<&'a str, f64> {
    let total = (gen.len() + suf.len()) as f64;
    let mut df: BTreeMap<&str, f64> = BTreeMap::new();
    for sent in gen.iter().chain(suf) {
        let set: BTreeSet<&str> = sent.tokens.iter().map(String::as_str).collect();
        for t in set {
            *df.entry(t).or_insert(0.0) += 1.0;
        }
    }
    df.into_iter()
        .map(|(t, d)| (t, (1.0 + total / d).ln()))
        .collect()
}

fn weighted_cosine(
    a: &BTreeMap<&str, f64>,
    b: &BTreeMap<&str, f64>,
    idf: &BTreeMap<&str, f64>,
) -> f64 {
    let weight = |t: &str| idf.get(t).copied().unwrap_or(0.0);
    let mut dot = 0.0;
    for (t, &ca) in a {
        if let Some(&cb) = b.get(t) {
            let w = weight(t);
            dot += (ca * w) * (cb * w);
        }
    }
    if dot == 0.0 {
        return 0.0;
    }
    let norm = |v: &BTreeMap<&str, f64>| {
        v.iter()
            .map(|(t, &c)| {
                let w = c * weight(t);
                w * w
            })
            .sum::<f64>()
            .sqrt()
    };
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn dice(a: &[String], b: &[String]) -> f64 {
    let sa: BTreeSet<&str> = a.iter().map(String::as_str).collect();
    let sb: BTreeSet<&str> = b.iter().map(String::as_str).collect();
    if sa.is_empty() && sb.is_empty() {
        return 0.0;
    }
    let shared = sa.intersection(&sb).count() as f64;
    2.0 * shared / (sa.len() + sb.len()) as f64
}

/// Pairs (i, j) whose tf-idf cosine and token-set Dice both clear the seed
/// thresholds. tf is the raw in-sentence term frequency; idf comes from the
/// union of both texts' sentences.
pub fn find_seeds(gen: &[Sentence], suf: &[Sentence], cfg: &DetectorConfig) -> Vec<Seed> {
    let idf = sentence_idf(gen, suf);
    let gen_counts: Vec<BTreeMap<&str, f64>> = gen.iter().map(|s| token_counts(&s.tokens)).collect();
    let suf_counts: Vec<BTreeMap<&str, f64>> = suf.iter().map(|s| token_counts(&s.tokens)).collect();
    let mut seeds = Vec::new();
    for (i, gs) in gen.iter().enumerate() {
        for (j, ss) in suf.iter().enumerate() {
            if dice(&gs.tokens, &ss.tokens) < cfg.seed_dice_min {
                continue;
            }
            let cosine = weighted_cosine(&gen_counts[i], &suf_counts[j], &idf);
            if cosine >= cfg.seed_cosine_min {
                seeds.push(Seed {
                    gen_idx: i,
                    suf_idx: j,
                    cosine,
                });
            }
        }
    }
    seeds
}

// ---------------------------------------------------------------------------
// Extension
// ---------------------------------------------------------------------------

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, i: usize) -> usize {
        if self.0[i] != i {
            let root = self.find(self.0[i]);
            self.0[i] = root;
        }
        self.0[i]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Clusters seeds within `max_gap_sentences` on both texts (single linkage),
/// forms the covering character spans of each cluster, and keeps a cluster
/// iff the covered fragments' cosine clears `passage_cosine_min` and both
/// spans reach `min_match_chars` characters.
pub fn extend_seeds(
    gen_text: &str,
    suf_text: &str,
    gen: &[Sentence],
    suf: &[Sentence],
    seeds: &[Seed],
    cfg: &DetectorConfig,
) -> Vec<AlignmentSpan> {
    if seeds.is_empty() {
        return Vec::new();
    }
    let gap = cfg.max_gap_sentences;
    let mut uf = UnionFind::new(seeds.len());
    for i in 0..seeds.len() {
        for j in i + 1..seeds.len() {
            let dg = seeds[i].gen_idx.abs_diff(seeds[j].gen_idx);
            let ds = seeds[i].suf_idx.abs_diff(seeds[j].suf_idx);
            if dg <= gap && ds <= gap {
                uf.union(i, j);
            }
        }
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..seeds.len() {
        let root = uf.find(i);
        clusters.entry(root).or_default().push(i);
    }
    let idf = sentence_idf(gen, suf);
    let mut spans = Vec::new();
    for members in clusters.values() {
        let gen_range = cover_range(members.iter().map(|&m| &gen[seeds[m].gen_idx].range));
        let suf_range = cover_range(members.iter().map(|&m| &suf[seeds[m].suf_idx].range));
        let gen_slice = &gen_text[gen_range.clone()];
        let suf_slice = &suf_text[suf_range.clone()];
        if gen_slice.chars().count() < cfg.min_match_chars
            || suf_slice.chars().count() < cfg.min_match_chars
        {
            continue;
        }
        let ga = tokenize(gen_slice);
        let sa = tokenize(suf_slice);
        let cosine = weighted_cosine(&token_counts(&ga), &token_counts(&sa), &idf);
        if cosine < cfg.passage_cosine_min {
            continue;
        }
        let mut ordered = members.clone();
        ordered.sort_by_key(|&m| (seeds[m].gen_idx, seeds[m].suf_idx));
        spans.push(AlignmentSpan {
            gen_range,
            suf_range,
            seed_cosines: ordered.iter().map(|&m| seeds[m].cosine).collect(),
        });
    }
    spans.sort_by_key(|s| (s.gen_range.start, s.suf_range.start));
    spans
}

fn cover_range<'a>(ranges: impl Iterator<Item = &'a Range<usize>>) -> Range<usize> {
    let mut start = usize::MAX;
    let mut end = 0usize;
    for r in ranges {
        start = start.min(r.start);
        end = end.max(r.end);
    }
    start..end
}

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

/// Full verdict for one (generation, suffix) pair: seeded alignment spans
/// plus the pure-verbatim probe, each categorized. Per span: verbatim when
/// its own common substring reaches the threshold, else idea when the
/// shorter side is at most `idea_length_ratio` of the longer, else
/// paraphrase with confidence = mean seed cosine.
pub fn classify(gen: &str, suffix: &str, cfg: &DetectorConfig) -> DetectionResult {
    let gen_sents = split_sentences(gen);
    let suf_sents = split_sentences(suffix);
    let seeds = find_seeds(&gen_sents, &suf_sents, cfg);
    // (span, known verbatim): the probe span passed the threshold already,
    // so it needs no re-check (which would drop its boundary whitespace).
    let mut raw: Vec<(AlignmentSpan, bool)> =
        extend_seeds(gen, suffix, &gen_sents, &suf_sents, &seeds, cfg)
            .into_iter()
            .map(|s| (s, false))
            .collect();
    if let Some(probe) = verbatim_probe(gen, suffix, cfg.min_match_chars) {
        if !raw.iter().any(|(s, _)| *s == probe) {
            raw.push((probe, true));
        }
    }
    if raw.is_empty() {
        return DetectionResult::no_match();
    }
    let mut spans = Vec::with_capacity(raw.len());
    let mut categories = BTreeSet::new();
    let mut confidence: Option<f64> = None;
    for (span, known_verbatim) in raw {
        let gen_slice = &gen[span.gen_range.clone()];
        let suf_slice = &suffix[span.suf_range.clone()];
        let (category, p) = if known_verbatim
            || longest_common_substring_len(gen_slice, suf_slice) >= cfg.min_match_chars
        {
            (Category::Verbatim, None)
        } else {
            let lg = gen_slice.chars().count() as f64;
            let ls = suf_slice.chars().count() as f64;
            if lg.min(ls) <= cfg.idea_length_ratio * lg.max(ls) {
                (Category::Idea, None)
            } else {
                let p = if span.seed_cosines.is_empty() {
                    0.0
                } else {
                    span.seed_cosines.iter().sum::<f64>() / span.seed_cosines.len() as f64
                };
                let cat = if p > cfg.paraphrase_confidence_split {
                    Category::ParaphraseHigh
                } else {
                    Category::ParaphraseLow
                };
                (cat, Some(p))
            }
        };
        categories.insert(category);
        if let Some(p) = p {
            confidence = Some(confidence.map_or(p, |c: f64| c.max(p)));
        }
        spans.push(MatchSpan {
            span,
            category,
            confidence: p,
        });
    }
    DetectionResult {
        matched: true,
        categories,
        spans,
        confidence,
    }
}

/// Any-semantics over the retrieved candidates: true iff at least one
/// candidate suffix matches. All per-candidate results come back for the
/// breakdown reporting.
pub fn discriminate(
    gen: &str,
    candidate_suffixes: &[&str],
    cfg: &DetectorConfig,
) -> (bool, Vec<DetectionResult>) {
    let results: Vec<DetectionResult> = candidate_suffixes
        .iter()
        .map(|s| classify(gen, s, cfg))
        .collect();
    (results.iter().any(|r| r.matched), results)
}
