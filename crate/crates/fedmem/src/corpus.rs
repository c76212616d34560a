//! Data model, tokenization, prefix/suffix splitting, chat-template
//! formatting, and non-IID partitioning of records into client datasets.
//!
//! Corpus files are line-delimited JSON records, one [`Sample`] per line
//! (UTF-8, LF). All operations here are pure functions over immutable data.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Dirichlet, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One training record: raw text plus the client it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    /// Client index in `0..L`. Defaults to 0 for un-partitioned corpora.
    #[serde(default)]
    pub client: usize,
    pub text: String,
    /// Class label, required for Dirichlet partitioning.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Named segments ("abstract", "title", ...) consumed by chat templates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fields: Option<BTreeMap<String, String>>,
}

impl Sample {
    pub fn new(id: impl Into<String>, client: usize, text: impl Into<String>) -> Self {
        Sample {
            id: id.into(),
            client,
            text: text.into(),
            label: None,
            fields: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::Data(format!("sample `{}` has empty text", self.id)));
        }
        Ok(())
    }
}

/// A client's full local corpus, in ingestion order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientDataset {
    pub client: usize,
    pub samples: Vec<Sample>,
}

impl ClientDataset {
    pub fn new(client: usize, samples: Vec<Sample>) -> Self {
        debug_assert!(samples.iter().all(|s| s.client == client));
        ClientDataset { client, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// One audited prefix/suffix pair drawn from a sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub sample_id: String,
    pub prefix_tokens: Vec<String>,
    /// Raw text of the prefix region (original casing and spacing).
    pub prefix_text: String,
    /// Raw character remainder after the prefix, with leading whitespace
    /// trimmed. The detector's character thresholds operate on this surface
    /// form, so it is never re-detokenized.
    pub suffix_text: String,
}

/// The sampled prefixes and suffixes of one client that feed the audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSet {
    pub client: usize,
    pub prefix_len: usize,
    /// Sorted by `sample_id`.
    pub entries: Vec<EvalEntry>,
}

/// How records are spread across clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    /// Each distinct group value goes to one client, round-robin in sorted
    /// group order.
    ByGroup,
    /// Per label class, client proportions are drawn from Dirichlet(alpha).
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartitionConfig {
    pub mode: PartitionMode,
    pub num_clients: usize,
    /// Dirichlet concentration; 5.0 gives mildly non-IID splits.
    pub alpha: f64,
    pub seed: u64,
    /// Field naming the group in `by_group` mode; "label" uses the label.
    pub group_key: String,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            mode: PartitionMode::ByGroup,
            num_clients: 3,
            alpha: 5.0,
            seed: 0,
            group_key: "label".to_string(),
        }
    }
}

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

/// Lowercases one char, keeping chars whose lowercase expands to multiple
/// chars (only U+0130) as-is so token boundaries survive re-tokenization.
fn lowercase_char(c: char, out: &mut String) {
    let mut it = c.to_lowercase();
    match (it.next(), it.next()) {
        (Some(l), None) => out.push(l),
        _ => out.push(c),
    }
}

fn lowercase_str(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        lowercase_char(c, &mut out);
    }
    out
}

/// Tokenizes `text` and reports each token's byte range in the original.
///
/// Rules: split on unicode whitespace; leading and trailing non-alphanumeric
/// chars of each word become their own single-char tokens; everything is
/// lowercased. Empty text yields an empty list.
pub fn tokenize_spans(text: &str) -> Vec<(String, Range<usize>)> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                split_word(text, s..i, &mut out);
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        split_word(text, s..text.len(), &mut out);
    }
    out
}

fn split_word(text: &str, range: Range<usize>, out: &mut Vec<(String, Range<usize>)>) {
    let word = &text[range.clone()];
    let chars: Vec<(usize, char)> = word.char_indices().collect();
    let mut lo = 0;
    let mut hi = chars.len();
    while lo < hi && !chars[lo].1.is_alphanumeric() {
        lo += 1;
    }
    while hi > lo && !chars[hi - 1].1.is_alphanumeric() {
        hi -= 1;
    }
    let abs = |ci: usize| range.start + chars[ci].0;
    let char_end = |ci: usize| range.start + chars[ci].0 + chars[ci].1.len_utf8();
    for ci in 0..lo {
        let mut tok = String::new();
        lowercase_char(chars[ci].1, &mut tok);
        out.push((tok, abs(ci)..char_end(ci)));
    }
    if lo < hi {
        let span = abs(lo)..char_end(hi - 1);
        out.push((lowercase_str(&text[span.clone()]), span));
    }
    for ci in hi..chars.len() {
        let mut tok = String::new();
        lowercase_char(chars[ci].1, &mut tok);
        out.push((tok, abs(ci)..char_end(ci)));
    }
}

/// Lowercased word/punctuation tokens; see [`tokenize_spans`] for the rules.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_spans(text).into_iter().map(|(t, _)| t).collect()
}

/// Joins tokens with single spaces. `tokenize(detokenize(toks)) == toks`
/// for any tokenizer output.
pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

// ---------------------------------------------------------------------------
// Prefix/suffix splitting
// ---------------------------------------------------------------------------

/// Splits a sample into a `prefix_len`-token prefix and the raw character
/// remainder. Returns `None` when the sample has at most `prefix_len` tokens;
/// short samples are excluded, never padded.
pub fn split_prefix_suffix(sample: &Sample, prefix_len: usize) -> Result<Option<EvalEntry>> {
    if prefix_len == 0 {
        return Err(Error::InvalidArgument("prefix_len must be >= 1".into()));
    }
    let spans = tokenize_spans(&sample.text);
    if spans.len() <= prefix_len {
        return Ok(None);
    }
    let prefix_end = spans[prefix_len - 1].1.end;
    let entry = EvalEntry {
        sample_id: sample.id.clone(),
        prefix_tokens: spans[..prefix_len].iter().map(|(t, _)| t.clone()).collect(),
        prefix_text: sample.text[spans[0].1.start..prefix_end].to_string(),
        suffix_text: sample.text[prefix_end..].trim_start().to_string(),
    };
    Ok(Some(entry))
}

// ---------------------------------------------------------------------------
// Chat templates
// ---------------------------------------------------------------------------

/// Task selecting which chat template formats a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateTask {
    Summarization,
    Dialog,
    Qa,
    Classification,
}

impl TemplateTask {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "summarization" => Ok(TemplateTask::Summarization),
            "dialog" => Ok(TemplateTask::Dialog),
            "qa" => Ok(TemplateTask::Qa),
            "classification" => Ok(TemplateTask::Classification),
            other => Err(Error::InvalidArgument(format!("unknown task `{other}`"))),
        }
    }
}

fn template_field<'a>(sample: &'a Sample, name: &str) -> Result<&'a str> {
    sample
        .fields
        .as_ref()
        .and_then(|f| f.get(name))
        .map(String::as_str)
        .ok_or_else(|| Error::MissingField(name.to_string()))
}

/// Renders the user/assistant chat text for a task. Byte-stable across runs;
/// missing fields raise [`Error::MissingField`] naming the field.
pub fn apply_template(sample: &Sample, task: TemplateTask) -> Result<String> {
    let text = match task {
        TemplateTask::Summarization => format!(
            "User: Please summarize the following abstract into a title.\n{}\n\nAssistant: {}",
            template_field(sample, "abstract")?,
            template_field(sample, "title")?
        ),
        TemplateTask::Dialog => format!(
            "User: If you are a doctor, please answer the medical questions based on the patient\u{2019}s description.\n{}\n\nAssistant: {}",
            template_field(sample, "patient")?,
            template_field(sample, "doctor")?
        ),
        TemplateTask::Qa => format!(
            "User: {}\n{}\n\nAssistant: {}",
            template_field(sample, "question")?,
            template_field(sample, "context")?,
            template_field(sample, "answer")?
        ),
        TemplateTask::Classification => format!(
            "User: Please classify the following passage into one of the following categories: BACKGROUND, OBJECTIVE, METHODS, RESULTS, or CONCLUSIONS.\n{}\n\nAssistant: {}",
            template_field(sample, "passage")?,
            template_field(sample, "class")?
        ),
    };
    Ok(text)
}

// ---------------------------------------------------------------------------
// Partitioning
// ---------------------------------------------------------------------------

fn group_value<'a>(record: &'a Sample, key: &str) -> Option<&'a str> {
    if key == "label" {
        record.label.as_deref()
    } else {
        record.fields.as_ref().and_then(|f| f.get(key)).map(String::as_str)
    }
}

/// Spreads records across `cfg.num_clients` clients. The union of the output
/// equals the input (no loss, no duplication) and each sample's `client`
/// field is rewritten to its assigned index. Pure function of
/// `(records, cfg)`.
pub fn partition(records: &[Sample], cfg: &PartitionConfig) -> Result<Vec<ClientDataset>> {
    if cfg.num_clients < 2 {
        return Err(Error::InvalidArgument("num_clients must be >= 2".into()));
    }
    let assignment = match cfg.mode {
        PartitionMode::ByGroup => assign_by_group(records, cfg)?,
        PartitionMode::Dirichlet => assign_dirichlet(records, cfg)?,
    };
    let mut per_client: Vec<Vec<Sample>> = vec![Vec::new(); cfg.num_clients];
    for (record, &client) in records.iter().zip(assignment.iter()) {
        let mut sample = record.clone();
        sample.client = client;
        per_client[client].push(sample);
    }
    Ok(per_client
        .into_iter()
        .enumerate()
        .map(|(client, samples)| ClientDataset { client, samples })
        .collect())
}

fn assign_by_group(records: &[Sample], cfg: &PartitionConfig) -> Result<Vec<usize>> {
    let mut groups: BTreeSet<&str> = BTreeSet::new();
    for record in records {
        let value = group_value(record, &cfg.group_key).ok_or_else(|| {
            Error::InvalidPartition(format!(
                "record `{}` is missing group key `{}`",
                record.id, cfg.group_key
            ))
        })?;
        groups.insert(value);
    }
    if groups.len() < cfg.num_clients {
        return Err(Error::InvalidPartition(format!(
            "{} distinct groups cannot cover {} clients",
            groups.len(),
            cfg.num_clients
        )));
    }
    let client_of: BTreeMap<&str, usize> = groups
        .iter()
        .enumerate()
        .map(|(i, &g)| (g, i % cfg.num_clients))
        .collect();
    Ok(records
        .iter()
        .map(|r| client_of[group_value(r, &cfg.group_key).unwrap()])
        .collect())
}

fn assign_dirichlet(records: &[Sample], cfg: &PartitionConfig) -> Result<Vec<usize>> {
    if cfg.alpha <= 0.0 {
        return Err(Error::InvalidArgument("alpha must be positive".into()));
    }
    let mut classes: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, record) in records.iter().enumerate() {
        let label = record.label.as_deref().ok_or_else(|| {
            Error::InvalidPartition(format!(
                "dirichlet mode requires labels; record `{}` has none",
                record.id
            ))
        })?;
        classes.entry(label).or_default().push(i);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let dirichlet = Dirichlet::new_with_size(cfg.alpha, cfg.num_clients)
        .map_err(|e| Error::InvalidArgument(format!("dirichlet: {e}")))?;
    let mut assignment = vec![0usize; records.len()];
    for indices in classes.values() {
        let proportions = dirichlet.sample(&mut rng);
        let counts = largest_remainder_counts(&proportions, indices.len());
        let mut cursor = 0usize;
        for (client, &count) in counts.iter().enumerate() {
            for &record_idx in &indices[cursor..cursor + count] {
                assignment[record_idx] = client;
            }
            cursor += count;
        }
    }
    Ok(assignment)
}

/// Maps simplex proportions to integer counts summing to `total`. Floors the
/// quotas, then hands the leftover units to the largest fractional remainders
/// (ties to the lower client index).
fn largest_remainder_counts(proportions: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = Vec::with_capacity(proportions.len());
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(proportions.len());
    let mut assigned = 0usize;
    for (i, &p) in proportions.iter().enumerate() {
        let quota = p * total as f64;
        let base = quota.floor() as usize;
        counts.push(base);
        assigned += base;
        remainders.push((i, quota - base as f64));
    }
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for &(i, _) in remainders.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

// ---------------------------------------------------------------------------
// Eval-set sampling
// ---------------------------------------------------------------------------

/// Uniformly samples (without replacement) up to `n` eligible records and
/// splits each into a prefix/suffix pair. Eligible means strictly more than
/// `prefix_len` tokens. Entries come back sorted by sample id, so the result
/// is a pure function of `(dataset, n, prefix_len, seed)`.
pub fn sample_eval_set(
    dataset: &ClientDataset,
    n: usize,
    prefix_len: usize,
    seed: u64,
) -> Result<EvalSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    if prefix_len == 0 {
        return Err(Error::InvalidArgument("prefix_len must be >= 1".into()));
    }
    let mut eligible: Vec<EvalEntry> = Vec::new();
    for sample in &dataset.samples {
        if let Some(entry) = split_prefix_suffix(sample, prefix_len)? {
            eligible.push(entry);
        }
    }
    if eligible.is_empty() {
        return Err(Error::EmptyEvalSet(format!(
            "client {} has no sample longer than {} tokens",
            dataset.client, prefix_len
        )));
    }
    let take = n.min(eligible.len());
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let chosen = rand::seq::index::sample(&mut rng, eligible.len(), take);
    let mut entries: Vec<EvalEntry> = chosen.into_iter().map(|i| eligible[i].clone()).collect();
    entries.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(EvalSet {
        client: dataset.client,
        prefix_len,
        entries,
    })
}

// ---------------------------------------------------------------------------
// Corpus ingestion (line-delimited JSON)
// ---------------------------------------------------------------------------

/// Reads one sample per line, enforcing unique ids and non-empty text.
pub fn read_samples<R: BufRead>(reader: R) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("line {}: {e}", lineno + 1)))?;
        sample.validate()?;
        if !seen.insert(sample.id.clone()) {
            return Err(Error::Data(format!("duplicate sample id `{}`", sample.id)));
        }
        samples.push(sample);
    }
    Ok(samples)
}

pub fn read_samples_from_path(path: &Path) -> Result<Vec<Sample>> {
    let file = std::fs::File::open(path)?;
    read_samples(std::io::BufReader::new(file))
}

pub fn write_samples<W: Write>(mut writer: W, samples: &[Sample]) -> Result<()> {
    for sample in samples {
        serde_json::to_writer(&mut writer, sample)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Groups pre-partitioned samples into per-client datasets, preserving
/// ingestion order. `num_clients` of `None` infers L as max client index + 1.
pub fn group_into_clients(samples: Vec<Sample>, num_clients: Option<usize>) -> Result<Vec<ClientDataset>> {
    let inferred = samples.iter().map(|s| s.client + 1).max().unwrap_or(0);
    let l = num_clients.unwrap_or(inferred);
    if l == 0 {
        return Err(Error::EmptyDataset("no samples to group".into()));
    }
    let mut per_client: Vec<Vec<Sample>> = vec![Vec::new(); l];
    for sample in samples {
        if sample.client >= l {
            return Err(Error::Data(format!(
                "sample `{}` has client {} but only {} clients are configured",
                sample.id, sample.client, l
            )));
        }
        let client = sample.client;
        per_client[client].push(sample);
    }
    Ok(per_client
        .into_iter()
        .enumerate()
        .map(|(client, samples)| ClientDataset { client, samples })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_with_fields(id: &str, pairs: &[(&str, &str)]) -> Sample {
        let mut s = Sample::new(id, 0, "placeholder");
        s.fields = Some(
            pairs
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        );
        s
    }

    #[test]
    fn tokenize_empty_is_empty() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("   \t\n").is_empty());
    }

    #[test]
    fn tokenize_splits_edge_punctuation() {
        assert_eq!(tokenize("Hello, world"), vec!["hello", ",", "world"]);
        assert_eq!(tokenize("(see Fig. 2)"), vec!["(", "see", "fig", ".", "2", ")"]);
        assert_eq!(tokenize("co-op stays"), vec!["co-op", "stays"]);
        assert_eq!(tokenize("..."), vec![".", ".", "."]);
    }

    #[test]
    fn tokenize_spans_slice_back() {
        let text = "  Ab, cd!  ee";
        for (tok, span) in tokenize_spans(text) {
            assert_eq!(lowercase_str(&text[span]), tok);
        }
    }

    #[test]
    fn split_prefix_suffix_basic() {
        let s = Sample::new("x", 0, "a b c d");
        let entry = split_prefix_suffix(&s, 2).unwrap().unwrap();
        assert_eq!(entry.prefix_text, "a b");
        assert_eq!(entry.suffix_text, "c d");
        assert_eq!(entry.prefix_tokens, vec!["a", "b"]);
    }

    #[test]
    fn split_prefix_suffix_too_short() {
        let s = Sample::new("x", 0, "one two three four five");
        assert!(split_prefix_suffix(&s, 10).unwrap().is_none());
        // Exactly prefix_len tokens is still too short: the suffix would be empty.
        assert!(split_prefix_suffix(&s, 5).unwrap().is_none());
        assert!(matches!(
            split_prefix_suffix(&s, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn split_prefix_suffix_token_counts() {
        // 40 single-word tokens, prefix 30 -> suffix re-tokenizes to 10.
        let words: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
        let s = Sample::new("x", 0, words.join(" "));
        let entry = split_prefix_suffix(&s, 30).unwrap().unwrap();
        assert_eq!(tokenize(&entry.suffix_text).len(), 10);
        assert_eq!(entry.prefix_tokens.len(), 30);
    }

    #[test]
    fn template_summarization_and_dialog() {
        let s = sample_with_fields("a", &[("abstract", "X"), ("title", "Y")]);
        let text = apply_template(&s, TemplateTask::Summarization).unwrap();
        let a = text.find("Please summarize the following abstract into a title.").unwrap();
        let x = text.find("\nX").unwrap();
        let y = text.find("Assistant: Y").unwrap();
        assert!(a < x && x < y);

        let d = sample_with_fields("b", &[("patient", "P"), ("doctor", "D")]);
        let text = apply_template(&d, TemplateTask::Dialog).unwrap();
        assert!(text.contains("If you are a doctor, please answer the medical questions"));
        assert!(text.contains("\nP\n\nAssistant: D"));
    }

    #[test]
    fn template_missing_field() {
        let s = sample_with_fields("a", &[("question", "Q"), ("answer", "A")]);
        match apply_template(&s, TemplateTask::Qa) {
            Err(Error::MissingField(f)) => assert_eq!(f, "context"),
            other => panic!("expected MissingField, got {other:?}"),
        }
    }

    fn labeled(id: usize, label: &str) -> Sample {
        let mut s = Sample::new(format!("s{id}"), 0, format!("text {id}"));
        s.label = Some(label.to_string());
        s
    }

    #[test]
    fn by_group_one_group_per_client() {
        let records: Vec<Sample> = (0..9)
            .map(|i| labeled(i, ["astro", "cond", "math"][i % 3]))
            .collect();
        let cfg = PartitionConfig {
            mode: PartitionMode::ByGroup,
            num_clients: 3,
            ..PartitionConfig::default()
        };
        let clients = partition(&records, &cfg).unwrap();
        for ds in &clients {
            let labels: BTreeSet<_> = ds.samples.iter().map(|s| s.label.clone()).collect();
            assert_eq!(labels.len(), 1);
            assert_eq!(ds.len(), 3);
            assert!(ds.samples.iter().all(|s| s.client == ds.client));
        }
    }

    #[test]
    fn by_group_too_few_groups() {
        let records: Vec<Sample> = (0..4).map(|i| labeled(i, "only")).collect();
        let cfg = PartitionConfig {
            mode: PartitionMode::ByGroup,
            num_clients: 2,
            ..PartitionConfig::default()
        };
        assert!(matches!(
            partition(&records, &cfg),
            Err(Error::InvalidPartition(_))
        ));
    }

    #[test]
    fn dirichlet_deterministic_and_lossless() {
        let records: Vec<Sample> = (0..50)
            .map(|i| labeled(i, ["yes", "no", "maybe"][i % 3]))
            .collect();
        let cfg = PartitionConfig {
            mode: PartitionMode::Dirichlet,
            num_clients: 3,
            alpha: 5.0,
            seed: 7,
            ..PartitionConfig::default()
        };
        let a = partition(&records, &cfg).unwrap();
        let b = partition(&records, &cfg).unwrap();
        assert_eq!(a, b);
        let mut ids: Vec<_> = a
            .iter()
            .flat_map(|d| d.samples.iter().map(|s| s.id.clone()))
            .collect();
        ids.sort();
        let mut expected: Vec<_> = records.iter().map(|s| s.id.clone()).collect();
        expected.sort();
        assert_eq!(ids, expected);
    }

    #[test]
    fn dirichlet_requires_labels() {
        let records = vec![Sample::new("a", 0, "t"), Sample::new("b", 0, "t")];
        let cfg = PartitionConfig {
            mode: PartitionMode::Dirichlet,
            num_clients: 2,
            ..PartitionConfig::default()
        };
        assert!(matches!(
            partition(&records, &cfg),
            Err(Error::InvalidPartition(_))
        ));
    }

    #[test]
    fn largest_remainder_preserves_total() {
        let counts = largest_remainder_counts(&[0.5, 0.3, 0.2], 7);
        assert_eq!(counts.iter().sum::<usize>(), 7);
        let counts = largest_remainder_counts(&[1.0 / 3.0; 3], 10);
        assert_eq!(counts.iter().sum::<usize>(), 10);
    }

    #[test]
    fn eval_set_clamps_and_sorts() {
        let samples: Vec<Sample> = (0..10)
            .map(|i| {
                Sample::new(
                    format!("s{:02}", 9 - i),
                    0,
                    "one two three four five six seven eight",
                )
            })
            .collect();
        let ds = ClientDataset::new(0, samples);
        let eval = sample_eval_set(&ds, 4000, 3, 42).unwrap();
        assert_eq!(eval.entries.len(), 10);
        let ids: Vec<_> = eval.entries.iter().map(|e| e.sample_id.clone()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
        assert!(eval.entries.iter().all(|e| e.prefix_tokens.len() == 3));
    }

    #[test]
    fn eval_set_deterministic() {
        let samples: Vec<Sample> = (0..60)
            .map(|i| Sample::new(format!("s{i:03}"), 0, format!("a b c d e f g h marker{i}")))
            .collect();
        let ds = ClientDataset::new(0, samples);
        let a = sample_eval_set(&ds, 20, 4, 99).unwrap();
        let b = sample_eval_set(&ds, 20, 4, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.entries.len(), 20);
        let c = sample_eval_set(&ds, 20, 4, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn eval_set_empty_errors() {
        let ds = ClientDataset::new(1, vec![Sample::new("a", 1, "too short")]);
        assert!(matches!(
            sample_eval_set(&ds, 10, 30, 0),
            Err(Error::EmptyEvalSet(_))
        ));
    }

    #[test]
    fn jsonl_roundtrip_and_duplicate_ids() {
        let mut s = Sample::new("a", 1, "hello world");
        s.label = Some("yes".into());
        let samples = vec![s, Sample::new("b", 0, "more text here")];
        let mut buf = Vec::new();
        write_samples(&mut buf, &samples).unwrap();
        let back = read_samples(&buf[..]).unwrap();
        assert_eq!(back, samples);

        let dup = b"{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n";
        assert!(matches!(read_samples(&dup[..]), Err(Error::Data(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        // detokenize(tokenize(t)) re-tokenizes to tokenize(t).
        #[test]
        fn tokenize_roundtrip(text in "\\PC{0,60}") {
            let tokens = tokenize(&text);
            let rejoined = detokenize(&tokens);
            prop_assert_eq!(tokenize(&rejoined), tokens);
        }

        // Partition preserves the multiset of record ids for all modes/seeds.
        #[test]
        fn partition_preserves_ids(seed in 0u64..1000, n in 4usize..40) {
            let records: Vec<Sample> = (0..n)
                .map(|i| labeled(i, ["a", "b", "c", "d"][i % 4]))
                .collect();
            for mode in [PartitionMode::ByGroup, PartitionMode::Dirichlet] {
                let cfg = PartitionConfig {
                    mode,
                    num_clients: 2,
                    alpha: 5.0,
                    seed,
                    ..PartitionConfig::default()
                };
                let parts = partition(&records, &cfg).unwrap();
                let mut ids: Vec<String> = parts
                    .iter()
                    .flat_map(|d| d.samples.iter().map(|s| s.id.clone()))
                    .collect();
                ids.sort();
                let mut expected: Vec<String> = records.iter().map(|s| s.id.clone()).collect();
                expected.sort();
                prop_assert_eq!(ids, expected);
            }
        }

        // Every eval entry has exactly prefix_len prefix tokens and a
        // non-empty suffix.
        #[test]
        fn eval_entries_exact_prefix(prefix_len in 1usize..6, seed in 0u64..100) {
            let samples: Vec<Sample> = (0..20)
                .map(|i| Sample::new(format!("s{i:02}"), 0, format!("w0 w1 w2 w3 w4 w5 end{i}")))
                .collect();
            let ds = ClientDataset::new(0, samples);
            let eval = sample_eval_set(&ds, 50, prefix_len, seed).unwrap();
            for e in &eval.entries {
                prop_assert_eq!(e.prefix_tokens.len(), prefix_len);
                prop_assert!(!e.suffix_text.is_empty());
                prop_assert_eq!(tokenize(&e.prefix_text), e.prefix_tokens.clone());
            }
        }
    }
}
