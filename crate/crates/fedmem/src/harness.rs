//! Pipeline orchestration: configuration schema, the
//! train/sample/generate/retrieve/discriminate audit, trial averaging,
//! generation caching, ablation sweeps, and report emission.
//!
//! Every output is a pure function of (corpus bytes, config, seed). Stages
//! fan work out to a bounded rayon pool; all shared state is immutable
//! during fan-out and results are collected in id order, so worker count
//! never changes a byte of output.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{sample_eval_set, ClientDataset, EvalSet, PartitionConfig};
use crate::detector::{classify, Category, DetectorConfig, MatchSpan};
use crate::error::{Error, Result};
use crate::flsim::{
    data_size_weights, train_centralized, train_federated, Algorithm, ClientWeight, NGramModel,
    TrainConfig,
};
use crate::generate::{
    derive_stream_seed, generate, read_generation_cache, write_generation_cache, CacheRecord,
    DecodingConfig, GenerationBackend, HttpBackend, NGramBackend, Prompt, Strategy,
};
use crate::index::{Bm25Params, SuffixIndex};
use crate::metrics::{
    category_breakdown, exact_match_accuracy, mr_inter, mr_intra, mr_total, pair_matrix, rouge_l,
    CategorySlice, MemReport, PairResult, Regime, REPORT_FORMAT_VERSION,
};

/// An audit aborts when more than this fraction of generations fail, which
/// signals backend misconfiguration rather than scattered flakiness.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    /// Eval sample size per client (clamps to the eligible count).
    pub n: usize,
    /// Retrieval depth per generation.
    pub n_prime: usize,
    /// Prefix length in tokens.
    pub prefix_len: usize,
    pub trials: usize,
    pub seed: u64,
    /// Worker threads for the generate and detect stages; 0 uses the
    /// process-wide default pool.
    pub workers: usize,
    pub decoding: DecodingConfig,
    pub train: TrainConfig,
    pub partition: PartitionConfig,
    pub detector: DetectorConfig,
    pub bm25: Bm25Params,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            n: 4000,
            n_prime: 10,
            prefix_len: 30,
            trials: 3,
            seed: 0,
            workers: 0,
            decoding: DecodingConfig::default(),
            train: TrainConfig::default(),
            partition: PartitionConfig::default(),
            detector: DetectorConfig::default(),
            bm25: Bm25Params::default(),
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be >= 1".into()));
        }
        if self.n_prime == 0 {
            return Err(Error::Config("n_prime must be >= 1".into()));
        }
        if self.prefix_len == 0 {
            return Err(Error::Config("prefix_len must be >= 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        self.decoding.validate().map_err(config_err)?;
        self.train.validate().map_err(config_err)?;
        self.detector.validate().map_err(config_err)?;
        Ok(())
    }
}

fn config_err(e: Error) -> Error {
    Error::Config(e.to_string())
}

/// Which model(s) to audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeChoice {
    Fl,
    Cl,
    Both,
}

impl RegimeChoice {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fl" => Ok(RegimeChoice::Fl),
            "cl" => Ok(RegimeChoice::Cl),
            "both" => Ok(RegimeChoice::Both),
            other => Err(Error::Config(format!("unknown regime `{other}`"))),
        }
    }

    fn regimes(&self) -> Vec<Regime> {
        match self {
            RegimeChoice::Fl => vec![Regime::Fl],
            RegimeChoice::Cl => vec![Regime::Cl],
            RegimeChoice::Both => vec![Regime::Fl, Regime::Cl],
        }
    }
}

/// Generation backend selection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Builtin,
    Http(String),
}

impl BackendSpec {
    pub fn parse(kind: &str, url: Option<&str>) -> Result<Self> {
        match kind {
            "builtin" => Ok(BackendSpec::Builtin),
            "http" => url
                .map(|u| BackendSpec::Http(u.to_string()))
                .ok_or_else(|| Error::Config("http backend needs a url".into())),
            other => Err(Error::Config(format!("unknown backend `{other}`"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Config file + environment overrides
// ---------------------------------------------------------------------------

const ENV_PREFIX: &str = "FEDMEM_";

fn section_keys(section: &str) -> Option<&'static [&'static str]> {
    match section {
        "audit" => Some(&["n", "n_prime", "prefix_len", "trials", "seed", "workers"]),
        "decoding" => Some(&["strategy", "temperature", "k", "p", "max_new_tokens", "seed"]),
        "train" => Some(&["algorithm", "rounds", "mu", "order", "smoothing_lambda"]),
        "partition" => Some(&["mode", "num_clients", "alpha", "seed", "group_key"]),
        "detector" => Some(&[
            "min_match_chars",
            "seed_cosine_min",
            "seed_dice_min",
            "max_gap_sentences",
            "passage_cosine_min",
            "idea_length_ratio",
            "paraphrase_confidence_split",
        ]),
        "bm25" => Some(&["k1", "b", "query_token_limit"]),
        _ => None,
    }
}

/// Applies FEDMEM_<SECTION>_<KEY> overrides onto a JSON config value. The
/// `audit` section addresses top-level fields; values parse as JSON scalars
/// where possible, otherwise as strings.
pub fn apply_env_overrides(
    value: &mut serde_json::Value,
    vars: impl Iterator<Item = (String, String)>,
) -> Result<()> {
    let mut sorted: Vec<(String, String)> = vars
        .filter(|(name, _)| name.starts_with(ENV_PREFIX))
        .collect();
    sorted.sort();
    for (name, raw) in sorted {
        let rest = &name[ENV_PREFIX.len()..];
        let (section, key) = rest
            .split_once('_')
            .ok_or_else(|| Error::Config(format!("malformed override `{name}`")))?;
        let section = section.to_ascii_lowercase();
        let key = key.to_ascii_lowercase();
        let keys = section_keys(&section)
            .ok_or_else(|| Error::Config(format!("unknown config section in `{name}`")))?;
        if !keys.contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown config key in `{name}`")));
        }
        let parsed: serde_json::Value = serde_json::from_str(&raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
        let object = value
            .as_object_mut()
            .ok_or_else(|| Error::Config("config root must be an object".into()))?;
        if section == "audit" {
            object.insert(key, parsed);
        } else {
            object
                .entry(section.clone())
                .or_insert_with(|| serde_json::Value::Object(Default::default()))
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("config section `{section}` must be an object")))?
                .insert(key, parsed);
        }
    }
    Ok(())
}

/// Loads the JSON config file (or defaults) and applies process-environment
/// overrides. CLI flags take final precedence and are applied by the caller.
pub fn load_config(path: Option<&Path>) -> Result<AuditConfig> {
    let mut value = match path {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => serde_json::Value::Object(Default::default()),
    };
    apply_env_overrides(&mut value, std::env::vars())?;
    let cfg: AuditConfig =
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Pipeline stages
// ---------------------------------------------------------------------------

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    if workers == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("worker pool")
            .install(f)
    }
}

/// Per-trial decoding config: the stream seed is derived from the trial seed
/// so trials are independent.
fn trial_decoding(cfg: &AuditConfig, trial_seed: u64) -> DecodingConfig {
    DecodingConfig {
        seed: derive_stream_seed(trial_seed, &["decode"]),
        ..cfg.decoding.clone()
    }
}

/// Samples every client's eval set for one trial.
pub fn sample_stage(
    cfg: &AuditConfig,
    clients: &[ClientDataset],
    trial_seed: u64,
) -> Result<Vec<EvalSet>> {
    clients
        .iter()
        .map(|c| {
            let seed = derive_stream_seed(trial_seed, &["eval", &c.client.to_string()]);
            sample_eval_set(c, cfg.n, cfg.prefix_len, seed)
                .map_err(|e| e.at_stage("sample", c.client, None))
        })
        .collect()
}

/// Prompts the backend with every sampled prefix, in parallel, and returns
/// cache records in (client, prefix id) order. Backend failures become
/// `failed` records; more than [`MAX_FAILURE_FRACTION`] of them aborts.
pub fn generate_stage(
    cfg: &AuditConfig,
    eval_sets: &[EvalSet],
    backend: &dyn GenerationBackend,
    decoding: &DecodingConfig,
) -> Result<Vec<CacheRecord>> {
    let prompts: Vec<(usize, &str, &str)> = eval_sets
        .iter()
        .flat_map(|set| {
            set.entries
                .iter()
                .map(move |e| (set.client, e.sample_id.as_str(), e.prefix_text.as_str()))
        })
        .collect();
    let outcomes: Vec<std::result::Result<CacheRecord, (usize, String, Error)>> =
        with_pool(cfg.workers, || {
            prompts
                .par_iter()
                .map(|&(client, id, text)| {
                    match generate(backend, Prompt { id, client, text }, decoding) {
                        Ok(gen) => Ok(CacheRecord::from_generation(&gen)),
                        Err(e @ Error::Backend { .. }) => Err((client, id.to_string(), e)),
                        Err(other) => Err((client, id.to_string(), other)),
                    }
                })
                .collect()
        });
    let total = outcomes.len();
    let mut records = Vec::with_capacity(total);
    let mut failed = 0usize;
    for outcome in outcomes {
        match outcome {
            Ok(record) => records.push(record),
            Err((client, id, Error::Backend { tag, cause })) => {
                log::warn!("generation failed for prefix {id} (client {client}): {cause}");
                failed += 1;
                records.push(CacheRecord::failure(&id, client, &tag, decoding));
            }
            Err((client, _, e)) => return Err(e.at_stage("generate", client, None)),
        }
    }
    if total > 0 && failed as f64 / total as f64 > MAX_FAILURE_FRACTION {
        return Err(Error::FailureThreshold {
            failed,
            total,
            limit_pct: MAX_FAILURE_FRACTION * 100.0,
        });
    }
    Ok(records)
}

/// Per-candidate evidence for a matched (generation, suffix) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub source: usize,
    pub target: usize,
    pub prefix_id: String,
    pub suffix_id: String,
    pub categories: BTreeSet<Category>,
    pub spans: Vec<MatchSpan>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

/// Retrieval + discrimination over cached generations. Reruns of this stage
/// from the same records reproduce the report byte for byte.
pub fn detection_stage(
    cfg: &AuditConfig,
    clients: &[ClientDataset],
    eval_sets: &[EvalSet],
    records: &[CacheRecord],
    regime: Regime,
) -> Result<(MemReport, Vec<EvidenceRecord>)> {
    let l = clients.len();
    let weights = resolve_report_weights(cfg, clients);
    let indexes: Vec<SuffixIndex> = eval_sets
        .iter()
        .map(|set| {
            SuffixIndex::from_eval_set(set, cfg.bm25)
                .map_err(|e| e.at_stage("index", set.client, None))
        })
        .collect::<Result<Vec<_>>>()?;
    let suffix_of: BTreeMap<(usize, &str), &str> = eval_sets
        .iter()
        .flat_map(|set| {
            set.entries
                .iter()
                .map(move |e| ((set.client, e.sample_id.as_str()), e.suffix_text.as_str()))
        })
        .collect();
    let label_of: BTreeMap<(usize, &str), Option<&str>> = clients
        .iter()
        .flat_map(|c| {
            c.samples
                .iter()
                .map(move |s| ((c.client, s.id.as_str()), s.label.as_deref()))
        })
        .collect();

    let mut filtered = 0usize;
    let mut failed = 0usize;
    let mut pairs: Vec<PairResult> = Vec::with_capacity(l * l);
    let mut evidence: Vec<EvidenceRecord> = Vec::new();
    let mut rouge_sum = 0.0f64;
    let mut rouge_count = 0usize;
    let mut label_pairs: Vec<(String, String)> = Vec::new();
    let mut all_labeled = true;

    for source in 0..l {
        let client_records: Vec<&CacheRecord> = records
            .iter()
            .filter(|r| r.source_client == source)
            .collect();
        failed += client_records.iter().filter(|r| r.failed).count();
        filtered += client_records.iter().filter(|r| !r.failed && r.filtered).count();
        let live: Vec<&CacheRecord> = client_records
            .iter()
            .copied()
            .filter(|r| !r.failed && !r.filtered)
            .collect();
        let evaluated: BTreeSet<String> = live.iter().map(|r| r.prefix_id.clone()).collect();
        for record in &live {
            let own_suffix = suffix_of
                .get(&(source, record.prefix_id.as_str()))
                .copied()
                .unwrap_or("");
            rouge_sum += rouge_l(&record.text, own_suffix);
            rouge_count += 1;
            match label_of.get(&(source, record.prefix_id.as_str())) {
                Some(Some(label)) => label_pairs.push((record.text.clone(), label.to_string())),
                _ => all_labeled = false,
            }
        }
        for (target, index) in indexes.iter().enumerate() {
            let verdicts: Vec<(String, Vec<(String, BTreeSet<Category>, Vec<MatchSpan>, Option<f64>)>)> =
                with_pool(cfg.workers, || {
                    live.par_iter()
                        .map(|record| {
                            let mut matches = Vec::new();
                            if !record.text.trim().is_empty() {
                                let hits = match index.query_top(&record.text, cfg.n_prime) {
                                    Ok(hits) => hits,
                                    Err(Error::EmptyQuery) => Vec::new(),
                                    Err(e) => {
                                        return Err(e.at_stage("retrieve", source, Some(target)))
                                    }
                                };
                                for (suffix_id, _) in hits {
                                    let suffix = suffix_of[&(target, suffix_id.as_str())];
                                    let result = classify(&record.text, suffix, &cfg.detector);
                                    if result.matched {
                                        matches.push((
                                            suffix_id,
                                            result.categories,
                                            result.spans,
                                            result.confidence,
                                        ));
                                    }
                                }
                            }
                            Ok((record.prefix_id.clone(), matches))
                        })
                        .collect::<Result<Vec<_>>>()
                })?;
            let mut memorizing: BTreeSet<String> = BTreeSet::new();
            let mut per_category: BTreeMap<Category, BTreeSet<String>> = BTreeMap::new();
            for (prefix_id, matches) in verdicts {
                for (suffix_id, categories, spans, confidence) in matches {
                    memorizing.insert(prefix_id.clone());
                    for category in &categories {
                        per_category
                            .entry(*category)
                            .or_default()
                            .insert(prefix_id.clone());
                    }
                    evidence.push(EvidenceRecord {
                        source,
                        target,
                        prefix_id: prefix_id.clone(),
                        suffix_id,
                        categories,
                        spans,
                        confidence,
                    });
                }
            }
            pairs.push(
                PairResult::new(source, target, evaluated.clone(), memorizing, per_category)
                    .map_err(|e| e.at_stage("detect", source, Some(target)))?,
            );
        }
    }

    let matrix = pair_matrix(&pairs, l)?;
    let report = MemReport {
        version: REPORT_FORMAT_VERSION,
        regime,
        l,
        mr_intra: mr_intra(&matrix, &weights)?,
        mr_inter: mr_inter(&matrix, &weights)?,
        mr_total: mr_total(&pairs)?,
        per_category: category_breakdown(&pairs, &weights)?,
        evaluated_prefixes: pairs
            .iter()
            .filter(|p| p.source == p.target)
            .map(|p| p.evaluated.len())
            .sum(),
        filtered_generations: filtered,
        failed_generations: failed,
        mean_rouge_l: if rouge_count == 0 {
            0.0
        } else {
            rouge_sum / rouge_count as f64
        },
        label_accuracy: (all_labeled && !label_pairs.is_empty()).then(|| {
            exact_match_accuracy(label_pairs.iter().map(|(g, r)| (g.as_str(), r.as_str())))
        }),
        weights,
        matrix,
        pairs,
    };
    evidence.sort_by(|a, b| {
        (a.source, a.target, &a.prefix_id, &a.suffix_id)
            .cmp(&(b.source, b.target, &b.prefix_id, &b.suffix_id))
    });
    Ok((report, evidence))
}

fn resolve_report_weights(cfg: &AuditConfig, clients: &[ClientDataset]) -> Vec<ClientWeight> {
    match &cfg.train.client_weights {
        Some(values) => clients
            .iter()
            .zip(values)
            .map(|(c, &weight)| ClientWeight {
                client: c.client,
                weight,
            })
            .collect(),
        None => data_size_weights(clients),
    }
}

// ---------------------------------------------------------------------------
// Trials, caching, and the full audit
// ---------------------------------------------------------------------------

/// One trial's outputs: the report, the cache records behind it, and the
/// per-match evidence dump.
#[derive(Debug, Clone)]
pub struct TrialArtifacts {
    pub report: MemReport,
    pub records: Vec<CacheRecord>,
    pub evidence: Vec<EvidenceRecord>,
    pub from_cache: bool,
}

fn cache_is_valid(
    records: &[CacheRecord],
    eval_sets: &[EvalSet],
    decoding: &DecodingConfig,
    backend_tag: &str,
) -> bool {
    let fingerprint = decoding.fingerprint();
    if !records
        .iter()
        .all(|r| r.decoding == fingerprint && r.backend_tag == backend_tag)
    {
        return false;
    }
    let mut expected: BTreeSet<(usize, &str)> = BTreeSet::new();
    for set in eval_sets {
        expected.extend(set.entries.iter().map(|e| (set.client, e.sample_id.as_str())));
    }
    let got: BTreeSet<(usize, &str)> = records
        .iter()
        .map(|r| (r.source_client, r.prefix_id.as_str()))
        .collect();
    got == expected && records.len() == expected.len()
}

/// Runs one trial under one regime, reusing `cached` records when they match
/// the expected fingerprint and prefix set.
pub fn run_trial(
    cfg: &AuditConfig,
    clients: &[ClientDataset],
    backend: &dyn GenerationBackend,
    regime: Regime,
    trial_seed: u64,
    cached: Option<&[CacheRecord]>,
) -> Result<TrialArtifacts> {
    let eval_sets = sample_stage(cfg, clients, trial_seed)?;
    let decoding = trial_decoding(cfg, trial_seed);
    let (records, from_cache) = match cached {
        Some(records) if cache_is_valid(records, &eval_sets, &decoding, backend.tag()) => {
            (records.to_vec(), true)
        }
        _ => (generate_stage(cfg, &eval_sets, backend, &decoding)?, false),
    };
    let failed = records.iter().filter(|r| r.failed).count();
    if !records.is_empty() && failed as f64 / records.len() as f64 > MAX_FAILURE_FRACTION {
        return Err(Error::FailureThreshold {
            failed,
            total: records.len(),
            limit_pct: MAX_FAILURE_FRACTION * 100.0,
        });
    }
    let (report, evidence) = detection_stage(cfg, clients, &eval_sets, &records, regime)?;
    Ok(TrialArtifacts {
        report,
        records,
        evidence,
        from_cache,
    })
}

/// Cellwise means over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanSummary {
    pub matrix: Vec<Vec<f64>>,
    pub mr_intra: f64,
    pub mr_inter: f64,
    pub mr_total: f64,
    pub per_category: BTreeMap<String, CategorySlice>,
    pub evaluated_prefixes: f64,
    pub filtered_generations: f64,
    pub failed_generations: f64,
    pub mean_rouge_l: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_accuracy: Option<f64>,
}

fn summarize_trials(trials: &[MemReport]) -> MeanSummary {
    let t = trials.len() as f64;
    let l = trials[0].l;
    let mut matrix = vec![vec![0.0; l]; l];
    for report in trials {
        for (row, src) in matrix.iter_mut().zip(&report.matrix) {
            for (cell, v) in row.iter_mut().zip(src) {
                *cell += v / t;
            }
        }
    }
    let mean = |f: fn(&MemReport) -> f64| trials.iter().map(f).sum::<f64>() / t;
    let mut per_category: BTreeMap<String, CategorySlice> = BTreeMap::new();
    for report in trials {
        for (name, slice) in &report.per_category {
            let entry = per_category.entry(name.clone()).or_default();
            entry.intra += slice.intra / t;
            entry.inter += slice.inter / t;
            entry.total += slice.total / t;
        }
    }
    let accuracies: Vec<f64> = trials.iter().filter_map(|r| r.label_accuracy).collect();
    MeanSummary {
        matrix,
        mr_intra: mean(|r| r.mr_intra),
        mr_inter: mean(|r| r.mr_inter),
        mr_total: mean(|r| r.mr_total),
        per_category,
        evaluated_prefixes: mean(|r| r.evaluated_prefixes as f64),
        filtered_generations: mean(|r| r.filtered_generations as f64),
        failed_generations: mean(|r| r.failed_generations as f64),
        mean_rouge_l: mean(|r| r.mean_rouge_l),
        label_accuracy: (accuracies.len() == trials.len())
            .then(|| accuracies.iter().sum::<f64>() / t),
    }
}

/// All trials for one regime: per-trial reports plus their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub regime: Regime,
    pub trials: Vec<MemReport>,
    pub mean: MeanSummary,
}

/// The full audit output, serialized as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOutput {
    pub version: u32,
    pub config: AuditConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fl: Option<RunReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cl: Option<RunReport>,
}

impl AuditOutput {
    pub fn run(&self, regime: Regime) -> Option<&RunReport> {
        match regime {
            Regime::Fl => self.fl.as_ref(),
            Regime::Cl => self.cl.as_ref(),
        }
    }
}

fn corpus_fingerprint(clients: &[ClientDataset]) -> String {
    let mut hasher = Sha256::new();
    for client in clients {
        for sample in &client.samples {
            hasher.update(sample.client.to_le_bytes());
            hasher.update(sample.id.as_bytes());
            hasher.update([0x1f]);
            hasher.update(sample.text.as_bytes());
            hasher.update([0x1e]);
        }
    }
    hex(&hasher.finalize()[..8])
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Content-addressed cache file name: identical generation inputs map to the
/// same file, so sweeps over factors that do not affect generation (for the
/// count model, communication rounds) reuse it.
fn cache_file_name(
    regime: Regime,
    trial: usize,
    corpus_fp: &str,
    model_fp: &str,
    decoding: &DecodingConfig,
    cfg: &AuditConfig,
    backend_tag: &str,
) -> String {
    let mut hasher = Sha256::new();
    for part in [
        corpus_fp,
        model_fp,
        &decoding.fingerprint(),
        &cfg.n.to_string(),
        &cfg.prefix_len.to_string(),
        backend_tag,
    ] {
        hasher.update(part.as_bytes());
        hasher.update([0x1f]);
    }
    format!("{}_t{}_{}.jsonl", regime.name().to_lowercase(), trial, hex(&hasher.finalize()[..8]))
}

/// Where an audit persists its artifacts. `cache_dir` may be shared across
/// sweep runs; warm caches reproduce cold runs byte for byte.
#[derive(Debug, Clone)]
pub struct AuditSink {
    pub report_dir: PathBuf,
    pub cache_dir: PathBuf,
}

impl AuditSink {
    pub fn under(out_dir: &Path) -> Self {
        AuditSink {
            report_dir: out_dir.to_path_buf(),
            cache_dir: out_dir.join("cache"),
        }
    }
}

enum ActiveBackend<'a> {
    Builtin(NGramBackend<'a>),
    Http(&'a HttpBackend),
}

impl GenerationBackend for ActiveBackend<'_> {
    fn tag(&self) -> &str {
        match self {
            ActiveBackend::Builtin(b) => b.tag(),
            ActiveBackend::Http(b) => b.tag(),
        }
    }

    fn complete(&self, request: &crate::generate::CompletionRequest) -> Result<String> {
        match self {
            ActiveBackend::Builtin(b) => b.complete(request),
            ActiveBackend::Http(b) => b.complete(request),
        }
    }
}

/// Per-regime model and backend, owned together so the built-in backend can
/// borrow the model.
struct RegimeSetup {
    model: Option<NGramModel>,
    http: Option<HttpBackend>,
    model_fp: String,
}

impl RegimeSetup {
    fn build(
        cfg: &AuditConfig,
        clients: &[ClientDataset],
        regime: Regime,
        backend_spec: &BackendSpec,
        model_path: Option<&Path>,
    ) -> Result<Self> {
        match backend_spec {
            BackendSpec::Http(url) => {
                let http = HttpBackend::new(url.clone())?;
                let model_fp = format!("external:{}", http.tag());
                Ok(RegimeSetup {
                    model: None,
                    http: Some(http),
                    model_fp,
                })
            }
            BackendSpec::Builtin => {
                // The regime is a tag for the report; only the trained model
                // differs between FL and CL.
                let model = match model_path {
                    Some(path) => NGramModel::load(path)?,
                    None => match regime {
                        Regime::Fl => train_federated(clients, &cfg.train)?,
                        Regime::Cl => train_centralized(clients, &cfg.train)?,
                    },
                };
                Ok(RegimeSetup {
                    model_fp: model.fingerprint(),
                    model: Some(model),
                    http: None,
                })
            }
        }
    }

    fn backend(&self) -> ActiveBackend<'_> {
        match (&self.model, &self.http) {
            (Some(model), _) => ActiveBackend::Builtin(NGramBackend::new(model)),
            (None, Some(http)) => ActiveBackend::Http(http),
            (None, None) => unreachable!("setup always holds a model or an http backend"),
        }
    }
}

fn trial_cache_path(
    sink: &AuditSink,
    cfg: &AuditConfig,
    regime: Regime,
    trial: usize,
    corpus_fp: &str,
    model_fp: &str,
    decoding: &DecodingConfig,
    backend_tag: &str,
) -> PathBuf {
    sink.cache_dir.join(cache_file_name(
        regime,
        trial,
        corpus_fp,
        model_fp,
        decoding,
        cfg,
        backend_tag,
    ))
}

fn read_cache_if_present(path: &Path) -> Result<Option<Vec<CacheRecord>>> {
    if !path.exists() {
        return Ok(None);
    }
    let file = std::fs::File::open(path)?;
    Ok(Some(read_generation_cache(std::io::BufReader::new(file))?))
}

/// Trains (or loads) the model per regime, runs every trial through the
/// sample/generate/retrieve/discriminate pipeline, and assembles per-trial
/// plus mean reports. With a sink, caches and evidence land on disk and warm
/// caches short-circuit generation.
pub fn run_audit(
    cfg: &AuditConfig,
    clients: &[ClientDataset],
    regime_choice: RegimeChoice,
    backend_spec: &BackendSpec,
    model_path: Option<&Path>,
    sink: Option<&AuditSink>,
) -> Result<AuditOutput> {
    cfg.validate()?;
    if clients.len() < 2 {
        return Err(Error::Config("the audit needs at least 2 clients".into()));
    }
    if let Some(sink) = sink {
        std::fs::create_dir_all(&sink.report_dir)?;
        std::fs::create_dir_all(&sink.cache_dir)?;
    }
    let corpus_fp = corpus_fingerprint(clients);
    let mut output = AuditOutput {
        version: REPORT_FORMAT_VERSION,
        config: cfg.clone(),
        fl: None,
        cl: None,
    };
    for regime in regime_choice.regimes() {
        let setup = RegimeSetup::build(cfg, clients, regime, backend_spec, model_path)?;
        let backend = setup.backend();
        let mut trials = Vec::with_capacity(cfg.trials);
        for trial in 0..cfg.trials {
            let trial_seed = cfg.seed + trial as u64;
            let decoding = trial_decoding(cfg, trial_seed);
            let cache_path = sink.map(|s| {
                trial_cache_path(
                    s,
                    cfg,
                    regime,
                    trial,
                    &corpus_fp,
                    &setup.model_fp,
                    &decoding,
                    backend.tag(),
                )
            });
            let cached = match &cache_path {
                Some(path) => read_cache_if_present(path)?,
                None => None,
            };
            let artifacts = run_trial(
                cfg,
                clients,
                &backend,
                regime,
                trial_seed,
                cached.as_deref(),
            )?;
            if let Some(path) = &cache_path {
                let mut buf = Vec::new();
                write_generation_cache(&mut buf, &artifacts.records)?;
                std::fs::write(path, buf)?;
            }
            if let Some(sink) = sink {
                let mut buf = Vec::new();
                for record in &artifacts.evidence {
                    serde_json::to_writer(&mut buf, record)?;
                    buf.push(b'\n');
                }
                let name = format!("evidence_{}_t{}.jsonl", regime.name().to_lowercase(), trial);
                std::fs::write(sink.report_dir.join(name), buf)?;
            }
            trials.push(artifacts.report);
        }
        let run = RunReport {
            regime,
            mean: summarize_trials(&trials),
            trials,
        };
        match regime {
            Regime::Fl => output.fl = Some(run),
            Regime::Cl => output.cl = Some(run),
        }
    }
    if let Some(sink) = sink {
        std::fs::write(
            sink.report_dir.join("report.json"),
            serde_json::to_vec_pretty(&output)?,
        )?;
    }
    Ok(output)
}

/// Runs only the sample and generate stages, writing the generation caches
/// that a later `run_audit` with the same config will pick up. Returns the
/// written cache paths.
pub fn run_generate(
    cfg: &AuditConfig,
    clients: &[ClientDataset],
    regime_choice: RegimeChoice,
    backend_spec: &BackendSpec,
    model_path: Option<&Path>,
    sink: &AuditSink,
) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    if clients.len() < 2 {
        return Err(Error::Config("the audit needs at least 2 clients".into()));
    }
    std::fs::create_dir_all(&sink.cache_dir)?;
    let corpus_fp = corpus_fingerprint(clients);
    let mut written = Vec::new();
    for regime in regime_choice.regimes() {
        let setup = RegimeSetup::build(cfg, clients, regime, backend_spec, model_path)?;
        let backend = setup.backend();
        for trial in 0..cfg.trials {
            let trial_seed = cfg.seed + trial as u64;
            let decoding = trial_decoding(cfg, trial_seed);
            let eval_sets = sample_stage(cfg, clients, trial_seed)?;
            let path = trial_cache_path(
                sink,
                cfg,
                regime,
                trial,
                &corpus_fp,
                &setup.model_fp,
                &decoding,
                backend.tag(),
            );
            let records = match read_cache_if_present(&path)? {
                Some(existing)
                    if cache_is_valid(&existing, &eval_sets, &decoding, backend.tag()) =>
                {
                    existing
                }
                _ => generate_stage(cfg, &eval_sets, &backend, &decoding)?,
            };
            let mut buf = Vec::new();
            write_generation_cache(&mut buf, &records)?;
            std::fs::write(&path, buf)?;
            written.push(path);
        }
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// Ablation factor to vary, one audit per value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepFactor {
    Decoding,
    PrefixLen,
    Algorithm,
    Rounds,
    ModelOrder,
}

impl SweepFactor {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "decoding" => Ok(SweepFactor::Decoding),
            "prefix_len" => Ok(SweepFactor::PrefixLen),
            "algorithm" => Ok(SweepFactor::Algorithm),
            "rounds" => Ok(SweepFactor::Rounds),
            "model_order" => Ok(SweepFactor::ModelOrder),
            other => Err(Error::Config(format!("unknown sweep factor `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub factor: SweepFactor,
    pub values: Vec<String>,
}

impl SweepSpec {
    /// Applies one factor value onto a copy of the base config. Invalid
    /// values are rejected here, before any run starts.
    pub fn apply(&self, base: &AuditConfig, value: &str) -> Result<AuditConfig> {
        let mut cfg = base.clone();
        let parse_usize = |v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| Error::Config(format!("`{v}` is not a valid {:?} value", self.factor)))
        };
        match self.factor {
            SweepFactor::Decoding => {
                cfg.decoding.strategy = Strategy::parse(value).map_err(config_err)?;
            }
            SweepFactor::PrefixLen => cfg.prefix_len = parse_usize(value)?,
            SweepFactor::Rounds => cfg.train.rounds = parse_usize(value)?,
            SweepFactor::ModelOrder => cfg.train.order = parse_usize(value)?,
            SweepFactor::Algorithm => {
                cfg.train.algorithm = match value {
                    "fedavg" => Algorithm::Fedavg,
                    "fedprox" => Algorithm::Fedprox,
                    "centralized" => Algorithm::Centralized,
                    other => {
                        return Err(Error::Config(format!("unknown algorithm `{other}`")));
                    }
                };
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One audit per sweep value, varying only that factor. All runs share the
/// sink's cache directory, so values that do not change the generation
/// inputs (same model fingerprint and decoding) reuse the cache.
pub fn run_sweep(
    base: &AuditConfig,
    spec: &SweepSpec,
    clients: &[ClientDataset],
    regime_choice: RegimeChoice,
    backend_spec: &BackendSpec,
    sink: Option<&AuditSink>,
) -> Result<Vec<(String, AuditOutput)>> {
    if spec.values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let configs: Vec<(String, AuditConfig)> = spec
        .values
        .iter()
        .map(|v| spec.apply(base, v).map(|cfg| (v.clone(), cfg)))
        .collect::<Result<Vec<_>>>()?;
    let mut outputs = Vec::with_capacity(configs.len());
    for (label, cfg) in configs {
        let run_sink = sink.map(|s| AuditSink {
            report_dir: s.report_dir.join(format!("{:?}_{label}", spec.factor).to_lowercase()),
            cache_dir: s.cache_dir.clone(),
        });
        let output = run_audit(
            &cfg,
            clients,
            regime_choice,
            backend_spec,
            None,
            run_sink.as_ref(),
        )?;
        outputs.push((label, output));
    }
    Ok(outputs)
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    Structured,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "structured" => Ok(ReportFormat::Structured),
            other => Err(Error::InvalidArgument(format!("unknown format `{other}`"))),
        }
    }
}

/// Deterministic rendering of one trial report. `Table` mirrors the pairwise
/// matrix plus aggregate rows; `Csv` is the flat per-pair table (see
/// [`per_pair_csv`]); `Structured` is canonical JSON.
pub fn emit_report(report: &MemReport, format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Structured => Ok(serde_json::to_vec_pretty(report)?),
        ReportFormat::Csv => Ok(per_pair_csv(report).into_bytes()),
        ReportFormat::Table => Ok(render_table(report).into_bytes()),
    }
}

fn pct(v: f64) -> String {
    format!("{:.3}", v * 100.0)
}

fn render_table(report: &MemReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "regime {}  clients {}  evaluated {}  filtered {}  failed {}\n",
        report.regime.name(),
        report.l,
        report.evaluated_prefixes,
        report.filtered_generations,
        report.failed_generations
    ));
    out.push_str("pairwise memorization ratio (%)\n");
    out.push_str("source\\target");
    for k in 0..report.l {
        out.push_str(&format!("{k:>10}"));
    }
    out.push('\n');
    for (j, row) in report.matrix.iter().enumerate() {
        out.push_str(&format!("{j:>13}"));
        for v in row {
            out.push_str(&format!("{:>10}", pct(*v)));
        }
        out.push('\n');
    }
    out.push_str(&format!(
        "MR_intra {}%  MR_inter {}%  MR_total {}%\n",
        pct(report.mr_intra),
        pct(report.mr_inter),
        pct(report.mr_total)
    ));
    out.push_str("per-category (%)\n");
    out.push_str(&format!(
        "{:>8}{:>12}{:>12}{:>18}{:>17}\n",
        "level", "verbatim", "idea", "paraphrase_high", "paraphrase_low"
    ));
    for (level, pick) in [
        ("intra", 0usize),
        ("inter", 1),
        ("total", 2),
    ] {
        out.push_str(&format!("{level:>8}"));
        for name in ["verbatim", "idea", "paraphrase_high", "paraphrase_low"] {
            let slice = report.per_category.get(name).copied().unwrap_or_default();
            let v = match pick {
                0 => slice.intra,
                1 => slice.inter,
                _ => slice.total,
            };
            let width = match name {
                "verbatim" => 12,
                "idea" => 12,
                "paraphrase_high" => 18,
                _ => 17,
            };
            out.push_str(&format!("{:>width$}", pct(v), width = width));
        }
        out.push('\n');
    }
    out.push_str(&format!("mean rouge-l {:.4}\n", report.mean_rouge_l));
    if let Some(acc) = report.label_accuracy {
        out.push_str(&format!("label accuracy {:.4}\n", acc));
    }
    out
}

/// Per-pair CSV: one row per (source, target) with counts and ratios.
/// Ratios print with full round-trip precision, so re-parsing reproduces
/// the matrix exactly.
pub fn per_pair_csv(report: &MemReport) -> String {
    let mut out = String::from(
        "source,target,evaluated,memorizing,mr,mr_verbatim,mr_idea,mr_paraphrase_high,mr_paraphrase_low\n",
    );
    for pair in &report.pairs {
        let denom = pair.evaluated.len() as f64;
        let cat = |c: Category| {
            let n = pair.per_category.get(&c).map_or(0, |s| s.len());
            if denom == 0.0 {
                0.0
            } else {
                n as f64 / denom
            }
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            pair.source,
            pair.target,
            pair.evaluated.len(),
            pair.memorizing.len(),
            report.matrix[pair.source][pair.target],
            cat(Category::Verbatim),
            cat(Category::Idea),
            cat(Category::ParaphraseHigh),
            cat(Category::ParaphraseLow),
        ));
    }
    out
}

/// Per-category CSV: intra/inter/total rows, one column per category.
pub fn per_category_csv(report: &MemReport) -> String {
    let mut out = String::from("level,verbatim,idea,paraphrase_high,paraphrase_low\n");
    for (level, pick) in [("intra", 0usize), ("inter", 1), ("total", 2)] {
        out.push_str(level);
        for name in ["verbatim", "idea", "paraphrase_high", "paraphrase_low"] {
            let slice = report.per_category.get(name).copied().unwrap_or_default();
            let v = match pick {
                0 => slice.intra,
                1 => slice.inter,
                _ => slice.total,
            };
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Aggregate CSV: a single row of report-level values.
pub fn aggregate_csv(report: &MemReport) -> String {
    let mut out = String::from(
        "regime,clients,mr_intra,mr_inter,mr_total,evaluated,filtered,failed,mean_rouge_l,label_accuracy\n",
    );
    out.push_str(&format!(
        "{},{},{},{},{},{},{},{},{},{}\n",
        report.regime.name(),
        report.l,
        report.mr_intra,
        report.mr_inter,
        report.mr_total,
        report.evaluated_prefixes,
        report.filtered_generations,
        report.failed_generations,
        report.mean_rouge_l,
        report
            .label_accuracy
            .map(|a| a.to_string())
            .unwrap_or_default(),
    ));
    out
}

/// Writes the three CSV tables for a report under `dir` with a name prefix.
pub fn write_report_tables(report: &MemReport, dir: &Path, prefix: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{prefix}_per_pair.csv")), per_pair_csv(report))?;
    std::fs::write(
        dir.join(format!("{prefix}_per_category.csv")),
        per_category_csv(report),
    )?;
    std::fs::write(dir.join(format!("{prefix}_aggregate.csv")), aggregate_csv(report))?;
    Ok(())
}

/// Re-parses a per-pair CSV back into the L x L matrix.
pub fn parse_per_pair_csv(csv: &str) -> Result<Vec<Vec<f64>>> {
    let mut cells: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut l = 0usize;
    for (i, line) in csv.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 5 {
            return Err(Error::Data(format!("csv line {}: too few fields", i + 1)));
        }
        let source: usize = fields[0].parse().map_err(|_| Error::Data("bad source".into()))?;
        let target: usize = fields[1].parse().map_err(|_| Error::Data("bad target".into()))?;
        let mr: f64 = fields[4].parse().map_err(|_| Error::Data("bad mr".into()))?;
        cells.insert((source, target), mr);
        l = l.max(source + 1).max(target + 1);
    }
    let mut matrix = vec![vec![0.0; l]; l];
    for ((j, k), v) in cells {
        matrix[j][k] = v;
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sample;

    #[test]
    fn defaults_match_the_reference_setting() {
        let cfg = AuditConfig::default();
        assert_eq!(cfg.n, 4000);
        assert_eq!(cfg.n_prime, 10);
        assert_eq!(cfg.prefix_len, 30);
        assert_eq!(cfg.trials, 3);
        assert_eq!(cfg.decoding.strategy, Strategy::TopK);
        assert_eq!(cfg.decoding.k, 40);
        assert_eq!(cfg.decoding.p, 0.8);
        assert_eq!(cfg.decoding.temperature, 1.0);
        assert_eq!(cfg.train.algorithm, Algorithm::Fedavg);
        assert_eq!(cfg.train.rounds, 3);
        assert_eq!(cfg.train.order, 4);
        assert_eq!(cfg.partition.alpha, 5.0);
        assert_eq!(cfg.detector.min_match_chars, 50);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn env_overrides_apply_in_order() {
        let mut value = serde_json::json!({"n": 10});
        let vars = vec![
            ("FEDMEM_AUDIT_N".to_string(), "25".to_string()),
            ("FEDMEM_DECODING_STRATEGY".to_string(), "top_p".to_string()),
            ("FEDMEM_TRAIN_ROUNDS".to_string(), "5".to_string()),
            ("OTHER_VAR".to_string(), "ignored".to_string()),
        ];
        apply_env_overrides(&mut value, vars.into_iter()).unwrap();
        let cfg: AuditConfig = serde_json::from_value(value).unwrap();
        assert_eq!(cfg.n, 25);
        assert_eq!(cfg.decoding.strategy, Strategy::TopP);
        assert_eq!(cfg.train.rounds, 5);
    }

    #[test]
    fn env_overrides_reject_unknown_keys() {
        let mut value = serde_json::json!({});
        let bad = vec![("FEDMEM_DECODING_TYPO".to_string(), "1".to_string())];
        assert!(matches!(
            apply_env_overrides(&mut value, bad.into_iter()),
            Err(Error::Config(_))
        ));
        let bad_section = vec![("FEDMEM_NOPE_KEY".to_string(), "1".to_string())];
        assert!(matches!(
            apply_env_overrides(&mut serde_json::json!({}), bad_section.into_iter()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn sweep_rejects_invalid_values_up_front() {
        let base = AuditConfig::default();
        let spec = SweepSpec {
            factor: SweepFactor::PrefixLen,
            values: vec!["10".into(), "zero".into()],
        };
        assert!(spec.apply(&base, "zero").is_err());
        let spec = SweepSpec {
            factor: SweepFactor::Decoding,
            values: vec!["beam".into()],
        };
        assert!(spec.apply(&base, "beam").is_err());
        // fedprox without mu must be rejected before any run.
        let spec = SweepSpec {
            factor: SweepFactor::Algorithm,
            values: vec!["fedprox".into()],
        };
        assert!(spec.apply(&base, "fedprox").is_err());
        let mut with_mu = AuditConfig::default();
        with_mu.train.mu = 0.1;
        assert!(spec.apply(&with_mu, "fedprox").is_ok());
    }

    #[test]
    fn sweep_applies_factors() {
        let base = AuditConfig::default();
        let spec = SweepSpec {
            factor: SweepFactor::PrefixLen,
            values: vec![],
        };
        let cfg = spec.apply(&base, "50").unwrap();
        assert_eq!(cfg.prefix_len, 50);
        let spec = SweepSpec {
            factor: SweepFactor::ModelOrder,
            values: vec![],
        };
        assert_eq!(spec.apply(&base, "3").unwrap().train.order, 3);
        assert!(spec.apply(&base, "1").is_err());
    }

    fn tiny_clients() -> Vec<ClientDataset> {
        let mk = |client: usize, words: &[&str]| {
            let samples = (0..6)
                .map(|i| {
                    let text: Vec<String> = (0..12)
                        .map(|t| format!("{}{}", words[(i + t) % words.len()], t))
                        .collect();
                    Sample::new(format!("c{client}s{i}"), client, text.join(" "))
                })
                .collect();
            ClientDataset::new(client, samples)
        };
        vec![
            mk(0, &["alpha", "beta", "gamma"]),
            mk(1, &["delta", "epsilon", "zeta"]),
        ]
    }

    #[test]
    fn sample_stage_is_deterministic() {
        let cfg = AuditConfig {
            n: 4,
            prefix_len: 3,
            ..AuditConfig::default()
        };
        let clients = tiny_clients();
        let a = sample_stage(&cfg, &clients, 7).unwrap();
        let b = sample_stage(&cfg, &clients, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|s| s.entries.len() == 4));
    }

    #[test]
    fn csv_roundtrip_reproduces_matrix() {
        let pairs = vec![
            PairResult::new(
                0,
                0,
                (0..7).map(|i| format!("p{i}")).collect(),
                (0..2).map(|i| format!("p{i}")).collect(),
                BTreeMap::from([(Category::Verbatim, (0..2).map(|i| format!("p{i}")).collect())]),
            )
            .unwrap(),
            PairResult::new(0, 1, (0..7).map(|i| format!("p{i}")).collect(), BTreeSet::new(), BTreeMap::new()).unwrap(),
            PairResult::new(1, 0, (0..3).map(|i| format!("q{i}")).collect(), BTreeSet::new(), BTreeMap::new()).unwrap(),
            PairResult::new(
                1,
                1,
                (0..3).map(|i| format!("q{i}")).collect(),
                (0..1).map(|i| format!("q{i}")).collect(),
                BTreeMap::from([(Category::Idea, (0..1).map(|i| format!("q{i}")).collect())]),
            )
            .unwrap(),
        ];
        let weights = vec![
            ClientWeight { client: 0, weight: 0.7 },
            ClientWeight { client: 1, weight: 0.3 },
        ];
        let matrix = pair_matrix(&pairs, 2).unwrap();
        let report = MemReport {
            version: REPORT_FORMAT_VERSION,
            regime: Regime::Fl,
            l: 2,
            mr_intra: mr_intra(&matrix, &weights).unwrap(),
            mr_inter: mr_inter(&matrix, &weights).unwrap(),
            mr_total: mr_total(&pairs).unwrap(),
            per_category: category_breakdown(&pairs, &weights).unwrap(),
            weights,
            matrix: matrix.clone(),
            evaluated_prefixes: 10,
            filtered_generations: 0,
            failed_generations: 0,
            mean_rouge_l: 0.0,
            label_accuracy: None,
            pairs,
        };
        let csv = per_pair_csv(&report);
        assert_eq!(parse_per_pair_csv(&csv).unwrap(), matrix);

        // Table and structured forms agree to 3 decimals on the aggregates.
        let table = String::from_utf8(emit_report(&report, ReportFormat::Table).unwrap()).unwrap();
        assert!(table.contains(&pct(report.mr_intra)));
        assert!(table.contains(&pct(report.mr_total)));
        let json = emit_report(&report, ReportFormat::Structured).unwrap();
        let back: MemReport = serde_json::from_slice(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn empty_report_renders() {
        let pairs = vec![
            PairResult::new(0, 0, (0..2).map(|i| format!("p{i}")).collect(), BTreeSet::new(), BTreeMap::new()).unwrap(),
            PairResult::new(0, 1, (0..2).map(|i| format!("p{i}")).collect(), BTreeSet::new(), BTreeMap::new()).unwrap(),
            PairResult::new(1, 0, (0..2).map(|i| format!("q{i}")).collect(), BTreeSet::new(), BTreeMap::new()).unwrap(),
            PairResult::new(1, 1, (0..2).map(|i| format!("q{i}")).collect(), BTreeSet::new(), BTreeMap::new()).unwrap(),
        ];
        let weights = vec![
            ClientWeight { client: 0, weight: 0.5 },
            ClientWeight { client: 1, weight: 0.5 },
        ];
        let matrix = pair_matrix(&pairs, 2).unwrap();
        let report = MemReport {
            version: REPORT_FORMAT_VERSION,
            regime: Regime::Cl,
            l: 2,
            mr_intra: 0.0,
            mr_inter: 0.0,
            mr_total: 0.0,
            per_category: category_breakdown(&pairs, &weights).unwrap(),
            weights,
            matrix,
            evaluated_prefixes: 4,
            filtered_generations: 0,
            failed_generations: 0,
            mean_rouge_l: 0.0,
            label_accuracy: None,
            pairs,
        };
        for format in [ReportFormat::Table, ReportFormat::Csv, ReportFormat::Structured] {
            assert!(!emit_report(&report, format).unwrap().is_empty());
        }
        assert!(matches!(ReportFormat::parse("xml"), Err(Error::InvalidArgument(_))));
    }
}
