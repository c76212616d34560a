//! Reference trainable language model and federated training loop.
//!
//! The model is a count-based backoff n-gram: its parameters form a flat
//! table of weighted counts, so federated averaging is exact and auditable.
//! Counts are stored per training sample (raw gram counts divided by the
//! dataset's sample count); with data-size weights, one aggregation round is
//! then cellwise identical to fitting the pooled corpus. The model sits
//! behind the generation-backend interface in [`crate::generate`], so an
//! external completion endpoint can replace it.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{tokenize, ClientDataset};
use crate::error::{Error, Result};

pub const BEGIN_TOKEN: &str = "<s>";
pub const END_TOKEN: &str = "</s>";
const BEGIN_IDX: u32 = 0;
const END_IDX: u32 = 1;
const MODEL_FORMAT_VERSION: u32 = 1;

/// Count-based backoff n-gram model. Immutable once fitted; sharing across
/// generation workers is safe.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    lambda: f64,
    /// Index 0 is the begin marker, 1 the end marker, the rest sorted.
    vocab: Vec<String>,
    /// Context (1 to order-1 trailing token indices) -> next token -> count.
    counts: BTreeMap<Vec<u32>, BTreeMap<u32, f64>>,
    total_tokens: f64,
}

/// Per-client aggregation weight; weights over all clients sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientWeight {
    pub client: usize,
    pub weight: f64,
}

/// Training algorithm selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Fedavg,
    Fedprox,
    Centralized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub rounds: usize,
    /// FedProx proximal strength; FedAvg behaves as mu = 0.
    pub mu: f64,
    pub order: usize,
    /// Add-lambda floor keeping every token reachable.
    pub smoothing_lambda: f64,
    /// Aggregation weights; `None` uses data-size ratios.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub client_weights: Option<Vec<f64>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algorithm: Algorithm::Fedavg,
            rounds: 3,
            mu: 0.0,
            order: 4,
            smoothing_lambda: 1e-6,
            client_weights: None,
        }
    }
}

impl TrainConfig {
    /// Bounds every training operation relies on.
    fn validate_ops(&self) -> Result<()> {
        if self.rounds < 1 {
            return Err(Error::InvalidArgument("rounds must be >= 1".into()));
        }
        if self.order < 2 {
            return Err(Error::InvalidArgument("order must be >= 2".into()));
        }
        if !(self.smoothing_lambda > 0.0) {
            return Err(Error::InvalidArgument(
                "smoothing_lambda must be positive".into(),
            ));
        }
        if self.mu < 0.0 {
            return Err(Error::InvalidArgument("mu must be non-negative".into()));
        }
        Ok(())
    }

    /// Config-level validation. FedProx with mu = 0 is rejected here (it is
    /// just FedAvg) while the training ops still accept the boundary value so
    /// the algebraic identity can be exercised.
    pub fn validate(&self) -> Result<()> {
        self.validate_ops()?;
        if self.algorithm == Algorithm::Fedprox && self.mu <= 0.0 {
            return Err(Error::InvalidArgument("fedprox requires mu > 0".into()));
        }
        Ok(())
    }
}

/// Builds the canonical vocab: markers first, then sorted unique tokens.
fn canonical_vocab(tokens: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut set: std::collections::BTreeSet<String> = tokens.into_iter().collect();
    set.remove(BEGIN_TOKEN);
    set.remove(END_TOKEN);
    let mut vocab = Vec::with_capacity(set.len() + 2);
    vocab.push(BEGIN_TOKEN.to_string());
    vocab.push(END_TOKEN.to_string());
    vocab.extend(set);
    vocab
}

impl NGramModel {
    /// Model with markers only and no counts; the round-zero global state.
    pub fn empty(order: usize, lambda: f64) -> Self {
        NGramModel {
            order,
            lambda,
            vocab: canonical_vocab(std::iter::empty()),
            counts: BTreeMap::new(),
            total_tokens: 0.0,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn end_index(&self) -> u32 {
        END_IDX
    }

    pub fn total_tokens(&self) -> f64 {
        self.total_tokens
    }

    pub fn token_index(&self, token: &str) -> Option<u32> {
        match token {
            BEGIN_TOKEN => Some(BEGIN_IDX),
            END_TOKEN => Some(END_IDX),
            _ => self.vocab[2..]
                .binary_search_by(|v| v.as_str().cmp(token))
                .ok()
                .map(|i| (i + 2) as u32),
        }
    }

    pub fn token(&self, index: u32) -> &str {
        &self.vocab[index as usize]
    }

    /// Weighted count of `next` after `context` (context in trailing-token
    /// indices, length 1 to order-1).
    pub fn count(&self, context: &[u32], next: u32) -> f64 {
        self.counts
            .get(context)
            .and_then(|v| v.get(&next))
            .copied()
            .unwrap_or(0.0)
    }

    /// All stored (context, next, count) cells in token space, so models
    /// with different vocab index assignments can be compared cellwise.
    pub fn cells(&self) -> impl Iterator<Item = (Vec<&str>, &str, f64)> {
        self.counts.iter().flat_map(move |(ctx, vec)| {
            let tokens: Vec<&str> = ctx.iter().map(|&i| self.token(i)).collect();
            vec.iter()
                .map(move |(&t, &c)| (tokens.clone(), self.token(t), c))
        })
    }

    /// Next-token distribution under stupid backoff with an add-lambda floor:
    /// the longest stored suffix of `context` with nonzero mass supplies the
    /// counts, and every token gets `(count + lambda) / (mass + lambda*|V|)`.
    /// Sums to 1 within 1e-9. Contexts shorter than order-1 are begin-padded;
    /// tokens outside the vocab never match a stored context.
    pub fn next_distribution(&self, context: &[String]) -> Vec<f64> {
        let need = self.order - 1;
        let mut idx_ctx: Vec<Option<u32>> = Vec::with_capacity(need);
        if context.len() < need {
            idx_ctx.resize(need - context.len(), Some(BEGIN_IDX));
        }
        for token in context.iter().skip(context.len().saturating_sub(need)) {
            idx_ctx.push(self.token_index(token));
        }
        let mut matched: Option<&BTreeMap<u32, f64>> = None;
        for len in (1..=need).rev() {
            let tail = &idx_ctx[need - len..];
            if tail.iter().any(|t| t.is_none()) {
                continue;
            }
            let key: Vec<u32> = tail.iter().map(|t| t.unwrap()).collect();
            if let Some(vec) = self.counts.get(&key) {
                if vec.values().sum::<f64>() > 0.0 {
                    matched = Some(vec);
                    break;
                }
            }
        }
        let v = self.vocab.len() as f64;
        let mut dist = vec![0.0f64; self.vocab.len()];
        match matched {
            Some(vec) => {
                let mass: f64 = vec.values().sum();
                let denom = mass + self.lambda * v;
                for p in dist.iter_mut() {
                    *p = self.lambda / denom;
                }
                for (&t, &c) in vec {
                    dist[t as usize] = (c + self.lambda) / denom;
                }
            }
            None => {
                for p in dist.iter_mut() {
                    *p = 1.0 / v;
                }
            }
        }
        dist
    }

    /// SHA-256 of the serialized dump; identical inputs give identical tags.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_json_bytes().expect("model serialization"));
        hex_digest(hasher)
    }

    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        let file = ModelFile {
            version: MODEL_FORMAT_VERSION,
            order: self.order,
            lambda: self.lambda,
            total_tokens: self.total_tokens,
            vocab: self.vocab.clone(),
            contexts: self
                .counts
                .iter()
                .map(|(ctx, vec)| ContextRow {
                    ctx: ctx.clone(),
                    next: vec.iter().map(|(&t, &c)| (t, c)).collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_vec(&file)?)
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        let file: ModelFile = serde_json::from_slice(bytes)?;
        if file.version != MODEL_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported model format version {}",
                file.version
            )));
        }
        if file.vocab.len() < 2 || file.vocab[0] != BEGIN_TOKEN || file.vocab[1] != END_TOKEN {
            return Err(Error::Data("model vocab is missing reserved markers".into()));
        }
        Ok(NGramModel {
            order: file.order,
            lambda: file.lambda,
            vocab: file.vocab,
            counts: file
                .contexts
                .into_iter()
                .map(|row| (row.ctx, row.next.into_iter().collect()))
                .collect(),
            total_tokens: file.total_tokens,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_bytes(&std::fs::read(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    order: usize,
    lambda: f64,
    total_tokens: f64,
    vocab: Vec<String>,
    contexts: Vec<ContextRow>,
}

#[derive(Serialize, Deserialize)]
struct ContextRow {
    ctx: Vec<u32>,
    next: Vec<(u32, f64)>,
}

fn hex_digest(hasher: Sha256) -> String {
    let out = hasher.finalize();
    let mut s = String::with_capacity(out.len() * 2);
    for b in out {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

// ---------------------------------------------------------------------------
// Fitting and aggregation
// ---------------------------------------------------------------------------

/// Fits per-sample weighted counts over all order-grams of the dataset, each
/// sample begin-padded and terminated with the end marker. Counts for every
/// context length from 1 to order-1 are kept so backoff has something to
/// fall to.
pub fn fit_counts(dataset: &ClientDataset, order: usize, lambda: f64) -> Result<NGramModel> {
    if order < 2 {
        return Err(Error::InvalidArgument("order must be >= 2".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument("lambda must be positive".into()));
    }
    if dataset.samples.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "client {} has no samples to fit",
            dataset.client
        )));
    }
    let tokenized: Vec<Vec<String>> = dataset
        .samples
        .iter()
        .map(|s| tokenize(&s.text))
        .collect();
    let vocab = canonical_vocab(tokenized.iter().flatten().cloned());
    let mut model = NGramModel {
        order,
        lambda,
        vocab,
        counts: BTreeMap::new(),
        total_tokens: 0.0,
    };
    let need = order - 1;
    let mut raw_total = 0.0f64;
    for tokens in &tokenized {
        let mut padded: Vec<u32> = vec![BEGIN_IDX; need];
        padded.extend(tokens.iter().map(|t| model.token_index(t).unwrap()));
        padded.push(END_IDX);
        for i in 0..=tokens.len() {
            let target = padded[need + i];
            for len in 1..=need {
                let ctx = padded[need + i - len..need + i].to_vec();
                *model.counts.entry(ctx).or_default().entry(target).or_insert(0.0) += 1.0;
            }
        }
        raw_total += tokens.len() as f64 + 1.0;
    }
    // Per-sample normalization: data-size-weighted averaging of client models
    // then reproduces the pooled fit cellwise.
    let n = dataset.samples.len() as f64;
    for vec in model.counts.values_mut() {
        for c in vec.values_mut() {
            *c /= n;
        }
    }
    model.total_tokens = raw_total / n;
    Ok(model)
}

/// Data-size weights w_j = |D_j| / sum |D_i|.
pub fn data_size_weights(clients: &[ClientDataset]) -> Vec<ClientWeight> {
    let total: usize = clients.iter().map(|c| c.len()).sum();
    clients
        .iter()
        .map(|c| ClientWeight {
            client: c.client,
            weight: c.len() as f64 / total as f64,
        })
        .collect()
}

fn check_weights(weights: &[ClientWeight], expected: usize) -> Result<()> {
    if weights.len() != expected {
        return Err(Error::InvalidWeights(format!(
            "{} weights for {} models",
            weights.len(),
            expected
        )));
    }
    if weights.iter().any(|w| !(w.weight > 0.0 && w.weight <= 1.0)) {
        return Err(Error::InvalidWeights("weights must lie in (0, 1]".into()));
    }
    let sum: f64 = weights.iter().map(|w| w.weight).sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidWeights(format!("weights sum to {sum}")));
    }
    Ok(())
}

/// Merges count tables cellwise: each (context, next) count becomes the
/// weighted sum over models, and the vocab is the union.
pub fn fedavg_aggregate(models: &[NGramModel], weights: &[ClientWeight]) -> Result<NGramModel> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("no models to aggregate".into()));
    }
    check_weights(weights, models.len())?;
    let order = models[0].order;
    if models.iter().any(|m| m.order != order) {
        return Err(Error::IncompatibleModels("orders differ".into()));
    }
    let lambda = models[0].lambda;
    let vocab = canonical_vocab(models.iter().flat_map(|m| m.vocab[2..].iter().cloned()));
    let mut out = NGramModel {
        order,
        lambda,
        vocab,
        counts: BTreeMap::new(),
        total_tokens: 0.0,
    };
    for (model, w) in models.iter().zip(weights) {
        let remap: Vec<u32> = model
            .vocab
            .iter()
            .map(|t| out.token_index(t).unwrap())
            .collect();
        for (ctx, vec) in &model.counts {
            let new_ctx: Vec<u32> = ctx.iter().map(|&i| remap[i as usize]).collect();
            let slot = out.counts.entry(new_ctx).or_default();
            for (&t, &c) in vec {
                *slot.entry(remap[t as usize]).or_insert(0.0) += w.weight * c;
            }
        }
        out.total_tokens += w.weight * model.total_tokens;
    }
    Ok(out)
}

/// Closed-form proximal step: cellwise `(local + mu * global) / (1 + mu)`,
/// the minimizer of ||x - local||^2 + mu * ||x - global||^2. `mu = 0`
/// returns the local model unchanged.
pub fn fedprox_localize(
    local_mle: &NGramModel,
    global_model: &NGramModel,
    mu: f64,
) -> Result<NGramModel> {
    if mu < 0.0 {
        return Err(Error::InvalidArgument("mu must be non-negative".into()));
    }
    if local_mle.order != global_model.order {
        return Err(Error::IncompatibleModels("orders differ".into()));
    }
    if mu == 0.0 {
        return Ok(local_mle.clone());
    }
    let vocab = canonical_vocab(
        local_mle.vocab[2..]
            .iter()
            .chain(global_model.vocab[2..].iter())
            .cloned(),
    );
    let mut out = NGramModel {
        order: local_mle.order,
        lambda: local_mle.lambda,
        vocab,
        counts: BTreeMap::new(),
        total_tokens: (local_mle.total_tokens + mu * global_model.total_tokens) / (1.0 + mu),
    };
    let shrink = 1.0 + mu;
    for (model, scale) in [(local_mle, 1.0), (global_model, mu)] {
        let remap: Vec<u32> = model
            .vocab
            .iter()
            .map(|t| out.token_index(t).unwrap())
            .collect();
        for (ctx, vec) in &model.counts {
            let new_ctx: Vec<u32> = ctx.iter().map(|&i| remap[i as usize]).collect();
            let slot = out.counts.entry(new_ctx).or_default();
            for (&t, &c) in vec {
                *slot.entry(remap[t as usize]).or_insert(0.0) += scale * c / shrink;
            }
        }
    }
    Ok(out)
}

/// Runs the federated rounds: each round every client refits its local
/// counts (FedProx then shrinks them toward the incoming global model) and
/// the server aggregates with the client weights. `centralized` pools all
/// data into a single fit instead.
pub fn train_federated(clients: &[ClientDataset], cfg: &TrainConfig) -> Result<NGramModel> {
    cfg.validate_ops()?;
    if cfg.algorithm == Algorithm::Centralized {
        return train_centralized(clients, cfg);
    }
    if clients.len() < 2 {
        return Err(Error::InvalidArgument(
            "federated training needs at least 2 clients".into(),
        ));
    }
    let weights = resolve_weights(clients, cfg)?;
    let locals: Vec<NGramModel> = clients
        .par_iter()
        .map(|c| fit_counts(c, cfg.order, cfg.smoothing_lambda))
        .collect::<Result<Vec<_>>>()?;
    let mut global = NGramModel::empty(cfg.order, cfg.smoothing_lambda);
    for _round in 0..cfg.rounds {
        let round_models: Vec<NGramModel> = match cfg.algorithm {
            Algorithm::Fedprox => locals
                .iter()
                .map(|local| fedprox_localize(local, &global, cfg.mu))
                .collect::<Result<Vec<_>>>()?,
            _ => locals.clone(),
        };
        global = fedavg_aggregate(&round_models, &weights)?;
    }
    Ok(global)
}

/// Single fit over the concatenated corpus; the centralized baseline.
pub fn train_centralized(clients: &[ClientDataset], cfg: &TrainConfig) -> Result<NGramModel> {
    cfg.validate_ops()?;
    let samples: Vec<_> = clients
        .iter()
        .flat_map(|c| c.samples.iter().cloned())
        .collect();
    if samples.is_empty() {
        return Err(Error::EmptyDataset("all clients are empty".into()));
    }
    let pooled = ClientDataset {
        client: 0,
        samples,
    };
    fit_counts(&pooled, cfg.order, cfg.smoothing_lambda)
}

fn resolve_weights(clients: &[ClientDataset], cfg: &TrainConfig) -> Result<Vec<ClientWeight>> {
    let weights = match &cfg.client_weights {
        Some(values) => clients
            .iter()
            .zip(values)
            .map(|(c, &w)| ClientWeight {
                client: c.client,
                weight: w,
            })
            .collect(),
        None => data_size_weights(clients),
    };
    check_weights(&weights, clients.len())?;
    Ok(weights)
}
