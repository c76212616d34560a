//! Decoding strategies over a generation backend, plus the degenerate-output
//! filter.
//!
//! The backend is anything that answers a completion request: the built-in
//! n-gram model or an external HTTP endpoint speaking the same JSON schema
//! (prompt, max_tokens, temperature, top_k, top_p, seed -> text). Exactly one
//! sampling transform is applied per strategy. Randomness is counter-based:
//! each draw is a pure function of (stream seed, step), so generations are
//! reproducible under any parallel schedule.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{detokenize, tokenize};
use crate::error::{Error, Result};
use crate::flsim::NGramModel;

/// Sampling strategy; exactly one transform is applied before drawing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    Temperature,
    TopK,
    TopP,
}

impl Strategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "temperature" => Ok(Strategy::Temperature),
            "top_k" => Ok(Strategy::TopK),
            "top_p" => Ok(Strategy::TopP),
            other => Err(Error::InvalidArgument(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodingConfig {
    pub strategy: Strategy,
    pub temperature: f64,
    pub k: usize,
    pub p: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        DecodingConfig {
            strategy: Strategy::TopK,
            temperature: 1.0,
            k: 40,
            p: 0.8,
            max_new_tokens: 128,
            seed: 0,
        }
    }
}

impl DecodingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_new_tokens < 1 {
            return Err(Error::InvalidArgument("max_new_tokens must be >= 1".into()));
        }
        match self.strategy {
            Strategy::Greedy => {}
            Strategy::Temperature => {
                if !(self.temperature > 0.0) {
                    return Err(Error::InvalidArgument("temperature must be positive".into()));
                }
            }
            Strategy::TopK => {
                if self.k < 1 {
                    return Err(Error::InvalidArgument("k must be >= 1".into()));
                }
            }
            Strategy::TopP => {
                if !(self.p > 0.0 && self.p <= 1.0) {
                    return Err(Error::InvalidArgument("p must lie in (0, 1]".into()));
                }
            }
        }
        Ok(())
    }

    /// Compact deterministic description used to key the generation cache.
    pub fn fingerprint(&self) -> String {
        let knob = match self.strategy {
            Strategy::Greedy => "greedy".to_string(),
            Strategy::Temperature => format!("temperature(t={})", self.temperature),
            Strategy::TopK => format!("top_k(k={})", self.k),
            Strategy::TopP => format!("top_p(p={})", self.p),
        };
        format!("{knob}|max{}|seed{}", self.max_new_tokens, self.seed)
    }

    /// Maps the strategy onto the completion schema, one knob per strategy;
    /// greedy is encoded as top_k = 1.
    pub fn to_request(&self, prompt: String, stream_seed: u64) -> CompletionRequest {
        let mut req = CompletionRequest {
            prompt,
            max_tokens: self.max_new_tokens,
            temperature: None,
            top_k: None,
            top_p: None,
            seed: stream_seed,
        };
        match self.strategy {
            Strategy::Greedy => req.top_k = Some(1),
            Strategy::Temperature => req.temperature = Some(self.temperature),
            Strategy::TopK => req.top_k = Some(self.k),
            Strategy::TopP => req.top_p = Some(self.p),
        }
        req
    }
}

/// One generated continuation; `text` excludes the prompt prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub prefix_id: String,
    pub source_client: usize,
    pub text: String,
    pub backend_tag: String,
    pub decoding: DecodingConfig,
    /// Degenerate output, excluded from detection but counted.
    pub filtered: bool,
}

// ---------------------------------------------------------------------------
// Distribution transforms
// ---------------------------------------------------------------------------

/// Rescales to `q_i ~ dist_i^(1/t)`. `t = 1` returns the input unchanged;
/// as `t -> 0` the mass collapses onto the argmax.
pub fn apply_temperature(dist: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument("temperature must be positive".into()));
    }
    if t == 1.0 {
        return Ok(dist.to_vec());
    }
    let mut out: Vec<f64> = dist.iter().map(|&p| p.powf(1.0 / t)).collect();
    let sum: f64 = out.iter().sum();
    if sum > 0.0 {
        for q in out.iter_mut() {
            *q /= sum;
        }
    } else if let Some(best) = argmax(dist) {
        // Everything underflowed; the limit distribution is the argmax.
        out.iter_mut().for_each(|q| *q = 0.0);
        out[best] = 1.0;
    }
    Ok(out)
}

/// Keeps the `k` highest-probability tokens (ties to the lower index) and
/// renormalizes. `k >= |V|` is the identity.
pub fn truncate_top_k(dist: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if k >= dist.len() {
        return Ok(dist.to_vec());
    }
    let order = descending_order(dist);
    let mut out = vec![0.0; dist.len()];
    let kept: f64 = order[..k].iter().map(|&i| dist[i]).sum();
    if kept > 0.0 {
        for &i in &order[..k] {
            out[i] = dist[i] / kept;
        }
    }
    Ok(out)
}

/// Keeps the smallest descending-probability prefix whose cumulative mass
/// reaches `p` (ties to the lower index) and renormalizes.
pub fn truncate_top_p(dist: &[f64], p: f64) -> Result<Vec<f64>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument("p must lie in (0, 1]".into()));
    }
    if p == 1.0 {
        return Ok(dist.to_vec());
    }
    let order = descending_order(dist);
    let mut out = vec![0.0; dist.len()];
    let mut cum = 0.0;
    let mut kept = Vec::new();
    for &i in &order {
        kept.push(i);
        cum += dist[i];
        if cum >= p {
            break;
        }
    }
    if cum > 0.0 {
        for &i in &kept {
            out[i] = dist[i] / cum;
        }
    }
    Ok(out)
}

fn descending_order(dist: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].partial_cmp(&dist[a]).unwrap().then(a.cmp(&b)));
    order
}

fn argmax(dist: &[f64]) -> Option<usize> {
    descending_order(dist).first().copied()
}

// ---------------------------------------------------------------------------
// Counter-based randomness
// ---------------------------------------------------------------------------

/// Derives an independent stream seed from a base seed and string parts.
pub fn derive_stream_seed(base: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    for part in parts {
        hasher.update([0x1f]);
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Uniform draw in [0, 1) that is a pure function of (seed, step).
pub fn unit_uniform(seed: u64, step: u64) -> f64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(step.to_le_bytes());
    let digest = hasher.finalize();
    let x = u64::from_le_bytes(digest[..8].try_into().unwrap());
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Inverse-CDF draw from a distribution; `u` in [0, 1).
pub fn sample_index(dist: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            cum += p;
            if u < cum {
                return i;
            }
        }
    }
    last_positive
}

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

/// Plain JSON completion request shared by the built-in and HTTP backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
}

/// Anything that can answer a completion request. Implementations must be
/// safe to call from multiple generation workers at once.
pub trait GenerationBackend: Send + Sync {
    fn tag(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<String>;
}

/// The built-in backend: autoregressive decoding over the count model.
pub struct NGramBackend<'a> {
    model: &'a NGramModel,
}

impl<'a> NGramBackend<'a> {
    pub fn new(model: &'a NGramModel) -> Self {
        NGramBackend { model }
    }
}

impl GenerationBackend for NGramBackend<'_> {
    fn tag(&self) -> &str {
        "builtin"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        let fail = |cause: String| Error::Backend {
            tag: "builtin".into(),
            cause,
        };
        let prefix = tokenize(&request.prompt);
        if prefix.is_empty() {
            return Err(fail("prompt tokenizes to nothing".into()));
        }
        let knobs = [
            request.temperature.is_some(),
            request.top_k.is_some(),
            request.top_p.is_some(),
        ];
        if knobs.iter().filter(|&&s| s).count() > 1 {
            return Err(fail("more than one sampling knob set".into()));
        }
        let mut context = prefix;
        let mut generated: Vec<String> = Vec::new();
        for step in 0..request.max_tokens {
            let dist = self.model.next_distribution(&context);
            let dist = if let Some(t) = request.temperature {
                apply_temperature(&dist, t)
            } else if let Some(k) = request.top_k {
                truncate_top_k(&dist, k)
            } else if let Some(p) = request.top_p {
                truncate_top_p(&dist, p)
            } else {
                truncate_top_k(&dist, 1)
            }
            .map_err(|e| fail(e.to_string()))?;
            let idx = sample_index(&dist, unit_uniform(request.seed, step as u64));
            if idx as u32 == self.model.end_index() {
                break;
            }
            let token = self.model.token(idx as u32).to_string();
            generated.push(token.clone());
            context.push(token);
        }
        Ok(detokenize(&generated))
    }
}

/// External completion endpoint. Non-2xx or malformed responses are retried
/// with exponential backoff, then surfaced as backend errors.
pub struct HttpBackend {
    url: String,
    tag: String,
    client: reqwest::blocking::Client,
    max_retries: usize,
    initial_backoff: Duration,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>) -> Result<Self> {
        let url = url.into();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| Error::Backend {
                tag: "http".into(),
                cause: e.to_string(),
            })?;
        Ok(HttpBackend {
            tag: format!("http:{url}"),
            url,
            client,
            max_retries: 3,
            initial_backoff: Duration::from_millis(200),
        })
    }

    pub fn with_retries(mut self, max_retries: usize, initial_backoff: Duration) -> Self {
        self.max_retries = max_retries;
        self.initial_backoff = initial_backoff;
        self
    }
}

impl GenerationBackend for HttpBackend {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        let mut delay = self.initial_backoff;
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay = delay.saturating_mul(2);
            }
            match self.client.post(&self.url).json(request).send() {
                Ok(resp) if resp.status().is_success() => match resp.json::<CompletionResponse>() {
                    Ok(body) => return Ok(body.text),
                    Err(e) => last = format!("malformed response: {e}"),
                },
                Ok(resp) => last = format!("status {}", resp.status()),
                Err(e) => last = e.to_string(),
            }
        }
        Err(Error::Backend {
            tag: self.tag.clone(),
            cause: last,
        })
    }
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// A prefix ready to prompt the model with.
#[derive(Debug, Clone, Copy)]
pub struct Prompt<'a> {
    pub id: &'a str,
    pub client: usize,
    pub text: &'a str,
}

/// Prompts the backend with one prefix. The per-prefix stream seed is derived
/// from `(cfg.seed, prompt id)`, so repeated calls are byte-identical and
/// independent of scheduling.
pub fn generate(
    backend: &dyn GenerationBackend,
    prompt: Prompt<'_>,
    cfg: &DecodingConfig,
) -> Result<Generation> {
    cfg.validate()?;
    let stream_seed = derive_stream_seed(cfg.seed, &["gen", prompt.id]);
    let request = cfg.to_request(prompt.text.to_string(), stream_seed);
    let text = backend.complete(&request)?;
    Ok(Generation {
        prefix_id: prompt.id.to_string(),
        source_client: prompt.client,
        filtered: is_degenerate(&text),
        text,
        backend_tag: backend.tag().to_string(),
        decoding: cfg.clone(),
    })
}

/// True iff some 3-token sequence occurs at least 10 times; such output is
/// excluded from detection and only counted.
pub fn is_degenerate(text: &str) -> bool {
    const REPEATS: u32 = 10;
    let tokens = tokenize(text);
    if tokens.len() < 3 {
        return false;
    }
    let mut counts: HashMap<&[String], u32> = HashMap::new();
    for window in tokens.windows(3) {
        let c = counts.entry(window).or_insert(0);
        *c += 1;
        if *c >= REPEATS {
            return true;
        }
    }
    false
}

// ---------------------------------------------------------------------------
// Generation cache (line-delimited JSON)
// ---------------------------------------------------------------------------

/// On-disk cache record. `decoding` is the config fingerprint; a `failed`
/// record marks a prefix whose backend call never succeeded (empty text) so
/// warm runs reproduce cold ones exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub prefix_id: String,
    pub source_client: usize,
    pub backend_tag: String,
    pub decoding: String,
    pub text: String,
    pub filtered: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub failed: bool,
}

impl CacheRecord {
    pub fn from_generation(g: &Generation) -> Self {
        CacheRecord {
            prefix_id: g.prefix_id.clone(),
            source_client: g.source_client,
            backend_tag: g.backend_tag.clone(),
            decoding: g.decoding.fingerprint(),
            text: g.text.clone(),
            filtered: g.filtered,
            failed: false,
        }
    }

    pub fn failure(
        prefix_id: &str,
        source_client: usize,
        backend_tag: &str,
        decoding: &DecodingConfig,
    ) -> Self {
        CacheRecord {
            prefix_id: prefix_id.to_string(),
            source_client,
            backend_tag: backend_tag.to_string(),
            decoding: decoding.fingerprint(),
            text: String::new(),
            filtered: false,
            failed: true,
        }
    }
}

pub fn write_generation_cache<W: Write>(mut writer: W, records: &[CacheRecord]) -> Result<()> {
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_generation_cache<R: BufRead>(reader: R) -> Result<Vec<CacheRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CacheRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("cache line {}: {e}", lineno + 1)))?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ClientDataset, Sample};
    use crate::flsim::fit_counts;

    fn assert_close(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn temperature_identity_and_limit() {
        let dist = [0.5, 0.3, 0.2];
        assert_eq!(apply_temperature(&dist, 1.0).unwrap(), dist.to_vec());

        let cold = apply_temperature(&dist, 1e-6).unwrap();
        assert!(cold[0] >= 1.0 - 1e-6);

        let warm = apply_temperature(&dist, 2.0).unwrap();
        let raw: Vec<f64> = dist.iter().map(|p| p.sqrt()).collect();
        let sum: f64 = raw.iter().sum();
        let expect: Vec<f64> = raw.iter().map(|p| p / sum).collect();
        assert_close(&warm, &expect);

        assert!(apply_temperature(&dist, 0.0).is_err());
        assert!(apply_temperature(&dist, -1.0).is_err());
    }

    #[test]
    fn top_k_examples() {
        let dist = [0.5, 0.3, 0.2];
        let one = truncate_top_k(&dist, 1).unwrap();
        assert_close(&one, &[1.0, 0.0, 0.0]);
        assert_eq!(truncate_top_k(&dist, 3).unwrap(), dist.to_vec());
        assert_eq!(truncate_top_k(&dist, 10).unwrap(), dist.to_vec());
        let two = truncate_top_k(&dist, 2).unwrap();
        assert_close(&two, &[0.625, 0.375, 0.0]);
        assert!(truncate_top_k(&dist, 0).is_err());
    }

    #[test]
    fn top_p_examples() {
        let dist = [0.5, 0.3, 0.2];
        assert_eq!(truncate_top_p(&dist, 1.0).unwrap(), dist.to_vec());
        let nucleus = truncate_top_p(&dist, 0.8).unwrap();
        assert_close(&nucleus, &[0.625, 0.375, 0.0]);
        let point = [1.0, 0.0, 0.0];
        assert_close(&truncate_top_p(&point, 0.4).unwrap(), &point);
        assert!(truncate_top_p(&dist, 0.0).is_err());
        assert!(truncate_top_p(&dist, 1.5).is_err());
    }

    #[test]
    fn transforms_keep_argmax_and_normalize() {
        let dists = [
            vec![0.4, 0.4, 0.1, 0.1],
            vec![0.7, 0.1, 0.1, 0.1],
            vec![0.25, 0.25, 0.25, 0.25],
        ];
        for dist in &dists {
            let am = argmax(dist).unwrap();
            for out in [
                apply_temperature(dist, 0.5).unwrap(),
                apply_temperature(dist, 3.0).unwrap(),
                truncate_top_k(dist, 2).unwrap(),
                truncate_top_p(dist, 0.5).unwrap(),
            ] {
                assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(out[am] > 0.0, "argmax dropped: {out:?}");
                for (i, &p) in out.iter().enumerate() {
                    assert!(dist[i] > 0.0 || p == 0.0, "support grew at {i}");
                }
                assert_eq!(argmax(&out).unwrap(), am);
            }
        }
    }

    fn bigram_model(text: &str) -> NGramModel {
        let ds = ClientDataset::new(0, vec![Sample::new("s0", 0, text)]);
        fit_counts(&ds, 2, 1e-9).unwrap()
    }

    // Chain-argmax oracle with the same tie rule (lower token index wins).
    fn argmax_chain(model: &NGramModel, prefix: &str, cap: usize) -> String {
        let mut context = tokenize(prefix);
        let mut out: Vec<String> = Vec::new();
        for _ in 0..cap {
            let dist = model.next_distribution(&context);
            let best = argmax(&dist).unwrap() as u32;
            if best == model.end_index() {
                break;
            }
            out.push(model.token(best).to_string());
            context.push(model.token(best).to_string());
        }
        detokenize(&out)
    }

    #[test]
    fn greedy_matches_argmax_chain() {
        for (corpus, prefix) in [
            ("a b a b", "a"),
            ("a b a b a", "a"),
            ("x y z x y z x", "x y"),
        ] {
            let model = bigram_model(corpus);
            let backend = NGramBackend::new(&model);
            let cfg = DecodingConfig {
                strategy: Strategy::Greedy,
                max_new_tokens: 12,
                ..DecodingConfig::default()
            };
            let gen = generate(
                &backend,
                Prompt {
                    id: "p0",
                    client: 0,
                    text: prefix,
                },
                &cfg,
            )
            .unwrap();
            assert_eq!(gen.text, argmax_chain(&model, prefix, 12), "corpus {corpus}");
            assert!(!gen.text.contains("</s>"));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let model = bigram_model("one two three one two four one five");
        let backend = NGramBackend::new(&model);
        let cfg = DecodingConfig {
            strategy: Strategy::Temperature,
            temperature: 1.0,
            max_new_tokens: 20,
            seed: 11,
            ..DecodingConfig::default()
        };
        let prompt = Prompt {
            id: "p1",
            client: 0,
            text: "one",
        };
        let a = generate(&backend, prompt, &cfg).unwrap();
        let b = generate(&backend, prompt, &cfg).unwrap();
        assert_eq!(a, b);

        let other = DecodingConfig {
            seed: 12,
            ..cfg.clone()
        };
        let c = generate(&backend, prompt, &other).unwrap();
        assert_ne!(a.decoding.fingerprint(), c.decoding.fingerprint());
    }

    #[test]
    fn zero_max_tokens_rejected() {
        let cfg = DecodingConfig {
            max_new_tokens: 0,
            ..DecodingConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn empty_prompt_is_backend_error() {
        let model = bigram_model("a b");
        let backend = NGramBackend::new(&model);
        let err = generate(
            &backend,
            Prompt {
                id: "p",
                client: 0,
                text: "  ",
            },
            &DecodingConfig::default(),
        )
        .unwrap_err();
        match err {
            Error::Backend { tag, .. } => assert_eq!(tag, "builtin"),
            other => panic!("expected backend error, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_filter_thresholds() {
        let looped = "x y z ".repeat(12);
        assert!(is_degenerate(&looped));
        let nine = "x y z ".repeat(9);
        // 9 full repeats: the window (x,y,z) occurs exactly 9 times.
        assert!(!is_degenerate(nine.trim_end()));
        assert!(!is_degenerate(""));
        assert!(!is_degenerate("too short"));
    }

    #[test]
    fn cache_roundtrip() {
        let model = bigram_model("a b a b a");
        let backend = NGramBackend::new(&model);
        let cfg = DecodingConfig::default();
        let gen = generate(
            &backend,
            Prompt {
                id: "p0",
                client: 2,
                text: "a b",
            },
            &cfg,
        )
        .unwrap();
        let records = vec![
            CacheRecord::from_generation(&gen),
            CacheRecord::failure("p1", 2, "builtin", &cfg),
        ];
        let mut buf = Vec::new();
        write_generation_cache(&mut buf, &records).unwrap();
        let back = read_generation_cache(&buf[..]).unwrap();
        assert_eq!(back, records);
        assert!(back[1].failed && back[1].text.is_empty());
    }

    #[test]
    fn counter_rng_is_stable() {
        let s = derive_stream_seed(42, &["gen", "p0"]);
        assert_eq!(s, derive_stream_seed(42, &["gen", "p0"]));
        assert_ne!(s, derive_stream_seed(42, &["gen", "p1"]));
        assert_ne!(s, derive_stream_seed(43, &["gen", "p0"]));
        let u = unit_uniform(s, 0);
        assert!((0.0..1.0).contains(&u));
        assert_eq!(u, unit_uniform(s, 0));
        assert_ne!(u, unit_uniform(s, 1));
    }

    #[test]
    fn sample_index_walks_cdf() {
        let dist = [0.25, 0.0, 0.5, 0.25];
        assert_eq!(sample_index(&dist, 0.0), 0);
        assert_eq!(sample_index(&dist, 0.24), 0);
        assert_eq!(sample_index(&dist, 0.26), 2);
        assert_eq!(sample_index(&dist, 0.74), 2);
        assert_eq!(sample_index(&dist, 0.76), 3);
        assert_eq!(sample_index(&dist, 0.9999999), 3);
    }
}
