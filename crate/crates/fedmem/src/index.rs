//! In-process inverted index with BM25 ranking over a client's suffix set.
//!
//! Stands in for an external search engine: documents are tokenized with the
//! corpus tokenizer, no stemming, no stop-word removal. Build is
//! single-threaded; the built index is immutable and queries may run
//! concurrently.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, EvalSet};
use crate::error::{Error, Result};

/// BM25 parameters plus the query-length cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    /// Long generated queries are truncated to this many leading tokens.
    pub query_token_limit: usize,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params {
            k1: 1.2,
            b: 0.75,
            query_token_limit: 256,
        }
    }
}

#[derive(Debug, Clone)]
struct DocEntry {
    id: String,
    len: usize,
}

/// Immutable inverted index over one client's sampled suffixes.
#[derive(Debug, Clone)]
pub struct SuffixIndex {
    docs: Vec<DocEntry>,
    /// token -> (doc position, term frequency), sorted by doc position,
    /// which is ascending doc id.
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    avg_doc_len: f64,
    params: Bm25Params,
}

impl SuffixIndex {
    /// Builds from `(suffix id, suffix text)` pairs.
    pub fn build(docs: &[(String, String)], params: Bm25Params) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let mut sorted: Vec<&(String, String)> = docs.iter().collect();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        let mut entries = Vec::with_capacity(sorted.len());
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut total_len = 0usize;
        for (pos, (id, text)) in sorted.iter().enumerate() {
            let tokens = tokenize(text);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for token in &tokens {
                *tf.entry(token.clone()).or_insert(0) += 1;
            }
            for (token, count) in tf {
                postings.entry(token).or_default().push((pos as u32, count));
            }
            total_len += tokens.len();
            entries.push(DocEntry {
                id: id.clone(),
                len: tokens.len(),
            });
        }
        Ok(SuffixIndex {
            avg_doc_len: total_len as f64 / entries.len() as f64,
            docs: entries,
            postings,
            params,
        })
    }

    /// Indexes the suffix texts of an eval set.
    pub fn from_eval_set(eval: &EvalSet, params: Bm25Params) -> Result<Self> {
        let docs: Vec<(String, String)> = eval
            .entries
            .iter()
            .map(|e| (e.sample_id.clone(), e.suffix_text.clone()))
            .collect();
        Self::build(&docs, params)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    /// ln(1 + (N - df + 0.5) / (df + 0.5)); strictly positive for df <= N.
    fn idf(&self, df: usize) -> f64 {
        let n = self.docs.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Top `n_prime` suffixes by BM25 score, descending, ties broken by
    /// ascending suffix id. Query tokens absent from the index contribute
    /// nothing; each occurrence of a query token contributes once. Only
    /// strictly positive scores are returned.
    pub fn query_top(&self, text: &str, n_prime: usize) -> Result<Vec<(String, f64)>> {
        if n_prime == 0 {
            return Err(Error::InvalidArgument("n_prime must be >= 1".into()));
        }
        let mut query = tokenize(text);
        query.truncate(self.params.query_token_limit);
        if query.is_empty() {
            return Err(Error::EmptyQuery);
        }
        let mut scores: BTreeMap<u32, f64> = BTreeMap::new();
        for token in &query {
            let Some(postings) = self.postings.get(token) else {
                continue;
            };
            let idf = self.idf(postings.len());
            for &(doc, tf) in postings {
                let dl = self.docs[doc as usize].len as f64;
                let tf = tf as f64;
                let norm = tf * (self.params.k1 + 1.0)
                    / (tf + self.params.k1 * (1.0 - self.params.b + self.params.b * dl / self.avg_doc_len));
                *scores.entry(doc).or_insert(0.0) += idf * norm;
            }
        }
        let mut ranked: Vec<(u32, f64)> = scores.into_iter().filter(|&(_, s)| s > 0.0).collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        ranked.truncate(n_prime);
        Ok(ranked
            .into_iter()
            .map(|(doc, score)| (self.docs[doc as usize].id.clone(), score))
            .collect())
    }

    /// Sorted, versioned text dump for debugging.
    pub fn debug_dump(&self) -> String {
        let mut out = format!(
            "suffix-index v1 docs={} avg_len={}\n",
            self.docs.len(),
            self.avg_doc_len
        );
        for doc in &self.docs {
            out.push_str(&format!("doc {} len={}\n", doc.id, doc.len));
        }
        for (token, postings) in &self.postings {
            out.push_str(&format!("term {token}"));
            for (doc, tf) in postings {
                out.push_str(&format!(" {}:{}", self.docs[*doc as usize].id, tf));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs
            .iter()
            .map(|(i, t)| (i.to_string(), t.to_string()))
            .collect()
    }

    #[test]
    fn single_doc_stats() {
        let index = SuffixIndex::build(&docs(&[("a", "three token text")]), Bm25Params::default()).unwrap();
        assert_eq!(index.len(), 1);
        assert_eq!(index.avg_doc_len(), 3.0);
    }

    #[test]
    fn empty_set_rejected() {
        assert!(matches!(
            SuffixIndex::build(&[], Bm25Params::default()),
            Err(Error::EmptyIndex)
        ));
    }

    #[test]
    fn absent_token_has_no_postings() {
        let index = SuffixIndex::build(&docs(&[("a", "x y"), ("b", "y z")]), Bm25Params::default()).unwrap();
        assert!(index.postings.get("missing").is_none());
        assert_eq!(index.postings.get("y").unwrap().len(), 2);
    }

    #[test]
    fn identical_query_ranks_first() {
        let index = SuffixIndex::build(
            &docs(&[
                ("tgt", "unique shared phrase entirely"),
                ("o1", "alpha beta gamma"),
                ("o2", "delta epsilon zeta"),
            ]),
            Bm25Params::default(),
        )
        .unwrap();
        let hits = index.query_top("unique shared phrase entirely", 10).unwrap();
        assert_eq!(hits[0].0, "tgt");
    }

    #[test]
    fn disjoint_query_returns_nothing() {
        let index = SuffixIndex::build(&docs(&[("a", "x y"), ("b", "y z")]), Bm25Params::default()).unwrap();
        assert!(index.query_top("nothing common here", 10).unwrap().is_empty());
    }

    #[test]
    fn ties_break_by_suffix_id() {
        let index = SuffixIndex::build(
            &docs(&[("7", "same words here"), ("3", "same words here")]),
            Bm25Params::default(),
        )
        .unwrap();
        let hits = index.query_top("same words", 10).unwrap();
        assert_eq!(hits[0].0, "3");
        assert_eq!(hits[1].0, "7");
        assert_eq!(hits[0].1, hits[1].1);
    }

    #[test]
    fn empty_query_errors() {
        let index = SuffixIndex::build(&docs(&[("a", "x y")]), Bm25Params::default()).unwrap();
        assert!(matches!(index.query_top("   ", 5), Err(Error::EmptyQuery)));
        assert!(matches!(
            index.query_top("x", 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn rebuild_is_identical() {
        let d = docs(&[("a", "x y z"), ("b", "y z w"), ("c", "w w w")]);
        let i1 = SuffixIndex::build(&d, Bm25Params::default()).unwrap();
        let i2 = SuffixIndex::build(&d, Bm25Params::default()).unwrap();
        assert_eq!(i1.debug_dump(), i2.debug_dump());
        assert_eq!(
            i1.query_top("x y w", 3).unwrap(),
            i2.query_top("x y w", 3).unwrap()
        );
    }

    #[test]
    fn scores_non_increasing_and_positive() {
        let index = SuffixIndex::build(
            &docs(&[
                ("a", "cats sleep all day long"),
                ("b", "cats and dogs play"),
                ("c", "dogs bark at night"),
                ("d", "fish swim"),
            ]),
            Bm25Params::default(),
        )
        .unwrap();
        let hits = index.query_top("cats dogs sleep", 10).unwrap();
        assert!(!hits.is_empty());
        for w in hits.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
        assert!(hits.iter().all(|h| h.1 > 0.0));
    }

    // Brute-force BM25 over raw docs; independent of the inverted index.
    fn oracle_scores(pairs: &[(&str, &str)], query: &str, params: Bm25Params) -> Vec<(String, f64)> {
        let toks: Vec<Vec<String>> = pairs.iter().map(|(_, t)| tokenize(t)).collect();
        let n = pairs.len() as f64;
        let avg = toks.iter().map(|t| t.len()).sum::<usize>() as f64 / n;
        let mut query_tokens = tokenize(query);
        query_tokens.truncate(params.query_token_limit);
        let mut out = Vec::new();
        for (i, (id, _)) in pairs.iter().enumerate() {
            let mut score = 0.0;
            for q in &query_tokens {
                let tf = toks[i].iter().filter(|t| *t == q).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = toks.iter().filter(|d| d.contains(q)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let dl = toks[i].len() as f64;
                score += idf * tf * (params.k1 + 1.0)
                    / (tf + params.k1 * (1.0 - params.b + params.b * dl / avg));
            }
            if score > 0.0 {
                out.push((id.to_string(), score));
            }
        }
        out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        out
    }

    #[test]
    fn matches_brute_force_oracle() {
        let pairs = [
            ("s00", "the quick brown fox jumps over the lazy dog"),
            ("s01", "a quick study of brown bears"),
            ("s02", "lazy afternoons and long naps"),
            ("s03", "the dog barks the dog bites"),
            ("s04", "foxes and bears share the forest"),
            ("s05", "completely unrelated words appear"),
            ("s06", "quick quick quick repetition test"),
        ];
        let owned = docs(&pairs);
        let index = SuffixIndex::build(&owned, Bm25Params::default()).unwrap();
        for query in [
            "the quick dog",
            "brown bears in the forest",
            "lazy dog naps",
            "quick",
        ] {
            let got = index.query_top(query, pairs.len()).unwrap();
            let want = oracle_scores(&pairs, query, Bm25Params::default());
            assert_eq!(got.len(), want.len(), "query {query}");
            for (g, w) in got.iter().zip(&want) {
                assert_eq!(g.0, w.0, "query {query}");
                assert!((g.1 - w.1).abs() < 1e-9, "query {query}: {} vs {}", g.1, w.1);
            }
        }
    }

    // With n_prime = N, the result is a permutation of all positive-score
    // docs matching the oracle to 1e-9, on randomized corpora up to 50 docs.
    #[test]
    fn full_depth_query_matches_oracle_on_random_corpora() {
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha20Rng;
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let vocab: Vec<String> = (0..25).map(|i| format!("v{i:02}")).collect();
        for trial in 0..15 {
            let n_docs = rng.gen_range(2..=50);
            let owned: Vec<(String, String)> = (0..n_docs)
                .map(|d| {
                    let len = rng.gen_range(3..15);
                    let text: Vec<String> = (0..len)
                        .map(|_| vocab[rng.gen_range(0..vocab.len())].clone())
                        .collect();
                    (format!("d{d:02}"), text.join(" "))
                })
                .collect();
            let borrowed: Vec<(&str, &str)> = owned
                .iter()
                .map(|(i, t)| (i.as_str(), t.as_str()))
                .collect();
            let index = SuffixIndex::build(&owned, Bm25Params::default()).unwrap();
            let qlen = rng.gen_range(1..8);
            let query: Vec<String> = (0..qlen)
                .map(|_| vocab[rng.gen_range(0..vocab.len())].clone())
                .collect();
            let query = query.join(" ");
            let got = index.query_top(&query, n_docs).unwrap();
            let want = oracle_scores(&borrowed, &query, Bm25Params::default());
            assert_eq!(got.len(), want.len(), "trial {trial} query {query}");
            for (g, w) in got.iter().zip(&want) {
                assert_eq!(g.0, w.0, "trial {trial}");
                assert!((g.1 - w.1).abs() < 1e-9);
            }
        }
    }
}
