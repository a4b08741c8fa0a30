//! Exact Match, Top-5 Hit and embedding-based Partial Match, per example and
//! aggregated, with JSON summary and JSONL record output.

use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::candidates::{generate_candidates, CandidateSource, RetryPolicy};
use crate::ident::{split_word, Candidate};
use crate::io::{write_atomic, write_jsonl};
use crate::miner::MaskedExample;
use crate::reranker::{rerank, DualEncoderModel};

pub const TOP_N: usize = 5;
pub const MIN_BUILTIN_DIM: usize = 64;
pub const DEFAULT_BUILTIN_DIM: usize = 256;

pub fn exact_match(top: &str, gold: &str) -> bool {
    top.eq_ignore_ascii_case(gold)
}

/// Whether the gold name is among the first five candidates.
pub fn top5_hit<S: AsRef<str>>(candidates: &[S], gold: &str) -> bool {
    candidates.iter().take(TOP_N).any(|c| exact_match(c.as_ref(), gold))
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = libm::sqrt(a.iter().map(|x| x * x).sum::<f64>());
    let nb = libm::sqrt(b.iter().map(|x| x * x).sum::<f64>());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// `100 * (cos + 1) / 2`, clamped to `[0, 100]`.
pub fn partial_from_vectors(a: &[f64], b: &[f64]) -> f64 {
    (100.0 * (cosine(a, b) + 1.0) / 2.0).clamp(0.0, 100.0)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmbedError {
    #[error("builtin embedder needs dim >= {MIN_BUILTIN_DIM}, got {0}")]
    Dim(usize),
    #[error("embedding request failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("bad embedding response: {0}")]
    Response(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    HttpEmbedding,
    BuiltinNgram,
}

/// How an embedder is built; credentials are named, never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderConfig {
    BuiltinNgram {
        dim: usize,
    },
    HttpEmbedding {
        endpoint: String,
        model: String,
        dim: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        api_key_env: Option<String>,
    },
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::BuiltinNgram {
            dim: DEFAULT_BUILTIN_DIM,
        }
    }
}

impl EmbedderConfig {
    pub fn kind(&self) -> EmbedderKind {
        match self {
            EmbedderConfig::BuiltinNgram { .. } => EmbedderKind::BuiltinNgram,
            EmbedderConfig::HttpEmbedding { .. } => EmbedderKind::HttpEmbedding,
        }
    }

    pub fn build(&self) -> Result<Box<dyn Embedder>, EmbedError> {
        Ok(match self {
            EmbedderConfig::BuiltinNgram { dim } => Box::new(BuiltinEmbedder::new(*dim)?),
            EmbedderConfig::HttpEmbedding {
                endpoint,
                model,
                dim,
                api_key_env,
            } => Box::new(HttpEmbedder::new(
                endpoint,
                model,
                *dim,
                api_key_env.as_deref(),
                Duration::from_secs(60),
            )),
        })
    }
}

pub trait Embedder: Sync {
    /// One vector of length `dim()` per input, in order.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError>;
    fn dim(&self) -> usize;
    fn config(&self) -> EmbedderConfig;
}

pub fn partial_match(top: &str, gold: &str, embedder: &dyn Embedder) -> Result<f64, EmbedError> {
    let v = embedder.embed_batch(&[top, gold])?;
    Ok(partial_from_vectors(&v[0], &v[1]))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// The string the builtin embedder hashes: case-folded subtokens joined by a
/// space, framed by `^` and `$`.
pub fn builtin_embed_text(text: &str) -> String {
    let body = if text.is_ascii() {
        split_word(text).join(" ")
    } else {
        text.to_lowercase()
    };
    format!("^{body}$")
}

/// Character trigrams of [`builtin_embed_text`], in order, with repeats.
pub fn builtin_trigrams(text: &str) -> Vec<String> {
    let chars: Vec<char> = builtin_embed_text(text).chars().collect();
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

/// Trigram counts hashed (FNV-1a, 64 bit) into `dim` buckets, L2-normalized.
pub fn builtin_embed(text: &str, dim: usize) -> Result<Vec<f64>, EmbedError> {
    if dim < MIN_BUILTIN_DIM {
        return Err(EmbedError::Dim(dim));
    }
    let mut v = vec![0.0; dim];
    for gram in builtin_trigrams(text) {
        v[(fnv1a(gram.as_bytes()) % dim as u64) as usize] += 1.0;
    }
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuiltinEmbedder {
    dim: usize,
}

impl BuiltinEmbedder {
    pub fn new(dim: usize) -> Result<Self, EmbedError> {
        if dim < MIN_BUILTIN_DIM {
            return Err(EmbedError::Dim(dim));
        }
        Ok(BuiltinEmbedder { dim })
    }
}

impl Embedder for BuiltinEmbedder {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        texts.iter().map(|t| builtin_embed(t, self.dim)).collect()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn config(&self) -> EmbedderConfig {
        EmbedderConfig::BuiltinNgram { dim: self.dim }
    }
}

/// OpenAI-compatible `/embeddings` client.
pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    dim: usize,
    api_key_env: Option<String>,
    api_key: Option<String>,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

enum HttpFailure {
    Retryable(String),
    Fatal(String),
}

impl std::fmt::Display for HttpFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HttpFailure::Retryable(m) | HttpFailure::Fatal(m) => f.write_str(m),
        }
    }
}

impl HttpEmbedder {
    pub fn new(
        endpoint: &str,
        model: &str,
        dim: usize,
        api_key_env: Option<&str>,
        timeout: Duration,
    ) -> Self {
        HttpEmbedder {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            dim,
            api_key_env: api_key_env.map(str::to_string),
            api_key: api_key_env.and_then(|name| std::env::var(name).ok()),
            retry: RetryPolicy::default(),
            client: reqwest::blocking::Client::builder()
                .timeout(timeout)
                .build()
                .expect("http client builds"),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn post(&self, texts: &[&str]) -> Result<Value, HttpFailure> {
        let body = serde_json::json!({ "model": self.model, "input": texts });
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| HttpFailure::Retryable(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(HttpFailure::Retryable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(HttpFailure::Fatal(format!("HTTP {status}")));
        }
        resp.json()
            .map_err(|e| HttpFailure::Retryable(format!("bad body: {e}")))
    }
}

/// Vectors from an embeddings response, ordered by their `index` field.
pub fn parse_embedding_response(body: &Value, n: usize, dim: usize) -> Result<Vec<Vec<f64>>, EmbedError> {
    let data = body
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| EmbedError::Response("no data array".into()))?;
    let mut out: Vec<Option<Vec<f64>>> = vec![None; n];
    for (pos, item) in data.iter().enumerate() {
        let idx = item
            .get("index")
            .and_then(Value::as_u64)
            .map(|i| i as usize)
            .unwrap_or(pos);
        let vec: Vec<f64> = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbedError::Response("item without embedding".into()))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| EmbedError::Response("non-numeric value".into())))
            .collect::<Result<_, _>>()?;
        if vec.len() != dim {
            return Err(EmbedError::Response(format!(
                "expected dim {dim}, got {}",
                vec.len()
            )));
        }
        *out
            .get_mut(idx)
            .ok_or_else(|| EmbedError::Response(format!("index {idx} out of range")))? = Some(vec);
    }
    out.into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| EmbedError::Response(format!("missing embedding {i}"))))
        .collect()
}

impl Embedder for HttpEmbedder {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let body = self
            .retry
            .run(|| self.post(texts), |e| matches!(e, HttpFailure::Retryable(_)))
            .map_err(|(attempts, message)| EmbedError::Transport { attempts, message })?;
        parse_embedding_response(&body, texts.len(), self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn config(&self) -> EmbedderConfig {
        EmbedderConfig::HttpEmbedding {
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            dim: self.dim,
            api_key_env: self.api_key_env.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalStatus {
    Ok,
    GenerationError,
    ParseMiss,
    EmbeddingError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredName {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerank_score: Option<f64>,
}

impl From<&Candidate> for ScoredName {
    fn from(c: &Candidate) -> Self {
        ScoredName {
            name: c.name.to_string(),
            logprob: c.gen_logprob,
            rerank_score: c.rerank_score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub gold: String,
    pub top5: Vec<ScoredName>,
    pub exact: u8,
    pub top5_hit: u8,
    pub partial: Option<f64>,
    pub status: EvalStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub backend: String,
    pub k: usize,
    pub reranker: bool,
    pub embedder: EmbedderConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n: usize,
    pub n_ok: usize,
    pub n_errored: usize,
    pub n_parse_miss: usize,
    pub exact_pct: f64,
    pub top5_pct: f64,
    pub partial_mean: f64,
    pub config: EvalConfig,
}

fn failed(example: &MaskedExample, gold: &str, status: EvalStatus, error: Option<String>) -> EvalRecord {
    EvalRecord {
        id: example.id.clone(),
        gold: gold.to_string(),
        top5: Vec::new(),
        exact: 0,
        top5_hit: 0,
        partial: None,
        status,
        error,
    }
}

/// Scores an already ranked candidate list for one example.
pub fn score_candidates(
    example: &MaskedExample,
    candidates: &[Candidate],
    embedder: &dyn Embedder,
) -> EvalRecord {
    let gold = example.gold().unwrap_or_default();
    let top5: Vec<ScoredName> = candidates.iter().take(TOP_N).map(ScoredName::from).collect();
    let Some(top) = top5.first() else {
        return failed(example, gold, EvalStatus::ParseMiss, None);
    };
    let exact = exact_match(&top.name, gold);
    let hit = top5_hit(&top5.iter().map(|c| c.name.as_str()).collect::<Vec<_>>(), gold);
    assert!(!exact || hit, "exact match without top-5 hit for {}", example.id);
    match partial_match(&top.name, gold, embedder) {
        Ok(partial) => EvalRecord {
            id: example.id.clone(),
            gold: gold.to_string(),
            top5,
            exact: exact as u8,
            top5_hit: hit as u8,
            partial: Some(partial),
            status: EvalStatus::Ok,
            error: None,
        },
        Err(e) => EvalRecord {
            top5,
            ..failed(example, gold, EvalStatus::EmbeddingError, Some(e.to_string()))
        },
    }
}

/// Candidates for one example: generate `k`, optionally rerank, then score
/// the top five.
pub fn evaluate_example(
    example: &MaskedExample,
    source: &dyn CandidateSource,
    reranker: Option<&DualEncoderModel>,
    embedder: &dyn Embedder,
    k: usize,
) -> EvalRecord {
    let gold = match example.gold() {
        Some(g) if !g.is_empty() => g,
        _ => {
            return failed(
                example,
                "",
                EvalStatus::GenerationError,
                Some("example has no gold name for <ID_1>".into()),
            )
        }
    };
    let candidates = match generate_candidates(source, example, k) {
        Ok(list) => list.candidates,
        Err(e) => return failed(example, gold, EvalStatus::GenerationError, Some(e.to_string())),
    };
    let candidates = match reranker {
        Some(model) => rerank(model, example, candidates),
        None => candidates,
    };
    score_candidates(example, &candidates, embedder)
}

pub fn summarize(records: &[EvalRecord], config: EvalConfig) -> EvalSummary {
    let ok: Vec<&EvalRecord> = records.iter().filter(|r| r.status == EvalStatus::Ok).collect();
    let n_parse_miss = records
        .iter()
        .filter(|r| r.status == EvalStatus::ParseMiss)
        .count();
    let mean = |f: &dyn Fn(&EvalRecord) -> f64| {
        if ok.is_empty() {
            0.0
        } else {
            ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
        }
    };
    let summary = EvalSummary {
        n: records.len(),
        n_ok: ok.len(),
        n_errored: records.len() - ok.len() - n_parse_miss,
        n_parse_miss,
        exact_pct: 100.0 * mean(&|r| r.exact as f64),
        top5_pct: 100.0 * mean(&|r| r.top5_hit as f64),
        partial_mean: mean(&|r| r.partial.unwrap_or(0.0)),
        config,
    };
    assert!(summary.exact_pct <= summary.top5_pct);
    summary
}

/// Runs the harness over a dataset. Per-example failures land in the record
/// status; records keep input order.
pub fn evaluate(
    examples: &[MaskedExample],
    source: &dyn CandidateSource,
    reranker: Option<&DualEncoderModel>,
    embedder: &dyn Embedder,
    k: usize,
    jobs: usize,
) -> (EvalSummary, Vec<EvalRecord>) {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool builds");
    let records: Vec<EvalRecord> = pool.install(|| {
        examples
            .par_iter()
            .map(|ex| evaluate_example(ex, source, reranker, embedder, k))
            .collect()
    });
    let config = EvalConfig {
        backend: source.describe(),
        k,
        reranker: reranker.is_some(),
        embedder: embedder.config(),
    };
    (summarize(&records, config), records)
}

pub fn write_summary(path: &Path, summary: &EvalSummary) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn write_records(path: &Path, records: &[EvalRecord]) -> std::io::Result<()> {
    write_jsonl(path, records)
}
