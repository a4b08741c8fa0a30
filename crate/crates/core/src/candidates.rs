//! Candidate names for masked examples: prompt construction, completion
//! parsing, an OpenAI-compatible chat client with retries, and replay files.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::ident::{Candidate, Identifier, Placeholder};
use crate::miner::{standalone_occurrences, MaskedExample};

pub const MAX_K: usize = 64;

const DEFAULT_SYSTEM_TEXT: &str = "You repair variable names in C++ code. \
The user sends a single C++ function in which every occurrence of one variable \
has been replaced by a placeholder token such as <ID_1>. Choose a natural, \
descriptive name for each placeholder that fits how the variable is used. \
Answer with only a JSON object that maps each placeholder to its name, \
for example {\"<ID_1>\": \"name\"}.";

#[derive(Debug, Error)]
pub enum CandidateError {
    #[error("no JSON object found in completion")]
    NoJson,
    #[error("completion is not a bare JSON object")]
    NotStrictJson,
    #[error("invalid sampling config: {0}")]
    Config(String),
    #[error("invalid prompt template: {0}")]
    Template(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerationError {
    #[error("transport failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("no stored candidates for example {0}")]
    Missing(String),
    #[error("stored candidates rejected: {0}")]
    Invalid(String),
    #[error("recorded generation error: {0}")]
    Recorded(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub input_text: String,
    pub target_text: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system_text: String,
    #[serde(default)]
    pub shots: Vec<Shot>,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate::zero_shot()
    }
}

impl PromptTemplate {
    pub fn zero_shot() -> Self {
        PromptTemplate {
            system_text: DEFAULT_SYSTEM_TEXT.to_string(),
            shots: Vec::new(),
        }
    }

    pub fn with_shots(shots: Vec<Shot>) -> Result<Self, CandidateError> {
        let t = PromptTemplate {
            system_text: DEFAULT_SYSTEM_TEXT.to_string(),
            shots,
        };
        t.validate()?;
        Ok(t)
    }

    /// Reads a JSON array of `{"input_text", "target_text"}` shots.
    pub fn load_shots(path: &Path) -> Result<Vec<Shot>, CandidateError> {
        let body = std::fs::read_to_string(path).map_err(|source| CandidateError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&body).map_err(|source| CandidateError::Json {
            path: path.to_path_buf(),
            line: source.line(),
            source,
        })
    }

    pub fn validate(&self) -> Result<(), CandidateError> {
        for (i, shot) in self.shots.iter().enumerate() {
            if shot.target_text.is_empty() {
                return Err(CandidateError::Template(format!("shot {i} has an empty mapping")));
            }
            for (token, name) in &shot.target_text {
                Placeholder::parse(token)
                    .map_err(|e| CandidateError::Template(format!("shot {i}: {e}")))?;
                Identifier::new(name.as_str())
                    .map_err(|e| CandidateError::Template(format!("shot {i}: {e}")))?;
                if !shot.input_text.contains(token.as_str()) {
                    return Err(CandidateError::Template(format!(
                        "shot {i}: {token} not present in input_text"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

/// System turn, one user/assistant pair per shot, then the masked function.
pub fn build_prompt(template: &PromptTemplate, example: &MaskedExample) -> Vec<ChatMessage> {
    let mut messages = Vec::with_capacity(2 + 2 * template.shots.len());
    messages.push(ChatMessage {
        role: Role::System,
        content: template.system_text.clone(),
    });
    for shot in &template.shots {
        messages.push(ChatMessage {
            role: Role::User,
            content: shot.input_text.clone(),
        });
        messages.push(ChatMessage {
            role: Role::Assistant,
            content: serde_json::to_string(&shot.target_text).expect("string map serializes"),
        });
    }
    messages.push(ChatMessage {
        role: Role::User,
        content: example.input_text.clone(),
    });
    messages
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedMapping {
    pub entries: BTreeMap<String, Identifier>,
    /// `(key, value)` pairs whose value is not a usable identifier.
    pub rejected: Vec<(String, String)>,
}

fn mapping_from_object(obj: &serde_json::Map<String, Value>) -> ParsedMapping {
    let mut entries = BTreeMap::new();
    let mut rejected = Vec::new();
    for (key, value) in obj {
        let text = match value {
            Value::String(s) => s.trim().to_string(),
            other => other.to_string(),
        };
        match Identifier::new(text.clone()) {
            Ok(id) => {
                entries.insert(key.clone(), id);
            }
            Err(_) => rejected.push((key.clone(), text)),
        }
    }
    ParsedMapping { entries, rejected }
}

/// First JSON object in a completion, tolerating prose and code fences.
pub fn parse_json_mapping(completion: &str) -> Result<ParsedMapping, CandidateError> {
    for (start, _) in completion.match_indices('{') {
        let mut stream =
            serde_json::Deserializer::from_str(&completion[start..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(obj))) = stream.next() {
            return Ok(mapping_from_object(&obj));
        }
    }
    Err(CandidateError::NoJson)
}

/// Strict variant: the trimmed completion must be exactly one JSON object.
pub fn parse_json_mapping_strict(completion: &str) -> Result<ParsedMapping, CandidateError> {
    match serde_json::from_str::<Value>(completion.trim()) {
        Ok(Value::Object(obj)) => Ok(mapping_from_object(&obj)),
        _ => Err(CandidateError::NotStrictJson),
    }
}

fn numbered_line(line: &str) -> Option<&str> {
    let line = line.trim_start();
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = &line[digits..];
    let rest = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
    let word = rest.split_whitespace().next()?;
    Some(word.trim_matches(|c: char| matches!(c, '`' | '*' | '"' | '\'' | ',' | ';' | ':')))
}

/// Up to five distinct identifiers from `N. name` / `N) name` lines.
pub fn parse_numbered_candidates(completion: &str) -> Vec<Identifier> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for word in completion.lines().filter_map(numbered_line) {
        if let Ok(id) = Identifier::new(word) {
            if seen.insert(id.clone()) {
                out.push(id);
                if out.len() == 5 {
                    break;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub k: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            k: 10,
            temperature: 0.8,
            top_p: 0.9,
            max_tokens: 64,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), CandidateError> {
        let bad = |m: &str| Err(CandidateError::Config(m.to_string()));
        if self.k == 0 || self.k > MAX_K {
            return bad("k must be in 1..=64");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be non-negative");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must be in (0, 1]");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        Ok(())
    }
}

/// How the k samples are requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// k requests with `n = 1`.
    #[default]
    Independent,
    /// One request with `n = k`.
    Batched,
}

/// What the candidate order in a list means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ranking {
    /// Sorted by summed token log-probability, ties by sample order.
    Logprob,
    /// Order in which samples arrived; no log-probabilities were reported.
    SampleOrder,
    /// Replayed from a candidate file.
    Stored,
    /// Sorted by reranker score.
    Reranked,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub n: usize,
    pub max_tokens: u32,
    pub logprobs: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatChoice {
    pub content: String,
    pub logprobs: Option<Vec<TokenLogprob>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("retryable: {0}")]
    Retryable(String),
    #[error("fatal: {0}")]
    Fatal(String),
}

/// A chat-completion endpoint.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<ChatChoice>, TransportError>;
}

/// Parses the `choices` array of an OpenAI-style chat completion body.
pub fn parse_chat_response(body: &Value) -> Result<Vec<ChatChoice>, TransportError> {
    let choices = body
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| TransportError::Fatal("response has no choices".into()))?;
    Ok(choices
        .iter()
        .map(|c| {
            let content = c
                .pointer("/message/content")
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_string();
            let logprobs = c.pointer("/logprobs/content").and_then(Value::as_array).map(|toks| {
                toks.iter()
                    .filter_map(|t| {
                        Some(TokenLogprob {
                            token: t.get("token")?.as_str()?.to_string(),
                            logprob: t.get("logprob")?.as_f64()?,
                        })
                    })
                    .collect()
            });
            ChatChoice { content, logprobs }
        })
        .collect())
}

pub struct HttpChatClient {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpChatClient {
    /// The bearer token, if any, is read from the environment variable `api_key_env`.
    pub fn new(endpoint: &str, api_key_env: Option<&str>, timeout: Duration) -> Self {
        let api_key = api_key_env.and_then(|name| std::env::var(name).ok());
        HttpChatClient {
            endpoint: endpoint.to_string(),
            api_key,
            client: reqwest::blocking::Client::builder()
                .timeout(timeout)
                .build()
                .expect("http client builds"),
        }
    }
}

impl ChatTransport for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<ChatChoice>, TransportError> {
        let mut req = self.client.post(&self.endpoint).json(request);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| TransportError::Retryable(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(TransportError::Retryable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(TransportError::Fatal(format!("HTTP {status}")));
        }
        let body: Value = resp
            .json()
            .map_err(|e| TransportError::Retryable(format!("bad body: {e}")))?;
        parse_chat_response(&body)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// Runs `op` until it succeeds, fails fatally, or attempts run out. The
    /// delay doubles after every failed attempt.
    pub fn run<T, E: std::fmt::Display>(
        &self,
        mut op: impl FnMut() -> Result<T, E>,
        retryable: impl Fn(&E) -> bool,
    ) -> Result<T, (u32, String)> {
        let mut delay = self.base_delay;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if attempt < self.attempts && retryable(&e) => {
                    debug!("attempt {attempt} failed: {e}; retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                Err(e) => return Err((attempt, e.to_string())),
            }
        }
    }
}

/// Candidates for one example plus what their order means.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateList {
    pub candidates: Vec<Candidate>,
    pub ranking: Ranking,
    pub sampling: Option<SamplingMode>,
}

/// Anything that proposes names for a masked example.
pub trait CandidateSource: Sync {
    fn generate(&self, example: &MaskedExample) -> Result<CandidateList, GenerationError>;
    fn describe(&self) -> String;
}

/// Generator backend configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorBackend {
    HttpChat {
        endpoint: String,
        model: String,
        /// Name of the environment variable holding the bearer token.
        api_key_env: Option<String>,
    },
    File {
        path: PathBuf,
    },
}

/// Sum of the log-probabilities of the tokens overlapping the first standalone
/// occurrence of `name` in `content`.
fn name_logprob(content: &str, name: &str, tokens: &[TokenLogprob]) -> Option<f64> {
    let start = *standalone_occurrences(content, name).first()?;
    let end = start + name.len();
    let mut offset = 0;
    let mut sum = 0.0;
    let mut touched = false;
    for tok in tokens {
        let tok_end = offset + tok.token.len();
        if tok_end > start && offset < end {
            sum += tok.logprob;
            touched = true;
        }
        offset = tok_end;
    }
    (offset == content.len() && touched).then_some(sum)
}

/// Names in one completion: the JSON mapping's value for `<ID_1>`, or a
/// numbered list when no JSON object is present.
pub fn names_from_completion(content: &str, strict: bool) -> Vec<Identifier> {
    let parsed = if strict {
        parse_json_mapping_strict(content)
    } else {
        parse_json_mapping(content)
    };
    match parsed {
        Ok(mapping) => {
            let token = Placeholder::FIRST.token();
            match mapping.entries.get(&token) {
                Some(id) => vec![id.clone()],
                None if mapping.entries.len() == 1 && mapping.rejected.is_empty() => {
                    mapping.entries.into_values().collect()
                }
                None => Vec::new(),
            }
        }
        Err(_) if !strict => parse_numbered_candidates(content),
        Err(_) => Vec::new(),
    }
}

/// Deduplicates the names of several completions into at most `k` candidates.
pub fn assemble_candidates(choices: &[ChatChoice], k: usize, strict: bool) -> CandidateList {
    let mut seen = HashSet::new();
    let mut out: Vec<Candidate> = Vec::new();
    let mut all_logprobs = !choices.is_empty();
    for choice in choices {
        for name in names_from_completion(&choice.content, strict) {
            if out.len() == k {
                break;
            }
            if !seen.insert(name.clone()) {
                continue;
            }
            let lp = choice
                .logprobs
                .as_deref()
                .and_then(|toks| name_logprob(&choice.content, name.as_str(), toks));
            all_logprobs &= lp.is_some();
            out.push(Candidate::with_logprob(name, lp));
        }
    }
    let ranking = if all_logprobs && !out.is_empty() {
        // stable: equal log-probabilities keep sample order
        out.sort_by(|a, b| {
            b.gen_logprob
                .unwrap_or(f64::NEG_INFINITY)
                .total_cmp(&a.gen_logprob.unwrap_or(f64::NEG_INFINITY))
        });
        Ranking::Logprob
    } else {
        Ranking::SampleOrder
    };
    CandidateList {
        candidates: out,
        ranking,
        sampling: None,
    }
}

pub struct ChatCandidateSource {
    pub transport: Box<dyn ChatTransport>,
    pub model: String,
    pub template: PromptTemplate,
    pub sampling: SamplingConfig,
    pub mode: SamplingMode,
    pub retry: RetryPolicy,
    pub strict_json: bool,
}

impl ChatCandidateSource {
    pub fn request(&self, example: &MaskedExample, n: usize) -> ChatRequest {
        ChatRequest {
            model: self.model.clone(),
            messages: build_prompt(&self.template, example),
            temperature: self.sampling.temperature,
            top_p: self.sampling.top_p,
            n,
            max_tokens: self.sampling.max_tokens,
            logprobs: true,
        }
    }

    fn call(&self, request: &ChatRequest) -> Result<Vec<ChatChoice>, GenerationError> {
        self.retry
            .run(
                || self.transport.complete(request),
                |e| matches!(e, TransportError::Retryable(_)),
            )
            .map_err(|(attempts, message)| GenerationError::Transport { attempts, message })
    }
}

impl CandidateSource for ChatCandidateSource {
    fn generate(&self, example: &MaskedExample) -> Result<CandidateList, GenerationError> {
        let k = self.sampling.k;
        let choices = match self.mode {
            SamplingMode::Batched => self.call(&self.request(example, k))?,
            SamplingMode::Independent => {
                let request = self.request(example, 1);
                let mut all = Vec::with_capacity(k);
                for _ in 0..k {
                    all.extend(self.call(&request)?);
                }
                all
            }
        };
        let mut list = assemble_candidates(&choices, k, self.strict_json);
        list.sampling = Some(self.mode);
        Ok(list)
    }

    fn describe(&self) -> String {
        format!("http_chat:{}", self.model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub name: String,
    pub logprob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerank_score: Option<f64>,
}

/// One line of a candidate file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub id: String,
    pub candidates: Vec<CandidateEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranking: Option<Ranking>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CandidateRecord {
    pub fn from_list(id: &str, list: &CandidateList) -> Self {
        CandidateRecord {
            id: id.to_string(),
            candidates: list
                .candidates
                .iter()
                .map(|c| CandidateEntry {
                    name: c.name.to_string(),
                    logprob: c.gen_logprob,
                    rerank_score: c.rerank_score,
                })
                .collect(),
            ranking: Some(list.ranking),
            sampling: list.sampling,
            error: None,
        }
    }

    pub fn from_error(id: &str, err: &GenerationError) -> Self {
        CandidateRecord {
            id: id.to_string(),
            candidates: Vec::new(),
            ranking: None,
            sampling: None,
            error: Some(err.to_string()),
        }
    }

    /// Validated candidates; duplicate or invalid names reject the record.
    pub fn to_candidates(&self) -> Result<Vec<Candidate>, GenerationError> {
        if let Some(err) = &self.error {
            return Err(GenerationError::Recorded(err.clone()));
        }
        let mut seen = HashSet::new();
        self.candidates
            .iter()
            .map(|e| {
                let name = Identifier::new(e.name.as_str())
                    .map_err(|err| GenerationError::Invalid(err.to_string()))?;
                if !seen.insert(name.clone()) {
                    return Err(GenerationError::Invalid(format!("duplicate candidate `{name}`")));
                }
                Ok(Candidate {
                    name,
                    gen_logprob: e.logprob,
                    rerank_score: e.rerank_score,
                })
            })
            .collect()
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("candidate records serialize")
    }
}

pub fn read_candidate_file(path: &Path) -> Result<Vec<CandidateRecord>, CandidateError> {
    let file = std::fs::File::open(path).map_err(|source| CandidateError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CandidateError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| CandidateError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

/// Replays stored candidate lists by example id.
#[derive(Debug, Clone, Default)]
pub struct FileCandidateSource {
    path: PathBuf,
    records: HashMap<String, CandidateRecord>,
}

impl FileCandidateSource {
    pub fn load(path: &Path) -> Result<Self, CandidateError> {
        let records = read_candidate_file(path)?;
        Ok(Self::from_records(path, records))
    }

    pub fn from_records(path: &Path, records: Vec<CandidateRecord>) -> Self {
        let mut map = HashMap::with_capacity(records.len());
        for r in records {
            if map.contains_key(&r.id) {
                warn!("duplicate candidate record for {}; keeping the first", r.id);
                continue;
            }
            map.insert(r.id.clone(), r);
        }
        FileCandidateSource {
            path: path.to_path_buf(),
            records: map,
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }
}

impl CandidateSource for FileCandidateSource {
    fn generate(&self, example: &MaskedExample) -> Result<CandidateList, GenerationError> {
        let record = self
            .records
            .get(&example.id)
            .ok_or_else(|| GenerationError::Missing(example.id.clone()))?;
        Ok(CandidateList {
            candidates: record.to_candidates()?,
            ranking: Ranking::Stored,
            sampling: record.sampling,
        })
    }

    fn describe(&self) -> String {
        format!("file:{}", self.path.display())
    }
}

/// Builds the source described by `backend`.
pub fn open_backend(
    backend: &GeneratorBackend,
    template: PromptTemplate,
    sampling: SamplingConfig,
    mode: SamplingMode,
) -> Result<Box<dyn CandidateSource>, CandidateError> {
    sampling.validate()?;
    template.validate()?;
    Ok(match backend {
        GeneratorBackend::File { path } => Box::new(FileCandidateSource::load(path)?),
        GeneratorBackend::HttpChat {
            endpoint,
            model,
            api_key_env,
        } => Box::new(ChatCandidateSource {
            transport: Box::new(HttpChatClient::new(
                endpoint,
                api_key_env.as_deref(),
                Duration::from_secs(120),
            )),
            model: model.clone(),
            template,
            sampling,
            mode,
            retry: RetryPolicy::default(),
            strict_json: false,
        }),
    })
}

/// Candidate lists for one example, truncated to `k`.
pub fn generate_candidates(
    source: &dyn CandidateSource,
    example: &MaskedExample,
    k: usize,
) -> Result<CandidateList, GenerationError> {
    let mut list = source.generate(example)?;
    list.candidates.truncate(k);
    Ok(list)
}

/// Generates for many examples with at most `jobs` requests in flight.
/// Results come back in input order.
pub fn generate_all(
    source: &dyn CandidateSource,
    examples: &[MaskedExample],
    k: usize,
    jobs: usize,
) -> Vec<Result<CandidateList, GenerationError>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool builds");
    pool.install(|| {
        examples
            .par_iter()
            .map(|ex| generate_candidates(source, ex, k))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miner::{ExampleMeta, SiteKind};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    fn example(text: &str) -> MaskedExample {
        MaskedExample {
            id: "ex1".into(),
            input_text: text.into(),
            target_text: BTreeMap::from([("<ID_1>".into(), "count".into())]),
            meta: ExampleMeta {
                file_id: "f.cpp".into(),
                byte_start: 0,
                kind: SiteKind::Local,
                occurrence_count: 1,
            },
        }
    }

    fn shots() -> Vec<Shot> {
        (0..3)
            .map(|i| Shot {
                input_text: format!("int f{i}(){{ int <ID_1> = {i}; return <ID_1>; }}"),
                target_text: BTreeMap::from([("<ID_1>".into(), format!("value{i}"))]),
            })
            .collect()
    }

    #[test]
    fn prompt_shapes() {
        let ex = example("int <ID_1> = 0;");
        let zero = build_prompt(&PromptTemplate::zero_shot(), &ex);
        assert_eq!(zero.len(), 2);
        assert_eq!(zero[0].role, Role::System);
        assert_eq!(zero[1].content, ex.input_text);

        let three = build_prompt(&PromptTemplate::with_shots(shots()).unwrap(), &ex);
        assert_eq!(three.len(), 8);
        let roles: Vec<Role> = three.iter().map(|m| m.role).collect();
        assert_eq!(
            roles,
            [
                Role::System,
                Role::User,
                Role::Assistant,
                Role::User,
                Role::Assistant,
                Role::User,
                Role::Assistant,
                Role::User
            ]
        );
        assert_eq!(three[2].content, "{\"<ID_1>\":\"value0\"}");
        assert_eq!(three[7].content, ex.input_text);
    }

    #[test]
    fn request_body_is_deterministic() {
        let src = ChatCandidateSource {
            transport: Box::new(ScriptedTransport::new(vec![])),
            model: "m".into(),
            template: PromptTemplate::with_shots(shots()).unwrap(),
            sampling: SamplingConfig::default(),
            mode: SamplingMode::Independent,
            retry: RetryPolicy::default(),
            strict_json: false,
        };
        let ex = example("int <ID_1> = 0;");
        let a = serde_json::to_string(&src.request(&ex, 1)).unwrap();
        let b = serde_json::to_string(&src.request(&ex, 1)).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("{\"model\":\"m\",\"messages\":[{\"role\":\"system\""));
        assert!(a.contains("\"temperature\":0.8,\"top_p\":0.9"));
    }

    #[test]
    fn invalid_shot_rejected() {
        let mut bad = shots();
        bad[1].target_text.insert("<ID_1>".into(), "9lives".into());
        assert!(PromptTemplate::with_shots(bad).is_err());
    }

    #[test]
    fn json_mapping_variants() {
        let m = parse_json_mapping("{\"<ID_1>\": \"jsonValue\"}").unwrap();
        assert_eq!(m.entries["<ID_1>"].as_str(), "jsonValue");
        let m = parse_json_mapping("```json\n{\"<ID_1>\":\"buf\"}\n```").unwrap();
        assert_eq!(m.entries["<ID_1>"].as_str(), "buf");
        assert!(matches!(parse_json_mapping("sorry, I cannot"), Err(CandidateError::NoJson)));
        let m = parse_json_mapping("Sure {oops} here: {\"<ID_1>\": \"for\", \"<ID_2>\": \"ok\"}").unwrap();
        assert_eq!(m.rejected, vec![("<ID_1>".to_string(), "for".to_string())]);
        assert_eq!(m.entries.len(), 1);
        assert!(parse_json_mapping_strict("x {\"<ID_1>\":\"a\"}").is_err());
        assert!(parse_json_mapping_strict(" {\"<ID_1>\":\"a\"}\n").is_ok());
    }

    #[test]
    fn numbered_candidates() {
        let names = |s: &str| -> Vec<String> {
            parse_numbered_candidates(s).into_iter().map(String::from).collect()
        };
        assert_eq!(names("1. json\n2. jsonValue\n3. data"), ["json", "jsonValue", "data"]);
        assert_eq!(names("1. json\n2. json"), ["json"]);
        assert_eq!(names("1. 2fast\n2. ok"), ["ok"]);
        assert_eq!(names("1) `a`\n2) **b**\n3. c\n4. d\n5. e\n6. f"), ["a", "b", "c", "d", "e"]);
        assert!(names("no list here").is_empty());
    }

    #[test]
    fn sampling_config_bounds() {
        assert!(SamplingConfig::default().validate().is_ok());
        assert!(SamplingConfig { k: 65, ..Default::default() }.validate().is_err());
        assert!(SamplingConfig { top_p: 0.0, ..Default::default() }.validate().is_err());
        assert!(SamplingConfig { temperature: -1.0, ..Default::default() }.validate().is_err());
    }

    struct ScriptedTransport {
        replies: Mutex<Vec<Result<Vec<ChatChoice>, TransportError>>>,
        calls: AtomicUsize,
    }

    impl ScriptedTransport {
        fn new(mut replies: Vec<Result<Vec<ChatChoice>, TransportError>>) -> Self {
            replies.reverse();
            ScriptedTransport {
                replies: Mutex::new(replies),
                calls: AtomicUsize::new(0),
            }
        }
    }

    impl ChatTransport for ScriptedTransport {
        fn complete(&self, _: &ChatRequest) -> Result<Vec<ChatChoice>, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.replies
                .lock()
                .unwrap()
                .pop()
                .unwrap_or_else(|| Err(TransportError::Fatal("script exhausted".into())))
        }
    }

    fn choice(content: &str) -> ChatChoice {
        ChatChoice {
            content: content.into(),
            logprobs: None,
        }
    }

    fn source(replies: Vec<Result<Vec<ChatChoice>, TransportError>>, k: usize) -> ChatCandidateSource {
        ChatCandidateSource {
            transport: Box::new(ScriptedTransport::new(replies)),
            model: "m".into(),
            template: PromptTemplate::zero_shot(),
            sampling: SamplingConfig {
                k,
                ..Default::default()
            },
            mode: SamplingMode::Independent,
            retry: RetryPolicy {
                attempts: 3,
                base_delay: Duration::ZERO,
            },
            strict_json: false,
        }
    }

    #[test]
    fn independent_samples_are_deduplicated() {
        let names = ["count", "cnt", "count", "n", "total", "cnt", "n", "x", "y", "count"];
        let replies = names
            .iter()
            .map(|n| Ok(vec![choice(&format!("{{\"<ID_1>\": \"{n}\"}}"))]))
            .collect();
        let src = source(replies, 10);
        let list = src.generate(&example("int <ID_1>;")).unwrap();
        let got: Vec<&str> = list.candidates.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(got, ["count", "cnt", "n", "total", "x", "y"]);
        assert_eq!(list.ranking, Ranking::SampleOrder);
        assert_eq!(list.sampling, Some(SamplingMode::Independent));
    }

    #[test]
    fn retries_then_reports_transport_error() {
        let flaky = vec![
            Err(TransportError::Retryable("timeout".into())),
            Ok(vec![choice("{\"<ID_1>\": \"a\"}")]),
        ];
        let src = source(flaky, 1);
        assert_eq!(src.generate(&example("<ID_1>")).unwrap().candidates.len(), 1);

        let dead = (0..5).map(|_| Err(TransportError::Retryable("down".into()))).collect();
        let src = source(dead, 1);
        match src.generate(&example("<ID_1>")) {
            Err(GenerationError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unparsable_completions_give_empty_list() {
        let replies = (0..3).map(|_| Ok(vec![choice("I cannot help")])).collect();
        let list = source(replies, 3).generate(&example("<ID_1>")).unwrap();
        assert!(list.candidates.is_empty());
    }

    #[test]
    fn logprob_ranking() {
        let tok = |t: &str, lp: f64| TokenLogprob {
            token: t.into(),
            logprob: lp,
        };
        let a = ChatChoice {
            content: "{\"<ID_1>\": \"jsonValue\"}".into(),
            logprobs: Some(vec![
                tok("{\"<ID_1>\": \"", -0.1),
                tok("json", -0.5),
                tok("Value", -0.25),
                tok("\"}", -0.01),
            ]),
        };
        let b = ChatChoice {
            content: "{\"<ID_1>\": \"buf\"}".into(),
            logprobs: Some(vec![tok("{\"<ID_1>\": \"", -0.1), tok("buf", -0.2), tok("\"}", 0.0)]),
        };
        let list = assemble_candidates(&[a, b], 10, false);
        assert_eq!(list.ranking, Ranking::Logprob);
        assert_eq!(list.candidates[0].name.as_str(), "buf");
        assert_eq!(list.candidates[0].gen_logprob, Some(-0.2));
        assert_eq!(list.candidates[1].gen_logprob, Some(-0.75));
    }

    #[test]
    fn response_parsing() {
        let body: Value = serde_json::from_str(
            r#"{"choices":[{"message":{"role":"assistant","content":"{\"<ID_1>\":\"x\"}"},
                "logprobs":{"content":[{"token":"{","logprob":-0.5}]}}]}"#,
        )
        .unwrap();
        let choices = parse_chat_response(&body).unwrap();
        assert_eq!(choices[0].content, "{\"<ID_1>\":\"x\"}");
        assert_eq!(choices[0].logprobs.as_ref().unwrap()[0].logprob, -0.5);
        assert!(parse_chat_response(&serde_json::json!({})).is_err());
    }

    #[test]
    fn file_backend_replays_verbatim() {
        let rec = CandidateRecord {
            id: "ex1".into(),
            candidates: vec![
                CandidateEntry {
                    name: "json".into(),
                    logprob: None,
                    rerank_score: None,
                },
                CandidateEntry {
                    name: "buf".into(),
                    logprob: Some(-1.5),
                    rerank_score: None,
                },
            ],
            ranking: None,
            sampling: None,
            error: None,
        };
        let src = FileCandidateSource::from_records(Path::new("mem"), vec![rec.clone()]);
        let list = src.generate(&example("<ID_1>")).unwrap();
        let names: Vec<&str> = list.candidates.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["json", "buf"]);
        assert_eq!(list.candidates[1].gen_logprob, Some(-1.5));
        assert_eq!(
            rec.to_line(),
            r#"{"id":"ex1","candidates":[{"name":"json","logprob":null},{"name":"buf","logprob":-1.5}]}"#
        );
        let mut missing = example("<ID_1>");
        missing.id = "other".into();
        assert!(matches!(src.generate(&missing), Err(GenerationError::Missing(_))));

        let mut dup = rec;
        dup.candidates[1].name = "json".into();
        assert!(dup.to_candidates().is_err());
    }
}
