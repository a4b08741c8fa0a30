use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use namerepair::candidates::{
    generate_all, read_candidate_file, CandidateRecord, CandidateSource, ChatCandidateSource,
    FileCandidateSource, GenerationError, HttpChatClient, PromptTemplate, Ranking, RetryPolicy,
    SamplingConfig, SamplingMode,
};
use namerepair::eval::{evaluate, write_records, write_summary, EmbedderConfig};
use namerepair::ident::Placeholder;
use namerepair::io::{read_jsonl, write_jsonl};
use namerepair::miner::{
    list_directory, list_manifest, make_splits, mine_files, MaskedExample, MineOptions, SplitSpec,
};
use namerepair::reranker::{
    load_model, mine_training_pairs, rerank as rerank_example, save_model, train_reranker as fit_reranker,
    ModelConfig, ScoringConfig, TrainConfig, TrainError,
};
use namerepair::schedule::ScheduleKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{
    required, resolve, sidecar, write_json, CliError, CliResult, EXIT_DIVERGENCE, EXIT_GENERATION,
};
use crate::{EvalFlags, GenerateFlags, MineFlags, RerankFlags, SplitFlags, TrainFlags};

fn read_examples(path: &Path) -> CliResult<Vec<MaskedExample>> {
    read_jsonl(path).map_err(|e| CliError::input(format!("cannot read examples: {e}")))
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> CliResult<()> {
    write_jsonl(path, items)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

fn read_candidates(path: &Path) -> CliResult<Vec<CandidateRecord>> {
    read_candidate_file(path).map_err(|e| CliError::input(e.to_string()))
}

// ---- mine ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MineConfig {
    pub input_dir: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub max_functions: Option<usize>,
    pub placeholder: u32,
}

impl Default for MineConfig {
    fn default() -> Self {
        MineConfig {
            input_dir: None,
            manifest: None,
            out: None,
            max_functions: None,
            placeholder: 1,
        }
    }
}

pub fn mine(config: Option<&Path>, flags: &MineFlags) -> CliResult<()> {
    let cfg: MineConfig = resolve("mine", config, flags)?;
    let out = required(&cfg.out, "out")?;
    let placeholder =
        Placeholder::new(cfg.placeholder).map_err(|e| CliError::input(e.to_string()))?;
    let files = match (&cfg.input_dir, &cfg.manifest) {
        (Some(dir), None) => {
            if !dir.is_dir() {
                return Err(CliError::input(format!(
                    "input directory {} is not readable",
                    dir.display()
                )));
            }
            list_directory(dir)
        }
        (None, Some(manifest)) => list_manifest(manifest),
        _ => return Err(CliError::input("give exactly one of --input-dir and --manifest")),
    }
    .map_err(|e| CliError::input(e.to_string()))?;

    let mined = mine_files(
        &files,
        &MineOptions {
            placeholder,
            max_functions: cfg.max_functions,
        },
    );
    write_lines(&out, &mined.examples)?;
    write_json(&sidecar(&out, "manifest.json"), &mined.manifest)?;
    write_json(&sidecar(&out, "config.json"), &cfg)?;
    let m = &mined.manifest;
    println!(
        "mined {} examples from {} functions in {} files ({} parsed, {} parse failures, {} not utf-8, {} unreadable)",
        m.examples_emitted,
        m.functions_extracted,
        m.files_seen,
        m.files_parsed,
        m.files_parse_failed,
        m.files_not_utf8,
        m.files_unreadable
    );
    Ok(())
}

// ---- split ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub train_count: usize,
    pub pool_skip: usize,
    pub pool_size: usize,
    pub val_size: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            input: None,
            out_dir: None,
            train_count: 31_000,
            pool_skip: 31_000,
            pool_size: 1_000,
            val_size: 200,
            seed: 42,
        }
    }
}

pub fn split(config: Option<&Path>, flags: &SplitFlags) -> CliResult<()> {
    let cfg: SplitConfig = resolve("split", config, flags)?;
    let input = required(&cfg.input, "in")?;
    let out_dir = required(&cfg.out_dir, "out-dir")?;
    let spec = SplitSpec {
        train_count: cfg.train_count,
        pool_skip: cfg.pool_skip,
        pool_size: cfg.pool_size,
        val_size: cfg.val_size,
        seed: cfg.seed,
    };
    let examples = read_examples(&input)?;
    let splits = make_splits(examples, &spec).map_err(|e| CliError::input(e.to_string()))?;
    write_lines(&out_dir.join("train.jsonl"), &splits.train)?;
    write_lines(&out_dir.join("pool.jsonl"), &splits.pool)?;
    write_lines(&out_dir.join("val.jsonl"), &splits.val)?;
    write_json(&out_dir.join("split_manifest.json"), &splits.manifest)?;
    write_json(&out_dir.join("split.config.json"), &cfg)?;
    let m = &splits.manifest;
    println!(
        "train {} / pool {} / val {} from {} examples{}",
        m.train,
        m.pool,
        m.val,
        m.stream_len,
        if m.complete { "" } else { " (stream exhausted early)" }
    );
    Ok(())
}

// ---- generate ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    pub backend: String,
    pub replay: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: String,
    pub shots: usize,
    pub shots_file: Option<PathBuf>,
    pub k: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub sampling: SamplingMode,
    pub strict_json: bool,
    pub out: Option<PathBuf>,
    pub jobs: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        let s = SamplingConfig::default();
        GenerateConfig {
            input: None,
            backend: "http".into(),
            replay: None,
            endpoint: None,
            model: None,
            api_key_env: "NAMEREPAIR_API_KEY".into(),
            shots: 0,
            shots_file: None,
            k: s.k,
            temperature: s.temperature,
            top_p: s.top_p,
            max_tokens: s.max_tokens,
            sampling: SamplingMode::Independent,
            strict_json: false,
            out: None,
            jobs: 4,
        }
    }
}

fn prompt_template(cfg: &GenerateConfig) -> CliResult<PromptTemplate> {
    match cfg.shots {
        0 => Ok(PromptTemplate::zero_shot()),
        n => {
            let path = cfg.shots_file.as_ref().ok_or_else(|| {
                CliError::input(format!("--shots {n} needs --shots-file with {n} examples"))
            })?;
            let shots = PromptTemplate::load_shots(path).map_err(|e| CliError::input(e.to_string()))?;
            if shots.len() < n {
                return Err(CliError::input(format!(
                    "{} holds {} shots, {n} requested",
                    path.display(),
                    shots.len()
                )));
            }
            PromptTemplate::with_shots(shots.into_iter().take(n).collect())
                .map_err(|e| CliError::input(e.to_string()))
        }
    }
}

/// Replays stored records, keeping them byte-for-byte when they validate.
fn replay_records(
    source: &FileCandidateSource,
    examples: &[&MaskedExample],
    k: usize,
    stored: &HashMap<String, CandidateRecord>,
) -> Vec<CandidateRecord> {
    examples
        .iter()
        .map(|ex| match stored.get(&ex.id) {
            None => CandidateRecord::from_error(&ex.id, &GenerationError::Missing(ex.id.clone())),
            Some(r) => match source.generate(ex) {
                Ok(_) => {
                    let mut r = r.clone();
                    r.candidates.truncate(k);
                    r
                }
                Err(e) => CandidateRecord::from_error(&ex.id, &e),
            },
        })
        .collect()
}

pub fn generate(config: Option<&Path>, flags: &GenerateFlags) -> CliResult<()> {
    let cfg: GenerateConfig = resolve("generate", config, flags)?;
    let input = required(&cfg.input, "in")?;
    let out = required(&cfg.out, "out")?;
    let sampling = SamplingConfig {
        k: cfg.k,
        temperature: cfg.temperature,
        top_p: cfg.top_p,
        max_tokens: cfg.max_tokens,
    };
    sampling.validate().map_err(|e| CliError::input(e.to_string()))?;
    if cfg.shots != 0 && cfg.shots != 3 {
        return Err(CliError::input("--shots must be 0 or 3"));
    }
    let template = prompt_template(&cfg)?;
    let examples = read_examples(&input)?;

    let previous = if out.exists() { read_candidates(&out)? } else { Vec::new() };
    let done: HashMap<String, CandidateRecord> = previous
        .iter()
        .filter(|r| r.error.is_none())
        .map(|r| (r.id.clone(), r.clone()))
        .collect();
    let todo: Vec<&MaskedExample> = examples.iter().filter(|e| !done.contains_key(&e.id)).collect();

    let fresh: Vec<CandidateRecord> = match cfg.backend.as_str() {
        "file" => {
            let path = required(&cfg.replay, "replay")?;
            let records = read_candidates(&path)?;
            let stored: HashMap<String, CandidateRecord> =
                records.iter().map(|r| (r.id.clone(), r.clone())).collect();
            let source = FileCandidateSource::from_records(&path, records);
            replay_records(&source, &todo, cfg.k, &stored)
        }
        "http" => {
            let endpoint = required(&cfg.endpoint, "endpoint")?;
            let model = required(&cfg.model, "model")?;
            let source = ChatCandidateSource {
                transport: Box::new(HttpChatClient::new(
                    &endpoint,
                    Some(&cfg.api_key_env),
                    Duration::from_secs(120),
                )),
                model,
                template,
                sampling,
                mode: cfg.sampling,
                retry: RetryPolicy::default(),
                strict_json: cfg.strict_json,
            };
            let owned: Vec<MaskedExample> = todo.iter().map(|e| (*e).clone()).collect();
            generate_all(&source, &owned, cfg.k, cfg.jobs)
                .into_iter()
                .zip(&owned)
                .map(|(res, ex)| match res {
                    Ok(list) => CandidateRecord::from_list(&ex.id, &list),
                    Err(e) => CandidateRecord::from_error(&ex.id, &e),
                })
                .collect()
        }
        other => return Err(CliError::input(format!("unknown backend `{other}` (http or file)"))),
    };

    let errored = fresh.iter().filter(|r| r.error.is_some()).count();
    let mut fresh_by_id: HashMap<String, CandidateRecord> =
        fresh.into_iter().map(|r| (r.id.clone(), r)).collect();
    let input_ids: HashSet<&str> = examples.iter().map(|e| e.id.as_str()).collect();
    let mut merged: Vec<CandidateRecord> = examples
        .iter()
        .filter_map(|e| done.get(&e.id).cloned().or_else(|| fresh_by_id.remove(&e.id)))
        .collect();
    // keep records for ids that are no longer in the input
    merged.extend(
        previous
            .into_iter()
            .filter(|r| r.error.is_none() && !input_ids.contains(r.id.as_str())),
    );
    write_lines(&out, &merged)?;
    write_json(&sidecar(&out, "config.json"), &cfg)?;
    println!(
        "generated {} (errored {}), reused {}",
        todo.len() - errored,
        errored,
        examples.len() - todo.len()
    );
    if !todo.is_empty() && errored == todo.len() {
        return Err(CliError {
            code: EXIT_GENERATION,
            message: format!("all {errored} generation attempts failed"),
        });
    }
    Ok(())
}

// ---- train-reranker ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub train: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub warmup: usize,
    pub schedule: ScheduleKind,
    pub dropout: f64,
    pub seed: u64,
    pub dim: usize,
    pub window: usize,
    pub k: usize,
    pub min_count: usize,
    pub max_vocab: usize,
    pub in_batch_negatives: bool,
    pub collision_penalty: f64,
    pub length_threshold: usize,
    pub length_penalty: f64,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let m = ModelConfig::default();
        TrainRunConfig {
            train: None,
            candidates: None,
            out: None,
            steps: t.steps,
            batch: t.batch_size,
            lr: t.peak_lr,
            warmup: t.warmup_steps,
            schedule: t.schedule,
            dropout: t.dropout_rate,
            seed: t.seed,
            dim: m.dim,
            window: m.scoring.context_window,
            k: 10,
            min_count: m.min_count,
            max_vocab: m.max_vocab.unwrap_or(50_000),
            in_batch_negatives: t.in_batch_negatives,
            collision_penalty: m.scoring.collision_penalty,
            length_threshold: m.scoring.length_threshold,
            length_penalty: m.scoring.length_penalty_per_char,
        }
    }
}

pub fn train_reranker(config: Option<&Path>, flags: &TrainFlags) -> CliResult<()> {
    let cfg: TrainRunConfig = resolve("train_reranker", config, flags)?;
    let train = required(&cfg.train, "train")?;
    let candidates = required(&cfg.candidates, "candidates")?;
    let out = required(&cfg.out, "out")?;
    if cfg.dim == 0 || cfg.window == 0 || cfg.k == 0 {
        return Err(CliError::input("--dim, --window and --k must be positive"));
    }
    let examples = read_examples(&train)?;
    let source = FileCandidateSource::from_records(&candidates, read_candidates(&candidates)?);
    let (pairs, report) = mine_training_pairs(&examples, &source, cfg.k, cfg.window);
    println!(
        "{} training pairs from {} examples ({} without candidates, {} errored, {} with no negatives)",
        report.pairs,
        report.examples,
        report.empty_candidate_lists,
        report.source_errors + report.unusable_examples,
        report.zero_negative_pairs
    );
    let model_cfg = ModelConfig {
        dim: cfg.dim,
        min_count: cfg.min_count,
        max_vocab: Some(cfg.max_vocab),
        scoring: ScoringConfig {
            collision_penalty: cfg.collision_penalty,
            length_threshold: cfg.length_threshold,
            length_penalty_per_char: cfg.length_penalty,
            context_window: cfg.window,
        },
    };
    let train_cfg = TrainConfig {
        steps: cfg.steps,
        batch_size: cfg.batch,
        peak_lr: cfg.lr,
        warmup_steps: cfg.warmup,
        schedule: cfg.schedule,
        dropout_rate: cfg.dropout,
        seed: cfg.seed,
        in_batch_negatives: cfg.in_batch_negatives,
    };
    let (model, log) = match fit_reranker(&pairs, &model_cfg, &train_cfg) {
        Ok(v) => v,
        Err(TrainError::Divergence {
            step,
            last_good_step,
            last_loss,
        }) => {
            return Err(CliError {
                code: EXIT_DIVERGENCE,
                message: format!(
                    "loss became non-finite at step {step}; last good step {last_good_step} (loss {})",
                    last_loss.map_or("n/a".to_string(), |l| l.to_string())
                ),
            })
        }
        Err(e) => return Err(CliError::input(e.to_string())),
    };
    save_model(&model, &out).map_err(|e| CliError::input(e.to_string()))?;
    write_lines(&sidecar(&out, "log.jsonl"), &log)?;
    write_json(&sidecar(&out, "pairs.json"), &report)?;
    write_json(&sidecar(&out, "config.json"), &cfg)?;
    let bytes = std::fs::read(&out).map_err(|e| CliError::input(e.to_string()))?;
    match log.last() {
        Some(last) => println!("final loss {:.6} at step {}", last.loss, last.step),
        None => println!("no training steps; saved initialization"),
    }
    println!("model sha256 {}", hex::encode(Sha256::digest(&bytes)));
    Ok(())
}

// ---- rerank ----

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankConfig {
    pub in_candidates: Option<PathBuf>,
    pub examples: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub fn rerank(config: Option<&Path>, flags: &RerankFlags) -> CliResult<()> {
    let cfg: RerankConfig = resolve("rerank", config, flags)?;
    let in_candidates = required(&cfg.in_candidates, "in-candidates")?;
    let examples_path = required(&cfg.examples, "examples")?;
    let model_path = required(&cfg.model, "model")?;
    let out = required(&cfg.out, "out")?;
    let model = load_model(&model_path).map_err(|e| CliError::input(e.to_string()))?;
    let examples = read_examples(&examples_path)?;
    let by_id: HashMap<&str, &MaskedExample> = examples.iter().map(|e| (e.id.as_str(), e)).collect();
    let records = read_candidates(&in_candidates)?;
    if let Some(bad) = records.iter().find(|r| !by_id.contains_key(r.id.as_str())) {
        return Err(CliError::input(format!(
            "candidate id {} has no matching example in {}",
            bad.id,
            examples_path.display()
        )));
    }
    let out_records: Vec<CandidateRecord> = records
        .iter()
        .map(|r| match r.to_candidates() {
            Err(_) if r.error.is_some() => r.clone(),
            Err(e) => CandidateRecord::from_error(&r.id, &e),
            Ok(cands) => {
                let reranked = rerank_example(&model, by_id[r.id.as_str()], cands);
                let mut rec = CandidateRecord::from_list(
                    &r.id,
                    &namerepair::candidates::CandidateList {
                        candidates: reranked,
                        ranking: Ranking::Reranked,
                        sampling: r.sampling,
                    },
                );
                rec.ranking = Some(Ranking::Reranked);
                rec
            }
        })
        .collect();
    write_lines(&out, &out_records)?;
    write_json(&sidecar(&out, "config.json"), &cfg)?;
    println!("reranked {} candidate lists", out_records.len());
    Ok(())
}

// ---- eval ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalRunConfig {
    pub val: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub embedder: String,
    pub embed_dim: Option<usize>,
    pub embed_endpoint: Option<String>,
    pub embed_model: Option<String>,
    pub embed_api_key_env: Option<String>,
    pub rerank_model: Option<PathBuf>,
    pub k: usize,
    pub out_summary: Option<PathBuf>,
    pub out_records: Option<PathBuf>,
    pub jobs: usize,
}

impl Default for EvalRunConfig {
    fn default() -> Self {
        EvalRunConfig {
            val: None,
            candidates: None,
            embedder: "builtin".into(),
            embed_dim: None,
            embed_endpoint: None,
            embed_model: None,
            embed_api_key_env: None,
            rerank_model: None,
            k: 10,
            out_summary: None,
            out_records: None,
            jobs: 4,
        }
    }
}

fn embedder_config(cfg: &EvalRunConfig) -> CliResult<EmbedderConfig> {
    match cfg.embedder.as_str() {
        "builtin" => Ok(EmbedderConfig::BuiltinNgram {
            dim: cfg.embed_dim.unwrap_or(namerepair::eval::DEFAULT_BUILTIN_DIM),
        }),
        "http" => Ok(EmbedderConfig::HttpEmbedding {
            endpoint: required(&cfg.embed_endpoint, "embed-endpoint")?,
            model: required(&cfg.embed_model, "embed-model")?,
            dim: required(&cfg.embed_dim, "embed-dim")?,
            api_key_env: cfg.embed_api_key_env.clone(),
        }),
        other => Err(CliError::input(format!("unknown embedder `{other}` (builtin or http)"))),
    }
}

pub fn eval(config: Option<&Path>, flags: &EvalFlags) -> CliResult<()> {
    let cfg: EvalRunConfig = resolve("eval", config, flags)?;
    let val = required(&cfg.val, "val")?;
    let candidates = required(&cfg.candidates, "candidates")?;
    let out_summary = required(&cfg.out_summary, "out-summary")?;
    let out_records = required(&cfg.out_records, "out-records")?;
    let embedder = embedder_config(&cfg)?
        .build()
        .map_err(|e| CliError::input(e.to_string()))?;
    let model = match &cfg.rerank_model {
        Some(p) => Some(load_model(p).map_err(|e| CliError::input(e.to_string()))?),
        None => None,
    };
    let examples = read_examples(&val)?;
    let source = FileCandidateSource::from_records(&candidates, read_candidates(&candidates)?);
    let (summary, records) = evaluate(
        &examples,
        &source,
        model.as_ref(),
        embedder.as_ref(),
        cfg.k,
        cfg.jobs,
    );
    let io = |e: std::io::Error| CliError::input(format!("cannot write eval output: {e}"));
    write_summary(&out_summary, &summary).map_err(io)?;
    write_records(&out_records, &records).map_err(io)?;
    write_json(&sidecar(&out_summary, "config.json"), &cfg)?;
    println!(
        "n={} ok={} errored={} parse_miss={} exact={:.2}% top5={:.2}% partial={:.2}",
        summary.n,
        summary.n_ok,
        summary.n_errored,
        summary.n_parse_miss,
        summary.exact_pct,
        summary.top5_pct,
        summary.partial_mean
    );
    Ok(())
}
