//! Dual encoder: mean-pooled subtoken embeddings, a linear projection per side,
//! L2 normalization, and cosine similarity divided by a learned temperature.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ident::{split_subtokens, split_word, Candidate, Identifier};

pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK: usize = 0;
pub const PAD: usize = 1;

pub const INIT_RANGE: f64 = 0.05;
pub const INIT_TAU: f64 = 0.07;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtokenVocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl SubtokenVocab {
    /// Specials first, then tokens seen at least `min_count` times by
    /// descending count and ascending text, capped at `max_size` entries.
    pub fn build<'a, I>(streams: I, min_count: usize, max_size: Option<usize>) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for stream in streams {
            for tok in stream {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count.max(1) && *t != UNK_TOKEN && *t != PAD_TOKEN)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut tokens = vec![UNK_TOKEN.to_string(), PAD_TOKEN.to_string()];
        let room = max_size.map(|m| m.saturating_sub(2)).unwrap_or(usize::MAX);
        tokens.extend(ranked.into_iter().take(room).map(|(t, _)| t.to_string()));
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        SubtokenVocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn name_ids(&self, name: &Identifier) -> Vec<usize> {
        self.ids(&split_subtokens(name))
    }
}

/// Penalty terms applied after the raw similarity score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub collision_penalty: f64,
    pub length_threshold: usize,
    pub length_penalty_per_char: f64,
    pub context_window: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            collision_penalty: 0.5,
            length_threshold: 20,
            length_penalty_per_char: 0.02,
            context_window: 64,
        }
    }
}

/// Trainable parameters, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub vocab_size: usize,
    pub dim: usize,
    /// `vocab_size x dim`
    pub code_embeddings: Vec<f64>,
    /// `vocab_size x dim`
    pub name_embeddings: Vec<f64>,
    /// `dim x dim`
    pub code_projection: Vec<f64>,
    /// `dim x dim`
    pub name_projection: Vec<f64>,
    /// The temperature is `exp(log_tau)`.
    pub log_tau: f64,
}

impl Params {
    pub fn zeros(vocab_size: usize, dim: usize) -> Self {
        Params {
            vocab_size,
            dim,
            code_embeddings: vec![0.0; vocab_size * dim],
            name_embeddings: vec![0.0; vocab_size * dim],
            code_projection: vec![0.0; dim * dim],
            name_projection: vec![0.0; dim * dim],
            log_tau: 0.0,
        }
    }

    pub fn random<R: Rng>(vocab_size: usize, dim: usize, rng: &mut R) -> Self {
        let mut p = Params::zeros(vocab_size, dim);
        for slot in p.slices_mut() {
            for v in slot.iter_mut() {
                *v = rng.gen_range(-INIT_RANGE..INIT_RANGE);
            }
        }
        p.log_tau = libm::log(INIT_TAU);
        p
    }

    /// Matrices in a fixed order: code embeddings, name embeddings, code
    /// projection, name projection.
    pub fn slices(&self) -> [&[f64]; 4] {
        [
            &self.code_embeddings,
            &self.name_embeddings,
            &self.code_projection,
            &self.name_projection,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            &mut self.code_embeddings,
            &mut self.name_embeddings,
            &mut self.code_projection,
            &mut self.name_projection,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum::<usize>() + 1
    }

    pub fn fill_zero(&mut self) {
        for s in self.slices_mut() {
            s.fill(0.0);
        }
        self.log_tau = 0.0;
    }

    pub fn tau(&self) -> f64 {
        libm::exp(self.log_tau)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoderModel {
    pub vocab: SubtokenVocab,
    pub params: Params,
    pub scoring: ScoringConfig,
}

/// Forward pass of one encoder side, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct Encoding {
    pub ids: Vec<usize>,
    pub pooled: Vec<f64>,
    pub norm: f64,
    pub unit: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Side {
    Code,
    Name,
}

const NORM_FLOOR: f64 = 1e-12;

impl DualEncoderModel {
    pub fn new_random<R: Rng>(vocab: SubtokenVocab, dim: usize, rng: &mut R) -> Self {
        let params = Params::random(vocab.len(), dim, rng);
        DualEncoderModel {
            vocab,
            params,
            scoring: ScoringConfig::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn tau(&self) -> f64 {
        self.params.tau()
    }

    fn side(&self, side: Side) -> (&[f64], &[f64]) {
        match side {
            Side::Code => (&self.params.code_embeddings, &self.params.code_projection),
            Side::Name => (&self.params.name_embeddings, &self.params.name_projection),
        }
    }

    pub(crate) fn encode_ids(&self, side: Side, ids: &[usize]) -> Encoding {
        assert!(!ids.is_empty(), "cannot encode an empty token list");
        let d = self.dim();
        let (table, proj) = self.side(side);
        let mut pooled = vec![0.0; d];
        for &id in ids {
            for (acc, v) in pooled.iter_mut().zip(&table[id * d..(id + 1) * d]) {
                *acc += v;
            }
        }
        let inv = 1.0 / ids.len() as f64;
        pooled.iter_mut().for_each(|v| *v *= inv);
        let projected: Vec<f64> = (0..d)
            .map(|i| {
                proj[i * d..(i + 1) * d]
                    .iter()
                    .zip(&pooled)
                    .map(|(p, h)| p * h)
                    .sum()
            })
            .collect();
        let norm = libm::sqrt(projected.iter().map(|v| v * v).sum::<f64>());
        let unit = projected.iter().map(|v| v / norm.max(NORM_FLOOR)).collect();
        Encoding {
            ids: ids.to_vec(),
            pooled,
            norm,
            unit,
        }
    }

    /// Unit vector for a code token sequence; unknown tokens use the unknown row.
    pub fn encode_context<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<f64> {
        self.encode_ids(Side::Code, &self.vocab.ids(tokens)).unit
    }

    /// Unit vector for a candidate name, pooled over its case-folded subtokens.
    pub fn encode_name(&self, name: &Identifier) -> Vec<f64> {
        self.encode_ids(Side::Name, &self.vocab.name_ids(name)).unit
    }

    /// Temperature-scaled cosine of two unit vectors.
    pub fn score(&self, context_vec: &[f64], name_vec: &[f64]) -> f64 {
        dot(context_vec, name_vec) / self.tau()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Raw score minus the collision penalty (when the name is already in scope)
/// and a per-character penalty beyond the length threshold.
pub fn adjusted_score(
    raw: f64,
    candidate: &Identifier,
    in_scope_names: &BTreeSet<String>,
    cfg: &ScoringConfig,
) -> f64 {
    let collision = if in_scope_names.contains(candidate.as_str()) {
        cfg.collision_penalty
    } else {
        0.0
    };
    let excess = candidate.len().saturating_sub(cfg.length_threshold) as f64;
    raw - collision - cfg.length_penalty_per_char * excess
}

/// Scores every candidate against the context and sorts by adjusted score,
/// descending. Equal scores keep their input (generator) order.
pub fn rerank_with_context(
    model: &DualEncoderModel,
    context_tokens: &[String],
    in_scope_names: &BTreeSet<String>,
    candidates: Vec<Candidate>,
) -> Vec<Candidate> {
    let context = model.encode_context(context_tokens);
    let mut scored: Vec<Candidate> = candidates
        .into_iter()
        .map(|mut c| {
            let raw = model.score(&context, &model.encode_name(&c.name));
            c.rerank_score = Some(adjusted_score(raw, &c.name, in_scope_names, &model.scoring));
            c
        })
        .collect();
    scored.sort_by(|a, b| {
        b.rerank_score
            .unwrap_or(f64::NEG_INFINITY)
            .total_cmp(&a.rerank_score.unwrap_or(f64::NEG_INFINITY))
    });
    scored
}

/// Case-folded subtokens of a name string that may not be a valid identifier.
pub fn name_tokens(name: &str) -> Vec<String> {
    split_word(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_model(dim: usize) -> DualEncoderModel {
        let vocab = SubtokenVocab::from_tokens(
            ["<unk>", "<pad>", "i", "json", "value", "int", "<mask>"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        DualEncoderModel::new_random(vocab, dim, &mut rng)
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn project_normalize(m: &DualEncoderModel, proj: &[f64], h: &[f64]) -> Vec<f64> {
        let d = m.dim();
        let z: Vec<f64> = (0..d).map(|i| (0..d).map(|j| proj[i * d + j] * h[j]).sum()).collect();
        let n = norm(&z);
        z.iter().map(|v| v / n).collect()
    }

    #[test]
    fn vocab_ordering() {
        let a: Vec<String> = ["b", "a", "b", "c", "a", "b"].iter().map(|s| s.to_string()).collect();
        let v = SubtokenVocab::build([a.as_slice()], 1, None);
        assert_eq!(v.tokens(), ["<unk>", "<pad>", "b", "a", "c"]);
        assert_eq!(v.id("zzz"), UNK);
        let capped = SubtokenVocab::build([a.as_slice()], 2, Some(3));
        assert_eq!(capped.tokens(), ["<unk>", "<pad>", "b"]);
    }

    #[test]
    fn single_token_encoding() {
        let m = tiny_model(4);
        let d = 4;
        let row = &m.params.code_embeddings[5 * d..6 * d];
        let expected = project_normalize(&m, &m.params.code_projection, row);
        let got = m.encode_context(&["int"]);
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_tokens_use_unk_row() {
        let m = tiny_model(4);
        assert_eq!(m.encode_context(&["qqq", "rrr"]), m.encode_context(&["<unk>"]));
    }

    #[test]
    fn name_encoding_means_subtokens() {
        let m = tiny_model(4);
        let d = 4;
        let h: Vec<f64> = (0..d)
            .map(|j| (m.params.name_embeddings[3 * d + j] + m.params.name_embeddings[4 * d + j]) / 2.0)
            .collect();
        let expected = project_normalize(&m, &m.params.name_projection, &h);
        let got = m.encode_name(&Identifier::new("jsonValue").unwrap());
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(got, m.encode_name(&Identifier::new("JSONValue").unwrap()));
    }

    #[test]
    fn outputs_are_unit_norm() {
        let m = tiny_model(8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n = rng.gen_range(1..20);
            let toks: Vec<String> = (0..n).map(|_| m.vocab.tokens()[rng.gen_range(0..7)].clone()).collect();
            assert!((norm(&m.encode_context(&toks)) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn score_arithmetic() {
        let mut m = tiny_model(2);
        m.params.log_tau = 0.0;
        assert!((m.score(&[1.0, 0.0], &[1.0, 0.0]) - 1.0).abs() < 1e-15);
        assert_eq!(m.score(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        m.params.log_tau = 0.5f64.ln();
        assert!((m.score(&[0.6, 0.8], &[0.6, 0.8]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn penalties() {
        let cfg = ScoringConfig::default();
        let none = BTreeSet::new();
        let id = |s: &str| Identifier::new(s).unwrap();
        assert_eq!(adjusted_score(2.0, &id("name"), &none, &cfg), 2.0);
        let scope = BTreeSet::from(["name".to_string()]);
        assert_eq!(adjusted_score(2.0, &id("name"), &scope, &cfg), 1.5);
        let long = "a".repeat(25);
        assert!((adjusted_score(2.0, &id(&long), &none, &cfg) - 1.9).abs() < 1e-12);
    }

    #[test]
    fn rerank_singleton_and_ties() {
        let m = tiny_model(4);
        let ctx = vec!["int".to_string()];
        let one = vec![Candidate::new(Identifier::new("i").unwrap())];
        let out = rerank_with_context(&m, &ctx, &BTreeSet::new(), one);
        assert_eq!(out.len(), 1);
        assert!(out[0].rerank_score.is_some());

        // identical subtokens give identical scores, so order must survive
        let twins = vec![
            Candidate::new(Identifier::new("jsonValue").unwrap()),
            Candidate::new(Identifier::new("JSONValue").unwrap()),
            Candidate::new(Identifier::new("json_value").unwrap()),
        ];
        let out = rerank_with_context(&m, &ctx, &BTreeSet::new(), twins);
        let names: Vec<&str> = out.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["jsonValue", "JSONValue", "json_value"]);
    }
}
