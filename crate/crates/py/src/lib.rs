//! Python bindings: identifiers, mining, metrics, schedules and the reranker.

use std::path::{Path, PathBuf};

use namerepair::candidates::{self, FileCandidateSource};
use namerepair::eval::{self, BuiltinEmbedder};
use namerepair::ident::{self, Candidate, Identifier, Placeholder};
use namerepair::miner::{self, MineOptions};
use namerepair::reranker::{self, DualEncoderModel};
use namerepair::schedule::{LrSchedule, ScheduleKind};
use pyo3::exceptions::{PyIOError, PyKeyError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn identifier(name: &str) -> PyResult<Identifier> {
    Identifier::new(name).map_err(value_err)
}

/// Parses a JSON string into Python objects.
fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

// ---- identifiers ----

#[pyfunction]
fn is_valid_identifier(text: &str) -> bool {
    ident::is_valid_identifier(text)
}

#[pyfunction]
fn split_subtokens(name: &str) -> PyResult<Vec<String>> {
    Ok(ident::split_subtokens(&identifier(name)?))
}

#[pyfunction]
fn placeholder_token(index: u32) -> PyResult<String> {
    Ok(Placeholder::new(index).map_err(value_err)?.token())
}

// ---- mining ----

#[pyclass(name = "SourceFunction", module = "namerepair_py", from_py_object)]
#[derive(Clone)]
struct PySourceFunction {
    inner: miner::SourceFunction,
}

#[pymethods]
impl PySourceFunction {
    #[getter]
    fn file_id(&self) -> &str {
        &self.inner.file_id
    }
    #[getter]
    fn byte_start(&self) -> usize {
        self.inner.byte_start
    }
    #[getter]
    fn byte_end(&self) -> usize {
        self.inner.byte_end
    }
    #[getter]
    fn text(&self) -> &str {
        &self.inner.text
    }

    /// `(name, kind, occurrences)` for every maskable parameter and local.
    fn identifiers(&self) -> Vec<(String, String, usize)> {
        miner::collect_identifiers(&self.inner)
            .into_iter()
            .map(|s| {
                let kind = match s.kind {
                    miner::SiteKind::Parameter => "parameter",
                    miner::SiteKind::Local => "local",
                };
                (s.name.to_string(), kind.to_string(), s.occurrences.len())
            })
            .collect()
    }

    /// Masks `name`, or the default target when omitted.
    #[pyo3(signature = (name=None, placeholder=1))]
    fn mask(&self, name: Option<&str>, placeholder: u32) -> PyResult<PyMaskedExample> {
        let sites = miner::collect_identifiers(&self.inner);
        let site = match name {
            Some(n) => sites.iter().find(|s| s.name.as_str() == n),
            None => miner::select_mask_target(&sites),
        }
        .ok_or_else(|| PyKeyError::new_err(name.unwrap_or("<no maskable identifier>").to_string()))?;
        let ph = Placeholder::new(placeholder).map_err(value_err)?;
        let inner = miner::mask_identifier(&self.inner, site, ph).map_err(value_err)?;
        Ok(PyMaskedExample { inner })
    }

    fn __repr__(&self) -> String {
        format!(
            "SourceFunction({}:{}..{})",
            self.inner.file_id, self.inner.byte_start, self.inner.byte_end
        )
    }
}

#[pyclass(name = "MaskedExample", module = "namerepair_py", from_py_object)]
#[derive(Clone)]
struct PyMaskedExample {
    inner: miner::MaskedExample,
}

#[pymethods]
impl PyMaskedExample {
    #[staticmethod]
    fn from_json(line: &str) -> PyResult<Self> {
        let inner = miner::MaskedExample::from_json_line(line).map_err(value_err)?;
        Ok(PyMaskedExample { inner })
    }

    fn to_json(&self) -> String {
        miner::build_jsonl_record(&self.inner)
    }

    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }
    #[getter]
    fn input_text(&self) -> &str {
        &self.inner.input_text
    }
    #[getter]
    fn gold(&self) -> Option<&str> {
        self.inner.gold()
    }
    #[getter]
    fn file_id(&self) -> &str {
        &self.inner.meta.file_id
    }
    #[getter]
    fn occurrence_count(&self) -> usize {
        self.inner.meta.occurrence_count
    }

    fn unmask(&self, name: &str) -> String {
        miner::unmask(&self.inner, name)
    }

    fn in_scope_names(&self) -> Vec<String> {
        miner::in_scope_names(&self.inner).into_iter().collect()
    }

    fn __repr__(&self) -> String {
        format!("MaskedExample(id={:?}, gold={:?})", self.inner.id, self.inner.gold())
    }
}

/// Outermost function definitions of one C++ file; empty on any parse error.
#[pyfunction]
#[pyo3(signature = (source, file_id="input.cpp"))]
fn extract_functions(source: &[u8], file_id: &str) -> Vec<PySourceFunction> {
    miner::extract_functions(source, file_id)
        .into_iter()
        .map(|inner| PySourceFunction { inner })
        .collect()
}

/// Mines a directory; returns `(examples, manifest_dict)`.
#[pyfunction]
#[pyo3(signature = (path, max_functions=None))]
fn mine_directory<'py>(
    py: Python<'py>,
    path: PathBuf,
    max_functions: Option<usize>,
) -> PyResult<(Vec<PyMaskedExample>, Bound<'py, PyAny>)> {
    let files = miner::list_directory(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
    let out = py.detach(|| {
        miner::mine_files(
            &files,
            &MineOptions {
                max_functions,
                ..Default::default()
            },
        )
    });
    let manifest = json_to_py(py, &serde_json::to_string(&out.manifest).unwrap())?;
    let examples = out
        .examples
        .into_iter()
        .map(|inner| PyMaskedExample { inner })
        .collect();
    Ok((examples, manifest))
}

// ---- candidate parsing ----

/// Placeholder-to-name mapping from the first JSON object in a completion.
#[pyfunction]
fn parse_json_mapping(completion: &str) -> PyResult<Vec<(String, String)>> {
    let parsed = candidates::parse_json_mapping(completion).map_err(value_err)?;
    Ok(parsed
        .entries
        .into_iter()
        .map(|(k, v)| (k, v.to_string()))
        .collect())
}

#[pyfunction]
fn parse_numbered_candidates(completion: &str) -> Vec<String> {
    candidates::parse_numbered_candidates(completion)
        .into_iter()
        .map(|n| n.to_string())
        .collect()
}

// ---- metrics ----

#[pyfunction]
fn exact_match(top: &str, gold: &str) -> bool {
    eval::exact_match(top, gold)
}

#[pyfunction]
fn top5_hit(names: Vec<String>, gold: &str) -> bool {
    eval::top5_hit(&names, gold)
}

#[pyfunction]
#[pyo3(signature = (text, dim=eval::DEFAULT_BUILTIN_DIM))]
fn builtin_embed(text: &str, dim: usize) -> PyResult<Vec<f64>> {
    eval::builtin_embed(text, dim).map_err(value_err)
}

/// Partial match in [0, 100] with the builtin trigram embedder.
#[pyfunction]
#[pyo3(signature = (top, gold, dim=eval::DEFAULT_BUILTIN_DIM))]
fn partial_match(top: &str, gold: &str, dim: usize) -> PyResult<f64> {
    let e = BuiltinEmbedder::new(dim).map_err(value_err)?;
    eval::partial_match(top, gold, &e).map_err(value_err)
}

/// Scores candidate lists (`{id: [names]}`) against the examples' gold names
/// with the builtin embedder. Returns `(summary_dict, records)`.
#[pyfunction]
#[pyo3(signature = (examples, candidates, k=10, embed_dim=eval::DEFAULT_BUILTIN_DIM, reranker=None))]
fn evaluate<'py>(
    py: Python<'py>,
    examples: Vec<PyMaskedExample>,
    candidates: std::collections::BTreeMap<String, Vec<String>>,
    k: usize,
    embed_dim: usize,
    reranker: Option<PyRef<'py, PyReranker>>,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let embedder = BuiltinEmbedder::new(embed_dim).map_err(value_err)?;
    let records = candidates
        .into_iter()
        .map(|(id, names)| {
            let line = serde_json::json!({
                "id": id,
                "candidates": names.iter().map(|n| serde_json::json!({"name": n})).collect::<Vec<_>>(),
            });
            serde_json::from_value(line).map_err(value_err)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let source = FileCandidateSource::from_records(Path::new("<python>"), records);
    let examples: Vec<miner::MaskedExample> = examples.into_iter().map(|e| e.inner).collect();
    let model = reranker.as_ref().map(|r| &r.model);
    let (summary, recs) = eval::evaluate(&examples, &source, model, &embedder, k, 1);
    let summary = json_to_py(py, &serde_json::to_string(&summary).unwrap())?;
    let recs = json_to_py(py, &serde_json::to_string(&recs).unwrap())?;
    Ok((summary, recs))
}

// ---- schedule ----

#[pyfunction]
#[pyo3(signature = (step, peak_lr, warmup_steps, total_steps, schedule="warmup_cosine"))]
fn lr_at_step(
    step: usize,
    peak_lr: f64,
    warmup_steps: usize,
    total_steps: usize,
    schedule: &str,
) -> PyResult<f64> {
    let kind: ScheduleKind = schedule.parse().map_err(value_err)?;
    Ok(LrSchedule {
        kind,
        peak_lr,
        warmup_steps,
        total_steps,
    }
    .lr_at(step))
}

// ---- reranker ----

#[pyclass(name = "Reranker", module = "namerepair_py")]
struct PyReranker {
    model: DualEncoderModel,
}

#[pymethods]
impl PyReranker {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let model = reranker::load_model(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(PyReranker { model })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        reranker::save_model(&self.model, &path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.model.dim()
    }
    #[getter]
    fn tau(&self) -> f64 {
        self.model.tau()
    }
    #[getter]
    fn vocab_size(&self) -> usize {
        self.model.vocab.len()
    }

    /// `(name, score)` pairs sorted by adjusted score, best first.
    fn rerank(&self, example: &PyMaskedExample, names: Vec<String>) -> PyResult<Vec<(String, f64)>> {
        let cands = names
            .iter()
            .map(|n| Ok(Candidate::new(identifier(n)?)))
            .collect::<PyResult<Vec<_>>>()?;
        Ok(reranker::rerank(&self.model, &example.inner, cands)
            .into_iter()
            .map(|c| (c.name.to_string(), c.rerank_score.unwrap_or(f64::NAN)))
            .collect())
    }
}

#[pymodule]
fn namerepair_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySourceFunction>()?;
    m.add_class::<PyMaskedExample>()?;
    m.add_class::<PyReranker>()?;
    m.add_function(wrap_pyfunction!(is_valid_identifier, m)?)?;
    m.add_function(wrap_pyfunction!(split_subtokens, m)?)?;
    m.add_function(wrap_pyfunction!(placeholder_token, m)?)?;
    m.add_function(wrap_pyfunction!(extract_functions, m)?)?;
    m.add_function(wrap_pyfunction!(mine_directory, m)?)?;
    m.add_function(wrap_pyfunction!(parse_json_mapping, m)?)?;
    m.add_function(wrap_pyfunction!(parse_numbered_candidates, m)?)?;
    m.add_function(wrap_pyfunction!(exact_match, m)?)?;
    m.add_function(wrap_pyfunction!(top5_hit, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_embed, m)?)?;
    m.add_function(wrap_pyfunction!(partial_match, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at_step, m)?)?;
    Ok(())
}
