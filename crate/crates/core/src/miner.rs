//! C++ function mining: extract function definitions with tree-sitter, collect
//! parameter and local names, mask one name per function and emit JSONL.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tree_sitter::{Node, Parser, Tree};

use crate::ident::{is_ident_byte, is_valid_identifier, Identifier, Placeholder};

pub const CPP_EXTENSIONS: &[&str] = &["cc", "cpp", "cxx", "h", "hpp"];

thread_local! {
    static PARSER: RefCell<Parser> = RefCell::new({
        let mut parser = Parser::new();
        parser
            .set_language(&tree_sitter_cpp::LANGUAGE.into())
            .expect("tree-sitter-cpp grammar version mismatch");
        parser
    });
}

pub(crate) fn parse_cpp(text: &str) -> Option<Tree> {
    PARSER.with(|p| p.borrow_mut().parse(text, None))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFunction {
    pub file_id: String,
    pub byte_start: usize,
    pub byte_end: usize,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SiteKind {
    Parameter,
    Local,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentifierSite {
    pub name: Identifier,
    pub kind: SiteKind,
    /// Byte offsets into the function text, strictly increasing.
    pub occurrences: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleMeta {
    pub file_id: String,
    pub byte_start: usize,
    pub kind: SiteKind,
    pub occurrence_count: usize,
}

/// One masked function: the JSONL unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedExample {
    pub id: String,
    pub input_text: String,
    pub target_text: BTreeMap<String, String>,
    pub meta: ExampleMeta,
}

impl MaskedExample {
    /// Gold name for the first placeholder.
    pub fn gold(&self) -> Option<&str> {
        self.target_text.get(&Placeholder::FIRST.token()).map(String::as_str)
    }

    pub fn from_json_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MaskError {
    #[error("placeholder {0} already occurs in the function text")]
    PlaceholderCollision(String),
    #[error("`{0}` has no standalone occurrence in the function")]
    NotFound(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractFailure {
    NotUtf8,
    ParseError,
}

/// Extracts function definitions, or reports why the whole file was skipped.
pub fn try_extract_functions(
    file_bytes: &[u8],
    file_id: &str,
) -> Result<Vec<SourceFunction>, ExtractFailure> {
    let text = std::str::from_utf8(file_bytes).map_err(|_| ExtractFailure::NotUtf8)?;
    let tree = parse_cpp(text).ok_or(ExtractFailure::ParseError)?;
    let root = tree.root_node();
    if root.has_error() {
        return Err(ExtractFailure::ParseError);
    }
    let mut nodes = Vec::new();
    collect_function_nodes(root, &mut nodes);
    Ok(nodes
        .into_iter()
        .map(|n| SourceFunction {
            file_id: file_id.to_string(),
            byte_start: n.start_byte(),
            byte_end: n.end_byte(),
            text: text[n.start_byte()..n.end_byte()].to_string(),
        })
        .collect())
}

/// Function definitions with bodies, in document order. Files that are not
/// UTF-8 or do not parse cleanly yield an empty list.
pub fn extract_functions(file_bytes: &[u8], file_id: &str) -> Vec<SourceFunction> {
    match try_extract_functions(file_bytes, file_id) {
        Ok(fns) => fns,
        Err(why) => {
            warn!("skipping {file_id}: {why:?}");
            Vec::new()
        }
    }
}

fn collect_function_nodes<'t>(node: Node<'t>, out: &mut Vec<Node<'t>>) {
    let mut cursor = node.walk();
    for child in node.named_children(&mut cursor) {
        if child.kind() == "function_definition" {
            if child.child_by_field_name("body").is_some() {
                out.push(child);
            }
            // nested definitions (local classes) stay part of their parent
            continue;
        }
        collect_function_nodes(child, out);
    }
}

/// True if `text` parses cleanly and its outermost node is one function definition.
pub fn parses_as_function(text: &str) -> bool {
    let Some(tree) = parse_cpp(text) else {
        return false;
    };
    let root = tree.root_node();
    if root.has_error() {
        return false;
    }
    let mut nodes = Vec::new();
    collect_function_nodes(root, &mut nodes);
    nodes.len() == 1 && nodes[0].start_byte() == text.len() - text.trim_start().len()
}

fn first_function(tree: &Tree) -> Option<Node<'_>> {
    let mut nodes = Vec::new();
    collect_function_nodes(tree.root_node(), &mut nodes);
    nodes.into_iter().next()
}

/// Names bound by a declarator, drilling through pointer/reference/array/init
/// wrappers. Plain function declarators bind nothing (they declare functions).
fn declarator_names<'t>(node: Node<'t>, out: &mut Vec<Node<'t>>) {
    match node.kind() {
        "identifier" => out.push(node),
        "function_declarator" => {
            if let Some(inner) = node.child_by_field_name("declarator") {
                if inner.kind() == "parenthesized_declarator" {
                    declarator_names(inner, out);
                }
            }
        }
        "init_declarator" | "pointer_declarator" | "array_declarator" | "attributed_declarator" => {
            if let Some(inner) = node.child_by_field_name("declarator") {
                declarator_names(inner, out);
            }
        }
        "reference_declarator" | "parenthesized_declarator" | "variadic_declarator" => {
            let mut cursor = node.walk();
            for child in node.named_children(&mut cursor) {
                declarator_names(child, out);
            }
        }
        "structured_binding_declarator" => {
            let mut cursor = node.walk();
            for child in node.named_children(&mut cursor) {
                if child.kind() == "identifier" {
                    out.push(child);
                }
            }
        }
        _ => {}
    }
}

fn field_declarators<'t>(node: Node<'t>, out: &mut Vec<Node<'t>>) {
    let mut cursor = node.walk();
    for d in node.children_by_field_name("declarator", &mut cursor) {
        declarator_names(d, out);
    }
}

const PARAMETER_KINDS: &[&str] = &[
    "parameter_declaration",
    "optional_parameter_declaration",
    "variadic_parameter_declaration",
];

fn signature_parameters<'t>(function: Node<'t>, out: &mut Vec<Node<'t>>) {
    let mut decl = function.child_by_field_name("declarator");
    while let Some(d) = decl {
        if d.kind() == "function_declarator" {
            if let Some(params) = d.child_by_field_name("parameters") {
                let mut cursor = params.walk();
                for p in params.named_children(&mut cursor) {
                    if PARAMETER_KINDS.contains(&p.kind()) {
                        field_declarators(p, out);
                    }
                }
            }
            return;
        }
        decl = d
            .child_by_field_name("declarator")
            .or_else(|| d.named_child(0).filter(|c| c.kind().ends_with("declarator")));
    }
}

fn local_declarations<'t>(node: Node<'t>, out: &mut Vec<Node<'t>>) {
    match node.kind() {
        "declaration" | "for_range_loop" => field_declarators(node, out),
        k if PARAMETER_KINDS.contains(&k) => field_declarators(node, out),
        _ => {}
    }
    let mut cursor = node.walk();
    for child in node.named_children(&mut cursor) {
        local_declarations(child, out);
    }
}

/// Byte offsets of every standalone occurrence of `name` in `text`.
pub fn standalone_occurrences(text: &str, name: &str) -> Vec<usize> {
    let bytes = text.as_bytes();
    if name.is_empty() {
        return Vec::new();
    }
    text.match_indices(name)
        .map(|(i, _)| i)
        .filter(|&i| {
            let before = i.checked_sub(1).map(|j| bytes[j]);
            let after = bytes.get(i + name.len()).copied();
            !before.is_some_and(is_ident_byte) && !after.is_some_and(is_ident_byte)
        })
        .collect()
}

fn sites_in(function: Node<'_>, text: &str, base: usize) -> Vec<IdentifierSite> {
    let mut params = Vec::new();
    signature_parameters(function, &mut params);
    let mut locals = Vec::new();
    if let Some(body) = function.child_by_field_name("body") {
        local_declarations(body, &mut locals);
    }

    let mut by_name: BTreeMap<String, SiteKind> = BTreeMap::new();
    let declared = params
        .iter()
        .map(|n| (n, SiteKind::Parameter))
        .chain(locals.iter().map(|n| (n, SiteKind::Local)));
    for (node, kind) in declared {
        let name = &text[node.start_byte() - base..node.end_byte() - base];
        if is_valid_identifier(name) {
            by_name.entry(name.to_string()).or_insert(kind);
        }
    }

    let mut sites: Vec<IdentifierSite> = by_name
        .into_iter()
        .filter_map(|(name, kind)| {
            let occurrences = standalone_occurrences(text, &name);
            if occurrences.is_empty() {
                return None;
            }
            Some(IdentifierSite {
                name: Identifier::new(name).ok()?,
                kind,
                occurrences,
            })
        })
        .collect();
    sites.sort_by_key(|s| (s.occurrences[0], s.name.clone()));
    sites
}

/// Parameter and local-variable sites of a function, ordered by first occurrence.
pub fn collect_identifiers(function: &SourceFunction) -> Vec<IdentifierSite> {
    let Some(tree) = parse_cpp(&function.text) else {
        return Vec::new();
    };
    match first_function(&tree) {
        Some(node) => sites_in(node, &function.text, 0),
        None => Vec::new(),
    }
}

/// Lexicographically smallest name (byte order); ties go to the earliest site.
pub fn select_mask_target(sites: &[IdentifierSite]) -> Option<&IdentifierSite> {
    sites
        .iter()
        .min_by(|a, b| {
            a.name
                .as_str()
                .as_bytes()
                .cmp(b.name.as_str().as_bytes())
                .then(a.occurrences[0].cmp(&b.occurrences[0]))
        })
}

pub fn example_id(file_id: &str, byte_start: usize, name: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(file_id.as_bytes());
    hasher.update([0]);
    hasher.update(byte_start.to_string().as_bytes());
    hasher.update([0]);
    hasher.update(name.as_bytes());
    hex::encode(&hasher.finalize()[..8])
}

fn replace_standalone(text: &str, name: &str, token: &str) -> (String, usize) {
    let occ = standalone_occurrences(text, name);
    let mut out = String::with_capacity(text.len() + occ.len() * token.len());
    let mut last = 0;
    for &i in &occ {
        out.push_str(&text[last..i]);
        out.push_str(token);
        last = i + name.len();
    }
    out.push_str(&text[last..]);
    (out, occ.len())
}

pub fn mask_identifier(
    function: &SourceFunction,
    site: &IdentifierSite,
    placeholder: Placeholder,
) -> Result<MaskedExample, MaskError> {
    let token = placeholder.token();
    if function.text.contains(&token) {
        return Err(MaskError::PlaceholderCollision(token));
    }
    let (input_text, count) = replace_standalone(&function.text, site.name.as_str(), &token);
    if count == 0 {
        return Err(MaskError::NotFound(site.name.to_string()));
    }
    Ok(MaskedExample {
        id: example_id(&function.file_id, function.byte_start, site.name.as_str()),
        input_text,
        target_text: BTreeMap::from([(token, site.name.to_string())]),
        meta: ExampleMeta {
            file_id: function.file_id.clone(),
            byte_start: function.byte_start,
            kind: site.kind,
            occurrence_count: count,
        },
    })
}

/// Replaces every placeholder token of the example with `name`.
pub fn unmask(example: &MaskedExample, name: &str) -> String {
    let mut text = example.input_text.clone();
    for token in example.target_text.keys() {
        text = text.replace(token.as_str(), name);
    }
    text
}

/// Replaces each placeholder with its own name.
pub fn unmask_with(example: &MaskedExample, names: &BTreeMap<String, String>) -> String {
    let mut text = example.input_text.clone();
    for (token, name) in names {
        text = text.replace(token.as_str(), name);
    }
    text
}

pub fn build_jsonl_record(example: &MaskedExample) -> String {
    serde_json::to_string(example).expect("masked examples always serialize")
}

const MASK_SENTINEL: &str = "namerepair_masked_slot_";

/// Names of the other parameters and locals visible in a masked function.
pub fn in_scope_names(example: &MaskedExample) -> BTreeSet<String> {
    let mut text = example.input_text.clone();
    for token in example.target_text.keys() {
        text = text.replace(token.as_str(), MASK_SENTINEL);
    }
    let Some(tree) = parse_cpp(&text) else {
        return BTreeSet::new();
    };
    let Some(node) = first_function(&tree) else {
        return BTreeSet::new();
    };
    sites_in(node, &text, 0)
        .into_iter()
        .map(|s| s.name.into_string())
        .filter(|n| n != MASK_SENTINEL)
        .collect()
}

/// Source-level token of a C++ snippet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexToken {
    pub text: String,
    pub kind: LexKind,
    pub start: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexKind {
    Identifier,
    Number,
    String,
    Char,
    Other,
}

const ATOMIC_LITERALS: &[&str] = &[
    "string_literal",
    "raw_string_literal",
    "char_literal",
    "number_literal",
    "concatenated_string",
    "system_lib_string",
];

/// Leaf tokens of the grammar in source order. Literals are single tokens and
/// comments are dropped.
pub fn lex(text: &str) -> Vec<LexToken> {
    let Some(tree) = parse_cpp(text) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    lex_node(tree.root_node(), text, &mut out);
    out
}

fn lex_node(node: Node<'_>, text: &str, out: &mut Vec<LexToken>) {
    let kind = node.kind();
    if kind == "comment" {
        return;
    }
    let atomic = ATOMIC_LITERALS.contains(&kind);
    if atomic || node.child_count() == 0 {
        if node.start_byte() == node.end_byte() {
            return;
        }
        let slice = &text[node.start_byte()..node.end_byte()];
        let lex_kind = match kind {
            "number_literal" => LexKind::Number,
            "char_literal" => LexKind::Char,
            _ if atomic => LexKind::String,
            _ if slice.bytes().all(is_ident_byte) && !slice.as_bytes()[0].is_ascii_digit() => {
                LexKind::Identifier
            }
            _ => LexKind::Other,
        };
        out.push(LexToken {
            text: slice.to_string(),
            kind: lex_kind,
            start: node.start_byte(),
        });
        return;
    }
    let mut cursor = node.walk();
    for child in node.children(&mut cursor) {
        lex_node(child, text, out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_count: usize,
    pub pool_skip: usize,
    pub pool_size: usize,
    pub val_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SplitError {
    #[error("split counts must be positive")]
    NonPositive,
    #[error("val_size {val} exceeds pool_size {pool}")]
    ValLargerThanPool { val: usize, pool: usize },
    #[error("pool_skip {skip} < train_count {train}: pool would overlap train")]
    Overlap { skip: usize, train: usize },
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), SplitError> {
        if self.train_count == 0 || self.pool_size == 0 || self.val_size == 0 {
            return Err(SplitError::NonPositive);
        }
        if self.val_size > self.pool_size {
            return Err(SplitError::ValLargerThanPool {
                val: self.val_size,
                pool: self.pool_size,
            });
        }
        if self.pool_skip < self.train_count {
            return Err(SplitError::Overlap {
                skip: self.pool_skip,
                train: self.train_count,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub spec: SplitSpec,
    pub stream_len: usize,
    pub train: usize,
    pub pool: usize,
    pub val: usize,
    pub complete: bool,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<MaskedExample>,
    pub pool: Vec<MaskedExample>,
    pub val: Vec<MaskedExample>,
    pub manifest: SplitManifest,
}

/// Train is the stream prefix, the pool starts at `pool_skip`, and validation
/// is a seeded sample of the pool kept in pool order.
pub fn make_splits<I>(stream: I, spec: &SplitSpec) -> Result<Splits, SplitError>
where
    I: IntoIterator<Item = MaskedExample>,
{
    use rand::SeedableRng;

    spec.validate()?;
    let mut train = Vec::with_capacity(spec.train_count);
    let mut pool = Vec::with_capacity(spec.pool_size);
    let mut stream_len = 0;
    for (i, ex) in stream.into_iter().enumerate() {
        stream_len = i + 1;
        if i < spec.train_count {
            train.push(ex);
        } else if i >= spec.pool_skip && pool.len() < spec.pool_size {
            pool.push(ex);
        }
        if i + 1 >= spec.pool_skip + spec.pool_size {
            break;
        }
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.seed);
    let amount = spec.val_size.min(pool.len());
    let mut picks = rand::seq::index::sample(&mut rng, pool.len(), amount).into_vec();
    picks.sort_unstable();
    let val: Vec<MaskedExample> = picks.into_iter().map(|i| pool[i].clone()).collect();
    let complete = train.len() == spec.train_count && pool.len() == spec.pool_size;
    if !complete {
        warn!(
            "stream exhausted after {stream_len} examples: train {} / pool {}",
            train.len(),
            pool.len()
        );
    }
    let manifest = SplitManifest {
        spec: *spec,
        stream_len,
        train: train.len(),
        pool: pool.len(),
        val: val.len(),
        complete,
    };
    Ok(Splits {
        train,
        pool,
        val,
        manifest,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiningManifest {
    pub files_seen: usize,
    pub files_parsed: usize,
    pub files_unreadable: usize,
    pub files_not_utf8: usize,
    pub files_parse_failed: usize,
    pub functions_extracted: usize,
    pub functions_without_sites: usize,
    pub placeholder_collisions: usize,
    pub examples_emitted: usize,
    pub capped: bool,
}

#[derive(Debug, Clone)]
pub struct MineOptions {
    pub placeholder: Placeholder,
    pub max_functions: Option<usize>,
}

impl Default for MineOptions {
    fn default() -> Self {
        MineOptions {
            placeholder: Placeholder::FIRST,
            max_functions: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MineOutput {
    pub examples: Vec<MaskedExample>,
    pub manifest: MiningManifest,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot walk {path}: {source}")]
    Walk {
        path: PathBuf,
        source: walkdir::Error,
    },
}

fn has_cpp_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| CPP_EXTENSIONS.contains(&e))
}

/// C++ files under `dir` as `(file_id, path)`, sorted by file id.
pub fn list_directory(dir: &Path) -> Result<Vec<(String, PathBuf)>, CorpusError> {
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(dir).follow_links(false) {
        let entry = entry.map_err(|source| CorpusError::Walk {
            path: dir.to_path_buf(),
            source,
        })?;
        if entry.file_type().is_file() && has_cpp_extension(entry.path()) {
            let rel = entry.path().strip_prefix(dir).unwrap_or(entry.path());
            let id = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            files.push((id, entry.path().to_path_buf()));
        }
    }
    files.sort();
    Ok(files)
}

/// Paths listed one per line in a manifest file; relative entries resolve
/// against the manifest's directory.
pub fn list_manifest(manifest: &Path) -> Result<Vec<(String, PathBuf)>, CorpusError> {
    let body = std::fs::read_to_string(manifest).map_err(|source| CorpusError::Io {
        path: manifest.to_path_buf(),
        source,
    })?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut files: Vec<(String, PathBuf)> = body
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| (l.to_string(), base.join(l)))
        .collect();
    files.sort();
    files.dedup();
    Ok(files)
}

enum FileOutcome {
    Unreadable,
    Skipped(ExtractFailure),
    Parsed(Vec<FunctionOutcome>),
}

enum FunctionOutcome {
    NoSites,
    Collision,
    Example(MaskedExample),
}

fn mine_file(file_id: &str, path: &Path, placeholder: Placeholder) -> FileOutcome {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) => {
            warn!("cannot read {}: {e}", path.display());
            return FileOutcome::Unreadable;
        }
    };
    let functions = match try_extract_functions(&bytes, file_id) {
        Ok(f) => f,
        Err(why) => {
            warn!("skipping {file_id}: {why:?}");
            return FileOutcome::Skipped(why);
        }
    };
    FileOutcome::Parsed(
        functions
            .iter()
            .map(|f| {
                let sites = collect_identifiers(f);
                match select_mask_target(&sites) {
                    None => FunctionOutcome::NoSites,
                    Some(site) => match mask_identifier(f, site, placeholder) {
                        Ok(ex) => FunctionOutcome::Example(ex),
                        Err(_) => FunctionOutcome::Collision,
                    },
                }
            })
            .collect(),
    )
}

const MINE_CHUNK: usize = 64;

/// Mines files in the given order. Files are processed concurrently in chunks;
/// emission order is always file order then function order.
pub fn mine_files(files: &[(String, PathBuf)], opts: &MineOptions) -> MineOutput {
    let mut manifest = MiningManifest::default();
    let mut examples = Vec::new();
    let cap = opts.max_functions.unwrap_or(usize::MAX);
    'chunks: for chunk in files.chunks(MINE_CHUNK) {
        let outcomes: Vec<FileOutcome> = chunk
            .par_iter()
            .map(|(id, path)| mine_file(id, path, opts.placeholder))
            .collect();
        for outcome in outcomes {
            if examples.len() >= cap {
                manifest.capped = true;
                break 'chunks;
            }
            manifest.files_seen += 1;
            match outcome {
                FileOutcome::Unreadable => manifest.files_unreadable += 1,
                FileOutcome::Skipped(ExtractFailure::NotUtf8) => manifest.files_not_utf8 += 1,
                FileOutcome::Skipped(ExtractFailure::ParseError) => {
                    manifest.files_parse_failed += 1
                }
                FileOutcome::Parsed(fns) => {
                    manifest.files_parsed += 1;
                    for f in fns {
                        if examples.len() >= cap {
                            manifest.capped = true;
                            break;
                        }
                        manifest.functions_extracted += 1;
                        match f {
                            FunctionOutcome::NoSites => manifest.functions_without_sites += 1,
                            FunctionOutcome::Collision => manifest.placeholder_collisions += 1,
                            FunctionOutcome::Example(ex) => examples.push(ex),
                        }
                    }
                }
            }
        }
    }
    manifest.examples_emitted = examples.len();
    MineOutput { examples, manifest }
}
