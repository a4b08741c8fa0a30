#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use namerepair::candidates::{CandidateEntry, CandidateRecord};
use namerepair::miner::{ExampleMeta, MaskedExample, SiteKind};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_namerepair"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/cpp")
}

pub fn shots_file() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/three_shots.json")
}

pub fn example(id: &str, input_text: &str, gold: &str) -> MaskedExample {
    MaskedExample {
        id: id.into(),
        input_text: input_text.into(),
        target_text: BTreeMap::from([("<ID_1>".into(), gold.into())]),
        meta: ExampleMeta {
            file_id: "synthetic.cpp".into(),
            byte_start: 0,
            kind: SiteKind::Local,
            occurrence_count: input_text.matches("<ID_1>").count(),
        },
    }
}

pub fn record(id: &str, names: &[&str]) -> CandidateRecord {
    CandidateRecord {
        id: id.into(),
        candidates: names
            .iter()
            .map(|n| CandidateEntry {
                name: n.to_string(),
                logprob: None,
                rerank_score: None,
            })
            .collect(),
        ranking: None,
        sampling: None,
        error: None,
    }
}

pub fn write_lines<T: serde::Serialize>(path: &Path, items: &[T]) {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it).unwrap());
        s.push('\n');
    }
    std::fs::write(path, s).unwrap();
}

pub fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Vec<T> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

// ---- synthetic cue corpus ----

pub const HEADS: [&str; 20] = [
    "count", "index", "buffer", "offset", "length", "total", "cursor", "width", "height", "node",
    "value", "label", "flag", "limit", "score", "delta", "handle", "path", "timer", "queue",
];
pub const CUES: [&str; 20] = [
    "zeta", "kappa", "sigma", "omega", "gamma", "theta", "lambda", "alpha", "beta", "epsilon",
    "iota", "rho", "tau", "upsilon", "phi", "chi", "psi", "omicron", "nu", "xi",
];
const TAILS: [&str; 8] = ["", "Ptr", "Max", "Old", "New", "Tmp", "Next", "Prev"];
const FILLER: [&str; 12] = [
    "config", "state", "ctx", "data", "input", "result", "helper", "items", "opts", "store",
    "spec", "table",
];

pub struct CueCorpus {
    pub examples: Vec<MaskedExample>,
    pub candidates: Vec<CandidateRecord>,
}

/// Each example's context carries a cue word fixed by the gold name's first
/// subtoken; every candidate list holds the gold plus nine decoys with other
/// first subtokens, shuffled.
pub fn cue_corpus(n: usize, seed: u64) -> CueCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(n);
    let mut candidates = Vec::with_capacity(n);
    for i in 0..n {
        let head = rng.gen_range(0..HEADS.len());
        let name = |h: usize, rng: &mut ChaCha8Rng| format!("{}{}", HEADS[h], TAILS[rng.gen_range(0..TAILS.len())]);
        let gold = name(head, &mut rng);
        let f = |rng: &mut ChaCha8Rng| FILLER[rng.gen_range(0..FILLER.len())];
        let text = format!(
            "void step{i}(int {a}, int {b}) {{\n    auto <ID_1> = {a}.{cue}Source({b});\n    {c}.update(<ID_1>, {d});\n}}",
            a = f(&mut rng),
            b = f(&mut rng),
            c = f(&mut rng),
            d = f(&mut rng),
            cue = CUES[head],
        );
        let id = format!("cue{i:05}");
        let mut heads: Vec<usize> = (0..HEADS.len()).filter(|h| *h != head).collect();
        heads.shuffle(&mut rng);
        let mut names: Vec<String> = heads[..9].iter().map(|&h| name(h, &mut rng)).collect();
        names.push(gold.clone());
        names.shuffle(&mut rng);
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        candidates.push(record(&id, &refs));
        examples.push(example(&id, &text, &gold));
    }
    CueCorpus {
        examples,
        candidates,
    }
}

// ---- a one-route HTTP server for transport tests ----

/// Serves `body` with `status` to every request until the process exits.
pub fn serve(status: u16, body: String) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut buf = vec![0; len];
            let _ = reader.read_exact(&mut buf);
            let resp = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(resp.as_bytes());
        }
    });
    format!("http://{addr}")
}
