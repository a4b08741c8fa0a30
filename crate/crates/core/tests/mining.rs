use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use namerepair::ident::Placeholder;
use namerepair::miner::{
    build_jsonl_record, collect_identifiers, extract_functions, list_directory, mask_identifier,
    mine_files, parses_as_function, unmask, ExampleMeta, MaskedExample, MineOptions, SiteKind,
    SourceFunction,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/cpp")
}

fn fixture_functions() -> Vec<SourceFunction> {
    list_directory(&fixture_dir())
        .unwrap()
        .into_iter()
        .flat_map(|(id, path)| extract_functions(&std::fs::read(path).unwrap(), &id))
        .collect()
}

/// Maximal runs of identifier characters, in order.
fn word_runs(text: &str) -> Vec<&str> {
    text.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .filter(|s| !s.is_empty())
        .collect()
}

#[test]
fn fixture_corpus_counts() {
    let out = mine_files(&list_directory(&fixture_dir()).unwrap(), &MineOptions::default());
    let m = &out.manifest;
    assert_eq!(m.files_seen, 8);
    assert_eq!(m.files_parsed, 7);
    assert_eq!(m.files_parse_failed, 1);
    assert_eq!(m.functions_extracted, 56);
    assert_eq!(m.functions_without_sites, 3);
    assert_eq!(out.examples.len(), 53);
    assert_eq!(m.examples_emitted, 53);
    assert!(out.examples.iter().all(|e| e.meta.file_id != "broken.cpp"));
}

#[test]
fn mining_is_deterministic() {
    let files = list_directory(&fixture_dir()).unwrap();
    let a: Vec<String> = mine_files(&files, &MineOptions::default())
        .examples
        .iter()
        .map(build_jsonl_record)
        .collect();
    let b: Vec<String> = mine_files(&files, &MineOptions::default())
        .examples
        .iter()
        .map(build_jsonl_record)
        .collect();
    assert_eq!(a, b);
}

#[test]
fn cap_limits_examples() {
    let files = list_directory(&fixture_dir()).unwrap();
    let out = mine_files(
        &files,
        &MineOptions {
            max_functions: Some(3),
            ..Default::default()
        },
    );
    assert_eq!(out.examples.len(), 3);
}

#[test]
fn every_fixture_example_round_trips() {
    let functions = fixture_functions();
    let by_key: BTreeMap<(String, usize), &SourceFunction> = functions
        .iter()
        .map(|f| ((f.file_id.clone(), f.byte_start), f))
        .collect();
    let out = mine_files(&list_directory(&fixture_dir()).unwrap(), &MineOptions::default());
    for ex in &out.examples {
        let f = by_key[&(ex.meta.file_id.clone(), ex.meta.byte_start)];
        assert_eq!(unmask(ex, ex.gold().unwrap()), f.text, "{}", ex.id);
        assert!(parses_as_function(&f.text));
    }
}

#[test]
fn class_members_are_extracted_once_each() {
    let bytes = std::fs::read(fixture_dir().join("widget.h")).unwrap();
    let fs = extract_functions(&bytes, "widget.h");
    assert_eq!(fs.len(), 2);
    assert!(fs[0].text.starts_with("void resize"));
    assert!(fs[1].text.starts_with("int scaled"));
}

#[test]
fn member_fields_are_not_sites() {
    let bytes = std::fs::read(fixture_dir().join("widget.h")).unwrap();
    for f in extract_functions(&bytes, "widget.h") {
        assert!(collect_identifiers(&f).iter().all(|s| s.name.as_str() != "pixels"));
    }
}

/// Masking every site of every fixture function changes exactly the runs equal
/// to the name: `counter`, `mid` or `value` never lose a character.
#[test]
fn lookaround_never_touches_longer_names() {
    let mut checked = 0;
    let mut substring_cases = 0;
    for f in fixture_functions() {
        let original = word_runs(&f.text);
        for site in collect_identifiers(&f) {
            let name = site.name.as_str();
            let ex = mask_identifier(&f, &site, Placeholder::FIRST).unwrap();
            let expected: Vec<&str> = original
                .iter()
                .map(|w| if *w == name { "ID_1" } else { *w })
                .collect();
            assert_eq!(word_runs(&ex.input_text), expected, "{} in {}", name, f.file_id);
            if original.iter().any(|w| *w != name && w.contains(name)) {
                substring_cases += 1;
            }
            checked += 1;
        }
    }
    assert!(checked > 150, "{checked}");
    assert!(substring_cases >= 10, "{substring_cases}");
}

#[test]
fn named_substring_pairs() {
    let bytes = std::fs::read(fixture_dir().join("containers.cpp")).unwrap();
    let fs = extract_functions(&bytes, "containers.cpp");
    for (func, name, longer) in [
        ("countMatches", "count", "counter"),
        ("reverseInPlace", "i", "mid"),
        ("fillRange", "val", "value"),
    ] {
        let f = fs.iter().find(|f| f.text.contains(func)).unwrap();
        let site = collect_identifiers(f)
            .into_iter()
            .find(|s| s.name.as_str() == name)
            .unwrap();
        let ex = mask_identifier(f, &site, Placeholder::FIRST).unwrap();
        let runs = word_runs(&ex.input_text);
        assert_eq!(
            runs.iter().filter(|w| **w == longer).count(),
            word_runs(&f.text).iter().filter(|w| **w == longer).count()
        );
        assert!(!runs.contains(&name));
        assert_eq!(unmask(&ex, name), f.text);
    }
}

fn random_ident(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(1..12);
    let mut s = String::new();
    for i in 0..len {
        let pool = if i == 0 {
            "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_"
        } else {
            "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_0123456789"
        };
        s.push(pool.as_bytes()[rng.gen_range(0..pool.len())] as char);
    }
    s
}

#[test]
fn thousand_records_survive_serialization() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let chars: Vec<char> = "ab{}();<>\"\\\n\t é→\u{0}_ID1".chars().collect();
    for i in 0..1000 {
        let text: String = (0..rng.gen_range(0..80))
            .map(|_| chars[rng.gen_range(0..chars.len())])
            .collect();
        let ex = MaskedExample {
            id: format!("{i:016x}"),
            input_text: format!("{text}<ID_1>{text}"),
            target_text: BTreeMap::from([("<ID_1>".into(), random_ident(&mut rng))]),
            meta: ExampleMeta {
                file_id: format!("dir/{i}.cpp"),
                byte_start: rng.gen(),
                kind: if rng.gen() { SiteKind::Local } else { SiteKind::Parameter },
                occurrence_count: rng.gen_range(1..50),
            },
        };
        let line = build_jsonl_record(&ex);
        assert!(!line.contains('\n'));
        assert_eq!(MaskedExample::from_json_line(&line).unwrap(), ex);
    }
}
