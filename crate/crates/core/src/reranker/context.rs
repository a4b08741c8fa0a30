//! Token windows around the first placeholder of a masked function.

use serde::{Deserialize, Serialize};

use crate::ident::{split_word, Placeholder};
use crate::miner::{lex, LexKind, MaskedExample};

/// Reserved token standing for the masked identifier.
pub const MASK_TOKEN: &str = "<mask>";
/// Any other placeholder in the function.
pub const OTHER_SLOT_TOKEN: &str = "<slot>";
pub const STRING_TOKEN: &str = "<str>";
pub const CHAR_TOKEN: &str = "<chr>";
pub const SEP_TOKEN: &str = "<sep>";

const FOCUS_SENTINEL: &str = "namerepair_focus_slot_";
const OTHER_SENTINEL: &str = "namerepair_other_slot_";

/// Occurrences after the first whose enclosing statements are appended.
pub const MAX_HINT_OCCURRENCES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub window: usize,
    /// Up to `window` tokens before the first placeholder, nearest last.
    pub before: Vec<String>,
    /// Up to `window` tokens after the first placeholder.
    pub after: Vec<String>,
    /// Enclosing statements of later placeholder occurrences.
    pub hints: Vec<String>,
}

impl ContextWindow {
    /// All tokens fed to the code encoder.
    pub fn tokens(&self) -> Vec<String> {
        let mut out =
            Vec::with_capacity(self.before.len() + self.after.len() + self.hints.len() + 1);
        out.extend(self.before.iter().cloned());
        out.push(MASK_TOKEN.to_string());
        out.extend(self.after.iter().cloned());
        out.extend(self.hints.iter().cloned());
        out
    }
}

/// Grammar tokens of a masked function with identifiers split into subtokens,
/// literals collapsed and placeholders replaced by reserved tokens.
pub fn code_tokens(example: &MaskedExample) -> Vec<String> {
    let focus = Placeholder::FIRST.token();
    let mut text = example.input_text.replace(&focus, FOCUS_SENTINEL);
    for token in example.target_text.keys().filter(|t| **t != focus) {
        text = text.replace(token.as_str(), OTHER_SENTINEL);
    }
    let mut out = Vec::new();
    for tok in lex(&text) {
        match tok.kind {
            LexKind::Identifier if tok.text == FOCUS_SENTINEL => out.push(MASK_TOKEN.into()),
            LexKind::Identifier if tok.text == OTHER_SENTINEL => out.push(OTHER_SLOT_TOKEN.into()),
            LexKind::Identifier => out.extend(split_word(&tok.text)),
            LexKind::String => out.push(STRING_TOKEN.into()),
            LexKind::Char => out.push(CHAR_TOKEN.into()),
            LexKind::Number => out.push(tok.text.to_ascii_lowercase()),
            LexKind::Other => out.push(tok.text),
        }
    }
    out
}

fn is_statement_edge(tok: &str) -> bool {
    matches!(tok, ";" | "{" | "}")
}

fn statement_around(tokens: &[String], at: usize, cap: usize) -> &[String] {
    let mut lo = at;
    while lo > 0 && at - lo < cap && !is_statement_edge(&tokens[lo - 1]) {
        lo -= 1;
    }
    let mut hi = at + 1;
    while hi < tokens.len() && hi - at <= cap {
        let edge = is_statement_edge(&tokens[hi]);
        hi += 1;
        if edge {
            break;
        }
    }
    &tokens[lo..hi]
}

/// Window of `window` tokens on each side of the first `<ID_1>`; `None` when
/// the example has no such placeholder.
pub fn extract_context_window(example: &MaskedExample, window: usize) -> Option<ContextWindow> {
    let tokens = code_tokens(example);
    let positions: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.as_str() == MASK_TOKEN)
        .map(|(i, _)| i)
        .collect();
    let &first = positions.first()?;
    let before = tokens[first.saturating_sub(window)..first].to_vec();
    let after = tokens[first + 1..(first + 1 + window).min(tokens.len())].to_vec();
    let mut hints = Vec::new();
    for &pos in positions.iter().skip(1).take(MAX_HINT_OCCURRENCES) {
        hints.push(SEP_TOKEN.to_string());
        hints.extend(statement_around(&tokens, pos, window).iter().cloned());
    }
    Some(ContextWindow {
        window,
        before,
        after,
        hints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miner::{ExampleMeta, SiteKind};
    use std::collections::BTreeMap;

    fn example(text: &str) -> MaskedExample {
        MaskedExample {
            id: "x".into(),
            input_text: text.into(),
            target_text: BTreeMap::from([("<ID_1>".into(), "count".into())]),
            meta: ExampleMeta {
                file_id: "f".into(),
                byte_start: 0,
                kind: SiteKind::Local,
                occurrence_count: 1,
            },
        }
    }

    #[test]
    fn simple_declaration() {
        let w = extract_context_window(&example("int <ID_1> = 0;"), 64).unwrap();
        assert_eq!(w.before, ["int"]);
        assert_eq!(w.after, ["=", "0", ";"]);
        assert!(w.hints.is_empty());
        assert_eq!(w.tokens(), ["int", "<mask>", "=", "0", ";"]);
    }

    #[test]
    fn placeholder_at_start() {
        let w = extract_context_window(&example("<ID_1> += 1;"), 64).unwrap();
        assert!(w.before.is_empty());
        assert_eq!(w.after, ["+=", "1", ";"]);
    }

    #[test]
    fn missing_placeholder() {
        assert!(extract_context_window(&example("int x = 0;"), 8).is_none());
    }

    #[test]
    fn hand_tokenized_function() {
        let ex = example(
            "int sumAll(const int *arr, int n) {\n    int <ID_1> = 0;\n    for (int i = 0; i < n; ++i) <ID_1> += arr[i];\n    return <ID_1>;\n}",
        );
        let w = extract_context_window(&ex, 6).unwrap();
        assert_eq!(w.before, [",", "int", "n", ")", "{", "int"]);
        assert_eq!(w.after, ["=", "0", ";", "for", "(", "int"]);
        let expected_hints: Vec<&str> = vec![
            "<sep>", "++", "i", ")", "<mask>", "+=", "arr", "[", "i", "]", ";", "<sep>", "return",
            "<mask>", ";",
        ];
        assert_eq!(w.hints, expected_hints);
    }

    #[test]
    fn literals_and_subtokens() {
        let toks = code_tokens(&example("void f(){ log(\"x y\", 'c', 0x1F); int <ID_1> = maxValue; }"));
        assert!(toks.contains(&"<str>".to_string()));
        assert!(toks.contains(&"<chr>".to_string()));
        assert!(toks.contains(&"0x1f".to_string()));
        let pos = toks.iter().position(|t| t == "max").unwrap();
        assert_eq!(toks[pos + 1], "value");
    }
}
