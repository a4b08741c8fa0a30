//! Identifier vocabulary shared by every stage: validity, subtoken splitting,
//! placeholder tokens and the candidate type.

use std::collections::HashSet;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const KEYWORDS_TXT: &str = include_str!("../data/cpp17_keywords.txt");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentError {
    #[error("empty identifier")]
    Empty,
    #[error("`{0}` is not a valid C++ identifier")]
    Lexical(String),
    #[error("`{0}` is a reserved C++ keyword")]
    Keyword(String),
    #[error("`{0}` is not a placeholder token")]
    Placeholder(String),
}

fn keywords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        KEYWORDS_TXT
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect()
    })
}

pub fn is_keyword(text: &str) -> bool {
    keywords().contains(text)
}

#[inline]
pub fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

fn check_identifier(text: &str) -> Result<(), IdentError> {
    let bytes = text.as_bytes();
    let Some(&first) = bytes.first() else {
        return Err(IdentError::Empty);
    };
    if !(first.is_ascii_alphabetic() || first == b'_') || !bytes.iter().all(|&b| is_ident_byte(b)) {
        return Err(IdentError::Lexical(text.to_string()));
    }
    if is_keyword(text) {
        return Err(IdentError::Keyword(text.to_string()));
    }
    Ok(())
}

/// True iff `text` is an ASCII C++ identifier that is not a C++17 keyword.
pub fn is_valid_identifier(text: &str) -> bool {
    check_identifier(text).is_ok()
}

/// A validated C++ identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Identifier(String);

impl Identifier {
    pub fn new(text: impl Into<String>) -> Result<Self, IdentError> {
        let text = text.into();
        check_identifier(&text)?;
        Ok(Identifier(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl TryFrom<String> for Identifier {
    type Error = IdentError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Identifier::new(value)
    }
}

impl TryFrom<&str> for Identifier {
    type Error = IdentError;
    fn try_from(value: &str) -> Result<Self, Self::Error> {
        Identifier::new(value)
    }
}

impl From<Identifier> for String {
    fn from(value: Identifier) -> Self {
        value.0
    }
}

impl AsRef<str> for Identifier {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Lower,
    Upper,
    Digit,
}

fn class_of(b: u8) -> CharClass {
    if b.is_ascii_digit() {
        CharClass::Digit
    } else if b.is_ascii_uppercase() {
        CharClass::Upper
    } else {
        CharClass::Lower
    }
}

/// Splits any ASCII word into lowercase subtokens.
///
/// Underscores separate segments (empty segments are dropped), digit runs are
/// their own subtokens, a lower-to-upper transition starts a new subtoken, and
/// an uppercase run followed by a lowercase letter ends one character early so
/// that `XMLParser` yields `xml`, `parser`.
pub fn split_word(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for segment in text.split('_').filter(|s| !s.is_empty()) {
        let bytes = segment.as_bytes();
        let mut start = 0;
        for i in 1..bytes.len() {
            let prev = class_of(bytes[i - 1]);
            let cur = class_of(bytes[i]);
            let boundary = match (prev, cur) {
                (CharClass::Digit, c) | (c, CharClass::Digit) if c != CharClass::Digit => true,
                (CharClass::Lower, CharClass::Upper) => true,
                // acronym run ends before the capital that starts the next word
                (CharClass::Upper, CharClass::Upper) => {
                    i + 1 < bytes.len() && class_of(bytes[i + 1]) == CharClass::Lower
                }
                _ => false,
            };
            if boundary {
                out.push(segment[start..i].to_ascii_lowercase());
                start = i;
            }
        }
        out.push(segment[start..].to_ascii_lowercase());
    }
    out
}

pub fn split_subtokens(name: &Identifier) -> Vec<String> {
    split_word(name.as_str())
}

/// Joins subtokens back into a lowerCamelCase word. An underscore separates
/// tokens whose boundary camelCase cannot express (`a`,`a`,`a` or `0`,`0`).
pub fn join_camel(subtokens: &[String]) -> String {
    let mut out = String::new();
    for (i, tok) in subtokens.iter().enumerate() {
        if i == 0 {
            out.push_str(tok);
        } else {
            let last = out.as_bytes().last().copied().unwrap_or(b'_');
            let next_digit = tok.as_bytes().first().is_some_and(u8::is_ascii_digit);
            if last.is_ascii_uppercase() || (last.is_ascii_digit() && next_digit) {
                out.push('_');
            }
            let mut chars = tok.chars();
            if let Some(c) = chars.next() {
                out.push(c.to_ascii_uppercase());
                out.push_str(chars.as_str());
            }
        }
    }
    out
}

/// The `<ID_n>` token substituted for a masked identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Placeholder {
    index: u32,
}

impl Placeholder {
    pub const FIRST: Placeholder = Placeholder { index: 1 };

    pub fn new(index: u32) -> Result<Self, IdentError> {
        if index == 0 {
            return Err(IdentError::Placeholder("<ID_0>".into()));
        }
        Ok(Placeholder { index })
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    pub fn token(&self) -> String {
        format!("<ID_{}>", self.index)
    }

    pub fn parse(token: &str) -> Result<Self, IdentError> {
        let bad = || IdentError::Placeholder(token.to_string());
        let digits = token
            .strip_prefix("<ID_")
            .and_then(|s| s.strip_suffix('>'))
            .ok_or_else(bad)?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
            return Err(bad());
        }
        let index: u32 = digits.parse().map_err(|_| bad())?;
        Placeholder::new(index)
    }
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<ID_{}>", self.index)
    }
}

/// A proposed replacement name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub name: Identifier,
    /// Natural-log probability reported by the generator, if any.
    pub gen_logprob: Option<f64>,
    pub rerank_score: Option<f64>,
}

impl Candidate {
    pub fn new(name: Identifier) -> Self {
        Candidate {
            name,
            gen_logprob: None,
            rerank_score: None,
        }
    }

    pub fn with_logprob(name: Identifier, logprob: Option<f64>) -> Self {
        Candidate {
            name,
            gen_logprob: logprob,
            rerank_score: None,
        }
    }
}
