//! Placeholder grammar shared by the compiler and the replay engine.
//!
//! Recognized tokens are `{{current_time}}`, `{{current_date}}`,
//! `{{step_N_result}}` (N ≥ 1, no leading zeros) and `{{prev_content}}`.
//! Any other `{{...}}` text is ordinary literal text.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Placeholder {
    CurrentTime,
    CurrentDate,
    StepResult(u32),
    PrevContent,
}

impl Placeholder {
    fn parse_name(name: &str) -> Option<Self> {
        match name {
            "current_time" => Some(Placeholder::CurrentTime),
            "current_date" => Some(Placeholder::CurrentDate),
            "prev_content" => Some(Placeholder::PrevContent),
            _ => {
                let n = name.strip_prefix("step_")?.strip_suffix("_result")?;
                if n.is_empty() || n.starts_with('0') || !n.bytes().all(|b| b.is_ascii_digit()) {
                    return None;
                }
                n.parse().ok().map(Placeholder::StepResult)
            }
        }
    }
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Placeholder::CurrentTime => f.write_str("{{current_time}}"),
            Placeholder::CurrentDate => f.write_str("{{current_date}}"),
            Placeholder::StepResult(n) => write!(f, "{{{{step_{n}_result}}}}"),
            Placeholder::PrevContent => f.write_str("{{prev_content}}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Piece<'a> {
    Literal(&'a str),
    Slot(Placeholder),
}

/// Splits `text` into literal runs and recognized placeholders.
pub fn pieces(text: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut literal_start = 0;
    let mut cursor = 0;
    while let Some(open) = text[cursor..].find("{{").map(|i| cursor + i) {
        let Some(close) = text[open + 2..].find("}}").map(|i| open + 2 + i) else {
            break;
        };
        match Placeholder::parse_name(&text[open + 2..close]) {
            Some(slot) => {
                if literal_start < open {
                    out.push(Piece::Literal(&text[literal_start..open]));
                }
                out.push(Piece::Slot(slot));
                cursor = close + 2;
                literal_start = cursor;
            }
            None => cursor = open + 1,
        }
    }
    if literal_start < text.len() {
        out.push(Piece::Literal(&text[literal_start..]));
    }
    out
}

pub fn placeholders(text: &str) -> impl Iterator<Item = Placeholder> + '_ {
    pieces(text).into_iter().filter_map(|p| match p {
        Piece::Slot(slot) => Some(slot),
        Piece::Literal(_) => None,
    })
}

pub fn contains_placeholder(text: &str) -> bool {
    placeholders(text).next().is_some()
}
