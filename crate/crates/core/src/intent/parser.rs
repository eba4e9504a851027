//! Keyword parser and printer for intents.
//!
//! ```text
//! intent     := service clause*
//! clause     := "FOR" count unit
//!             | "WITH" quality
//!             | "WITH" metric ("<=" | ">=") number
//!             | "AT" place
//!             | "FROM" time "LASTING" duration
//! time       := HH ":" MM
//! duration   := digits ("m" | "h" | "d")
//! service, unit, quality, place := [A-Za-z0-9_-]+ (not a keyword)
//! ```
//!
//! Tokens are separated by whitespace. `FOR`, `AT` and `FROM` may appear at
//! most once; `FROM` is mandatory.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use super::{IntentError, PresetTable};
use crate::sla::{Metric, Slo};

const KEYWORDS: [&str; 5] = ["FOR", "WITH", "AT", "FROM", "LASTING"];
const CLAUSES: [&str; 4] = ["FOR", "WITH", "AT", "FROM"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("at byte {position}: expected {}, found {found}", expected.join(" | "))]
pub struct SyntaxError {
    pub position: usize,
    pub expected: Vec<&'static str>,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Constraint {
    Quality(String),
    Explicit(Slo),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    /// Minutes after midnight.
    pub start_minute: u32,
    pub duration_minutes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentAst {
    pub service: String,
    pub scale: Option<(u64, String)>,
    pub constraints: Vec<Constraint>,
    pub location: Option<String>,
    pub window: TimeWindow,
}

struct Token<'a> {
    pos: usize,
    text: &'a str,
}

fn tokenize(src: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in src.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                out.push(Token { pos: s, text: &src[s..i] });
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Token { pos: s, text: &src[s..] });
    }
    out
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
        && !KEYWORDS.contains(&s)
}

struct Parser<'a> {
    toks: Vec<Token<'a>>,
    at: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token<'a>> {
        self.toks.get(self.at)
    }

    fn err(&self, expected: Vec<&'static str>) -> IntentError {
        let (position, found) = match self.peek() {
            Some(t) => (t.pos, format!("`{}`", t.text)),
            None => (self.end, "end of input".to_string()),
        };
        IntentError::Syntax(SyntaxError {
            position,
            expected,
            found,
        })
    }

    fn next_if(&mut self, expected: &'static str, ok: impl Fn(&str) -> bool) -> Result<Token<'a>, IntentError> {
        match self.peek() {
            Some(t) if ok(t.text) => {
                let t = Token { pos: t.pos, text: t.text };
                self.at += 1;
                Ok(t)
            }
            _ => Err(self.err(vec![expected])),
        }
    }

    fn ident(&mut self, what: &'static str) -> Result<String, IntentError> {
        self.next_if(what, is_ident).map(|t| t.text.to_string())
    }
}

fn parse_time(s: &str) -> Option<u32> {
    let (h, m) = s.split_once(':')?;
    if h.len() != 2 || m.len() != 2 || !h.bytes().chain(m.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let (h, m): (u32, u32) = (h.parse().ok()?, m.parse().ok()?);
    (h < 24 && m < 60).then_some(h * 60 + m)
}

fn parse_duration(s: &str) -> Option<u64> {
    let unit = s.chars().last()?;
    let digits = &s[..s.len() - unit.len_utf8()];
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let n: u64 = digits.parse().ok()?;
    let mins = match unit {
        'm' => n,
        'h' => n.checked_mul(60)?,
        'd' => n.checked_mul(1440)?,
        _ => return None,
    };
    (mins > 0).then_some(mins)
}

fn parse_count(s: &str) -> Option<u64> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok().filter(|n| *n > 0)
}

fn parse_number(s: &str) -> Option<f64> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit() || b == b'.') {
        return None;
    }
    s.parse().ok()
}

pub fn parse_intent(text: &str, presets: &PresetTable) -> Result<IntentAst, IntentError> {
    let mut p = Parser {
        toks: tokenize(text),
        at: 0,
        end: text.len(),
    };
    let service = p.ident("service")?;
    let mut scale = None;
    let mut constraints = Vec::new();
    let mut location = None;
    let mut window = None;
    while let Some(tok) = p.peek() {
        let open: Vec<&'static str> = CLAUSES
            .iter()
            .copied()
            .filter(|kw| match *kw {
                "FOR" => scale.is_none(),
                "AT" => location.is_none(),
                "FROM" => window.is_none(),
                _ => true,
            })
            .collect();
        if !open.contains(&tok.text) {
            return Err(p.err(open));
        }
        let kw = tok.text;
        p.at += 1;
        match kw {
            "FOR" => {
                let n = p.next_if("count", |s| parse_count(s).is_some())?;
                let unit = p.ident("unit")?;
                scale = Some((parse_count(n.text).unwrap(), unit));
            }
            "AT" => location = Some(p.ident("place")?),
            "FROM" => {
                let t = p.next_if("HH:MM", |s| parse_time(s).is_some())?;
                p.next_if("LASTING", |s| s == "LASTING")?;
                let d = p.next_if("duration", |s| parse_duration(s).is_some())?;
                window = Some(TimeWindow {
                    start_minute: parse_time(t.text).unwrap(),
                    duration_minutes: parse_duration(d.text).unwrap(),
                });
            }
            _ => constraints.push(parse_with(&mut p, presets)?),
        }
    }
    let window = window.ok_or_else(|| p.err(vec!["FROM"]))?;
    Ok(IntentAst {
        service,
        scale,
        constraints,
        location,
        window,
    })
}

fn parse_with(p: &mut Parser<'_>, presets: &PresetTable) -> Result<Constraint, IntentError> {
    let tok = p.next_if("quality", is_ident)?;
    let Some(metric) = Metric::from_name(tok.text) else {
        if presets.qualities.contains_key(tok.text) {
            return Ok(Constraint::Quality(tok.text.to_string()));
        }
        return Err(IntentError::UnknownQuality {
            name: tok.text.to_string(),
            position: tok.pos,
        });
    };
    let sym = metric.comparator().symbol();
    p.next_if(sym, |s| s == sym)?;
    let num_pos = p.peek().map(|t| t.pos);
    let t = p.next_if("number", |s| parse_number(s).is_some())?;
    Slo::new(metric, parse_number(t.text).unwrap())
        .map(Constraint::Explicit)
        .map_err(|_| {
            IntentError::Syntax(SyntaxError {
                position: num_pos.unwrap_or(p.end),
                expected: vec![if metric.is_fraction() { "number in [0, 1]" } else { "positive number" }],
                found: format!("`{}`", t.text),
            })
        })
}

fn fmt_duration(mins: u64) -> String {
    if mins.is_multiple_of(1440) {
        format!("{}d", mins / 1440)
    } else if mins.is_multiple_of(60) {
        format!("{}h", mins / 60)
    } else {
        format!("{mins}m")
    }
}

/// Canonical text form; parses back to the same AST.
impl fmt::Display for IntentAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.service)?;
        if let Some((n, unit)) = &self.scale {
            write!(f, " FOR {n} {unit}")?;
        }
        for c in &self.constraints {
            match c {
                Constraint::Quality(q) => write!(f, " WITH {q}")?,
                Constraint::Explicit(s) => {
                    write!(f, " WITH {} {} {}", s.metric, s.comparator.symbol(), s.target)?
                }
            }
        }
        if let Some(place) = &self.location {
            write!(f, " AT {place}")?;
        }
        write!(
            f,
            " FROM {:02}:{:02} LASTING {}",
            self.window.start_minute / 60,
            self.window.start_minute % 60,
            fmt_duration(self.window.duration_minutes)
        )
    }
}
