//! Structured response parsing.
//!
//! Canonical layout of a model response:
//!
//! ```text
//! <think>free-form reasoning</think>
//! <score>
//! up: 6.5
//! down: 3
//! </score>
//! <change_pct>2.4</change_pct>
//! <answer>hold</answer>
//! ```
//!
//! The think block is optional. The think block is located first and masked
//! out, so tag-like text inside it never terminates or duplicates the other
//! elements. Text outside the tagged elements is ignored.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::MovementLabel;

pub const MAX_EVIDENCE_SCORE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidenceScores {
    pub up: f64,
    pub down: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub reasoning_text: String,
    pub evidence_scores: EvidenceScores,
    pub change_pct: f64,
    pub answer: MovementLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    DuplicateTag,
    UnclosedTag,
    UnmatchedClosingTag,
    OutOfOrder,
    MalformedScore,
    ScoreOutOfRange,
    MalformedNumber,
    InvalidAnswer,
}

impl Rule {
    pub fn id(self) -> &'static str {
        match self {
            Rule::DuplicateTag => "duplicate_tag",
            Rule::UnclosedTag => "unclosed_tag",
            Rule::UnmatchedClosingTag => "unmatched_closing_tag",
            Rule::OutOfOrder => "out_of_order",
            Rule::MalformedScore => "malformed_score",
            Rule::ScoreOutOfRange => "score_out_of_range",
            Rule::MalformedNumber => "malformed_number",
            Rule::InvalidAnswer => "invalid_answer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FormatReport {
    pub parse_ok: bool,
    pub missing_fields: Vec<String>,
    pub violations: Vec<Violation>,
}

impl FormatReport {
    fn violate(&mut self, rule: Rule, message: impl Into<String>) {
        self.violations.push(Violation {
            rule,
            message: message.into(),
        });
    }
}

/// 1 when the response is well-formed, 0 otherwise.
pub fn format_score(report: &FormatReport) -> f64 {
    if report.parse_ok {
        1.0
    } else {
        0.0
    }
}

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";

/// Mandatory elements, in required order.
const FIELDS: [&str; 3] = ["score", "change_pct", "answer"];

/// Parse a raw response. Never fails: every problem is recorded in the report,
/// and a [`ParsedResponse`] is returned exactly when the report is clean.
pub fn parse(text: &str) -> (Option<ParsedResponse>, FormatReport) {
    let mut report = FormatReport::default();

    // Locate the think block first and mask it out of the remaining scan.
    let mut reasoning = String::new();
    let mut outside = String::with_capacity(text.len());
    // Byte offset in `outside` where post-think text begins.
    let mut after_think_at = 0;
    match text.find(THINK_OPEN) {
        Some(open) => {
            let body_start = open + THINK_OPEN.len();
            match text[body_start..].find(THINK_CLOSE) {
                Some(rel) => {
                    reasoning = text[body_start..body_start + rel].to_string();
                    outside.push_str(&text[..open]);
                    outside.push('\n');
                    after_think_at = outside.len();
                    outside.push_str(&text[body_start + rel + THINK_CLOSE.len()..]);
                }
                None => {
                    report.violate(Rule::UnclosedTag, "<think> is never closed");
                    outside.push_str(&text[..open]);
                }
            }
        }
        None => outside.push_str(text),
    }
    if outside.contains(THINK_OPEN) {
        report.violate(Rule::DuplicateTag, "more than one <think> block");
    } else if outside.contains(THINK_CLOSE) {
        report.violate(Rule::UnmatchedClosingTag, "</think> without a matching <think>");
    }

    let mut bodies: [Option<&str>; 3] = [None; 3];
    let mut positions: [Option<usize>; 3] = [None; 3];
    for (slot, name) in FIELDS.iter().enumerate() {
        let open_tag = format!("<{name}>");
        let close_tag = format!("</{name}>");
        let opens = outside.matches(&open_tag).count();
        let closes = outside.matches(&close_tag).count();
        if opens == 0 {
            report.missing_fields.push((*name).to_string());
            if closes > 0 {
                report.violate(Rule::UnmatchedClosingTag, format!("{close_tag} without {open_tag}"));
            }
            continue;
        }
        if opens > 1 {
            report.violate(Rule::DuplicateTag, format!("{open_tag} appears {opens} times"));
        }
        let start = outside.find(&open_tag).expect("counted above");
        let body_start = start + open_tag.len();
        match outside[body_start..].find(&close_tag) {
            Some(rel) => {
                if closes > opens {
                    report.violate(Rule::UnmatchedClosingTag, format!("extra {close_tag}"));
                }
                bodies[slot] = Some(&outside[body_start..body_start + rel]);
                positions[slot] = Some(start);
            }
            None => report.violate(Rule::UnclosedTag, format!("{open_tag} is never closed")),
        }
    }

    let first_pos = positions.iter().flatten().min().copied();
    if after_think_at > 0 && first_pos.is_some_and(|p| p < after_think_at) {
        report.violate(Rule::OutOfOrder, "tagged output must follow the <think> block");
    }
    let present: Vec<usize> = positions.iter().flatten().copied().collect();
    if present.windows(2).any(|w| w[0] > w[1]) {
        report.violate(Rule::OutOfOrder, "expected order is <score>, <change_pct>, <answer>");
    }

    let scores = bodies[0].and_then(|b| parse_scores(b, &mut report));
    let change_pct = bodies[1].and_then(|b| match parse_number(b) {
        Some(v) => Some(v),
        None => {
            report.violate(Rule::MalformedNumber, format!("<change_pct> is not a number: {:?}", b.trim()));
            None
        }
    });
    let answer = bodies[2].and_then(|b| match b.parse::<MovementLabel>() {
        Ok(l) => Some(l),
        Err(_) => {
            report.violate(Rule::InvalidAnswer, format!("<answer> must be up, down or hold, got {:?}", b.trim()));
            None
        }
    });

    report.parse_ok = report.missing_fields.is_empty() && report.violations.is_empty();
    let parsed = match (report.parse_ok, scores, change_pct, answer) {
        (true, Some(evidence_scores), Some(change_pct), Some(answer)) => Some(ParsedResponse {
            reasoning_text: reasoning,
            evidence_scores,
            change_pct,
            answer,
        }),
        _ => None,
    };
    (parsed, report)
}

fn parse_scores(body: &str, report: &mut FormatReport) -> Option<EvidenceScores> {
    let mut up = None;
    let mut down = None;
    let mut ok = true;
    for line in body.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let Some((key, value)) = line.split_once(':') else {
            report.violate(Rule::MalformedScore, format!("score line without ':' {line:?}"));
            ok = false;
            continue;
        };
        let slot = match key.trim().to_ascii_lowercase().as_str() {
            "up" => &mut up,
            "down" => &mut down,
            other => {
                report.violate(Rule::MalformedScore, format!("unknown score key {other:?}"));
                ok = false;
                continue;
            }
        };
        if slot.is_some() {
            report.violate(Rule::DuplicateTag, format!("score key {:?} repeated", key.trim()));
            ok = false;
            continue;
        }
        match parse_number(value) {
            Some(v) if (0.0..=MAX_EVIDENCE_SCORE).contains(&v) => *slot = Some(v),
            Some(v) => {
                report.violate(Rule::ScoreOutOfRange, format!("score {v} outside [0, 10]"));
                ok = false;
            }
            None => {
                report.violate(Rule::MalformedNumber, format!("score value is not a number: {:?}", value.trim()));
                ok = false;
            }
        }
    }
    for (name, v) in [("up", up), ("down", down)] {
        if v.is_none() && ok {
            report.violate(Rule::MalformedScore, format!("score block lacks an {name:?} line"));
        }
    }
    if !ok {
        return None;
    }
    Some(EvidenceScores { up: up?, down: down? })
}

/// Decimal with optional sign, optional decimal point and optional trailing
/// `%`. Exponents and thousands separators are rejected.
pub fn parse_number(raw: &str) -> Option<f64> {
    let s = raw.trim();
    let s = s.strip_suffix('%').map(str::trim_end).unwrap_or(s);
    let digits = s.strip_prefix(['+', '-']).unwrap_or(s);
    let mut seen_digit = false;
    let mut seen_point = false;
    for c in digits.chars() {
        match c {
            '0'..='9' => seen_digit = true,
            '.' if !seen_point => seen_point = true,
            _ => return None,
        }
    }
    if !seen_digit {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Render the canonical text for a response. `parse(render(p))` yields `p`.
pub fn render(parsed: &ParsedResponse) -> Result<String> {
    let EvidenceScores { up, down } = parsed.evidence_scores;
    for (name, v) in [("up", up), ("down", down)] {
        if !(0.0..=MAX_EVIDENCE_SCORE).contains(&v) {
            return Err(Error::domain(format!("{name} score {v} outside [0, 10]")));
        }
    }
    if !parsed.change_pct.is_finite() {
        return Err(Error::domain("change_pct must be finite"));
    }
    if parsed.reasoning_text.contains(THINK_CLOSE) {
        return Err(Error::domain("reasoning text may not contain </think>"));
    }
    let mut out = String::new();
    if !parsed.reasoning_text.is_empty() {
        out.push_str(THINK_OPEN);
        out.push_str(&parsed.reasoning_text);
        out.push_str(THINK_CLOSE);
        out.push('\n');
    }
    // f64 Display is the shortest decimal that round-trips, never exponential.
    out.push_str(&format!(
        "<score>\nup: {up}\ndown: {down}\n</score>\n<change_pct>{}</change_pct>\n<answer>{}</answer>\n",
        parsed.change_pct, parsed.answer
    ));
    Ok(out)
}
