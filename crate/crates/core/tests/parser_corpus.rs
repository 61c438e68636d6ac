use std::collections::BTreeSet;
use std::path::Path;

use serde::Deserialize;
use smp_core::io::read_jsonl;
use smp_core::parsing::{parse, render};

#[derive(Deserialize)]
struct Expect {
    parse_ok: bool,
    missing_fields: Vec<String>,
    rules: Vec<String>,
}

#[derive(Deserialize)]
struct Case {
    id: String,
    text: String,
    expect: Expect,
}

fn corpus() -> Vec<Case> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/parser_corpus.jsonl");
    read_jsonl(&path).unwrap()
}

#[test]
fn corpus_has_both_kinds() {
    let cases = corpus();
    let valid = cases.iter().filter(|c| c.expect.parse_ok).count();
    assert!(valid >= 20);
    assert!(cases.len() - valid >= 20);
}

#[test]
fn corpus_matches_expectations() {
    for case in corpus() {
        let (parsed, report) = parse(&case.text);
        assert_eq!(report.parse_ok, case.expect.parse_ok, "{}: {report:?}", case.id);
        assert_eq!(parsed.is_some(), case.expect.parse_ok, "{}", case.id);
        assert_eq!(report.missing_fields, case.expect.missing_fields, "{}", case.id);
        let got: BTreeSet<&str> = report.violations.iter().map(|v| v.rule.id()).collect();
        let want: BTreeSet<&str> = case.expect.rules.iter().map(String::as_str).collect();
        assert_eq!(got, want, "{}: {report:?}", case.id);
    }
}

#[test]
fn valid_cases_survive_render() {
    for case in corpus().into_iter().filter(|c| c.expect.parse_ok) {
        let parsed = parse(&case.text).0.unwrap();
        if parsed.reasoning_text.contains("</think>") {
            continue;
        }
        let again = parse(&render(&parsed).unwrap()).0.unwrap();
        // An empty think block renders as no think block; everything else is kept.
        assert_eq!(again, parsed, "{}", case.id);
    }
}
