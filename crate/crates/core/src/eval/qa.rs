//! QA records in JSONL form and answer-matching metrics.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaRecord {
    pub id: String,
    pub context: String,
    pub question: String,
    pub answers: Vec<String>,
}

/// Parses one JSON object per line. Blank lines are skipped.
pub fn parse_qa_jsonl<R: BufRead>(reader: R) -> Result<Vec<QaRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            parse_qa_line(&line)
                .map_err(|e| Error::InvalidInput(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

pub fn parse_qa_line(line: &str) -> Result<QaRecord> {
    let record: QaRecord =
        serde_json::from_str(line).map_err(|e| Error::InvalidInput(e.to_string()))?;
    if record.answers.is_empty() {
        return Err(Error::InvalidInput(format!(
            "record {:?} has no answers",
            record.id
        )));
    }
    Ok(record)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaMetric {
    Exact,
    Substring,
    TokenF1,
}

impl FromStr for QaMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "substring" => Ok(Self::Substring),
            "token_f1" => Ok(Self::TokenF1),
            _ => Err(Error::ConfigInvalid(format!("unknown metric {s:?}"))),
        }
    }
}

impl fmt::Display for QaMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Exact => "exact",
            Self::Substring => "substring",
            Self::TokenF1 => "token_f1",
        })
    }
}

/// Lowercase, punctuation stripped, whitespace collapsed.
pub fn normalize_answer(text: &str) -> String {
    text.chars()
        .filter(|c| !c.is_ascii_punctuation())
        .flat_map(char::to_lowercase)
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Best score of `predicted` against any acceptable answer, in `[0, 1]`.
pub fn score_qa(predicted: &str, answers: &[String], metric: QaMetric) -> f64 {
    let pred = normalize_answer(predicted);
    answers
        .iter()
        .map(|a| {
            let gold = normalize_answer(a);
            match metric {
                QaMetric::Exact => f64::from(u8::from(pred == gold)),
                QaMetric::Substring => f64::from(u8::from(pred.contains(&gold))),
                QaMetric::TokenF1 => token_f1(&pred, &gold),
            }
        })
        .fold(0.0, f64::max)
}

fn token_f1(pred: &str, gold: &str) -> f64 {
    let p: Vec<&str> = pred.split_whitespace().collect();
    let g: Vec<&str> = gold.split_whitespace().collect();
    if p.is_empty() || g.is_empty() {
        return f64::from(u8::from(p.is_empty() && g.is_empty()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &p {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn answers(a: &[&str]) -> Vec<String> {
        a.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn verbatim_scores_one_everywhere() {
        let a = answers(&["The Eiffel Tower"]);
        for m in [QaMetric::Exact, QaMetric::Substring, QaMetric::TokenF1] {
            assert_eq!(score_qa("The Eiffel Tower", &a, m), 1.0);
        }
    }

    #[test]
    fn half_overlap_f1() {
        // P = R = 2/4
        let a = answers(&["red green blue white"]);
        assert!((score_qa("red green cyan black", &a, QaMetric::TokenF1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn disjoint_is_zero() {
        let a = answers(&["alpha beta"]);
        for m in [QaMetric::Exact, QaMetric::Substring, QaMetric::TokenF1] {
            assert_eq!(score_qa("gamma delta", &a, m), 0.0);
        }
    }

    #[test]
    fn normalization_and_best_answer() {
        let a = answers(&["nope", "Paris."]);
        assert_eq!(score_qa("  paris ", &a, QaMetric::Exact), 1.0);
        assert_eq!(
            score_qa("It is Paris, France", &a, QaMetric::Substring),
            1.0
        );
    }

    #[test]
    fn jsonl_parsing() {
        let text = "{\"id\":\"1\",\"context\":\"c\",\"question\":\"q\",\"answers\":[\"a\"]}\n\n";
        let records = parse_qa_jsonl(text.as_bytes()).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].answers, vec!["a"]);

        let empty = "{\"id\":\"1\",\"context\":\"c\",\"question\":\"q\",\"answers\":[]}";
        let err = parse_qa_jsonl(empty.as_bytes()).unwrap_err().to_string();
        assert!(
            err.contains("line 1") && err.contains("no answers"),
            "{err}"
        );
        assert!(parse_qa_jsonl("{}".as_bytes()).is_err());
    }
}
