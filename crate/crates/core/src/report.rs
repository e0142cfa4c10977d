//! Keyed text files, evaluation report export and histogram rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{CorpusReport, EvalPair, LineHistogram};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line_no}: {reason}")]
    Parse {
        path: PathBuf,
        line_no: usize,
        reason: String,
    },
    #[error("duplicate key {key:?} in {path}")]
    DuplicateKey { path: PathBuf, key: String },
    #[error("key mismatch: {} missing from hypotheses, {} not in references", missing_in_hyp.len(), missing_in_ref.len())]
    KeyMismatch {
        missing_in_hyp: Vec<String>,
        missing_in_ref: Vec<String>,
    },
}

/// One line of a reference or hypothesis file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyedText {
    pub key: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyedLines {
    pub key: String,
    pub lines: Vec<String>,
}

/// Read `{key, text}` JSONL, preserving file order and rejecting duplicates.
pub fn read_keyed(path: &Path) -> Result<Vec<KeyedText>, ReportError> {
    let content = fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: KeyedText = serde_json::from_str(line).map_err(|e| ReportError::Parse {
            path: path.to_path_buf(),
            line_no: idx + 1,
            reason: e.to_string(),
        })?;
        if !seen.insert(rec.key.clone()) {
            return Err(ReportError::DuplicateKey {
                path: path.to_path_buf(),
                key: rec.key,
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Pair references with hypotheses by key, in reference order.
pub fn pair_by_key(refs: &[KeyedText], hyps: &[KeyedText]) -> Result<Vec<EvalPair>, ReportError> {
    let hyp_map: BTreeMap<&str, &str> = hyps
        .iter()
        .map(|h| (h.key.as_str(), h.text.as_str()))
        .collect();
    let ref_keys: BTreeSet<&str> = refs.iter().map(|r| r.key.as_str()).collect();
    let missing_in_hyp: Vec<String> = refs
        .iter()
        .filter(|r| !hyp_map.contains_key(r.key.as_str()))
        .map(|r| r.key.clone())
        .collect();
    let missing_in_ref: Vec<String> = hyps
        .iter()
        .filter(|h| !ref_keys.contains(h.key.as_str()))
        .map(|h| h.key.clone())
        .collect();
    if !missing_in_hyp.is_empty() || !missing_in_ref.is_empty() {
        return Err(ReportError::KeyMismatch {
            missing_in_hyp,
            missing_in_ref,
        });
    }
    Ok(refs
        .iter()
        .map(|r| EvalPair::new(r.key.clone(), r.text.clone(), hyp_map[r.key.as_str()]))
        .collect())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Per-pair rows followed by a `__corpus__` row.
pub fn report_csv(report: &CorpusReport) -> String {
    let mut out =
        String::from("key,S,D,I,C,cer,matched,ref_words,hyp_words,precision,recall,f1,hyp_len\n");
    for p in &report.per_pair {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(&p.key),
            p.edits.substitutions,
            p.edits.deletions,
            p.edits.insertions,
            p.edits.correct,
            opt(p.cer),
            p.words.matched,
            p.words.ref_count,
            p.words.hyp_count,
            p.precision,
            p.recall,
            p.f1,
            p.hyp_len
        );
    }
    let c = &report.corpus;
    let _ = writeln!(
        out,
        "__corpus__,{},{},{},{},{},{},{},{},{},{},{},{}",
        c.edits.substitutions,
        c.edits.deletions,
        c.edits.insertions,
        c.edits.correct,
        opt(c.cer),
        c.words.matched,
        c.words.ref_count,
        c.words.hyp_count,
        c.precision,
        c.recall,
        c.f1,
        c.avg_hyp_len
    );
    out
}

pub fn histogram_csv(hist: &LineHistogram) -> String {
    let mut out = String::from("line_count,pages\n");
    for (lines, pages) in &hist.counts {
        let _ = writeln!(out, "{lines},{pages}");
    }
    out
}

/// Parse the output of [`histogram_csv`].
pub fn parse_histogram_csv(text: &str) -> Option<BTreeMap<usize, usize>> {
    let mut lines = text.lines();
    if lines.next()? != "line_count,pages" {
        return None;
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let (a, b) = l.split_once(',')?;
            Some((a.parse().ok()?, b.parse().ok()?))
        })
        .collect()
}

/// Bar chart of pages per line count, one bar per count from the smallest
/// to the largest observed value.
pub fn histogram_svg(hist: &LineHistogram) -> String {
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const PAD: f64 = 40.0;
    let lo = hist.counts.keys().next().copied().unwrap_or(0);
    let hi = hist.counts.keys().last().copied().unwrap_or(0);
    let peak = hist.counts.values().copied().max().unwrap_or(1).max(1) as f64;
    let bins = hi - lo + 1;
    let bar_w = (W - 2.0 * PAD) / bins as f64;
    let plot_h = H - 2.0 * PAD;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    for (i, line_count) in (lo..=hi).enumerate() {
        let pages = hist.counts.get(&line_count).copied().unwrap_or(0);
        let h = plot_h * pages as f64 / peak;
        let x = PAD + i as f64 * bar_w;
        let y = H - PAD - h;
        let fill = if line_count == hist.median {
            "#d62728"
        } else {
            "#1f77b4"
        };
        let _ = writeln!(
            svg,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{h:.2}" fill="{fill}"><title>{line_count} lines: {pages} pages</title></rect>"#,
            (bar_w - 1.0).max(0.5)
        );
    }
    let _ = writeln!(
        svg,
        r#"<line x1="{PAD}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/>"#,
        y = H - PAD,
        x2 = W - PAD
    );
    let _ = writeln!(
        svg,
        r#"<text x="{PAD}" y="{}" font-size="12" font-family="sans-serif">text lines per page ({lo}..{hi}), median {}</text>"#,
        H - PAD / 3.0,
        hist.median
    );
    let _ = writeln!(
        svg,
        r#"<text x="{PAD}" y="{}" font-size="12" font-family="sans-serif">pages (max {peak})</text>"#,
        PAD / 2.0
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{evaluate_corpus, EvalOptions};

    fn kt(k: &str, t: &str) -> KeyedText {
        KeyedText {
            key: k.into(),
            text: t.into(),
        }
    }

    #[test]
    fn pairing_reports_both_sides() {
        let refs = [kt("a", "x"), kt("b", "y")];
        let hyps = [kt("a", "x"), kt("c", "z")];
        match pair_by_key(&refs, &hyps) {
            Err(ReportError::KeyMismatch {
                missing_in_hyp,
                missing_in_ref,
            }) => {
                assert_eq!(missing_in_hyp, ["b"]);
                assert_eq!(missing_in_ref, ["c"]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let pairs = pair_by_key(&refs, &[kt("b", "Y"), kt("a", "X")]).unwrap();
        assert_eq!(pairs[0].key, "a");
        assert_eq!(pairs[0].hypothesis, "X");
    }

    #[test]
    fn histogram_csv_round_trip() {
        let h = LineHistogram::from_counts(&[2, 2, 5]).unwrap();
        let csv = histogram_csv(&h);
        assert_eq!(csv, "line_count,pages\n2,2\n5,1\n");
        assert_eq!(parse_histogram_csv(&csv).unwrap(), h.counts);
    }

    #[test]
    fn svg_has_one_bar_per_bin() {
        let h = LineHistogram::from_counts(&[2, 2, 5]).unwrap();
        let svg = histogram_svg(&h);
        assert_eq!(svg.matches("<title>").count(), 4);
        assert!(svg.contains("median 2"));
    }

    #[test]
    fn csv_quotes_keys() {
        let r =
            evaluate_corpus(&[EvalPair::new("a,b", "x", "x")], &EvalOptions::default()).unwrap();
        let csv = report_csv(&r);
        assert!(csv.lines().nth(1).unwrap().starts_with("\"a,b\","));
        assert!(csv.lines().nth(2).unwrap().starts_with("__corpus__,"));
    }
}
