//! Character error rate, unordered word-level precision/recall/F1 and
//! dataset line statistics.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::ReceiptPage;
use crate::labeler::{chunk_lines, full_band, LabelerConfig};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    /// CER is undefined; every hypothesis character counts as an insertion.
    #[error("empty reference (hypothesis has {insertions} characters)")]
    EmptyReference { insertions: usize },
    #[error("no pairs or pages to aggregate")]
    EmptyCorpus,
}

/// Edit-alignment decomposition over Unicode scalar values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EditStats {
    #[serde(rename = "S")]
    pub substitutions: usize,
    #[serde(rename = "D")]
    pub deletions: usize,
    #[serde(rename = "I")]
    pub insertions: usize,
    #[serde(rename = "C")]
    pub correct: usize,
}

impl EditStats {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn reference_len(&self) -> usize {
        self.substitutions + self.deletions + self.correct
    }

    pub fn hypothesis_len(&self) -> usize {
        self.substitutions + self.insertions + self.correct
    }

    /// `(S + D + I) / (S + D + C)`, `None` for an empty reference.
    pub fn cer(&self) -> Option<f64> {
        let n = self.reference_len();
        (n > 0).then(|| self.errors() as f64 / n as f64)
    }
}

impl std::ops::Add for EditStats {
    type Output = EditStats;
    fn add(self, o: EditStats) -> EditStats {
        EditStats {
            substitutions: self.substitutions + o.substitutions,
            deletions: self.deletions + o.deletions,
            insertions: self.insertions + o.insertions,
            correct: self.correct + o.correct,
        }
    }
}

/// Minimum-cost unit-weight alignment of `hypothesis` against `reference`.
///
/// Among equal-cost alignments the backtrace prefers match, then
/// substitution, then deletion, then insertion.
pub fn align(reference: &str, hypothesis: &str) -> EditStats {
    let r: Vec<char> = reference.chars().collect();
    let h: Vec<char> = hypothesis.chars().collect();
    let (n, m) = (r.len(), h.len());
    let cols = m + 1;
    let mut d = vec![0u32; (n + 1) * cols];
    for (j, cell) in d.iter_mut().take(cols).enumerate() {
        *cell = j as u32;
    }
    for i in 1..=n {
        d[i * cols] = i as u32;
        for j in 1..=m {
            let diag = d[(i - 1) * cols + j - 1] + u32::from(r[i - 1] != h[j - 1]);
            let up = d[(i - 1) * cols + j] + 1;
            let left = d[i * cols + j - 1] + 1;
            d[i * cols + j] = diag.min(up).min(left);
        }
    }

    let mut stats = EditStats::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * cols + j];
        if i > 0 && j > 0 {
            let diag = d[(i - 1) * cols + j - 1];
            if r[i - 1] == h[j - 1] && here == diag {
                stats.correct += 1;
                i -= 1;
                j -= 1;
                continue;
            }
            if r[i - 1] != h[j - 1] && here == diag + 1 {
                stats.substitutions += 1;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * cols + j] + 1 {
            stats.deletions += 1;
            i -= 1;
        } else {
            stats.insertions += 1;
            j -= 1;
        }
    }
    stats
}

/// Character error rate with its S/D/I/C decomposition.
pub fn cer(reference: &str, hypothesis: &str) -> Result<EditStats, MetricsError> {
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference {
            insertions: hypothesis.chars().count(),
        });
    }
    Ok(align(reference, hypothesis))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrfStats {
    pub matched: usize,
    pub ref_count: usize,
    pub hyp_count: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl PrfStats {
    pub fn precision(&self) -> f64 {
        ratio(self.matched, self.hyp_count)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.matched, self.ref_count)
    }

    pub fn f1(&self) -> f64 {
        harmonic_mean(self.precision(), self.recall())
    }
}

impl std::ops::Add for PrfStats {
    type Output = PrfStats;
    fn add(self, o: PrfStats) -> PrfStats {
        PrfStats {
            matched: self.matched + o.matched,
            ref_count: self.ref_count + o.ref_count,
            hyp_count: self.hyp_count + o.hyp_count,
        }
    }
}

/// Whitespace tokens after turning every separator into a space.
pub fn tokenize(text: &str, separator: char) -> Vec<&str> {
    text.split(|c: char| c == separator || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Word matches as a multiset intersection, ignoring order.
pub fn word_prf(reference: &str, hypothesis: &str, separator: char) -> PrfStats {
    let ref_tokens = tokenize(reference, separator);
    let hyp_tokens = tokenize(hypothesis, separator);
    let mut remaining: HashMap<&str, usize> = HashMap::new();
    for t in &ref_tokens {
        *remaining.entry(t).or_default() += 1;
    }
    let mut matched = 0;
    for t in &hyp_tokens {
        if let Some(n) = remaining.get_mut(t) {
            if *n > 0 {
                *n -= 1;
                matched += 1;
            }
        }
    }
    PrfStats {
        matched,
        ref_count: ref_tokens.len(),
        hyp_count: hyp_tokens.len(),
    }
}

/// Split generated text into lines on the separator, trimming pieces and
/// dropping empty ones.
pub fn split_output_lines(generated: &str, separator: char) -> Vec<String> {
    generated
        .split(separator)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    #[default]
    Micro,
    Macro,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub separator: char,
    /// Replace separators with a space before computing CER.
    pub strip_separator: bool,
    pub averaging: Averaging,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            separator: crate::labeler::DEFAULT_SEPARATOR,
            strip_separator: true,
            averaging: Averaging::Micro,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalPair {
    pub key: String,
    pub reference: String,
    pub hypothesis: String,
}

impl EvalPair {
    pub fn new(
        key: impl Into<String>,
        reference: impl Into<String>,
        hypothesis: impl Into<String>,
    ) -> Self {
        EvalPair {
            key: key.into(),
            reference: reference.into(),
            hypothesis: hypothesis.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub key: String,
    #[serde(flatten)]
    pub edits: EditStats,
    pub cer: Option<f64>,
    pub empty_reference: bool,
    #[serde(flatten)]
    pub words: PrfStats,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub hyp_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub cer: Option<f64>,
    #[serde(flatten)]
    pub edits: EditStats,
    #[serde(flatten)]
    pub words: PrfStats,
    pub avg_hyp_len: f64,
    pub pairs: usize,
    pub empty_references: usize,
    pub averaging: Averaging,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub corpus: CorpusScore,
    pub per_pair: Vec<PairScore>,
}

fn normalize_for_cer(text: &str, opts: &EvalOptions) -> String {
    if opts.strip_separator {
        text.replace(opts.separator, " ")
    } else {
        text.to_string()
    }
}

pub fn score_pair(pair: &EvalPair, opts: &EvalOptions) -> PairScore {
    let reference = normalize_for_cer(&pair.reference, opts);
    let hypothesis = normalize_for_cer(&pair.hypothesis, opts);
    let edits = align(&reference, &hypothesis);
    let words = word_prf(&pair.reference, &pair.hypothesis, opts.separator);
    PairScore {
        key: pair.key.clone(),
        edits,
        cer: edits.cer(),
        empty_reference: reference.is_empty(),
        words,
        precision: words.precision(),
        recall: words.recall(),
        f1: words.f1(),
        hyp_len: edits.hypothesis_len(),
    }
}

/// Score every pair and aggregate.
///
/// Micro averaging sums counts over pairs. Macro averaging takes the mean of
/// per-pair ratios; pairs with an empty reference are left out of the CER
/// mean.
pub fn evaluate_corpus(
    pairs: &[EvalPair],
    opts: &EvalOptions,
) -> Result<CorpusReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let per_pair: Vec<PairScore> = pairs.iter().map(|p| score_pair(p, opts)).collect();
    let edits = per_pair
        .iter()
        .fold(EditStats::default(), |acc, p| acc + p.edits);
    let words = per_pair
        .iter()
        .fold(PrfStats::default(), |acc, p| acc + p.words);
    let count = per_pair.len() as f64;
    let (precision, recall, f1, cer) = match opts.averaging {
        Averaging::Micro => (words.precision(), words.recall(), words.f1(), edits.cer()),
        Averaging::Macro => {
            let mean = |f: fn(&PairScore) -> f64| per_pair.iter().map(f).sum::<f64>() / count;
            let cers: Vec<f64> = per_pair.iter().filter_map(|p| p.cer).collect();
            let cer = (!cers.is_empty()).then(|| cers.iter().sum::<f64>() / cers.len() as f64);
            (
                mean(|p| p.precision),
                mean(|p| p.recall),
                mean(|p| p.f1),
                cer,
            )
        }
    };
    Ok(CorpusReport {
        corpus: CorpusScore {
            precision,
            recall,
            f1,
            cer,
            edits,
            words,
            avg_hyp_len: edits.hypothesis_len() as f64 / count,
            pairs: per_pair.len(),
            empty_references: per_pair.iter().filter(|p| p.empty_reference).count(),
            averaging: opts.averaging,
        },
        per_pair,
    })
}

/// Pages per text-line count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineHistogram {
    pub counts: BTreeMap<usize, usize>,
    pub median: usize,
}

impl LineHistogram {
    /// Lower median for even sizes.
    pub fn from_counts(line_counts: &[usize]) -> Result<Self, MetricsError> {
        if line_counts.is_empty() {
            return Err(MetricsError::EmptyCorpus);
        }
        let mut sorted = line_counts.to_vec();
        sorted.sort_unstable();
        let median = sorted[(sorted.len() - 1) / 2];
        let mut counts = BTreeMap::new();
        for c in sorted {
            *counts.entry(c).or_default() += 1;
        }
        Ok(LineHistogram { counts, median })
    }

    pub fn total_pages(&self) -> usize {
        self.counts.values().sum()
    }
}

pub fn page_line_count(page: &ReceiptPage, config: &LabelerConfig) -> usize {
    chunk_lines(page, &full_band(page), config).len()
}

/// Distribution of merged text-line counts over whole pages.
pub fn line_count_distribution(
    pages: &[ReceiptPage],
    config: &LabelerConfig,
) -> Result<LineHistogram, MetricsError> {
    let counts: Vec<usize> = pages.iter().map(|p| page_line_count(p, config)).collect();
    LineHistogram::from_counts(&counts)
}
