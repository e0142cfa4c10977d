//! Chunk-level label construction.
//!
//! Given a page and a horizontal band, keep the instances whose box lies
//! mostly inside the band, group them into text lines by vertical overlap,
//! order each line left to right, and join lines with a separator character
//! that never occurs in the transcripts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{overlap_fraction, sort_reading_order, v_overlap, BandSpan};
use crate::ingest::{ReceiptPage, TextInstance};

pub const DEFAULT_THETA: f64 = 0.3;
pub const DEFAULT_DELTA: f64 = 0.5;
pub const DEFAULT_SEPARATOR: char = '\u{e6}';
pub const DEFAULT_JOINER: &str = " ";

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("theta must lie in [0, 1), got {0}")]
    InvalidTheta(f64),
    #[error("delta must lie in (0, 1], got {0}")]
    InvalidDelta(f64),
    #[error("joiner {joiner:?} contains the separator {separator:?}")]
    JoinerContainsSeparator { joiner: String, separator: char },
    #[error("separator {separator:?} occurs in transcript {text:?} of page {page_id}")]
    SeparatorCollision {
        page_id: String,
        text: String,
        separator: char,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelerConfig {
    pub theta: f64,
    pub delta: f64,
    pub separator: char,
    pub joiner: String,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        LabelerConfig {
            theta: DEFAULT_THETA,
            delta: DEFAULT_DELTA,
            separator: DEFAULT_SEPARATOR,
            joiner: DEFAULT_JOINER.to_string(),
        }
    }
}

impl LabelerConfig {
    pub fn validate(&self) -> Result<(), LabelError> {
        if !(0.0..1.0).contains(&self.theta) {
            return Err(LabelError::InvalidTheta(self.theta));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(LabelError::InvalidDelta(self.delta));
        }
        if self.joiner.contains(self.separator) {
            return Err(LabelError::JoinerContainsSeparator {
                joiner: self.joiner.clone(),
                separator: self.separator,
            });
        }
        Ok(())
    }

    /// Fail if the separator occurs in any transcript of `pages`.
    pub fn check_separator<'a, I>(&self, pages: I) -> Result<(), LabelError>
    where
        I: IntoIterator<Item = &'a ReceiptPage>,
    {
        for page in pages {
            if let Some(inst) = page
                .instances
                .iter()
                .find(|i| i.text.contains(self.separator))
            {
                return Err(LabelError::SeparatorCollision {
                    page_id: page.page_id.clone(),
                    text: inst.text.clone(),
                    separator: self.separator,
                });
            }
        }
        Ok(())
    }
}

/// Ordered text lines of a chunk and their separator-joined form.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkLabel {
    pub lines: Vec<String>,
    pub joined: String,
}

impl ChunkLabel {
    pub fn from_lines(lines: Vec<String>, separator: char) -> Self {
        let mut buf = [0u8; 4];
        let joined = lines.join(separator.encode_utf8(&mut buf));
        ChunkLabel { lines, joined }
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

/// Keep instances whose overlap fraction with the band is strictly greater
/// than `theta`. Input order is preserved.
pub fn filter_boxes(instances: &[TextInstance], band: &BandSpan, theta: f64) -> Vec<TextInstance> {
    instances
        .iter()
        .filter(|inst| overlap_fraction(&inst.rect, band) > theta)
        .cloned()
        .collect()
}

/// Group reading-ordered instances into text lines.
///
/// Each unassigned instance seeds a line; every later unassigned instance
/// whose vertical overlap with the seed is at least `delta` joins it. Members
/// are then ordered by `x_min`, ties keeping input order.
pub fn merge_lines(instances: &[TextInstance], delta: f64) -> Vec<Vec<TextInstance>> {
    let mut assigned = vec![false; instances.len()];
    let mut lines = Vec::new();
    for (i, seed) in instances.iter().enumerate() {
        if assigned[i] {
            continue;
        }
        assigned[i] = true;
        let mut line = vec![seed.clone()];
        for (j, other) in instances.iter().enumerate().skip(i + 1) {
            if !assigned[j] && v_overlap(&seed.rect, &other.rect) >= delta {
                assigned[j] = true;
                line.push(other.clone());
            }
        }
        line.sort_by_key(|inst| inst.rect.x_min);
        lines.push(line);
    }
    lines
}

/// Filtered, reading-ordered instances for a band.
pub fn retained_instances(
    page: &ReceiptPage,
    band: &BandSpan,
    config: &LabelerConfig,
) -> Vec<TextInstance> {
    let mut kept = filter_boxes(&page.instances, band, config.theta);
    sort_reading_order(&mut kept);
    kept
}

pub fn chunk_lines(
    page: &ReceiptPage,
    band: &BandSpan,
    config: &LabelerConfig,
) -> Vec<Vec<TextInstance>> {
    merge_lines(&retained_instances(page, band, config), config.delta)
}

pub fn build_chunk_label(
    page: &ReceiptPage,
    band: &BandSpan,
    config: &LabelerConfig,
) -> ChunkLabel {
    let lines: Vec<String> = chunk_lines(page, band, config)
        .into_iter()
        .map(|line| {
            line.iter()
                .map(|inst| inst.text.as_str())
                .collect::<Vec<_>>()
                .join(&config.joiner)
        })
        .collect();
    debug_assert!(lines.iter().all(|l| !l.contains(config.separator)));
    ChunkLabel::from_lines(lines, config.separator)
}

pub fn full_band(page: &ReceiptPage) -> BandSpan {
    BandSpan::new(0, page.height).expect("page height is positive")
}

/// Label of the whole page, i.e. the single chunk when the page is not split.
pub fn document_label(page: &ReceiptPage, config: &LabelerConfig) -> ChunkLabel {
    build_chunk_label(page, &full_band(page), config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rect;
    use std::path::PathBuf;

    fn inst(x0: u32, y0: u32, x1: u32, y1: u32, text: &str) -> TextInstance {
        TextInstance {
            rect: Rect::new(x0, y0, x1, y1),
            text: text.to_string(),
        }
    }

    fn page(instances: Vec<TextInstance>) -> ReceiptPage {
        ReceiptPage {
            page_id: "p".into(),
            width: 100,
            height: 40,
            image_path: PathBuf::from("p.png"),
            instances,
        }
    }

    fn band(a: u32, b: u32) -> BandSpan {
        BandSpan::new(a, b).unwrap()
    }

    fn texts(v: &[TextInstance]) -> Vec<&str> {
        v.iter().map(|i| i.text.as_str()).collect()
    }

    #[test]
    fn filter_uses_strict_inequality() {
        // box height 100; band covers 20 or 31 rows of it
        let b = inst(0, 0, 10, 100, "b");
        assert!(filter_boxes(std::slice::from_ref(&b), &band(80, 200), 0.3).is_empty());
        assert_eq!(
            filter_boxes(std::slice::from_ref(&b), &band(69, 200), 0.3).len(),
            1
        );
        // exactly at the threshold is removed
        assert!(filter_boxes(std::slice::from_ref(&b), &band(70, 200), 0.3).is_empty());
        assert!(filter_boxes(&[b], &band(100, 200), 0.0).is_empty());
    }

    #[test]
    fn merge_single_line_sorted_by_x() {
        let lines = merge_lines(&[inst(50, 0, 60, 10, "B"), inst(10, 0, 20, 10, "A")], 0.5);
        assert_eq!(lines.len(), 1);
        assert_eq!(texts(&lines[0]), ["A", "B"]);
    }

    #[test]
    fn merge_below_threshold_splits() {
        // 4 of 10 rows shared
        let lines = merge_lines(&[inst(0, 0, 10, 10, "A"), inst(20, 6, 30, 16, "B")], 0.5);
        assert_eq!(lines.len(), 2);
    }

    #[test]
    fn merge_is_seed_anchored() {
        let a = inst(0, 0, 10, 10, "A");
        let b = inst(20, 2, 30, 12, "B");
        let c = inst(40, 9, 50, 19, "C");
        assert_eq!(v_overlap(&a.rect, &b.rect), 0.8);
        assert_eq!(v_overlap(&a.rect, &c.rect), 0.1);
        assert!((v_overlap(&b.rect, &c.rect) - 0.3).abs() < 1e-12);
        let lines = merge_lines(&[a, b, c], 0.5);
        assert_eq!(lines.len(), 2);
        assert_eq!(texts(&lines[0]), ["A", "B"]);
        assert_eq!(texts(&lines[1]), ["C"]);
    }

    #[test]
    fn merged_members_do_not_seed_again() {
        // B joins A's line and must not reappear as a seed collecting C
        let a = inst(0, 0, 10, 10, "A");
        let b = inst(20, 1, 30, 11, "B");
        let c = inst(40, 2, 50, 12, "C");
        let lines = merge_lines(&[a, b, c], 0.5);
        assert_eq!(lines.len(), 1);
        assert_eq!(texts(&lines[0]), ["A", "B", "C"]);
    }

    fn two_line_page() -> ReceiptPage {
        page(vec![
            inst(60, 0, 100, 10, "WORLD"),
            inst(0, 20, 30, 30, "FOO"),
            inst(0, 0, 50, 10, "HELLO"),
        ])
    }

    #[test]
    fn full_band_label() {
        let cfg = LabelerConfig::default();
        let label = build_chunk_label(&two_line_page(), &band(0, 40), &cfg);
        assert_eq!(label.joined, "HELLO WORLD\u{e6}FOO");
        assert_eq!(label.lines, ["HELLO WORLD", "FOO"]);
        assert_eq!(document_label(&two_line_page(), &cfg), label);
    }

    #[test]
    fn partial_band_label() {
        let cfg = LabelerConfig::default();
        let label = build_chunk_label(&two_line_page(), &band(0, 12), &cfg);
        assert_eq!(label.joined, "HELLO WORLD");
    }

    #[test]
    fn empty_band_label() {
        let cfg = LabelerConfig::default();
        let label = build_chunk_label(&two_line_page(), &band(11, 19), &cfg);
        assert!(label.is_empty());
        assert_eq!(label.joined, "");
    }

    #[test]
    fn document_label_single_instance() {
        let cfg = LabelerConfig::default();
        let p = page(vec![inst(1, 1, 9, 9, "TOTAL 5.00")]);
        assert_eq!(document_label(&p, &cfg).joined, "TOTAL 5.00");
        let seps = document_label(&two_line_page(), &cfg)
            .joined
            .matches(cfg.separator)
            .count();
        assert_eq!(seps, 1);
    }

    #[test]
    fn config_validation() {
        assert!(LabelerConfig::default().validate().is_ok());
        let bad = |f: fn(&mut LabelerConfig)| {
            let mut c = LabelerConfig::default();
            f(&mut c);
            c.validate()
        };
        assert!(matches!(
            bad(|c| c.theta = 1.0),
            Err(LabelError::InvalidTheta(_))
        ));
        assert!(matches!(
            bad(|c| c.delta = 0.0),
            Err(LabelError::InvalidDelta(_))
        ));
        assert!(matches!(
            bad(|c| c.separator = ' '),
            Err(LabelError::JoinerContainsSeparator { .. })
        ));
    }

    #[test]
    fn separator_collision_detected() {
        let cfg = LabelerConfig::default();
        let p = page(vec![inst(0, 0, 5, 5, "caf\u{e6}")]);
        assert!(matches!(
            cfg.check_separator([&p]),
            Err(LabelError::SeparatorCollision { .. })
        ));
        assert!(cfg.check_separator([&two_line_page()]).is_ok());
    }
}
