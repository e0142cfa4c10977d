//! Loading of SROIE-style receipt annotations.
//!
//! Each annotation file holds one text instance per line: eight comma
//! separated quadrilateral coordinates followed by the transcript, which may
//! itself contain commas. Quads are reduced to their axis-aligned bounding
//! rect and clamped to the image bounds.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Rect;

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];
const ANNOTATION_EXTENSION: &str = "txt";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed annotation line {line_no}: {reason}")]
    MalformedLine { line_no: usize, reason: String },
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("unreadable image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },
    #[error("no valid text instances in {0}")]
    EmptyAnnotation(PathBuf),
    #[error("no image/annotation pairs found under {0}")]
    EmptyDataset(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One annotated word or line fragment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextInstance {
    #[serde(rename = "box")]
    pub rect: Rect,
    pub text: String,
}

/// One annotated receipt image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceiptPage {
    pub page_id: String,
    pub width: u32,
    pub height: u32,
    pub image_path: PathBuf,
    pub instances: Vec<TextInstance>,
}

/// What to do with lines that fail to parse.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ParsePolicy {
    #[default]
    SkipWithWarning,
    Strict,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum WarningKind {
    SkippedLine,
    Clamped,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IngestWarning {
    pub page_id: String,
    pub line_no: usize,
    pub kind: WarningKind,
    pub detail: String,
}

impl fmt::Display for IngestWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} line {}: {:?}: {}",
            self.page_id, self.line_no, self.kind, self.detail
        )
    }
}

#[derive(Clone, Debug)]
pub struct LoadedPage {
    pub page: ReceiptPage,
    pub warnings: Vec<IngestWarning>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub pages: Vec<ReceiptPage>,
    pub warnings: Vec<IngestWarning>,
}

/// Quad bounding box before clamping; coordinates may be negative or exceed
/// the image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct RawBox {
    x_min: i64,
    y_min: i64,
    x_max: i64,
    y_max: i64,
}

impl RawBox {
    fn clamp(&self, width: u32, height: u32) -> (Rect, bool) {
        let cx = |v: i64| v.clamp(0, width as i64) as u32;
        let cy = |v: i64| v.clamp(0, height as i64) as u32;
        let rect = Rect::new(
            cx(self.x_min),
            cy(self.y_min),
            cx(self.x_max),
            cy(self.y_max),
        );
        let moved = rect.x_min as i64 != self.x_min
            || rect.y_min as i64 != self.y_min
            || rect.x_max as i64 != self.x_max
            || rect.y_max as i64 != self.y_max;
        (rect, moved)
    }
}

fn parse_raw_line(line: &str) -> Result<(RawBox, String), String> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() < 9 {
        return Err(format!(
            "expected at least 9 fields, found {}",
            fields.len()
        ));
    }
    let mut coords = [0i64; 8];
    for (slot, field) in coords.iter_mut().zip(&fields[..8]) {
        *slot = field
            .trim()
            .parse()
            .map_err(|_| format!("non-numeric coordinate {field:?}"))?;
    }
    let xs = [coords[0], coords[2], coords[4], coords[6]];
    let ys = [coords[1], coords[3], coords[5], coords[7]];
    let raw = RawBox {
        x_min: *xs.iter().min().unwrap(),
        y_min: *ys.iter().min().unwrap(),
        x_max: *xs.iter().max().unwrap(),
        y_max: *ys.iter().max().unwrap(),
    };
    let text = fields[8..].join(",").trim().to_string();
    if text.is_empty() {
        return Err("empty transcript".to_string());
    }
    Ok((raw, text))
}

/// Parse one annotation line. Negative coordinates are clamped to zero; the
/// upper image bound is applied by [`load_page`].
pub fn parse_annotation_line(line: &str) -> Result<TextInstance, IngestError> {
    let malformed = |reason: String| IngestError::MalformedLine { line_no: 1, reason };
    let (raw, text) = parse_raw_line(line).map_err(malformed)?;
    let (rect, _) = raw.clamp(u32::MAX, u32::MAX);
    if !rect.has_positive_area() {
        return Err(malformed("box has zero area".to_string()));
    }
    Ok(TextInstance { rect, text })
}

fn read_text_lossy(path: &Path) -> Result<String, IngestError> {
    let bytes = fs::read(path).map_err(|source| io_or_missing(path, source))?;
    let text = String::from_utf8_lossy(&bytes).into_owned();
    Ok(text
        .strip_prefix('\u{feff}')
        .map(str::to_string)
        .unwrap_or(text))
}

fn io_or_missing(path: &Path, source: std::io::Error) -> IngestError {
    if source.kind() == std::io::ErrorKind::NotFound {
        IngestError::MissingFile(path.to_path_buf())
    } else {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Parse annotation text against known image dimensions.
pub fn parse_annotation(
    page_id: &str,
    content: &str,
    width: u32,
    height: u32,
    policy: ParsePolicy,
) -> Result<(Vec<TextInstance>, Vec<IngestWarning>), IngestError> {
    let mut instances = Vec::new();
    let mut warnings = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = parse_raw_line(line).and_then(|(raw, text)| {
            let (rect, moved) = raw.clamp(width, height);
            if rect.has_positive_area() {
                Ok((rect, moved, text))
            } else {
                Err("box has zero area inside the image".to_string())
            }
        });
        match parsed {
            Ok((rect, moved, text)) => {
                if moved {
                    warnings.push(IngestWarning {
                        page_id: page_id.to_string(),
                        line_no,
                        kind: WarningKind::Clamped,
                        detail: format!("box clamped to {width}x{height}"),
                    });
                }
                instances.push(TextInstance { rect, text });
            }
            Err(reason) => match policy {
                ParsePolicy::Strict => return Err(IngestError::MalformedLine { line_no, reason }),
                ParsePolicy::SkipWithWarning => warnings.push(IngestWarning {
                    page_id: page_id.to_string(),
                    line_no,
                    kind: WarningKind::SkippedLine,
                    detail: reason,
                }),
            },
        }
    }
    Ok((instances, warnings))
}

pub fn image_dimensions(path: &Path) -> Result<(u32, u32), IngestError> {
    if !path.exists() {
        return Err(IngestError::MissingFile(path.to_path_buf()));
    }
    let (w, h) = image::image_dimensions(path).map_err(|e| IngestError::UnreadableImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if w == 0 || h == 0 {
        return Err(IngestError::UnreadableImage {
            path: path.to_path_buf(),
            reason: "zero-sized image".to_string(),
        });
    }
    Ok((w, h))
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Load one page; the page id is the image file stem.
pub fn load_page(
    image_path: &Path,
    annotation_path: &Path,
    policy: ParsePolicy,
) -> Result<LoadedPage, IngestError> {
    if !annotation_path.exists() {
        return Err(IngestError::MissingFile(annotation_path.to_path_buf()));
    }
    let (width, height) = image_dimensions(image_path)?;
    let page_id = stem_of(image_path);
    let content = read_text_lossy(annotation_path)?;
    let (instances, warnings) = parse_annotation(&page_id, &content, width, height, policy)?;
    if instances.is_empty() {
        return Err(IngestError::EmptyAnnotation(annotation_path.to_path_buf()));
    }
    Ok(LoadedPage {
        page: ReceiptPage {
            page_id,
            width,
            height,
            image_path: image_path.to_path_buf(),
            instances,
        },
        warnings,
    })
}

fn has_ext(path: &Path, exts: &[&str]) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| exts.iter().any(|x| x.eq_ignore_ascii_case(e)))
        .unwrap_or(false)
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
    let entries = fs::read_dir(dir).map_err(|source| io_or_missing(dir, source))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| io_or_missing(dir, source))?;
        let path = entry.path();
        if path.is_file() {
            out.push(path);
        }
    }
    Ok(out)
}

/// Directory holding the pairs for `split`: `root/split` when it exists,
/// otherwise `root` itself.
pub fn split_dir(root: &Path, split: Option<&str>) -> PathBuf {
    match split {
        Some(s) if root.join(s).is_dir() => root.join(s),
        _ => root.to_path_buf(),
    }
}

/// Find image/annotation pairs by file stem, sorted lexicographically.
///
/// Files are looked up in the directory itself and in the conventional
/// `img`/`images` and `box`/`annotations` subdirectories. Images without an
/// annotation (and vice versa) are ignored.
pub fn find_pairs(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>, IngestError> {
    if !dir.is_dir() {
        return Err(IngestError::MissingFile(dir.to_path_buf()));
    }
    let mut files = list_dir(dir)?;
    for sub in ["img", "images", "box", "annotations"] {
        let p = dir.join(sub);
        if p.is_dir() {
            files.extend(list_dir(&p)?);
        }
    }
    files.sort();

    let mut images: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut annotations: BTreeMap<String, PathBuf> = BTreeMap::new();
    for path in files {
        let slot = if has_ext(&path, IMAGE_EXTENSIONS) {
            &mut images
        } else if has_ext(&path, &[ANNOTATION_EXTENSION]) {
            &mut annotations
        } else {
            continue;
        };
        slot.entry(stem_of(&path)).or_insert(path);
    }
    Ok(images
        .into_iter()
        .filter_map(|(stem, img)| annotations.remove(&stem).map(|ann| (img, ann)))
        .collect())
}

/// Load every page of a split. Page order is the lexicographic stem order,
/// independent of directory enumeration order.
///
/// Under the skip policy pages with zero valid instances are dropped with a
/// warning; under the strict policy any page error aborts the load.
pub fn load_dataset(
    root: &Path,
    split: Option<&str>,
    policy: ParsePolicy,
) -> Result<Dataset, IngestError> {
    let dir = split_dir(root, split);
    let pairs = find_pairs(&dir)?;
    let results: Vec<Result<LoadedPage, IngestError>> = pairs
        .par_iter()
        .map(|(img, ann)| load_page(img, ann, policy))
        .collect();

    let mut pages = Vec::with_capacity(results.len());
    let mut warnings = Vec::new();
    for ((img, _), result) in pairs.iter().zip(results) {
        match result {
            Ok(loaded) => {
                warnings.extend(loaded.warnings);
                pages.push(loaded.page);
            }
            Err(IngestError::EmptyAnnotation(path)) if policy == ParsePolicy::SkipWithWarning => {
                warnings.push(IngestWarning {
                    page_id: stem_of(img),
                    line_no: 0,
                    kind: WarningKind::SkippedLine,
                    detail: format!("page dropped: no valid instances in {}", path.display()),
                });
            }
            Err(e) => return Err(e),
        }
    }
    if pages.is_empty() {
        return Err(IngestError::EmptyDataset(dir));
    }
    Ok(Dataset {
        root: dir,
        pages,
        warnings,
    })
}
