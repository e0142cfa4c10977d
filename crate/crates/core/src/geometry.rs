//! Axis-aligned box geometry used when deciding which annotated instances
//! belong to a chunk and how they group into text lines.

use serde::{Deserialize, Serialize};

use crate::ingest::TextInstance;

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl Rect {
    /// Build a rect from two corners, normalizing the coordinate order.
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        Rect {
            x_min: x0.min(x1),
            y_min: y0.min(y1),
            x_max: x0.max(x1),
            y_max: y0.max(y1),
        }
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn has_positive_area(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    /// Clamp into `[0, width] x [0, height]`. Returns the clamped rect and
    /// whether any coordinate moved.
    pub fn clamp_to(&self, width: u32, height: u32) -> (Rect, bool) {
        let clamped = Rect {
            x_min: self.x_min.min(width),
            y_min: self.y_min.min(height),
            x_max: self.x_max.min(width),
            y_max: self.y_max.min(height),
        };
        (clamped, clamped != *self)
    }
}

/// Half-open vertical span `[y_start, y_end)` covering the full page width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BandSpan {
    y_start: u32,
    y_end: u32,
}

impl BandSpan {
    /// Returns `None` unless `y_start < y_end`.
    pub fn new(y_start: u32, y_end: u32) -> Option<Self> {
        (y_start < y_end).then_some(BandSpan { y_start, y_end })
    }

    pub fn y_start(&self) -> u32 {
        self.y_start
    }

    pub fn y_end(&self) -> u32 {
        self.y_end
    }

    pub fn height(&self) -> u32 {
        self.y_end - self.y_start
    }
}

fn interval_intersection(a: (u32, u32), b: (u32, u32)) -> u32 {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    hi.saturating_sub(lo)
}

/// Fraction of the box's area that falls inside the band strip.
///
/// The band spans the full page width, so this is the vertical intersection
/// over the box height. A box with zero height yields 0.
pub fn overlap_fraction(rect: &Rect, band: &BandSpan) -> f64 {
    let height = rect.height();
    if height == 0 {
        return 0.0;
    }
    let inter = interval_intersection((rect.y_min, rect.y_max), (band.y_start, band.y_end));
    inter as f64 / height as f64
}

/// Vertical intersection length normalized by the smaller of the two heights.
pub fn v_overlap(a: &Rect, b: &Rect) -> f64 {
    let denom = a.height().min(b.height());
    if denom == 0 {
        return 0.0;
    }
    let inter = interval_intersection((a.y_min, a.y_max), (b.y_min, b.y_max));
    inter as f64 / denom as f64
}

/// Stable sort by the top edge of each box.
pub fn sort_reading_order(instances: &mut [TextInstance]) {
    instances.sort_by_key(|inst| inst.rect.y_min);
}
