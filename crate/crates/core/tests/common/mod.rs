#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::Rng;

/// (x_min, y_min, x_max, y_max, transcript)
pub type RawBox = (u32, u32, u32, u32, String);

pub fn write_png(path: &Path, width: u32, height: u32) {
    let img = image::RgbImage::from_fn(width, height, |x, y| {
        image::Rgb([
            (x % 251) as u8,
            (y % 253) as u8,
            ((x * 7 + y * 13) % 255) as u8,
        ])
    });
    img.save(path).unwrap();
}

pub fn annotation_text(boxes: &[RawBox]) -> String {
    boxes
        .iter()
        .map(|(x0, y0, x1, y1, t)| format!("{x0},{y0},{x1},{y0},{x1},{y1},{x0},{y1},{t}\n"))
        .collect()
}

pub fn write_page(dir: &Path, id: &str, width: u32, height: u32, boxes: &[RawBox]) {
    fs::create_dir_all(dir).unwrap();
    write_png(&dir.join(format!("{id}.png")), width, height);
    fs::write(dir.join(format!("{id}.txt")), annotation_text(boxes)).unwrap();
}

/// Receipt-like layout: `lines` text lines of 1-4 words each, with a little
/// vertical jitter between words of one line.
pub fn receipt_layout<R: Rng>(
    rng: &mut R,
    lines: usize,
    width: u32,
    line_pitch: u32,
) -> Vec<RawBox> {
    let mut out = Vec::new();
    let mut word = 0;
    for l in 0..lines as u32 {
        let top = 8 + l * line_pitch;
        let words = rng.gen_range(1..=4);
        let mut x = rng.gen_range(2..20);
        for _ in 0..words {
            let w = rng.gen_range(15..60);
            if x + w >= width {
                break;
            }
            let jitter = rng.gen_range(0..3);
            let h = line_pitch * 2 / 3;
            let text = format!("W{word}:{}", rng.gen_range(0..1000));
            out.push((x, top + jitter, x + w, top + jitter + h, text));
            word += 1;
            x += w + rng.gen_range(4..30);
        }
    }
    out
}

/// Page height that fits `lines` lines of `receipt_layout`.
pub fn layout_height(lines: usize, line_pitch: u32) -> u32 {
    16 + lines as u32 * line_pitch
}

pub fn tempdir() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_chunkforge"))
}

pub fn run_cli(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env_remove("CHUNKFORGE_SEED")
        .output()
        .expect("spawn chunkforge")
}

pub fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

/// Three small receipt pages `A`, `B`, `C`, written out of stem order.
pub fn three_page_fixture(dir: &Path) {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(11);
    for (id, lines) in [("C", 9), ("A", 12), ("B", 6)] {
        let boxes = receipt_layout(&mut rng, lines, 240, 24);
        write_page(dir, id, 240, layout_height(lines, 24), &boxes);
    }
}

/// Brute-force chunk label: filter by box fraction inside the band, order by
/// top edge, group against each line's first box, order each line by left
/// edge, then join.
pub fn oracle_label(
    boxes: &[RawBox],
    band: (u32, u32),
    theta: f64,
    delta: f64,
    separator: char,
    joiner: &str,
) -> String {
    let kept = oracle_retained(boxes, band, theta);

    // selection sort on top edge; earliest index wins ties
    let mut order: Vec<usize> = Vec::new();
    let mut left: Vec<usize> = (0..kept.len()).collect();
    while !left.is_empty() {
        let mut best = 0;
        for k in 1..left.len() {
            if kept[left[k]].1 < kept[left[best]].1 {
                best = k;
            }
        }
        order.push(left.remove(best));
    }

    let mut used = vec![false; kept.len()];
    let mut lines: Vec<String> = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let mut group = vec![i];
        for &j in &order[pos + 1..] {
            if used[j] {
                continue;
            }
            let (a, b) = (&kept[i], &kept[j]);
            let lo = a.1.max(b.1);
            let hi = a.3.min(b.3);
            let inter = hi.saturating_sub(lo);
            let min_h = (a.3 - a.1).min(b.3 - b.1);
            if min_h > 0 && inter as f64 / min_h as f64 >= delta {
                used[j] = true;
                group.push(j);
            }
        }
        // insertion sort on left edge keeps equal keys in place
        for k in 1..group.len() {
            let mut m = k;
            while m > 0 && kept[group[m - 1]].0 > kept[group[m]].0 {
                group.swap(m - 1, m);
                m -= 1;
            }
        }
        let words: Vec<&str> = group.iter().map(|&g| kept[g].4.as_str()).collect();
        lines.push(words.join(joiner));
    }
    lines.join(&separator.to_string())
}

/// Boxes whose vertical fraction inside `band` exceeds `theta`, input order.
pub fn oracle_retained(boxes: &[RawBox], band: (u32, u32), theta: f64) -> Vec<RawBox> {
    boxes
        .iter()
        .filter(|(_, y0, _, y1, _)| {
            let h = y1 - y0;
            let lo = (*y0).max(band.0);
            let hi = (*y1).min(band.1);
            let inter = hi.saturating_sub(lo);
            h > 0 && inter as f64 / h as f64 > theta
        })
        .cloned()
        .collect()
}

/// Textbook Levenshtein distance over chars.
pub fn oracle_edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut table = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in table.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in table[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            table[i][j] = (table[i - 1][j] + 1)
                .min(table[i][j - 1] + 1)
                .min(table[i - 1][j - 1] + cost);
        }
    }
    table[a.len()][b.len()]
}
