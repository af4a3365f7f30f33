//! Rendering of synthetic table images and random table layouts, used to
//! build fixtures and the demo corpus.
//!
//! Text is drawn with a pseudo-font: every character maps to a fixed 5x7
//! bitmap derived from its code point, so two renders of the same string
//! are pixel-identical and different strings look different.

use image::{GrayImage, Luma};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ImagingError, TableImage};
use crate::table::{LogicalCell, LogicalTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BorderStyle {
    /// Every cell boxed.
    All,
    /// Only horizontal rules above and below each cell.
    HorizontalOnly,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderStyle {
    pub row_height: u32,
    pub glyph_scale: u32,
    pub min_col_width: u32,
    pub padding: u32,
    pub margin: u32,
    pub line_width: u32,
    pub borders: BorderStyle,
    pub ink: u8,
    pub background: u8,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            row_height: 28,
            glyph_scale: 2,
            min_col_width: 48,
            padding: 8,
            margin: 24,
            line_width: 1,
            borders: BorderStyle::All,
            ink: 0,
            background: 255,
        }
    }
}

const GLYPH_W: u32 = 5;
const GLYPH_H: u32 = 7;

fn glyph_bits(c: char) -> u64 {
    // splitmix64 of the code point
    let mut z = (c as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn advance(style: &RenderStyle) -> u32 {
    (GLYPH_W + 1) * style.glyph_scale
}

pub fn text_width(text: &str, style: &RenderStyle) -> u32 {
    text.chars().count() as u32 * advance(style)
}

fn draw_text(img: &mut GrayImage, x0: u32, y0: u32, text: &str, style: &RenderStyle) {
    let s = style.glyph_scale;
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            continue;
        }
        let bits = glyph_bits(c);
        let gx = x0 + i as u32 * advance(style);
        for row in 0..GLYPH_H {
            for col in 0..GLYPH_W {
                if bits >> (row * GLYPH_W + col) & 1 == 0 {
                    continue;
                }
                for dy in 0..s {
                    for dx in 0..s {
                        let (x, y) = (gx + col * s + dx, y0 + row * s + dy);
                        if x < img.width() && y < img.height() {
                            img.put_pixel(x, y, Luma([style.ink]));
                        }
                    }
                }
            }
        }
    }
}

fn fill_rect(img: &mut GrayImage, x0: u32, y0: u32, x1: u32, y1: u32, v: u8) {
    for y in y0..y1.min(img.height()) {
        for x in x0..x1.min(img.width()) {
            img.put_pixel(x, y, Luma([v]));
        }
    }
}

/// Column widths that fit every cell's text.
fn column_widths(table: &LogicalTable, cols: usize, style: &RenderStyle) -> Vec<u32> {
    let need = |c: &LogicalCell| text_width(&c.content, style) + 2 * style.padding;
    let mut widths = vec![style.min_col_width; cols];
    for c in table.cells.iter().filter(|c| c.colspan() == 1) {
        widths[c.start_col] = widths[c.start_col].max(need(c));
    }
    for c in table.cells.iter().filter(|c| c.colspan() > 1) {
        let have: u32 = widths[c.start_col..=c.end_col].iter().sum();
        let want = need(c);
        if want > have {
            let extra = (want - have).div_ceil(c.colspan() as u32);
            widths[c.start_col..=c.end_col].iter_mut().for_each(|w| *w += extra);
        }
    }
    widths
}

/// Draws `table` as a grayscale image.
pub fn render_table(table: &LogicalTable, id: &str, style: &RenderStyle) -> Result<TableImage, ImagingError> {
    let (rows, cols) = table.dimensions();
    let widths = column_widths(table, cols, style);
    let mut xs = vec![style.margin];
    for w in &widths {
        xs.push(xs.last().unwrap() + w);
    }
    let ys: Vec<u32> = (0..=rows as u32).map(|r| style.margin + r * style.row_height).collect();
    let width = xs[cols] + style.margin + style.line_width;
    let height = ys[rows] + style.margin + style.line_width;
    let mut img = GrayImage::from_pixel(width.max(8), height.max(8), Luma([style.background]));
    let lw = style.line_width;

    for cell in &table.cells {
        let (x0, x1) = (xs[cell.start_col], xs[cell.end_col + 1]);
        let (y0, y1) = (ys[cell.start_row], ys[cell.end_row + 1]);
        match style.borders {
            BorderStyle::All => {
                fill_rect(&mut img, x0, y0, x1 + lw, y0 + lw, style.ink);
                fill_rect(&mut img, x0, y1, x1 + lw, y1 + lw, style.ink);
                fill_rect(&mut img, x0, y0, x0 + lw, y1 + lw, style.ink);
                fill_rect(&mut img, x1, y0, x1 + lw, y1 + lw, style.ink);
            }
            BorderStyle::HorizontalOnly => {
                fill_rect(&mut img, x0, y0, x1 + lw, y0 + lw, style.ink);
                fill_rect(&mut img, x0, y1, x1 + lw, y1 + lw, style.ink);
            }
            BorderStyle::None => {}
        }
        let glyph_h = GLYPH_H * style.glyph_scale;
        let ty = y0 + ((y1 - y0).saturating_sub(glyph_h)) / 2;
        draw_text(&mut img, x0 + style.padding, ty, &cell.content, style);
    }
    let mut out = TableImage::from_gray(id, img)?;
    out.dpi_hint = Some(96);
    Ok(out)
}

const WORDS: &[&str] = &[
    "Model", "Score", "Total", "Year", "Method", "Accuracy", "Region", "Count", "Mean", "Std", "Name", "Type", "Value",
    "Rate", "Group", "Base", "Ours", "Train", "Test", "Cost",
];

fn random_content(rng: &mut ChaCha8Rng, row: usize) -> String {
    if row == 0 || rng.gen_bool(0.35) {
        WORDS[rng.gen_range(0..WORDS.len())].to_string()
    } else if rng.gen_bool(0.1) {
        String::new()
    } else {
        format!("{}.{}", rng.gen_range(0..100), rng.gen_range(0..10))
    }
}

/// A random `rows x cols` layout tiled completely by cells. Merges occur
/// with probability `merge_prob` per anchor and span at most 3 columns and 2
/// rows.
pub fn random_table(id: &str, rows: usize, cols: usize, merge_prob: f64, seed: u64) -> LogicalTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = vec![vec![false; cols]; rows];
    let mut cells = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if taken[r][c] {
                continue;
            }
            let (mut rs, mut cs) = (1, 1);
            if rng.gen_bool(merge_prob.clamp(0.0, 1.0)) {
                let free_cols = (c..cols).take_while(|&k| !taken[r][k]).count();
                cs = rng.gen_range(1..=free_cols.min(3));
                if r + 1 < rows && (c..c + cs).all(|k| !taken[r + 1][k]) && rng.gen_bool(0.4) {
                    rs = 2;
                }
            }
            for row in taken.iter_mut().skip(r).take(rs) {
                row[c..c + cs].iter_mut().for_each(|t| *t = true);
            }
            let content = random_content(&mut rng, r);
            cells.push(LogicalCell::new(r, r + rs - 1, c, c + cs - 1, content).expect("valid spans"));
        }
    }
    LogicalTable::new(id, cells)
}

/// Flips a `density` share of pixels to pure black or white.
pub fn salt_and_pepper(img: &TableImage, density: f64, seed: u64) -> Result<TableImage, ImagingError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gray = img.to_gray();
    for v in gray.iter_mut() {
        if rng.gen_bool(density) {
            *v = if rng.gen_bool(0.5) { 0 } else { 255 };
        }
    }
    let mut out = TableImage::from_gray(img.id.clone(), gray)?;
    out.dpi_hint = img.dpi_hint;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::analysis::{detect_ruling_lines, LineConfig};

    #[test]
    fn random_tables_tile_their_grid() {
        for seed in 0..20 {
            let t = random_table("r", 5, 6, 0.3, seed);
            t.validate().unwrap();
            let area: usize = t.cells.iter().map(|c| c.rowspan() * c.colspan()).sum();
            assert_eq!(area, 30);
            assert_eq!(t.dimensions(), (5, 6));
        }
    }

    #[test]
    fn render_is_deterministic_and_has_lines() {
        let t = random_table("r", 3, 3, 0.0, 7);
        let a = render_table(&t, "a", &RenderStyle::default()).unwrap();
        let b = render_table(&t, "a", &RenderStyle::default()).unwrap();
        assert_eq!(a.raw_bytes(), b.raw_bytes());
        let lines = detect_ruling_lines(&a.to_gray(), &LineConfig::default());
        assert!(lines.len() >= 8, "{} lines", lines.len());
    }

    #[test]
    fn glyphs_differ_between_characters() {
        assert_ne!(glyph_bits('a') & 0x7_FFFF_FFFF, glyph_bits('b') & 0x7_FFFF_FFFF);
    }
}
