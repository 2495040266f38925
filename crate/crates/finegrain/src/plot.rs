//! Minimal grouped-bar-chart rendering with an embedded 5x7 bitmap font;
//! enough to emit the benchmark figure without a plotting dependency.

use crate::error::{Error, Result};
use image::{Rgb, RgbImage};
use std::path::Path;

pub struct Bar {
    pub label: String,
    pub value: f64,
    pub error: f64,
    pub color: [u8; 3],
}

pub struct BarGroup {
    pub label: String,
    pub bars: Vec<Bar>,
}

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;

fn glyph(c: char) -> [u8; GLYPH_H] {
    // 5-bit rows, MSB = leftmost column
    match c.to_ascii_uppercase() {
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11],
        'X' => [0x11, 0x0A, 0x04, 0x04, 0x04, 0x0A, 0x11],
        'Y' => [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1E, 0x01, 0x01, 0x0E, 0x01, 0x01, 0x1E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F],
        '%' => [0x19, 0x19, 0x02, 0x04, 0x08, 0x13, 0x13],
        '/' => [0x01, 0x02, 0x02, 0x04, 0x08, 0x08, 0x10],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        _ => [0x00; GLYPH_H], // space and anything unknown
    }
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: [u8; 3]) {
    let (w, h) = img.dimensions();
    for (ci, ch) in text.chars().enumerate() {
        let rows = glyph(ch);
        for (ry, row) in rows.iter().enumerate() {
            for cx in 0..GLYPH_W {
                if row & (1 << (GLYPH_W - 1 - cx)) != 0 {
                    let px = x + (ci * (GLYPH_W + 1) + cx) as i64;
                    let py = y + ry as i64;
                    if px >= 0 && py >= 0 && (px as u32) < w && (py as u32) < h {
                        img.put_pixel(px as u32, py as u32, Rgb(color));
                    }
                }
            }
        }
    }
}

fn fill_rect(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: [u8; 3]) {
    let (w, h) = img.dimensions();
    for y in y0.max(0)..y1.min(h as i64) {
        for x in x0.max(0)..x1.min(w as i64) {
            img.put_pixel(x as u32, y as u32, Rgb(color));
        }
    }
}

/// Palette used for bar series.
pub fn series_color(i: usize) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 8] = [
        [66, 120, 200],
        [210, 120, 40],
        [70, 160, 90],
        [180, 70, 80],
        [130, 100, 180],
        [120, 120, 120],
        [200, 180, 60],
        [60, 170, 180],
    ];
    PALETTE[i % PALETTE.len()]
}

/// Renders grouped bars with error whiskers to a PNG. Values are expected
/// in [0, y_max].
pub fn grouped_bar_chart(title: &str, groups: &[BarGroup], y_max: f64, path: &Path) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::Config("cannot plot an empty group list".into()));
    }
    let bars_per_group = groups.iter().map(|g| g.bars.len()).max().unwrap_or(1);
    let bar_w = 14i64;
    let gap = 6i64;
    let group_w = bars_per_group as i64 * (bar_w + 2) + gap * 2;
    let margin_left = 56i64;
    let margin_bottom = 64i64;
    let margin_top = 28i64;
    let plot_h = 240i64;
    let width = (margin_left + group_w * groups.len() as i64 + 24) as u32;
    let height = (margin_top + plot_h + margin_bottom) as u32;

    let mut img = RgbImage::from_pixel(width, height, Rgb([250, 250, 250]));
    draw_text(&mut img, margin_left, 8, title, [20, 20, 20]);

    let y_of = |v: f64| margin_top + plot_h - ((v / y_max).clamp(0.0, 1.0) * plot_h as f64) as i64;
    // axes and horizontal gridlines at 0.25 steps
    fill_rect(&mut img, margin_left - 2, margin_top, margin_left, margin_top + plot_h + 1, [30, 30, 30]);
    fill_rect(
        &mut img,
        margin_left - 2,
        margin_top + plot_h,
        width as i64 - 8,
        margin_top + plot_h + 2,
        [30, 30, 30],
    );
    for step in 0..=4 {
        let v = y_max * step as f64 / 4.0;
        let y = y_of(v);
        if step > 0 {
            fill_rect(&mut img, margin_left, y, width as i64 - 8, y + 1, [220, 220, 220]);
        }
        draw_text(&mut img, 8, y - 3, &format!("{v:.2}"), [60, 60, 60]);
    }

    for (gi, group) in groups.iter().enumerate() {
        let gx = margin_left + gi as i64 * group_w + gap;
        for (bi, bar) in group.bars.iter().enumerate() {
            let x0 = gx + bi as i64 * (bar_w + 2);
            let y_top = y_of(bar.value);
            fill_rect(&mut img, x0, y_top, x0 + bar_w, margin_top + plot_h, bar.color);
            // error whisker
            if bar.error > 0.0 {
                let y_hi = y_of(bar.value + bar.error);
                let y_lo = y_of((bar.value - bar.error).max(0.0));
                let cx = x0 + bar_w / 2;
                fill_rect(&mut img, cx, y_hi, cx + 1, y_lo + 1, [20, 20, 20]);
                fill_rect(&mut img, cx - 3, y_hi, cx + 4, y_hi + 1, [20, 20, 20]);
                fill_rect(&mut img, cx - 3, y_lo, cx + 4, y_lo + 1, [20, 20, 20]);
            }
        }
        // group label, clipped to the group width
        let label: String = group.label.chars().take((group_w / 6) as usize).collect();
        draw_text(&mut img, gx, margin_top + plot_h + 8, &label, [20, 20, 20]);
    }

    // legend from the first group's bar labels
    let mut ly = margin_top + plot_h + 22;
    for (bi, bar) in groups[0].bars.iter().enumerate() {
        let lx = margin_left + (bi as i64 % 3) * 160;
        if bi % 3 == 0 && bi > 0 {
            ly += 12;
        }
        fill_rect(&mut img, lx, ly, lx + 8, ly + 8, bar.color);
        draw_text(&mut img, lx + 12, ly, &bar.label, [20, 20, 20]);
    }

    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save(path).map_err(|e| Error::Other(format!("saving {}: {e}", path.display())))
}

/// Renders a benchmark report as the standard grouped-bar figure: one group
/// per backbone, one bar per (head, shots) pair.
pub fn benchmark_chart(report: &crate::transfer::BenchmarkReport, path: &Path) -> Result<()> {
    let mut backbones: Vec<String> = Vec::new();
    for c in &report.cells {
        if !backbones.contains(&c.backbone) {
            backbones.push(c.backbone.clone());
        }
    }
    let mut series: Vec<(String, String)> = Vec::new();
    for c in &report.cells {
        let key = (c.head.clone(), c.shots.clone());
        if !series.contains(&key) {
            series.push(key);
        }
    }
    let groups: Vec<BarGroup> = backbones
        .iter()
        .map(|b| BarGroup {
            label: b.clone(),
            bars: series
                .iter()
                .enumerate()
                .map(|(i, (head, shots))| {
                    let cell = report
                        .cells
                        .iter()
                        .find(|c| &c.backbone == b && &c.head == head && &c.shots == shots);
                    Bar {
                        label: format!("{head} {shots}"),
                        value: cell.map_or(0.0, |c| c.mean),
                        error: cell.map_or(0.0, |c| c.ci95),
                        color: series_color(i),
                    }
                })
                .collect(),
        })
        .collect();
    grouped_bar_chart("transfer accuracy", &groups, 1.0, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_writes_valid_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chart.png");
        let groups = vec![
            BarGroup {
                label: "fine".into(),
                bars: vec![
                    Bar { label: "logistic 1-shot".into(), value: 0.4, error: 0.05, color: series_color(0) },
                    Bar { label: "bilstm 1-shot".into(), value: 0.7, error: 0.1, color: series_color(1) },
                ],
            },
            BarGroup {
                label: "coarse".into(),
                bars: vec![
                    Bar { label: "logistic 1-shot".into(), value: 0.3, error: 0.02, color: series_color(0) },
                    Bar { label: "bilstm 1-shot".into(), value: 0.5, error: 0.0, color: series_color(1) },
                ],
            },
        ];
        grouped_bar_chart("test", &groups, 1.0, &path).unwrap();
        let img = image::open(&path).unwrap();
        assert!(img.width() > 100 && img.height() > 100);
    }
}
