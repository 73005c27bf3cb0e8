//! Per-cell heatmap overlays with a JSON sidecar, and imbalance-curve data.
//!
//! The overlay keeps the canonical image as a grayscale base, draws the cell
//! grid, tints flagged cells red and prints each flagged cell's likelihood.
//! The verdict goes in a banner strip appended below the image so the base
//! pixels stay untouched outside flagged cells and grid lines.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::anomalyzer::{explain, CellFlag, ScoreMap};
use crate::dataset::{Label, Pixels};
use crate::error::{Error, Result};
use crate::eval::{csv_writer, fmt_metric, SweepRow};

pub const GRID_COLOR: Rgb<u8> = Rgb([0, 170, 255]);
pub const TEXT_COLOR: Rgb<u8> = Rgb([255, 255, 255]);
/// Height of the verdict banner below the image.
pub const BANNER_HEIGHT: u32 = 14;
const STAMP_SCALE: u32 = 2;

/// Tint opacity for a cell likelihood: `(p − 0.5) / 0.5`, clamped to `[0, 1]`.
pub fn tint_opacity(p: f64) -> f64 {
    ((p - 0.5) / 0.5).clamp(0.0, 1.0)
}

fn gray(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Blends a grayscale value toward pure red with the given opacity.
fn tint(v: u8, alpha: f64) -> Rgb<u8> {
    let base = f64::from(v);
    let r = base + alpha * (255.0 - base);
    let gb = base * (1.0 - alpha);
    Rgb([r.round() as u8, gb.round() as u8, gb.round() as u8])
}

/// Whether pixel coordinate `x` lies on an interior grid line.
fn on_grid_line(x: usize, cell: usize) -> bool {
    x > 0 && x.is_multiple_of(cell)
}

/// Renders the overlay for `pixels` scored as `map`. The returned image is
/// `side × (side + BANNER_HEIGHT)`.
pub fn render_overlay(pixels: &Pixels, map: &ScoreMap) -> Result<RgbImage> {
    let (h, w) = pixels.dim();
    if h == 0 || w == 0 {
        return Err(Error::EmptyImage);
    }
    if h != w {
        return Err(Error::SizeMismatch {
            want: h.max(w),
            got_w: w,
            got_h: h,
        });
    }
    let n = map.n();
    if n == 0 || w % n != 0 {
        return Err(Error::NotDivisible { side: w, n });
    }
    let cell = w / n;
    let mut out = RgbImage::new(w as u32, (h as u32) + BANNER_HEIGHT);

    for ((y, x), &v) in pixels.indexed_iter() {
        let g = gray(v);
        let (r, c) = (y / cell, x / cell);
        let px = if on_grid_line(x, cell) || on_grid_line(y, cell) {
            GRID_COLOR
        } else if map.flagged[[r, c]] {
            tint(g, tint_opacity(map.p[[r, c]]))
        } else {
            Rgb([g, g, g])
        };
        out.put_pixel(x as u32, y as u32, px);
    }

    for flag in explain(map) {
        let label = format!("{:.2}", flag.p);
        let (x0, y0) = ((flag.col * cell + 2) as u32, (flag.row * cell + 2) as u32);
        let (tw, th) = text_size(&label, 1);
        // Only annotate when the label fits inside the cell, clear of the grid lines.
        if tw + 3 < cell as u32 && th + 3 < cell as u32 {
            draw_text(&mut out, &label, x0, y0, 1, TEXT_COLOR);
        }
    }

    let stamp = match map.verdict {
        Label::Anomalous => "ANOMALOUS",
        Label::NonAnomalous => "NORMAL",
    };
    let color = match map.verdict {
        Label::Anomalous => Rgb([255, 64, 64]),
        Label::NonAnomalous => Rgb([64, 220, 64]),
    };
    draw_text(&mut out, stamp, 2, h as u32 + 2, STAMP_SCALE, color);
    Ok(out)
}

/// Machine-readable companion to an overlay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlaySidecar {
    pub image_id: String,
    pub verdict: Label,
    pub flagged: Vec<CellFlag>,
}

impl OverlaySidecar {
    pub fn from_map(image_id: impl Into<String>, map: &ScoreMap) -> Self {
        Self {
            image_id: image_id.into(),
            verdict: map.verdict,
            flagged: explain(map),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Sidecar path for an overlay: same stem, `.json` extension.
pub fn sidecar_path(overlay: &Path) -> PathBuf {
    overlay.with_extension("json")
}

/// Writes the overlay PNG and its sidecar next to it. Returns the sidecar path.
pub fn write_overlay(
    overlay: &Path,
    image_id: &str,
    pixels: &Pixels,
    map: &ScoreMap,
) -> Result<PathBuf> {
    render_overlay(pixels, map)?.save(overlay)?;
    let side = sidecar_path(overlay);
    OverlaySidecar::from_map(image_id, map).save(&side)?;
    Ok(side)
}

/// One point of a balanced-accuracy curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub detector: String,
    pub ratio: usize,
    pub balanced_accuracy: Option<f64>,
}

/// Curve points sorted by `(detector, ratio)`.
pub fn curve_points(rows: &[SweepRow]) -> Vec<CurvePoint> {
    let mut pts: Vec<CurvePoint> = rows
        .iter()
        .map(|r| CurvePoint {
            detector: r.detector.clone(),
            ratio: r.ratio,
            balanced_accuracy: r.metrics.balanced_accuracy,
        })
        .collect();
    pts.sort_by(|a, b| (&a.detector, a.ratio).cmp(&(&b.detector, b.ratio)));
    pts
}

/// Writes `detector,ratio,balanced_accuracy` rows sorted by `(detector, ratio)`.
pub fn emit_curves(path: &Path, rows: &[SweepRow]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::invalid("empty sweep table"));
    }
    let mut out = csv_writer(path)?;
    out.write_record(["detector", "ratio", "balanced_accuracy"])?;
    for p in curve_points(rows) {
        out.write_record([p.detector, p.ratio.to_string(), fmt_metric(p.balanced_accuracy)])?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

// 3×5 bitmap glyphs, one row per entry, high bit on the left.
fn glyph(ch: char) -> Option<[u8; 5]> {
    Some(match ch {
        '0' | 'O' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' | 'S' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b001, 0b001, 0b001],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        'A' => [0b010, 0b101, 0b111, 0b101, 0b101],
        'L' => [0b100, 0b100, 0b100, 0b100, 0b111],
        'M' => [0b101, 0b111, 0b101, 0b101, 0b101],
        'N' => [0b110, 0b101, 0b101, 0b101, 0b101],
        'R' => [0b110, 0b101, 0b110, 0b101, 0b101],
        'U' => [0b101, 0b101, 0b101, 0b101, 0b111],
        _ => return None,
    })
}

fn text_size(text: &str, scale: u32) -> (u32, u32) {
    let n = text.chars().count() as u32;
    ((n * 4).saturating_sub(1) * scale, 5 * scale)
}

fn draw_text(img: &mut RgbImage, text: &str, x0: u32, y0: u32, scale: u32, color: Rgb<u8>) {
    for (i, ch) in text.chars().enumerate() {
        let Some(rows) = glyph(ch) else { continue };
        let gx = x0 + i as u32 * 4 * scale;
        for (dy, bits) in rows.iter().enumerate() {
            for dx in 0..3u32 {
                if bits & (0b100 >> dx) == 0 {
                    continue;
                }
                for sy in 0..scale {
                    for sx in 0..scale {
                        let (x, y) = (gx + dx * scale + sx, y0 + dy as u32 * scale + sy);
                        if x < img.width() && y < img.height() {
                            img.put_pixel(x, y, color);
                        }
                    }
                }
            }
        }
    }
}
