//! Rasterizing explanation grids into PNG overlays.

use std::fmt;
use std::str::FromStr;

use image::codecs::png::PngEncoder;
use image::{ImageEncoder, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::pca::RgbGrid;
use super::{CorrespondenceMap, ExplainError, HeatmapPair, ScalarGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    Heatmap,
    Correspondence,
}

impl RenderMode {
    pub const ALL: [RenderMode; 2] = [RenderMode::Heatmap, RenderMode::Correspondence];

    pub fn as_str(self) -> &'static str {
        match self {
            RenderMode::Heatmap => "heatmap",
            RenderMode::Correspondence => "correspondence",
        }
    }
}

impl fmt::Display for RenderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RenderMode {
    type Err = ExplainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| ExplainError::UnknownMode(s.to_string()))
    }
}

/// Red at `t = 0` to blue at `t = 1`, rounding half to even.
pub fn heat_color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let channel = |v: f64| v.round_ties_even() as u8;
    [channel(255.0 * (1.0 - t)), 0, channel(255.0 * t)]
}

fn check_target(grid: (usize, usize), target: (u32, u32)) -> Result<(), ExplainError> {
    let (gh, gw) = grid;
    if gh == 0 || gw == 0 {
        return Err(ExplainError::EmptyGrid);
    }
    if (target.0 as usize) < gw || (target.1 as usize) < gh {
        return Err(ExplainError::InvalidTarget { target, grid });
    }
    Ok(())
}

/// Pixel center `x` of an axis of `out` pixels, in cell coordinates of an
/// axis of `cells` cells, clamped to the outer cell centers.
fn source_coordinate(x: u32, out: u32, cells: usize) -> (usize, usize, f64) {
    let pos = ((x as f64 + 0.5) * cells as f64 / out as f64 - 0.5).clamp(0.0, (cells - 1) as f64);
    let lo = pos.floor() as usize;
    (lo, (lo + 1).min(cells - 1), pos - lo as f64)
}

/// Heatmap of `grid` scaled by `range` (usually the joint min and max over
/// both grids of a pair), upsampled bilinearly to `target` = (width, height).
/// A zero-width range maps everything to the middle color.
pub fn heatmap_image(grid: &ScalarGrid, range: (f64, f64), target: (u32, u32)) -> Result<RgbImage, ExplainError> {
    check_target((grid.height, grid.width), target)?;
    let (lo, hi) = range;
    let t: Vec<f64> =
        grid.values.iter().map(|&v| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 }).collect();
    let at = |r: usize, c: usize| t[r * grid.width + c];
    Ok(RgbImage::from_fn(target.0, target.1, |x, y| {
        let (c0, c1, fx) = source_coordinate(x, target.0, grid.width);
        let (r0, r1, fy) = source_coordinate(y, target.1, grid.height);
        let top = at(r0, c0) * (1.0 - fx) + at(r0, c1) * fx;
        let bottom = at(r1, c0) * (1.0 - fx) + at(r1, c1) * fx;
        Rgb(heat_color(top * (1.0 - fy) + bottom * fy))
    }))
}

/// Flat-colored cells upsampled nearest-neighbor to `target`.
pub fn correspondence_image(grid: &RgbGrid, target: (u32, u32)) -> Result<RgbImage, ExplainError> {
    check_target((grid.height, grid.width), target)?;
    Ok(RgbImage::from_fn(target.0, target.1, |x, y| {
        let c = x as usize * grid.width / target.0 as usize;
        let r = y as usize * grid.height / target.1 as usize;
        Rgb(grid.get(r, c))
    }))
}

/// `left` and `right` next to each other; heights must match.
pub fn side_by_side(left: &RgbImage, right: &RgbImage) -> RgbImage {
    assert_eq!(left.height(), right.height(), "panels must share a height");
    RgbImage::from_fn(left.width() + right.width(), left.height(), |x, y| {
        if x < left.width() {
            *left.get_pixel(x, y)
        } else {
            *right.get_pixel(x - left.width(), y)
        }
    })
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>, ExplainError> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .map_err(|e| ExplainError::Png(e.to_string()))?;
    Ok(out)
}

/// A single grid to render on its own.
#[derive(Debug, Clone, Copy)]
pub enum OverlayGrid<'a> {
    Scalar(&'a ScalarGrid),
    Rgb(&'a RgbGrid),
}

/// Renders one grid to PNG. Heatmaps are scaled by their own min and max;
/// use [`render_heatmap_pair`] for pairs.
pub fn render_overlay(grid: OverlayGrid<'_>, target: (u32, u32), mode: RenderMode) -> Result<Vec<u8>, ExplainError> {
    let img = match (grid, mode) {
        (OverlayGrid::Scalar(g), RenderMode::Heatmap) => heatmap_image(g, min_max(g.values.iter().copied()), target)?,
        (OverlayGrid::Rgb(g), RenderMode::Correspondence) => correspondence_image(g, target)?,
        (OverlayGrid::Scalar(g), RenderMode::Correspondence) => {
            let (lo, hi) = min_max(g.values.iter().copied());
            let pixels = g.values.iter().map(|&v| gray(v, lo, hi)).collect();
            correspondence_image(&RgbGrid { height: g.height, width: g.width, pixels }, target)?
        }
        (OverlayGrid::Rgb(g), RenderMode::Heatmap) => {
            let values = g.pixels.iter().map(|p| (p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0).collect();
            let scalar = ScalarGrid { height: g.height, width: g.width, values };
            heatmap_image(&scalar, min_max(scalar.values.iter().copied()), target)?
        }
    };
    encode_png(&img)
}

fn gray(v: f64, lo: f64, hi: f64) -> [u8; 3] {
    let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
    [(255.0 * t).round_ties_even() as u8; 3]
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Two-panel PNG, query on the left, both scaled by one joint range.
/// `panel` is the (width, height) of each half.
pub fn render_heatmap_pair(pair: &HeatmapPair, panel: (u32, u32)) -> Result<Vec<u8>, ExplainError> {
    let range = min_max(pair.query_importance.values.iter().chain(&pair.result_importance.values).copied());
    let left = heatmap_image(&pair.query_importance, range, panel)?;
    let right = heatmap_image(&pair.result_importance, range, panel)?;
    encode_png(&side_by_side(&left, &right))
}

/// Two-panel PNG, query on the left.
pub fn render_correspondence_pair(map: &CorrespondenceMap, panel: (u32, u32)) -> Result<Vec<u8>, ExplainError> {
    let left = correspondence_image(&map.query_rgb, panel)?;
    let right = correspondence_image(&map.result_rgb, panel)?;
    encode_png(&side_by_side(&left, &right))
}
