//! Grid visualization: ASCII dumps and PNG strips.
//!
//! PNG output draws each grid as a panel of colored cells separated by
//! one-pixel grid lines, and lays multiple panels out left to right (useful
//! for "input, prediction, target" triptychs or whole rollouts). Encoding is
//! fully deterministic: the same grids and palette produce identical bytes.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};

use crate::data::{decode_argmax, one_hot_encode, Grid, GridError};
use crate::model::{rollout, MaskConfig, ModelParams};
use crate::seeds;
use crate::tensor::Scalar;

/// Pixel color of the one-pixel lines between cells.
const GRID_LINE: [u8; 3] = [60, 60, 60];
/// Pixel color behind and between panels.
const BACKDROP: [u8; 3] = [24, 24, 24];
/// Horizontal gap between panels, in pixels.
const PANEL_GAP: u32 = 6;

/// RGB colors for the ten cell values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Palette(pub [[u8; 3]; 10]);

impl Default for Palette {
    fn default() -> Self {
        Palette([
            [0x00, 0x00, 0x00], // 0 black
            [0x00, 0x74, 0xD9], // 1 blue
            [0xFF, 0x41, 0x36], // 2 red
            [0x2E, 0xCC, 0x40], // 3 green
            [0xFF, 0xDC, 0x00], // 4 yellow
            [0xAA, 0xAA, 0xAA], // 5 gray
            [0xF0, 0x12, 0xBE], // 6 magenta
            [0xFF, 0x85, 0x1B], // 7 orange
            [0x7F, 0xDB, 0xFF], // 8 azure
            [0x87, 0x0C, 0x25], // 9 maroon
        ])
    }
}

/// Errors from rendering and from palette or ASCII parsing.
#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("failed to read palette file: {0}")]
    Io(#[from] std::io::Error),
    #[error("palette file is not a JSON array of strings: {0}")]
    Json(#[from] serde_json::Error),
    #[error("palette must list exactly 10 colors, found {0}")]
    WrongColorCount(usize),
    #[error("bad color {0:?}: expected \"#RRGGBB\"")]
    BadColor(String),
    #[error("palette colors must be distinct; {0:?} appears twice")]
    DuplicateColor(String),
    #[error("nothing to render")]
    NoPanels,
    #[error("bad character {found:?} in row {row}: expected a digit 0-9")]
    BadAsciiCell { row: usize, found: char },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("png encoding failed: {0}")]
    Encode(#[from] image::ImageError),
}

fn parse_hex_color(text: &str) -> Result<[u8; 3], RenderError> {
    let hex = text
        .strip_prefix('#')
        .filter(|h| h.len() == 6 && h.chars().all(|c| c.is_ascii_hexdigit()))
        .ok_or_else(|| RenderError::BadColor(text.to_string()))?;
    let byte = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).expect("validated hex");
    Ok([byte(0), byte(2), byte(4)])
}

impl Palette {
    /// Parses a palette from JSON text: an array of exactly ten distinct
    /// `"#RRGGBB"` strings, one per cell value.
    pub fn from_json(text: &str) -> Result<Palette, RenderError> {
        let entries: Vec<String> = serde_json::from_str(text)?;
        if entries.len() != 10 {
            return Err(RenderError::WrongColorCount(entries.len()));
        }
        let mut colors = [[0u8; 3]; 10];
        for (i, entry) in entries.iter().enumerate() {
            colors[i] = parse_hex_color(entry)?;
        }
        for i in 0..10 {
            for j in i + 1..10 {
                if colors[i] == colors[j] {
                    return Err(RenderError::DuplicateColor(entries[j].clone()));
                }
            }
        }
        Ok(Palette(colors))
    }

    /// Reads [`Palette::from_json`] from a file.
    pub fn from_json_file(path: &Path) -> Result<Palette, RenderError> {
        Palette::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Renders a grid as digit rows, one line per row.
pub fn render_ascii(grid: &Grid) -> String {
    let mut text = String::with_capacity((grid.cols() + 1) * grid.rows());
    for y in 0..grid.rows() {
        for x in 0..grid.cols() {
            text.push(char::from(b'0' + grid.get(y, x)));
        }
        text.push('\n');
    }
    text
}

/// Parses the format written by [`render_ascii`]: digit rows separated by
/// newlines, all the same length.
pub fn parse_ascii(text: &str) -> Result<Grid, RenderError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut row = Vec::with_capacity(line.len());
        for ch in line.chars() {
            let digit = ch
                .to_digit(10)
                .ok_or(RenderError::BadAsciiCell { row: i, found: ch })?;
            row.push(digit as u8);
        }
        rows.push(row);
    }
    Ok(Grid::from_rows(rows)?)
}

/// Pixel width of one panel: cells plus one-pixel lines around and between.
pub fn panel_width(cols: usize, cell_px: u32) -> u32 {
    cols as u32 * (cell_px + 1) + 1
}

/// Pixel height of one panel.
pub fn panel_height(rows: usize, cell_px: u32) -> u32 {
    rows as u32 * (cell_px + 1) + 1
}

fn render_panel(grid: &Grid, cell_px: u32, palette: &Palette) -> RgbImage {
    let width = panel_width(grid.cols(), cell_px);
    let height = panel_height(grid.rows(), cell_px);
    let mut img = RgbImage::from_pixel(width, height, Rgb(GRID_LINE));
    for y in 0..grid.rows() {
        for x in 0..grid.cols() {
            let color = Rgb(palette.0[grid.get(y, x) as usize]);
            let x0 = x as u32 * (cell_px + 1) + 1;
            let y0 = y as u32 * (cell_px + 1) + 1;
            for dy in 0..cell_px {
                for dx in 0..cell_px {
                    img.put_pixel(x0 + dx, y0 + dy, color);
                }
            }
        }
    }
    img
}

/// Renders one or more grids as a horizontal strip and encodes it as PNG.
/// Panels are top-aligned and separated by a small gap.
pub fn render_png_bytes(
    grids: &[Grid],
    cell_px: u32,
    palette: &Palette,
) -> Result<Vec<u8>, RenderError> {
    if grids.is_empty() {
        return Err(RenderError::NoPanels);
    }
    let cell_px = cell_px.max(1);
    let panels: Vec<RgbImage> = grids
        .iter()
        .map(|g| render_panel(g, cell_px, palette))
        .collect();
    let width: u32 =
        panels.iter().map(|p| p.width()).sum::<u32>() + PANEL_GAP * (panels.len() as u32 - 1);
    let height = panels.iter().map(|p| p.height()).max().expect("non-empty");
    let mut strip = RgbImage::from_pixel(width, height, Rgb(BACKDROP));
    let mut x_off = 0;
    for panel in &panels {
        for (x, y, pixel) in panel.enumerate_pixels() {
            strip.put_pixel(x_off + x, y, *pixel);
        }
        x_off += panel.width() + PANEL_GAP;
    }
    let mut bytes = Vec::new();
    image::DynamicImage::ImageRgb8(strip).write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)?;
    Ok(bytes)
}

/// Decodes the frames of a deterministic rollout on the given input: the
/// input itself followed by the argmax decoding after each step.
pub fn rollout_frames<S: Scalar>(
    params: &ModelParams<S>,
    input: &Grid,
    steps: usize,
) -> Vec<Grid> {
    let init = one_hot_encode::<S>(input, params.spec.total_channels())
        .expect("state always has at least the color channels");
    let traj = rollout(
        params,
        &init,
        steps,
        MaskConfig::disabled(),
        &mut seeds::stream(0, &[]),
    )
    .expect("encoded state matches the model's channel count");
    let mut frames = Vec::with_capacity(steps + 1);
    frames.push(input.clone());
    for record in &traj.steps {
        frames.push(decode_argmax(&record.state));
    }
    frames
}
