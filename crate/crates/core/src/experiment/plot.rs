//! Small raster plots written as PNG. Axes carry no text; captions and
//! ranges go in the accompanying summary.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;

use crate::error::Result;

pub type Color = [u8; 3];

pub const WHITE: Color = [255, 255, 255];
pub const BLACK: Color = [0, 0, 0];
pub const GRAY: Color = [200, 200, 200];

/// Distinct colors for labels and series.
pub const PALETTE: [Color; 8] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [23, 190, 207],
];

const MARGIN: u32 = 24;

/// Blends `c` towards white; `t = 1` keeps `c`, `t = 0` gives white.
pub fn shade(c: Color, t: f64) -> Color {
    let t = t.clamp(0.0, 1.0);
    c.map(|v| (255.0 - t * (255.0 - v as f64)).round() as u8)
}

/// Perceptually ordered dark-blue to yellow ramp for `t` in `[0, 1]`.
pub fn heat(t: f64) -> Color {
    const STOPS: [Color; 5] = [[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]];
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let k = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - k as f64;
    let (a, b) = (STOPS[k], STOPS[k + 1]);
    [0, 1, 2].map(|c| (a[c] as f64 + f * (b[c] as f64 - a[c] as f64)).round() as u8)
}

/// Data-to-pixel mapping of a plot area framed by a margin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub width: u32,
    pub height: u32,
}

impl Frame {
    /// Bounds padded by 5% on each side; degenerate ranges are widened.
    pub fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone, width: u32, height: u32) -> Self {
        Self {
            x: padded(xs),
            y: padded(ys),
            width,
            height,
        }
    }

    pub fn to_pixel(&self, x: f64, y: f64) -> (i64, i64) {
        let w = (self.width - 2 * MARGIN) as f64;
        let h = (self.height - 2 * MARGIN) as f64;
        let px = MARGIN as f64 + (x - self.x.0) / (self.x.1 - self.x.0) * w;
        let py = (self.height - MARGIN) as f64 - (y - self.y.0) / (self.y.1 - self.y.0) * h;
        (px.round() as i64, py.round() as i64)
    }

    /// Data coordinates of pixel `(px, py)` inside the plot area.
    pub fn to_data(&self, px: u32, py: u32) -> (f64, f64) {
        let w = (self.width - 2 * MARGIN) as f64;
        let h = (self.height - 2 * MARGIN) as f64;
        let x = self.x.0 + (px as f64 - MARGIN as f64) / w * (self.x.1 - self.x.0);
        let y = self.y.0 + ((self.height - MARGIN) as f64 - py as f64) / h * (self.y.1 - self.y.0);
        (x, y)
    }

    pub fn inner(&self) -> (std::ops::Range<u32>, std::ops::Range<u32>) {
        (MARGIN..self.width - MARGIN, MARGIN..self.height - MARGIN)
    }
}

fn padded(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v
        .filter(|x| x.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    let span = (hi - lo).max(1e-9);
    let pad = 0.05 * span + if hi - lo < 1e-9 { 1.0 } else { 0.0 };
    (lo - pad, hi + pad)
}

pub struct Canvas {
    pub img: RgbImage,
}

impl Canvas {
    pub fn new(width: u32, height: u32, bg: Color) -> Self {
        Self {
            img: RgbImage::from_pixel(width, height, Rgb(bg)),
        }
    }

    pub fn put(&mut self, x: i64, y: i64, c: Color) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, Rgb(c));
        }
    }

    pub fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Color) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    pub fn dot(&mut self, (x, y): (i64, i64), r: i64, c: Color) {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    self.put(x + dx, y + dy, c);
                }
            }
        }
    }

    /// Plot-area border with small ticks at the ends and the middle.
    pub fn frame(&mut self, f: &Frame) {
        let (l, r) = (MARGIN as i64 - 1, (f.width - MARGIN) as i64);
        let (t, b) = (MARGIN as i64 - 1, (f.height - MARGIN) as i64);
        self.line((l, t), (r, t), BLACK);
        self.line((r, t), (r, b), BLACK);
        self.line((r, b), (l, b), BLACK);
        self.line((l, b), (l, t), BLACK);
        for k in 0..=2 {
            let x = l + (r - l) * k / 2;
            let y = t + (b - t) * k / 2;
            self.line((x, b), (x, b + 4), BLACK);
            self.line((l - 4, y), (l, y), BLACK);
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        self.img.save(path)?;
        Ok(())
    }
}

/// Curves against their index, one color each.
pub fn line_plot(series: &[(&[f64], Color)], path: &Path) -> Result<()> {
    let n = series.iter().map(|(s, _)| s.len()).max().unwrap_or(0);
    let frame = Frame::fit(
        [0.0, n.saturating_sub(1) as f64].into_iter(),
        series.iter().flat_map(|(s, _)| s.iter().copied()).collect::<Vec<_>>().into_iter(),
        480,
        320,
    );
    let mut c = Canvas::new(frame.width, frame.height, WHITE);
    c.frame(&frame);
    for (ys, col) in series {
        let pts: Vec<(i64, i64)> = ys
            .iter()
            .enumerate()
            .filter(|(_, y)| y.is_finite())
            .map(|(x, &y)| frame.to_pixel(x as f64, y))
            .collect();
        for w in pts.windows(2) {
            c.line(w[0], w[1], *col);
        }
        for &p in &pts {
            c.dot(p, 1, *col);
        }
    }
    c.save(path)
}

/// Points over an optional density image evaluated on the plot area. The
/// density receives every pixel centre as one `n x 2` batch.
pub fn scatter_plot(
    points: &[(f64, f64, Color)],
    frame: &Frame,
    density: Option<&dyn Fn(&Array2<f64>) -> Vec<f64>>,
    path: &Path,
) -> Result<()> {
    let mut c = Canvas::new(frame.width, frame.height, WHITE);
    if let Some(f) = density {
        let (xs, ys) = frame.inner();
        let pixels: Vec<(u32, u32)> = ys.flat_map(|py| xs.clone().map(move |px| (px, py))).collect();
        let coords = Array2::from_shape_fn((pixels.len(), 2), |(k, j)| {
            let (x, y) = frame.to_data(pixels[k].0, pixels[k].1);
            if j == 0 { x } else { y }
        });
        let vals = f(&coords);
        let max = vals.iter().cloned().filter(|v| v.is_finite()).fold(0.0f64, f64::max);
        for (&(px, py), v) in pixels.iter().zip(&vals) {
            let t = if max > 0.0 && v.is_finite() { v / max } else { 0.0 };
            c.put(px as i64, py as i64, heat(t));
        }
    }
    c.frame(frame);
    for &(x, y, col) in points {
        let p = frame.to_pixel(x, y);
        c.dot(p, 3, BLACK);
        c.dot(p, 2, col);
    }
    c.save(path)
}

/// Pixel layout of a flattened image modality.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageLayout {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageLayout {
    /// `(h, w)`, `(1, h, w)` or `(3, h, w)` shapes; anything else is not an image.
    pub fn from_shape(shape: &[usize]) -> Option<Self> {
        match *shape {
            [h, w] => Some(Self { channels: 1, height: h, width: w }),
            [c @ (1 | 3), h, w] => Some(Self { channels: c, height: h, width: w }),
            _ => None,
        }
    }

    fn pixel(&self, row: &[f64], y: usize, x: usize) -> Color {
        let at = |c: usize| (row[c * self.height * self.width + y * self.width + x].clamp(0.0, 1.0) * 255.0).round() as u8;
        if self.channels == 3 {
            [at(0), at(1), at(2)]
        } else {
            let v = at(0);
            [v, v, v]
        }
    }
}

/// Rows of images: `rows[r]` holds one flattened image per column. Each
/// row may use its own layout so a source row can sit above generations
/// of another modality.
pub fn image_grid(rows: &[(&Array2<f64>, ImageLayout)], path: &Path) -> Result<()> {
    const GAP: usize = 2;
    let cols = rows.iter().map(|(a, _)| a.nrows()).max().unwrap_or(0);
    let cell_w = rows.iter().map(|(_, l)| l.width).max().unwrap_or(1);
    let cell_h = rows.iter().map(|(_, l)| l.height).max().unwrap_or(1);
    let width = (cols * (cell_w + GAP) + GAP) as u32;
    let height = (rows.len() * (cell_h + GAP) + GAP) as u32;
    let mut c = Canvas::new(width.max(1), height.max(1), GRAY);
    for (r, (imgs, layout)) in rows.iter().enumerate() {
        for (k, img) in imgs.rows().into_iter().enumerate() {
            let img = img.to_vec();
            let (ox, oy) = (GAP + k * (cell_w + GAP), GAP + r * (cell_h + GAP));
            for y in 0..layout.height {
                for x in 0..layout.width {
                    c.put((ox + x) as i64, (oy + y) as i64, layout.pixel(&img, y, x));
                }
            }
        }
    }
    c.save(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_maps_corners_and_back() {
        let f = Frame {
            x: (0.0, 10.0),
            y: (-1.0, 1.0),
            width: 200,
            height: 100,
        };
        assert_eq!(f.to_pixel(0.0, -1.0), (MARGIN as i64, (100 - MARGIN) as i64));
        assert_eq!(f.to_pixel(10.0, 1.0), ((200 - MARGIN) as i64, MARGIN as i64));
        let (x, y) = f.to_data(100, 50);
        assert!((x - 5.0).abs() < 1e-9 && y.abs() < 1e-9);
    }

    #[test]
    fn grid_has_one_cell_per_image() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        let src = Array2::from_elem((3, 16), 1.0);
        let gen = Array2::zeros((6, 4 * 4 * 3));
        let (a, b) = (
            ImageLayout::from_shape(&[4, 4]).unwrap(),
            ImageLayout::from_shape(&[3, 4, 4]).unwrap(),
        );
        image_grid(&[(&src, a), (&gen.slice(ndarray::s![..3, ..]).to_owned(), b), (&gen.slice(ndarray::s![3.., ..]).to_owned(), b)], &p).unwrap();
        let img = image::open(&p).unwrap().to_rgb8();
        assert_eq!((img.width(), img.height()), (3 * 6 + 2, 3 * 6 + 2));
        assert_eq!(img.get_pixel(2, 2).0, WHITE);
        assert_eq!(img.get_pixel(2, 8).0, BLACK);
    }

    #[test]
    fn heat_ramp_ends() {
        assert_eq!(heat(0.0), [68, 1, 84]);
        assert_eq!(heat(1.0), [253, 231, 37]);
        assert_eq!(shade([0, 0, 0], 0.0), WHITE);
    }

    #[test]
    fn line_and_scatter_plots_write_png() {
        let dir = tempfile::tempdir().unwrap();
        line_plot(&[(&[3.0, 2.0, 1.5], PALETTE[0])], &dir.path().join("l.png")).unwrap();
        let pts = [(0.0, 0.0, PALETTE[1]), (1.0, 2.0, PALETTE[0])];
        let f = Frame::fit(pts.iter().map(|p| p.0), pts.iter().map(|p| p.1), 120, 120);
        let dens = |z: &Array2<f64>| z.rows().into_iter().map(|r| (-(r[0] * r[0] + r[1] * r[1])).exp()).collect::<Vec<_>>();
        scatter_plot(&pts, &f, Some(&dens), &dir.path().join("s.png")).unwrap();
        assert!(dir.path().join("s.png").exists());
    }
}
