//! Deterministic rasterization of a design state.
//!
//! Fixed palette so tests can assert pixels: white background, black members
//! (line width `1 + size_level`), blue node markers, green support glyphs,
//! red load arrows. The coordinate map sends x = -1 to column 0, x = +1 to
//! column 127, y = -1 to row 127 and y = +1 to row 0.

use ndarray::Array3;

use super::TrussState;

pub const IMAGE_SIZE: usize = 128;

const BACKGROUND: [u8; 3] = [255, 255, 255];
const MEMBER: [u8; 3] = [0, 0, 0];
const NODE: [u8; 3] = [0, 0, 255];
const SUPPORT: [u8; 3] = [0, 255, 0];
const LOAD: [u8; 3] = [255, 0, 0];

const NODE_RADIUS: f64 = 2.0;
const LOAD_ARROW_LEN: f64 = 10.0;

/// RGB design-state image, channel-major `(3, 128, 128)`.
///
/// Stored as bytes; [`DesignImage::to_network_input`] yields the normalized
/// `[0, 1]` tensor the networks consume.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DesignImage {
    pub pixels: Array3<u8>,
}

impl DesignImage {
    fn blank() -> Self {
        let mut pixels = Array3::zeros((3, IMAGE_SIZE, IMAGE_SIZE));
        for c in 0..3 {
            pixels.index_axis_mut(ndarray::Axis(0), c).fill(BACKGROUND[c]);
        }
        DesignImage { pixels }
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> u8 {
        self.pixels[(channel, row, col)]
    }

    pub fn rgb_at(&self, row: usize, col: usize) -> [u8; 3] {
        [self.get(0, row, col), self.get(1, row, col), self.get(2, row, col)]
    }

    fn put(&mut self, row: i64, col: i64, color: [u8; 3]) {
        if (0..IMAGE_SIZE as i64).contains(&row) && (0..IMAGE_SIZE as i64).contains(&col) {
            for c in 0..3 {
                self.pixels[(c, row as usize, col as usize)] = color[c];
            }
        }
    }

    /// Normalized channel-major tensor in `[0, 1]`.
    pub fn to_network_input(&self) -> Array3<f64> {
        self.pixels.mapv(|v| v as f64 / 255.0)
    }

    pub fn save_png(&self, path: &std::path::Path) -> Result<(), image::ImageError> {
        let mut img = image::RgbImage::new(IMAGE_SIZE as u32, IMAGE_SIZE as u32);
        for row in 0..IMAGE_SIZE {
            for col in 0..IMAGE_SIZE {
                img.put_pixel(col as u32, row as u32, image::Rgb(self.rgb_at(row, col)));
            }
        }
        img.save(path)
    }
}

/// Design coordinates to fractional pixel position (row, col).
fn to_pixel(x: f64, y: f64) -> (f64, f64) {
    let col = (x + 1.0) / 2.0 * (IMAGE_SIZE - 1) as f64;
    let row = (1.0 - y) / 2.0 * (IMAGE_SIZE - 1) as f64;
    (row, col)
}

pub fn render(state: &TrussState) -> DesignImage {
    let mut img = DesignImage::blank();
    for m in state.members() {
        let a = state.nodes()[m.a];
        let b = state.nodes()[m.b];
        let width = 1.0 + m.size_level as f64;
        draw_segment(&mut img, to_pixel(a.x, a.y), to_pixel(b.x, b.y), width / 2.0, MEMBER);
    }
    for n in state.nodes() {
        draw_disc(&mut img, to_pixel(n.x, n.y), NODE_RADIUS, NODE);
    }
    for id in state.support_ids() {
        let n = state.nodes()[id];
        draw_support_glyph(&mut img, to_pixel(n.x, n.y));
    }
    let problem = state.problem().clone();
    for (i, l) in problem.loads.iter().enumerate() {
        let id = problem.supports.len() + i;
        let n = state.nodes()[id];
        draw_load_arrow(&mut img, to_pixel(n.x, n.y), l.fx, l.fy);
    }
    img
}

fn draw_disc(img: &mut DesignImage, center: (f64, f64), radius: f64, color: [u8; 3]) {
    let (cr, cc) = center;
    let r0 = (cr - radius).floor() as i64;
    let r1 = (cr + radius).ceil() as i64;
    let c0 = (cc - radius).floor() as i64;
    let c1 = (cc + radius).ceil() as i64;
    for row in r0..=r1 {
        for col in c0..=c1 {
            let d = f64::hypot(row as f64 - cr, col as f64 - cc);
            if d <= radius {
                img.put(row, col, color);
            }
        }
    }
}

fn draw_segment(
    img: &mut DesignImage,
    p0: (f64, f64),
    p1: (f64, f64),
    radius: f64,
    color: [u8; 3],
) {
    let r0 = (p0.0.min(p1.0) - radius).floor() as i64;
    let r1 = (p0.0.max(p1.0) + radius).ceil() as i64;
    let c0 = (p0.1.min(p1.1) - radius).floor() as i64;
    let c1 = (p0.1.max(p1.1) + radius).ceil() as i64;
    let (dr, dc) = (p1.0 - p0.0, p1.1 - p0.1);
    let len_sq = dr * dr + dc * dc;
    for row in r0..=r1 {
        for col in c0..=c1 {
            let (vr, vc) = (row as f64 - p0.0, col as f64 - p0.1);
            let t = if len_sq > 0.0 { ((vr * dr + vc * dc) / len_sq).clamp(0.0, 1.0) } else { 0.0 };
            let d = f64::hypot(vr - t * dr, vc - t * dc);
            if d <= radius {
                img.put(row, col, color);
            }
        }
    }
}

/// Filled triangle hanging below the node.
fn draw_support_glyph(img: &mut DesignImage, center: (f64, f64)) {
    let row = center.0.round() as i64;
    let col = center.1.round() as i64;
    for dr in 1..=4i64 {
        for dc in -dr..=dr {
            img.put(row + dr, col + dc, SUPPORT);
        }
    }
}

/// Arrow from the node along the force direction, with a 2-pixel head.
fn draw_load_arrow(img: &mut DesignImage, start: (f64, f64), fx: f64, fy: f64) {
    let norm = f64::hypot(fx, fy);
    if norm == 0.0 {
        return;
    }
    // pixel space: +col is +x, +row is -y
    let (ur, uc) = (-fy / norm, fx / norm);
    let tip = (start.0 + ur * LOAD_ARROW_LEN, start.1 + uc * LOAD_ARROW_LEN);
    draw_segment(img, start, tip, 0.6, LOAD);
    draw_disc(img, tip, 1.5, LOAD);
}
