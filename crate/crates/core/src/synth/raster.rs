//! Exact pixel-center rasterization of the scene shapes.

use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::mask::{Bitmap, RleMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Disk,
    Rectangle,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Disk, ShapeKind::Rectangle, ShapeKind::Triangle];
}

/// A shape placed in one frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeInstance {
    pub kind: ShapeKind,
    pub cx: f64,
    pub cy: f64,
    /// Disk radius, rectangle half-width, triangle circumradius.
    pub radius: f64,
    /// Rectangle half-height over half-width.
    pub aspect: f64,
    /// Triangle orientation in radians.
    pub rotation: f64,
    pub color: [u8; 3],
}

impl ShapeInstance {
    /// Whether the point `(x, y)` lies inside (boundary included).
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        match self.kind {
            ShapeKind::Disk => dx * dx + dy * dy <= self.radius * self.radius,
            ShapeKind::Rectangle => {
                dx.abs() <= self.radius && dy.abs() <= self.radius * self.aspect
            }
            ShapeKind::Triangle => {
                let v = self.vertices();
                let edge = |a: (f64, f64), b: (f64, f64)| {
                    (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0)
                };
                let e = [edge(v[0], v[1]), edge(v[1], v[2]), edge(v[2], v[0])];
                e.iter().all(|&s| s >= 0.0) || e.iter().all(|&s| s <= 0.0)
            }
        }
    }

    pub fn vertices(&self) -> [(f64, f64); 3] {
        let mut v = [(0.0, 0.0); 3];
        for (k, p) in v.iter_mut().enumerate() {
            let a = self.rotation + std::f64::consts::TAU * k as f64 / 3.0;
            *p = (
                self.cx + self.radius * libm::cos(a),
                self.cy + self.radius * libm::sin(a),
            );
        }
        v
    }

    /// Pixel rows and columns that can contain covered pixel centers.
    fn extent(&self, height: usize, width: usize) -> (usize, usize, usize, usize) {
        let ry = match self.kind {
            ShapeKind::Rectangle => self.radius * self.aspect,
            _ => self.radius,
        };
        let clamp = |v: f64, hi: usize| v.floor().max(0.0).min(hi as f64) as usize;
        (
            clamp(self.cy - ry - 1.0, height),
            clamp(self.cy + ry + 1.0, height),
            clamp(self.cx - self.radius - 1.0, width),
            clamp(self.cx + self.radius + 1.0, width),
        )
    }

    pub fn rasterize(&self, height: usize, width: usize) -> RleMask {
        let mut bm = Bitmap::zeros(height, width).expect("non-empty frame");
        let (y0, y1, x0, x1) = self.extent(height, width);
        for y in y0..(y1 + 1).min(height) {
            for x in x0..(x1 + 1).min(width) {
                if self.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    bm.set(y, x, true);
                }
            }
        }
        RleMask::encode(&bm)
    }

    pub fn paint(&self, img: &mut Image) {
        let (y0, y1, x0, x1) = self.extent(img.height(), img.width());
        for y in y0..(y1 + 1).min(img.height()) {
            for x in x0..(x1 + 1).min(img.width()) {
                if self.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    img.set_pixel(y, x, self.color);
                }
            }
        }
    }
}

/// HSV with hue in turns (wrapped to `[0, 1)`) to 8-bit RGB.
pub fn hsv_to_rgb(hue: f64, sat: f64, val: f64) -> [u8; 3] {
    let h = (hue - hue.floor()) * 6.0;
    let i = h.floor() as i32 % 6;
    let f = h - h.floor();
    let (p, q, t) = (
        val * (1.0 - sat),
        val * (1.0 - sat * f),
        val * (1.0 - sat * (1.0 - f)),
    );
    let (r, g, b) = match i {
        0 => (val, t, p),
        1 => (q, val, p),
        2 => (p, val, t),
        3 => (p, q, val),
        4 => (t, p, val),
        _ => (val, p, q),
    };
    let to8 = |c: f64| (c * 255.0).round().clamp(0.0, 255.0) as u8;
    [to8(r), to8(g), to8(b)]
}
