//! Headless rasterizer for overlay primitives, writing binary PPM (P6).

use crate::metaphor::{Rgb, WeathervaneState};
use crate::restitution::{OverlayPrimitive, Shape};

#[derive(Debug, Clone, PartialEq)]
pub struct Canvas {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Canvas {
    pub fn new(width: usize, height: usize, background: Rgb) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&background.0);
        }
        Self { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> Option<Rgb> {
        if x >= self.width || y >= self.height {
            return None;
        }
        let i = (y * self.width + x) * 3;
        Some(Rgb([self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]))
    }

    pub fn put(&mut self, x: i64, y: i64, c: Rgb) {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return;
        }
        let i = (y as usize * self.width + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&c.0);
    }

    /// Bresenham between rounded endpoints; long off-canvas runs are cut.
    pub fn line(&mut self, from: [f64; 2], to: [f64; 2], c: Rgb) {
        let Some((from, to)) = clip_to_rect(from, to, self.width as f64, self.height as f64) else {
            return;
        };
        let (mut x0, mut y0) = (from[0].round() as i64, from[1].round() as i64);
        let (x1, y1) = (to[0].round() as i64, to[1].round() as i64);
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.put(x0, y0, c);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    pub fn rect(&mut self, min: [f64; 2], max: [f64; 2], c: Rgb) {
        self.line([min[0], min[1]], [max[0], min[1]], c);
        self.line([max[0], min[1]], [max[0], max[1]], c);
        self.line([max[0], max[1]], [min[0], max[1]], c);
        self.line([min[0], max[1]], [min[0], min[1]], c);
    }

    pub fn fill_rect(&mut self, min: [f64; 2], max: [f64; 2], c: Rgb) {
        let x0 = min[0].round().max(0.0) as i64;
        let x1 = max[0].round().min(self.width as f64) as i64;
        let y0 = min[1].round().max(0.0) as i64;
        let y1 = max[1].round().min(self.height as f64) as i64;
        for y in y0..y1 {
            for x in x0..x1 {
                self.put(x, y, c);
            }
        }
    }

    pub fn circle(&mut self, center: [f64; 2], radius: f64, c: Rgb) {
        let steps = ((radius * 8.0).ceil() as usize).clamp(16, 720);
        let mut prev = [center[0] + radius, center[1]];
        for k in 1..=steps {
            let a = k as f64 / steps as f64 * std::f64::consts::TAU;
            let next = [center[0] + radius * a.cos(), center[1] + radius * a.sin()];
            self.line(prev, next, c);
            prev = next;
        }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Liang-Barsky clipping against a slightly enlarged canvas rectangle.
fn clip_to_rect(a: [f64; 2], b: [f64; 2], w: f64, h: f64) -> Option<([f64; 2], [f64; 2])> {
    if !(a.iter().chain(&b).all(|v| v.is_finite())) {
        return None;
    }
    let (xmin, ymin, xmax, ymax) = (-1.0, -1.0, w + 1.0, h + 1.0);
    let d = [b[0] - a[0], b[1] - a[1]];
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for (p, q) in [
        (-d[0], a[0] - xmin),
        (d[0], xmax - a[0]),
        (-d[1], a[1] - ymin),
        (d[1], ymax - a[1]),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
            if t0 > t1 {
                return None;
            }
        }
    }
    Some((
        [a[0] + t0 * d[0], a[1] + t0 * d[1]],
        [a[0] + t1 * d[0], a[1] + t1 * d[1]],
    ))
}

/// Draws pixel-space primitives (scene overlay).
pub fn draw_pixel_primitives(canvas: &mut Canvas, prims: &[OverlayPrimitive]) {
    for p in prims {
        match &p.shape {
            Shape::Box2d { min, max } => canvas.rect(*min, *max, p.color),
            Shape::Line2d { from, to } => canvas.line(*from, *to, p.color),
            Shape::Circle2d { center, radius } => canvas.circle(*center, *radius, p.color),
        }
    }
}

/// Scene view: dark schematic background with overlay primitives.
pub fn render_scene(width: usize, height: usize, prims: &[OverlayPrimitive]) -> Canvas {
    let mut canvas = Canvas::new(width, height, Rgb([40, 40, 40]));
    draw_pixel_primitives(&mut canvas, prims);
    canvas
}

/// Pixel layout of the bird view: ego near the bottom centre, forward up,
/// left to the left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BirdLayout {
    pub size: usize,
    pub extent_m: f64,
}

impl BirdLayout {
    fn scale(&self) -> f64 {
        self.size as f64 / (1.2 * self.extent_m)
    }

    pub fn to_pixel(&self, p: [f64; 2]) -> [f64; 2] {
        let s = self.scale();
        let origin = [self.size as f64 * 0.5, self.size as f64 - 0.2 * self.extent_m * s];
        [origin[0] - p[1] * s, origin[1] - p[0] * s]
    }
}

pub fn render_bird(layout: &BirdLayout, prims: &[OverlayPrimitive]) -> Canvas {
    let mut canvas = Canvas::new(layout.size, layout.size, Rgb([20, 20, 20]));
    let ego_min = layout.to_pixel([2.5, 0.9]);
    let ego_max = layout.to_pixel([-2.0, -0.9]);
    canvas.fill_rect(ego_min, ego_max, Rgb([200, 200, 200]));
    for p in prims {
        match &p.shape {
            Shape::Box2d { min, max } => {
                let a = layout.to_pixel([max[0], max[1]]);
                let b = layout.to_pixel([min[0], min[1]]);
                canvas.rect(a, b, p.color);
            }
            Shape::Line2d { from, to } => {
                canvas.line(layout.to_pixel(*from), layout.to_pixel(*to), p.color)
            }
            Shape::Circle2d { center, radius } => {
                canvas.circle(layout.to_pixel(*center), radius * layout.scale(), p.color)
            }
        }
    }
    canvas
}

/// Weathervane as seen on the HUD: a pole with arrows stacked by height,
/// each pointing along its bearing (left is left).
pub fn render_vane(size: usize, vane: &WeathervaneState) -> Canvas {
    let mut canvas = Canvas::new(size, size, Rgb([0, 0, 0]));
    let s = size as f64;
    let pole_x = s * 0.5;
    let (top, bottom) = (s * 0.1, s * 0.9);
    canvas.line([pole_x, top], [pole_x, bottom], Rgb([160, 160, 160]));
    for a in vane.retiring.iter().chain(&vane.arrows) {
        let y = bottom - a.current_height * (bottom - top);
        let len = s * 0.3;
        let tip = [pole_x - a.current_bearing.sin() * len, y - a.current_bearing.cos() * len * 0.25];
        canvas.line([pole_x, y], tip, a.color);
        canvas.circle(tip, 3.0, a.color);
    }
    canvas
}
