//! Procedural digit sprites drawn as anti-aliased strokes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Square or rectangular grayscale image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sprite {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
    pub label: Option<u8>,
}

impl Sprite {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }

    pub fn mass(&self) -> f64 {
        self.data.iter().sum()
    }
}

type Point = (f64, f64);

/// Points on an ellipse arc in a y-down unit box; angles in degrees, 90° is
/// straight down.
fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from: f64, to: f64) -> Vec<Point> {
    let n = (((to - from).abs() / 10.0).ceil() as usize).max(2);
    (0..=n)
        .map(|i| {
            let a = (from + (to - from) * i as f64 / n as f64).to_radians();
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

fn strokes(digit: u8) -> Vec<Vec<Point>> {
    match digit {
        0 => vec![arc(0.5, 0.5, 0.27, 0.38, 0.0, 360.0)],
        1 => vec![vec![(0.34, 0.26), (0.52, 0.1), (0.52, 0.9)]],
        2 => {
            let mut top = arc(0.5, 0.33, 0.22, 0.21, 180.0, 400.0);
            top.extend([(0.26, 0.88), (0.76, 0.88)]);
            vec![top]
        }
        3 => vec![
            arc(0.48, 0.3, 0.21, 0.19, 200.0, 450.0),
            arc(0.48, 0.69, 0.23, 0.2, 270.0, 520.0),
        ],
        4 => vec![vec![(0.64, 0.9), (0.64, 0.1), (0.22, 0.64), (0.8, 0.64)]],
        5 => {
            let mut s = vec![(0.73, 0.12), (0.33, 0.12), (0.3, 0.46)];
            s.extend(arc(0.5, 0.65, 0.23, 0.23, 215.0, 500.0));
            vec![s]
        }
        6 => vec![
            arc(0.5, 0.66, 0.22, 0.22, 0.0, 360.0),
            vec![(0.66, 0.11), (0.29, 0.62)],
        ],
        7 => vec![vec![(0.24, 0.12), (0.76, 0.12), (0.42, 0.9)]],
        8 => vec![
            arc(0.5, 0.3, 0.18, 0.18, 0.0, 360.0),
            arc(0.5, 0.7, 0.22, 0.2, 0.0, 360.0),
        ],
        _ => vec![
            arc(0.5, 0.34, 0.2, 0.2, 0.0, 360.0),
            vec![(0.7, 0.36), (0.62, 0.9)],
        ],
    }
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Renders digit `digit` (0–9) on a `size x size` canvas. `variant` 0 is the
/// canonical shape; other values apply a small seeded rotation and scale.
pub fn digit_glyph(digit: u8, size: usize, variant: u64) -> Result<Sprite> {
    if digit > 9 {
        return Err(Error::Config(format!("digit must be 0-9, got {digit}")));
    }
    if size < 4 {
        return Err(Error::Config(format!("sprite size must be at least 4, got {size}")));
    }
    let (rot, scale) = if variant == 0 {
        (0.0f64, 1.0)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(variant);
        (
            rng.gen_range(-8.0f64..8.0).to_radians(),
            rng.gen_range(0.9..1.05),
        )
    };
    let (sin, cos) = rot.sin_cos();
    let s = size as f64;
    let to_px = |(x, y): Point| {
        let (ux, uy) = (x - 0.5, y - 0.5);
        (
            (0.5 + scale * (cos * ux - sin * uy)) * s,
            (0.5 + scale * (sin * ux + cos * uy)) * s,
        )
    };
    let lines: Vec<Vec<Point>> = strokes(digit)
        .into_iter()
        .map(|l| l.into_iter().map(to_px).collect())
        .collect();
    let half_width = (0.08 * s).max(0.6);
    let mut data = vec![0.0; size * size];
    for r in 0..size {
        for c in 0..size {
            let p = (c as f64 + 0.5, r as f64 + 0.5);
            let d = lines
                .iter()
                .flat_map(|l| l.windows(2).map(move |w| segment_distance(p, w[0], w[1])))
                .fold(f64::INFINITY, f64::min);
            data[r * size + c] = (half_width + 0.5 - d).clamp(0.0, 1.0);
        }
    }
    Ok(Sprite {
        height: size,
        width: size,
        data,
        label: Some(digit),
    })
}
