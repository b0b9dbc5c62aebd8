//! Procedurally rasterized 16×16 grayscale shapes.
//!
//! A prompt picks any subset of four attributes: shape, size, position and
//! color (rendered as a gray level). Unspecified attributes and the exact
//! extent within a size class are drawn from the seeded stream.
//!
//! Shape centers sit on integer coordinates and pixel centers on
//! half-integers, so squares and crosses are exactly symmetric under 90°
//! rotation about their center.

use std::io::Write;

use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::Rng;

use super::Prompt;
use crate::error::{Error, Result};
use crate::rng::{self, LabRng};

pub const SIDE: usize = 16;
pub const PIXELS: usize = SIDE * SIDE;

pub const SHAPES: [&str; 3] = ["circle", "square", "cross"];
pub const SIZES: [&str; 2] = ["small", "large"];
pub const POSITIONS: [&str; 5] = ["center", "topleft", "topright", "bottomleft", "bottomright"];
pub const COLORS: [&str; 3] = ["red", "green", "blue"];

const SMALL_EXTENTS: [f64; 3] = [2.0, 2.5, 3.0];
const LARGE_EXTENTS: [f64; 2] = [4.5, 5.0];
const CROSS_HALF_WIDTH: f64 = 1.0;

pub fn all_tokens() -> Vec<&'static str> {
    SHAPES
        .iter()
        .chain(SIZES.iter())
        .chain(POSITIONS.iter())
        .chain(COLORS.iter())
        .copied()
        .collect()
}

pub fn full_prompts() -> Vec<Prompt> {
    let mut out = Vec::new();
    for s in SHAPES {
        for z in SIZES {
            for p in POSITIONS {
                for c in COLORS {
                    out.push(Prompt::new([s, z, p, c]));
                }
            }
        }
    }
    out
}

/// Parsed attribute constraints; `None` means unconstrained.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ShapeSpec {
    pub shape: Option<usize>,
    pub size: Option<usize>,
    pub position: Option<usize>,
    pub color: Option<usize>,
}

impl ShapeSpec {
    pub fn parse(prompt: &Prompt) -> Result<Self> {
        let mut spec = Self::default();
        for t in prompt.tokens() {
            let (slot, idx, kind) = if let Some(i) = SHAPES.iter().position(|s| s == t) {
                (&mut spec.shape, i, "shape")
            } else if let Some(i) = SIZES.iter().position(|s| s == t) {
                (&mut spec.size, i, "size")
            } else if let Some(i) = POSITIONS.iter().position(|s| s == t) {
                (&mut spec.position, i, "position")
            } else if let Some(i) = COLORS.iter().position(|s| s == t) {
                (&mut spec.color, i, "color")
            } else {
                return Err(Error::UnknownToken(t.clone()));
            };
            match *slot {
                Some(prev) if prev != idx => {
                    return Err(Error::Contradictory(format!("two {kind} tokens in `{prompt}`")));
                }
                _ => *slot = Some(idx),
            }
        }
        Ok(spec)
    }
}

fn center(position: usize) -> (f64, f64) {
    match position {
        0 => (8.0, 8.0),
        1 => (5.0, 5.0),
        2 => (11.0, 5.0),
        3 => (5.0, 11.0),
        _ => (11.0, 11.0),
    }
}

fn intensity(color: usize) -> f64 {
    [1.0, 0.7, 0.4][color]
}

/// Fully resolved drawing parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drawing {
    pub shape: usize,
    pub cx: f64,
    pub cy: f64,
    pub extent: f64,
    pub level: f64,
}

impl Drawing {
    pub fn resolve(spec: &ShapeSpec, rng: &mut LabRng) -> Self {
        let mut pick = |v: Option<usize>, n: usize| v.unwrap_or_else(|| rng.random_range(0..n));
        let shape = pick(spec.shape, SHAPES.len());
        let size = pick(spec.size, SIZES.len());
        let position = pick(spec.position, POSITIONS.len());
        let color = pick(spec.color, COLORS.len());
        let extents: &[f64] = if size == 0 { &SMALL_EXTENTS } else { &LARGE_EXTENTS };
        let extent = *extents.choose(rng).expect("non-empty");
        let (cx, cy) = center(position);
        Self {
            shape,
            cx,
            cy,
            extent,
            level: intensity(color),
        }
    }

    fn covers(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = ((x - self.cx).abs(), (y - self.cy).abs());
        let h = self.extent;
        match self.shape {
            0 => {
                let r = h + 0.5;
                dx * dx + dy * dy <= r * r
            }
            1 => dx <= h && dy <= h,
            _ => (dx <= h && dy <= CROSS_HALF_WIDTH) || (dy <= h && dx <= CROSS_HALF_WIDTH),
        }
    }

    /// Row-major pixels, background 0.
    pub fn rasterize(&self) -> Vec<f64> {
        let mut img = vec![0.0; PIXELS];
        for i in 0..SIDE {
            for j in 0..SIDE {
                if self.covers(j as f64 + 0.5, i as f64 + 0.5) {
                    img[i * SIDE + j] = self.level;
                }
            }
        }
        img
    }
}

pub(crate) fn render_one(prompt: &Prompt, rng: &mut LabRng) -> Result<Vec<f64>> {
    let spec = ShapeSpec::parse(prompt)?;
    Ok(Drawing::resolve(&spec, rng).rasterize())
}

/// `n` images for one prompt, values in `[0, 1]`.
pub fn gen_shapes16(prompt: &Prompt, n: usize, seed: u64) -> Result<Array2<f64>> {
    let spec = ShapeSpec::parse(prompt)?;
    let mut r = rng::seeded(seed);
    let mut out = Array2::zeros((n, PIXELS));
    for i in 0..n {
        let img = Drawing::resolve(&spec, &mut r).rasterize();
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&img[..]));
    }
    Ok(out)
}

/// Writes one image as binary PGM (P5, maxval 255).
pub fn write_pgm(out: &mut impl Write, pixels: &[f64]) -> std::io::Result<()> {
    write!(out, "P5\n{SIDE} {SIDE}\n255\n")?;
    let bytes: Vec<u8> = pixels
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    out.write_all(&bytes)
}
