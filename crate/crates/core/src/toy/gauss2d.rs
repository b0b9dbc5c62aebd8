//! Eight Gaussian modes on a circle of radius 4.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;

use super::Prompt;
use crate::error::{Error, Result};
use crate::rng::{self, LabRng};

pub const NUM_MODES: usize = 8;
pub const RADIUS: f64 = 4.0;
pub const MODE_STD: f64 = 0.15;
pub const ALL_TOKEN: &str = "all8";

pub fn mode_token(k: usize) -> String {
    format!("mode{k}")
}

pub fn mode_mean(k: usize) -> [f64; 2] {
    let a = 2.0 * PI * k as f64 / NUM_MODES as f64;
    [RADIUS * a.cos(), RADIUS * a.sin()]
}

pub fn mode_means() -> Vec<[f64; 2]> {
    (0..NUM_MODES).map(mode_mean).collect()
}

/// Modes a single token selects.
pub fn modes_for_token(token: &str) -> Result<Vec<usize>> {
    if token == ALL_TOKEN {
        return Ok((0..NUM_MODES).collect());
    }
    token
        .strip_prefix("mode")
        .and_then(|k| k.parse::<usize>().ok())
        .filter(|&k| k < NUM_MODES && token == mode_token(k))
        .map(|k| vec![k])
        .ok_or_else(|| Error::UnknownToken(token.to_string()))
}

/// Modes selected by a prompt: the intersection over its tokens.
pub fn modes_for_prompt(prompt: &Prompt) -> Result<Vec<usize>> {
    let mut modes: Vec<usize> = (0..NUM_MODES).collect();
    for t in prompt.tokens() {
        let m = modes_for_token(t)?;
        modes.retain(|k| m.contains(k));
    }
    if modes.is_empty() || prompt.tokens().is_empty() {
        return Err(Error::Contradictory(prompt.to_string()));
    }
    Ok(modes)
}

fn draw(modes: &[usize], rng: &mut LabRng) -> [f64; 2] {
    let k = modes[rng.random_range(0..modes.len())];
    let m = mode_mean(k);
    [m[0] + MODE_STD * rng::normal(rng), m[1] + MODE_STD * rng::normal(rng)]
}

pub(crate) fn sample_one(prompt: &Prompt, rng: &mut LabRng) -> Result<Vec<f64>> {
    let modes = modes_for_prompt(prompt)?;
    Ok(draw(&modes, rng).to_vec())
}

/// `n` points from the modes `cond` selects (`modeK` or `all8`).
pub fn gen_gauss2d(cond: &str, n: usize, seed: u64) -> Result<Array2<f64>> {
    let modes = modes_for_token(cond)?;
    let mut r = rng::seeded(seed);
    let mut out = Array2::zeros((n, 2));
    for i in 0..n {
        let p = draw(&modes, &mut r);
        out[[i, 0]] = p[0];
        out[[i, 1]] = p[1];
    }
    Ok(out)
}

/// Index of the nearest mode mean.
pub fn nearest_mode(p: [f64; 2]) -> usize {
    let mut best = (0, f64::INFINITY);
    for k in 0..NUM_MODES {
        let m = mode_mean(k);
        let d = (p[0] - m[0]).powi(2) + (p[1] - m[1]).powi(2);
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}
