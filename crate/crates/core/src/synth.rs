//! Synthetic sequences with exact ground truth: a smooth periodic texture
//! translated at constant velocity on a torus.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::frame::Frame;
use crate::tasks::{DataError, Sequence};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub texture_seed: u64,
    /// Pixels per frame, `(dx, dy)`.
    pub velocity: (f64, f64),
    pub length: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl SynthSpec {
    pub fn new(texture_seed: u64, velocity: (f64, f64), height: usize, width: usize) -> Self {
        Self {
            texture_seed,
            velocity,
            length: 7,
            height,
            width,
            channels: 1,
        }
    }

    pub fn with_channels(mut self, channels: usize) -> Self {
        self.channels = channels;
        self
    }

    pub fn with_length(mut self, length: usize) -> Self {
        self.length = length;
        self
    }

    fn validate(&self) -> Result<(), DataError> {
        let (dx, dy) = self.velocity;
        if self.height == 0
            || self.width == 0
            || !self.height.is_multiple_of(4)
            || !self.width.is_multiple_of(4)
        {
            return Err(DataError::Synth(format!(
                "size {}x{} must be a positive multiple of 4",
                self.height, self.width
            )));
        }
        if !(dx.is_finite() && dy.is_finite())
            || dx.abs() > self.width as f64 / 8.0
            || dy.abs() > self.height as f64 / 8.0
        {
            return Err(DataError::Synth(format!(
                "velocity ({dx}, {dy}) exceeds one eighth of the frame size {}x{}",
                self.height, self.width
            )));
        }
        if self.channels == 0 || self.length == 0 {
            return Err(DataError::Synth("channels and length must be >= 1".into()));
        }
        Ok(())
    }
}

/// Sum of random low-frequency cosines, periodic on the `h × w` torus and
/// rescaled into `[0.1, 0.9]`.
pub fn texture(h: usize, w: usize, rng: &mut impl Rng) -> Vec<f64> {
    let max_freq = (h.min(w) / 8).max(2) as i64;
    let mut waves = Vec::new();
    for _ in 0..12 {
        let fy = rng.gen_range(-max_freq..=max_freq);
        let fx = rng.gen_range(-max_freq..=max_freq);
        if fy == 0 && fx == 0 {
            continue;
        }
        let amp = 1.0 / ((fy * fy + fx * fx) as f64).sqrt();
        waves.push((fy as f64, fx as f64, amp, rng.gen_range(0.0..2.0 * PI)));
    }
    let mut t = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            t[y * w + x] = waves.iter().fold(0.0, |acc, &(fy, fx, a, ph)| {
                acc + a
                    * (2.0 * PI * (fy * y as f64 / h as f64 + fx * x as f64 / w as f64) + ph).cos()
            });
        }
    }
    let lo = t.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    t.iter_mut().for_each(|v| *v = 0.1 + 0.8 * (*v - lo) / span);
    t
}

/// Bilinear sample of a periodic grid at `(y, x)`.
pub fn sample_wrapped(grid: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let wrap = |v: f64, n: usize| (v as i64).rem_euclid(n as i64) as usize;
    let (ya, yb) = (wrap(y0, h), wrap(y0 + 1.0, h));
    let (xa, xb) = (wrap(x0, w), wrap(x0 + 1.0, w));
    let top = (1.0 - fx) * grid[ya * w + xa] + fx * grid[ya * w + xb];
    let bottom = (1.0 - fx) * grid[yb * w + xa] + fx * grid[yb * w + xb];
    (1.0 - fy) * top + fy * bottom
}

/// Frame `t` is the texture displaced by `t · velocity`.
pub fn synth_sequence(spec: &SynthSpec) -> Result<Sequence, DataError> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.texture_seed);
    let textures: Vec<Vec<f64>> = (0..spec.channels)
        .map(|_| texture(h, w, &mut rng))
        .collect();
    let (dx, dy) = spec.velocity;
    (0..spec.length)
        .map(|t| {
            let (oy, ox) = (t as f64 * dy, t as f64 * dx);
            let mut data = Vec::with_capacity(spec.channels * h * w);
            for tex in &textures {
                for y in 0..h {
                    for x in 0..w {
                        data.push(sample_wrapped(tex, h, w, y as f64 - oy, x as f64 - ox));
                    }
                }
            }
            Frame::new(spec.channels, h, w, data)
                .map(Arc::new)
                .map_err(|e| DataError::Synth(e.to_string()))
        })
        .collect()
}

/// Parameters for a family of random synthetic sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthFamily {
    pub count: usize,
    /// Velocities are drawn uniformly from `[-range, range]` per axis.
    pub velocity_range: f64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub length: usize,
    pub seed: u64,
}

impl SynthFamily {
    /// Specs for every member; deterministic under `seed`.
    pub fn specs(&self) -> Vec<SynthSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.count)
            .map(|_| {
                let r = self.velocity_range;
                let dx = if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
                let dy = if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
                SynthSpec {
                    texture_seed: rng.gen(),
                    velocity: (dx, dy),
                    length: self.length,
                    height: self.height,
                    width: self.width,
                    channels: self.channels,
                }
            })
            .collect()
    }

    pub fn generate(&self) -> Result<Vec<Sequence>, DataError> {
        if self.count == 0 {
            return Err(DataError::EmptyDataset);
        }
        self.specs().iter().map(synth_sequence).collect()
    }
}
