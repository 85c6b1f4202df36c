use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};
use crate::velocity::LatentVideo;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Motif {
    /// Axis-aligned square of side `size`.
    MovingSquare { size: usize },
    /// Disc of the given radius, centred at `start + 0.5`.
    MovingDisc { radius: usize },
    /// i.i.d. standard normal values; no object.
    StaticNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticVideoSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub motif: Motif,
    /// Top-left corner (square) or centre (disc) on frame 0, `(row, col)`.
    pub start: (usize, usize),
    /// Displacement per frame in pixels, `(rows, cols)`.
    pub velocity: (i64, i64),
    pub background: f32,
    pub foreground: f32,
    /// Standard deviation of the seeded texture added to every value.
    pub texture: f32,
    pub seed: u64,
}

impl Default for SyntheticVideoSpec {
    fn default() -> Self {
        Self {
            frames: 4,
            height: 8,
            width: 8,
            channels: 4,
            motif: Motif::MovingSquare { size: 3 },
            start: (1, 1),
            velocity: (0, 1),
            background: 0.2,
            foreground: 0.8,
            texture: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticVideoSpec {
    fn position(&self, frame: usize) -> (i64, i64) {
        let f = frame as i64;
        (
            self.start.0 as i64 + f * self.velocity.0,
            self.start.1 as i64 + f * self.velocity.1,
        )
    }

    fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::config("video extents must be positive"));
        }
        let (h, w) = (self.height as i64, self.width as i64);
        for f in 0..self.frames {
            let (r, c) = self.position(f);
            let inside = match self.motif {
                Motif::MovingSquare { size } => {
                    let s = size as i64;
                    r >= 0 && c >= 0 && r + s <= h && c + s <= w
                }
                Motif::MovingDisc { radius } => {
                    let rad = radius as i64;
                    r - rad >= 0 && c - rad >= 0 && r + rad < h && c + rad < w
                }
                Motif::StaticNoise => true,
            };
            if !inside {
                return Err(Error::config(format!(
                    "motif leaves the {h}x{w} frame at frame {f} (position {r}, {c})"
                )));
            }
        }
        Ok(())
    }

    fn covers(&self, frame: usize, row: usize, col: usize) -> bool {
        let (r0, c0) = self.position(frame);
        let (r, c) = (row as i64, col as i64);
        match self.motif {
            Motif::MovingSquare { size } => {
                let s = size as i64;
                r >= r0 && r < r0 + s && c >= c0 && c < c0 + s
            }
            Motif::MovingDisc { radius } => {
                let (dr, dc) = (r - r0, c - c0);
                dr * dr + dc * dc <= (radius * radius) as i64
            }
            Motif::StaticNoise => false,
        }
    }
}

/// `[frames, height, width, channels]` latent with a translating motif.
pub fn gen_synthetic_video(spec: &SyntheticVideoSpec) -> Result<LatentVideo> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let (f, h, w, c) = (spec.frames, spec.height, spec.width, spec.channels);
    let mut data = Vec::with_capacity(f * h * w * c);
    if spec.motif == Motif::StaticNoise {
        data.extend((0..f * h * w * c).map(|_| rng.next_gaussian() as f32));
        return Tensor::new(vec![f, h, w, c], data);
    }
    // texture is drawn once so that a static motif yields identical frames
    let texture: Vec<f32> = (0..h * w * c)
        .map(|_| spec.texture * rng.next_gaussian() as f32)
        .collect();
    for fi in 0..f {
        for r in 0..h {
            for col in 0..w {
                let level = if spec.covers(fi, r, col) {
                    spec.foreground
                } else {
                    spec.background
                };
                let base = (r * w + col) * c;
                data.extend((0..c).map(|ch| level + texture[base + ch]));
            }
        }
    }
    Tensor::new(vec![f, h, w, c], data)
}
