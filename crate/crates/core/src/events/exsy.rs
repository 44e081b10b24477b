use rand::Rng;
use serde::{Deserialize, Serialize};

use super::FPS;
use crate::error::{Error, Result};

/// Window shape: `x` included frames with `y` skipped frames between
/// neighbours.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExSy {
    pub x: usize,
    pub y: usize,
}

impl Default for ExSy {
    fn default() -> Self {
        Self { x: 4, y: 3 }
    }
}

impl ExSy {
    pub fn new(x: usize, y: usize) -> Result<Self> {
        let w = Self { x, y };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x == 0 {
            return Err(Error::Config("ExSy window needs at least one frame".into()));
        }
        Ok(())
    }

    /// Frames covered from the first to the last included frame:
    /// `x + (x − 1)·y`.
    pub fn span(&self) -> usize {
        self.x + self.x.saturating_sub(1) * self.y
    }

    /// Testing length in seconds, `(x + (x − 1)·y) / 30`.
    pub fn testing_length_secs(&self) -> f64 {
        self.span() as f64 / FPS as f64
    }

    pub fn stride(&self) -> usize {
        self.y + 1
    }

    /// Number of admissible start positions in a sequence of `n_frames`.
    pub fn valid_starts(&self, n_frames: usize) -> Result<usize> {
        self.validate()?;
        let span = self.span();
        if n_frames < span {
            return Err(Error::InfeasibleWindow {
                needed: span,
                available: n_frames,
            });
        }
        Ok(n_frames - span + 1)
    }

    pub fn indices(&self, start: usize) -> Vec<usize> {
        (0..self.x).map(|i| start + i * self.stride()).collect()
    }

    pub fn label(&self) -> String {
        format!("E{}S{}", self.x, self.y)
    }
}

/// A placed window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExSyWindow {
    pub x: usize,
    pub y: usize,
    pub start: usize,
}

impl ExSyWindow {
    pub fn testing_length_secs(&self) -> f64 {
        ExSy {
            x: self.x,
            y: self.y,
        }
        .testing_length_secs()
    }
}

/// Draws a start uniformly among positions where the window fits and
/// returns the selected frame indices.
pub fn exsy_sample(
    n_frames: usize,
    shape: ExSy,
    rng: &mut impl Rng,
) -> Result<(ExSyWindow, Vec<usize>)> {
    let starts = shape.valid_starts(n_frames)?;
    let start = rng.gen_range(0..starts);
    Ok((
        ExSyWindow {
            x: shape.x,
            y: shape.y,
            start,
        },
        shape.indices(start),
    ))
}
