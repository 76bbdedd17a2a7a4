//! Frame-index samplers for training and evaluation sequences.
//!
//! Regular spacing takes `n` consecutive frames ending at the labeled frame.
//! Random spacing walks backwards from the labeled frame with gaps drawn
//! uniformly from `[1, delta_max]`, producing frame drops and jitter.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::raster::{DepthImage, LabelImage, RgbImage};

/// Redraws allowed before random spacing falls back to regular spacing.
pub const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    #[default]
    Regular,
    Random,
}

impl std::str::FromStr for Spacing {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regular" | "reg" => Ok(Spacing::Regular),
            "random" | "rnd" => Ok(Spacing::Random),
            other => Err(Error::Config(format!("unknown spacing {other:?}"))),
        }
    }
}

impl std::fmt::Display for Spacing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Spacing::Regular => "regular",
            Spacing::Random => "random",
        })
    }
}

fn check_history(last_index: usize, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("sequence length must be at least 1".into()));
    }
    if last_index + 1 < n {
        return Err(Error::ShortSequence {
            needed: n,
            available: last_index + 1,
        });
    }
    Ok(())
}

/// `[last_index − n + 1, …, last_index]`.
pub fn sample_regular(last_index: usize, n: usize) -> Result<Vec<usize>> {
    check_history(last_index, n)?;
    Ok((last_index + 1 - n..=last_index).collect())
}

/// Random spacing ending at `last_index`. Draws that would index before
/// frame 0 are rejected and redrawn; after [`MAX_REDRAWS`] failures the
/// regular sequence is returned.
pub fn sample_random(last_index: usize, n: usize, delta_max: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    check_history(last_index, n)?;
    if delta_max == 0 {
        return Err(Error::Config("delta_max must be at least 1".into()));
    }
    for _ in 0..MAX_REDRAWS {
        let mut idx = vec![0usize; n];
        idx[n - 1] = last_index;
        let mut ok = true;
        for i in (0..n - 1).rev() {
            let gap = rng.gen_range(1..=delta_max);
            match idx[i + 1].checked_sub(gap) {
                Some(v) => idx[i] = v,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(idx);
        }
    }
    sample_regular(last_index, n)
}

pub fn sample(spacing: Spacing, last_index: usize, n: usize, delta_max: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    match spacing {
        Spacing::Regular => sample_regular(last_index, n),
        Spacing::Random => sample_random(last_index, n, delta_max, rng),
    }
}

/// One RGB-D frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub rgb: RgbImage,
    pub depth: DepthImage,
}

/// `N` frames ending at a labeled frame.
#[derive(Debug, Clone)]
pub struct SequenceSample {
    pub frame_indices: Vec<usize>,
    pub frames: Vec<Frame>,
    /// Robot pose of every frame.
    pub poses: Vec<Pose>,
    /// Labels of the last frame.
    pub labels: LabelImage,
}

impl SequenceSample {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Config("empty sequence".into()));
        }
        if self.frames.len() != self.poses.len() || self.frames.len() != self.frame_indices.len() {
            return Err(Error::Shape(format!(
                "{} frames, {} poses, {} indices",
                self.frames.len(),
                self.poses.len(),
                self.frame_indices.len()
            )));
        }
        if self.frame_indices.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("frame indices must be strictly increasing".into()));
        }
        Ok(())
    }
}
