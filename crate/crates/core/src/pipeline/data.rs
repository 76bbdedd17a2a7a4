use std::cell::RefCell;
use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::io::Dataset;
use crate::odometry::{refine_with_depth, IcpConfig, PoseSource};
use crate::sequencing::{sample, SequenceSample, Spacing};

/// Contiguous train/validation/test partition of the labeled frames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Subset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Subset::Train),
            "val" => Ok(Subset::Val),
            "test" => Ok(Subset::Test),
            other => Err(Error::Config(format!("unknown subset {other:?}"))),
        }
    }
}

impl Split {
    /// Splits labeled frames with at least `n − 1` frames of history along
    /// the trajectory: the first 60% train, the next 20% validate, the rest
    /// test. Contiguous blocks keep the subsets on different ground.
    pub fn along_trajectory(ds: &Dataset, n: usize) -> Result<Self> {
        let usable: Vec<usize> = ds.labeled_indices().into_iter().filter(|&i| i + 1 >= n).collect();
        if usable.len() < 3 {
            return Err(Error::EmptyDataset);
        }
        let a = (usable.len() * 3 / 5).max(1);
        let b = (usable.len() * 4 / 5).max(a + 1);
        Ok(Self {
            train: usable[..a].to_vec(),
            val: usable[a..b].to_vec(),
            test: usable[b..].to_vec(),
        })
    }

    pub fn subset(&self, s: Subset) -> &[usize] {
        match s {
            Subset::Train => &self.train,
            Subset::Val => &self.val,
            Subset::Test => &self.test,
        }
    }
}

/// Supplies robot poses for frame sequences from a chosen source. Refined
/// relative poses are computed once per frame pair and cached.
pub struct PoseProvider<'a> {
    ds: &'a Dataset,
    source: PoseSource,
    icp: IcpConfig,
    cache: RefCell<HashMap<(usize, usize), Pose>>,
}

impl<'a> PoseProvider<'a> {
    pub fn new(ds: &'a Dataset, source: PoseSource) -> Result<Self> {
        if source == PoseSource::GroundTruth && ds.ground_truth.is_none() {
            return Err(Error::Config("dataset has no ground-truth trajectory".into()));
        }
        Ok(Self {
            ds,
            source,
            icp: IcpConfig::default(),
            cache: RefCell::new(HashMap::new()),
        })
    }

    pub fn source(&self) -> PoseSource {
        self.source
    }

    /// Wheel-initialized ICP estimate of the robot motion from frame `i` to `j`.
    pub fn refined_relative(&self, i: usize, j: usize) -> Pose {
        if let Some(p) = self.cache.borrow().get(&(i, j)) {
            return *p;
        }
        let init = self.ds.wheel[i].inverse().compose(&self.ds.wheel[j]);
        let p = match refine_with_depth(
            &init,
            &self.ds.frames[i].depth,
            &self.ds.frames[j].depth,
            &self.ds.intrinsics,
            &self.ds.extrinsics,
            &self.icp,
        ) {
            Ok(r) => r.pose,
            Err(e) => {
                log::warn!("ICP refinement of frames {i}->{j} failed ({e}); using wheel odometry");
                init
            }
        };
        self.cache.borrow_mut().insert((i, j), p);
        p
    }

    /// Robot poses of `indices`. Only relative motion between consecutive
    /// entries is meaningful for refined poses.
    pub fn poses(&self, indices: &[usize]) -> Result<Vec<Pose>> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.ds.len()) {
            return Err(Error::Config(format!("frame {bad} outside the dataset")));
        }
        Ok(match self.source {
            PoseSource::GroundTruth => {
                let gt = self.ds.ground_truth.as_ref().expect("checked in new");
                indices.iter().map(|&i| gt[i]).collect()
            }
            PoseSource::Wheel => indices.iter().map(|&i| self.ds.wheel[i]).collect(),
            PoseSource::Refined => {
                let mut out = Vec::with_capacity(indices.len());
                for (n, &i) in indices.iter().enumerate() {
                    let p = match n {
                        0 => self.ds.wheel[i],
                        _ => out[n - 1] * self.refined_relative(indices[n - 1], i),
                    };
                    out.push(p);
                }
                out
            }
        })
    }
}

/// How sequences are drawn for training or evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub length: usize,
    pub spacing: Spacing,
    pub delta_max: usize,
}

impl Default for SequenceSpec {
    fn default() -> Self {
        Self {
            length: 5,
            spacing: Spacing::Regular,
            delta_max: 6,
        }
    }
}

/// Draws one sequence per labeled frame in `last_indices`, in order.
pub fn draw_samples(
    ds: &Dataset,
    last_indices: &[usize],
    spec: &SequenceSpec,
    poses: &PoseProvider<'_>,
    rng: &mut impl Rng,
) -> Result<Vec<SequenceSample>> {
    last_indices
        .iter()
        .map(|&last| {
            let labels = ds
                .labels
                .get(&last)
                .ok_or_else(|| Error::Config(format!("frame {last} is not labeled")))?
                .clone();
            let frame_indices = sample(spec.spacing, last, spec.length, spec.delta_max, rng)?;
            let sample = SequenceSample {
                frames: frame_indices.iter().map(|&i| ds.frames[i].clone()).collect(),
                poses: poses.poses(&frame_indices)?,
                frame_indices,
                labels,
            };
            sample.validate()?;
            Ok(sample)
        })
        .collect()
}
