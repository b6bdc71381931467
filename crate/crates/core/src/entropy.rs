//! Discretized SE(2) pose distributions and their Shannon entropy.
//!
//! The tray `[0, a] x [0, b]` and the orientation circle are cut into
//! `alpha x beta x gamma` equal bins. Bins are half-open `[edge, next)`,
//! except that the top edge of each axis is folded into the last bin, so a
//! pose lying exactly on the far wall is still counted. Orientations are
//! normalized to `[0, 2π)` before binning.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, Pose};
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EntropyError {
    #[error("voxel grid needs positive tray size and bin counts")]
    BadGrid,
    #[error("pose {0} lies outside the tray")]
    OutOfDomain(Pose),
    #[error("cannot estimate a distribution from zero poses")]
    Empty,
    #[error("histograms are over different grids")]
    GridMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoxelGrid {
    pub a: f64,
    pub b: f64,
    /// bins along x
    pub alpha: usize,
    /// bins along y
    pub beta: usize,
    /// bins along theta
    pub gamma: usize,
}

impl VoxelGrid {
    pub fn new(a: f64, b: f64, alpha: usize, beta: usize, gamma: usize) -> Result<Self, EntropyError> {
        let g = VoxelGrid {
            a,
            b,
            alpha,
            beta,
            gamma,
        };
        g.validate()?;
        Ok(g)
    }

    /// `n x n x n` bins over an `a x b` tray.
    pub fn cubic(a: f64, b: f64, n: usize) -> Result<Self, EntropyError> {
        Self::new(a, b, n, n, n)
    }

    pub fn validate(&self) -> Result<(), EntropyError> {
        let ok = self.a > 0.0
            && self.b > 0.0
            && self.a.is_finite()
            && self.b.is_finite()
            && self.alpha > 0
            && self.beta > 0
            && self.gamma > 0;
        if ok {
            Ok(())
        } else {
            Err(EntropyError::BadGrid)
        }
    }

    pub fn total_voxels(&self) -> usize {
        self.alpha * self.beta * self.gamma
    }

    /// Positional resolution along x (equals the y resolution on a square grid).
    pub fn eps_p(&self) -> f64 {
        self.a / self.alpha as f64
    }

    pub fn eps_p_y(&self) -> f64 {
        self.b / self.beta as f64
    }

    pub fn eps_r(&self) -> f64 {
        TAU / self.gamma as f64
    }

    /// `(j, k, m)` bin coordinates of a pose.
    pub fn bin(&self, pose: &Pose) -> Result<(usize, usize, usize), EntropyError> {
        let inside = (0.0..=self.a).contains(&pose.x) && (0.0..=self.b).contains(&pose.y);
        if !inside || !pose.theta.is_finite() {
            return Err(EntropyError::OutOfDomain(*pose));
        }
        let theta = normalize_angle(pose.theta);
        let j = ((pose.x / self.eps_p()).floor() as usize).min(self.alpha - 1);
        let k = ((pose.y / self.eps_p_y()).floor() as usize).min(self.beta - 1);
        let m = ((theta / self.eps_r()).floor() as usize).min(self.gamma - 1);
        Ok((j, k, m))
    }

    pub fn voxel_index(&self, pose: &Pose) -> Result<usize, EntropyError> {
        let (j, k, m) = self.bin(pose)?;
        Ok((j * self.beta + k) * self.gamma + m)
    }
}

/// Free-function form of [`VoxelGrid::voxel_index`].
pub fn voxel_index(pose: &Pose, grid: &VoxelGrid) -> Result<usize, EntropyError> {
    grid.voxel_index(pose)
}

/// Occupancy counts of poses over a voxel grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoseHistogram {
    grid_dims: (usize, usize, usize),
    counts: Vec<u64>,
    total: u64,
}

impl PoseHistogram {
    pub fn empty(grid: &VoxelGrid) -> Self {
        PoseHistogram {
            grid_dims: (grid.alpha, grid.beta, grid.gamma),
            counts: vec![0; grid.total_voxels()],
            total: 0,
        }
    }

    /// Histogram straight from raw counts (e.g. synthetic distributions).
    pub fn from_counts(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        PoseHistogram {
            grid_dims: (counts.len(), 1, 1),
            counts,
            total,
        }
    }

    pub fn add(&mut self, voxel: usize) {
        self.counts[voxel] += 1;
        self.total += 1;
    }

    /// Adds another histogram's counts into this one.
    pub fn merge(&mut self, other: &PoseHistogram) -> Result<(), EntropyError> {
        if self.counts.len() != other.counts.len() || self.grid_dims != other.grid_dims {
            return Err(EntropyError::GridMismatch);
        }
        for (c, o) in self.counts.iter_mut().zip(&other.counts) {
            *c += o;
        }
        self.total += other.total;
        Ok(())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Number of poses, `M`.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn occupied(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Empirical probability of each voxel, `counts / M`.
    pub fn frequencies(&self) -> Vec<f64> {
        let m = self.total as f64;
        self.counts.iter().map(|&c| c as f64 / m).collect()
    }
}

pub fn estimate_distribution(poses: &[Pose], grid: &VoxelGrid) -> Result<PoseHistogram, EntropyError> {
    if poses.is_empty() {
        return Err(EntropyError::Empty);
    }
    let mut hist = PoseHistogram::empty(grid);
    for p in poses {
        hist.add(grid.voxel_index(p)?);
    }
    Ok(hist)
}

/// Shannon entropy in bits, with `0 log 0 = 0`. An empty histogram has 0 bits.
pub fn entropy_bits(hist: &PoseHistogram) -> f64 {
    entropy_of_counts(hist.counts(), hist.total())
}

fn entropy_of_counts(counts: &[u64], total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let m = total as f64;
    let h = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let f = c as f64 / m;
            -f * f.log2()
        })
        .sum::<f64>();
    // a single occupied voxel gives -1*log2(1) = -0.0
    h.max(0.0)
}

/// Trials suggested by the Rice rule `K = 2 M^(1/3)` for `K` voxels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiceRule {
    pub trials: u64,
    pub unrounded: f64,
}

pub fn rice_rule_trials(total_voxels: usize) -> RiceRule {
    let unrounded = (total_voxels as f64 / 2.0).powi(3);
    RiceRule {
        trials: unrounded.round() as u64,
        unrounded,
    }
}

/// Mean and standard deviation of plug-in entropy estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteSampleEntropy {
    pub mean: f64,
    pub std_dev: f64,
    pub repetitions: usize,
}

impl FiniteSampleEntropy {
    pub fn std_error(&self) -> f64 {
        self.std_dev / (self.repetitions as f64).sqrt()
    }
}

/// Expected entropy of `samples` i.i.d. uniform draws over `total_voxels`
/// bins, estimated from `repetitions` Monte Carlo draws.
pub fn finite_sample_entropy(
    samples: usize,
    total_voxels: usize,
    repetitions: usize,
    seed: u64,
) -> FiniteSampleEntropy {
    let mut counts = vec![0u64; total_voxels.max(1)];
    let values: Vec<f64> = (0..repetitions)
        .map(|rep| {
            counts.iter_mut().for_each(|c| *c = 0);
            let mut rng = rng::stream_rng(seed, rng::stream::FINITE_SAMPLE, rep as u64);
            for _ in 0..samples {
                let v = rng.gen_range(0..counts.len());
                counts[v] += 1;
            }
            entropy_of_counts(&counts, samples as u64)
        })
        .collect();
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    FiniteSampleEntropy {
        mean,
        std_dev: var.sqrt(),
        repetitions,
    }
}

pub fn expected_finite_sample_entropy(samples: usize, total_voxels: usize, repetitions: usize, seed: u64) -> f64 {
    finite_sample_entropy(samples, total_voxels, repetitions, seed).mean
}

/// Entropy after each step of a sequence: `H^0 .. H^N`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EntropyTrend {
    pub values: Vec<f64>,
    pub occupied: Vec<usize>,
}

impl EntropyTrend {
    pub fn from_histograms(hists: &[PoseHistogram]) -> Self {
        EntropyTrend {
            values: hists.iter().map(entropy_bits).collect(),
            occupied: hists.iter().map(PoseHistogram::occupied).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `H^i - H^0` for every step.
    pub fn deltas(&self) -> Vec<f64> {
        let h0 = self.values.first().copied().unwrap_or(0.0);
        self.values.iter().map(|h| h - h0).collect()
    }
}
