//! Synthetic datasets, file formats and distance metrics.

pub mod dataset;
pub mod ply;
pub mod synth;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::numeric::percentile_linear;

pub use dataset::{read_material, write_material, Dataset, DatasetMeta};
pub use synth::{synth_object, synth_sequence, ForceEvent, ForceScript, MaterialRegion, ObjectSpec, Region, SequenceSpec, Shape};

/// Distance statistics in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    /// Mean over frames of the per-frame mean point distance.
    pub average_mm: f64,
    /// 95th percentile (linear interpolation) of the per-frame means.
    pub p95_mm: f64,
    /// Largest single point distance.
    pub max_mm: f64,
}

impl fmt::Display for DistanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "average {:.3} mm | 95% {:.3} mm | max {:.3} mm",
            self.average_mm, self.p95_mm, self.max_mm
        )
    }
}

/// Per-frame mean distances (mm) and the summary report.
pub fn evaluate_frames(
    simulated: &[PointCloud],
    observed: &[PointCloud],
    surface_mask: &[bool],
) -> Result<(DistanceReport, Vec<f64>)> {
    if simulated.is_empty() {
        return Err(Error::InvalidArgument("no frames to evaluate".into()));
    }
    if simulated.len() != observed.len() {
        return Err(Error::size("observed frames", simulated.len(), observed.len()));
    }
    let count = surface_mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::InvalidArgument("surface mask selects no points".into()));
    }
    let per_frame: Vec<(f64, f64)> = simulated
        .par_iter()
        .zip(observed)
        .enumerate()
        .map(|(t, (s, o))| {
            for (what, c) in [("simulated", s), ("observed", o)] {
                if c.len() != surface_mask.len() {
                    return Err(Error::size(format!("{what} frame {t}"), surface_mask.len(), c.len()));
                }
            }
            let (sum, max) = s
                .positions()
                .iter()
                .zip(o.positions())
                .zip(surface_mask)
                .filter(|(_, &m)| m)
                .map(|((a, b), _)| (a - b).norm())
                .fold((0.0, 0.0f64), |(s, m), d| (s + d, m.max(d)));
            Ok((sum / count as f64 * 1e3, max * 1e3))
        })
        .collect::<Result<_>>()?;
    let means: Vec<f64> = per_frame.iter().map(|p| p.0).collect();
    let report = DistanceReport {
        average_mm: means.iter().sum::<f64>() / means.len() as f64,
        p95_mm: percentile_linear(&means, 95.0).expect("non-empty"),
        max_mm: per_frame.iter().map(|p| p.1).fold(0.0, f64::max),
    };
    Ok((report, means))
}

pub fn evaluate(simulated: &[PointCloud], observed: &[PointCloud], surface_mask: &[bool]) -> Result<DistanceReport> {
    evaluate_frames(simulated, observed, surface_mask).map(|r| r.0)
}
