//! Backward warp fields from a rest/deformed correspondence, interpolated with
//! subtract-min inverse distance weights over the K nearest nodes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{KnnIndex, PointCloud};
use crate::Vec3;

pub const DEFAULT_K: usize = 5;
const EXACT_HIT: f64 = 1e-9;
const MASK_SPACING_FACTOR: f64 = 2.0;

/// Mean distance from each point to its nearest other point.
pub fn mean_nearest_spacing(cloud: &PointCloud) -> f64 {
    let index = KnnIndex::new(cloud.positions());
    let total: f64 = cloud
        .positions()
        .iter()
        .map(|p| index.query(p, 2).map(|nn| nn[1].1).unwrap_or(0.0))
        .sum();
    total / cloud.len() as f64
}

/// A correspondence `rest[s] <-> deformed[s]` with kNN indices on both sides.
#[derive(Debug, Clone)]
pub struct WarpField {
    rest: PointCloud,
    deformed: PointCloud,
    k: usize,
    mask_radius: f64,
    rest_index: KnnIndex,
    deformed_index: KnnIndex,
    rest_eta: f64,
    deformed_eta: f64,
}

/// Result of one interpolation query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpSample {
    pub point: Vec3,
    /// Farther than the mask radius from every node.
    pub masked: bool,
    /// All K weights vanished and uniform weights were used.
    pub fallback: bool,
}

impl WarpField {
    /// `mask_radius = None` selects twice the mean nearest-neighbor spacing
    /// of the rest cloud.
    pub fn new(rest: PointCloud, deformed: PointCloud, k: usize, mask_radius: Option<f64>) -> Result<Self> {
        if rest.len() != deformed.len() {
            return Err(Error::size("deformed cloud", rest.len(), deformed.len()));
        }
        if k == 0 || k > rest.len() {
            return Err(Error::InvalidArgument(format!(
                "warp neighbor count must lie in 1..={}, got {k}",
                rest.len()
            )));
        }
        let mask_radius = mask_radius.unwrap_or_else(|| MASK_SPACING_FACTOR * mean_nearest_spacing(&rest));
        if !(mask_radius > 0.0 && mask_radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "mask radius must be positive, got {mask_radius}"
            )));
        }
        Ok(Self {
            rest_index: KnnIndex::new(rest.positions()),
            deformed_index: KnnIndex::new(deformed.positions()),
            rest_eta: EXACT_HIT * rest.diameter(),
            deformed_eta: EXACT_HIT * deformed.diameter(),
            rest,
            deformed,
            k,
            mask_radius,
        })
    }

    pub fn rest(&self) -> &PointCloud {
        &self.rest
    }

    pub fn deformed(&self) -> &PointCloud {
        &self.deformed
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mask_radius(&self) -> f64 {
        self.mask_radius
    }

    /// Maps a deformed-space point to rest space.
    pub fn warp_backward(&self, p: &Vec3) -> WarpSample {
        let (offset, (first, nearest), fallback) = interpolate(
            &self.deformed_index,
            p,
            self.k,
            self.deformed_eta,
            |s| self.rest.positions()[s] - self.deformed.positions()[s],
        );
        WarpSample {
            point: if nearest == 0.0 { self.rest.positions()[first] } else { p + offset },
            masked: nearest > self.mask_radius,
            fallback,
        }
    }

    /// Moves each dense rest point by the interpolated forward offsets
    /// `deformed - rest`. Points beyond the mask radius keep a zero offset
    /// and are flagged.
    pub fn upsample_forward(&self, dense_rest: &PointCloud) -> Result<(PointCloud, Vec<bool>)> {
        let (points, flags): (Vec<Vec3>, Vec<bool>) = dense_rest
            .positions()
            .par_iter()
            .map(|p| {
                let (offset, (first, nearest), _) = interpolate(&self.rest_index, p, self.k, self.rest_eta, |s| {
                    self.deformed.positions()[s] - self.rest.positions()[s]
                });
                if nearest > self.mask_radius {
                    (*p, true)
                } else if nearest == 0.0 {
                    (self.deformed.positions()[first], false)
                } else {
                    (p + offset, false)
                }
            })
            .unzip();
        Ok((PointCloud::new(points)?, flags))
    }

    pub fn warp_grid(&self, spec: &GridSpec) -> Result<WarpGrid> {
        spec.validate()?;
        let samples: Vec<WarpSample> = (0..spec.len())
            .into_par_iter()
            .map(|i| self.warp_backward(&spec.node(i)))
            .collect();
        Ok(WarpGrid {
            spec: spec.clone(),
            offsets: samples
                .iter()
                .enumerate()
                .map(|(i, s)| s.point - spec.node(i))
                .collect(),
            masked: samples.iter().map(|s| s.masked).collect(),
            fallbacks: samples.iter().filter(|s| s.fallback).count(),
        })
    }
}

/// Subtract-min IDW of `offset(s)` over the `k` nearest indexed points.
/// Returns the offset, the nearest node with its distance and whether the
/// uniform fallback was used. The sum is formed relative to the nearest offset, so a constant
/// field is reproduced without rounding.
fn interpolate(
    index: &KnnIndex,
    p: &Vec3,
    k: usize,
    eta: f64,
    offset: impl Fn(usize) -> Vec3,
) -> (Vec3, (usize, f64), bool) {
    let nn = index.query(p, k).expect("k validated at construction");
    let (first, nearest) = nn[0];
    let base = offset(first);
    if nearest < eta {
        return (base, nn[0], false);
    }
    let inv: Vec<f64> = nn.iter().map(|&(_, d)| 1.0 / d).collect();
    let min = inv.iter().copied().fold(f64::INFINITY, f64::min);
    let mut weights: Vec<f64> = inv.iter().map(|w| w - min).collect();
    let mut total: f64 = weights.iter().sum();
    let fallback = !(total > 0.0);
    if fallback {
        weights.iter_mut().for_each(|w| *w = 1.0);
        total = k as f64;
    }
    let correction = nn
        .iter()
        .zip(&weights)
        .skip(1)
        .fold(Vec3::zeros(), |acc, (&(s, _), w)| acc + (offset(s) - base) * (w / total));
    (base + correction, nn[0], fallback)
}

/// Axis-aligned sampling lattice; node `(i, j, k)` has flat index
/// `i + nx (j + ny k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub resolution: [usize; 3],
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if self.resolution[a] < 2 {
                return Err(Error::InvalidArgument(format!(
                    "grid resolution must be at least 2 per axis, got {:?}",
                    self.resolution
                )));
            }
            if !(self.max[a] > self.min[a]) || !self.min[a].is_finite() || !self.max[a].is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "degenerate grid bounds on axis {a}: [{}, {}]",
                    self.min[a], self.max[a]
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Position of the node with flat index `i`.
    pub fn node(&self, i: usize) -> Vec3 {
        let [nx, ny, _] = self.resolution;
        let ijk = [i % nx, (i / nx) % ny, i / (nx * ny)];
        Vec3::from_fn(|a, _| {
            let t = ijk[a] as f64 / (self.resolution[a] - 1) as f64;
            self.min[a] + t * (self.max[a] - self.min[a])
        })
    }
}

/// Backward offsets `p_c - p_d` and mask bits at every grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpGrid {
    pub spec: GridSpec,
    pub offsets: Vec<Vec3>,
    pub masked: Vec<bool>,
    pub fallbacks: usize,
}

pub const GRID_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub schema_version: u32,
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub resolution: [usize; 3],
    pub ordering: String,
    pub offsets: String,
    pub mask: String,
    pub nodes: usize,
    pub fallbacks: usize,
    pub data_file: String,
}

fn header_path(data: &Path) -> PathBuf {
    data.with_extension("json")
}

impl WarpGrid {
    /// Writes `path` (little-endian f64 offsets, x y z per node, followed by
    /// one u8 mask per node) and a JSON header next to it.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        let io = |e| Error::io(path, e);
        for o in &self.offsets {
            for c in o.iter() {
                w.write_all(&c.to_le_bytes()).map_err(io)?;
            }
        }
        let mask: Vec<u8> = self.masked.iter().map(|&m| m as u8).collect();
        w.write_all(&mask).map_err(io)?;
        w.flush().map_err(io)?;

        let header = GridHeader {
            schema_version: GRID_SCHEMA_VERSION,
            min: self.spec.min,
            max: self.spec.max,
            resolution: self.spec.resolution,
            ordering: "row_major_x_fastest".into(),
            offsets: "f64_le_xyz".into(),
            mask: "u8".into(),
            nodes: self.offsets.len(),
            fallbacks: self.fallbacks,
            data_file: path
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        let hp = header_path(path);
        let text = serde_json::to_string_pretty(&header).expect("header serializes");
        std::fs::write(&hp, text).map_err(|e| Error::io(&hp, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let hp = header_path(path);
        let text = std::fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
        let header: GridHeader = serde_json::from_str(&text).map_err(|e| Error::format(&hp, e.to_string()))?;
        if header.schema_version != GRID_SCHEMA_VERSION {
            return Err(Error::format(
                &hp,
                format!("unsupported schema_version {}", header.schema_version),
            ));
        }
        let spec = GridSpec {
            min: header.min,
            max: header.max,
            resolution: header.resolution,
        };
        spec.validate().map_err(|e| Error::format(&hp, e.to_string()))?;
        let n = spec.len();
        let mut bytes = Vec::new();
        BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() != n * 25 {
            return Err(Error::format(
                path,
                format!("expected {} bytes for {n} nodes, found {}", n * 25, bytes.len()),
            ));
        }
        let (data, mask) = bytes.split_at(n * 24);
        let values: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Self {
            spec,
            offsets: values.chunks_exact(3).map(Vec3::from_column_slice).collect(),
            masked: mask.iter().map(|&b| b != 0).collect(),
            fallbacks: header.fallbacks,
        })
    }
}
