//! On-disk datasets: `manifest.json`, `rest.ply` and one `obs_%05d.ply` per
//! frame, plus the material, fit-report and metrics result files.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::ply::{read_ply, write_ply};
use super::DistanceReport;
use crate::elasticity::MaterialField;
use crate::error::{Error, Result};
use crate::fit::FitReport;
use crate::forces::{AirJet, AttractionTarget, ForceFrame, Pin, SdfShape};
use crate::geometry::{build_reference, PointCloud, ReferenceModel};
use crate::Vec3;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const REST_FILE: &str = "rest.ply";

pub fn observation_file(t: usize) -> String {
    format!("obs_{t:05}.ply")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    /// Hz
    pub frame_rate: f64,
    /// m
    pub noise_sigma: f64,
}

/// A rest cloud with per-frame loads and corresponding observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rest: PointCloud,
    pub total_mass: f64,
    pub surface_mask: Vec<bool>,
    pub frames: Vec<ForceFrame>,
    pub observations: Vec<PointCloud>,
    pub meta: DatasetMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Load {
    id: usize,
    fx: f64,
    fy: f64,
    fz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Position {
    id: usize,
    x: f64,
    y: f64,
    z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    observation: String,
    loads: Vec<Load>,
    #[serde(default)]
    pins: Vec<Position>,
    #[serde(default)]
    attraction: Vec<Position>,
    #[serde(default)]
    attraction_penalty: f64,
    #[serde(default)]
    sdfs: Vec<SdfShape>,
    #[serde(default)]
    jets: Vec<AirJet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    schema_version: u32,
    meta: DatasetMeta,
    total_mass: f64,
    points: usize,
    rest: String,
    /// Ids of surface points.
    surface: Vec<usize>,
    frames: Vec<FrameRecord>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let n = self.rest.len();
        if self.surface_mask.len() != n {
            return Err(Error::size("surface mask", n, self.surface_mask.len()));
        }
        if self.frames.len() != self.observations.len() {
            return Err(Error::size("observations", self.frames.len(), self.observations.len()));
        }
        if !(self.total_mass > 0.0 && self.total_mass.is_finite()) {
            return Err(Error::InvalidArgument(format!("total mass must be positive, got {}", self.total_mass)));
        }
        for (t, (f, o)) in self.frames.iter().zip(&self.observations).enumerate() {
            f.validate(n)
                .map_err(|e| Error::InvalidArgument(format!("frame {t}: {e}")))?;
            if o.len() != n {
                return Err(Error::size(format!("observation {t}"), n, o.len()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn reference(&self) -> Result<ReferenceModel> {
        build_reference(self.rest.clone(), self.total_mass, self.surface_mask.clone())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_ply(&dir.join(REST_FILE), self.rest.positions(), None)?;
        let mut records = Vec::with_capacity(self.frames.len());
        for (t, (frame, obs)) in self.frames.iter().zip(&self.observations).enumerate() {
            let name = observation_file(t);
            write_ply(&dir.join(&name), obs.positions(), None)?;
            records.push(FrameRecord {
                observation: name,
                loads: frame
                    .forces
                    .iter()
                    .enumerate()
                    .filter(|(_, f)| **f != Vec3::zeros())
                    .map(|(id, f)| Load {
                        id,
                        fx: f.x,
                        fy: f.y,
                        fz: f.z,
                    })
                    .collect(),
                pins: frame
                    .pins
                    .iter()
                    .map(|p| Position {
                        id: p.id,
                        x: p.position[0],
                        y: p.position[1],
                        z: p.position[2],
                    })
                    .collect(),
                attraction: frame
                    .attraction
                    .iter()
                    .map(|a| Position {
                        id: a.id,
                        x: a.target[0],
                        y: a.target[1],
                        z: a.target[2],
                    })
                    .collect(),
                attraction_penalty: frame.attraction_penalty,
                sdfs: frame.sdfs.clone(),
                jets: frame.jets.clone(),
            });
        }
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            meta: self.meta.clone(),
            total_mass: self.total_mass,
            points: self.rest.len(),
            rest: REST_FILE.into(),
            surface: self
                .surface_mask
                .iter()
                .enumerate()
                .filter(|(_, &s)| s)
                .map(|(i, _)| i)
                .collect(),
            frames: records,
        };
        write_json(&dir.join(MANIFEST), &manifest)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let manifest: Manifest = read_json(&path)?;
        let bad = |field: String, message: String| Error::format(&path, format!("{field}: {message}"));
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(bad(
                "schema_version".into(),
                format!("unsupported version {} (expected {SCHEMA_VERSION})", manifest.schema_version),
            ));
        }
        let n = manifest.points;
        if !(manifest.total_mass > 0.0 && manifest.total_mass.is_finite()) {
            return Err(bad("total_mass".into(), "must be positive".into()));
        }
        let rest = read_cloud(&dir.join(&manifest.rest), n)?;
        let mut surface_mask = vec![false; n];
        for (k, &id) in manifest.surface.iter().enumerate() {
            if id >= n {
                return Err(bad(format!("surface[{k}]"), format!("point id {id} out of range (points = {n})")));
            }
            surface_mask[id] = true;
        }
        let mut frames = Vec::with_capacity(manifest.frames.len());
        let mut observations = Vec::with_capacity(manifest.frames.len());
        for (t, rec) in manifest.frames.iter().enumerate() {
            let check = |what: &str, k: usize, id: usize| {
                if id >= n {
                    Err(bad(format!("frames[{t}].{what}[{k}].id"), format!("point id {id} out of range (points = {n})")))
                } else {
                    Ok(())
                }
            };
            let mut forces = vec![Vec3::zeros(); n];
            for (k, l) in rec.loads.iter().enumerate() {
                check("loads", k, l.id)?;
                forces[l.id] += Vec3::new(l.fx, l.fy, l.fz);
            }
            for (k, p) in rec.pins.iter().enumerate() {
                check("pins", k, p.id)?;
            }
            for (k, p) in rec.attraction.iter().enumerate() {
                check("attraction", k, p.id)?;
            }
            let frame = ForceFrame {
                forces,
                pins: rec
                    .pins
                    .iter()
                    .map(|p| Pin {
                        id: p.id,
                        position: [p.x, p.y, p.z],
                    })
                    .collect(),
                attraction: rec
                    .attraction
                    .iter()
                    .map(|p| AttractionTarget {
                        id: p.id,
                        target: [p.x, p.y, p.z],
                    })
                    .collect(),
                attraction_penalty: rec.attraction_penalty,
                sdfs: rec.sdfs.clone(),
                jets: rec.jets.clone(),
            };
            frame
                .validate(n)
                .map_err(|e| bad(format!("frames[{t}]"), e.to_string()))?;
            frames.push(frame);
            observations.push(read_cloud(&dir.join(&rec.observation), n)?);
        }
        let data = Dataset {
            rest,
            total_mass: manifest.total_mass,
            surface_mask,
            frames,
            observations,
            meta: manifest.meta,
        };
        data.validate()?;
        Ok(data)
    }
}

/// Reads a PLY cloud and checks its point count.
pub fn read_cloud(path: &Path, expected: usize) -> Result<PointCloud> {
    let data = read_ply(path)?;
    if data.points.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} points, found {}", data.points.len()),
        ));
    }
    PointCloud::new(data.points).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("result types serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaterialFile {
    schema_version: u32,
    log_mu: Vec<f64>,
    log_lambda: Vec<f64>,
    /// Informational; `log_mu`/`log_lambda` are authoritative.
    mu: Vec<f64>,
    lambda: Vec<f64>,
}

pub fn write_material(path: &Path, mat: &MaterialField) -> Result<()> {
    write_json(
        path,
        &MaterialFile {
            schema_version: SCHEMA_VERSION,
            log_mu: mat.log_mu.clone(),
            log_lambda: mat.log_lambda.clone(),
            mu: mat.mus(),
            lambda: mat.lambdas(),
        },
    )
}

pub fn read_material(path: &Path) -> Result<MaterialField> {
    let file: MaterialFile = read_json(path)?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(Error::format(
            path,
            format!("schema_version: unsupported version {}", file.schema_version),
        ));
    }
    let mat = MaterialField {
        log_mu: file.log_mu,
        log_lambda: file.log_lambda,
    };
    mat.validate(mat.log_mu.len())
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(mat)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema_version: u32,
    #[serde(flatten)]
    pub report: FitReport,
}

pub fn write_fit_report(path: &Path, report: &FitReport) -> Result<()> {
    write_json(
        path,
        &ReportFile {
            schema_version: SCHEMA_VERSION,
            report: report.clone(),
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub schema_version: u32,
    pub frames: Vec<usize>,
    #[serde(flatten)]
    pub report: DistanceReport,
    /// Per-frame mean distance (mm).
    pub per_frame_mm: Vec<f64>,
}

pub fn write_metrics(path: &Path, metrics: &MetricsFile) -> Result<()> {
    write_json(path, metrics)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        let rest: Vec<Vec3> = (0..8)
            .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, (i >> 2) as f64) * 0.1 + Vec3::repeat(1.0 / 3.0))
            .collect();
        let mut frame = ForceFrame::empty(8);
        frame.forces[3] = Vec3::new(0.1, -0.2, 1.0 / 7.0);
        frame.pins.push(Pin {
            id: 0,
            position: rest[0].into(),
        });
        frame.attraction.push(AttractionTarget {
            id: 5,
            target: [0.1, 0.2, 0.30000000000000004],
        });
        frame.attraction_penalty = 12.5;
        frame.sdfs.push(SdfShape::sphere(Vec3::new(0.0, 0.0, -1.0), 0.5, 3e5));
        frame.jets.push(AirJet::new(Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.3, -1.0), 0.2, 0.4));
        let obs: Vec<Vec3> = rest.iter().map(|p| p * std::f64::consts::PI).collect();
        Dataset {
            rest: PointCloud::new(rest).unwrap(),
            total_mass: 0.123,
            surface_mask: vec![true, false, true, true, true, true, true, false],
            frames: vec![frame.clone(), ForceFrame::empty(8)],
            observations: vec![PointCloud::new(obs.clone()).unwrap(), PointCloud::new(obs).unwrap()],
            meta: DatasetMeta {
                name: "cube".into(),
                frame_rate: 40.0,
                noise_sigma: 1e-4,
            },
        }
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let data = sample();
        data.write(dir.path()).unwrap();
        assert!(dir.path().join("obs_00001.ply").exists());
        assert_eq!(Dataset::read(dir.path()).unwrap(), data);
    }

    #[test]
    fn malformed_manifest_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        sample().write(dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replacen("\"id\": 3", "\"id\": 99", 1)).unwrap();
        let err = Dataset::read(dir.path()).unwrap_err().to_string();
        assert!(err.contains("manifest.json") && err.contains("frames[0].loads[0].id"), "{err}");

        std::fs::write(&path, text.replace("\"total_mass\"", "\"mass\"")).unwrap();
        let err = Dataset::read(dir.path()).unwrap_err().to_string();
        assert!(err.contains("mass"), "{err}");
    }

    #[test]
    fn material_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("material.json");
        let mat = MaterialField::from_lame(&[1e3, 2e3 / 3.0, 7.0], &[0.1, 5e4, 1.0 / 3.0]).unwrap();
        write_material(&path, &mat).unwrap();
        assert_eq!(read_material(&path).unwrap(), mat);
    }
}
