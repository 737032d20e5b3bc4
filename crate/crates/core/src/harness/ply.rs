//! ASCII PLY point clouds with `double` properties.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::Vec3;

/// Vertex positions plus any extra scalar properties, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyData {
    pub points: Vec<Vec3>,
    pub scalars: Vec<(String, Vec<f64>)>,
}

impl PlyData {
    pub fn scalar(&self, name: &str) -> Option<&[f64]> {
        self.scalars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }
}

/// Serializes points (and optionally one named scalar per point). Values use
/// the shortest representation that parses back to the same `f64`.
pub fn ply_string(points: &[Vec3], scalar: Option<(&str, &[f64])>) -> Result<String> {
    if let Some((name, values)) = scalar {
        if values.len() != points.len() {
            return Err(Error::size(format!("PLY property `{name}`"), points.len(), values.len()));
        }
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!("invalid PLY property name `{name}`")));
        }
    }
    let mut s = String::with_capacity(64 * points.len() + 128);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", points.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if let Some((name, _)) = scalar {
        let _ = writeln!(s, "property double {name}");
    }
    s.push_str("end_header\n");
    for (i, p) in points.iter().enumerate() {
        let _ = write!(s, "{:?} {:?} {:?}", p.x, p.y, p.z);
        if let Some((_, values)) = scalar {
            let _ = write!(s, " {:?}", values[i]);
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn write_ply(path: &Path, points: &[Vec3], scalar: Option<(&str, &[f64])>) -> Result<()> {
    let text = ply_string(points, scalar)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_ply(path: &Path) -> Result<PlyData> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&text).map_err(|m| Error::format(path, m))
}

pub fn parse_ply(text: &str) -> std::result::Result<PlyData, String> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err("missing `ply` magic line".into()),
    }
    let mut count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    let mut ended = false;
    for (no, line) in lines.by_ref() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", _] => {}
            ["format", other, ..] => return Err(format!("line {}: unsupported format `{other}`", no + 1)),
            ["element", "vertex", n] => {
                count = Some(n.parse().map_err(|_| format!("line {}: bad vertex count `{n}`", no + 1))?);
                in_vertex = true;
            }
            ["element", name, _] => {
                if count.is_none() {
                    return Err(format!("line {}: element `{name}` before vertex element", no + 1));
                }
                in_vertex = false;
            }
            ["property", "list", ..] if in_vertex => {
                return Err(format!("line {}: list properties are not supported on vertices", no + 1))
            }
            ["property", "list", ..] => {}
            ["property", ty, name] => {
                if in_vertex {
                    if !matches!(*ty, "double" | "float" | "float64" | "float32") {
                        return Err(format!("line {}: vertex property `{name}` has unsupported type `{ty}`", no + 1));
                    }
                    props.push(name.to_string());
                }
            }
            ["end_header"] => {
                ended = true;
                break;
            }
            _ => return Err(format!("line {}: unexpected header line `{line}`", no + 1)),
        }
    }
    if !ended {
        return Err("missing end_header".into());
    }
    let n = count.ok_or("no vertex element")?;
    let axis = |name: &str| {
        props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| format!("missing vertex property `{name}`"))
    };
    let (ix, iy, iz) = (axis("x")?, axis("y")?, axis("z")?);
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(n); props.len()];
    let mut read = 0;
    for (no, line) in lines {
        if read == n {
            break;
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.is_empty() {
            continue;
        }
        if words.len() != props.len() {
            return Err(format!(
                "line {}: expected {} values, found {}",
                no + 1,
                props.len(),
                words.len()
            ));
        }
        for (col, w) in columns.iter_mut().zip(&words) {
            let v: f64 = w.parse().map_err(|_| format!("line {}: bad number `{w}`", no + 1))?;
            col.push(v);
        }
        read += 1;
    }
    if read != n {
        return Err(format!("expected {n} vertices, found {read}"));
    }
    let points = (0..n)
        .map(|i| Vec3::new(columns[ix][i], columns[iy][i], columns[iz][i]))
        .collect();
    let scalars = props
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != ix && i != iy && i != iz)
        .map(|(i, name)| (name.clone(), std::mem::take(&mut columns[i])))
        .collect();
    Ok(PlyData { points, scalars })
}
