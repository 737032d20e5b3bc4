//! Exact k-nearest-neighbor search over a uniform cell grid.
//!
//! Results are ordered by squared Euclidean distance with ties broken by the
//! lower point id, and are identical to a brute-force scan.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::Vec3;

/// Uniform grid bucketing of a fixed point set.
#[derive(Debug, Clone)]
pub struct KnnIndex {
    points: Vec<Vec3>,
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    cell_start: Vec<usize>,
    items: Vec<usize>,
}

#[inline]
pub(crate) fn squared_distance(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

#[inline]
fn closer(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    a.1.partial_cmp(&b.1)
        .unwrap_or(Ordering::Equal)
        .then(a.0.cmp(&b.0))
}

impl KnnIndex {
    pub fn new(points: &[Vec3]) -> Self {
        let n = points.len().max(1);
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        if points.is_empty() {
            lo = Vec3::zeros();
            hi = Vec3::zeros();
        }
        let extent = hi - lo;
        let diameter = extent.norm().max(1e-300);
        let floor = diameter * 1e-3;
        let ext = extent.map(|e| e.max(floor));
        // about two points per cell on a uniformly filled box
        let mut cell = (ext.x * ext.y * ext.z * 2.0 / n as f64).cbrt();
        let dims_for = |cell: f64| -> [usize; 3] {
            [0, 1, 2].map(|a| ((ext[a] / cell).floor() as usize + 1).max(1))
        };
        let mut dims = dims_for(cell);
        while dims.iter().product::<usize>() > 8 * n + 8 {
            cell *= 1.5;
            dims = dims_for(cell);
        }

        let ncell = dims.iter().product::<usize>();
        let mut counts = vec![0usize; ncell + 1];
        let mut keys = Vec::with_capacity(points.len());
        for p in points {
            let c = Self::cell_of(&lo, cell, &dims, p);
            let key = Self::flat(&dims, c);
            keys.push(key);
            counts[key + 1] += 1;
        }
        for i in 0..ncell {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut items = vec![0usize; points.len()];
        for (id, &key) in keys.iter().enumerate() {
            items[fill[key]] = id;
            fill[key] += 1;
        }

        Self {
            points: points.to_vec(),
            origin: lo,
            cell,
            dims,
            cell_start: counts,
            items,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    fn cell_of(origin: &Vec3, cell: f64, dims: &[usize; 3], p: &Vec3) -> [usize; 3] {
        [0, 1, 2].map(|a| {
            let t = ((p[a] - origin[a]) / cell).floor();
            if t.is_nan() || t < 0.0 {
                0
            } else {
                (t as usize).min(dims[a] - 1)
            }
        })
    }

    fn flat(dims: &[usize; 3], c: [usize; 3]) -> usize {
        (c[2] * dims[1] + c[1]) * dims[0] + c[0]
    }

    /// The `k` nearest points to `query` as `(id, distance)`, ascending.
    pub fn query(&self, query: &Vec3, k: usize) -> Result<Vec<(usize, f64)>> {
        if k > self.points.len() {
            return Err(Error::InvalidArgument(format!(
                "k = {k} exceeds point count {}",
                self.points.len()
            )));
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let center = Self::cell_of(&self.origin, self.cell, &self.dims, query);
        let max_ring = *self.dims.iter().max().unwrap();
        // squared distances while searching
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);

        for ring in 0..=max_ring {
            self.visit_ring(center, ring, |id| {
                let d2 = squared_distance(query, &self.points[id]);
                let cand = (id, d2);
                if best.len() < k {
                    let pos = best
                        .binary_search_by(|e| closer(e, &cand))
                        .unwrap_or_else(|e| e);
                    best.insert(pos, cand);
                } else if closer(&cand, &best[k - 1]) == Ordering::Less {
                    best.pop();
                    let pos = best
                        .binary_search_by(|e| closer(e, &cand))
                        .unwrap_or_else(|e| e);
                    best.insert(pos, cand);
                }
            });
            if best.len() == k {
                // every cell at ring + 1 or beyond is at least `ring * cell` away
                let bound = ring as f64 * self.cell;
                if best[k - 1].1 < bound * bound {
                    break;
                }
            }
        }
        Ok(best.into_iter().map(|(id, d2)| (id, d2.sqrt())).collect())
    }

    fn visit_ring(&self, center: [usize; 3], ring: usize, mut f: impl FnMut(usize)) {
        let r = ring as isize;
        let lo = |a: usize| (center[a] as isize - r).max(0);
        let hi = |a: usize| (center[a] as isize + r).min(self.dims[a] as isize - 1);
        for z in lo(2)..=hi(2) {
            for y in lo(1)..=hi(1) {
                for x in lo(0)..=hi(0) {
                    let on_shell = (x - center[0] as isize).abs() == r
                        || (y - center[1] as isize).abs() == r
                        || (z - center[2] as isize).abs() == r;
                    if !on_shell {
                        continue;
                    }
                    let key = Self::flat(&self.dims, [x as usize, y as usize, z as usize]);
                    for &id in &self.items[self.cell_start[key]..self.cell_start[key + 1]] {
                        f(id);
                    }
                }
            }
        }
    }
}

/// Exact k nearest neighbors of `query` among `points`.
pub fn knn(points: &[Vec3], query: &Vec3, k: usize) -> Result<Vec<(usize, f64)>> {
    KnnIndex::new(points).query(query, k)
}
