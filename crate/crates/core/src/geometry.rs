//! Planar convex hulls, PCA projection and the correspondence between
//! physical hulls and their images in the sensor plane.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::dataset::{filter_by_yaw, normalize_sensors, LogRecord};
use crate::error::{insufficient, invalid, Result};
use crate::par;
use crate::points::Points;
use crate::sim::Arena;

#[derive(Debug, Clone, PartialEq)]
pub struct Hull2D {
    /// Counter-clockwise, starting at the lexicographically smallest vertex.
    pub vertices: Vec<[f64; 2]>,
    /// Position of each vertex in the input slice.
    pub source_indices: Vec<usize>,
    pub area: f64,
    pub perimeter: f64,
}

#[inline]
fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Monotone-chain hull. Collinear points are dropped, so a collinear
/// input yields its two extreme points and a single repeated point yields
/// one vertex.
pub fn convex_hull_2d(points: &[[f64; 2]]) -> Result<Hull2D> {
    if points.is_empty() {
        return Err(invalid("convex hull of an empty point set"));
    }
    if points
        .iter()
        .any(|p| !(p[0].is_finite() && p[1].is_finite()))
    {
        return Err(invalid("hull points must be finite"));
    }
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        points[a][0]
            .total_cmp(&points[b][0])
            .then(points[a][1].total_cmp(&points[b][1]))
            .then(a.cmp(&b))
    });
    idx.dedup_by(|a, b| points[*a] == points[*b]);

    let hull_idx = if idx.len() <= 2 {
        idx
    } else {
        let mut lower: Vec<usize> = Vec::with_capacity(idx.len());
        for &i in &idx {
            while lower.len() >= 2
                && cross(
                    points[lower[lower.len() - 2]],
                    points[lower[lower.len() - 1]],
                    points[i],
                ) <= 0.0
            {
                lower.pop();
            }
            lower.push(i);
        }
        let mut upper: Vec<usize> = Vec::with_capacity(idx.len());
        for &i in idx.iter().rev() {
            while upper.len() >= 2
                && cross(
                    points[upper[upper.len() - 2]],
                    points[upper[upper.len() - 1]],
                    points[i],
                ) <= 0.0
            {
                upper.pop();
            }
            upper.push(i);
        }
        lower.pop();
        upper.pop();
        lower.extend(upper);
        lower
    };

    let vertices: Vec<[f64; 2]> = hull_idx.iter().map(|&i| points[i]).collect();
    let (area, perimeter) = polygon_metrics(&vertices);
    Ok(Hull2D {
        vertices,
        source_indices: hull_idx,
        area,
        perimeter,
    })
}

/// Shoelace signed area; positive for counter-clockwise order.
pub fn signed_area(polygon: &[[f64; 2]]) -> f64 {
    let n = polygon.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let a = polygon[i];
        let b = polygon[(i + 1) % n];
        s += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * s
}

fn polygon_metrics(vertices: &[[f64; 2]]) -> (f64, f64) {
    let n = vertices.len();
    let perimeter = match n {
        0 | 1 => 0.0,
        // a segment is walked out and back
        2 => 2.0 * (vertices[1][0] - vertices[0][0]).hypot(vertices[1][1] - vertices[0][1]),
        _ => (0..n)
            .map(|i| {
                let a = vertices[i];
                let b = vertices[(i + 1) % n];
                (b[0] - a[0]).hypot(b[1] - a[1])
            })
            .sum(),
    };
    (signed_area(vertices).abs(), perimeter)
}

/// (area, perimeter) recomputed from the hull vertices.
pub fn hull_metrics(hull: &Hull2D) -> (f64, f64) {
    polygon_metrics(&hull.vertices)
}

/// Principal axes of a point table.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// Unit axes, one row per output dimension, by descending variance.
    pub axes: Vec<Vec<f64>>,
    /// Share of total variance along each axis; zero when there is none.
    pub explained: Vec<f64>,
}

impl PcaBasis {
    /// Fit on `matrix`. Each axis is signed so that its largest-magnitude
    /// loading is positive.
    pub fn fit(matrix: &Points, dims: usize) -> Result<Self> {
        let n = matrix.len();
        let d = matrix.dim();
        if n < 2 {
            return Err(insufficient(format!("PCA needs at least 2 rows, have {n}")));
        }
        if dims == 0 || dims > d {
            return Err(invalid(format!(
                "cannot project {d}-D data onto {dims} axes"
            )));
        }
        let mut mean = vec![0.0; d];
        for row in matrix.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let mut cov = DMatrix::<f64>::zeros(d, d);
        let mut centered = vec![0.0; d];
        for row in matrix.rows() {
            for (c, (v, m)) in centered.iter_mut().zip(row.iter().zip(&mean)) {
                *c = v - m;
            }
            for i in 0..d {
                for j in i..d {
                    cov[(i, j)] += centered[i] * centered[j];
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[(i, j)] / n as f64;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }

        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .total_cmp(&eig.eigenvalues[a])
                .then(a.cmp(&b))
        });
        let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

        let mut axes = Vec::with_capacity(dims);
        let mut explained = Vec::with_capacity(dims);
        for &k in order.iter().take(dims) {
            let mut axis: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let pivot =
                axis.iter().copied().fold(
                    0.0f64,
                    |best, v| if v.abs() > best.abs() { v } else { best },
                );
            if pivot < 0.0 {
                axis.iter_mut().for_each(|v| *v = -*v);
            }
            axes.push(axis);
            explained.push(if total > 0.0 {
                eig.eigenvalues[k].max(0.0) / total
            } else {
                0.0
            });
        }
        Ok(Self {
            mean,
            axes,
            explained,
        })
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn project_row(&self, row: &[f64]) -> Vec<f64> {
        self.axes
            .iter()
            .map(|a| {
                a.iter()
                    .zip(row.iter().zip(&self.mean))
                    .map(|(w, (v, m))| w * (v - m))
                    .sum()
            })
            .collect()
    }

    pub fn project(&self, matrix: &Points) -> Result<Points> {
        if matrix.dim() != self.mean.len() {
            return Err(invalid("matrix dimension does not match the PCA basis"));
        }
        let data = matrix.rows().flat_map(|r| self.project_row(r)).collect();
        Points::new(self.dims(), data)
    }

    /// Negate the last axis.
    pub fn flip_last(&mut self) {
        if let Some(a) = self.axes.last_mut() {
            a.iter_mut().for_each(|v| *v = -*v);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub basis: PcaBasis,
    pub coords: Points,
}

/// Mean-centred projection onto the top `dims` principal axes.
pub fn pca_project(matrix: &Points, dims: usize) -> Result<Projection> {
    let basis = PcaBasis::fit(matrix, dims)?;
    let coords = basis.project(matrix)?;
    Ok(Projection { basis, coords })
}

/// Sign of the determinant of the least-squares linear map taking
/// centred `from` points to centred `to` points; 0 when singular.
pub fn linear_map_orientation(from: &[[f64; 2]], to: &[[f64; 2]]) -> f64 {
    let n = from.len().min(to.len());
    if n == 0 {
        return 0.0;
    }
    let mean = |pts: &[[f64; 2]]| {
        let s = pts[..n]
            .iter()
            .fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
        [s[0] / n as f64, s[1] / n as f64]
    };
    let (mf, mt) = (mean(from), mean(to));
    // cross-covariance C = sum (t - mt)(f - mf)^T; sign(det A) = sign(det C)
    // because A = C * inv(F F^T) and F F^T is positive semidefinite.
    let mut c = [[0.0; 2]; 2];
    let mut ff = [[0.0; 2]; 2];
    for i in 0..n {
        let f = [from[i][0] - mf[0], from[i][1] - mf[1]];
        let t = [to[i][0] - mt[0], to[i][1] - mt[1]];
        for r in 0..2 {
            for s in 0..2 {
                c[r][s] += t[r] * f[s];
                ff[r][s] += f[r] * f[s];
            }
        }
    }
    let det_ff = ff[0][0] * ff[1][1] - ff[0][1] * ff[1][0];
    if det_ff <= 0.0 {
        return 0.0;
    }
    let det_c = c[0][0] * c[1][1] - c[0][1] * c[1][0];
    if det_c > 0.0 {
        1.0
    } else if det_c < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HullCorrespondence {
    pub region_center: [f64; 2],
    pub region_radius: f64,
    pub physical: Hull2D,
    /// Record index behind each physical hull vertex.
    pub record_indices: Vec<u64>,
    /// Sensor-plane image of each physical hull vertex, same order.
    pub sensor_points: Vec<[f64; 2]>,
    pub physical_signed_area: f64,
    pub sensor_signed_area: f64,
    pub winding_preserved: bool,
}

/// Yaw-conditioned sensor plane shared by every region query.
///
/// Sensor readings of the yaw-filtered records are min-max normalised
/// over that subset and projected on its top two principal axes. The
/// second axis is then oriented so the best linear fit from physical
/// position to the plane has positive determinant, which makes the
/// orientation of hull images comparable with physical orientation.
#[derive(Debug, Clone)]
pub struct SensorPlane {
    records: Vec<LogRecord>,
    plane: Vec<[f64; 2]>,
    basis: PcaBasis,
}

impl SensorPlane {
    pub fn new(records: &[LogRecord], yaw_filter: (f64, f64)) -> Result<Self> {
        let subset = filter_by_yaw(records, yaw_filter.0, yaw_filter.1)?;
        if subset.len() < 3 {
            return Err(insufficient(format!(
                "yaw filter keeps {} records, need at least 3",
                subset.len()
            )));
        }
        let normalized = normalize_sensors(&subset)?;
        let mut basis = PcaBasis::fit(&normalized.matrix, 2)?;
        let mut plane: Vec<[f64; 2]> = basis
            .project(&normalized.matrix)?
            .rows()
            .map(|r| [r[0], r[1]])
            .collect();
        let physical: Vec<[f64; 2]> = subset.iter().map(LogRecord::end).collect();
        if linear_map_orientation(&physical, &plane) < 0.0 {
            basis.flip_last();
            plane.iter_mut().for_each(|p| p[1] = -p[1]);
        }
        Ok(Self {
            records: subset,
            plane,
            basis,
        })
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn plane(&self) -> &[[f64; 2]] {
        &self.plane
    }

    pub fn basis(&self) -> &PcaBasis {
        &self.basis
    }

    pub fn correspondence(&self, center: [f64; 2], radius: f64) -> Result<HullCorrespondence> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(invalid(format!(
                "region radius must be positive, got {radius}"
            )));
        }
        let inside: Vec<usize> = (0..self.records.len())
            .filter(|&i| {
                let [x, y] = self.records[i].end();
                (x - center[0]).hypot(y - center[1]) <= radius
            })
            .collect();
        if inside.len() < 3 {
            return Err(insufficient(format!(
                "{} records inside the region, need at least 3",
                inside.len()
            )));
        }
        let pts: Vec<[f64; 2]> = inside.iter().map(|&i| self.records[i].end()).collect();
        let physical = convex_hull_2d(&pts)?;
        let members: Vec<usize> = physical.source_indices.iter().map(|&j| inside[j]).collect();
        let sensor_points: Vec<[f64; 2]> = members.iter().map(|&i| self.plane[i]).collect();
        let physical_signed_area = signed_area(&physical.vertices);
        let sensor_signed_area = signed_area(&sensor_points);
        let winding_preserved = physical_signed_area != 0.0
            && physical_signed_area.signum() == sensor_signed_area.signum()
            && sensor_signed_area != 0.0;
        Ok(HullCorrespondence {
            region_center: center,
            region_radius: radius,
            record_indices: members.iter().map(|&i| self.records[i].index).collect(),
            physical,
            sensor_points,
            physical_signed_area,
            sensor_signed_area,
            winding_preserved,
        })
    }

    /// Evaluate many regions; order of results follows `centers`.
    pub fn correspondences(
        &self,
        centers: &[[f64; 2]],
        radius: f64,
    ) -> Vec<Result<HullCorrespondence>> {
        par::map_slice(centers, |&c| self.correspondence(c, radius))
    }
}

pub fn hull_correspondence(
    records: &[LogRecord],
    region_center: [f64; 2],
    region_radius: f64,
    yaw_filter: (f64, f64),
) -> Result<HullCorrespondence> {
    SensorPlane::new(records, yaw_filter)?.correspondence(region_center, region_radius)
}

/// `n` region centres drawn uniformly so that a disc of `radius` around
/// each stays inside the arena.
pub fn sample_region_centers<R: Rng + ?Sized>(
    arena: &Arena,
    radius: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<[f64; 2]>> {
    let reach = arena.half() - radius;
    if radius.is_nan() || radius <= 0.0 || reach <= 0.0 {
        return Err(invalid(format!(
            "radius {radius} does not fit in the arena"
        )));
    }
    Ok((0..n)
        .map(|_| [rng.gen_range(-reach..reach), rng.gen_range(-reach..reach)])
        .collect())
}
