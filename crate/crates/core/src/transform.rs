//! Physical-space probe lines and grids pushed through the logged
//! sensorimotor data into sensor space.
//!
//! A probe point has no reading of its own, so its image is assembled from
//! the records logged closest to it (in physical space, among records with
//! the requested heading): each sensor dimension takes the median of those
//! neighbours' normalised values.

use crate::dataset::{filter_by_yaw, normalize_sensors, LogRecord, SENSOR_COUNT};
use crate::error::{insufficient, invalid, Error, Result};
use crate::geometry::{signed_area, PcaBasis};
use crate::neighbors::SpatialIndex;
use crate::par;
use crate::points::Points;
use crate::sim::Arena;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeKind {
    Line {
        n: usize,
    },
    /// Row-major, `nx` points per row and `ny` rows.
    Grid {
        nx: usize,
        ny: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    pub kind: ProbeKind,
    pub points: Vec<[f64; 2]>,
}

fn lerp(a: f64, b: f64, i: usize, n: usize) -> f64 {
    if i + 1 == n {
        b
    } else {
        a + (b - a) * (i as f64 / (n - 1) as f64)
    }
}

fn check_inside(arena: &Arena, p: [f64; 2]) -> Result<()> {
    if !(p[0].is_finite() && p[1].is_finite()) || !arena.contains(p[0], p[1]) {
        return Err(invalid(format!(
            "probe corner ({}, {}) is outside the arena",
            p[0], p[1]
        )));
    }
    Ok(())
}

impl ProbeSet {
    /// `n` equally spaced points from `p0` to `p1` inclusive.
    pub fn line(p0: [f64; 2], p1: [f64; 2], n: usize, arena: &Arena) -> Result<Self> {
        if n < 2 {
            return Err(invalid(format!(
                "a probe line needs at least 2 points, got {n}"
            )));
        }
        check_inside(arena, p0)?;
        check_inside(arena, p1)?;
        let points = (0..n)
            .map(|i| [lerp(p0[0], p1[0], i, n), lerp(p0[1], p1[1], i, n)])
            .collect();
        Ok(Self {
            kind: ProbeKind::Line { n },
            points,
        })
    }

    /// `nx` x `ny` lattice spanning the rectangle with corners `p0`, `p1`.
    pub fn grid(p0: [f64; 2], p1: [f64; 2], nx: usize, ny: usize, arena: &Arena) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(invalid(format!(
                "a probe grid needs at least 2x2 points, got {nx}x{ny}"
            )));
        }
        check_inside(arena, p0)?;
        check_inside(arena, p1)?;
        let mut points = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                points.push([lerp(p0[0], p1[0], i, nx), lerp(p0[1], p1[1], j, ny)]);
            }
        }
        Ok(Self {
            kind: ProbeKind::Grid { nx, ny },
            points,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappedProbe {
    pub source: ProbeSet,
    /// Per-point sensor vectors in normalised units.
    pub images: Points,
    /// Images projected on the yaw-filtered subset's top two PCA axes.
    pub plane: Vec<[f64; 2]>,
    /// Neighbours actually used per point.
    pub coverage: Vec<usize>,
    /// True where fewer than `k` neighbours were available.
    pub insufficient: Vec<bool>,
}

/// Lower median: element `(len - 1) / 2` of the sorted values.
pub fn lower_median(values: &mut [f64]) -> f64 {
    let mid = (values.len() - 1) / 2;
    *values.select_nth_unstable_by(mid, f64::total_cmp).1
}

pub fn map_to_sensor_space(
    probe: &ProbeSet,
    records: &[LogRecord],
    yaw_filter: (f64, f64),
    k: usize,
) -> Result<MappedProbe> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    let subset = filter_by_yaw(records, yaw_filter.0, yaw_filter.1)?;
    if subset.len() < k.max(2) {
        return Err(insufficient(format!(
            "yaw filter keeps {} records, need at least {}",
            subset.len(),
            k.max(2)
        )));
    }
    let normalized = normalize_sensors(&subset)?;
    let positions: Vec<[f64; 2]> = subset.iter().map(LogRecord::end).collect();
    let index = SpatialIndex::from_rows(&positions)?;

    let mapped = par::map_slice(&probe.points, |p| -> Result<(Vec<f64>, usize)> {
        let found = index.knn(p, k)?;
        let mut image = Vec::with_capacity(SENSOR_COUNT);
        let mut column = Vec::with_capacity(found.len());
        for d in 0..SENSOR_COUNT {
            column.clear();
            column.extend(found.iter().map(|&(i, _)| normalized.matrix.row(i)[d]));
            image.push(lower_median(&mut column));
        }
        Ok((image, found.len()))
    });

    let mut data = Vec::with_capacity(probe.points.len() * SENSOR_COUNT);
    let mut coverage = Vec::with_capacity(probe.points.len());
    for m in mapped {
        let (image, found) = m?;
        data.extend(image);
        coverage.push(found);
    }
    let images = Points::new(SENSOR_COUNT, data)?;
    let basis = PcaBasis::fit(&normalized.matrix, 2)?;
    let plane = basis
        .project(&images)?
        .rows()
        .map(|r| [r[0], r[1]])
        .collect();
    Ok(MappedProbe {
        source: probe.clone(),
        images,
        plane,
        insufficient: coverage.iter().map(|&c| c < k).collect(),
        coverage,
    })
}

/// Largest perpendicular distance from the first-to-last chord, divided
/// by the chord length.
pub fn straightness_deviation(polyline: &[[f64; 2]]) -> Result<f64> {
    if polyline.len() < 3 {
        return Err(invalid("straightness needs at least 3 points"));
    }
    let a = polyline[0];
    let b = polyline[polyline.len() - 1];
    let (ux, uy) = (b[0] - a[0], b[1] - a[1]);
    let len = ux.hypot(uy);
    if len < 1e-12 {
        return Err(Error::Degenerate("chord endpoints coincide".into()));
    }
    let max = polyline
        .iter()
        .map(|p| (ux * (p[1] - a[1]) - uy * (p[0] - a[0])).abs() / len)
        .fold(0.0, f64::max);
    Ok(max / len)
}

/// Coefficient of variation of the lattice cell areas.
pub fn grid_non_uniformity(plane: &[[f64; 2]], nx: usize, ny: usize) -> Result<f64> {
    if nx < 2 || ny < 2 || plane.len() != nx * ny {
        return Err(invalid(
            "grid non-uniformity needs an nx x ny lattice with nx, ny >= 2",
        ));
    }
    let at = |i: usize, j: usize| plane[j * nx + i];
    let mut areas = Vec::with_capacity((nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            areas
                .push(signed_area(&[at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)]).abs());
        }
    }
    let mean = areas.iter().sum::<f64>() / areas.len() as f64;
    if mean < 1e-300 {
        return Err(Error::Degenerate("all grid cells have zero area".into()));
    }
    let var = areas.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / areas.len() as f64;
    Ok(var.sqrt() / mean)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionMetrics {
    /// For grids, the worst value over every row and column.
    pub straightness: f64,
    /// Grids only.
    pub non_uniformity: Option<f64>,
}

pub fn distortion_metrics(mapped: &MappedProbe) -> Result<DistortionMetrics> {
    match mapped.source.kind {
        ProbeKind::Line { .. } => Ok(DistortionMetrics {
            straightness: straightness_deviation(&mapped.plane)?,
            non_uniformity: None,
        }),
        ProbeKind::Grid { nx, ny } => {
            let mut worst = 0.0f64;
            for j in 0..ny {
                let row: Vec<_> = (0..nx).map(|i| mapped.plane[j * nx + i]).collect();
                if row.len() >= 3 {
                    worst = worst.max(straightness_deviation(&row)?);
                }
            }
            for i in 0..nx {
                let col: Vec<_> = (0..ny).map(|j| mapped.plane[j * nx + i]).collect();
                if col.len() >= 3 {
                    worst = worst.max(straightness_deviation(&col)?);
                }
            }
            Ok(DistortionMetrics {
                straightness: worst,
                non_uniformity: Some(grid_non_uniformity(&mapped.plane, nx, ny)?),
            })
        }
    }
}
