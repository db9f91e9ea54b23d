//! Spatial maps of sensor variability and the inter-sensor correlation
//! matrix.

use crate::dataset::{filter_by_yaw, GridSpec, LogRecord, SENSOR_COUNT};
use crate::error::{insufficient, invalid, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StdMode {
    Plain,
    Rolling { window: usize },
}

/// Per-cell standard deviation of one sensor, row-major over the grid.
/// `None` marks cells without enough samples.
#[derive(Debug, Clone, PartialEq)]
pub struct StdGrid {
    pub grid: GridSpec,
    pub values: Vec<Option<f64>>,
    pub counts: Vec<usize>,
    pub mode: StdMode,
}

impl StdGrid {
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.values[row * self.grid.resolution() + col]
    }

    /// Mean over non-empty cells whose centre satisfies `pred`.
    pub fn mean_where(&self, pred: impl Fn([f64; 2]) -> bool) -> Option<f64> {
        let res = self.grid.resolution();
        let mut sum = 0.0;
        let mut n = 0usize;
        for row in 0..res {
            for col in 0..res {
                if let Some(v) = self.get(row, col) {
                    if pred(self.grid.cell_center(row, col)) {
                        sum += v;
                        n += 1;
                    }
                }
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

fn check_sensor(sensor_id: usize) -> Result<()> {
    if sensor_id >= SENSOR_COUNT {
        return Err(invalid(format!(
            "sensor id must be below {SENSOR_COUNT}, got {sensor_id}"
        )));
    }
    Ok(())
}

/// Population standard deviation, two-pass.
pub fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Standard deviation of one sensor's readings among records ending in
/// each cell. Cells with fewer than two readings are empty.
pub fn grid_std(records: &[LogRecord], sensor_id: usize, grid: &GridSpec) -> Result<StdGrid> {
    check_sensor(sensor_id)?;
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); grid.n_cells()];
    for r in records {
        bins[grid.flat_index(r.x1, r.y1)?].push(r.sensors[sensor_id]);
    }
    let values = par::map_slice(&bins, |b| (b.len() >= 2).then(|| population_std(b)));
    Ok(StdGrid {
        grid: *grid,
        counts: bins.iter().map(Vec::len).collect(),
        values,
        mode: StdMode::Plain,
    })
}

/// Standard deviation over sliding windows of the time-ordered readings,
/// each window credited to the cell where its last record ends, then
/// averaged per cell. Cells that received no window are empty.
pub fn rolling_grid_std(
    records: &[LogRecord],
    sensor_id: usize,
    grid: &GridSpec,
    window: usize,
) -> Result<StdGrid> {
    check_sensor(sensor_id)?;
    if window < 2 {
        return Err(invalid(format!("window must be at least 2, got {window}")));
    }
    if records.len() < window {
        return Err(invalid(format!(
            "window {window} is longer than the {} available records",
            records.len()
        )));
    }
    let mut ordered: Vec<&LogRecord> = records.iter().collect();
    ordered.sort_by_key(|r| r.index);
    let readings: Vec<f64> = ordered.iter().map(|r| r.sensors[sensor_id]).collect();
    let cells = ordered
        .iter()
        .map(|r| grid.flat_index(r.x1, r.y1))
        .collect::<Result<Vec<_>>>()?;

    let n_windows = readings.len() - window + 1;
    let stds = par::map_range(n_windows, |s| population_std(&readings[s..s + window]));

    let mut sums = vec![0.0; grid.n_cells()];
    let mut counts = vec![0usize; grid.n_cells()];
    for (s, sd) in stds.into_iter().enumerate() {
        let cell = cells[s + window - 1];
        sums[cell] += sd;
        counts[cell] += 1;
    }
    let values = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    Ok(StdGrid {
        grid: *grid,
        values,
        counts,
        mode: StdMode::Rolling { window },
    })
}

/// 16x16 Pearson coefficients; `None` where a column is constant.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub n_samples: usize,
    pub values: [[Option<f64>; SENSOR_COUNT]; SENSOR_COUNT],
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i][j]
    }

    /// Mean coefficient over pairs (i, i + offset mod 16).
    pub fn mean_at_offset(&self, offset: usize) -> Option<f64> {
        let vals: Vec<f64> = (0..SENSOR_COUNT)
            .filter_map(|i| self.values[i][(i + offset) % SENSOR_COUNT])
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Mean |r| over defined off-diagonal entries.
    pub fn mean_abs_off_diagonal(&self) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for i in 0..SENSOR_COUNT {
            for j in 0..SENSOR_COUNT {
                if i != j {
                    if let Some(r) = self.values[i][j] {
                        sum += r.abs();
                        n += 1;
                    }
                }
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

pub fn sensor_correlation(
    records: &[LogRecord],
    yaw_filter: Option<(f64, f64)>,
) -> Result<CorrelationMatrix> {
    let filtered;
    let subset = match yaw_filter {
        Some((c, tol)) => {
            filtered = filter_by_yaw(records, c, tol)?;
            &filtered[..]
        }
        None => records,
    };
    let n = subset.len();
    if n < 3 {
        return Err(insufficient(format!(
            "correlation needs at least 3 records, have {n}"
        )));
    }
    let mut mean = [0.0; SENSOR_COUNT];
    for r in subset {
        for (m, v) in mean.iter_mut().zip(&r.sensors) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = [[0.0; SENSOR_COUNT]; SENSOR_COUNT];
    for r in subset {
        let d: Vec<f64> = r.sensors.iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..SENSOR_COUNT {
            for j in i..SENSOR_COUNT {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    let mut values = [[None; SENSOR_COUNT]; SENSOR_COUNT];
    for i in 0..SENSOR_COUNT {
        for j in i..SENSOR_COUNT {
            let denom = (cov[i][i] * cov[j][j]).sqrt();
            let r = if cov[i][i] > 0.0 && cov[j][j] > 0.0 && denom > 0.0 {
                Some(if i == j {
                    1.0
                } else {
                    (cov[i][j] / denom).clamp(-1.0, 1.0)
                })
            } else {
                None
            };
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        n_samples: n,
        values,
    })
}
