//! Sensorimotor log schema, CSV persistence and the basic views the
//! analyses share: yaw filtering, per-sensor min-max normalisation and
//! spatial binning.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::points::Points;
use crate::sim::{wrap_angle, Arena};

pub const SENSOR_COUNT: usize = 16;
const FIELD_COUNT: usize = 11 + SENSOR_COUNT;

/// One exploration action.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub index: u64,
    pub v_left: f64,
    pub v_right: f64,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub dx: f64,
    pub dy: f64,
    pub yaw: f64,
    pub sensors: [f64; SENSOR_COUNT],
    pub stuck: bool,
}

impl LogRecord {
    pub fn end(&self) -> [f64; 2] {
        [self.x1, self.y1]
    }

    pub fn start(&self) -> [f64; 2] {
        [self.x0, self.y0]
    }
}

pub fn header() -> String {
    let mut h = String::from("index,v_left,v_right,x0,y0,x1,y1,dx,dy,yaw");
    for i in 0..SENSOR_COUNT {
        write!(h, ",ds_{i:02}").unwrap();
    }
    h.push_str(",stuck");
    h
}

/// Render with nine significant digits, `%.9g` style.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent in {:e} output");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp) as usize;
        let fixed = format!("{v:.decimals$}");
        trim_fraction(&fixed).to_string()
    } else {
        format!("{}e{exp}", trim_fraction(mantissa))
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn format_record(r: &LogRecord) -> String {
    let mut line = String::with_capacity(256);
    write!(line, "{}", r.index).unwrap();
    for v in [
        r.v_left, r.v_right, r.x0, r.y0, r.x1, r.y1, r.dx, r.dy, r.yaw,
    ]
    .into_iter()
    .chain(r.sensors)
    {
        line.push(',');
        line.push_str(&format_sig9(v));
    }
    line.push_str(if r.stuck { ",1" } else { ",0" });
    line
}

/// Parse one data line. `line_no` is 1-based and only used for errors.
pub fn parse_record(line: &str, line_no: usize) -> Result<LogRecord> {
    let err = |message: String| Error::Parse {
        line: line_no,
        message,
    };
    let fields: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
    if fields.len() != FIELD_COUNT {
        return Err(err(format!(
            "expected {FIELD_COUNT} columns, found {}",
            fields.len()
        )));
    }
    let index: u64 = fields[0]
        .trim()
        .parse()
        .map_err(|_| err(format!("bad index {:?}", fields[0])))?;
    let mut nums = [0.0f64; FIELD_COUNT - 2];
    for (slot, (col, raw)) in nums
        .iter_mut()
        .zip(fields[1..FIELD_COUNT - 1].iter().enumerate())
    {
        let v: f64 = raw
            .trim()
            .parse()
            .map_err(|_| err(format!("column {} is not a number: {raw:?}", col + 1)))?;
        if !v.is_finite() {
            return Err(err(format!("column {} is not finite", col + 1)));
        }
        *slot = v;
    }
    let stuck = match fields[FIELD_COUNT - 1].trim() {
        "0" => false,
        "1" => true,
        other => return Err(err(format!("stuck flag must be 0 or 1, got {other:?}"))),
    };
    let mut sensors = [0.0; SENSOR_COUNT];
    sensors.copy_from_slice(&nums[9..]);
    Ok(LogRecord {
        index,
        v_left: nums[0],
        v_right: nums[1],
        x0: nums[2],
        y0: nums[3],
        x1: nums[4],
        y1: nums[5],
        dx: nums[6],
        dy: nums[7],
        yaw: nums[8],
        sensors,
        stuck,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_digest: String,
    pub seed: u64,
}

/// Ordered, index-contiguous collection of log records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    records: Vec<LogRecord>,
    provenance: Option<Provenance>,
}

impl Dataset {
    pub fn new(records: Vec<LogRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if r.index != i as u64 {
                return Err(invalid(format!(
                    "record at position {i} carries index {}",
                    r.index
                )));
            }
        }
        Ok(Self {
            records,
            provenance: None,
        })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn into_records(self) -> Vec<LogRecord> {
        self.records
    }
}

impl AsRef<[LogRecord]> for Dataset {
    fn as_ref(&self) -> &[LogRecord] {
        &self.records
    }
}

pub fn write_log_to<W: Write>(records: &[LogRecord], mut out: W) -> Result<()> {
    writeln!(out, "{}", header())?;
    for r in records {
        writeln!(out, "{}", format_record(r))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_log(dataset: &Dataset, path: &Path) -> Result<()> {
    write_log_to(dataset.records(), BufWriter::new(File::create(path)?))
}

pub fn read_log_from<R: BufRead>(input: R) -> Result<Dataset> {
    let mut lines = input.lines();
    let head = lines.next().transpose()?.ok_or(Error::Parse {
        line: 1,
        message: "missing header".into(),
    })?;
    if head.trim_end_matches('\r') != header() {
        return Err(Error::Parse {
            line: 1,
            message: "header does not match the log schema".into(),
        });
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_record(&line, line_no)?;
        if rec.index != records.len() as u64 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected index {}, found {}", records.len(), rec.index),
            });
        }
        records.push(rec);
    }
    Dataset::new(records)
}

pub fn read_log(path: &Path) -> Result<Dataset> {
    read_log_from(BufReader::new(File::open(path)?))
}

/// Records whose yaw lies within `tolerance` of `center` on the circle.
pub fn filter_by_yaw(records: &[LogRecord], center: f64, tolerance: f64) -> Result<Vec<LogRecord>> {
    if !(tolerance.is_finite() && tolerance >= 0.0 && center.is_finite()) {
        return Err(invalid(format!(
            "yaw filter needs finite center and tolerance >= 0, got ({center}, {tolerance})"
        )));
    }
    Ok(records
        .iter()
        .filter(|r| wrap_angle(r.yaw - center).abs() <= tolerance)
        .cloned()
        .collect())
}

/// Per-column min-max scaling of the sensor block.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub matrix: Points,
    pub ranges: Vec<(f64, f64)>,
}

pub fn sensor_matrix(records: &[LogRecord]) -> Result<Points> {
    let mut data = Vec::with_capacity(records.len() * SENSOR_COUNT);
    for r in records {
        data.extend_from_slice(&r.sensors);
    }
    Points::new(SENSOR_COUNT, data)
}

/// Constant columns map to zero.
pub fn normalize_columns(matrix: &Points) -> Result<Normalized> {
    if matrix.is_empty() {
        return Err(invalid("cannot normalise an empty matrix"));
    }
    let dim = matrix.dim();
    let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); dim];
    for row in matrix.rows() {
        for (r, &v) in ranges.iter_mut().zip(row) {
            r.0 = r.0.min(v);
            r.1 = r.1.max(v);
        }
    }
    let data = matrix
        .rows()
        .flat_map(|row| {
            row.iter()
                .zip(&ranges)
                .map(|(&v, &(lo, hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(Normalized {
        matrix: Points::new(dim, data)?,
        ranges,
    })
}

pub fn normalize_sensors(records: &[LogRecord]) -> Result<Normalized> {
    if records.is_empty() {
        return Err(invalid("cannot normalise an empty dataset"));
    }
    normalize_columns(&sensor_matrix(records)?)
}

pub fn denormalize(matrix: &Points, ranges: &[(f64, f64)]) -> Result<Points> {
    if ranges.len() != matrix.dim() {
        return Err(invalid("range count does not match matrix dimension"));
    }
    let data = matrix
        .rows()
        .flat_map(|row| {
            row.iter()
                .zip(ranges)
                .map(|(&v, &(lo, hi))| lo + v * (hi - lo))
                .collect::<Vec<_>>()
        })
        .collect();
    Points::new(matrix.dim(), data)
}

/// Square lattice of `resolution` cells per side over the arena.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    resolution: usize,
    extent: f64,
}

impl GridSpec {
    pub const DEFAULT_RESOLUTION: usize = 50;

    pub fn new(resolution: usize, extent: f64) -> Result<Self> {
        if resolution == 0 {
            return Err(invalid("grid resolution must be at least 1"));
        }
        if !(extent.is_finite() && extent > 0.0) {
            return Err(invalid("grid extent must be positive"));
        }
        Ok(Self { resolution, extent })
    }

    pub fn for_arena(arena: &Arena, resolution: usize) -> Result<Self> {
        Self::new(resolution, arena.side())
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn cell_size(&self) -> f64 {
        self.extent / self.resolution as f64
    }

    pub fn n_cells(&self) -> usize {
        self.resolution * self.resolution
    }

    fn axis_index(&self, v: f64) -> Option<usize> {
        let h = self.extent / 2.0;
        if !(v >= -h && v <= h) {
            return None;
        }
        let i = ((v + h) / self.extent * self.resolution as f64).floor() as usize;
        Some(i.min(self.resolution - 1))
    }

    /// (row, col) with row indexing y and col indexing x, both from the
    /// negative side. Cells are half-open except the last, which also
    /// takes the positive boundary.
    pub fn cell_of(&self, x: f64, y: f64) -> Result<(usize, usize)> {
        match (self.axis_index(y), self.axis_index(x)) {
            (Some(r), Some(c)) => Ok((r, c)),
            _ => Err(invalid(format!("point ({x}, {y}) lies outside the grid"))),
        }
    }

    pub fn flat_index(&self, x: f64, y: f64) -> Result<usize> {
        let (r, c) = self.cell_of(x, y)?;
        Ok(r * self.resolution + c)
    }

    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        let h = self.extent / 2.0;
        let s = self.cell_size();
        [-h + (col as f64 + 0.5) * s, -h + (row as f64 + 0.5) * s]
    }
}

/// Visit counts of record end positions, row-major.
pub fn occupancy_grid(records: &[LogRecord], grid: &GridSpec) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; grid.n_cells()];
    for r in records {
        counts[grid.flat_index(r.x1, r.y1)?] += 1;
    }
    Ok(counts)
}
