//! Random-walk data collection with periodic checkpoints.
//!
//! Every action draws two wheel speeds uniformly from
//! [-max_speed, max_speed], holds them for `action_duration` seconds in
//! `dt` substeps, then reads the sensor ring once and emits a
//! [`LogRecord`]. All randomness (commands and sensor noise) comes from a
//! single ChaCha8 stream so a seed fully determines the log, and the
//! stream position is part of the checkpoint so an interrupted run can be
//! continued to the exact same result.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{format_record, header, LogRecord, SENSOR_COUNT};
use crate::error::{invalid, Error, Result};
use crate::sim::{integrate_pose, read_sensors, Pose, World};

pub type SimRng = ChaCha8Rng;

/// The generator every seeded component of the crate draws from.
pub fn seeded_rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExploreConfig {
    pub n_actions: u64,
    pub action_duration: f64,
    pub max_speed: f64,
    pub stuck_threshold: f64,
    pub noise_enabled: bool,
    pub seed: u64,
    pub checkpoint_every: u64,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self {
            n_actions: 0,
            action_duration: 5.0,
            max_speed: 2.0,
            stuck_threshold: 0.01,
            noise_enabled: false,
            seed: 0,
            checkpoint_every: 1000,
        }
    }
}

impl ExploreConfig {
    /// Number of integration substeps per action.
    pub fn substeps(&self, dt: f64) -> Result<u64> {
        if !(self.action_duration.is_finite() && self.action_duration > 0.0) {
            return Err(invalid("action_duration must be positive"));
        }
        let n = (self.action_duration / dt).round();
        if n < 1.0 || ((n * dt) - self.action_duration).abs() > 1e-9 * self.action_duration {
            return Err(invalid(format!(
                "action_duration {} is not a whole multiple of dt {dt}",
                self.action_duration
            )));
        }
        Ok(n as u64)
    }

    pub fn validate(&self, world: &World) -> Result<u64> {
        world.validate()?;
        if !(self.max_speed.is_finite() && self.max_speed >= 0.0) {
            return Err(invalid("max_speed must be >= 0"));
        }
        if self.max_speed > world.robot.max_speed {
            return Err(invalid(format!(
                "sampling max_speed {} exceeds the wheel limit {}",
                self.max_speed, world.robot.max_speed
            )));
        }
        if !(self.stuck_threshold.is_finite() && self.stuck_threshold >= 0.0) {
            return Err(invalid("stuck_threshold must be >= 0"));
        }
        if self.checkpoint_every == 0 {
            return Err(invalid("checkpoint_every must be at least 1"));
        }
        if world.sensors.count() != SENSOR_COUNT {
            return Err(invalid(format!(
                "the log schema holds {SENSOR_COUNT} sensors, model has {}",
                world.sensors.count()
            )));
        }
        self.substeps(world.robot.dt)
    }
}

/// SHA-256 over every parameter that influences the log bytes.
pub fn config_digest(config: &ExploreConfig, world: &World) -> String {
    let mut h = Sha256::new();
    let mut put = |name: &str, bits: u64| {
        h.update(name.as_bytes());
        h.update(bits.to_le_bytes());
    };
    put("n_actions", config.n_actions);
    put("action_duration", config.action_duration.to_bits());
    put("max_speed", config.max_speed.to_bits());
    put("stuck_threshold", config.stuck_threshold.to_bits());
    put("noise", config.noise_enabled as u64);
    put("seed", config.seed);
    put("side", world.arena.side().to_bits());
    put("body_radius", world.robot.body_radius.to_bits());
    put("wheel_separation", world.robot.wheel_separation.to_bits());
    put("wheel_max_speed", world.robot.max_speed.to_bits());
    put("dt", world.robot.dt.to_bits());
    put("sensor_count", world.sensors.count() as u64);
    put("mount_radius", world.sensors.mount_radius().to_bits());
    put("tolerance", world.sensors.tolerance().to_bits());
    for &(d, v) in world.sensors.lookup_table() {
        put("row", d.to_bits());
        put("value", v.to_bits());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub actions_completed: u64,
    pub rng_state: SimRng,
    pub last_pose: Pose,
    pub config_digest: String,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::CorruptCheckpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Uniform wheel command, left drawn first.
pub fn sample_action<R: Rng + ?Sized>(rng: &mut R, max_speed: f64) -> (f64, f64) {
    let left = -max_speed + 2.0 * max_speed * rng.gen::<f64>();
    let right = -max_speed + 2.0 * max_speed * rng.gen::<f64>();
    (left, right)
}

/// True iff the displacement is strictly below `threshold`.
pub fn detect_stuck(start: [f64; 2], end: [f64; 2], threshold: f64) -> bool {
    (end[0] - start[0]).hypot(end[1] - start[1]) < threshold
}

/// Destination for log records.
pub trait LogSink {
    fn append(&mut self, record: &LogRecord) -> Result<()>;

    /// Make everything appended so far durable.
    fn flush(&mut self) -> Result<()> {
        Ok(())
    }
}

impl LogSink for Vec<LogRecord> {
    fn append(&mut self, record: &LogRecord) -> Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

/// CSV log writer over any byte stream.
pub struct CsvSink<W: Write> {
    out: W,
}

impl<W: Write> CsvSink<W> {
    /// Start a fresh log, writing the header.
    pub fn create(mut out: W) -> Result<Self> {
        writeln!(out, "{}", header())?;
        Ok(Self { out })
    }

    /// Continue a log whose header and records already exist.
    pub fn append_to(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> LogSink for CsvSink<W> {
    fn append(&mut self, record: &LogRecord) -> Result<()> {
        writeln!(self.out, "{}", format_record(record))?;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub trait CheckpointStore {
    fn save(&mut self, checkpoint: &Checkpoint) -> Result<()>;
}

impl CheckpointStore for Vec<Checkpoint> {
    fn save(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        self.push(checkpoint.clone());
        Ok(())
    }
}

/// Writes checkpoints as JSON through a temp file and rename.
pub struct FileCheckpointStore {
    path: PathBuf,
}

impl FileCheckpointStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }
}

impl CheckpointStore for FileCheckpointStore {
    fn save(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        let mut tmp = self.path.clone().into_os_string();
        tmp.push(".tmp");
        fs::write(&tmp, checkpoint.to_json()?)?;
        fs::rename(&tmp, &self.path)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    /// Actions already in the log when this call started.
    pub resumed_from: u64,
    /// Total actions in the log when this call returned.
    pub actions_completed: u64,
    /// Stuck actions among those produced by this call.
    pub stuck_count: u64,
}

/// Stepwise random-walk state machine.
pub struct Explorer<'w> {
    config: ExploreConfig,
    world: &'w World,
    substeps: u64,
    digest: String,
    rng: SimRng,
    pose: Pose,
    completed: u64,
}

impl<'w> Explorer<'w> {
    /// Fresh run from the arena centre, heading 0.
    pub fn new(config: &ExploreConfig, world: &'w World) -> Result<Self> {
        let substeps = config.validate(world)?;
        Ok(Self {
            config: config.clone(),
            world,
            substeps,
            digest: config_digest(config, world),
            rng: SimRng::seed_from_u64(config.seed),
            pose: Pose::origin(),
            completed: 0,
        })
    }

    pub fn from_checkpoint(
        checkpoint: &Checkpoint,
        config: &ExploreConfig,
        world: &'w World,
    ) -> Result<Self> {
        let mut ex = Self::new(config, world)?;
        if checkpoint.config_digest != ex.digest {
            return Err(Error::CorruptCheckpoint(
                "checkpoint was written for a different configuration".into(),
            ));
        }
        if checkpoint.actions_completed > config.n_actions {
            return Err(Error::CorruptCheckpoint(format!(
                "checkpoint claims {} actions but the run has {}",
                checkpoint.actions_completed, config.n_actions
            )));
        }
        let p = checkpoint.last_pose;
        if !p.is_finite() || !world.arena.is_legal(p.x, p.y, world.robot.body_radius) {
            return Err(Error::CorruptCheckpoint(
                "checkpoint pose is not legal".into(),
            ));
        }
        ex.rng = checkpoint.rng_state.clone();
        ex.pose = p;
        ex.completed = checkpoint.actions_completed;
        Ok(ex)
    }

    pub fn completed(&self) -> u64 {
        self.completed
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn is_done(&self) -> bool {
        self.completed >= self.config.n_actions
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            actions_completed: self.completed,
            rng_state: self.rng.clone(),
            last_pose: self.pose,
            config_digest: self.digest.clone(),
        }
    }

    /// Perform one action and return its record.
    pub fn step(&mut self) -> Result<LogRecord> {
        let (v_left, v_right) = sample_action(&mut self.rng, self.config.max_speed);
        let start = self.pose;
        let mut pose = start;
        for _ in 0..self.substeps {
            pose = integrate_pose(
                pose,
                v_left,
                v_right,
                self.world.robot.dt,
                &self.world.robot,
                &self.world.arena,
            )?;
        }
        let frame = read_sensors(
            &pose,
            &self.world.arena,
            &self.world.sensors,
            self.config.noise_enabled,
            &mut self.rng,
        )?;
        let mut sensors = [0.0; SENSOR_COUNT];
        sensors.copy_from_slice(&frame.values);
        let record = LogRecord {
            index: self.completed,
            v_left,
            v_right,
            x0: start.x,
            y0: start.y,
            x1: pose.x,
            y1: pose.y,
            dx: pose.x - start.x,
            dy: pose.y - start.y,
            yaw: frame.yaw,
            sensors,
            stuck: detect_stuck(
                [start.x, start.y],
                [pose.x, pose.y],
                self.config.stuck_threshold,
            ),
        };
        self.pose = pose;
        self.completed += 1;
        Ok(record)
    }

    /// Drive the run to completion. Checkpoints are saved only after the
    /// sink has flushed the records they cover, so a failing sink leaves
    /// the last saved checkpoint consistent with the durable log.
    pub fn run(
        &mut self,
        sink: &mut dyn LogSink,
        mut store: Option<&mut dyn CheckpointStore>,
    ) -> Result<RunSummary> {
        let resumed_from = self.completed;
        let mut stuck_count = 0;
        while !self.is_done() {
            let rec = self.step()?;
            stuck_count += rec.stuck as u64;
            sink.append(&rec)?;
            if self.completed.is_multiple_of(self.config.checkpoint_every) {
                sink.flush()?;
                if let Some(store) = store.as_deref_mut() {
                    store.save(&self.checkpoint())?;
                }
            }
        }
        sink.flush()?;
        if let Some(store) = store {
            store.save(&self.checkpoint())?;
        }
        Ok(RunSummary {
            resumed_from,
            actions_completed: self.completed,
            stuck_count,
        })
    }
}

pub fn run_exploration(
    config: &ExploreConfig,
    world: &World,
    sink: &mut dyn LogSink,
    store: Option<&mut dyn CheckpointStore>,
) -> Result<RunSummary> {
    Explorer::new(config, world)?.run(sink, store)
}

/// Continue from `checkpoint`. `existing_records` is the number of
/// records already in the log the sink appends to.
pub fn resume(
    checkpoint: &Checkpoint,
    config: &ExploreConfig,
    world: &World,
    existing_records: u64,
    sink: &mut dyn LogSink,
    store: Option<&mut dyn CheckpointStore>,
) -> Result<RunSummary> {
    if existing_records != checkpoint.actions_completed {
        return Err(Error::CorruptCheckpoint(format!(
            "log holds {existing_records} records but the checkpoint covers {}",
            checkpoint.actions_completed
        )));
    }
    Explorer::from_checkpoint(checkpoint, config, world)?.run(sink, store)
}
