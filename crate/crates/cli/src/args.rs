use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "percept",
    version,
    about = "Simulate a range-sensing robot and analyse its perceptual space"
)]
pub struct Cli {
    #[command(flatten)]
    pub shared: Shared,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Shared {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Sensorimotor log (input for analyses, output for `simulate`).
    #[arg(long, global = true)]
    pub log: Option<PathBuf>,
    /// Output directory (for `simulate`, the log file).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Random seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Args)]
pub struct YawArgs {
    /// Heading to keep, radians.
    #[arg(long, allow_hyphen_values = true)]
    pub yaw: Option<f64>,
    /// Half-width of the heading window, radians.
    #[arg(long, default_value_t = 0.1)]
    pub yaw_tol: f64,
}

impl YawArgs {
    pub fn filter(&self) -> Option<(f64, f64)> {
        self.yaw.map(|y| (y, self.yaw_tol))
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run random exploration and write the sensorimotor log.
    Simulate {
        #[arg(long)]
        n_actions: Option<u64>,
        #[arg(long, value_enum)]
        noise: Option<Switch>,
        /// Checkpoint file, written every `checkpoint_every` actions.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Continue from `--checkpoint`, appending to the existing log.
        #[arg(long, requires = "checkpoint")]
        resume: bool,
    },
    /// Visit counts per grid cell.
    PathDensity {
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Physical spread of sensor-space nearest neighbours.
    Knn {
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 200)]
        anchors: usize,
    },
    /// Per-cell standard deviation of one sensor.
    Std {
        #[arg(long)]
        sensor: usize,
        #[arg(long)]
        resolution: Option<usize>,
        /// Use rolling windows over consecutive actions.
        #[arg(long)]
        rolling: bool,
        #[arg(long, default_value_t = 10, requires = "rolling")]
        window: usize,
    },
    /// Pearson correlation between sensors.
    Corr {
        #[command(flatten)]
        yaw: YawArgs,
    },
    /// Convex hulls of physical regions and their sensor-plane images.
    Hull {
        #[arg(long, allow_hyphen_values = true, requires = "region_y")]
        region_x: Option<f64>,
        #[arg(long, allow_hyphen_values = true, requires = "region_x")]
        region_y: Option<f64>,
        /// Number of random regions when no centre is given.
        #[arg(long, default_value_t = 30, conflicts_with = "region_x")]
        regions: usize,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[command(flatten)]
        yaw: YawArgs,
    },
    /// k-means on normalised sensor vectors.
    Cluster {
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        #[command(flatten)]
        yaw: YawArgs,
    },
    /// Inertia curve over k = 1..=k-max and its elbow.
    Elbow {
        #[arg(long, default_value_t = 10)]
        k_max: usize,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        #[command(flatten)]
        yaw: YawArgs,
    },
    /// Map a physical line or grid into the sensor plane.
    Transform {
        /// `x0,y0,x1,y1,n`
        #[arg(
            long,
            allow_hyphen_values = true,
            conflicts_with = "grid",
            required_unless_present = "grid"
        )]
        line: Option<String>,
        /// `x0,y0,x1,y1,nx,ny`
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[command(flatten)]
        yaw: YawArgs,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::PathDensity { .. } => "path-density",
            Command::Knn { .. } => "knn",
            Command::Std { .. } => "std",
            Command::Corr { .. } => "corr",
            Command::Hull { .. } => "hull",
            Command::Cluster { .. } => "cluster",
            Command::Elbow { .. } => "elbow",
            Command::Transform { .. } => "transform",
        }
    }
}
