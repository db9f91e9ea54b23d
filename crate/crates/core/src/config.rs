//! Line-oriented `key = value` run configuration.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::explore::ExploreConfig;
use crate::sim::{Arena, RobotParams, SensorModel, World};

pub const KEYS: [&str; 14] = [
    "side",
    "body_radius",
    "wheel_separation",
    "max_speed",
    "dt",
    "action_duration",
    "stuck_threshold",
    "tolerance",
    "max_range",
    "seed",
    "n_actions",
    "noise",
    "resolution",
    "checkpoint_every",
];

/// Every tunable of a run. Unset keys keep their defaults; `seed` has no
/// default so callers can tell whether one was given.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub side: f64,
    pub body_radius: f64,
    pub wheel_separation: f64,
    pub max_speed: f64,
    pub dt: f64,
    pub action_duration: f64,
    pub stuck_threshold: f64,
    pub tolerance: f64,
    pub max_range: f64,
    pub seed: Option<u64>,
    pub n_actions: u64,
    pub noise: bool,
    pub resolution: usize,
    pub checkpoint_every: u64,
}

impl Default for Settings {
    fn default() -> Self {
        let robot = RobotParams::default();
        let explore = ExploreConfig::default();
        Self {
            side: Arena::default().side(),
            body_radius: robot.body_radius,
            wheel_separation: robot.wheel_separation,
            max_speed: robot.max_speed,
            dt: robot.dt,
            action_duration: explore.action_duration,
            stuck_threshold: explore.stuck_threshold,
            tolerance: SensorModel::DEFAULT_TOLERANCE,
            max_range: SensorModel::DEFAULT_MAX_RANGE,
            seed: None,
            n_actions: explore.n_actions,
            noise: explore.noise_enabled,
            resolution: crate::dataset::GridSpec::DEFAULT_RESOLUTION,
            checkpoint_every: explore.checkpoint_every,
        }
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "on" | "true" | "1" | "yes" => Some(true),
        "off" | "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

impl Settings {
    /// Apply one `key`/`value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("bad value {v:?} for {key}"))
        }
        match key {
            "side" => self.side = num(key, value)?,
            "body_radius" => self.body_radius = num(key, value)?,
            "wheel_separation" => self.wheel_separation = num(key, value)?,
            "max_speed" => self.max_speed = num(key, value)?,
            "dt" => self.dt = num(key, value)?,
            "action_duration" => self.action_duration = num(key, value)?,
            "stuck_threshold" => self.stuck_threshold = num(key, value)?,
            "tolerance" => self.tolerance = num(key, value)?,
            "max_range" => self.max_range = num(key, value)?,
            "seed" => self.seed = Some(num(key, value)?),
            "n_actions" => self.n_actions = num(key, value)?,
            "noise" => {
                self.noise =
                    parse_bool(value).ok_or_else(|| format!("bad value {value:?} for noise"))?
            }
            "resolution" => self.resolution = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Parse config text. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected `key = value`".into(),
            })?;
            s.set(k.trim(), v.trim()).map_err(|message| Error::Parse {
                line: i + 1,
                message,
            })?;
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Canonical text form; `parse(render())` reproduces the settings.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        line("side", self.side.to_string());
        line("body_radius", self.body_radius.to_string());
        line("wheel_separation", self.wheel_separation.to_string());
        line("max_speed", self.max_speed.to_string());
        line("dt", self.dt.to_string());
        line("action_duration", self.action_duration.to_string());
        line("stuck_threshold", self.stuck_threshold.to_string());
        line("tolerance", self.tolerance.to_string());
        line("max_range", self.max_range.to_string());
        if let Some(seed) = self.seed {
            line("seed", seed.to_string());
        }
        line("n_actions", self.n_actions.to_string());
        line("noise", if self.noise { "on" } else { "off" }.to_string());
        line("resolution", self.resolution.to_string());
        line("checkpoint_every", self.checkpoint_every.to_string());
        out
    }

    pub fn world(&self) -> Result<World> {
        let arena = Arena::new(self.side)?;
        let robot = RobotParams {
            body_radius: self.body_radius,
            wheel_separation: self.wheel_separation,
            max_speed: self.max_speed,
            dt: self.dt,
        };
        robot.validate(&arena)?;
        let sensors = SensorModel::with_defaults(self.body_radius, self.tolerance, self.max_range)?;
        Ok(World {
            arena,
            robot,
            sensors,
        })
    }

    /// Exploration settings; an unset seed becomes 0.
    pub fn explore(&self) -> ExploreConfig {
        ExploreConfig {
            n_actions: self.n_actions,
            action_duration: self.action_duration,
            max_speed: self.max_speed,
            stuck_threshold: self.stuck_threshold,
            noise_enabled: self.noise,
            seed: self.seed.unwrap_or(0),
            checkpoint_every: self.checkpoint_every,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_keys() {
        let text = "\
# reference run
side = 12
body_radius = 0.3
wheel_separation = 0.5
max_speed = 1.5
dt = 0.1
action_duration = 4
stuck_threshold = 0.02
tolerance = 0.05
max_range = 20
seed = 7
n_actions = 500
noise = on
resolution = 40
checkpoint_every = 50
";
        let s = Settings::parse(text).unwrap();
        assert_eq!(s.side, 12.0);
        assert_eq!(s.seed, Some(7));
        assert!(s.noise);
        assert_eq!(s.resolution, 40);
        assert_eq!(Settings::parse(&s.render()).unwrap(), s);
        assert_eq!(KEYS.len(), s.render().lines().count());
    }

    #[test]
    fn defaults_match_modules() {
        let s = Settings::default();
        let w = s.world().unwrap();
        assert_eq!(w, World::default());
        assert_eq!(s.seed, None);
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert!(matches!(
            Settings::parse("side = 1\nbogus = 2\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            Settings::parse("side 1\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            Settings::parse("noise = maybe"),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
