//! Run configuration: one JSON file names the input artifacts, the sweep
//! grids, and the race settings for every CLI command; command-line flags
//! override individual fields. Paths are resolved relative to the config
//! file's directory. All values are SI; durations additionally accept
//! strings with an explicit unit suffix (`"450s"`, `"7.5min"`, `"6h"`).

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::race::RaceMode;

/// A duration in seconds. Deserializes from a bare number (seconds) or a
/// string with a unit suffix; serializes back as seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Seconds(pub f64);

impl<'de> Deserialize<'de> for Seconds {
    fn deserialize<D>(d: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(Seconds(x)),
            Raw::Text(s) => parse_duration(&s)
                .map(Seconds)
                .map_err(serde::de::Error::custom),
        }
    }
}

/// Parses `"450s"`, `"7.5min"`, `"6h"` (whitespace around the number is
/// fine) into seconds. Suffixes: `s`/`sec`, `min`, `h`/`hr`.
pub fn parse_duration(text: &str) -> std::result::Result<f64, String> {
    let t = text.trim();
    let split = t
        .find(|c: char| c.is_ascii_alphabetic())
        .ok_or_else(|| format!("duration '{text}' needs a unit suffix: s, min, or h"))?;
    let (num, unit) = t.split_at(split);
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|e| format!("duration '{text}': {e}"))?;
    let scale = match unit.trim() {
        "s" | "sec" | "secs" => 1.0,
        "min" => 60.0,
        "h" | "hr" | "hrs" => 3600.0,
        other => return Err(format!("duration '{text}': unknown unit '{other}'")),
    };
    if !value.is_finite() {
        return Err(format!("duration '{text}' is not finite"));
    }
    Ok(value * scale)
}

/// Lap-count × charge-time grid for the stint sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrids {
    pub n_laps: Vec<usize>,
    pub t_charge: Vec<Seconds>,
}

/// Race-level settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaceSettings {
    /// Total race duration.
    pub t_race: Seconds,
    /// Upper bound on the number of stints the planner may schedule.
    #[serde(default = "default_max_stints")]
    pub max_stints: usize,
    /// `integer` (lap counts integral) or `relaxed`.
    #[serde(default)]
    pub mode: ModeCfg,
    /// Big-M softening constant override; leave unset for the default.
    #[serde(default)]
    pub big_m: Option<Seconds>,
}

fn default_max_stints() -> usize {
    16
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeCfg {
    #[default]
    Integer,
    Relaxed,
}

impl From<ModeCfg> for RaceMode {
    fn from(m: ModeCfg) -> RaceMode {
        match m {
            ModeCfg::Integer => RaceMode::IntegerLaps,
            ModeCfg::Relaxed => RaceMode::RelaxedLaps,
        }
    }
}

/// One config file drives all commands.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Vehicle parameter JSON.
    pub vehicle: PathBuf,
    /// Track CSV (`s_m,kappa_per_m,theta_rad,pit`).
    pub track: PathBuf,
    /// Charge model JSON.
    pub charge: PathBuf,
    /// Space-grid spacing [m].
    #[serde(default = "default_delta_s")]
    pub delta_s_m: f64,
    /// Pit-lane speed cap [m/s], applied on the pit arc at stint boundaries.
    pub v_pit_max_mps: f64,
    /// Global speed cap [m/s].
    pub v_cap_mps: f64,
    /// Directory where artifacts are written.
    pub out_dir: PathBuf,
    /// Seed for synthetic-data generation only; solves never draw
    /// randomness.
    #[serde(default)]
    pub seed: u64,
    /// Worker threads for the stint sweep (0 = logical cores).
    #[serde(default)]
    pub jobs: usize,
    pub sweep: SweepGrids,
    pub race: RaceSettings,
    /// Charge-time distance beyond which `validate` flags a stint;
    /// defaults to one sweep-grid cell.
    #[serde(default)]
    pub validate_tol: Option<Seconds>,
}

fn default_delta_s() -> f64 {
    8.0
}

impl RunConfig {
    /// Loads and validates a config, resolving relative paths against the
    /// config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.vehicle,
            &mut self.track,
            &mut self.charge,
            &mut self.out_dir,
        ] {
            if p.is_relative() {
                // Drop no-op `.` components so artifact paths print cleanly.
                *p = base
                    .join(&p)
                    .components()
                    .filter(|c| !matches!(c, std::path::Component::CurDir))
                    .collect();
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (label, p) in [
            ("vehicle", &self.vehicle),
            ("track", &self.track),
            ("charge", &self.charge),
        ] {
            if !p.is_file() {
                return Err(Error::Config(format!(
                    "{label} file does not exist: {}",
                    p.display()
                )));
            }
        }
        if !(self.delta_s_m.is_finite() && self.delta_s_m > 0.0) {
            return Err(Error::Config(format!(
                "delta_s_m must be positive, got {}",
                self.delta_s_m
            )));
        }
        if !(self.v_pit_max_mps > 0.0 && self.v_pit_max_mps < self.v_cap_mps) {
            return Err(Error::Config(format!(
                "need 0 < v_pit_max_mps ({}) < v_cap_mps ({})",
                self.v_pit_max_mps, self.v_cap_mps
            )));
        }
        if self.jobs > 4096 {
            return Err(Error::Config(format!("jobs = {} is unreasonable", self.jobs)));
        }
        if self.sweep.n_laps.is_empty() || self.sweep.t_charge.is_empty() {
            return Err(Error::Config("sweep grids must be nonempty".into()));
        }
        if !self.sweep.n_laps.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(
                "sweep.n_laps must be strictly increasing".into(),
            ));
        }
        if !self
            .sweep
            .t_charge
            .windows(2)
            .all(|w| w[0].0 < w[1].0)
        {
            return Err(Error::Config(
                "sweep.t_charge must be strictly increasing".into(),
            ));
        }
        if self.sweep.t_charge[0].0 <= 0.0 {
            return Err(Error::Config(
                "sweep.t_charge values must be positive".into(),
            ));
        }
        if !(self.race.t_race.0.is_finite() && self.race.t_race.0 > 0.0) {
            return Err(Error::Config(format!(
                "race.t_race must be positive, got {}",
                self.race.t_race.0
            )));
        }
        if !(1..=128).contains(&self.race.max_stints) {
            return Err(Error::Config(format!(
                "race.max_stints must lie in [1, 128], got {}",
                self.race.max_stints
            )));
        }
        if let Some(m) = self.race.big_m {
            if !(m.0.is_finite() && m.0 > 0.0) {
                return Err(Error::Config(format!(
                    "race.big_m must be positive, got {}",
                    m.0
                )));
            }
        }
        if let Some(t) = self.validate_tol {
            if !(t.0.is_finite() && t.0 > 0.0) {
                return Err(Error::Config(format!(
                    "validate_tol must be positive, got {}",
                    t.0
                )));
            }
        }
        Ok(())
    }

    pub fn to_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Charge-time grid in seconds.
    pub fn t_charge_grid_s(&self) -> Vec<f64> {
        self.sweep.t_charge.iter().map(|t| t.0).collect()
    }

    /// Default flag tolerance for `validate`: the widest charge-grid cell.
    pub fn default_validate_tol_s(&self) -> f64 {
        let g = self.t_charge_grid_s();
        g.windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
            .max(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn durations_parse_with_suffixes() {
        assert_eq!(parse_duration("450s").unwrap(), 450.0);
        assert_eq!(parse_duration("7.5min").unwrap(), 450.0);
        assert_eq!(parse_duration("6h").unwrap(), 21_600.0);
        assert_eq!(parse_duration(" 2 hr ").unwrap(), 7_200.0);
        assert!(parse_duration("450").is_err(), "bare strings need a unit");
        assert!(parse_duration("5 parsec").is_err());
        assert!(parse_duration("s").is_err());
    }

    #[test]
    fn seconds_accept_numbers_and_strings() {
        #[derive(Deserialize)]
        struct Probe {
            t: Seconds,
        }
        let a: Probe = serde_json::from_str(r#"{"t": 450}"#).unwrap();
        assert_eq!(a.t.0, 450.0);
        let b: Probe = serde_json::from_str(r#"{"t": "7.5min"}"#).unwrap();
        assert_eq!(b.t.0, 450.0);
        assert!(serde_json::from_str::<Probe>(r#"{"t": "7.5 fortnights"}"#).is_err());
    }

    #[test]
    fn config_round_trips_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["vehicle.json", "track.csv", "charge.json"] {
            std::fs::write(dir.path().join(name), "{}").unwrap();
        }
        let text = r#"{
            "vehicle": "vehicle.json",
            "track": "track.csv",
            "charge": "charge.json",
            "out_dir": "out",
            "v_pit_max_mps": 14.0,
            "v_cap_mps": 95.0,
            "sweep": { "n_laps": [3, 6, 9], "t_charge": ["1min", 120, "3min"] },
            "race": { "t_race": "6h", "max_stints": 12, "mode": "relaxed" }
        }"#;
        let path = dir.path().join("config.json");
        std::fs::write(&path, text).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.delta_s_m, 8.0, "default spacing");
        assert_eq!(cfg.race.t_race.0, 21_600.0);
        assert_eq!(cfg.race.mode, ModeCfg::Relaxed);
        assert_eq!(cfg.t_charge_grid_s(), vec![60.0, 120.0, 180.0]);
        assert_eq!(cfg.default_validate_tol_s(), 60.0);
        assert!(cfg.vehicle.is_absolute(), "paths resolve against the config dir");
        // Round-trip through JSON preserves every field.
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.race.max_stints, 12);
        assert_eq!(back.sweep.n_laps, vec![3, 6, 9]);
    }

    #[test]
    fn missing_files_and_bad_grids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mk = |sweep: &str| {
            format!(
                r#"{{
                    "vehicle": "vehicle.json",
                    "track": "track.csv",
                    "charge": "charge.json",
                    "out_dir": "out",
                    "v_pit_max_mps": 14.0,
                    "v_cap_mps": 95.0,
                    "sweep": {sweep},
                    "race": {{ "t_race": 3600 }}
                }}"#
            )
        };
        let path = dir.path().join("config.json");
        std::fs::write(&path, mk(r#"{ "n_laps": [3], "t_charge": [60] }"#)).unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "missing files: {err}");
        assert_eq!(err.exit_code(), 2);

        for name in ["vehicle.json", "track.csv", "charge.json"] {
            std::fs::write(dir.path().join(name), "{}").unwrap();
        }
        std::fs::write(&path, mk(r#"{ "n_laps": [3, 3], "t_charge": [60] }"#)).unwrap();
        assert!(RunConfig::load(&path).is_err(), "non-increasing lap grid");
        std::fs::write(&path, mk(r#"{ "n_laps": [], "t_charge": [60] }"#)).unwrap();
        assert!(RunConfig::load(&path).is_err(), "empty grid");
        // Unknown fields are typos, not extensions.
        std::fs::write(
            &path,
            mk(r#"{ "n_laps": [3], "t_charge": [60], "n_lap": [1] }"#),
        )
        .unwrap();
        assert!(RunConfig::load(&path).is_err(), "unknown field");
    }
}
