//! Run configuration and its text format.
//!
//! One `key = value` pair per line; `#` starts a comment; blank lines are
//! ignored. Keys are dotted (`sac.lr_value`, `vehicle.brake_decel.snowy`).
//! `profile` selects the defaults every other key overrides, wherever it
//! appears in the file. Unknown and repeated keys are rejected.
//!
//! ```text
//! profile = desk
//! selector = scenario:4
//! seeds = 1, 2, 3
//! sac.alpha = 0.2
//! ```

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::curriculum::{baseline_budget, baseline_scenario, builtin_scenario, CurriculumScenario, TrainSettings};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::sac::SacHyperParams;
use crate::track::TrackKind;
use crate::vehicle::Weather;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Narrow networks, budgets divided by 20, short episodes.
    Desk,
    /// Full-size networks and budgets.
    Paper,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::InvalidConfig(format!("unknown profile `{other}` (desk|paper)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Selector {
    Baseline { track: TrackKind, weather: Weather },
    Scenario(usize),
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selector::Baseline { track, weather } => write!(f, "baseline:{}:{}", track.name(), weather.name()),
            Selector::Scenario(n) => write!(f, "scenario:{n}"),
        }
    }
}

impl FromStr for Selector {
    type Err = Error;

    /// `scenario:N` or `baseline:TRACK:WEATHER`; `TRACK:WEATHER` alone means a baseline.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        match parts.as_slice() {
            ["scenario", n] => n
                .parse()
                .map(Selector::Scenario)
                .map_err(|_| Error::InvalidConfig(format!("bad scenario number `{n}`"))),
            ["baseline", t, w] | [t, w] => Ok(Selector::Baseline {
                track: t.parse()?,
                weather: w.parse()?,
            }),
            _ => Err(Error::InvalidConfig(format!(
                "bad selector `{s}` (scenario:N or baseline:TRACK:WEATHER)"
            ))),
        }
    }
}

impl Selector {
    /// Directory-friendly name, also used as the run's scenario name.
    pub fn slug(&self) -> String {
        match self {
            Selector::Baseline { track, weather } => crate::curriculum::baseline_name(*track, *weather),
            Selector::Scenario(n) => format!("scenario_{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: Profile,
    pub selector: Selector,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Worker threads for independent seeds; 0 picks the available parallelism.
    pub threads: usize,
    pub budget_divisor: usize,
    /// Baseline step budget before division; 0 uses the per-track default.
    pub baseline_budget: usize,
    pub reuse_baseline_checkpoint: bool,
    pub train: TrainSettings,
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let train = match profile {
            Profile::Desk => TrainSettings {
                sac: SacHyperParams {
                    hidden_width: 64,
                    reward_scale: 0.01,
                    tau: 0.005,
                    gamma: 0.98,
                    ..SacHyperParams::default()
                },
                env: EnvConfig {
                    max_episode_steps: 500,
                    ..EnvConfig::default()
                },
                eval_every: 1000,
                loss_log_every: 10,
                ..TrainSettings::default()
            },
            Profile::Paper => TrainSettings::default(),
        };
        Self {
            profile,
            selector: Selector::Scenario(4),
            seeds: vec![1, 2, 3],
            output_dir: PathBuf::from("runs"),
            threads: 0,
            budget_divisor: match profile {
                Profile::Desk => 20,
                Profile::Paper => 1,
            },
            baseline_budget: 0,
            reuse_baseline_checkpoint: true,
            train,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must not be empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::InvalidConfig("seeds must be distinct".into()));
        }
        if self.budget_divisor == 0 {
            return Err(Error::InvalidConfig("run.budget_divisor must be positive".into()));
        }
        self.scenario()?;
        self.train.validate()
    }

    /// The phases this config trains, budgets already scaled.
    pub fn scenario(&self) -> Result<CurriculumScenario> {
        match self.selector {
            Selector::Scenario(n) => builtin_scenario(n, self.budget_divisor),
            Selector::Baseline { track, weather } => {
                let budget = match self.baseline_budget {
                    0 => baseline_budget(track),
                    b => b,
                };
                Ok(baseline_scenario(track, weather, budget).scaled(self.budget_divisor))
            }
        }
    }

    pub fn threads(&self) -> usize {
        match self.threads {
            0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
            n => n,
        }
    }

    /// Parses a complete configuration; see the module docs for the grammar.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_pairs(text)?)
    }

    /// Builds a config from ordered `(key, value)` pairs.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (k, _) in pairs {
            if !seen.insert(k.as_str()) {
                return Err(Error::InvalidConfig(format!("key `{k}` given twice")));
            }
        }
        let profile = match pairs.iter().find(|(k, _)| k == "profile") {
            Some((_, v)) => v.parse()?,
            None => Profile::Desk,
        };
        let mut cfg = Self::for_profile(profile);
        for (k, v) in pairs.iter().filter(|(k, _)| k != "profile") {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Overrides one key; `profile` cannot be changed this way.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "selector" => self.selector = value.parse()?,
            "seeds" => self.seeds = parse_seeds(value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "profile" => {
                return Err(Error::InvalidConfig(
                    "profile must be chosen before other keys are applied".into(),
                ))
            }
            _ => {
                if !set_field(self, key, value)? {
                    return Err(Error::InvalidConfig(format!("unknown key `{key}`")));
                }
            }
        }
        Ok(())
    }

    /// Every key with its resolved value, in canonical order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("profile = {}\n", self.profile));
        out.push_str(&format!("selector = {}\n", self.selector));
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        out.push_str(&format!("seeds = {}\n", seeds.join(", ")));
        out.push_str(&format!("output_dir = {}\n", self.output_dir.display()));
        for (k, v) in field_lines(self) {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// The same config narrowed to one seed, as stored beside each run.
    pub fn for_seed(&self, seed: u64) -> Self {
        Self {
            seeds: vec![seed],
            ..self.clone()
        }
    }
}

pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected `key = value`", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::InvalidConfig(format!("line {}: empty key", i + 1)));
        }
        pairs.push((k.to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Splits `key=value` as given on a command line.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override `{s}` is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad seed `{}`", p.trim())))
        })
        .collect()
}

trait ConfigValue: Sized {
    fn parse_value(key: &str, s: &str) -> Result<Self>;
    fn format_value(&self) -> String;
}

macro_rules! numeric_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(key: &str, s: &str) -> Result<Self> {
                s.parse().map_err(|_| Error::InvalidConfig(format!("`{key}`: cannot parse `{s}`")))
            }
            fn format_value(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

numeric_value!(f64, usize, bool);

macro_rules! fields {
    ($($key:literal => $($path:ident).+;)*) => {
        fn set_field(cfg: &mut RunConfig, key: &str, value: &str) -> Result<bool> {
            match key {
                $($key => cfg.$($path).+ = ConfigValue::parse_value(key, value)?,)*
                _ => return Ok(false),
            }
            Ok(true)
        }

        fn field_lines(cfg: &RunConfig) -> Vec<(&'static str, String)> {
            vec![$(($key, cfg.$($path).+.format_value()),)*]
        }

        /// All dotted keys accepted besides profile, selector, seeds and output_dir.
        pub const FIELD_KEYS: &[&str] = &[$($key,)*];
    };
}

fields! {
    "threads" => threads;
    "run.budget_divisor" => budget_divisor;
    "run.baseline_budget" => baseline_budget;
    "run.reuse_baseline_checkpoint" => reuse_baseline_checkpoint;
    "sac.lr_value" => train.sac.lr_value;
    "sac.lr_policy" => train.sac.lr_policy;
    "sac.gamma" => train.sac.gamma;
    "sac.tau" => train.sac.tau;
    "sac.alpha" => train.sac.alpha;
    "sac.batch_size" => train.sac.batch_size;
    "sac.buffer_capacity" => train.sac.buffer_capacity;
    "sac.theta" => train.sac.theta;
    "sac.update_every" => train.sac.update_every;
    "sac.warmup_steps" => train.sac.warmup_steps;
    "sac.hidden_width" => train.sac.hidden_width;
    "sac.hidden_layers" => train.sac.hidden_layers;
    "sac.twin_critics" => train.sac.twin_critics;
    "sac.reward_scale" => train.sac.reward_scale;
    "env.dt" => train.env.dt;
    "env.max_episode_steps" => train.env.max_episode_steps;
    "env.low_speed_threshold_kmh" => train.env.low_speed_threshold_kmh;
    "env.low_speed_grace" => train.env.low_speed_grace;
    "env.start_speed" => train.env.start_speed;
    "sensor.max_range" => train.env.sensor.max_range;
    "vehicle.wheelbase" => train.env.vehicle.wheelbase;
    "vehicle.max_steer_angle" => train.env.vehicle.max_steer_angle;
    "vehicle.max_engine_accel" => train.env.vehicle.max_engine_accel;
    "vehicle.brake_decel.clear" => train.env.vehicle.brake_decel.clear;
    "vehicle.brake_decel.rainy" => train.env.vehicle.brake_decel.rainy;
    "vehicle.brake_decel.snowy" => train.env.vehicle.brake_decel.snowy;
    "vehicle.max_lateral_accel_dry" => train.env.vehicle.max_lateral_accel_dry;
    "vehicle.top_speed" => train.env.vehicle.top_speed;
    "vehicle.drag_coeff" => train.env.vehicle.drag_coeff;
    "vehicle.slip_decay" => train.env.vehicle.slip_decay;
    "train.eval_every" => train.eval_every;
    "train.eval_episodes" => train.eval_episodes;
    "train.final_eval_episodes" => train.final_eval_episodes;
    "train.flush_buffer_between_phases" => train.flush_buffer_between_phases;
    "train.loss_log_every" => train.loss_log_every;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_and_paper_defaults() {
        let d = RunConfig::for_profile(Profile::Desk);
        assert_eq!(d.train.sac.hidden_width, 64);
        assert_eq!(d.budget_divisor, 20);
        assert_eq!(d.seeds, vec![1, 2, 3]);
        assert_eq!((d.train.sac.tau, d.train.sac.gamma, d.train.sac.alpha), (0.005, 0.98, 0.2));
        let p = RunConfig::for_profile(Profile::Paper);
        assert_eq!(p.train.sac.hidden_width, 256);
        assert_eq!(p.budget_divisor, 1);
        assert_eq!(p.train.sac.lr_value, 0.0005);
        assert_eq!(p.train.sac.lr_policy, 0.0001);
        assert_eq!(p.train.sac.gamma, 0.995);
        assert_eq!(p.train.sac.tau, 0.001);
        assert_eq!(p.train.sac.alpha, 0.2);
        assert_eq!(p.train.sac.batch_size, 64);
        assert_eq!(p.train.sac.buffer_capacity, 100_000);
        assert_eq!(p.train.sac.theta, 0.15);
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::for_profile(Profile::Paper);
        cfg.selector = Selector::Baseline {
            track: TrackKind::UTurn,
            weather: Weather::Snowy,
        };
        cfg.seeds = vec![7, 11];
        cfg.train.sac.alpha = 0.1 + 0.2;
        cfg.train.env.vehicle.brake_decel.snowy = 2.713_400_000_000_001;
        let back = RunConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_blank_lines_and_profile_anywhere() {
        let text = "# header\n\nsac.alpha = 0.5   # trailing\nprofile = paper\nseeds = 4,5\n";
        let cfg = RunConfig::from_text(text).unwrap();
        assert_eq!(cfg.profile, Profile::Paper);
        assert_eq!(cfg.train.sac.alpha, 0.5);
        assert_eq!(cfg.train.sac.hidden_width, 256);
        assert_eq!(cfg.seeds, vec![4, 5]);
    }

    #[test]
    fn rejects_unknown_repeated_and_malformed() {
        for bad in [
            "sac.alphaa = 1",
            "sac.alpha = 1\nsac.alpha = 2",
            "just words",
            "sac.batch_size = many",
            "profile = laptop",
            "selector = scenario:x",
        ] {
            assert!(
                matches!(RunConfig::from_text(bad), Err(Error::InvalidConfig(_))),
                "{bad}"
            );
        }
        let cfg = RunConfig::from_text("selector = scenario:9").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn selectors() {
        assert_eq!("scenario:4".parse::<Selector>().unwrap(), Selector::Scenario(4));
        let b = Selector::Baseline {
            track: TrackKind::Straight,
            weather: Weather::Clear,
        };
        assert_eq!("straight:clear".parse::<Selector>().unwrap(), b);
        assert_eq!(b.to_string().parse::<Selector>().unwrap(), b);
    }

    #[test]
    fn scenario_budgets_follow_divisor() {
        let mut cfg = RunConfig::for_profile(Profile::Desk);
        cfg.selector = "baseline:circuit:snowy".parse().unwrap();
        assert_eq!(cfg.scenario().unwrap().total_budget(), 10_000);
        cfg.baseline_budget = 4000;
        assert_eq!(cfg.scenario().unwrap().total_budget(), 200);
        cfg.selector = Selector::Scenario(4);
        assert_eq!(cfg.scenario().unwrap().total_budget(), 10_000);
    }

    #[test]
    fn every_field_key_is_settable() {
        let text = RunConfig::for_profile(Profile::Desk).to_text();
        let keys: Vec<String> = parse_pairs(&text).unwrap().into_iter().map(|(k, _)| k).collect();
        for k in FIELD_KEYS {
            assert!(keys.iter().any(|x| x == k), "{k}");
        }
    }
}
