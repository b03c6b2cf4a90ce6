//! On-disk layout of training runs.
//!
//! ```text
//! <output_dir>/<selector>/seed_<n>/
//!     config.snapshot          resolved config for this seed
//!     phase_<k>/train_log.csv  one row per finished episode
//!     phase_<k>/eval_log.csv   periodic deterministic evaluations
//!     phase_<k>/losses.csv     sampled update losses
//!     phase_<k>/checkpoint.json
//!     phase_<k>/record.json    everything above, for reuse
//!     eval.json                final evaluation {mean, min, max, pct_spread, n}
//!     summary.json
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Selector};
use crate::curriculum::{
    run_curriculum, CurriculumScenario, EvalSummary, Phase, PhaseObserver, PhaseRecord, RunRecord,
};
use crate::error::{Error, Result};
use crate::sac::SacAgent;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;
pub const SNAPSHOT_FILE: &str = "config.snapshot";
pub const EVAL_FILE: &str = "eval.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const EVAL_LOG: &str = "eval_log.csv";
pub const LOSS_LOG: &str = "losses.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const RECORD_FILE: &str = "record.json";

pub const TRAIN_LOG_HEADER: [&str; 8] = [
    "scenario",
    "seed",
    "phase_index",
    "episode",
    "step",
    "episode_return",
    "length",
    "termination",
];

pub fn seed_dir(output_dir: &Path, selector: &Selector, seed: u64) -> PathBuf {
    output_dir.join(selector.slug()).join(format!("seed_{seed}"))
}

pub fn phase_dir(run_dir: &Path, index: usize) -> PathBuf {
    run_dir.join(format!("phase_{index}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub index: usize,
    pub track: String,
    pub weather: String,
    pub step_budget: usize,
    pub start_step: u64,
    pub end_step: u64,
    pub episodes: usize,
    pub last_eval_mean: Option<f64>,
    pub reused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub profile: String,
    pub twin_critics: bool,
    pub total_steps: u64,
    pub phases: Vec<PhaseSummary>,
    pub final_eval: EvalSummary,
    pub wall_clock_s: f64,
}

impl RunSummary {
    pub fn new(record: &RunRecord, cfg: &RunConfig) -> Self {
        Self {
            schema_version: SUMMARY_SCHEMA_VERSION,
            scenario: record.scenario.name.clone(),
            seed: record.seed,
            profile: cfg.profile.name().to_string(),
            twin_critics: record.settings.sac.twin_critics,
            total_steps: record.total_steps(),
            phases: record
                .phases
                .iter()
                .map(|p| PhaseSummary {
                    index: p.phase_index,
                    track: p.phase.track_kind.name().to_string(),
                    weather: p.phase.weather.name().to_string(),
                    step_budget: p.phase.step_budget,
                    start_step: p.start_step,
                    end_step: p.end_step,
                    episodes: p.episodes.len(),
                    last_eval_mean: p.evals.last().map(|e| e.summary.mean),
                    reused: p.reused,
                })
                .collect(),
            final_eval: record.final_eval,
            wall_clock_s: record.wall_clock_s,
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::MissingRuns {
        dir: path.parent().unwrap_or(path).to_path_buf(),
        what: format!("{} is malformed: {e}", path.display()),
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::MissingRuns {
            dir: path.to_path_buf(),
            what: format!("csv: {other:?}"),
        },
    }
}

pub fn write_phase(run_dir: &Path, scenario: &str, seed: u64, record: &PhaseRecord, agent: &SacAgent) -> Result<()> {
    let dir = phase_dir(run_dir, record.phase_index);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let path = dir.join(TRAIN_LOG);
    let mut w = csv_writer(&path)?;
    w.write_record(TRAIN_LOG_HEADER).map_err(|e| csv_err(&path, e))?;
    for ep in &record.episodes {
        w.write_record([
            scenario.to_string(),
            seed.to_string(),
            ep.phase_index.to_string(),
            ep.episode.to_string(),
            ep.step.to_string(),
            ep.episode_return.to_string(),
            ep.length.to_string(),
            ep.termination.name().to_string(),
        ])
        .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join(EVAL_LOG);
    let mut w = csv_writer(&path)?;
    w.write_record(["step", "phase_index", "mean", "min", "max", "pct_spread"])
        .map_err(|e| csv_err(&path, e))?;
    for ev in &record.evals {
        let s = &ev.summary;
        w.write_record([
            ev.step.to_string(),
            ev.phase_index.to_string(),
            s.mean.to_string(),
            s.min.to_string(),
            s.max.to_string(),
            s.pct_spread.map_or(String::new(), |p| p.to_string()),
        ])
        .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join(LOSS_LOG);
    let mut f = std::io::BufWriter::new(fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
    let mut body = String::from(crate::sac::LossReport::CSV_HEADER);
    body.push('\n');
    for l in &record.losses {
        body.push_str(&l.csv_row());
        body.push('\n');
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(&path, e))?;

    agent.save_checkpoint(&dir.join(CHECKPOINT_FILE))?;
    write_json(&dir.join(RECORD_FILE), record)
}

/// Persists phases as they finish and serves trained first phases from
/// matching baseline runs.
pub struct RunDirObserver<'a> {
    cfg: &'a RunConfig,
    run_dir: PathBuf,
    scenario: String,
    seed: u64,
}

impl<'a> RunDirObserver<'a> {
    pub fn new(cfg: &'a RunConfig, scenario: &CurriculumScenario, seed: u64) -> Self {
        Self {
            run_dir: seed_dir(&cfg.output_dir, &cfg.selector, seed),
            scenario: scenario.name.clone(),
            cfg,
            seed,
        }
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }
}

impl PhaseObserver for RunDirObserver<'_> {
    fn phase_finished(&mut self, record: &PhaseRecord, agent: &SacAgent) -> Result<()> {
        write_phase(&self.run_dir, &self.scenario, self.seed, record, agent)
    }

    fn cached_first_phase(&mut self, phase: &Phase) -> Result<Option<(PhaseRecord, SacAgent)>> {
        if !self.cfg.reuse_baseline_checkpoint || !matches!(self.cfg.selector, Selector::Scenario(_)) {
            return Ok(None);
        }
        let baseline = Selector::Baseline {
            track: phase.track_kind,
            weather: phase.weather,
        };
        let dir = seed_dir(&self.cfg.output_dir, &baseline, self.seed);
        let Ok(text) = fs::read_to_string(dir.join(SNAPSHOT_FILE)) else {
            return Ok(None);
        };
        let Ok(snapshot) = RunConfig::from_text(&text) else {
            return Ok(None);
        };
        let p0 = phase_dir(&dir, 0);
        if snapshot.train != self.cfg.train || !p0.join(CHECKPOINT_FILE).exists() {
            return Ok(None);
        }
        let Ok(record) = read_json::<PhaseRecord>(&p0.join(RECORD_FILE)) else {
            return Ok(None);
        };
        if record.phase != *phase || record.start_step != 0 || !dir.join(SUMMARY_FILE).exists() {
            return Ok(None);
        }
        let agent = SacAgent::load_checkpoint_for(&p0.join(CHECKPOINT_FILE), &self.cfg.train.sac)?;
        Ok(Some((record, agent)))
    }
}

/// Trains one seed of `cfg` and writes its complete run directory.
pub fn run_seed(cfg: &RunConfig, seed: u64) -> Result<RunRecord> {
    let scenario = cfg.scenario()?;
    let seed_cfg = cfg.for_seed(seed);
    let mut observer = RunDirObserver::new(&seed_cfg, &scenario, seed);
    let dir = observer.run_dir().to_path_buf();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    // A stale summary would mark a half-written directory as complete.
    let _ = fs::remove_file(dir.join(SUMMARY_FILE));
    let snap = dir.join(SNAPSHOT_FILE);
    fs::write(&snap, seed_cfg.to_text()).map_err(|e| Error::io(&snap, e))?;
    let (record, _) = run_curriculum(&scenario, seed, &cfg.train, &mut observer)?;
    write_json(&dir.join(EVAL_FILE), &record.final_eval)?;
    write_json(&dir.join(SUMMARY_FILE), &RunSummary::new(&record, &seed_cfg))?;
    Ok(record)
}

/// Trains every seed of `cfg`, up to `cfg.threads()` at a time.
pub fn run_all(cfg: &RunConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let workers = cfg.threads().clamp(1, cfg.seeds.len());
    let mut results: Vec<Option<Result<RunRecord>>> = (0..cfg.seeds.len()).map(|_| None).collect();
    for chunk in cfg.seeds.chunks(workers).zip(results.chunks_mut(workers)) {
        let (seeds, slots) = chunk;
        std::thread::scope(|scope| {
            let handles: Vec<_> = seeds.iter().map(|&s| scope.spawn(move || run_seed(cfg, s))).collect();
            for (slot, h) in slots.iter_mut().zip(handles) {
                *slot = Some(h.join().unwrap_or_else(|_| {
                    Err(Error::InvalidConfig("training worker panicked".into()))
                }));
            }
        });
    }
    results.into_iter().map(|r| r.expect("every slot filled")).collect()
}
