//! Baseline and multi-phase curriculum training.

use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{DrivingEnv, EnvConfig, TerminationReason};
use crate::error::{Error, Result};
use crate::policy::{rollout, GreedySac, Policy, RandomPolicy};
use crate::replay::{ReplayBuffer, Transition};
use crate::sac::{ActionMode, LossReport, SacAgent, SacHyperParams};
use crate::track::TrackKind;
use crate::vehicle::Weather;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase {
    pub track_kind: TrackKind,
    pub weather: Weather,
    /// Environment steps.
    pub step_budget: usize,
}

impl Phase {
    pub fn new(track_kind: TrackKind, weather: Weather, step_budget: usize) -> Self {
        Self {
            track_kind,
            weather,
            step_budget,
        }
    }

    pub fn label(&self) -> String {
        format!("{} ({})", self.track_kind, self.weather.letter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumScenario {
    pub name: String,
    pub phases: Vec<Phase>,
}

impl CurriculumScenario {
    pub fn new(name: impl Into<String>, phases: Vec<Phase>) -> Result<Self> {
        let s = Self {
            name: name.into(),
            phases,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::InvalidConfig(format!("scenario `{}` has no phases", self.name)));
        }
        if self.phases.iter().any(|p| p.step_budget == 0) {
            return Err(Error::InvalidConfig(format!(
                "scenario `{}` has a phase with zero budget",
                self.name
            )));
        }
        Ok(())
    }

    pub fn total_budget(&self) -> usize {
        self.phases.iter().map(|p| p.step_budget).sum()
    }

    /// Divides every phase budget by `divisor`, keeping at least one step.
    pub fn scaled(&self, divisor: usize) -> Self {
        let divisor = divisor.max(1);
        Self {
            name: self.name.clone(),
            phases: self
                .phases
                .iter()
                .map(|p| Phase {
                    step_budget: (p.step_budget / divisor).max(1),
                    ..*p
                })
                .collect(),
        }
    }
}

use TrackKind::{Circuit, Straight, UTurn};
use Weather::{Clear, Rainy, Snowy};

const SCENARIO_TABLE: [[(TrackKind, Weather, usize); 3]; 5] = [
    [(Straight, Clear, 75_000), (UTurn, Clear, 25_000), (Circuit, Clear, 100_000)],
    [(UTurn, Rainy, 50_000), (Circuit, Rainy, 75_000), (Circuit, Clear, 75_000)],
    [(Straight, Rainy, 75_000), (Circuit, Rainy, 75_000), (Circuit, Snowy, 50_000)],
    [(Straight, Clear, 75_000), (Circuit, Rainy, 75_000), (Circuit, Snowy, 50_000)],
    [(Straight, Clear, 75_000), (Straight, Snowy, 25_000), (Circuit, Snowy, 100_000)],
];

/// The five built-in curriculum scenarios with budgets divided by `budget_divisor`.
pub fn builtin_scenarios(budget_divisor: usize) -> Vec<CurriculumScenario> {
    SCENARIO_TABLE
        .iter()
        .enumerate()
        .map(|(i, row)| {
            CurriculumScenario {
                name: format!("scenario_{}", i + 1),
                phases: row.iter().map(|&(k, w, b)| Phase::new(k, w, b)).collect(),
            }
            .scaled(budget_divisor)
        })
        .collect()
}

/// Looks up built-in scenario `number` (1-based).
pub fn builtin_scenario(number: usize, budget_divisor: usize) -> Result<CurriculumScenario> {
    builtin_scenarios(budget_divisor)
        .into_iter()
        .nth(number.wrapping_sub(1))
        .ok_or_else(|| Error::InvalidConfig(format!("no built-in scenario {number}; expected 1-5")))
}

/// Unscaled from-scratch training budget per track type.
pub fn baseline_budget(kind: TrackKind) -> usize {
    match kind {
        Straight => 75_000,
        UTurn => 50_000,
        Circuit => 200_000,
    }
}

pub fn baseline_name(kind: TrackKind, weather: Weather) -> String {
    format!("baseline_{}_{}", kind.name(), weather.name())
}

pub fn baseline_scenario(kind: TrackKind, weather: Weather, budget: usize) -> CurriculumScenario {
    CurriculumScenario {
        name: baseline_name(kind, weather),
        phases: vec![Phase::new(kind, weather, budget.max(1))],
    }
}

/// Everything that shapes a training run besides the scenario and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub sac: SacHyperParams,
    /// Template; track and weather are replaced per phase.
    pub env: EnvConfig,
    /// Steps between in-training evaluations within a phase.
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub final_eval_episodes: usize,
    pub flush_buffer_between_phases: bool,
    /// Keep every n-th loss report.
    pub loss_log_every: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            sac: SacHyperParams::default(),
            env: EnvConfig::default(),
            eval_every: 10_000,
            eval_episodes: 1,
            final_eval_episodes: 3,
            flush_buffer_between_phases: true,
            loss_log_every: 100,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        self.sac.validate()?;
        self.env.validate()?;
        if self.eval_every == 0 || self.eval_episodes == 0 || self.final_eval_episodes == 0 {
            return Err(Error::InvalidConfig(
                "train.eval_every, eval_episodes and final_eval_episodes must be positive".into(),
            ));
        }
        if self.loss_log_every == 0 {
            return Err(Error::InvalidConfig("train.loss_log_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Half-range over |mean|, in percent; `None` when the mean is zero and
    /// the returns differ.
    pub pct_spread: Option<f64>,
    pub n: usize,
}

impl EvalSummary {
    pub fn from_returns(returns: &[f64]) -> Self {
        assert!(!returns.is_empty(), "no returns to summarize");
        let n = returns.len();
        let mean = returns.iter().sum::<f64>() / n as f64;
        let min = returns.iter().copied().fold(f64::INFINITY, f64::min);
        let max = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            mean,
            min,
            max,
            pct_spread: pct_spread(min, max, mean),
            n,
        }
    }
}

pub fn pct_spread(min: f64, max: f64, mean: f64) -> Option<f64> {
    let range = max - min;
    if range == 0.0 {
        Some(0.0)
    } else if mean == 0.0 {
        None
    } else {
        Some(100.0 * range / (2.0 * mean.abs()))
    }
}

/// Deterministic-policy evaluation on one task.
pub fn evaluate(agent: &mut SacAgent, env_cfg: &EnvConfig, n_episodes: usize, seed: u64) -> Result<EvalSummary> {
    evaluate_policy(&mut GreedySac(agent), env_cfg, n_episodes, seed)
}

pub fn evaluate_policy(
    policy: &mut dyn Policy,
    env_cfg: &EnvConfig,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalSummary> {
    let mut env = DrivingEnv::new(*env_cfg)?;
    let returns = (0..n_episodes.max(1) as u64)
        .map(|k| rollout(&mut env, policy, seed.wrapping_add(k)).map(|(ret, _, _)| ret))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalSummary::from_returns(&returns))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// Run-wide environment step at which the episode ended.
    pub step: u64,
    pub phase_index: usize,
    pub episode: usize,
    pub episode_return: f64,
    pub length: usize,
    pub termination: TerminationReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub phase_index: usize,
    pub summary: EvalSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase_index: usize,
    pub phase: Phase,
    pub start_step: u64,
    pub end_step: u64,
    pub episodes: Vec<EpisodeRecord>,
    pub evals: Vec<EvalRecord>,
    pub losses: Vec<LossReport>,
    /// Loaded from an earlier identical run instead of trained.
    pub reused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: CurriculumScenario,
    pub seed: u64,
    pub settings: TrainSettings,
    pub phases: Vec<PhaseRecord>,
    pub final_eval: EvalSummary,
    pub wall_clock_s: f64,
}

impl RunRecord {
    pub fn total_steps(&self) -> u64 {
        self.phases.last().map_or(0, |p| p.end_step)
    }
}

/// Hooks into phase boundaries: persistence and checkpoint reuse.
pub trait PhaseObserver {
    fn phase_finished(&mut self, record: &PhaseRecord, agent: &SacAgent) -> Result<()>;

    /// A previously trained first phase equivalent to `phase`, if available.
    fn cached_first_phase(&mut self, _phase: &Phase) -> Result<Option<(PhaseRecord, SacAgent)>> {
        Ok(None)
    }
}

pub struct NoopObserver;

impl PhaseObserver for NoopObserver {
    fn phase_finished(&mut self, _record: &PhaseRecord, _agent: &SacAgent) -> Result<()> {
        Ok(())
    }
}

/// Independent 64-bit seed for sub-stream `stream` of run seed `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const AGENT_STREAM: u64 = 1;
const BUFFER_STREAM: u64 = 100;
const EXPLORE_STREAM: u64 = 200;
const EPISODE_STREAM: u64 = 300;
const EVAL_STREAM: u64 = 400;

/// Owns the agent and replay buffer across the phases of one run.
pub struct Trainer {
    settings: TrainSettings,
    seed: u64,
    agent: SacAgent,
    buffer: ReplayBuffer,
    step: u64,
}

impl Trainer {
    pub fn new(settings: TrainSettings, seed: u64) -> Result<Self> {
        settings.validate()?;
        Ok(Self {
            agent: SacAgent::new(settings.sac, derive_seed(seed, AGENT_STREAM))?,
            buffer: ReplayBuffer::new(settings.sac.buffer_capacity, derive_seed(seed, BUFFER_STREAM)),
            settings,
            seed,
            step: 0,
        })
    }

    pub fn agent(&self) -> &SacAgent {
        &self.agent
    }

    pub fn agent_mut(&mut self) -> &mut SacAgent {
        &mut self.agent
    }

    pub fn into_agent(self) -> SacAgent {
        self.agent
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    fn env_config(&self, phase: &Phase) -> EnvConfig {
        self.settings.env.with_task(phase.track_kind, phase.weather)
    }

    fn eval_now(&mut self, phase: &Phase, n: usize) -> Result<EvalSummary> {
        let cfg = self.env_config(phase);
        evaluate(&mut self.agent, &cfg, n, derive_seed(self.seed, EVAL_STREAM))
    }

    /// Trains for exactly `phase.step_budget` environment steps.
    pub fn run_phase(&mut self, phase_index: usize, phase: &Phase) -> Result<PhaseRecord> {
        let s = self.settings;
        if phase_index > 0 && s.flush_buffer_between_phases {
            self.buffer = ReplayBuffer::new(
                s.sac.buffer_capacity,
                derive_seed(self.seed, BUFFER_STREAM + phase_index as u64),
            );
        }
        let mut env = DrivingEnv::new(self.env_config(phase))?;
        let mut explore = RandomPolicy::new(derive_seed(self.seed, EXPLORE_STREAM + phase_index as u64));
        let episode_seed = derive_seed(self.seed, EPISODE_STREAM + phase_index as u64);
        let need = s.sac.batch_size.max(s.sac.warmup_steps);

        let start_step = self.step;
        let mut episodes = Vec::new();
        let mut evals = Vec::new();
        let mut losses = Vec::new();
        let mut episode = 0usize;
        let mut ep_return = 0.0;
        env.reset(episode_seed);
        for t in 1..=phase.step_budget {
            let obs = *env.observation();
            // Uniform exploration only until a fresh agent's first update.
            let action = if self.agent.updates() == 0 && self.buffer.len() < need {
                explore.act(&env)
            } else {
                self.agent.select_action(&obs, ActionMode::Stochastic)
            };
            let r = env.step(action)?;
            self.step += 1;
            ep_return += r.reward;
            self.buffer.push(Transition {
                s: obs.0,
                a: action.as_array(),
                r: r.reward,
                s_next: r.observation.0,
                done: r.termination.ends_value(),
            });
            if r.done {
                episodes.push(EpisodeRecord {
                    step: self.step,
                    phase_index,
                    episode,
                    episode_return: ep_return,
                    length: env.steps(),
                    termination: r.termination,
                });
                episode += 1;
                ep_return = 0.0;
                env.reset(episode_seed.wrapping_add(episode as u64));
            }
            if self.buffer.len() >= need && t % s.sac.update_every == 0 {
                let report = self.agent.update(&mut self.buffer)?;
                if report.update_index % s.loss_log_every as u64 == 0 {
                    losses.push(report);
                }
            }
            if t % s.eval_every == 0 || t == phase.step_budget {
                let summary = self.eval_now(phase, s.eval_episodes)?;
                log::debug!("phase {phase_index} step {}: eval {:.1}", self.step, summary.mean);
                evals.push(EvalRecord {
                    step: self.step,
                    phase_index,
                    summary,
                });
            }
        }
        Ok(PhaseRecord {
            phase_index,
            phase: *phase,
            start_step,
            end_step: self.step,
            episodes,
            evals,
            losses,
            reused: false,
        })
    }

    /// Runs every phase in order, carrying the agent across transitions.
    pub fn run(mut self, scenario: &CurriculumScenario, observer: &mut dyn PhaseObserver) -> Result<(RunRecord, SacAgent)> {
        scenario.validate()?;
        let started = Instant::now();
        let mut phases = Vec::with_capacity(scenario.phases.len());
        for (i, phase) in scenario.phases.iter().enumerate() {
            // A reused phase leaves no replay data behind, so only a flushing run can match it.
            let cached = if i == 0 && self.settings.flush_buffer_between_phases {
                observer.cached_first_phase(phase)?
            } else {
                None
            };
            let record = match cached {
                Some((mut record, agent)) => {
                    log::info!("{} seed {}: reusing trained first phase", scenario.name, self.seed);
                    if agent.hyper() != self.agent.hyper() || record.end_step != phase.step_budget as u64 {
                        return Err(Error::InvalidConfig("cached first phase does not match this run".into()));
                    }
                    self.agent = agent;
                    self.step = record.end_step;
                    record.reused = true;
                    record
                }
                None => {
                    log::info!("{} seed {}: phase {} {}", scenario.name, self.seed, i, phase.label());
                    self.run_phase(i, phase)?
                }
            };
            observer.phase_finished(&record, &self.agent)?;
            phases.push(record);
        }
        let last = *scenario.phases.last().expect("validated non-empty");
        let final_eval = self.eval_now(&last, self.settings.final_eval_episodes)?;
        let record = RunRecord {
            scenario: scenario.clone(),
            seed: self.seed,
            settings: self.settings,
            phases,
            final_eval,
            wall_clock_s: started.elapsed().as_secs_f64(),
        };
        Ok((record, self.agent))
    }
}

pub fn run_curriculum(
    scenario: &CurriculumScenario,
    seed: u64,
    settings: &TrainSettings,
    observer: &mut dyn PhaseObserver,
) -> Result<(RunRecord, SacAgent)> {
    Trainer::new(*settings, seed)?.run(scenario, observer)
}

pub fn run_baseline(
    kind: TrackKind,
    weather: Weather,
    budget: usize,
    seed: u64,
    settings: &TrainSettings,
    observer: &mut dyn PhaseObserver,
) -> Result<(RunRecord, SacAgent)> {
    run_curriculum(&baseline_scenario(kind, weather, budget), seed, settings, observer)
}
