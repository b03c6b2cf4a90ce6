use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use drivelab::config::{parse_override, parse_pairs, RunConfig, Selector};
use drivelab::curriculum::{evaluate, evaluate_policy, EvalSummary};
use drivelab::policy::ScriptedDriver;
use drivelab::rundir::{phase_dir, run_all, CHECKPOINT_FILE, SNAPSHOT_FILE};
use drivelab::sac::SacAgent;
use drivelab::track::{Track, TrackKind};
use drivelab::vehicle::CalibrationReport;
use drivelab::Error;

/// Exit code for invalid input or a failed calibration.
const EXIT_INVALID: u8 = 1;
/// Exit code for filesystem failures and missing run artifacts.
const EXIT_IO: u8 = 2;

#[derive(Parser)]
#[command(name = "drivelab", version, about = "Curriculum SAC driving experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set sac.alpha=0.1`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, value_parser = ["desk", "paper"])]
    profile: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Full-brake stops from 80 km/h against the target distances.
    Calibrate {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Export a track's centerline primitives as JSON.
    Track {
        /// straight | uturn | circuit
        kind: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train baselines or curricula for every requested seed.
    Train {
        /// TRACK:WEATHER, e.g. straight:clear
        #[arg(long, conflicts_with = "scenario")]
        baseline: Option<String>,
        /// Built-in scenario number 1-5.
        #[arg(long)]
        scenario: Option<usize>,
        /// Comma-separated seeds.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, env = "DRIVELAB_OUTPUT_ROOT")]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate a trained checkpoint deterministically.
    Eval {
        /// A run directory (…/seed_N).
        run: PathBuf,
        /// Phase whose checkpoint to load; defaults to the last.
        #[arg(long)]
        phase: Option<usize>,
        /// Evaluate on TRACK:WEATHER instead of the phase's own task.
        #[arg(long)]
        task: Option<String>,
        #[arg(long, default_value_t = 3)]
        episodes: usize,
    },
    /// Combine finished runs into a CSV and an SVG figure.
    Report {
        /// Run directories or roots containing them.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, env = "DRIVELAB_OUTPUT_ROOT", default_value = "runs")]
        out: PathBuf,
    },
}

fn load_config(args: &ConfigArgs) -> drivelab::Result<RunConfig> {
    let mut pairs = Vec::new();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        pairs = parse_pairs(&text)?;
    }
    if let Some(p) = &args.profile {
        pairs.retain(|(k, _)| k != "profile");
        pairs.push(("profile".into(), p.clone()));
    }
    let overrides = args
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<drivelab::Result<Vec<_>>>()?;
    let mut cfg = RunConfig::from_pairs(&pairs)?;
    for (k, v) in overrides {
        cfg.set(&k, &v)?;
    }
    Ok(cfg)
}

fn calibrate(args: &ConfigArgs) -> drivelab::Result<()> {
    let cfg = load_config(args)?;
    let params = cfg.train.env.vehicle;
    let report = CalibrationReport::measure(&params, cfg.train.env.dt);
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Error::CalibrationFailure(format!(
            "max braking-distance error {:.2}%",
            100.0 * report.max_error()
        )))
    }
}

fn track(kind: &str, out: Option<&Path>) -> drivelab::Result<()> {
    let kind: TrackKind = kind.parse()?;
    let json = serde_json::to_string_pretty(&Track::build(kind).export())
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    match out {
        Some(path) => fs::write(path, json + "\n").map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        }),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn train(
    baseline: Option<&str>,
    scenario: Option<usize>,
    seeds: Option<&str>,
    out: Option<PathBuf>,
    threads: Option<usize>,
    args: &ConfigArgs,
) -> drivelab::Result<()> {
    let mut cfg = load_config(args)?;
    match (baseline, scenario) {
        (Some(b), _) => cfg.selector = b.parse()?,
        (None, Some(n)) => cfg.selector = Selector::Scenario(n),
        (None, None) if args.config.is_none() => {
            return Err(Error::InvalidConfig("pass --baseline TRACK:WEATHER or --scenario N".into()))
        }
        (None, None) => {}
    }
    if let Some(s) = seeds {
        cfg.set("seeds", s)?;
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    if let Some(t) = threads {
        cfg.threads = t;
    }
    cfg.validate()?;
    log::info!(
        "training {} ({} profile) for seeds {:?} into {}",
        cfg.selector,
        cfg.profile,
        cfg.seeds,
        cfg.output_dir.display()
    );
    for record in run_all(&cfg)? {
        println!(
            "{} seed {}: final eval {:.1} over {} steps ({:.1} s)",
            record.scenario.name,
            record.seed,
            record.final_eval.mean,
            record.total_steps(),
            record.wall_clock_s
        );
    }
    Ok(())
}

fn eval(run: &Path, phase: Option<usize>, task: Option<&str>, episodes: usize) -> drivelab::Result<()> {
    let snap_path = run.join(SNAPSHOT_FILE);
    let text = fs::read_to_string(&snap_path).map_err(|_| Error::MissingRuns {
        dir: run.to_path_buf(),
        what: format!("{SNAPSHOT_FILE} not found"),
    })?;
    let cfg = RunConfig::from_text(&text)?;
    let scenario = cfg.scenario()?;
    let index = phase.unwrap_or(scenario.phases.len() - 1);
    let ph = scenario
        .phases
        .get(index)
        .ok_or_else(|| Error::InvalidConfig(format!("run has no phase {index}")))?;
    let (kind, weather) = match task {
        Some(t) => match t.parse::<Selector>()? {
            Selector::Baseline { track, weather } => (track, weather),
            Selector::Scenario(_) => return Err(Error::InvalidConfig("--task expects TRACK:WEATHER".into())),
        },
        None => (ph.track_kind, ph.weather),
    };
    let ckpt = phase_dir(run, index).join(CHECKPOINT_FILE);
    if !ckpt.is_file() {
        return Err(Error::MissingRuns {
            dir: run.to_path_buf(),
            what: format!("{} not found", ckpt.display()),
        });
    }
    let mut agent = SacAgent::load_checkpoint_for(&ckpt, &cfg.train.sac)?;
    let env_cfg = cfg.train.env.with_task(kind, weather);
    let agent_eval = evaluate(&mut agent, &env_cfg, episodes, 0)?;
    let scripted = evaluate_policy(&mut ScriptedDriver::default(), &env_cfg, 1, 0)?;
    #[derive(serde::Serialize)]
    struct Out<'a> {
        track: &'a str,
        weather: &'a str,
        agent: EvalSummary,
        scripted_reference: f64,
    }
    let out = Out {
        track: kind.name(),
        weather: weather.name(),
        agent: agent_eval,
        scripted_reference: scripted.mean,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&out).map_err(|e| Error::InvalidConfig(e.to_string()))?
    );
    Ok(())
}

fn run(cli: Cli) -> drivelab::Result<()> {
    match cli.command {
        Command::Calibrate { cfg } => calibrate(&cfg),
        Command::Track { kind, out } => track(&kind, out.as_deref()),
        Command::Train {
            baseline,
            scenario,
            seeds,
            out,
            threads,
            cfg,
        } => train(baseline.as_deref(), scenario, seeds.as_deref(), out, threads, &cfg),
        Command::Eval {
            run,
            phase,
            task,
            episodes,
        } => eval(&run, phase, task.as_deref(), episodes),
        Command::Report { runs, out } => {
            let (csv, svg) = drivelab::report::write_report(&runs, &out)?;
            println!("wrote {} and {}", csv.display(), svg.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Io { .. } | Error::MissingRuns { .. }) {
                ExitCode::from(EXIT_IO)
            } else {
                ExitCode::from(EXIT_INVALID)
            }
        }
    }
}
