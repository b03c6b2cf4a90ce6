//! Cross-run comparison: a combined learning-curve CSV and an SVG figure
//! with one row per scenario, curriculum against the matching baseline.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::curriculum::EvalSummary;
use crate::error::{Error, Result};
use crate::rundir::{phase_dir, read_json, RunSummary, EVAL_FILE, SNAPSHOT_FILE, SUMMARY_FILE, TRAIN_LOG};

pub const COMBINED_CSV: &str = "combined.csv";
pub const FIGURE_SVG: &str = "curves.svg";
pub const COMBINED_HEADER: [&str; 5] = ["scenario", "seed", "step", "episode_return", "phase_index"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub step: u64,
    pub episode_return: f64,
    pub phase_index: usize,
}

#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub eval: EvalSummary,
    pub curve: Vec<CurvePoint>,
}

impl LoadedRun {
    pub fn is_baseline(&self) -> bool {
        self.summary.phases.len() == 1 && self.summary.scenario.starts_with("baseline_")
    }

    /// Track and weather of the last phase.
    pub fn final_task(&self) -> (String, String) {
        let p = self.summary.phases.last().expect("runs have phases");
        (p.track.clone(), p.weather.clone())
    }

    pub fn phase_boundaries(&self) -> Vec<u64> {
        let n = self.summary.phases.len();
        self.summary.phases[..n.saturating_sub(1)].iter().map(|p| p.end_step).collect()
    }
}

/// Run directories (those holding a config snapshot) under each path.
pub fn find_run_dirs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, depth: usize, out: &mut Vec<PathBuf>) {
        if dir.join(SNAPSHOT_FILE).is_file() {
            out.push(dir.to_path_buf());
            return;
        }
        if depth == 0 {
            return;
        }
        if let Ok(entries) = fs::read_dir(dir) {
            let mut subdirs: Vec<PathBuf> = entries.flatten().map(|e| e.path()).filter(|p| p.is_dir()).collect();
            subdirs.sort();
            for d in subdirs {
                walk(&d, depth - 1, out);
            }
        }
    }
    let mut out = Vec::new();
    for p in paths {
        if !p.is_dir() {
            return Err(Error::MissingRuns {
                dir: p.clone(),
                what: "not a directory".into(),
            });
        }
        walk(p, 3, &mut out);
    }
    if out.is_empty() {
        return Err(Error::MissingRuns {
            dir: paths.first().cloned().unwrap_or_default(),
            what: format!("no run directories (none contain {SNAPSHOT_FILE})"),
        });
    }
    out.sort();
    out.dedup();
    Ok(out)
}

fn missing(dir: &Path, what: impl Into<String>) -> Error {
    Error::MissingRuns {
        dir: dir.to_path_buf(),
        what: what.into(),
    }
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    for f in [EVAL_FILE, SUMMARY_FILE] {
        if !dir.join(f).is_file() {
            return Err(missing(dir, format!("{f} not found")));
        }
    }
    let summary: RunSummary = read_json(&dir.join(SUMMARY_FILE))?;
    let eval: EvalSummary = read_json(&dir.join(EVAL_FILE))?;
    let mut curve = Vec::new();
    for p in &summary.phases {
        let path = phase_dir(dir, p.index).join(TRAIN_LOG);
        let mut rdr = csv::Reader::from_path(&path).map_err(|_| missing(dir, format!("{} unreadable", path.display())))?;
        let headers = rdr.headers().map_err(|e| missing(dir, e.to_string()))?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| missing(dir, format!("{} lacks column {name}", path.display())))
        };
        let (c_step, c_ret, c_phase) = (col("step")?, col("episode_return")?, col("phase_index")?);
        for row in rdr.records() {
            let row = row.map_err(|e| missing(dir, e.to_string()))?;
            let parse = |c: usize| row.get(c).unwrap_or("").to_string();
            let bad = |c: usize| missing(dir, format!("{}: bad value `{}`", path.display(), parse(c)));
            curve.push(CurvePoint {
                step: parse(c_step).parse().map_err(|_| bad(c_step))?,
                episode_return: parse(c_ret).parse().map_err(|_| bad(c_ret))?,
                phase_index: parse(c_phase).parse().map_err(|_| bad(c_phase))?,
            });
        }
    }
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        summary,
        eval,
        curve,
    })
}

pub fn write_combined_csv(runs: &[LoadedRun], path: &Path) -> Result<()> {
    let mut out = COMBINED_HEADER.join(",");
    out.push('\n');
    for r in runs {
        for p in &r.curve {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.summary.scenario, r.summary.seed, p.step, p.episode_return, p.phase_index
            );
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

const BINS: usize = 40;

/// Mean episode return per step bin, averaged over the given seeds.
pub fn mean_curve(runs: &[&LoadedRun], max_step: u64) -> Vec<(f64, f64)> {
    let width = (max_step.max(1) as f64) / BINS as f64;
    let mut sums = vec![0.0; BINS];
    let mut counts = vec![0usize; BINS];
    for r in runs {
        let mut run_sum = vec![0.0; BINS];
        let mut run_n = vec![0usize; BINS];
        for p in &r.curve {
            let b = ((p.step as f64 / width) as usize).min(BINS - 1);
            run_sum[b] += p.episode_return;
            run_n[b] += 1;
        }
        for b in 0..BINS {
            if run_n[b] > 0 {
                sums[b] += run_sum[b] / run_n[b] as f64;
                counts[b] += 1;
            }
        }
    }
    (0..BINS)
        .filter(|&b| counts[b] > 0)
        .map(|b| ((b as f64 + 0.5) * width, sums[b] / counts[b] as f64))
        .collect()
}

struct Row<'a> {
    title: String,
    curriculum: Vec<&'a LoadedRun>,
    baseline: Vec<&'a LoadedRun>,
}

fn group_rows(runs: &[LoadedRun]) -> Vec<Row<'_>> {
    let mut by_name: BTreeMap<&str, Vec<&LoadedRun>> = BTreeMap::new();
    for r in runs {
        by_name.entry(r.summary.scenario.as_str()).or_default().push(r);
    }
    let mut rows = Vec::new();
    let mut used = std::collections::BTreeSet::new();
    for (name, group) in by_name.iter().filter(|(_, g)| !g[0].is_baseline()) {
        let task = group[0].final_task();
        let (base_name, base) = by_name
            .iter()
            .find(|(_, g)| g[0].is_baseline() && g[0].final_task() == task)
            .map(|(n, g)| (Some(*n), g.clone()))
            .unwrap_or((None, Vec::new()));
        if let Some(n) = base_name {
            used.insert(n);
        }
        rows.push(Row {
            title: format!("{name} vs {}", base_name.unwrap_or("(no baseline)")),
            curriculum: group.clone(),
            baseline: base,
        });
    }
    for (name, group) in by_name.iter().filter(|(n, g)| g[0].is_baseline() && !used.contains(*n)) {
        rows.push(Row {
            title: (*name).to_string(),
            curriculum: Vec::new(),
            baseline: group.clone(),
        });
    }
    rows
}

pub fn render_svg(runs: &[LoadedRun]) -> String {
    const W: f64 = 720.0;
    const ROW_H: f64 = 220.0;
    const LEFT: f64 = 80.0;
    const RIGHT: f64 = 20.0;
    const TOP: f64 = 30.0;
    const BOTTOM: f64 = 40.0;
    let rows = group_rows(runs);
    let height = ROW_H * rows.len().max(1) as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{height}" viewBox="0 0 {W} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, row) in rows.iter().enumerate() {
        let y0 = i as f64 * ROW_H;
        let (pw, ph) = (W - LEFT - RIGHT, ROW_H - TOP - BOTTOM);
        let all: Vec<&LoadedRun> = row.curriculum.iter().chain(&row.baseline).copied().collect();
        let max_step = all.iter().map(|r| r.summary.total_steps).max().unwrap_or(1).max(1);
        let traces = [
            ("curriculum", "#1f77b4", mean_curve(&row.curriculum, max_step)),
            ("baseline", "#d62728", mean_curve(&row.baseline, max_step)),
        ];
        let ys: Vec<f64> = traces.iter().flat_map(|t| t.2.iter().map(|p| p.1)).collect();
        let (mut lo, mut hi) = ys
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-9 {
            (lo, hi) = (lo - 1.0, hi + 1.0);
        }
        let sx = |s: f64| LEFT + pw * s / max_step as f64;
        let sy = |v: f64| y0 + TOP + ph * (1.0 - (v - lo) / (hi - lo));
        let _ = writeln!(svg, r#"<g class="row" id="row{i}">"#);
        let _ = writeln!(
            svg,
            r#"<text x="{LEFT}" y="{}" font-size="13">{}</text>"#,
            y0 + 18.0,
            escape(&row.title)
        );
        let _ = writeln!(
            svg,
            r##"<rect x="{LEFT}" y="{}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>"##,
            y0 + TOP
        );
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{hi:.0}</text>"#, LEFT - 4.0, y0 + TOP + 10.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{lo:.0}</text>"#, LEFT - 4.0, y0 + TOP + ph);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{max_step} steps</text>"#,
            LEFT + pw,
            y0 + TOP + ph + 16.0
        );
        if let Some(first) = row.curriculum.first() {
            for b in first.phase_boundaries() {
                let x = sx(b as f64);
                let _ = writeln!(
                    svg,
                    r##"<line class="phase-boundary" x1="{x:.1}" y1="{}" x2="{x:.1}" y2="{}" stroke="#555" stroke-dasharray="4 3"/>"##,
                    y0 + TOP,
                    y0 + TOP + ph
                );
            }
        }
        for (k, (label, color, pts)) in traces.iter().enumerate() {
            if pts.is_empty() {
                continue;
            }
            let d: Vec<String> = pts.iter().map(|&(s, v)| format!("{:.1},{:.1}", sx(s), sy(v))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline class="trace {label}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                d.join(" ")
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" fill="{color}">{label}</text>"#,
                LEFT + 8.0 + 90.0 * k as f64,
                y0 + TOP + ph + 16.0
            );
        }
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Loads every run under `paths` and writes the CSV and SVG into `out_dir`.
pub fn write_report(paths: &[PathBuf], out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let runs = find_run_dirs(paths)?
        .iter()
        .map(|d| load_run(d))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv = out_dir.join(COMBINED_CSV);
    write_combined_csv(&runs, &csv)?;
    let svg = out_dir.join(FIGURE_SVG);
    fs::write(&svg, render_svg(&runs)).map_err(|e| Error::io(&svg, e))?;
    Ok((csv, svg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Profile, RunConfig};
    use crate::rundir::run_all;

    fn tiny(out: &Path, selector: &str) -> RunConfig {
        let mut cfg = RunConfig::for_profile(Profile::Desk);
        cfg.output_dir = out.to_path_buf();
        cfg.selector = selector.parse().unwrap();
        cfg.seeds = vec![1];
        cfg.budget_divisor = 200;
        cfg.reuse_baseline_checkpoint = false;
        cfg.train.sac.hidden_width = 8;
        cfg.train.sac.warmup_steps = 64;
        cfg.train.env.max_episode_steps = 60;
        cfg.train.eval_every = 100;
        cfg
    }

    #[test]
    fn baseline_and_curriculum_make_two_traces() {
        let dir = tempfile::tempdir().unwrap();
        run_all(&tiny(dir.path(), "scenario:4")).unwrap();
        let mut b = tiny(dir.path(), "baseline:circuit:snowy");
        b.baseline_budget = 200_000;
        run_all(&b).unwrap();
        let out = dir.path().join("report");
        let (csv, svg) = write_report(&[dir.path().to_path_buf()], &out).unwrap();
        let text = fs::read_to_string(&svg).unwrap();
        assert_eq!(text.matches("<polyline").count(), 2);
        assert_eq!(text.matches("phase-boundary").count(), 2);
        let table = fs::read_to_string(csv).unwrap();
        assert!(table.starts_with("scenario,seed,step,episode_return,phase_index\n"));
        assert!(table.contains("scenario_4,1,"));
        assert!(table.contains("baseline_circuit_snowy,1,"));
    }

    #[test]
    fn missing_eval_names_directory() {
        let dir = tempfile::tempdir().unwrap();
        run_all(&tiny(dir.path(), "baseline:straight:clear")).unwrap();
        let run = dir.path().join("baseline_straight_clear").join("seed_1");
        fs::remove_file(run.join(EVAL_FILE)).unwrap();
        match write_report(&[dir.path().to_path_buf()], &dir.path().join("r")) {
            Err(Error::MissingRuns { dir, what }) => {
                assert_eq!(dir, run);
                assert!(what.contains("eval.json"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_tree_is_missing_runs() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            write_report(&[dir.path().to_path_buf()], &dir.path().join("r")),
            Err(Error::MissingRuns { .. })
        ));
    }
}
