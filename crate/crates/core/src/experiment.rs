//! Strategy × disturbance-set × feedback experiment matrix.
//!
//! Each cell flies the same reference several times. The first run uses a
//! zero-weight model; after every run the residuals of all runs so far are
//! pooled and the planar error model refit. The reported metric is that of
//! the final run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;
use toml::Spanned;

use crate::errmodel::{fit, residuals_from_log, FeatureMap, LinearErrorModel, DEFAULT_RIDGE};
use crate::flatness::{PhysicalParams, Strategy};
use crate::sim2d::{run_trajectory, DisturbanceSet, Gains, RunLog, SimConfig};
use crate::trajgen::{fmt17, PolySegment};
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySpec {
    pub start: Vec3,
    pub end: Vec3,
    pub duration: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec {
            start: Vec3::zeros(),
            end: Vec3::new(1.0, 0.0, 1.0),
            duration: 1.0,
        }
    }
}

impl TrajectorySpec {
    pub fn segment(&self) -> Result<PolySegment> {
        PolySegment::rest_to_rest(self.start, self.end, self.duration)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub strategies: Vec<Strategy>,
    pub dist_sets: Vec<DisturbanceSet>,
    pub feedback_modes: Vec<bool>,
    pub runs_per_config: usize,
    /// Template; strategy, feedback and disturbances are set per cell.
    pub sim: SimConfig,
    pub trajectory: TrajectorySpec,
    pub ridge: f64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            strategies: Strategy::ALL.to_vec(),
            dist_sets: DisturbanceSet::ALL.to_vec(),
            feedback_modes: vec![false, true],
            runs_per_config: 3,
            sim: SimConfig::default(),
            trajectory: TrajectorySpec::default(),
            ridge: DEFAULT_RIDGE,
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn cells(&self) -> Vec<CellKey> {
        let mut keys = Vec::new();
        for &feedback in &self.feedback_modes {
            for &set in &self.dist_sets {
                for &strategy in &self.strategies {
                    keys.push(CellKey {
                        set,
                        feedback,
                        strategy,
                    });
                }
            }
        }
        keys
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    strategies: Option<Spanned<Vec<String>>>,
    dist_sets: Option<Spanned<Vec<String>>>,
    feedback_modes: Option<Spanned<Vec<String>>>,
    runs_per_config: Option<Spanned<i64>>,
    ridge: Option<Spanned<f64>>,
    output_dir: Option<String>,
    sim: Option<RawSim>,
    trajectory: Option<RawTrajectory>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    dt: Option<Spanned<f64>>,
    mass: Option<Spanned<f64>>,
    gravity: Option<Spanned<f64>>,
    inertia: Option<Spanned<f64>>,
    kp_pos: Option<Spanned<f64>>,
    kd_pos: Option<Spanned<f64>>,
    kp_att: Option<Spanned<f64>>,
    kd_att: Option<Spanned<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrajectory {
    start: Option<[f64; 3]>,
    end: Option<[f64; 3]>,
    duration: Option<Spanned<f64>>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Reads an experiment config; see [`parse_config_str`] for the schema.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

/// Parses a TOML experiment config. Every key is optional and unknown keys
/// are rejected:
///
/// ```toml
/// strategies = ["FF1", "FF2", "FF3", "FF4", "FF5"]
/// dist_sets = ["A", "B", "C", "D"]
/// feedback_modes = ["off", "on"]
/// runs_per_config = 3
/// ridge = 1e-8
/// output_dir = "results"
///
/// [sim]
/// dt = 1e-3
/// mass = 4.19
/// gravity = 10.18
/// inertia = 0.123
/// kp_pos = 10.0
/// kd_pos = 10.0
/// kp_att = 300.0
/// kd_att = 30.0
///
/// [trajectory]
/// start = [0.0, 0.0, 0.0]
/// end = [1.0, 0.0, 1.0]
/// duration = 1.0
/// ```
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
        msg: e.message().to_string(),
    })?;
    let at = |span: std::ops::Range<usize>, msg: String| Error::Config {
        line: line_of(text, span.start),
        msg,
    };

    let mut cfg = ExperimentConfig::default();

    fn parse_list<T>(
        list: Spanned<Vec<String>>,
        parse: impl Fn(&str) -> Result<T>,
        at: &impl Fn(std::ops::Range<usize>, String) -> Error,
    ) -> Result<Vec<T>> {
        let span = list.span();
        let items = list
            .into_inner()
            .iter()
            .map(|s| parse(s))
            .collect::<Result<Vec<T>>>()
            .map_err(|e| at(span.clone(), e.to_string()))?;
        if items.is_empty() {
            return Err(at(span, "list must not be empty".into()));
        }
        Ok(items)
    }

    if let Some(s) = raw.strategies {
        cfg.strategies = parse_list(s, |s| s.parse(), &at)?;
    }
    if let Some(s) = raw.dist_sets {
        cfg.dist_sets = parse_list(s, |s| s.parse(), &at)?;
    }
    if let Some(s) = raw.feedback_modes {
        cfg.feedback_modes = parse_list(s, parse_feedback, &at)?;
    }
    if let Some(r) = raw.runs_per_config {
        let v = *r.get_ref();
        if v < 1 {
            return Err(at(r.span(), format!("runs_per_config must be >= 1, got {v}")));
        }
        cfg.runs_per_config = v as usize;
    }
    if let Some(r) = raw.ridge {
        let v = *r.get_ref();
        if !(v >= 0.0 && v.is_finite()) {
            return Err(at(r.span(), format!("ridge must be >= 0, got {v}")));
        }
        cfg.ridge = v;
    }
    if let Some(dir) = raw.output_dir {
        cfg.output_dir = PathBuf::from(dir);
    }

    let positive = |v: Option<Spanned<f64>>, name: &str, default: f64| -> Result<f64> {
        match v {
            None => Ok(default),
            Some(s) if *s.get_ref() > 0.0 && s.get_ref().is_finite() => Ok(*s.get_ref()),
            Some(s) => Err(at(s.span(), format!("{name} must be positive, got {}", s.get_ref()))),
        }
    };
    let non_negative = |v: Option<Spanned<f64>>, name: &str, default: f64| -> Result<f64> {
        match v {
            None => Ok(default),
            Some(s) if *s.get_ref() >= 0.0 && s.get_ref().is_finite() => Ok(*s.get_ref()),
            Some(s) => Err(at(s.span(), format!("{name} must be >= 0, got {}", s.get_ref()))),
        }
    };

    if let Some(sim) = raw.sim {
        let d = SimConfig::default();
        let (p, g) = (d.params, d.gains);
        cfg.sim.dt = positive(sim.dt, "dt", d.dt)?;
        cfg.sim.params = PhysicalParams {
            mass: positive(sim.mass, "mass", p.mass)?,
            gravity: positive(sim.gravity, "gravity", p.gravity)?,
            inertia: positive(sim.inertia, "inertia", p.inertia)?,
        };
        cfg.sim.gains = Gains {
            kp_pos: non_negative(sim.kp_pos, "kp_pos", g.kp_pos)?,
            kd_pos: non_negative(sim.kd_pos, "kd_pos", g.kd_pos)?,
            kp_att: non_negative(sim.kp_att, "kp_att", g.kp_att)?,
            kd_att: non_negative(sim.kd_att, "kd_att", g.kd_att)?,
        };
    }
    if let Some(tr) = raw.trajectory {
        let d = TrajectorySpec::default();
        cfg.trajectory = TrajectorySpec {
            start: tr.start.map(Vec3::from).unwrap_or(d.start),
            end: tr.end.map(Vec3::from).unwrap_or(d.end),
            duration: positive(tr.duration, "duration", d.duration)?,
        };
    }
    Ok(cfg)
}

fn parse_feedback(s: &str) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        _ => Err(Error::InvalidArgument(format!("feedback mode must be on/off, got `{s}`"))),
    }
}

pub fn feedback_label(feedback: bool) -> &'static str {
    if feedback {
        "on"
    } else {
        "off"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub set: DisturbanceSet,
    pub feedback: bool,
    pub strategy: Strategy,
}

impl std::fmt::Display for CellKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}_fb-{}_{}",
            self.set,
            feedback_label(self.feedback),
            self.strategy
        )
    }
}

/// Largest per-axis |error| over the run.
pub fn max_abs_position_error(log: &RunLog) -> Result<f64> {
    if log.is_empty() {
        return Err(Error::InvalidArgument("empty run log".into()));
    }
    Ok(log.records.iter().map(|r| r.error.amax()).fold(0.0, f64::max))
}

/// Largest Euclidean position error over the run.
pub fn max_norm_position_error(log: &RunLog) -> Result<f64> {
    if log.is_empty() {
        return Err(Error::InvalidArgument("empty run log".into()));
    }
    Ok(log.records.iter().map(|r| r.error.norm()).fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    /// 1-based.
    pub run_index: usize,
    pub max_abs_err_peraxis: f64,
    pub max_abs_err_norm: f64,
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub key: CellKey,
    pub runs: Vec<RunMetrics>,
    pub logs: Vec<RunLog>,
    /// Model flown in each run.
    pub models: Vec<LinearErrorModel>,
}

impl CellOutcome {
    pub fn reported(&self) -> &RunMetrics {
        self.runs.last().expect("at least one run")
    }
}

/// Runs one cell of the matrix with the iterative regression protocol.
pub fn run_config(
    cfg: &ExperimentConfig,
    strategy: Strategy,
    set: DisturbanceSet,
    feedback: bool,
) -> Result<CellOutcome> {
    if cfg.runs_per_config < 1 {
        return Err(Error::InvalidArgument("runs_per_config must be >= 1".into()));
    }
    let traj = cfg.trajectory.segment()?;
    let sim = SimConfig {
        strategy,
        feedback,
        disturbances: set.spec(),
        ..cfg.sim
    };
    let map = FeatureMap::planar(sim.params.mass);
    let mut model = LinearErrorModel::zeros(map);
    let mut pool = Vec::new();
    let mut out = CellOutcome {
        key: CellKey {
            set,
            feedback,
            strategy,
        },
        runs: Vec::new(),
        logs: Vec::new(),
        models: Vec::new(),
    };
    for run_index in 1..=cfg.runs_per_config {
        let log = run_trajectory(&sim, &traj, Some(&model))?;
        out.runs.push(RunMetrics {
            run_index,
            max_abs_err_peraxis: max_abs_position_error(&log)?,
            max_abs_err_norm: max_norm_position_error(&log)?,
        });
        out.models.push(model.clone());
        if run_index < cfg.runs_per_config {
            pool.extend(residuals_from_log(&log, &sim.params, sim.dt)?);
            model = fit(&pool, map, cfg.ridge)?;
        }
        out.logs.push(log);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellResult {
    Done(RunMetrics),
    Failed(String),
}

/// Rows are disturbance sets, columns strategies.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SummaryTable {
    pub feedback: bool,
    pub cells: BTreeMap<(DisturbanceSet, Strategy), CellResult>,
}

impl SummaryTable {
    pub fn new(feedback: bool) -> Self {
        SummaryTable {
            feedback,
            cells: BTreeMap::new(),
        }
    }

    /// Reported metric: max over time of the position error norm.
    pub fn error(&self, set: DisturbanceSet, strategy: Strategy) -> Option<f64> {
        match self.cells.get(&(set, strategy)) {
            Some(CellResult::Done(m)) => Some(m.max_abs_err_norm),
            _ => None,
        }
    }

    pub fn error_peraxis(&self, set: DisturbanceSet, strategy: Strategy) -> Option<f64> {
        match self.cells.get(&(set, strategy)) {
            Some(CellResult::Done(m)) => Some(m.max_abs_err_peraxis),
            _ => None,
        }
    }

    pub fn failed(&self) -> usize {
        self.cells
            .values()
            .filter(|c| matches!(c, CellResult::Failed(_)))
            .count()
    }

    /// Plain-text table, one row per set and one column per strategy.
    pub fn render(&self) -> String {
        let sets: Vec<_> = self.cells.keys().map(|k| k.0).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let strategies: Vec<_> = self.cells.keys().map(|k| k.1).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let mut s = String::new();
        writeln!(
            s,
            "Maximum position error norm [m], feedback {}",
            feedback_label(self.feedback)
        )
        .unwrap();
        write!(s, "{:<4}", "Set").unwrap();
        for st in &strategies {
            write!(s, " {:>8}", st.to_string()).unwrap();
        }
        s.push('\n');
        for set in &sets {
            write!(s, "{:<4}", set.to_string()).unwrap();
            for st in &strategies {
                let cell = match self.cells.get(&(*set, *st)) {
                    Some(CellResult::Done(m)) => format!("{:.3}", m.max_abs_err_norm),
                    Some(CellResult::Failed(_)) => "failed".into(),
                    None => "-".into(),
                };
                write!(s, " {cell:>8}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug)]
pub struct MatrixOutcome {
    pub open_loop: SummaryTable,
    pub closed_loop: SummaryTable,
    pub cells: Vec<(CellKey, Result<CellOutcome>)>,
}

impl MatrixOutcome {
    pub fn failed(&self) -> usize {
        self.open_loop.failed() + self.closed_loop.failed()
    }

    pub fn table(&self, feedback: bool) -> &SummaryTable {
        if feedback {
            &self.closed_loop
        } else {
            &self.open_loop
        }
    }
}

/// Runs every requested cell. Cells run in parallel; a failing cell is
/// recorded and does not stop the others.
pub fn run_matrix(cfg: &ExperimentConfig) -> MatrixOutcome {
    run_cells(cfg, &cfg.cells())
}

pub fn run_cells(cfg: &ExperimentConfig, keys: &[CellKey]) -> MatrixOutcome {
    let cells: Vec<(CellKey, Result<CellOutcome>)> = keys
        .par_iter()
        .map(|&k| (k, run_config(cfg, k.strategy, k.set, k.feedback)))
        .collect();
    let mut open_loop = SummaryTable::new(false);
    let mut closed_loop = SummaryTable::new(true);
    for (k, res) in &cells {
        let table = if k.feedback {
            &mut closed_loop
        } else {
            &mut open_loop
        };
        let cell = match res {
            Ok(o) => CellResult::Done(*o.reported()),
            Err(e) => CellResult::Failed(e.to_string()),
        };
        table.cells.insert((k.set, k.strategy), cell);
    }
    MatrixOutcome {
        open_loop,
        closed_loop,
        cells,
    }
}

pub const SUMMARY_FILE: &str = "summary.csv";
pub const FAILURES_FILE: &str = "failures.csv";

fn summary_rows(tables: &[&SummaryTable]) -> Vec<[String; 6]> {
    let mut rows = Vec::new();
    for t in tables {
        for ((set, strategy), cell) in &t.cells {
            let (a, n, r) = match cell {
                CellResult::Done(m) => (
                    fmt17(m.max_abs_err_peraxis),
                    fmt17(m.max_abs_err_norm),
                    m.run_index.to_string(),
                ),
                CellResult::Failed(_) => ("NaN".into(), "NaN".into(), String::new()),
            };
            rows.push([
                set.to_string(),
                feedback_label(t.feedback).to_string(),
                strategy.to_string(),
                a,
                n,
                r,
            ]);
        }
    }
    rows
}

/// Writes `summary.csv` (and `failures.csv` when cells failed).
pub fn write_summary(dir: &Path, open_loop: &SummaryTable, closed_loop: &SummaryTable) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(SUMMARY_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "set",
        "feedback",
        "strategy",
        "max_abs_err_peraxis",
        "max_abs_err_norm",
        "run_index",
    ])?;
    for row in summary_rows(&[open_loop, closed_loop]) {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let failures: Vec<_> = [open_loop, closed_loop]
        .iter()
        .flat_map(|t| {
            t.cells.iter().filter_map(move |((set, st), c)| match c {
                CellResult::Failed(msg) => Some([
                    set.to_string(),
                    feedback_label(t.feedback).to_string(),
                    st.to_string(),
                    msg.clone(),
                ]),
                CellResult::Done(_) => None,
            })
        })
        .collect();
    let fpath = dir.join(FAILURES_FILE);
    if failures.is_empty() {
        if fpath.exists() {
            fs::remove_file(&fpath).map_err(|e| Error::io(&fpath, e))?;
        }
    } else {
        let mut w = csv::Writer::from_path(&fpath)?;
        w.write_record(["set", "feedback", "strategy", "diagnostic"])?;
        for f in failures {
            w.write_record(&f)?;
        }
        w.flush().map_err(|e| Error::io(&fpath, e))?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct SummaryRow {
    set: String,
    feedback: String,
    strategy: String,
    max_abs_err_peraxis: f64,
    max_abs_err_norm: f64,
    run_index: Option<usize>,
}

/// Reads back a `summary.csv`; returns (open-loop, closed-loop) tables.
pub fn read_summary(dir: &Path) -> Result<(SummaryTable, SummaryTable)> {
    let path = dir.join(SUMMARY_FILE);
    let mut r = csv::Reader::from_path(&path)?;
    let mut open_loop = SummaryTable::new(false);
    let mut closed_loop = SummaryTable::new(true);
    for row in r.deserialize() {
        let row: SummaryRow = row?;
        let set: DisturbanceSet = row.set.parse()?;
        let strategy: Strategy = row.strategy.parse()?;
        let feedback = parse_feedback(&row.feedback)?;
        let cell = match row.run_index {
            Some(run_index) if row.max_abs_err_peraxis.is_finite() => CellResult::Done(RunMetrics {
                run_index,
                max_abs_err_peraxis: row.max_abs_err_peraxis,
                max_abs_err_norm: row.max_abs_err_norm,
            }),
            _ => CellResult::Failed("failed (see failures.csv)".into()),
        };
        let table = if feedback {
            &mut closed_loop
        } else {
            &mut open_loop
        };
        table.cells.insert((set, strategy), cell);
    }
    Ok((open_loop, closed_loop))
}

/// Writes the summary, every run log, the model flown in each cell's
/// reported run, and per-set error traces of the reported runs.
pub fn write_artifacts(outcome: &MatrixOutcome, dir: &Path) -> Result<()> {
    write_summary(dir, &outcome.open_loop, &outcome.closed_loop)?;
    let logs = dir.join("logs");
    let models = dir.join("models");
    let errors = dir.join("errors");
    for d in [&logs, &models, &errors] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }

    let mut traces: BTreeMap<(DisturbanceSet, bool), Vec<(Strategy, &RunLog)>> = BTreeMap::new();
    for (key, res) in &outcome.cells {
        let Ok(cell) = res else { continue };
        for (i, log) in cell.logs.iter().enumerate() {
            let path = logs.join(format!("{key}_run{}.csv", i + 1));
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            log.write_csv(std::io::BufWriter::new(file))?;
        }
        let path = models.join(format!("{key}.model"));
        let model = cell.models.last().expect("at least one run");
        fs::write(&path, model.to_text()).map_err(|e| Error::io(&path, e))?;
        traces
            .entry((key.set, key.feedback))
            .or_default()
            .push((key.strategy, cell.logs.last().expect("at least one run")));
    }

    for ((set, feedback), mut runs) in traces {
        runs.sort_by_key(|r| r.0);
        let path = errors.join(format!("{set}_fb-{}.csv", feedback_label(feedback)));
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec!["t".to_string()];
        for (s, _) in &runs {
            header.push(format!("{s}_ex"));
            header.push(format!("{s}_ez"));
        }
        w.write_record(&header)?;
        let n = runs.iter().map(|r| r.1.len()).min().unwrap_or(0);
        for i in 0..n {
            let mut row = vec![fmt17(runs[0].1.records[i].t)];
            for (_, log) in &runs {
                row.push(fmt17(log.records[i].error.x));
                row.push(fmt17(log.records[i].error.y));
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
