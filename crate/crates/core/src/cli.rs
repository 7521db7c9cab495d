//! Command-line front end: configuration, run logs, datasets and the five
//! subcommands. The binary only parses arguments and maps errors to exit
//! codes.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::{Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact::{ContactModel, ContactSettings};
use crate::diffengine::{fd_check, ControlLayout, FdReport};
use crate::dynamics::{aggregate_wrench, compute_forces, HydroBody, Scene, SystemState};
use crate::error::{ConfigError, DiffError};
use crate::geometry::{sample_surface, ObjectShape};
use crate::optimizer::{mpc_run, open_loop_run, ControlDistribution, EpisodeLog, EpisodeStep, Plant};
use crate::scenarios::{build_plant, pose_error, sample_goals, GoalPose, PlantBuildError, PlantSpec, Scenario, TaskKind};
use crate::se3::{apply_twist, InertiaParams, Pose, Twist, Wrench};

/// Default output root when neither `--out` nor `output` is given.
pub const OUT_ENV: &str = "HYDROTACT_OUT";
pub const LOG_SCHEMA: &str = "hydrotact.trajectory";
pub const LOG_VERSION: u32 = 1;
/// Columns written by `export-plots`.
pub const PLOT_COLUMNS: [&str; 7] = [
    "step",
    "time_s",
    "translation_error_mm",
    "rotation_error_rad",
    "error_mm",
    "cost",
    "force_norm_n",
];
/// A goal whose closed-loop error drops by less than this fraction of the
/// starting error is flagged as showing no meaningful motion.
pub const MEANINGFUL_REDUCTION: f64 = 0.1;
/// Largest tolerated fraction of malformed dataset rows.
pub const MAX_SKIPPED_FRACTION: f64 = 0.01;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical fault: {0}")]
    Numerical(String),
    #[error("threshold exceeded: {0}")]
    Threshold(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Threshold(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<PlantBuildError> for CliError {
    fn from(e: PlantBuildError) -> Self {
        match e {
            PlantBuildError::Config(c) => c.into(),
            PlantBuildError::Fault(f) => CliError::Numerical(format!("initial press: {f}")),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Model stepping the simulated plant.
    pub plant: ContactModel,
    /// Model used inside the planner and by `gradcheck`.
    pub planner: ContactModel,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            plant: ContactModel::Nh,
            planner: ContactModel::Nhs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub steps: usize,
    /// Constant twist per manipulator; empty means hold still.
    pub controls: Vec<[f64; 6]>,
    /// Press into the initial grasp before logging.
    pub settle: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            controls: Vec::new(),
            settle: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub goals: usize,
    /// Number of consecutive seeds starting at the top-level seed.
    pub seeds: usize,
    /// Planner models to compare; defaults to `models.planner`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub planners: Option<Vec<ContactModel>>,
    /// Largest accepted mean closed-loop error [mm].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            goals: 10,
            seeds: 1,
            planners: None,
            threshold: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub steps: usize,
    pub delta: f64,
    pub threshold: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            delta: 1e-6,
            threshold: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Recorded CSV; when absent a synthetic dataset is generated with
    /// `models.plant`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    pub models: Vec<ContactModel>,
    pub trajectories: usize,
    pub steps: usize,
    /// Largest accepted mean force RMSE [N] for every listed model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            models: ContactModel::ALL.to_vec(),
            trajectories: 12,
            steps: 30,
            threshold: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: TaskKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default)]
    pub models: ModelConfig,
    #[serde(default)]
    pub plant: PlantSpec,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub optimize: OptimizeConfig,
    #[serde(default)]
    pub gradcheck: GradcheckConfig,
    #[serde(default)]
    pub benchmark: BenchmarkConfig,
    /// Scenario fields merged over the preset. Arrays of tables merge by
    /// position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<toml::Table>,
}

impl RunConfig {
    pub fn new(scenario: TaskKind) -> Self {
        Self {
            scenario,
            seed: 0,
            output: None,
            models: ModelConfig::default(),
            plant: PlantSpec::default(),
            simulate: SimulateConfig::default(),
            optimize: OptimizeConfig::default(),
            gradcheck: GradcheckConfig::default(),
            benchmark: BenchmarkConfig::default(),
            params: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        toml::from_str(&text).map_err(|e| io_err(path, e.to_string().trim_end()))
    }

    pub fn planners(&self) -> Vec<ContactModel> {
        self.optimize.planners.clone().unwrap_or_else(|| vec![self.models.planner])
    }
}

/// A configuration with its scenario merged and validated.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub config: RunConfig,
    pub scenario: Scenario,
}

impl Resolved {
    /// Configuration with `params` replaced by the complete scenario, which
    /// reproduces the run without access to the presets it came from.
    pub fn echo(&self) -> Result<String, CliError> {
        let mut cfg = self.config.clone();
        cfg.planners_resolved();
        let value = toml::Value::try_from(&self.scenario).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.params = match value {
            toml::Value::Table(t) => Some(t),
            _ => None,
        };
        toml::to_string(&cfg).map_err(|e| CliError::Config(e.to_string()))
    }
}

impl RunConfig {
    fn planners_resolved(&mut self) {
        self.optimize.planners = Some(self.planners());
    }
}

fn merge(base: &mut toml::Value, over: &toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (toml::Value::Array(b), toml::Value::Array(o)) if o.iter().all(|v| v.is_table()) && b.iter().all(|v| v.is_table()) => {
            for (i, v) in o.iter().enumerate() {
                match b.get_mut(i) {
                    Some(slot) => merge(slot, v),
                    None => b.push(v.clone()),
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

pub fn resolve(config: RunConfig) -> Result<Resolved, CliError> {
    let mut base = toml::Value::try_from(Scenario::preset(config.scenario)).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(p) = &config.params {
        merge(&mut base, &toml::Value::Table(p.clone()));
    }
    let scenario: Scenario = base
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(format!("params: {}", e.message())))?;
    if scenario.task != config.scenario {
        return Err(ConfigError::invalid("params.task", format!("`{}` contradicts scenario `{}`", scenario.task, config.scenario)).into());
    }
    scenario.validate()?;
    config.plant.validate()?;
    if config.optimize.seeds == 0 {
        return Err(ConfigError::invalid("optimize.seeds", "must be at least 1").into());
    }
    if config.planners().is_empty() {
        return Err(ConfigError::invalid("optimize.planners", "list is empty").into());
    }
    if !(config.gradcheck.delta > 0.0) {
        return Err(ConfigError::invalid("gradcheck.delta", "must be positive").into());
    }
    let m = scenario.manipulators.len();
    if !config.simulate.controls.is_empty() && config.simulate.controls.len() != m {
        return Err(ConfigError::invalid(
            "simulate.controls",
            format!("expected {m} twists (one per manipulator), got {}", config.simulate.controls.len()),
        )
        .into());
    }
    Ok(Resolved { config, scenario })
}

// ---------------------------------------------------------------------------
// Trajectory logs

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogKind {
    Simulate,
    ClosedLoop,
    OpenLoop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema: String,
    pub version: u32,
    pub kind: LogKind,
    pub scenario: TaskKind,
    /// Model stepping the logged system.
    pub model: ContactModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planner: Option<ContactModel>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<GoalPose>,
    /// Names of the hydro bodies, in log order.
    pub bodies: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub time: f64,
    pub object: Pose,
    pub hydro: Vec<Pose>,
    /// Twist applied during this step, `6·M` entries; empty on the last
    /// simulate record.
    pub control: Vec<f64>,
    /// Net contact reaction on each hydro body about its origin.
    pub wrenches: Vec<Wrench>,
    pub cost: Option<f64>,
    pub translation_error_mm: Option<f64>,
    pub rotation_error_rad: Option<f64>,
    pub error_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measured_object: Option<Pose>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogFooter {
    pub steps: usize,
    pub final_object: Option<Pose>,
    pub fault: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogLine {
    Header(LogHeader),
    Record(TrajectoryRecord),
    Footer(LogFooter),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryLog {
    pub header: LogHeader,
    pub records: Vec<TrajectoryRecord>,
    pub footer: Option<LogFooter>,
}

impl TrajectoryLog {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut out = String::new();
        let mut push = |line: &LogLine| -> Result<(), CliError> {
            out.push_str(&serde_json::to_string(line).map_err(|e| CliError::Config(e.to_string()))?);
            out.push('\n');
            Ok(())
        };
        push(&LogLine::Header(self.header.clone()))?;
        for r in &self.records {
            push(&LogLine::Record(r.clone()))?;
        }
        if let Some(f) = &self.footer {
            push(&LogLine::Footer(f.clone()))?;
        }
        fs::write(path, out).map_err(|e| io_err(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
        let mut header = None;
        let mut records = Vec::new();
        let mut footer = None;
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| io_err(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LogLine = serde_json::from_str(&line).map_err(|e| io_err(path, format!("line {}: {e}", n + 1)))?;
            match (parsed, &header) {
                (LogLine::Header(h), None) => {
                    if h.schema != LOG_SCHEMA || h.version != LOG_VERSION {
                        return Err(io_err(
                            path,
                            format!("unsupported log schema {} v{} (expected {LOG_SCHEMA} v{LOG_VERSION})", h.schema, h.version),
                        ));
                    }
                    header = Some(h);
                }
                (LogLine::Header(_), Some(_)) => return Err(io_err(path, format!("line {}: second header", n + 1))),
                (_, None) => return Err(io_err(path, "log does not start with a header")),
                (LogLine::Record(r), Some(_)) => records.push(r),
                (LogLine::Footer(f), Some(_)) => footer = Some(f),
            }
        }
        let header = header.ok_or_else(|| io_err(path, "empty log"))?;
        Ok(Self { header, records, footer })
    }
}

fn net_wrenches(scene: &Scene, x: &SystemState) -> Vec<Wrench> {
    let split = aggregate_wrench(scene, x);
    (0..x.hydro.len()).map(|j| split.hydro_about(j, &x.hydro[j].translation)).collect()
}

fn errors(scenario: &Scenario, q: &Pose, goal: Option<&GoalPose>) -> (Option<f64>, Option<f64>, Option<f64>) {
    match goal {
        Some(g) => {
            let (t, r) = pose_error(q, g);
            (Some(t), Some(r), Some(scenario.score(q, g)))
        }
        None => (None, None, None),
    }
}

fn episode_record(scenario: &Scenario, e: &EpisodeStep, goal: &GoalPose) -> TrajectoryRecord {
    let (t, r, s) = errors(scenario, &e.object, Some(goal));
    TrajectoryRecord {
        step: e.step,
        time: e.time,
        object: e.object,
        hydro: e.hydro.clone(),
        control: e.control.clone(),
        wrenches: e.wrenches.clone(),
        cost: e.cost,
        translation_error_mm: t,
        rotation_error_rad: r,
        error_mm: s,
        measured_object: Some(e.measured_object),
    }
}

fn body_names(scene: &Scene) -> Vec<String> {
    scene.bodies.iter().map(|b| b.name.clone()).collect()
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

fn write_echo(resolved: &Resolved, out: &Path) -> Result<(), CliError> {
    write_text(&out.join("config.resolved.toml"), &resolved.echo()?)
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateOutcome {
    pub log: PathBuf,
    pub records: usize,
    pub final_object: Pose,
}

/// Steps the plant model under constant twists and logs `steps + 1` states.
pub fn cmd_simulate(resolved: &Resolved, out: &Path) -> Result<SimulateOutcome, CliError> {
    let cfg = &resolved.config;
    let s = &resolved.scenario;
    create_dir(out)?;
    write_echo(resolved, out)?;
    let scene = s.scene(cfg.models.plant)?;
    let mut x = if cfg.simulate.settle {
        s.settle(&scene, |_| {})
            .map_err(|f| CliError::Numerical(format!("initial press: {f}")))?
    } else {
        SystemState::unloaded(&scene, s.object.pose, s.initial_hydro())
    };
    let flat: Vec<f64> = (0..s.num_bodies())
        .flat_map(|j| cfg.simulate.controls.get(j).copied().unwrap_or([0.0; 6]))
        .collect();
    let twists: Vec<Twist> = ControlLayout::new(1, s.num_bodies()).step_twists(&flat, 0);
    let header = LogHeader {
        schema: LOG_SCHEMA.into(),
        version: LOG_VERSION,
        kind: LogKind::Simulate,
        scenario: s.task,
        model: cfg.models.plant,
        planner: None,
        seed: cfg.seed,
        goal: None,
        bodies: body_names(&scene),
    };
    let mut log = TrajectoryLog {
        header,
        records: Vec::new(),
        footer: None,
    };
    let record = |k: usize, x: &SystemState, control: Vec<f64>| TrajectoryRecord {
        step: k,
        time: k as f64 * scene.params.step,
        object: x.object,
        hydro: x.hydro.clone(),
        control,
        wrenches: net_wrenches(&scene, x),
        cost: None,
        translation_error_mm: None,
        rotation_error_rad: None,
        error_mm: None,
        measured_object: None,
    };
    let path = out.join("trajectory.jsonl");
    let steps = cfg.simulate.steps;
    let mut fault = None;
    for k in 0..=steps {
        let last = k == steps;
        log.records.push(record(k, &x, if last { Vec::new() } else { flat.clone() }));
        if last {
            break;
        }
        match crate::dynamics::step(&scene, &x, &twists) {
            Ok(next) => x = next,
            Err(kind) => {
                fault = Some(format!("step {k}: {kind}"));
                break;
            }
        }
    }
    log.footer = Some(LogFooter {
        steps: log.records.len(),
        final_object: Some(x.object),
        fault: fault.clone(),
    });
    log.write(&path)?;
    if let Some(f) = fault {
        return Err(CliError::Numerical(f));
    }
    Ok(SimulateOutcome {
        log: path,
        records: log.records.len(),
        final_object: x.object,
    })
}

// ---------------------------------------------------------------------------
// optimize

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalResult {
    pub planner: ContactModel,
    pub seed: u64,
    pub goal_index: usize,
    pub goal: GoalPose,
    pub start_error_mm: f64,
    pub closed_loop_error_mm: f64,
    pub open_loop_error_mm: f64,
    pub closed_loop_fault: Option<String>,
    pub open_loop_fault: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population statistics; zero for an empty slice.
    pub fn of(v: &[f64]) -> Self {
        if v.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerSummary {
    pub planner: ContactModel,
    pub goals: usize,
    pub start: MeanStd,
    pub closed_loop: MeanStd,
    pub open_loop: MeanStd,
    /// `1 − CL/start` on the means.
    pub reduction: f64,
    pub no_meaningful_motion: bool,
    pub faults: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeSummary {
    pub scenario: TaskKind,
    pub plant: ContactModel,
    pub planners: Vec<PlannerSummary>,
    pub goals: Vec<GoalResult>,
}

impl OptimizeSummary {
    /// Error table: one row per planner, open- and closed-loop mean and std.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "task: {}   plant: {}   final error [mm]", self.scenario, self.plant);
        let _ = writeln!(
            s,
            "{:<8} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9}  note",
            "planner", "goals", "start", "OL mean", "OL std", "CL mean", "CL std"
        );
        for p in &self.planners {
            let note = if p.no_meaningful_motion { "no meaningful motion" } else { "" };
            let _ = writeln!(
                s,
                "{:<8} {:>6} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3}  {note}",
                p.planner.as_str(),
                p.goals,
                p.start.mean,
                p.open_loop.mean,
                p.open_loop.std,
                p.closed_loop.mean,
                p.closed_loop.std
            );
        }
        s
    }

    pub fn planner(&self, m: ContactModel) -> Option<&PlannerSummary> {
        self.planners.iter().find(|p| p.planner == m)
    }
}

/// Plant noise seed for one (seed, goal) pair, shared by all planners so
/// they face the same mismatch draws.
fn plant_seed(seed: u64, goal: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(goal as u64)
}

fn footer(log: &EpisodeLog) -> LogFooter {
    LogFooter {
        steps: log.steps.len(),
        final_object: log.final_object,
        fault: log.fault.clone(),
    }
}

/// Closed-loop MPC and open-loop replay of its first plan, for every goal,
/// seed and planner model, against the configured plant.
pub fn cmd_optimize(resolved: &Resolved, out: &Path) -> Result<OptimizeSummary, CliError> {
    let cfg = &resolved.config;
    let s = &resolved.scenario;
    create_dir(out)?;
    write_echo(resolved, out)?;
    let logs = out.join("logs");
    create_dir(&logs)?;
    let space = s.control_space();
    let planners = cfg.planners();
    let mut results = Vec::new();
    for planner in &planners {
        let pscene = s.scene(*planner)?;
        for seed in cfg.seed..cfg.seed + cfg.optimize.seeds as u64 {
            for (gi, g0) in sample_goals(s, cfg.optimize.goals, seed).iter().enumerate() {
                let ps = plant_seed(seed, gi);
                let mut plant = build_plant(s, cfg.models.plant, cfg.plant, ps)?;
                let goal = g0.rebased(&s.object.pose, &plant.truth().object);
                let start = s.score(&plant.truth().object, &goal);
                let cost = s.cost(goal.pose);
                let mut ocfg = s.optimizer.clone();
                ocfg.seed = ps;
                let cl = mpc_run(&pscene, &space, &ocfg, &cost, &mut plant);
                let mut plant2 = build_plant(s, cfg.models.plant, cfg.plant, ps)?;
                let ol = match &cl.first_plan {
                    Some(p) => open_loop_run(&mut plant2, p, s.num_bodies(), None),
                    None => EpisodeLog {
                        final_object: Some(plant2.truth().object),
                        fault: Some("no plan".into()),
                        ..EpisodeLog::default()
                    },
                };
                let mut header = LogHeader {
                    schema: LOG_SCHEMA.into(),
                    version: LOG_VERSION,
                    kind: LogKind::ClosedLoop,
                    scenario: s.task,
                    model: cfg.models.plant,
                    planner: Some(*planner),
                    seed,
                    goal: Some(goal),
                    bodies: body_names(&pscene),
                };
                let stem = format!("{}_s{seed}_g{gi:02}", planner.as_str());
                for (kind, log, tag) in [(LogKind::ClosedLoop, &cl, "cl"), (LogKind::OpenLoop, &ol, "ol")] {
                    header.kind = kind;
                    TrajectoryLog {
                        header: header.clone(),
                        records: log.steps.iter().map(|e| episode_record(s, e, &goal)).collect(),
                        footer: Some(footer(log)),
                    }
                    .write(&logs.join(format!("{tag}_{stem}.jsonl")))?;
                }
                let fin = |log: &EpisodeLog| s.score(&log.final_object.unwrap_or(plant2.truth().object), &goal);
                results.push(GoalResult {
                    planner: *planner,
                    seed,
                    goal_index: gi,
                    goal,
                    start_error_mm: start,
                    closed_loop_error_mm: fin(&cl),
                    open_loop_error_mm: fin(&ol),
                    closed_loop_fault: cl.fault.clone(),
                    open_loop_fault: ol.fault.clone(),
                });
            }
        }
    }
    let summaries = planners
        .iter()
        .map(|p| {
            let rs: Vec<&GoalResult> = results.iter().filter(|r| r.planner == *p).collect();
            let col = |f: fn(&GoalResult) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let start = MeanStd::of(&col(|r| r.start_error_mm));
            let closed = MeanStd::of(&col(|r| r.closed_loop_error_mm));
            let reduction = if start.mean > 0.0 { 1.0 - closed.mean / start.mean } else { 0.0 };
            PlannerSummary {
                planner: *p,
                goals: rs.len(),
                start,
                closed_loop: closed,
                open_loop: MeanStd::of(&col(|r| r.open_loop_error_mm)),
                reduction,
                no_meaningful_motion: start.mean > 0.0 && reduction < MEANINGFUL_REDUCTION,
                faults: rs.iter().filter(|r| r.closed_loop_fault.is_some()).count(),
            }
        })
        .collect();
    let summary = OptimizeSummary {
        scenario: s.task,
        plant: cfg.models.plant,
        planners: summaries,
        goals: results,
    };
    write_json(&out.join("summary.json"), &summary)?;
    write_text(&out.join("summary.txt"), &summary.table())?;
    if let Some(th) = cfg.optimize.threshold {
        let worst: Vec<String> = summary
            .planners
            .iter()
            .filter(|p| p.closed_loop.mean > th)
            .map(|p| format!("{} mean {:.3} mm", p.planner, p.closed_loop.mean))
            .collect();
        if !worst.is_empty() {
            return Err(CliError::Threshold(format!("{} > {th} mm", worst.join(", "))));
        }
    }
    Ok(summary)
}

// ---------------------------------------------------------------------------
// gradcheck

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOutcome {
    pub model: ContactModel,
    pub steps: usize,
    pub threshold: f64,
    pub passed: bool,
    pub compared: usize,
    pub kinks: usize,
    pub offenders: Vec<usize>,
    pub report: FdReport,
}

/// Central-difference check of the rollout-cost gradient on the free
/// coordinates of a random control sequence from the settled grasp.
pub fn cmd_gradcheck(resolved: &Resolved, out: &Path) -> Result<GradcheckOutcome, CliError> {
    let cfg = &resolved.config;
    let s = &resolved.scenario;
    let model = cfg.models.planner;
    if !model.is_differentiable() {
        return Err(DiffError::UnsupportedModel(model.as_str()).to_string()).map_err(CliError::Config);
    }
    create_dir(out)?;
    write_echo(resolved, out)?;
    let scene = s.scene(model)?;
    let x0 = s
        .settle(&scene, |_| {})
        .map_err(|f| CliError::Numerical(format!("initial press: {f}")))?;
    let k = cfg.gradcheck.steps;
    let space = s.control_space();
    let layout = ControlLayout::new(k, s.num_bodies());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut u = ControlDistribution::prior(&space, k).sample(&space, &mut rng);
    space.project(&mut u);
    let goal = sample_goals(s, 1, cfg.seed)[0].rebased(&s.object.pose, &x0.object);
    let coords = space.free_indices(k);
    let report = fd_check(&scene, &x0, &u, &layout, &s.cost(goal.pose), cfg.gradcheck.delta, Some(&coords)).map_err(|e| match e {
        DiffError::Fault(f) => CliError::Numerical(f.to_string()),
        other => CliError::Config(other.to_string()),
    })?;
    let th = cfg.gradcheck.threshold;
    let outcome = GradcheckOutcome {
        model,
        steps: k,
        threshold: th,
        passed: report.passes(th),
        compared: report.entries.iter().filter(|e| e.rel_error.is_some()).count(),
        kinks: report.kinks(),
        offenders: report.offenders(th).iter().map(|e| e.index).collect(),
        report,
    };
    write_json(&out.join("gradcheck.json"), &outcome)?;
    if !outcome.passed {
        return Err(CliError::Threshold(format!(
            "max relative error {:.3e} (threshold {th:.1e}), {} offending coordinates {:?}, {} kinks",
            outcome.report.max_rel_error,
            outcome.offenders.len(),
            outcome.offenders,
            outcome.kinks
        )));
    }
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// benchmark

/// Everything needed to replay a recorded wrench stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkScene {
    pub object: ObjectShape,
    pub points: usize,
    #[serde(default)]
    pub sample_seed: u64,
    pub body: HydroBody,
    pub step: f64,
    #[serde(default)]
    pub contact: ContactSettings,
}

impl BenchmarkScene {
    /// Object and first manipulator of a scenario.
    pub fn from_scenario(s: &Scenario) -> Self {
        let b = &s.bodies()[0];
        Self {
            object: s.object.shape.clone(),
            points: s.object.points,
            sample_seed: s.object.sample_seed,
            body: b.clone(),
            step: s.dynamics.step,
            contact: s.contact,
        }
    }

    pub fn scene(&self, model: ContactModel) -> Result<Scene, ConfigError> {
        let samples = sample_surface(&self.object, self.points, self.sample_seed)
            .map_err(|e| ConfigError::invalid("scene.object", e.to_string()))?;
        let scene = Scene {
            samples,
            // Both poses are prescribed, so mass properties never enter.
            inertia: InertiaParams::diagonal(1.0, [1.0; 3], Vector3::zeros())?,
            bodies: vec![self.body.clone()],
            params: crate::dynamics::QuasiDynParams {
                step: self.step,
                ..Default::default()
            },
            model,
            settings: self.contact,
        };
        scene.validate()?;
        Ok(scene)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WrenchSample {
    pub trajectory: usize,
    pub timestamp: f64,
    pub hydro: Pose,
    pub object: Pose,
    /// Measured reaction on the hydro body about its origin.
    pub wrench: Wrench,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WrenchDataset {
    pub scene: BenchmarkScene,
    pub samples: Vec<WrenchSample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedDataset {
    pub dataset: WrenchDataset,
    pub rows: usize,
    /// 1-based data row numbers that failed to parse.
    pub skipped: Vec<usize>,
}

const CSV_COLUMNS: usize = 22;

fn csv_header() -> Vec<String> {
    let mut h = vec!["trajectory".to_string(), "timestamp".to_string()];
    for p in ["hydro", "object"] {
        for c in ["x", "y", "z", "qx", "qy", "qz", "qw"] {
            h.push(format!("{p}_{c}"));
        }
    }
    for c in ["fx", "fy", "fz", "tx", "ty", "tz"] {
        h.push(c.to_string());
    }
    h
}

impl WrenchDataset {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let scene = serde_json::to_string(&self.scene).map_err(|e| CliError::Config(e.to_string()))?;
        let mut text = format!("# scene = {scene}\n");
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| CliError::Config(e.to_string());
        w.write_record(csv_header()).map_err(csv_err)?;
        for r in &self.samples {
            let mut row = vec![r.trajectory.to_string(), r.timestamp.to_string()];
            let f = r.wrench;
            row.extend(r.hydro.to_array().iter().chain(&r.object.to_array()).map(|v| v.to_string()));
            row.extend([f.force.x, f.force.y, f.force.z, f.torque.x, f.torque.y, f.torque.z].iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        let body = w.into_inner().map_err(|e| CliError::Config(e.to_string()))?;
        text.push_str(&String::from_utf8_lossy(&body));
        write_text(path, &text)
    }

    /// Reads a dataset, skipping malformed rows.
    pub fn read(path: &Path) -> Result<LoadedDataset, CliError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
        let json = first
            .strip_prefix("# scene =")
            .ok_or_else(|| io_err(path, "first line must be `# scene = {json}`"))?;
        let scene: BenchmarkScene = serde_json::from_str(json.trim()).map_err(|e| io_err(path, format!("scene header: {e}")))?;
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(rest.as_bytes());
        let mut samples = Vec::new();
        let mut skipped = Vec::new();
        let mut rows = 0;
        for (n, rec) in rdr.records().enumerate() {
            rows += 1;
            match rec.ok().and_then(|r| parse_row(&r)) {
                Some(s) => samples.push(s),
                None => skipped.push(n + 1),
            }
        }
        Ok(LoadedDataset {
            dataset: WrenchDataset { scene, samples },
            rows,
            skipped,
        })
    }
}

fn parse_row(r: &csv::StringRecord) -> Option<WrenchSample> {
    if r.len() != CSV_COLUMNS {
        return None;
    }
    let trajectory: usize = r.get(0)?.trim().parse().ok()?;
    let v: Vec<f64> = (1..CSV_COLUMNS).map(|i| r.get(i)?.trim().parse::<f64>().ok()).collect::<Option<_>>()?;
    if v.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let pose = |a: &[f64]| {
        let n = (a[3] * a[3] + a[4] * a[4] + a[5] * a[5] + a[6] * a[6]).sqrt();
        ((n - 1.0).abs() < 1e-3).then(|| Pose::from_array(a.try_into().expect("seven entries")))
    };
    Some(WrenchSample {
        trajectory,
        timestamp: v[0],
        hydro: pose(&v[1..8])?,
        object: pose(&v[8..15])?,
        wrench: Wrench::new(Vector3::new(v[15], v[16], v[17]), Vector3::new(v[18], v[19], v[20])),
    })
}

/// Streams of consecutive rows sharing a trajectory id.
fn trajectories(samples: &[WrenchSample]) -> Vec<&[WrenchSample]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=samples.len() {
        if i == samples.len() || samples[i].trajectory != samples[start].trajectory {
            if i > start {
                out.push(&samples[start..i]);
            }
            start = i;
        }
    }
    out
}

/// Predicted reaction wrenches along one recorded stream. The first row
/// starts from zero stored force.
pub fn replay(scene: &Scene, rows: &[WrenchSample]) -> Result<Vec<Wrench>, CliError> {
    let Some(first) = rows.first() else {
        return Ok(Vec::new());
    };
    let mut x = SystemState::unloaded(scene, first.object, vec![first.hydro]);
    let mut out = vec![net_wrenches(scene, &x)[0]];
    for r in &rows[1..] {
        let contacts = compute_forces(scene, &x, &r.object, &[r.hydro]).map_err(|k| {
            CliError::Numerical(format!("trajectory {} at t = {}: {k}", r.trajectory, r.timestamp))
        })?;
        x = SystemState {
            object: r.object,
            hydro: vec![r.hydro],
            contacts,
        };
        out.push(net_wrenches(scene, &x)[0]);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub model: ContactModel,
    /// Per-trajectory force RMSE [N].
    pub force_rmse: Vec<f64>,
    pub force: MeanStd,
    /// Per-trajectory torque RMSE [N·m], mean and std.
    pub torque: MeanStd,
}

pub fn score_dataset(ds: &WrenchDataset, model: ContactModel) -> Result<ModelScore, CliError> {
    let scene = ds.scene.scene(model)?;
    let mut force_rmse = Vec::new();
    let mut torque_rmse = Vec::new();
    for rows in trajectories(&ds.samples) {
        let pred = replay(&scene, rows)?;
        let n = rows.len() as f64;
        let fe: f64 = rows.iter().zip(&pred).map(|(r, p)| (r.wrench.force - p.force).norm_squared()).sum();
        let te: f64 = rows.iter().zip(&pred).map(|(r, p)| (r.wrench.torque - p.torque).norm_squared()).sum();
        force_rmse.push((fe / n).sqrt());
        torque_rmse.push((te / n).sqrt());
    }
    Ok(ModelScore {
        model,
        force: MeanStd::of(&force_rmse),
        torque: MeanStd::of(&torque_rmse),
        force_rmse,
    })
}

/// Offset along `dir` from `start` at which the body first touches the
/// object, by bisection on the smallest sample SDF value.
fn touch_offset(scene: &Scene, object: &Pose, start: &Pose, dir: &Vector3<f64>, reach: f64) -> Option<f64> {
    let shape = &scene.bodies[0].shape;
    let min_phi = |s: f64| {
        let h = Pose::new(start.translation + dir * s, start.rotation);
        scene
            .samples
            .iter()
            .map(|p| shape.eval_local(&h.inverse_transform_point(&object.transform_point(&p.position))))
            .fold(f64::INFINITY, f64::min)
    };
    if min_phi(0.0) <= 0.0 || min_phi(reach) > 0.0 {
        return None;
    }
    let (mut lo, mut hi) = (0.0, reach);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if min_phi(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

/// Synthetic wrench streams from `model`: press in, then drag and twist in
/// sustained strokes long enough to slip, with the object held fixed.
pub fn generate_dataset(
    bscene: &BenchmarkScene,
    object: Pose,
    start: Pose,
    model: ContactModel,
    trajectories: usize,
    steps: usize,
    seed: u64,
) -> Result<WrenchDataset, CliError> {
    let scene = bscene.scene(model)?;
    let to_object = object.translation - start.translation;
    let reach = to_object.norm();
    let dir = Unit::new_normalize(to_object);
    let touch = touch_offset(&scene, &object, &start, &dir, reach)
        .ok_or_else(|| CliError::Config("manipulator must start clear of the object and reach it along the line to its origin".into()))?;
    let helper = if dir.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let t1 = dir.cross(&helper).normalize();
    let t2 = dir.cross(&t1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    for tr in 0..trajectories {
        let depth = rng.gen_range(1.0e-3..3.0e-3);
        let press = (steps / 4).max(1);
        let mut h = Pose::new(start.translation + *dir * (touch - 5e-4), start.rotation);
        let mut stroke = (Vector3::zeros(), 0.0, 0usize);
        let mut rows = Vec::with_capacity(steps + 1);
        for k in 0..=steps {
            rows.push((k, h));
            let u = if k < press {
                Twist::new(*dir * ((depth + 5e-4) / press as f64), Vector3::zeros())
            } else {
                if stroke.2 == 0 {
                    let th = rng.gen_range(0.0..std::f64::consts::TAU);
                    let speed = rng.gen_range(2e-4..1.5e-3);
                    stroke = ((t1 * th.cos() + t2 * th.sin()) * speed, rng.gen_range(-0.02..0.02), rng.gen_range(3..8));
                }
                stroke.2 -= 1;
                let jitter = *dir * rng.gen_range(-1.5e-4..1.5e-4);
                Twist::new(stroke.0 + jitter, *dir * stroke.1)
            };
            h = apply_twist(&h, &u);
        }
        let stream: Vec<WrenchSample> = rows
            .iter()
            .map(|(k, h)| WrenchSample {
                trajectory: tr,
                timestamp: *k as f64 * bscene.step,
                hydro: *h,
                object,
                wrench: Wrench::zero(),
            })
            .collect();
        let w = replay(&scene, &stream)?;
        samples.extend(stream.into_iter().zip(w).map(|(mut s, w)| {
            s.wrench = w;
            s
        }));
    }
    Ok(WrenchDataset {
        scene: bscene.clone(),
        samples,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub dataset: PathBuf,
    pub rows: usize,
    pub skipped: usize,
    pub trajectories: usize,
    pub models: Vec<ModelScore>,
}

impl BenchmarkSummary {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "dataset: {}   trajectories: {}   rows: {} ({} skipped)",
            self.dataset.display(),
            self.trajectories,
            self.rows,
            self.skipped
        );
        let _ = writeln!(s, "{:<8} {:>14} {:>14} {:>16}", "model", "force RMSE [N]", "std [N]", "torque RMSE [Nm]");
        for m in &self.models {
            let _ = writeln!(s, "{:<8} {:>14.4} {:>14.4} {:>16.5}", m.model.as_str(), m.force.mean, m.force.std, m.torque.mean);
        }
        s
    }
}

/// Scores every model on a dataset, generating a synthetic one from the
/// scenario when no dataset is given.
pub fn cmd_benchmark(resolved: &Resolved, dataset: Option<&Path>, out: &Path) -> Result<BenchmarkSummary, CliError> {
    let cfg = &resolved.config;
    create_dir(out)?;
    write_echo(resolved, out)?;
    let path = match dataset.map(Path::to_path_buf).or_else(|| cfg.benchmark.dataset.as_ref().map(PathBuf::from)) {
        Some(p) => p,
        None => {
            let s = &resolved.scenario;
            let ds = generate_dataset(
                &BenchmarkScene::from_scenario(s),
                s.object.pose,
                s.manipulators[0].pose,
                cfg.models.plant,
                cfg.benchmark.trajectories,
                cfg.benchmark.steps,
                cfg.seed,
            )?;
            let p = out.join("dataset.csv");
            ds.write(&p)?;
            p
        }
    };
    let loaded = WrenchDataset::read(&path)?;
    if loaded.skipped.len() as f64 > MAX_SKIPPED_FRACTION * loaded.rows as f64 {
        return Err(CliError::Config(format!(
            "{}: {} of {} rows malformed (first at data row {})",
            path.display(),
            loaded.skipped.len(),
            loaded.rows,
            loaded.skipped[0]
        )));
    }
    if loaded.dataset.samples.is_empty() {
        return Err(CliError::Config(format!("{}: no data rows", path.display())));
    }
    let models = cfg
        .benchmark
        .models
        .iter()
        .map(|m| score_dataset(&loaded.dataset, *m))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = BenchmarkSummary {
        dataset: path,
        rows: loaded.rows,
        skipped: loaded.skipped.len(),
        trajectories: trajectories(&loaded.dataset.samples).len(),
        models,
    };
    write_json(&out.join("benchmark.json"), &summary)?;
    write_text(&out.join("benchmark.txt"), &summary.table())?;
    if let Some(th) = cfg.benchmark.threshold {
        let bad: Vec<String> = summary
            .models
            .iter()
            .filter(|m| m.force.mean > th)
            .map(|m| format!("{} {:.4} N", m.model, m.force.mean))
            .collect();
        if !bad.is_empty() {
            return Err(CliError::Threshold(format!("force RMSE {} > {th} N", bad.join(", "))));
        }
    }
    Ok(summary)
}

// ---------------------------------------------------------------------------
// export-plots

/// Writes one `<stem>.csv` with [`PLOT_COLUMNS`] per log. Logs must share
/// one schema and either all be simulate logs or all episode logs.
pub fn cmd_export_plots(logs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>, CliError> {
    if logs.is_empty() {
        return Ok(Vec::new());
    }
    let parsed = logs.iter().map(|p| TrajectoryLog::read(p)).collect::<Result<Vec<_>, _>>()?;
    let family = |k: LogKind| k == LogKind::Simulate;
    let first = &parsed[0].header;
    for (p, l) in logs.iter().zip(&parsed) {
        if family(l.header.kind) != family(first.kind) {
            return Err(CliError::Config(format!(
                "{}: {:?} log cannot be exported together with {:?} logs",
                p.display(),
                l.header.kind,
                first.kind
            )));
        }
    }
    create_dir(out)?;
    let mut written = Vec::new();
    for (p, l) in logs.iter().zip(&parsed) {
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "log".into());
        let target = out.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_path(&target).map_err(|e| io_err(&target, e))?;
        w.write_record(PLOT_COLUMNS).map_err(|e| io_err(&target, e))?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &l.records {
            let force: f64 = r.wrenches.iter().map(|w| w.force.norm()).sum();
            w.write_record([
                r.step.to_string(),
                r.time.to_string(),
                opt(r.translation_error_mm),
                opt(r.rotation_error_rad),
                opt(r.error_mm),
                opt(r.cost),
                force.to_string(),
            ])
            .map_err(|e| io_err(&target, e))?;
        }
        w.flush().map_err(|e| io_err(&target, e))?;
        written.push(target);
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// Argument parsing

#[derive(Debug, Parser)]
#[command(name = "hydrotact", version, about = "Hydroelastic contact simulation and MPC")]
pub struct Args {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Contact model(s), comma separated: nh, nhs, pf, pff.
    #[arg(long, global = true, value_delimiter = ',')]
    pub model: Vec<ContactModel>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    /// Pass/fail threshold of the subcommand.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Step the plant model under constant twists.
    Simulate,
    /// Closed- and open-loop MPC episodes to sampled goals.
    Optimize,
    /// Force prediction error on a wrench dataset.
    Benchmark {
        /// CSV dataset; a synthetic one is generated when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck,
    /// Error and force curves from trajectory logs as CSV.
    ExportPlots {
        logs: Vec<PathBuf>,
    },
}

impl clap::ValueEnum for ContactModel {
    fn value_variants<'a>() -> &'a [Self] {
        &ContactModel::ALL
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.as_str()))
    }
}

fn apply_overrides(mut cfg: RunConfig, args: &Args) -> Result<RunConfig, CliError> {
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let models = &args.model;
    match &args.command {
        Command::Simulate => {
            if let Some(m) = models.first() {
                cfg.models.plant = *m;
            }
        }
        Command::Optimize => {
            if !models.is_empty() {
                cfg.optimize.planners = Some(models.clone());
            }
            if args.threshold.is_some() {
                cfg.optimize.threshold = args.threshold;
            }
        }
        Command::Gradcheck => {
            if let Some(m) = models.first() {
                cfg.models.planner = *m;
            }
            if let Some(t) = args.threshold {
                cfg.gradcheck.threshold = t;
            }
        }
        Command::Benchmark { .. } => {
            if !models.is_empty() {
                cfg.benchmark.models = models.clone();
            }
            if args.threshold.is_some() {
                cfg.benchmark.threshold = args.threshold;
            }
        }
        Command::ExportPlots { .. } => {}
    }
    if matches!(args.command, Command::Simulate | Command::Gradcheck) && models.len() > 1 {
        return Err(CliError::Config("--model takes a single model for this subcommand".into()));
    }
    Ok(cfg)
}

/// Runs one invocation and returns the process exit code.
pub fn run(args: Args) -> i32 {
    match dispatch(&args) {
        Ok(msg) => {
            print!("{msg}");
            let _ = std::io::stdout().flush();
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(args: &Args) -> Result<String, CliError> {
    let out_root = |cfg: Option<&RunConfig>| {
        args.out
            .clone()
            .or_else(|| cfg.and_then(|c| c.output.as_ref()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    };
    if let Command::ExportPlots { logs } = &args.command {
        let files = cmd_export_plots(logs, &out_root(None))?;
        return Ok(files.iter().map(|p| format!("{}\n", p.display())).collect());
    }
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required for this subcommand".into()))?;
    let cfg = apply_overrides(RunConfig::load(path)?, args)?;
    let out = out_root(Some(&cfg));
    let resolved = resolve(cfg)?;
    Ok(match &args.command {
        Command::Simulate => {
            let r = cmd_simulate(&resolved, &out)?;
            format!("wrote {} records to {}\n", r.records, r.log.display())
        }
        Command::Optimize => cmd_optimize(&resolved, &out)?.table(),
        Command::Benchmark { dataset } => cmd_benchmark(&resolved, dataset.as_deref(), &out)?.table(),
        Command::Gradcheck => {
            let r = cmd_gradcheck(&resolved, &out)?;
            format!(
                "{}: {} coordinates compared, max relative error {:.3e}, {} kinks: pass\n",
                r.model, r.compared, r.report.max_rel_error, r.kinks
            )
        }
        Command::ExportPlots { .. } => unreachable!("handled above"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_overrides_nested_and_indexed() {
        let mut base: toml::Value = toml::from_str("a = 1\n[b]\nc = 2\nd = 3\n[[e]]\nf = 1\ng = 2\n").unwrap();
        let over: toml::Value = toml::from_str("[b]\nd = 4\n[[e]]\ng = 5\n").unwrap();
        merge(&mut base, &over);
        assert_eq!(base["b"]["c"].as_integer(), Some(2));
        assert_eq!(base["b"]["d"].as_integer(), Some(4));
        assert_eq!(base["e"][0]["f"].as_integer(), Some(1));
        assert_eq!(base["e"][0]["g"].as_integer(), Some(5));
    }

    #[test]
    fn echo_reproduces_scenario() {
        for t in TaskKind::ALL {
            let r = resolve(RunConfig::new(t)).unwrap();
            let again = resolve(RunConfig::from_toml(&r.echo().unwrap()).unwrap()).unwrap();
            assert_eq!(again.scenario, r.scenario);
            assert_eq!(again.echo().unwrap(), r.echo().unwrap());
        }
    }

    #[test]
    fn missing_scenario_is_named() {
        let e = RunConfig::from_toml("seed = 3\n").unwrap_err();
        assert!(e.to_string().contains("scenario"), "{e}");
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn task_override_conflict_rejected() {
        let cfg = RunConfig::from_toml("scenario = \"rolling\"\n[params]\ntask = \"planar_pushing\"\n").unwrap();
        assert!(resolve(cfg).is_err());
    }

    #[test]
    fn meanstd_population() {
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!((m.mean, m.std), (2.0, 1.0));
        assert_eq!(MeanStd::of(&[]).mean, 0.0);
    }

    #[test]
    fn trajectory_grouping() {
        let s = |t| WrenchSample {
            trajectory: t,
            timestamp: 0.0,
            hydro: Pose::identity(),
            object: Pose::identity(),
            wrench: Wrench::zero(),
        };
        let v = [s(0), s(0), s(2), s(1), s(1)];
        let g: Vec<usize> = trajectories(&v).iter().map(|t| t.len()).collect();
        assert_eq!(g, vec![2, 1, 2]);
    }
}
