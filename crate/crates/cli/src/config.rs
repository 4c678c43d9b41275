//! Run configuration: a versioned TOML file, validated up front so that a
//! run never fails halfway on a bad input.
//!
//! ```toml
//! # cbsprob-config v1
//! solver = "analytic"
//!
//! [[task]]
//! name = "decoder"
//! period = 100000
//! server_period = 50000
//! budget = [17500, 20000, 22500]
//! pmf = { kind = "beta", alpha = 2.0, beta = 7.0, max = 99500 }
//! ```

use cbsprob::{read_pmf, read_trace, DeltaPolicy, Pmf, QualityModel, ReservationParams, SolverRegistry, TaskSpec};
use serde::{Deserialize, Serialize};
use std::ops::Range;
use std::path::{Path, PathBuf};
use thiserror::Error;
use toml::Spanned;

pub const HEADER: &str = "# cbsprob-config v1";

pub const DEFAULT_JOBS: u64 = 1_000_000;
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_BANDWIDTH_LIMIT: f64 = 1.0;
pub const DEFAULT_EXACT_SOLVER: &str = "cyclic-reduction";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Analyze,
    Simulate,
    Optimize,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Analyze => "analyze",
            Mode::Simulate => "simulate",
            Mode::Optimize => "optimize",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("{path}:{line}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub line: usize,
    pub message: String,
}

// ---------------------------------------------------------------------------
// Raw file layout

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mode: Option<Spanned<Mode>>,
    solver: Option<Spanned<SolverList>>,
    seed: Option<u64>,
    jobs: Option<Spanned<u64>>,
    warmup: Option<Spanned<u64>>,
    bandwidth_limit: Option<Spanned<f64>>,
    resolution: Option<Spanned<u64>>,
    exact_solver: Option<Spanned<String>>,
    #[serde(default)]
    task: Vec<Spanned<RawTask>>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SolverList {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    name: Option<String>,
    period: Spanned<u64>,
    server_period: Spanned<u64>,
    deadline: Option<Spanned<u64>>,
    budget: Option<Spanned<BudgetSetting>>,
    delta: Option<Spanned<DeltaList>>,
    pmf: Spanned<PmfSource>,
    quality: Option<QualityModel>,
    floor: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum BudgetSetting {
    One(u64),
    List(Vec<u64>),
    Range { start: u64, stop: u64, step: u64 },
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum DeltaList {
    One(DeltaSetting),
    Many(Vec<DeltaSetting>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum DeltaSetting {
    Micros(u64),
    Named(String),
}

/// Where a task's execution-time distribution comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PmfSource {
    Beta {
        alpha: f64,
        beta: f64,
        max: u64,
        #[serde(default = "one")]
        grid: u64,
    },
    /// A PMF file.
    File { path: PathBuf },
    /// One execution time in µs per line.
    Trace { path: PathBuf },
    /// Inline `[value_µs, probability]` pairs.
    Table { masses: Vec<(u64, f64)> },
}

fn one() -> u64 {
    1
}

// ---------------------------------------------------------------------------
// Resolved configuration

/// A task after defaulting; serialized into every report.
#[derive(Debug, Clone, Serialize)]
pub struct TaskConfig {
    pub name: String,
    pub period: u64,
    pub server_period: u64,
    pub deadline: u64,
    pub budgets: Vec<u64>,
    pub deltas: Vec<DeltaPolicy>,
    pub pmf: PmfSource,
    pub quality: Option<QualityModel>,
    pub floor: Option<f64>,
    #[serde(skip)]
    pub distribution: Pmf,
}

impl TaskConfig {
    /// The task as seen by the optimizer (first Δ policy).
    pub fn spec(&self) -> TaskSpec {
        let mut spec = TaskSpec::new(
            self.name.clone(),
            self.period,
            self.server_period,
            self.distribution.clone(),
            self.quality.unwrap_or(QualityModel {
                intercept: 0.0,
                slope: 0.0,
            }),
        );
        spec.deadline = self.deadline;
        spec.delta = self.deltas[0];
        spec.floor = self.floor;
        spec
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub solvers: Vec<String>,
    pub seed: u64,
    pub jobs: u64,
    pub warmup: u64,
    pub bandwidth_limit: f64,
    /// Budget grid of the optimizer, µs.
    pub resolution: u64,
    pub exact_solver: Option<String>,
    pub tasks: Vec<TaskConfig>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub solver: Option<String>,
    pub seed: Option<u64>,
}

struct Locator<'a> {
    path: &'a str,
    text: &'a str,
}

impl Locator<'_> {
    fn line(&self, offset: usize) -> usize {
        self.text[..offset.min(self.text.len())].bytes().filter(|&b| b == b'\n').count() + 1
    }

    fn at(&self, span: Range<usize>, message: impl Into<String>) -> ConfigError {
        ConfigError {
            path: self.path.to_string(),
            line: self.line(span.start),
            message: message.into(),
        }
    }
}

/// Reads and validates the configuration at `path` for `mode`.
pub fn load_config(path: &Path, mode: Mode, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        path: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, &path.display().to_string(), base, mode, overrides)
}

/// Validates configuration text. Relative file paths resolve against `base`.
pub fn parse_config(
    text: &str,
    path: &str,
    base: &Path,
    mode: Mode,
    overrides: &Overrides,
) -> Result<RunConfig, ConfigError> {
    let loc = Locator { path, text };
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    if first.trim() != HEADER {
        let line = text.lines().position(|l| !l.trim().is_empty()).map_or(1, |i| i + 1);
        return Err(ConfigError {
            path: path.to_string(),
            line,
            message: format!("expected header line '{HEADER}'"),
        });
    }
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError {
        path: path.to_string(),
        line: e.span().map_or(0, |s| loc.line(s.start)),
        message: e.message().trim().to_string(),
    })?;

    if let Some(m) = &raw.mode {
        if *m.get_ref() != mode {
            return Err(loc.at(m.span(), format!("config is for mode '{}', not '{mode}'", m.get_ref())));
        }
    }

    let registry = SolverRegistry::with_builtins();
    let known = registry.names().join(", ");
    let solvers = match (&overrides.solver, &raw.solver) {
        (Some(s), _) => {
            registry.get(s).map_err(|_| ConfigError {
                path: "--solver".into(),
                line: 0,
                message: format!("unknown solver '{s}' (available: {known})"),
            })?;
            vec![s.clone()]
        }
        (None, Some(list)) => {
            let names = match list.get_ref() {
                SolverList::One(s) => vec![s.clone()],
                SolverList::Many(v) => v.clone(),
            };
            if names.is_empty() {
                return Err(loc.at(list.span(), "solver list is empty"));
            }
            if mode != Mode::Analyze && names.len() > 1 {
                return Err(loc.at(list.span(), format!("{mode} takes a single solver")));
            }
            for s in &names {
                if registry.get(s).is_err() {
                    return Err(loc.at(list.span(), format!("unknown solver '{s}' (available: {known})")));
                }
            }
            names
        }
        (None, None) => vec!["analytic".to_string()],
    };
    let exact_solver = match &raw.exact_solver {
        Some(s) if s.get_ref() == "none" => None,
        Some(s) => {
            if registry.get(s.get_ref()).is_err() {
                return Err(loc.at(s.span(), format!("unknown solver '{}' (available: {known})", s.get_ref())));
            }
            Some(s.get_ref().clone())
        }
        None => Some(DEFAULT_EXACT_SOLVER.to_string()),
    };

    let jobs = raw.jobs.as_ref().map_or(DEFAULT_JOBS, |j| *j.get_ref());
    let warmup = raw.warmup.as_ref().map_or(cbsprob::simulator::default_warmup(jobs), |w| *w.get_ref());
    if mode == Mode::Simulate && jobs <= warmup {
        let span = raw.warmup.as_ref().or(raw.jobs.as_ref()).map_or(0..0, Spanned::span);
        return Err(loc.at(span, format!("jobs ({jobs}) must exceed warmup ({warmup})")));
    }
    let bandwidth_limit = raw.bandwidth_limit.as_ref().map_or(DEFAULT_BANDWIDTH_LIMIT, |b| *b.get_ref());
    if let Some(b) = &raw.bandwidth_limit {
        if !(*b.get_ref() > 0.0 && *b.get_ref() <= 1.0) {
            return Err(loc.at(b.span(), "bandwidth_limit must lie in (0, 1]"));
        }
    }

    if raw.task.is_empty() {
        return Err(ConfigError {
            path: path.to_string(),
            line: loc.line(text.len()),
            message: "missing required key 'task' (at least one [[task]] section)".into(),
        });
    }
    let mut tasks = Vec::with_capacity(raw.task.len());
    for (i, t) in raw.task.iter().enumerate() {
        tasks.push(resolve_task(&loc, t, i, mode, base)?);
    }
    for (i, t) in tasks.iter().enumerate() {
        if tasks[..i].iter().any(|o| o.name == t.name) {
            return Err(loc.at(raw.task[i].span(), format!("duplicate task name '{}'", t.name)));
        }
    }

    let resolution = match &raw.resolution {
        Some(r) => {
            let v = *r.get_ref();
            if let Some(t) = tasks.iter().find(|t| v == 0 || t.server_period % v != 0) {
                return Err(loc.at(
                    r.span(),
                    format!("resolution must divide server_period {} of task '{}'", t.server_period, t.name),
                ));
            }
            v
        }
        None => tasks.iter().fold(0, |g, t| gcd(g, t.server_period / 50)).max(1),
    };
    if mode == Mode::Optimize {
        for (t, raw_t) in tasks.iter().zip(&raw.task) {
            if t.quality.is_none() {
                return Err(loc.at(raw_t.span(), format!("task '{}': missing required key 'quality'", t.name)));
            }
            if let DeltaPolicy::Fixed(d) = t.deltas[0] {
                if resolution % d != 0 {
                    let span = raw_t.get_ref().delta.as_ref().map_or(raw_t.span(), Spanned::span);
                    return Err(loc.at(span, format!("delta {d} must divide the budget resolution {resolution}")));
                }
            }
        }
    }

    Ok(RunConfig {
        mode,
        solvers,
        seed: overrides.seed.or(raw.seed).unwrap_or(DEFAULT_SEED),
        jobs,
        warmup,
        bandwidth_limit,
        resolution,
        exact_solver,
        tasks,
    })
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn resolve_task(
    loc: &Locator<'_>,
    spanned: &Spanned<RawTask>,
    index: usize,
    mode: Mode,
    base: &Path,
) -> Result<TaskConfig, ConfigError> {
    let t = spanned.get_ref();
    let name = t.name.clone().unwrap_or_else(|| format!("task{}", index + 1));
    let err = |span: Range<usize>, msg: String| loc.at(span, format!("task '{name}': {msg}"));

    let period = *t.period.get_ref();
    let server_period = *t.server_period.get_ref();
    if period == 0 || server_period == 0 {
        return Err(err(t.period.span(), "periods must be positive".into()));
    }
    if !period.is_multiple_of(server_period) {
        return Err(err(t.server_period.span(), "server_period must divide period".into()));
    }
    let deadline = t.deadline.as_ref().map_or(period, |d| *d.get_ref());
    if let Some(d) = &t.deadline {
        if !deadline.is_multiple_of(server_period) || deadline < period {
            return Err(err(
                d.span(),
                "deadline must be a multiple of server_period and at least the period".into(),
            ));
        }
    }

    let budgets = match &t.budget {
        None if mode == Mode::Optimize => Vec::new(),
        None => return Err(err(spanned.span(), "missing required key 'budget'".into())),
        Some(b) => {
            let list = match b.get_ref() {
                BudgetSetting::One(q) => vec![*q],
                BudgetSetting::List(v) => v.clone(),
                BudgetSetting::Range { start, stop, step } => {
                    if *step == 0 || start > stop {
                        return Err(err(b.span(), "budget range needs start ≤ stop and step > 0".into()));
                    }
                    (*start..=*stop).step_by(*step as usize).collect()
                }
            };
            if list.is_empty() {
                return Err(err(b.span(), "budget list is empty".into()));
            }
            if let Some(q) = list.iter().find(|&&q| q == 0 || q > server_period) {
                return Err(err(b.span(), format!("budget {q} must lie in (0, server_period]")));
            }
            list
        }
    };

    let deltas = match &t.delta {
        None => vec![DeltaPolicy::SolverDefault],
        Some(d) => {
            let settings = match d.get_ref() {
                DeltaList::One(s) => vec![s.clone()],
                DeltaList::Many(v) => v.clone(),
            };
            if settings.is_empty() || (mode != Mode::Analyze && settings.len() > 1) {
                return Err(err(d.span(), "delta sweeps need analyze mode and at least one entry".into()));
            }
            let mut out = Vec::new();
            for s in settings {
                let policy = parse_delta(&s).map_err(|m| err(d.span(), m))?;
                if let DeltaPolicy::Fixed(step) = policy {
                    if let Some(q) = budgets.iter().find(|&&q| q % step != 0) {
                        return Err(err(d.span(), format!("delta {step} must divide budget {q}")));
                    }
                }
                out.push(policy);
            }
            out
        }
    };

    let pmf = t.pmf.get_ref().clone();
    let distribution = load_pmf(&pmf, base).map_err(|m| err(t.pmf.span(), m))?;
    if let Some(q) = &t.quality {
        if q.slope < 0.0 || !q.slope.is_finite() || !q.intercept.is_finite() {
            return Err(err(spanned.span(), "quality slope must be finite and nonnegative".into()));
        }
    }
    if mode == Mode::Simulate {
        // The simulator needs valid parameters at each budget.
        for &q in &budgets {
            ReservationParams::new(period, server_period, q, 1).map_err(|e| err(spanned.span(), e.to_string()))?;
        }
    }

    Ok(TaskConfig {
        name,
        period,
        server_period,
        deadline,
        budgets,
        deltas,
        pmf,
        quality: t.quality,
        floor: t.floor,
        distribution,
    })
}

/// `50` (µs), `"q/2"` (a fraction of the budget) or `"solver"` (the solver's
/// default).
fn parse_delta(s: &DeltaSetting) -> Result<DeltaPolicy, String> {
    match s {
        DeltaSetting::Micros(0) => Err("delta must be at least 1 µs".into()),
        DeltaSetting::Micros(d) => Ok(DeltaPolicy::Fixed(*d)),
        DeltaSetting::Named(n) if n == "solver" => Ok(DeltaPolicy::SolverDefault),
        DeltaSetting::Named(n) => n
            .strip_prefix("q/")
            .and_then(|k| k.parse::<u64>().ok())
            .filter(|&k| k > 0)
            .map(DeltaPolicy::Fraction)
            .ok_or_else(|| format!("invalid delta '{n}': expected µs, \"q/K\" or \"solver\"")),
    }
}

fn load_pmf(source: &PmfSource, base: &Path) -> Result<Pmf, String> {
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    match source {
        PmfSource::Beta { alpha, beta, max, grid } => {
            Pmf::from_beta(*alpha, *beta, *max, *grid).map_err(|e| e.to_string())
        }
        PmfSource::File { path } => {
            let full = resolve(path);
            read_pmf(&full).map_err(|e| format!("{}: {e}", full.display()))
        }
        PmfSource::Trace { path } => {
            let full = resolve(path);
            read_trace(&full)
                .and_then(|samples| Pmf::from_trace(&samples))
                .map_err(|e| format!("{}: {e}", full.display()))
        }
        PmfSource::Table { masses } => Pmf::from_pairs(masses).map_err(|e| e.to_string()),
    }
}
