//! Experiment definitions, the negative log likelihood metric, summary
//! statistics and the exact filter used for cross-checks.

use crate::adbn::{AdbnConfig, AdbnModel, AdbnNetwork, Approach};
use crate::ff::{FactoredState, FfFilter, DEFAULT_LBP_ITERS};
use crate::model::fire::{build_fire_domain, FireDomain, FireParams, FIRE_STATES};
use crate::model::topology::Topology;
use crate::model::{config_count, discretize, ModelError};
use crate::sim::{
    generate_trace, parity_configure, run_monitor, schedule_async, BeliefLog, Engine, EventTrace, Intervention,
    Schedule, SimError,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Probabilities are floored at this value before taking logs.
pub const NLL_FLOOR: f64 = 1e-12;
/// Joint state spaces larger than this are refused by the exact filter.
pub const ORACLE_MAX_STATES: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no room has a belief at step {0}")]
    NoBeliefYet(usize),
    #[error("joint state space of {0} states is too large for the exact filter")]
    TooLarge(usize),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl HarnessError {
    /// True for problems with the inputs rather than with running them.
    pub fn is_validation(&self) -> bool {
        matches!(self, HarnessError::Config(_) | HarnessError::Model(_))
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Per-step NLL of the true fire states, one value per grid step.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub nll: Vec<f64>,
}

/// For each grid step, the mean over rooms of −ln of the most recent
/// reported belief (at or before that step) in the room's true fire state.
/// Before its first report a room uses its entry of `priors` if given and is
/// skipped otherwise.
pub fn nll_metric(
    log: &BeliefLog,
    trace: &EventTrace,
    fires: &[usize],
    priors: Option<&[Vec<f64>]>,
    grid: &[usize],
) -> Result<MetricSeries, HarnessError> {
    let slot: BTreeMap<usize, usize> = fires.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut latest: Vec<Option<&[f64]>> = match priors {
        Some(p) => p.iter().map(|b| Some(b.as_slice())).collect(),
        None => vec![None; fires.len()],
    };
    let entries = log.entries();
    let mut next = 0;
    let mut out = MetricSeries {
        steps: Vec::with_capacity(grid.len()),
        times: Vec::with_capacity(grid.len()),
        nll: Vec::with_capacity(grid.len()),
    };
    for &step in grid {
        while next < entries.len() && entries[next].step <= step {
            if let Some(&i) = slot.get(&entries[next].var) {
                latest[i] = Some(&entries[next].probs);
            }
            next += 1;
        }
        let truth = trace.state(step);
        let mut sum = 0.0;
        let mut rooms = 0;
        for (i, b) in latest.iter().enumerate() {
            match b {
                Some(b) => {
                    sum -= b[truth[fires[i]] as usize].max(NLL_FLOOR).ln();
                    rooms += 1;
                }
                None => log::warn!("no belief for variable {} at step {step}, skipped", fires[i]),
            }
        }
        if rooms == 0 {
            return Err(HarnessError::NoBeliefYet(step));
        }
        out.steps.push(step);
        out.times.push(trace.time(step));
        out.nll.push(sum / rooms as f64);
    }
    Ok(out)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Half width of the two-sided 95% Student t interval for the mean.
pub fn ci95_half_width(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let t = StudentsT::new(0.0, 1.0, n - 1.0).expect("positive degrees of freedom");
    t.inverse_cdf(0.975) * std_dev(xs) / n.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTest {
    pub mean_diff: f64,
    pub t: f64,
    /// One-sided p-value for the alternative mean(a − b) < 0.
    pub p_value: f64,
}

pub fn paired_t_less(a: &[f64], b: &[f64]) -> PairedTest {
    assert_eq!(a.len(), b.len(), "paired samples differ in length");
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let m = mean(&d);
    let sd = std_dev(&d);
    if sd == 0.0 {
        let p = if m < 0.0 { 0.0 } else { 1.0 };
        return PairedTest {
            mean_diff: m,
            t: if m == 0.0 { 0.0 } else { m.signum() * f64::INFINITY },
            p_value: p,
        };
    }
    let t = m / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("positive degrees of freedom");
    PairedTest {
        mean_diff: m,
        t,
        p_value: dist.cdf(t),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologySel {
    Rooms12,
    Rooms58,
    Line(usize),
    Ring(usize),
    /// Edge list file, relative to the config file.
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// One supernode per state variable.
    #[default]
    PerVariable,
    /// One supernode per room plus one for the outside temperature.
    PerRoom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EngineSpec {
    Adbn {
        /// Subnodes kept per variable; defaults to the parity history.
        #[serde(default)]
        history: Option<usize>,
        /// Per-step update probability; defaults to the parity value.
        #[serde(default)]
        p: Option<f64>,
        #[serde(default = "default_offset")]
        reporting_offset: usize,
        #[serde(default)]
        approach: Approach,
        #[serde(default)]
        layout: Layout,
        #[serde(default = "default_sweeps")]
        local_sweeps: usize,
    },
    Ff {
        #[serde(default)]
        period: Option<usize>,
        #[serde(default)]
        lbp_iters: Option<usize>,
    },
}

fn default_offset() -> usize {
    1
}

fn default_sweeps() -> usize {
    AdbnConfig::default().local_sweeps
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesSpec {
    pub label: String,
    pub engine: EngineSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParitySpec {
    pub ff_period: usize,
    pub ff_iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IgnitionSpec {
    pub step: usize,
    pub room: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedList {
    List(Vec<u64>),
    Range { from: u64, count: u64 },
}

impl SeedList {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedList::List(v) => v.clone(),
            SeedList::Range { from, count } => (*from..from + count).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub topology: TopologySel,
    /// Fire model parameter file, relative to the config file.
    #[serde(default)]
    pub params: Option<PathBuf>,
    pub dt: f64,
    pub horizon: usize,
    #[serde(default)]
    pub ignition: Option<IgnitionSpec>,
    pub eval_every: usize,
    /// Evaluation points after ignition used for window statistics.
    pub window: usize,
    pub seeds: SeedList,
    /// Output directory, relative to the config file.
    pub output: PathBuf,
    #[serde(default)]
    pub parity: Option<ParitySpec>,
    pub series: Vec<SeriesSpec>,
    /// Also write every belief log.
    #[serde(default)]
    pub write_beliefs: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf), HarnessError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::from_json(&text)?, base))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.seeds.seeds().is_empty() {
            return bad("seed list is empty".into());
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.eval_every == 0 || self.window == 0 || self.horizon <= self.eval_every {
            return bad("evaluation grid is empty".into());
        }
        if self.series.is_empty() {
            return bad("no series".into());
        }
        let mut labels = std::collections::BTreeSet::new();
        for s in &self.series {
            if s.label.is_empty() || s.label.contains([',', '"', '\n']) || !labels.insert(&s.label) {
                return bad(format!("series label {:?} is empty, repeated or not CSV-safe", s.label));
            }
            self.resolve(&s.engine)?;
        }
        if let Some(p) = self.parity {
            parity_configure(p.ff_period, p.ff_iters).map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if let Some(ig) = self.ignition {
            if ig.step >= self.horizon {
                return bad("ignition is past the horizon".into());
            }
        }
        Ok(())
    }

    /// Engine settings with parity defaults filled in.
    pub fn resolve(&self, e: &EngineSpec) -> Result<ResolvedEngine, HarnessError> {
        let missing = |what: &str| HarnessError::Config(format!("{what} not given and no parity block"));
        match e {
            EngineSpec::Adbn {
                history,
                p,
                reporting_offset,
                approach,
                layout,
                local_sweeps,
            } => {
                let par = self
                    .parity
                    .map(|x| parity_configure(x.ff_period, x.ff_iters))
                    .transpose()
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
                let history = history.or(par.map(|x| x.history)).ok_or_else(|| missing("history"))?;
                let p = p.or(par.map(|x| x.p)).ok_or_else(|| missing("p"))?;
                if history == 0 || !(p > 0.0 && p <= 1.0) || *local_sweeps == 0 {
                    return Err(HarnessError::Config("history, p or local_sweeps out of range".into()));
                }
                Ok(ResolvedEngine::Adbn {
                    cfg: AdbnConfig {
                        history: Some(history),
                        approach: *approach,
                        reporting_offset: *reporting_offset,
                        local_sweeps: *local_sweeps,
                        start_time: 0.0,
                    },
                    p,
                    layout: *layout,
                })
            }
            EngineSpec::Ff { period, lbp_iters } => {
                let period = period.or(self.parity.map(|x| x.ff_period)).ok_or_else(|| missing("period"))?;
                let iters = lbp_iters
                    .or(self.parity.map(|x| x.ff_iters))
                    .unwrap_or(DEFAULT_LBP_ITERS);
                if period == 0 || iters == 0 {
                    return Err(HarnessError::Config("period and lbp_iters must be positive".into()));
                }
                Ok(ResolvedEngine::Ff { period, iters })
            }
        }
    }

    /// Evaluation steps: every `eval_every` steps up to the horizon.
    pub fn grid(&self) -> Vec<usize> {
        (self.eval_every..self.horizon).step_by(self.eval_every).collect()
    }

    /// Indices into [`Self::grid`] of the statistics window: the first
    /// `window` points after ignition, or the last `window` points.
    pub fn window_indices(&self) -> std::ops::Range<usize> {
        let grid = self.grid();
        let start = match self.ignition {
            Some(ig) => grid.iter().position(|&s| s > ig.step).unwrap_or(grid.len()),
            None => grid.len().saturating_sub(self.window),
        };
        start..(start + self.window).min(grid.len())
    }

    pub fn sha256(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn domain(&self, base: &Path) -> Result<FireDomain, HarnessError> {
        let topology = match &self.topology {
            TopologySel::Rooms12 => Topology::rooms12(),
            TopologySel::Rooms58 => Topology::rooms58(),
            TopologySel::Line(n) => Topology::line(*n)?,
            TopologySel::Ring(n) => Topology::ring(*n)?,
            TopologySel::File(p) => {
                let path = base.join(p);
                Topology::parse(&std::fs::read_to_string(&path).map_err(io_err(&path))?)?
            }
        };
        let params = match &self.params {
            Some(p) => {
                let path = base.join(p);
                FireParams::from_json(&std::fs::read_to_string(&path).map_err(io_err(&path))?)?
            }
            None => FireParams::default(),
        };
        let dom = build_fire_domain(&topology, &params)?;
        if let Some(ig) = self.ignition {
            if ig.room >= dom.rooms.len() {
                return Err(HarnessError::Config(format!("ignition room {} does not exist", ig.room)));
            }
        }
        Ok(dom)
    }

    pub fn interventions(&self, dom: &FireDomain) -> Vec<Intervention> {
        self.ignition
            .map(|ig| Intervention {
                step: ig.step,
                var: dom.rooms[ig.room].fire,
                state: 1,
            })
            .into_iter()
            .collect()
    }

    pub fn trace(&self, dom: &FireDomain, seed: u64) -> Result<EventTrace, HarnessError> {
        Ok(generate_trace(&dom.spec, &dom.obs, self.dt, self.horizon, seed, &self.interventions(dom))?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedEngine {
    Adbn { cfg: AdbnConfig, p: f64, layout: Layout },
    Ff { period: usize, iters: usize },
}

/// Builds the engine and schedule of one series for one seed.
pub fn build_engine(dom: &FireDomain, eng: &ResolvedEngine, dt: f64, horizon: usize, seed: u64) -> Result<(Engine, Schedule), HarnessError> {
    match eng {
        ResolvedEngine::Adbn { cfg, p, layout } => {
            let groups = match layout {
                Layout::PerVariable => (0..dom.spec.len()).map(|v| vec![v]).collect(),
                Layout::PerRoom => dom.room_groups(),
            };
            let model = AdbnModel::new(dom.spec.clone(), dom.obs.clone(), groups).map_err(SimError::from)?;
            let sched = schedule_async(model.n_supernodes(), *p, horizon, seed)?;
            Ok((Engine::Adbn(AdbnNetwork::new(model, cfg.clone())), sched))
        }
        ResolvedEngine::Ff { period, iters } => {
            let dbn = discretize(&dom.spec, &dom.obs, *period as f64 * dt)?;
            let filter = FfFilter::new(&dbn, FactoredState::initial(&dom.spec), *iters).map_err(SimError::from)?;
            Ok((Engine::Ff { filter, period: *period }, Schedule::default()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRun {
    pub metric: MetricSeries,
    pub messages: u64,
    pub updates: usize,
    pub log: Option<BeliefLog>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub series: Vec<SeriesRun>,
}

pub fn fire_labels() -> Vec<String> {
    FIRE_STATES.iter().map(|s| s.to_string()).collect()
}

pub fn run_seed(cfg: &ExperimentConfig, dom: &FireDomain, seed: u64) -> Result<SeedRun, HarnessError> {
    let trace = cfg.trace(dom, seed)?;
    let fires = dom.fire_vars();
    let grid = cfg.grid();
    let labels = fire_labels();
    let priors: Vec<Vec<f64>> = fires.iter().map(|&v| dom.spec.variables[v].initial.clone()).collect();
    let mut series = Vec::with_capacity(cfg.series.len());
    for s in &cfg.series {
        let eng = cfg.resolve(&s.engine)?;
        let (mut engine, sched) = build_engine(dom, &eng, cfg.dt, cfg.horizon, seed)?;
        let run = run_monitor(&mut engine, &trace, &sched, &fires, &labels)?;
        series.push(SeriesRun {
            metric: nll_metric(&run.log, &trace, &fires, Some(&priors), &grid)?,
            messages: run.messages,
            updates: run.updates,
            log: cfg.write_beliefs.then_some(run.log),
        });
    }
    Ok(SeedRun { seed, series })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSummary {
    pub label: String,
    /// Per grid point mean NLL over seeds.
    pub mean: Vec<f64>,
    pub ci95: Vec<f64>,
    /// Per seed mean NLL over the statistics window.
    pub window_nll: Vec<f64>,
    pub messages: Vec<u64>,
    pub updates: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub name: String,
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub seeds: Vec<u64>,
    pub window: std::ops::Range<usize>,
    pub series: Vec<SeriesSummary>,
}

impl ExperimentResult {
    pub fn series(&self, label: &str) -> Option<&SeriesSummary> {
        self.series.iter().find(|s| s.label == label)
    }
}

/// Runs every seed (in parallel) and aggregates, without writing files.
pub fn evaluate(cfg: &ExperimentConfig, base: &Path) -> Result<(ExperimentResult, Vec<SeedRun>), HarnessError> {
    cfg.validate()?;
    let dom = cfg.domain(base)?;
    let seeds = cfg.seeds.seeds();
    let mut runs = seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, &dom, seed))
        .collect::<Result<Vec<_>, _>>()?;
    runs.sort_by_key(|r| r.seed);
    let grid = cfg.grid();
    let window = cfg.window_indices();
    let series = cfg
        .series
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let column = |k: usize| -> Vec<f64> { runs.iter().map(|r| r.series[i].metric.nll[k]).collect() };
            SeriesSummary {
                label: s.label.clone(),
                mean: (0..grid.len()).map(|k| mean(&column(k))).collect(),
                ci95: (0..grid.len()).map(|k| ci95_half_width(&column(k))).collect(),
                window_nll: runs
                    .iter()
                    .map(|r| {
                        let w = &r.series[i].metric.nll[window.clone()];
                        if w.is_empty() { f64::NAN } else { mean(w) }
                    })
                    .collect(),
                messages: runs.iter().map(|r| r.series[i].messages).collect(),
                updates: runs.iter().map(|r| r.series[i].updates).collect(),
            }
        })
        .collect();
    let times = runs
        .first()
        .map(|r| r.series[0].metric.times.clone())
        .unwrap_or_default();
    Ok((
        ExperimentResult {
            name: cfg.name.clone(),
            steps: grid,
            times,
            seeds: runs.iter().map(|r| r.seed).collect(),
            window,
            series,
        },
        runs,
    ))
}

pub fn aggregate_csv(res: &ExperimentResult) -> String {
    let mut out = String::from("step,time");
    for s in &res.series {
        let _ = write!(out, ",{0}_mean,{0}_ci95", s.label);
    }
    out.push('\n');
    for (k, (step, time)) in res.steps.iter().zip(&res.times).enumerate() {
        let _ = write!(out, "{step},{time}");
        for s in &res.series {
            let _ = write!(out, ",{},{}", s.mean[k], s.ci95[k]);
        }
        out.push('\n');
    }
    out
}

pub fn summary_csv(res: &ExperimentResult) -> String {
    let mut out = String::from("series,seeds,window_nll_mean,window_nll_ci95,messages_mean,updates_mean\n");
    for s in &res.series {
        let msgs: Vec<f64> = s.messages.iter().map(|&m| m as f64).collect();
        let upd: Vec<f64> = s.updates.iter().map(|&u| u as f64).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            s.label,
            s.window_nll.len(),
            mean(&s.window_nll),
            ci95_half_width(&s.window_nll),
            mean(&msgs),
            mean(&upd)
        );
    }
    out
}

fn seed_csv(res: &ExperimentResult, run: &SeedRun) -> String {
    let mut out = String::from("step,time");
    for s in &res.series {
        let _ = write!(out, ",{}", s.label);
    }
    out.push('\n');
    for (k, (step, time)) in res.steps.iter().zip(&res.times).enumerate() {
        let _ = write!(out, "{step},{time}");
        for s in &run.series {
            let _ = write!(out, ",{}", s.metric.nll[k]);
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    name: &'a str,
    config_sha256: String,
    seeds: &'a [u64],
    window_steps: (usize, usize),
    messages: BTreeMap<&'a str, &'a [u64]>,
    config: &'a ExperimentConfig,
}

fn write_outputs(dir: &Path, cfg: &ExperimentConfig, res: &ExperimentResult, runs: &[SeedRun]) -> Result<(), HarnessError> {
    let write = |p: PathBuf, text: &str| std::fs::write(&p, text).map_err(io_err(&p));
    let seeds_dir = dir.join("seeds");
    std::fs::create_dir_all(&seeds_dir).map_err(io_err(&seeds_dir))?;
    write(dir.join("aggregate.csv"), &aggregate_csv(res))?;
    write(dir.join("summary.csv"), &summary_csv(res))?;
    for run in runs {
        write(seeds_dir.join(format!("seed_{}.csv", run.seed)), &seed_csv(res, run))?;
        for (spec, s) in cfg.series.iter().zip(&run.series) {
            if let Some(log) = &s.log {
                let mut buf = Vec::new();
                log.write_csv(&mut buf).expect("writing to memory");
                let p = seeds_dir.join(format!("beliefs_{}_{}.csv", spec.label, run.seed));
                std::fs::write(&p, buf).map_err(io_err(&p))?;
            }
        }
    }
    let w = &res.window;
    let manifest = Manifest {
        name: &cfg.name,
        config_sha256: cfg.sha256(),
        seeds: &res.seeds,
        window_steps: (
            res.steps.get(w.start).copied().unwrap_or(0),
            res.steps.get(w.end.saturating_sub(1)).copied().unwrap_or(0),
        ),
        messages: res.series.iter().map(|s| (s.label.as_str(), s.messages.as_slice())).collect(),
        config: cfg,
    };
    write(dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    Ok(())
}

/// Runs the experiment and writes `aggregate.csv`, `summary.csv`,
/// `manifest.json` and `seeds/` under the output directory. Nothing is left
/// behind on failure.
pub fn run_experiment(cfg: &ExperimentConfig, base: &Path) -> Result<ExperimentResult, HarnessError> {
    let (res, runs) = evaluate(cfg, base)?;
    let out = base.join(&cfg.output);
    let staging = out.with_extension(format!("partial-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&staging);
    std::fs::create_dir_all(&staging).map_err(io_err(&staging))?;
    let done = write_outputs(&staging, cfg, &res, &runs).and_then(|_| {
        if out.exists() {
            std::fs::remove_dir_all(&out).map_err(io_err(&out))?;
        }
        std::fs::rename(&staging, &out).map_err(io_err(&out))
    });
    if done.is_err() {
        let _ = std::fs::remove_dir_all(&staging);
    }
    done.map(|_| res)
}

fn decode(cards: &[usize], mut i: usize) -> Vec<usize> {
    let mut x = vec![0; cards.len()];
    for (slot, &c) in x.iter_mut().zip(cards).rev() {
        *slot = i % c;
        i /= c;
    }
    x
}

/// Exact forward filter over the joint state space, conditioning on every
/// sensor reading at every generating step. Returns the filtered marginal
/// of each state variable at each step.
pub struct ExactFilter {
    cards: Vec<usize>,
    states: usize,
    /// Row-major joint transition matrix over one generating step.
    trans: Vec<f64>,
    obs: crate::model::ObservationModel,
}

impl ExactFilter {
    pub fn new(dom: &FireDomain, dt: f64) -> Result<Self, HarnessError> {
        let spec = &dom.spec;
        let cards: Vec<usize> = (0..spec.len()).map(|v| spec.card(v)).collect();
        let states = cards.iter().try_fold(1usize, |a, &c| a.checked_mul(c)).unwrap_or(usize::MAX);
        if states > ORACLE_MAX_STATES {
            return Err(HarnessError::TooLarge(states));
        }
        debug_assert_eq!(states, config_count(&cards));
        let dbn = discretize(spec, &dom.obs, dt)?;
        let mut trans = vec![0.0; states * states];
        let all: Vec<Vec<usize>> = (0..states).map(|i| decode(&cards, i)).collect();
        let mut vals = Vec::new();
        for (i, prev) in all.iter().enumerate() {
            let rows: Vec<&[f64]> = (0..cards.len())
                .map(|v| {
                    vals.clear();
                    vals.push(prev[v]);
                    vals.extend(spec.parents[v].iter().map(|&p| prev[p]));
                    dbn.transitions[v].row_for(&vals)
                })
                .collect();
            for (j, next) in all.iter().enumerate() {
                trans[i * states + j] = next.iter().zip(&rows).map(|(&x, r)| r[x]).product();
            }
        }
        Ok(Self {
            cards,
            states,
            trans,
            obs: dom.obs.clone(),
        })
    }

    /// Filtered marginals of the variables in `vars` at each step of `grid`.
    pub fn run(&self, dom: &FireDomain, trace: &EventTrace, vars: &[usize], grid: &[usize]) -> Result<Vec<Vec<Vec<f64>>>, HarnessError> {
        let all: Vec<Vec<usize>> = (0..self.states).map(|i| decode(&self.cards, i)).collect();
        let mut belief: Vec<f64> = all
            .iter()
            .map(|x| x.iter().enumerate().map(|(v, &s)| dom.spec.variables[v].initial[s]).product())
            .collect();
        let mut out = Vec::with_capacity(grid.len());
        let mut next_grid = grid.iter().peekable();
        let mut vals = Vec::new();
        for step in 0..trace.horizon() {
            if step > 0 {
                let mut nb = vec![0.0; self.states];
                for (i, &w) in belief.iter().enumerate() {
                    if w != 0.0 {
                        let row = &self.trans[i * self.states..(i + 1) * self.states];
                        nb.iter_mut().zip(row).for_each(|(n, t)| *n += w * t);
                    }
                }
                belief = nb;
            }
            let y = trace.readings(step);
            for (b, x) in belief.iter_mut().zip(&all) {
                for (s, sensor) in self.obs.sensors.iter().enumerate() {
                    vals.clear();
                    vals.extend(sensor.parents.iter().map(|&p| x[p]));
                    *b *= sensor.cpt.row_for(&vals)[y[s] as usize];
                }
            }
            let z: f64 = belief.iter().sum();
            if !(z > 0.0) {
                return Err(HarnessError::Sim(SimError::Param(format!("readings at step {step} have zero probability"))));
            }
            belief.iter_mut().for_each(|b| *b /= z);
            if next_grid.peek() == Some(&&step) {
                next_grid.next();
                out.push(
                    vars.iter()
                        .map(|&v| {
                            let mut m = vec![0.0; self.cards[v]];
                            for (b, x) in belief.iter().zip(&all) {
                                m[x[v]] += b;
                            }
                            m
                        })
                        .collect(),
                );
            }
        }
        Ok(out)
    }
}

/// NLL series of the exact filter for each seed of `cfg`, averaged over
/// seeds, as CSV with columns step, time, oracle_mean, oracle_ci95.
pub fn oracle_csv(cfg: &ExperimentConfig, base: &Path) -> Result<String, HarnessError> {
    cfg.validate()?;
    let dom = cfg.domain(base)?;
    let filter = ExactFilter::new(&dom, cfg.dt)?;
    let fires = dom.fire_vars();
    let grid = cfg.grid();
    let per_seed = cfg
        .seeds
        .seeds()
        .par_iter()
        .map(|&seed| {
            let trace = cfg.trace(&dom, seed)?;
            let marg = filter.run(&dom, &trace, &fires, &grid)?;
            Ok(grid
                .iter()
                .zip(&marg)
                .map(|(&step, ms)| {
                    let truth = trace.state(step);
                    ms.iter()
                        .zip(&fires)
                        .map(|(m, &v)| -m[truth[v] as usize].max(NLL_FLOOR).ln())
                        .sum::<f64>()
                        / fires.len() as f64
                })
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let mut out = String::from("step,time,oracle_mean,oracle_ci95\n");
    for (k, &step) in grid.iter().enumerate() {
        let col: Vec<f64> = per_seed.iter().map(|s| s[k]).collect();
        let _ = writeln!(out, "{step},{},{},{}", step as f64 * cfg.dt, mean(&col), ci95_half_width(&col));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bp::{exact_enumerate, Evidence, Network};
    use crate::linalg::IntensityMatrix;
    use crate::model::{CtbnSpec, Cpt, ObservationModel, SensorSpec, VariableSpec};
    use crate::sim::LogEntry;

    /// One frozen binary variable that is always in state 0.
    fn frozen() -> (CtbnSpec, ObservationModel) {
        let q = IntensityMatrix::from_off_diagonal(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let spec = CtbnSpec::new(vec![VariableSpec::new("X", &["a", "b"], &[1.0, 0.0])], vec![vec![]], vec![vec![q]]).unwrap();
        let obs = ObservationModel {
            sensors: vec![SensorSpec {
                name: "S".into(),
                states: vec!["a".into(), "b".into()],
                parents: vec![0],
                cpt: Cpt::new(2, vec![2], vec![0.9, 0.1, 0.1, 0.9]).unwrap(),
            }],
        };
        (spec, obs)
    }

    fn entry(step: usize, probs: &[f64]) -> LogEntry {
        LogEntry {
            step,
            time: step as f64,
            supernode: 0,
            var: 0,
            probs: probs.to_vec(),
            message_count: 0,
        }
    }

    fn base_config() -> serde_json::Value {
        serde_json::json!({
            "name": "t",
            "topology": {"line": 2},
            "dt": 0.01,
            "horizon": 301,
            "ignition": {"step": 100, "room": 0},
            "eval_every": 10,
            "window": 10,
            "seeds": [3, 1],
            "output": "out",
            "parity": {"ff_period": 25, "ff_iters": 2},
            "series": [
                {"label": "A", "engine": {"kind": "adbn"}},
                {"label": "F", "engine": {"kind": "ff"}}
            ]
        })
    }

    fn parse(v: &serde_json::Value) -> Result<ExperimentConfig, HarnessError> {
        ExperimentConfig::from_json(&v.to_string())
    }

    #[test]
    fn nll_of_reported_beliefs() {
        let (spec, obs) = frozen();
        let trace = generate_trace(&spec, &obs, 0.1, 12, 0, &[]).unwrap();
        let mut log = BeliefLog::new(vec!["a".into(), "b".into()]);
        log.push(entry(0, &[1.0, 0.0]));
        log.push(entry(5, &[0.5, 0.5]));
        log.push(entry(8, &[1e-20, 1.0]));
        let m = nll_metric(&log, &trace, &[0], None, &[0, 4, 5, 7, 8, 11]).unwrap();
        let ln2 = std::f64::consts::LN_2;
        let floor = -(1e-12f64).ln();
        let want = [0.0, 0.0, ln2, ln2, floor, floor];
        for (g, w) in m.nll.iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{:?}", m.nll);
        }
        assert_eq!(m.steps, vec![0, 4, 5, 7, 8, 11]);
        assert!((m.times[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn priors_cover_rooms_without_reports() {
        let (spec, obs) = frozen();
        let trace = generate_trace(&spec, &obs, 0.1, 10, 0, &[]).unwrap();
        let mut log = BeliefLog::new(vec!["a".into(), "b".into()]);
        log.push(entry(5, &[1.0, 0.0]));
        assert_eq!(nll_metric(&log, &trace, &[0], None, &[2]), Err(HarnessError::NoBeliefYet(2)));
        let priors = vec![vec![0.25, 0.75]];
        let m = nll_metric(&log, &trace, &[0], Some(&priors), &[2, 6]).unwrap();
        assert!((m.nll[0] + 0.25f64.ln()).abs() < 1e-12);
        assert_eq!(m.nll[1], 0.0);
    }

    #[test]
    fn interval_uses_student_t() {
        let xs: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(mean(&xs), 5.5);
        let sd = (110.0f64 / 12.0).sqrt();
        assert!((std_dev(&xs) - sd).abs() < 1e-12);
        let t9 = 2.262_157_162_798_2;
        assert!((ci95_half_width(&xs) - t9 * sd / 10f64.sqrt()).abs() < 1e-9);
        assert_eq!(ci95_half_width(&[1.0]), 0.0);
    }

    #[test]
    fn paired_test_matches_closed_form() {
        // Two degrees of freedom: F(t) = 1/2 + t / (2 sqrt(2 + t^2)).
        let a = [1.0, 2.0, 3.0];
        let b = [2.0, 4.0, 6.0];
        let r = paired_t_less(&a, &b);
        let t = -2.0 * 3f64.sqrt();
        assert!((r.mean_diff + 2.0).abs() < 1e-12);
        assert!((r.t - t).abs() < 1e-12);
        assert!((r.p_value - (0.5 + t / (2.0 * (2.0 + t * t).sqrt()))).abs() < 1e-9);
        let flipped = paired_t_less(&b, &a);
        assert!((flipped.p_value - (1.0 - r.p_value)).abs() < 1e-9);
        assert_eq!(paired_t_less(&[1.0, 1.0], &[2.0, 2.0]).p_value, 0.0);
    }

    #[test]
    fn config_parsing_and_defaults() {
        let cfg = parse(&base_config()).unwrap();
        assert_eq!(cfg.seeds.seeds(), vec![3, 1]);
        let par = parity_configure(25, 2).unwrap();
        match cfg.resolve(&cfg.series[0].engine).unwrap() {
            ResolvedEngine::Adbn { cfg: c, p, layout } => {
                assert_eq!(c.history, Some(par.history));
                assert_eq!(p, par.p);
                assert_eq!(c.reporting_offset, 1);
                assert_eq!(layout, Layout::PerVariable);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(cfg.resolve(&cfg.series[1].engine).unwrap(), ResolvedEngine::Ff { period: 25, iters: 2 });
        let mut v = base_config();
        v["seeds"] = serde_json::json!({"from": 4, "count": 3});
        assert_eq!(parse(&v).unwrap().seeds.seeds(), vec![4, 5, 6]);
        assert_eq!(cfg.sha256(), parse(&base_config()).unwrap().sha256());
        assert_eq!(cfg.sha256().len(), 64);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let cases: Vec<(&str, serde_json::Value)> = vec![
            ("unknown field", serde_json::json!({"colour": 1})),
            ("no seeds", serde_json::json!({"seeds": []})),
            ("dt", serde_json::json!({"dt": 0.0})),
            ("grid", serde_json::json!({"eval_every": 0})),
            ("no series", serde_json::json!({"series": []})),
            ("label", serde_json::json!({"series": [{"label": "a,b", "engine": {"kind": "ff"}}]})),
            ("p", serde_json::json!({"series": [{"label": "a", "engine": {"kind": "adbn", "p": 1.5}}]})),
            ("kind", serde_json::json!({"series": [{"label": "a", "engine": {"kind": "pf"}}]})),
            ("engine field", serde_json::json!({"series": [{"label": "a", "engine": {"kind": "ff", "k": 1}}]})),
            ("ignition", serde_json::json!({"ignition": {"step": 400, "room": 0}})),
            ("parity", serde_json::json!({"parity": {"ff_period": 0, "ff_iters": 2}})),
        ];
        for (what, patch) in cases {
            let mut v = base_config();
            for (k, x) in patch.as_object().unwrap() {
                v[k] = x.clone();
            }
            let err = parse(&v).expect_err(what);
            assert!(err.is_validation(), "{what}: {err}");
        }
        let mut v = base_config();
        v.as_object_mut().unwrap().remove("parity");
        assert!(matches!(parse(&v), Err(HarnessError::Config(_))));
        let mut v = base_config();
        v["ignition"]["room"] = serde_json::json!(2);
        let cfg = parse(&v).unwrap();
        assert!(matches!(cfg.domain(Path::new(".")), Err(HarnessError::Config(_))));
    }

    #[test]
    fn window_follows_ignition() {
        let mut v = base_config();
        v["horizon"] = serde_json::json!(101);
        v["ignition"] = serde_json::json!({"step": 35, "room": 0});
        v["window"] = serde_json::json!(4);
        let cfg = parse(&v).unwrap();
        assert_eq!(cfg.grid(), (1..=10).map(|k| 10 * k).collect::<Vec<_>>());
        assert_eq!(cfg.window_indices(), 3..7);
        v["window"] = serde_json::json!(50);
        assert_eq!(parse(&v).unwrap().window_indices(), 3..10);
        v.as_object_mut().unwrap().remove("ignition");
        v["window"] = serde_json::json!(4);
        assert_eq!(parse(&v).unwrap().window_indices(), 6..10);
    }

    /// Posterior marginals of every state variable in the last of `slices`
    /// generating steps, by enumeration over the unrolled network.
    fn unrolled_posterior(dom: &FireDomain, dt: f64, trace: &EventTrace, slices: usize) -> Vec<Vec<f64>> {
        let spec = &dom.spec;
        let n = spec.len();
        let dbn = discretize(spec, &dom.obs, dt).unwrap();
        let mut parents = Vec::new();
        let mut cpts = Vec::new();
        for k in 0..slices {
            for v in 0..n {
                if k == 0 {
                    parents.push(vec![]);
                    cpts.push(Cpt::prior(&spec.variables[v].initial).unwrap());
                } else {
                    let prev = (k - 1) * n;
                    let mut ps = vec![prev + v];
                    ps.extend(spec.parents[v].iter().map(|&p| prev + p));
                    parents.push(ps);
                    cpts.push(dbn.transitions[v].clone());
                }
            }
        }
        let mut ev = Evidence::new();
        for k in 0..slices {
            for (s, sensor) in dom.obs.sensors.iter().enumerate() {
                ev.observe(parents.len(), trace.readings(k)[s] as usize);
                parents.push(sensor.parents.iter().map(|&p| k * n + p).collect());
                cpts.push(sensor.cpt.clone());
            }
        }
        let exact = exact_enumerate(&Network::new(parents, cpts).unwrap(), &ev).unwrap();
        (0..n).map(|v| exact[(slices - 1) * n + v].probs.clone()).collect()
    }

    #[test]
    fn exact_filter_matches_enumeration() {
        let dom = build_fire_domain(&Topology::line(1).unwrap(), &FireParams::default()).unwrap();
        let dt = 0.5;
        let ig = [Intervention { step: 1, var: dom.rooms[0].fire, state: 1 }];
        let trace = generate_trace(&dom.spec, &dom.obs, dt, 3, 11, &ig).unwrap();
        let filter = ExactFilter::new(&dom, dt).unwrap();
        let vars: Vec<usize> = (0..dom.spec.len()).collect();
        let got = filter.run(&dom, &trace, &vars, &[0, 1, 2]).unwrap();
        for k in 0..3 {
            let want = unrolled_posterior(&dom, dt, &trace, k + 1);
            for (g, w) in got[k].iter().zip(&want) {
                for (a, b) in g.iter().zip(w) {
                    assert!((a - b).abs() < 1e-9, "step {k}: {g:?} vs {w:?}");
                }
            }
        }
    }

    #[test]
    fn exact_filter_refuses_large_domains() {
        let dom = build_fire_domain(&Topology::line(6).unwrap(), &FireParams::default()).unwrap();
        assert!(matches!(ExactFilter::new(&dom, 0.01), Err(HarnessError::TooLarge(_))));
    }

    #[test]
    fn experiment_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = base_config();
        v["write_beliefs"] = serde_json::json!(true);
        let cfg = parse(&v).unwrap();
        let res = run_experiment(&cfg, dir.path()).unwrap();
        assert_eq!(res.seeds, vec![1, 3]);
        assert_eq!(res.steps, cfg.grid());
        let out = dir.path().join("out");
        for f in ["aggregate.csv", "summary.csv", "manifest.json", "seeds/seed_1.csv", "seeds/beliefs_A_3.csv"] {
            assert!(out.join(f).is_file(), "{f}");
        }
        let agg = std::fs::read_to_string(out.join("aggregate.csv")).unwrap();
        assert_eq!(agg.lines().next().unwrap(), "step,time,A_mean,A_ci95,F_mean,F_ci95");
        assert_eq!(agg.lines().count(), cfg.grid().len() + 1);
        let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["config_sha256"], cfg.sha256());
        assert_eq!(manifest["window_steps"], serde_json::json!([110, 200]));
        let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("out")]);
        let again = run_experiment(&cfg, dir.path()).unwrap();
        assert_eq!(again, res);
    }

    #[test]
    fn failed_experiment_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("blocker"), "").unwrap();
        let mut v = base_config();
        v["output"] = serde_json::json!("blocker/out");
        let err = run_experiment(&parse(&v).unwrap(), dir.path()).unwrap_err();
        assert!(matches!(err, HarnessError::Io { .. }) && !err.is_validation());
        let mut v = base_config();
        v["topology"] = serde_json::json!({"file": "missing.txt"});
        assert!(matches!(run_experiment(&parse(&v).unwrap(), dir.path()), Err(HarnessError::Io { .. })));
        let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("blocker")]);
    }
}
