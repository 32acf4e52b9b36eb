//! Ground truth generation, update schedules and the monitoring loop.

use crate::adbn::{AdbnConfig, AdbnError, AdbnModel, AdbnNetwork, Supernode};
use crate::ff::{FfError, FfFilter};
use crate::model::{discretize, CtbnSpec, ModelError, ObservationModel};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{self, Read, Write};
use std::path::Path;
use std::sync::{mpsc, Arc};
use thiserror::Error;

pub const TRACE_MAGIC: &[u8; 8] = b"ADBNTRC1";
/// Generating steps with a larger rate × dt than this are only warned about.
pub const WARN_RATE_DT: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("step too coarse: largest exit rate × dt = {0} exceeds 1")]
    StepTooCoarse(f64),
    #[error("invalid setting: {0}")]
    Param(String),
    #[error("malformed trace: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Adbn(#[from] AdbnError),
    #[error(transparent)]
    Ff(#[from] FfError),
}

impl From<io::Error> for SimError {
    fn from(e: io::Error) -> Self {
        SimError::Io(e.to_string())
    }
}

/// A state forced at one generating step, overriding the sampled value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Intervention {
    pub step: usize,
    pub var: usize,
    pub state: usize,
}

/// Sampled states and sensor readings at every generating step.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTrace {
    dt: f64,
    seed: u64,
    n_state: usize,
    n_sensors: usize,
    states: Vec<u8>,
    readings: Vec<u8>,
}

fn sample(row: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Samples a trace of `horizon` steps. Step 0 draws from the initial
/// distributions; each later step advances every variable through the
/// discretized transition given the previous step's values. Sensors are
/// read from the current states at every step.
pub fn generate_trace(
    spec: &CtbnSpec,
    obs: &ObservationModel,
    dt: f64,
    horizon: usize,
    seed: u64,
    interventions: &[Intervention],
) -> Result<EventTrace, SimError> {
    let coarse = spec.max_rate() * dt;
    if coarse > 1.0 {
        return Err(SimError::StepTooCoarse(coarse));
    }
    if coarse > WARN_RATE_DT {
        log::warn!("generating step is coarse: largest exit rate × dt = {coarse}");
    }
    obs.validate(spec)?;
    let n = spec.len();
    let m = obs.sensors.len();
    if (0..n).any(|v| spec.card(v) > 256) || obs.sensors.iter().any(|s| s.card() > 256) {
        return Err(SimError::Param("traces store at most 256 states per variable".into()));
    }
    for iv in interventions {
        if iv.var >= n || iv.state >= spec.card(iv.var) {
            return Err(SimError::Param(format!("intervention on {}={} is out of range", iv.var, iv.state)));
        }
    }
    let dbn = discretize(spec, obs, dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(horizon * n);
    let mut readings = Vec::with_capacity(horizon * m);
    let mut cur: Vec<usize> = spec.variables.iter().map(|v| sample(&v.initial, &mut rng)).collect();
    let mut vals = Vec::new();
    for step in 0..horizon {
        if step > 0 {
            let prev = cur.clone();
            for (v, x) in cur.iter_mut().enumerate() {
                vals.clear();
                vals.push(prev[v]);
                vals.extend(spec.parents[v].iter().map(|&p| prev[p]));
                *x = sample(dbn.transitions[v].row_for(&vals), &mut rng);
            }
        }
        for iv in interventions.iter().filter(|iv| iv.step == step) {
            cur[iv.var] = iv.state;
        }
        states.extend(cur.iter().map(|&x| x as u8));
        for s in &obs.sensors {
            vals.clear();
            vals.extend(s.parents.iter().map(|&p| cur[p]));
            readings.push(sample(s.cpt.row_for(&vals), &mut rng) as u8);
        }
    }
    Ok(EventTrace {
        dt,
        seed,
        n_state: n,
        n_sensors: m,
        states,
        readings,
    })
}

impl EventTrace {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn horizon(&self) -> usize {
        self.states.len().checked_div(self.n_state).unwrap_or(0)
    }

    pub fn n_state(&self) -> usize {
        self.n_state
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    pub fn state(&self, step: usize) -> &[u8] {
        &self.states[step * self.n_state..(step + 1) * self.n_state]
    }

    pub fn readings(&self, step: usize) -> &[u8] {
        &self.readings[step * self.n_sensors..(step + 1) * self.n_sensors]
    }

    /// Binary layout, little-endian: magic, `f64` dt, `u64` seed, `u64`
    /// horizon, `u32` state count, `u32` sensor count, then per step a `u64`
    /// step index, one byte per state and one byte per sensor.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(TRACE_MAGIC)?;
        w.write_all(&self.dt.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.horizon() as u64).to_le_bytes())?;
        w.write_all(&(self.n_state as u32).to_le_bytes())?;
        w.write_all(&(self.n_sensors as u32).to_le_bytes())?;
        for step in 0..self.horizon() {
            w.write_all(&(step as u64).to_le_bytes())?;
            w.write_all(self.state(step))?;
            w.write_all(self.readings(step))?;
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, SimError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != TRACE_MAGIC {
            return Err(SimError::Format("bad magic".into()));
        }
        let mut b8 = [0u8; 8];
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b8)?;
        let dt = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let horizon = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b4)?;
        let n_state = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let n_sensors = u32::from_le_bytes(b4) as usize;
        if !(dt.is_finite() && dt > 0.0) || n_state == 0 {
            return Err(SimError::Format("invalid header".into()));
        }
        let mut states = Vec::with_capacity(horizon.min(1 << 20) * n_state);
        let mut readings = Vec::with_capacity(horizon.min(1 << 20) * n_sensors);
        let mut rec = vec![0u8; n_state + n_sensors];
        for step in 0..horizon {
            r.read_exact(&mut b8)?;
            if u64::from_le_bytes(b8) != step as u64 {
                return Err(SimError::Format(format!("record {step} out of order")));
            }
            r.read_exact(&mut rec)?;
            states.extend_from_slice(&rec[..n_state]);
            readings.extend_from_slice(&rec[n_state..]);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(SimError::Format("trailing bytes".into()));
        }
        Ok(Self {
            dt,
            seed,
            n_state,
            n_sensors,
            states,
            readings,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        let f = std::fs::File::create(path)?;
        self.write_to(io::BufWriter::new(f))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(io::BufReader::new(f))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateEvent {
    pub step: usize,
    pub supernode: usize,
}

/// Update events in execution order; steps are nondecreasing and each
/// supernode appears at most once per step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Schedule {
    pub events: Vec<UpdateEvent>,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count_for(&self, supernode: usize) -> usize {
        self.events.iter().filter(|e| e.supernode == supernode).count()
    }
}

/// Each supernode updates at each step in `1..horizon` with probability
/// `p`. Supernodes drawn at the same step run in a shuffled order.
pub fn schedule_async(supernodes: usize, p: f64, horizon: usize, seed: u64) -> Result<Schedule, SimError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(SimError::Param(format!("update probability must be in (0, 1], got {p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut events = Vec::new();
    let mut drawn = Vec::with_capacity(supernodes);
    for step in 1..horizon {
        drawn.clear();
        drawn.extend((0..supernodes).filter(|_| rng.random::<f64>() < p));
        drawn.shuffle(&mut rng);
        events.extend(drawn.iter().map(|&supernode| UpdateEvent { step, supernode }));
    }
    Ok(Schedule { events })
}

/// Every supernode updates every `period` steps, in id order.
pub fn schedule_sync(supernodes: usize, period: usize, horizon: usize) -> Result<Schedule, SimError> {
    if period == 0 {
        return Err(SimError::Param("period must be at least one step".into()));
    }
    let events = (period..horizon)
        .step_by(period)
        .flat_map(|step| (0..supernodes).map(move |supernode| UpdateEvent { step, supernode }))
        .collect();
    Ok(Schedule { events })
}

/// ADBN settings giving the same expected message count as a factored
/// frontier run with the given period and iteration count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Parity {
    pub history: usize,
    pub p: f64,
}

pub fn parity_configure(ff_period: usize, ff_iters: usize) -> Result<Parity, SimError> {
    if ff_period == 0 || ff_iters == 0 {
        return Err(SimError::Param("period and iterations must be positive".into()));
    }
    Ok(Parity {
        history: ff_iters,
        p: 1.0 / ff_period as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub time: f64,
    pub supernode: usize,
    pub var: usize,
    pub probs: Vec<f64>,
    /// Messages computed by the whole engine up to and including this update.
    pub message_count: u64,
}

/// Reported beliefs over variables sharing one set of state labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BeliefLog {
    labels: Vec<String>,
    entries: Vec<LogEntry>,
}

impl BeliefLog {
    pub fn new(labels: Vec<String>) -> Self {
        Self {
            labels,
            entries: Vec::new(),
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, e: LogEntry) {
        debug_assert_eq!(e.probs.len(), self.labels.len());
        self.entries.push(e);
    }

    /// Columns: time, supernode, one per state label, message_count.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "time,supernode")?;
        for l in &self.labels {
            write!(w, ",{l}")?;
        }
        writeln!(w, ",message_count")?;
        for e in &self.entries {
            write!(w, "{},{}", e.time, e.supernode)?;
            for p in &e.probs {
                write!(w, ",{p}")?;
            }
            writeln!(w, ",{}", e.message_count)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Engine {
    Adbn(AdbnNetwork),
    Ff { filter: FfFilter, period: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorRun {
    pub log: BeliefLog,
    pub messages: u64,
    pub updates: usize,
    /// Wall time of each update in nanoseconds, in execution order.
    pub update_nanos: Vec<u64>,
}

/// Runs `f` and returns its wall time in nanoseconds.
#[cfg(not(target_arch = "wasm32"))]
pub(crate) fn timed<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let t0 = std::time::Instant::now();
    let out = f();
    (out, t0.elapsed().as_nanos() as u64)
}

/// No clock on this target; durations read as zero.
#[cfg(target_arch = "wasm32")]
pub(crate) fn timed<T>(f: impl FnOnce() -> T) -> (T, u64) {
    (f(), 0)
}

fn hosted_readings(model: &AdbnModel, s: usize, trace: &EventTrace, step: usize) -> Vec<(usize, usize)> {
    let r = trace.readings(step);
    model.hosted(s).iter().map(|&k| (k, r[k] as usize)).collect()
}

/// Replays `trace` through `engine`. An ADBN engine follows `schedule`; a
/// factored frontier engine ignores it and updates every `period` steps.
/// Beliefs of the `monitored` variables are logged after each update that
/// touches them.
pub fn run_monitor(
    engine: &mut Engine,
    trace: &EventTrace,
    schedule: &Schedule,
    monitored: &[usize],
    labels: &[String],
) -> Result<MonitorRun, SimError> {
    let mut log = BeliefLog::new(labels.to_vec());
    let mut nanos = Vec::new();
    match engine {
        Engine::Adbn(net) => {
            if schedule.events.last().is_some_and(|e| e.step >= trace.horizon()) {
                return Err(SimError::Param("schedule extends past the trace".into()));
            }
            let mut watched = vec![Vec::new(); net.len()];
            for &v in monitored {
                watched[net.model().owner_of(v)].push(v);
            }
            for e in &schedule.events {
                let readings = hosted_readings(net.model(), e.supernode, trace, e.step);
                let (done, ns) = timed(|| net.update(e.supernode, trace.time(e.step), &readings));
                done?;
                nanos.push(ns);
                let node = net.supernode(e.supernode);
                for &v in &watched[e.supernode] {
                    log.push(LogEntry {
                        step: e.step,
                        time: trace.time(e.step),
                        supernode: e.supernode,
                        var: v,
                        probs: node.report_default(v)?.1.to_vec(),
                        message_count: net.message_count(),
                    });
                }
            }
            Ok(MonitorRun {
                log,
                messages: net.message_count(),
                updates: schedule.len(),
                update_nanos: nanos,
            })
        }
        Engine::Ff { filter, period } => {
            let run = filter.run(trace, *period, monitored, labels)?;
            Ok(MonitorRun {
                log: run.log,
                messages: run.messages,
                updates: run.updates,
                update_nanos: run.update_nanos,
            })
        }
    }
}

enum Input {
    Comm(crate::adbn::Communication),
    Update(usize),
    Stop,
}

/// Runs every supernode on its own thread. Updates are dispatched in
/// schedule order and communications travel over channels, so the arrival
/// order relative to later updates is not deterministic.
pub fn run_concurrent(
    model: AdbnModel,
    cfg: AdbnConfig,
    trace: &EventTrace,
    schedule: &Schedule,
    monitored: &[usize],
    labels: &[String],
) -> Result<MonitorRun, SimError> {
    let model = Arc::new(model);
    let n = model.n_supernodes();
    let (txs, rxs): (Vec<_>, Vec<_>) = (0..n).map(|_| mpsc::channel::<Input>()).unzip();
    let results = std::thread::scope(|scope| {
        let handles: Vec<_> = rxs
            .into_iter()
            .enumerate()
            .map(|(s, rx)| {
                let txs = txs.clone();
                let mut node = Supernode::new(Arc::clone(&model), s, cfg.clone());
                let model = Arc::clone(&model);
                let watched: Vec<usize> = monitored.iter().copied().filter(|&v| model.owner_of(v) == s).collect();
                scope.spawn(move || -> Result<Vec<(usize, usize, LogEntry)>, SimError> {
                    let mut inbox = Vec::new();
                    let mut out = Vec::new();
                    for input in rx {
                        match input {
                            Input::Comm(c) => inbox.push(c),
                            Input::Stop => break,
                            Input::Update(step) => {
                                let readings = hosted_readings(&model, s, trace, step);
                                let r = node.update(trace.time(step), &readings, inbox.drain(..))?;
                                for c in r.communications {
                                    // a finished peer only drops what it would never read
                                    let _ = txs[c.recipient].send(Input::Comm(c));
                                }
                                for &v in &watched {
                                    out.push((
                                        step,
                                        r.messages,
                                        LogEntry {
                                            step,
                                            time: trace.time(step),
                                            supernode: s,
                                            var: v,
                                            probs: node.report_default(v)?.1.to_vec(),
                                            message_count: 0,
                                        },
                                    ));
                                }
                                if watched.is_empty() {
                                    out.push((
                                        step,
                                        r.messages,
                                        LogEntry {
                                            step,
                                            time: 0.0,
                                            supernode: s,
                                            var: usize::MAX,
                                            probs: Vec::new(),
                                            message_count: 0,
                                        },
                                    ));
                                }
                            }
                        }
                    }
                    Ok(out)
                })
            })
            .collect();
        for e in &schedule.events {
            let _ = txs[e.supernode].send(Input::Update(e.step));
        }
        for tx in &txs {
            let _ = tx.send(Input::Stop);
        }
        handles
            .into_iter()
            .map(|h| h.join().expect("supernode thread panicked"))
            .collect::<Result<Vec<_>, SimError>>()
    })?;
    let mut all: Vec<(usize, usize, LogEntry)> = results.into_iter().flatten().collect();
    all.sort_by_key(|a| (a.0, a.2.supernode, a.2.var));
    let mut log = BeliefLog::new(labels.to_vec());
    let mut total = 0u64;
    let mut last_update = None;
    for (step, msgs, mut e) in all {
        let key = (step, e.supernode);
        if last_update != Some(key) {
            total += msgs as u64;
            last_update = Some(key);
        }
        if e.var != usize::MAX {
            e.message_count = total;
            log.push(e);
        }
    }
    Ok(MonitorRun {
        log,
        messages: total,
        updates: schedule.len(),
        update_nanos: Vec::new(),
    })
}
