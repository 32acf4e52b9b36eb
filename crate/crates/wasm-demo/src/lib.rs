//! Browser bindings: a two-state transition curve, the three-variable
//! propagation example and a single-seed fire monitoring comparison.
//!
//! Each binding wraps a plain Rust function so the logic can be tested
//! natively.

use adbn::adbn::{AdbnConfig, AdbnModel, AdbnNetwork, Approach, SubnodeId};
use adbn::harness::{
    run_seed, EngineSpec, ExperimentConfig, IgnitionSpec, Layout, ParitySpec, SeedList, SeriesSpec, TopologySel,
};
use adbn::linalg::{matrix_exp, IntensityMatrix};
use adbn::model::{Cpt, CtbnSpec, ObservationModel, SensorSpec, VariableSpec};
use std::path::{Path, PathBuf};
use wasm_bindgen::prelude::*;

/// P(state 1 at t | state 0 at 0) at `points` evenly spaced times in [0, t_max].
pub fn transition_curve_values(rate_up: f64, rate_down: f64, t_max: f64, points: usize) -> Result<Vec<f64>, String> {
    if points < 2 || !(t_max > 0.0) {
        return Err("need at least two points and a positive time span".into());
    }
    let q = IntensityMatrix::from_off_diagonal(&[vec![0.0, rate_up], vec![rate_down, 0.0]]).map_err(|e| e.to_string())?;
    let mut out = vec![0.0];
    for k in 1..points {
        let t = t_max * k as f64 / (points - 1) as f64;
        out.push(matrix_exp(&q, t).map_err(|e| e.to_string())?.get(0, 1));
    }
    Ok(out)
}

/// Belief that A is on at time 6, read after the updates at 6, 7 and 8 of
/// the chain A -> B -> C with C observed at 2 (off) and 5.
pub fn propagation_values(c5_on: bool) -> Vec<f64> {
    let q = |a: f64, b: f64| IntensityMatrix::from_off_diagonal(&[vec![0.0, a], vec![b, 0.0]]).unwrap();
    let var = |name: &str| VariableSpec::new(name, &["off", "on"], &[0.7, 0.3]);
    let follow = || vec![q(0.2, 1.5), q(1.3, 0.1)];
    let spec = CtbnSpec::new(
        vec![var("A"), var("B"), var("C")],
        vec![vec![], vec![0], vec![1]],
        vec![vec![q(0.4, 0.6)], follow(), follow()],
    )
    .expect("fixed model is valid");
    let obs = ObservationModel {
        sensors: vec![SensorSpec {
            name: "SC".into(),
            states: vec!["off".into(), "on".into()],
            parents: vec![2],
            cpt: Cpt::new(2, vec![2], vec![1.0, 0.0, 0.0, 1.0]).expect("fixed sensor is valid"),
        }],
    };
    let cfg = AdbnConfig {
        history: Some(8),
        approach: Approach::First,
        start_time: -1.0,
        ..AdbnConfig::default()
    };
    let mut net = AdbnNetwork::new(AdbnModel::per_variable(spec, obs).expect("fixed model is valid"), cfg);
    let events = [(0, 0.0), (1, 1.0), (2, 2.0), (0, 3.0), (1, 4.0), (2, 5.0), (0, 6.0), (1, 7.0), (0, 8.0)];
    let mut out = Vec::new();
    for (s, t) in events {
        let readings = match (s, t) {
            (2, 2.0) => vec![(0, 0)],
            (2, _) => vec![(0, usize::from(c5_on))],
            _ => vec![],
        };
        net.update(s, t, &readings).expect("scripted updates are valid");
        if let Some(b) = net.supernode(0).belief(SubnodeId::new(0, 6.0)) {
            out.push(b[1]);
        }
    }
    out
}

/// NLL series of ADBN and FF on the 12-room building for one seed, as JSON
/// `{"steps": [...], "series": [{"label", "nll", "messages"}, ...]}`.
pub fn fire_comparison_json(seed: u64, history: usize, p: f64, horizon: usize, ignition_room: usize) -> Result<String, String> {
    let cfg = ExperimentConfig {
        name: "demo".into(),
        topology: TopologySel::Rooms12,
        params: None,
        dt: 0.01,
        horizon,
        ignition: Some(IgnitionSpec {
            step: horizon / 5,
            room: ignition_room,
        }),
        eval_every: 10,
        window: 200,
        seeds: SeedList::List(vec![seed]),
        output: PathBuf::from("unused"),
        parity: Some(ParitySpec {
            ff_period: 25,
            ff_iters: 2,
        }),
        series: vec![
            SeriesSpec {
                label: "ADBN".into(),
                engine: EngineSpec::Adbn {
                    history: Some(history),
                    p: Some(p),
                    reporting_offset: 1,
                    approach: Approach::First,
                    layout: Layout::PerVariable,
                    local_sweeps: AdbnConfig::default().local_sweeps,
                },
            },
            SeriesSpec {
                label: "FF".into(),
                engine: EngineSpec::Ff {
                    period: None,
                    lbp_iters: None,
                },
            },
        ],
        write_beliefs: false,
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let dom = cfg.domain(Path::new(".")).map_err(|e| e.to_string())?;
    let run = run_seed(&cfg, &dom, seed).map_err(|e| e.to_string())?;
    let series: Vec<_> = cfg
        .series
        .iter()
        .zip(&run.series)
        .map(|(spec, s)| serde_json::json!({"label": spec.label, "nll": s.metric.nll, "messages": s.messages}))
        .collect();
    let steps = &run.series[0].metric.steps;
    Ok(serde_json::json!({"steps": steps, "series": series}).to_string())
}

#[wasm_bindgen]
pub fn transition_curve(rate_up: f64, rate_down: f64, t_max: f64, points: usize) -> Result<Vec<f64>, JsError> {
    transition_curve_values(rate_up, rate_down, t_max, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn propagation_example(c5_on: bool) -> Vec<f64> {
    propagation_values(c5_on)
}

#[wasm_bindgen]
pub fn fire_comparison(seed: u64, history: usize, p: f64, horizon: usize, ignition_room: usize) -> Result<String, JsError> {
    fire_comparison_json(seed, history, p, horizon, ignition_room).map_err(|e| JsError::new(&e))
}
