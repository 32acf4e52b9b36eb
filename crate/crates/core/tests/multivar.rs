use adbn::adbn::{AdbnConfig, AdbnModel, AdbnNetwork};
use adbn::harness::{build_engine, nll_metric, Layout, ResolvedEngine};
use adbn::linalg::IntensityMatrix;
use adbn::model::fire::{build_fire_domain, FireParams};
use adbn::model::{Cpt, CtbnSpec, ObservationModel, SensorSpec, Topology, VariableSpec};
use adbn::sim::{generate_trace, run_monitor, Intervention};

fn q(a: f64, b: f64) -> IntensityMatrix {
    IntensityMatrix::from_off_diagonal(&[vec![0.0, a], vec![b, 0.0]]).unwrap()
}

fn sensor(host: usize) -> SensorSpec {
    SensorSpec {
        name: format!("S{host}"),
        states: vec!["off".into(), "on".into()],
        parents: vec![host],
        cpt: Cpt::new(2, vec![2], vec![0.85, 0.15, 0.25, 0.75]).unwrap(),
    }
}

/// Two unrelated sensed variables.
fn independent_pair() -> (CtbnSpec, ObservationModel) {
    let spec = CtbnSpec::new(
        vec![
            VariableSpec::new("X", &["off", "on"], &[0.6, 0.4]),
            VariableSpec::new("Y", &["off", "on"], &[0.2, 0.8]),
        ],
        vec![vec![], vec![]],
        vec![vec![q(0.3, 0.9)], vec![q(1.2, 0.4)]],
    )
    .unwrap();
    let obs = ObservationModel {
        sensors: vec![sensor(0), sensor(1)],
    };
    (spec, obs)
}

#[test]
fn grouping_unrelated_variables_changes_nothing() {
    let (spec, obs) = independent_pair();
    let cfg = AdbnConfig {
        history: Some(3),
        ..AdbnConfig::default()
    };
    let mut split = AdbnNetwork::new(AdbnModel::per_variable(spec.clone(), obs.clone()).unwrap(), cfg.clone());
    let mut joint = AdbnNetwork::new(AdbnModel::new(spec, obs, vec![vec![0, 1]]).unwrap(), cfg);
    for k in 1..40 {
        let t = 0.3 * k as f64;
        let (a, b) = (k % 2, (k / 3) % 2);
        split.update(0, t, &[(0, a)]).unwrap();
        split.update(1, t, &[(1, b)]).unwrap();
        joint.update(0, t, &[(0, a), (1, b)]).unwrap();
        for v in 0..2 {
            let (i, p) = split.report(v, 1).unwrap();
            let (j, r) = joint.report(v, 1).unwrap();
            assert_eq!(i, j);
            for (x, y) in p.iter().zip(r) {
                assert!((x - y).abs() < 1e-12, "step {k} var {v}: {p:?} vs {r:?}");
            }
        }
    }
    assert_eq!(joint.remote_message_count(), 0);
}

#[test]
fn per_room_supernodes_track_a_fire() {
    let dom = build_fire_domain(&Topology::line(3).unwrap(), &FireParams::default()).unwrap();
    let dt = 0.01;
    let horizon = 1500;
    let ignition = [Intervention {
        step: 300,
        var: dom.rooms[0].fire,
        state: 1,
    }];
    let trace = generate_trace(&dom.spec, &dom.obs, dt, horizon, 5, &ignition).unwrap();
    let fires = dom.fire_vars();
    let priors: Vec<Vec<f64>> = fires.iter().map(|&v| dom.spec.variables[v].initial.clone()).collect();
    let labels = vec!["no".to_string(), "yes".to_string()];
    let grid: Vec<usize> = (800..horizon).step_by(10).collect();
    let eng = ResolvedEngine::Adbn {
        cfg: AdbnConfig::default(),
        p: 0.04,
        layout: Layout::PerRoom,
    };
    let (mut engine, sched) = build_engine(&dom, &eng, dt, horizon, 5).unwrap();
    let run = run_monitor(&mut engine, &trace, &sched, &fires, &labels).unwrap();
    assert!(run.updates > 0 && run.messages > 0);
    for e in run.log.entries() {
        assert!((e.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let tracked = nll_metric(&run.log, &trace, &fires, Some(&priors), &grid).unwrap();
    let empty = adbn::sim::BeliefLog::new(labels);
    let blind = nll_metric(&empty, &trace, &fires, Some(&priors), &grid).unwrap();
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    assert!(
        mean(&tracked.nll) < 0.5 * mean(&blind.nll),
        "{} vs {}",
        mean(&tracked.nll),
        mean(&blind.nll)
    );

    let (mut again, _) = build_engine(&dom, &eng, dt, horizon, 5).unwrap();
    let rerun = run_monitor(&mut again, &trace, &sched, &fires, run.log.labels()).unwrap();
    assert_eq!(rerun.log, run.log);
    assert_eq!(rerun.messages, run.messages);
}
