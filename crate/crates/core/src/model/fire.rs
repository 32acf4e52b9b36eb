//! Fire-monitoring domain: per-room fire, temperature and sensor-failure
//! variables, a shared outside temperature, and one noisy sensor per room.

use super::{
    check_distribution, config_count, config_values, Cpt, CtbnSpec, ModelError,
    ObservationModel, SensorSpec, Topology, VariableSpec,
};
use crate::linalg::IntensityMatrix;
use serde::{Deserialize, Serialize};

const DEFAULT_PARAMS: &str = include_str!("../../data/fire_params.json");

pub const FIRE_STATES: [&str; 2] = ["no", "yes"];
pub const TEMP_STATES: [&str; 3] = ["normal", "hot", "very_hot"];
pub const BROKEN_STATES: [&str; 2] = ["ok", "broken"];
pub const OUTSIDE_STATES: [&str; 2] = ["mild", "hot"];

/// Off-diagonal temperature rates for each (fire, outside) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureRates {
    pub no_fire_mild: Vec<Vec<f64>>,
    pub no_fire_hot: Vec<Vec<f64>>,
    pub fire_mild: Vec<Vec<f64>>,
    pub fire_hot: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDistributions {
    pub fire: Vec<f64>,
    pub temp: Vec<f64>,
    pub broken: Vec<f64>,
    pub outside: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FireParams {
    pub spontaneous_ignition: f64,
    /// Added to the ignition rate per burning neighbour.
    pub spread_ignition: f64,
    pub extinguish: f64,
    pub temperature: TemperatureRates,
    pub broken_fail: f64,
    pub broken_repair: f64,
    /// Switching rate of the outside temperature in either direction.
    pub outside_rate: f64,
    /// Probability that a working sensor reports the true temperature.
    pub sensor_accuracy: f64,
    pub initial: InitialDistributions,
}

impl Default for FireParams {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_PARAMS).expect("shipped parameters parse")
    }
}

impl FireParams {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let p: Self = serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    /// Ignition rate of a room with `burning` burning neighbours.
    pub fn ignition_rate(&self, burning: usize) -> f64 {
        self.spontaneous_ignition + self.spread_ignition * burning as f64
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let scalars = [
            ("spontaneous_ignition", self.spontaneous_ignition),
            ("spread_ignition", self.spread_ignition),
            ("extinguish", self.extinguish),
            ("broken_fail", self.broken_fail),
            ("broken_repair", self.broken_repair),
            ("outside_rate", self.outside_rate),
        ];
        for (name, v) in scalars {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ModelError::Param(format!("{name} must be a nonnegative rate, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.sensor_accuracy) {
            return Err(ModelError::Param(format!(
                "sensor_accuracy must lie in [0, 1], got {}",
                self.sensor_accuracy
            )));
        }
        let init = &self.initial;
        for (name, p, card) in [
            ("fire", &init.fire, 2),
            ("temp", &init.temp, 3),
            ("broken", &init.broken, 2),
            ("outside", &init.outside, 2),
        ] {
            check_distribution(p, card).map_err(|e| ModelError::Param(format!("initial.{name}: {e}")))?;
        }
        Ok(())
    }

    fn temperature_cim(&self, fire: usize, outside: usize) -> Result<IntensityMatrix, ModelError> {
        let t = &self.temperature;
        let rates = match (fire, outside) {
            (0, 0) => &t.no_fire_mild,
            (0, _) => &t.no_fire_hot,
            (_, 0) => &t.fire_mild,
            _ => &t.fire_hot,
        };
        if rates.len() != 3 || rates.iter().any(|r| r.len() != 3) {
            return Err(ModelError::Param("temperature rates must be 3x3".into()));
        }
        IntensityMatrix::from_off_diagonal(rates).map_err(|e| ModelError::Param(e.to_string()))
    }

    fn sensor_row(&self, temp: usize, broken: usize) -> Vec<f64> {
        if broken == 1 {
            return vec![1.0 / 3.0; 3];
        }
        let miss = 1.0 - self.sensor_accuracy;
        let mut row = vec![0.0; 3];
        row[temp] = self.sensor_accuracy;
        match temp {
            0 => row[1] = miss,
            2 => row[1] = miss,
            _ => {
                row[0] = miss / 2.0;
                row[2] = miss / 2.0;
            }
        }
        row
    }
}

/// Variable indices of one room.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoomVars {
    pub fire: usize,
    pub temp: usize,
    pub broken: usize,
    /// Index into the observation model.
    pub sensor: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FireDomain {
    pub spec: CtbnSpec,
    pub obs: ObservationModel,
    pub rooms: Vec<RoomVars>,
    pub outside: usize,
    pub topology: Topology,
}

impl FireDomain {
    /// Index of the room whose fire variable is `var`.
    pub fn room_of_fire(&self, var: usize) -> Option<usize> {
        self.rooms.iter().position(|r| r.fire == var)
    }

    pub fn fire_vars(&self) -> Vec<usize> {
        self.rooms.iter().map(|r| r.fire).collect()
    }

    /// One group per room holding its fire, temperature and broken
    /// variables, followed by a group for the outside temperature.
    pub fn room_groups(&self) -> Vec<Vec<usize>> {
        self.rooms
            .iter()
            .map(|r| vec![r.fire, r.temp, r.broken])
            .chain(std::iter::once(vec![self.outside]))
            .collect()
    }
}

pub fn build_fire_domain(topology: &Topology, params: &FireParams) -> Result<FireDomain, ModelError> {
    params.validate()?;
    let n = topology.len();
    if n == 0 {
        return Err(ModelError::Topology("no rooms".into()));
    }
    let rooms: Vec<RoomVars> = (0..n)
        .map(|i| RoomVars {
            fire: 3 * i,
            temp: 3 * i + 1,
            broken: 3 * i + 2,
            sensor: i,
        })
        .collect();
    let outside = 3 * n;
    let init = &params.initial;

    let mut variables = Vec::with_capacity(3 * n + 1);
    let mut parents = Vec::with_capacity(3 * n + 1);
    let mut cims = Vec::with_capacity(3 * n + 1);
    for (i, room) in rooms.iter().enumerate() {
        let name = &topology.names[i];

        let fire_parents: Vec<usize> = topology.neighbors(i).iter().map(|&m| rooms[m].fire).collect();
        let cards = vec![2; fire_parents.len()];
        let fire_cims = (0..config_count(&cards))
            .map(|c| {
                let burning = config_values(&cards, c).iter().sum();
                IntensityMatrix::from_off_diagonal(&[
                    vec![0.0, params.ignition_rate(burning)],
                    vec![params.extinguish, 0.0],
                ])
            })
            .collect::<Result<Vec<_>, _>>()?;
        variables.push(VariableSpec::new(&format!("Fire_{name}"), &FIRE_STATES, &init.fire));
        parents.push(fire_parents);
        cims.push(fire_cims);

        let mut temp_cims = Vec::with_capacity(4);
        for fire in 0..2 {
            for out in 0..2 {
                temp_cims.push(params.temperature_cim(fire, out)?);
            }
        }
        variables.push(VariableSpec::new(&format!("Temp_{name}"), &TEMP_STATES, &init.temp));
        parents.push(vec![room.fire, outside]);
        cims.push(temp_cims);

        variables.push(VariableSpec::new(&format!("Broken_{name}"), &BROKEN_STATES, &init.broken));
        parents.push(Vec::new());
        cims.push(vec![IntensityMatrix::from_off_diagonal(&[
            vec![0.0, params.broken_fail],
            vec![params.broken_repair, 0.0],
        ])?]);
    }
    variables.push(VariableSpec::new("OutsideTemp", &OUTSIDE_STATES, &init.outside));
    parents.push(Vec::new());
    cims.push(vec![IntensityMatrix::from_off_diagonal(&[
        vec![0.0, params.outside_rate],
        vec![params.outside_rate, 0.0],
    ])?]);
    let spec = CtbnSpec::new(variables, parents, cims)?;

    let mut table = Vec::with_capacity(18);
    for temp in 0..3 {
        for broken in 0..2 {
            table.extend(params.sensor_row(temp, broken));
        }
    }
    let cpt = Cpt::new(3, vec![3, 2], table)?;
    let sensors = rooms
        .iter()
        .enumerate()
        .map(|(i, room)| SensorSpec {
            name: format!("Sensor_{}", topology.names[i]),
            states: TEMP_STATES.iter().map(|s| s.to_string()).collect(),
            parents: vec![room.temp, room.broken],
            cpt: cpt.clone(),
        })
        .collect();
    let obs = ObservationModel { sensors };
    obs.validate(&spec)?;

    Ok(FireDomain {
        spec,
        obs,
        rooms,
        outside,
        topology: topology.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_room_line_structure() {
        let d = build_fire_domain(&Topology::line(2).unwrap(), &FireParams::default()).unwrap();
        assert_eq!(d.spec.len(), 7);
        assert_eq!(d.obs.sensors.len(), 2);
        let names: Vec<&str> = d.spec.variables.iter().map(|v| v.name.as_str()).collect();
        assert_eq!(
            names,
            ["Fire_0", "Temp_0", "Broken_0", "Fire_1", "Temp_1", "Broken_1", "OutsideTemp"]
        );
        assert_eq!(d.spec.parents[d.rooms[0].fire], vec![d.rooms[1].fire]);
        assert_eq!(d.spec.parents[d.rooms[1].temp], vec![d.rooms[1].fire, d.outside]);
        assert!(d.spec.parents[d.rooms[0].broken].is_empty());
        assert!(d.spec.parents[d.outside].is_empty());
        assert_eq!(d.obs.sensors[1].parents, vec![d.rooms[1].temp, d.rooms[1].broken]);
        assert_eq!(d.spec.children(d.outside), vec![d.rooms[0].temp, d.rooms[1].temp]);
    }

    #[test]
    fn ignition_monotone_in_burning_neighbours() {
        let p = FireParams::default();
        let d = build_fire_domain(&Topology::rooms12(), &p).unwrap();
        let fire = d.rooms[0].fire;
        let rate = |vals: &[usize]| d.spec.cim(fire, vals).rate(0, 1);
        assert_eq!(d.spec.parents[fire].len(), 3);
        let r0 = rate(&[0, 0, 0]);
        let r1 = rate(&[0, 1, 0]);
        let r2 = rate(&[1, 0, 1]);
        assert!(r0 <= r1 && r1 <= r2);
        assert!(r0 < 0.01);
        assert!(r1 > 100.0 * r0);
    }

    #[test]
    fn rooms58_has_58_fire_variables() {
        let d = build_fire_domain(&Topology::rooms58(), &FireParams::default()).unwrap();
        let fires = d.spec.variables.iter().filter(|v| v.name.starts_with("Fire_")).count();
        assert_eq!(fires, 58);
    }

    #[test]
    fn negative_spread_is_rejected() {
        let p = FireParams {
            spread_ignition: -0.1,
            ..FireParams::default()
        };
        assert!(matches!(
            build_fire_domain(&Topology::line(3).unwrap(), &p),
            Err(ModelError::Param(_))
        ));
    }

    #[test]
    fn sensor_rows_are_distributions() {
        let p = FireParams::default();
        for t in 0..3 {
            for b in 0..2 {
                let row = p.sensor_row(t, b);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            assert_eq!(p.sensor_row(t, 0)[t], p.sensor_accuracy);
        }
    }

    #[test]
    fn params_reject_unknown_keys() {
        let mut v: serde_json::Value = serde_json::from_str(DEFAULT_PARAMS).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(FireParams::from_json(&v.to_string()).is_err());
    }
}
