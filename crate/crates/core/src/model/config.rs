//! JSON domain documents.

use super::{
    config_count, config_values, Cpt, CtbnSpec, ModelError, ObservationModel, SensorSpec,
    VariableSpec,
};
use crate::linalg::{validate_intensity, SquareMatrix};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VariableDoc {
    name: String,
    states: Vec<String>,
    initial: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservationDoc {
    name: String,
    states: Vec<String>,
    parents: Vec<String>,
    cpt: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainDoc {
    variables: Vec<VariableDoc>,
    #[serde(default)]
    parents: BTreeMap<String, Vec<String>>,
    cims: BTreeMap<String, BTreeMap<String, Vec<f64>>>,
    #[serde(default)]
    observations: Vec<ObservationDoc>,
}

/// Key of a parent configuration: the parents' state labels joined by commas.
fn config_key(spec_vars: &[VariableSpec], parents: &[usize], config: usize) -> String {
    let cards: Vec<usize> = parents.iter().map(|&p| spec_vars[p].card()).collect();
    config_values(&cards, config)
        .iter()
        .zip(parents)
        .map(|(&v, &p)| spec_vars[p].states[v].as_str())
        .collect::<Vec<_>>()
        .join(",")
}

fn resolve(names: &BTreeMap<String, usize>, name: &str, ctx: &str) -> Result<usize, ModelError> {
    names
        .get(name)
        .copied()
        .ok_or_else(|| ModelError::Schema(format!("{ctx}: unknown variable {name}")))
}

/// Parses and validates a domain document.
pub fn load_domain(text: &str) -> Result<(CtbnSpec, ObservationModel), ModelError> {
    let doc: DomainDoc = serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
    let variables: Vec<VariableSpec> = doc
        .variables
        .into_iter()
        .map(|v| VariableSpec {
            name: v.name,
            states: v.states,
            initial: v.initial,
        })
        .collect();
    let mut names = BTreeMap::new();
    for (i, v) in variables.iter().enumerate() {
        if names.insert(v.name.clone(), i).is_some() {
            return Err(ModelError::Schema(format!("duplicate variable {}", v.name)));
        }
        v.validate()?;
    }
    for key in doc.parents.keys().chain(doc.cims.keys()) {
        resolve(&names, key, "parents/cims")?;
    }

    let mut parents = Vec::with_capacity(variables.len());
    for v in &variables {
        let list = doc.parents.get(&v.name).map(Vec::as_slice).unwrap_or(&[]);
        parents.push(
            list.iter()
                .map(|p| resolve(&names, p, &v.name))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }

    let mut cims = Vec::with_capacity(variables.len());
    for (i, v) in variables.iter().enumerate() {
        let table = doc
            .cims
            .get(&v.name)
            .ok_or_else(|| ModelError::Schema(format!("no CIMs for {}", v.name)))?;
        let cards: Vec<usize> = parents[i].iter().map(|&p| variables[p].card()).collect();
        let count = config_count(&cards);
        if table.len() != count {
            return Err(ModelError::Schema(format!(
                "{} has {} CIMs, expected {count}",
                v.name,
                table.len()
            )));
        }
        let mut list = Vec::with_capacity(count);
        for c in 0..count {
            let key = config_key(&variables, &parents[i], c);
            let flat = table
                .get(&key)
                .ok_or_else(|| ModelError::Schema(format!("{}: missing CIM for \"{key}\"", v.name)))?;
            let n = v.card();
            if flat.len() != n * n {
                return Err(ModelError::Validation(format!(
                    "{}: CIM \"{key}\" has {} entries, expected {}",
                    v.name,
                    flat.len(),
                    n * n
                )));
            }
            let rows: Vec<Vec<f64>> = flat.chunks(n).map(<[f64]>::to_vec).collect();
            let m = SquareMatrix::from_rows(&rows)?;
            let q = validate_intensity(&m)
                .map_err(|e| ModelError::Validation(format!("{}: CIM \"{key}\": {e}", v.name)))?;
            list.push(q);
        }
        cims.push(list);
    }
    let spec = CtbnSpec::new(variables, parents, cims)?;

    let mut sensors = Vec::with_capacity(doc.observations.len());
    for o in doc.observations {
        let sensor_parents = o
            .parents
            .iter()
            .map(|p| resolve(&names, p, &o.name))
            .collect::<Result<Vec<_>, _>>()?;
        if sensor_parents.is_empty() {
            return Err(ModelError::Schema(format!("sensor {} has no parents", o.name)));
        }
        let cards: Vec<usize> = sensor_parents.iter().map(|&p| spec.card(p)).collect();
        let count = config_count(&cards);
        if o.cpt.len() != count {
            return Err(ModelError::Schema(format!(
                "sensor {} has {} rows, expected {count}",
                o.name,
                o.cpt.len()
            )));
        }
        let mut table = Vec::with_capacity(count * o.states.len());
        for c in 0..count {
            let key = config_key(&spec.variables, &sensor_parents, c);
            let row = o
                .cpt
                .get(&key)
                .ok_or_else(|| ModelError::Schema(format!("sensor {}: missing row \"{key}\"", o.name)))?;
            if row.len() != o.states.len() {
                return Err(ModelError::Validation(format!(
                    "sensor {}: row \"{key}\" has {} entries",
                    o.name,
                    row.len()
                )));
            }
            table.extend_from_slice(row);
        }
        let cpt = Cpt::new(o.states.len(), cards, table)
            .map_err(|e| ModelError::Validation(format!("sensor {}: {e}", o.name)))?;
        sensors.push(SensorSpec {
            name: o.name,
            states: o.states,
            parents: sensor_parents,
            cpt,
        });
    }
    let obs = ObservationModel { sensors };
    obs.validate(&spec)?;
    Ok((spec, obs))
}

/// Serializes a domain to the document format read by [`load_domain`].
pub fn save_domain(spec: &CtbnSpec, obs: &ObservationModel) -> String {
    let vars = &spec.variables;
    let name = |i: usize| vars[i].name.clone();
    let doc = DomainDoc {
        variables: vars
            .iter()
            .map(|v| VariableDoc {
                name: v.name.clone(),
                states: v.states.clone(),
                initial: v.initial.clone(),
            })
            .collect(),
        parents: (0..spec.len())
            .filter(|&i| !spec.parents[i].is_empty())
            .map(|i| (name(i), spec.parents[i].iter().map(|&p| name(p)).collect()))
            .collect(),
        cims: (0..spec.len())
            .map(|i| {
                let table = spec.cims[i]
                    .iter()
                    .enumerate()
                    .map(|(c, q)| (config_key(vars, &spec.parents[i], c), q.matrix().as_slice().to_vec()))
                    .collect();
                (name(i), table)
            })
            .collect(),
        observations: obs
            .sensors
            .iter()
            .map(|s| ObservationDoc {
                name: s.name.clone(),
                states: s.states.clone(),
                parents: s.parents.iter().map(|&p| name(p)).collect(),
                cpt: (0..s.cpt.n_configs())
                    .map(|c| (config_key(vars, &s.parents, c), s.cpt.row(c).to_vec()))
                    .collect(),
            })
            .collect(),
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("domain serializes");
    out.push('\n');
    out
}
