//! Bundled model parameters and constraint declarations.

use serde::{Deserialize, Serialize};

use crate::distributions::{EmissionProduct, LabelModel};
use crate::error::{Error, Result};
use crate::markov::{InitialDistribution, TransitionMatrix};

/// Full parameter set of a labelled hidden Markov model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub delta: InitialDistribution,
    pub gamma: TransitionMatrix,
    pub emissions: EmissionProduct,
    pub label_model: LabelModel,
}

impl ModelParams {
    pub fn n_states(&self) -> usize {
        self.delta.n_states()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_states();
        if self.gamma.n_states() != n {
            return Err(Error::ShapeMismatch(format!(
                "transition matrix has {} states, initial distribution {n}",
                self.gamma.n_states()
            )));
        }
        if self.emissions.n_states() != n {
            return Err(Error::ShapeMismatch(format!(
                "emission product has {} states, initial distribution {n}",
                self.emissions.n_states()
            )));
        }
        self.emissions.validate()?;
        self.label_model.validate(n)?;
        Ok(())
    }
}

/// Points at one scalar emission parameter: a canonical field of one
/// component of one state. Field names are family-specific, for example
/// "mean", "sd", "log_mean", "chol[1,0]".
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScalarRef {
    pub state: usize,
    pub component: usize,
    pub field: String,
}

impl std::fmt::Display for ScalarRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "state {} component {} field {}", self.state, self.component, self.field)
    }
}

/// A scalar emission parameter pinned to a known value during estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedScalar {
    pub state: usize,
    pub component: usize,
    pub field: String,
    pub value: f64,
}

impl FixedScalar {
    pub fn scalar_ref(&self) -> ScalarRef {
        ScalarRef { state: self.state, component: self.component, field: self.field.clone() }
    }
}

/// Declarative estimation constraints.
///
/// - `delta_fixed`: the initial distribution is not estimated.
/// - `fixed`: scalar emission parameters pinned to given values.
/// - `shared`: groups of scalar emission parameters estimated as one value.
/// - `tied_states`: groups of states whose whole emission models are shared.
/// - `label_model_fixed`: categorical label rows are not estimated.
///
/// A scalar may not be both fixed and shared (tying counts as sharing every
/// scalar of the tied states). Structural zeros of the transition matrix are
/// carried by its mask and never become free parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConstraintSet {
    #[serde(default)]
    pub delta_fixed: bool,
    #[serde(default)]
    pub fixed: Vec<FixedScalar>,
    #[serde(default)]
    pub shared: Vec<Vec<ScalarRef>>,
    #[serde(default)]
    pub tied_states: Vec<Vec<usize>>,
    #[serde(default)]
    pub label_model_fixed: bool,
}

/// Model structure plus constraints: everything estimation needs besides data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub params: ModelParams,
    pub constraints: ConstraintSet,
}

impl ModelSpec {
    pub fn unconstrained(params: ModelParams) -> ModelSpec {
        ModelSpec { params, constraints: ConstraintSet::default() }
    }

    pub fn n_states(&self) -> usize {
        self.params.n_states()
    }

    /// Resolves a scalar reference to its current value, checking that the
    /// state, component, and field exist.
    pub fn scalar_value(&self, r: &ScalarRef) -> Result<f64> {
        let n = self.n_states();
        let state = self.params.emissions.states.get(r.state).ok_or_else(|| {
            Error::ConstraintViolation(format!("{r}: state out of range for {n} states"))
        })?;
        let comp = state.components.get(r.component).ok_or_else(|| {
            Error::ConstraintViolation(format!(
                "{r}: component out of range ({} components)",
                state.components.len()
            ))
        })?;
        let names = comp.family.field_names();
        let idx = names.iter().position(|nm| *nm == r.field).ok_or_else(|| {
            Error::ConstraintViolation(format!(
                "{r}: unknown field (family fields: {})",
                names.join(", ")
            ))
        })?;
        Ok(comp.family.field_values()?[idx])
    }

    /// Validates parameters and checks that they satisfy every constraint.
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let n = self.n_states();
        for fx in &self.constraints.fixed {
            let current = self.scalar_value(&fx.scalar_ref())?;
            if current != fx.value {
                return Err(Error::ConstraintViolation(format!(
                    "{}: value {current} differs from fixed value {}",
                    fx.scalar_ref(),
                    fx.value
                )));
            }
        }
        for group in &self.constraints.shared {
            if group.len() < 2 {
                return Err(Error::ConstraintViolation(
                    "shared group needs at least two members".into(),
                ));
            }
            let first = self.scalar_value(&group[0])?;
            for r in &group[1..] {
                let v = self.scalar_value(r)?;
                if v != first {
                    return Err(Error::ConstraintViolation(format!(
                        "shared group member {r} has value {v}, expected {first}"
                    )));
                }
            }
        }
        for group in &self.constraints.tied_states {
            if group.len() < 2 {
                return Err(Error::ConstraintViolation(
                    "tied-states group needs at least two members".into(),
                ));
            }
            for &s in group {
                if s >= n {
                    return Err(Error::ConstraintViolation(format!(
                        "tied state {s} out of range for {n} states"
                    )));
                }
            }
            let lead = &self.params.emissions.states[group[0]];
            for &s in &group[1..] {
                if self.params.emissions.states[s] != *lead {
                    return Err(Error::ConstraintViolation(format!(
                        "tied states {} and {s} have different emission parameters",
                        group[0]
                    )));
                }
            }
        }
        Ok(())
    }
}
