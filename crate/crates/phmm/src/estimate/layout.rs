//! Bijection between constrained model parameters and an unconstrained
//! working vector.
//!
//! Probability rows (initial distribution, unmasked transition entries,
//! categorical label rows) use a multinomial-logit map with the first free
//! entry as reference, so a row with k free entries contributes k - 1
//! coordinates. Scale-like emission parameters use log coordinates with a
//! small floor; location-like ones are passed through unchanged. Fixed
//! scalars and structurally zero transitions contribute no coordinates, and
//! every member of a share group (including whole-state ties) maps onto one
//! coordinate.

use std::collections::BTreeMap;

use crate::distributions::Transform;
use crate::error::{Error, Result};
use crate::markov::{InitialDistribution, TransitionMatrix};
use crate::model::{ModelParams, ModelSpec, ScalarRef};

/// (state, component, canonical field index) of one scalar emission
/// parameter.
pub(crate) type SlotId = (usize, usize, usize);

#[derive(Debug, Clone)]
pub(crate) struct EmissionGroup {
    /// Sorted member slots; the first is the representative.
    pub slots: Vec<SlotId>,
    pub transform: Transform,
    pub fixed: Option<f64>,
    /// Coordinate index when free.
    pub coord: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Coord {
    Delta { state: usize },
    Gamma { row: usize, col: usize },
    Label { row: usize, z: usize },
    Emission { group: usize },
}

/// Coordinate layout for one model specification.
#[derive(Debug, Clone)]
pub struct WorkingLayout {
    spec: ModelSpec,
    n_states: usize,
    delta_free: bool,
    /// Free (unmasked) column lists per transition row.
    gamma_free: Vec<Vec<usize>>,
    label_free: bool,
    groups: Vec<EmissionGroup>,
    slot_group: BTreeMap<SlotId, usize>,
    coords: Vec<Coord>,
    names: Vec<String>,
}

fn resolve_slot(spec: &ModelSpec, r: &ScalarRef) -> Result<SlotId> {
    let state = spec.params.emissions.states.get(r.state).ok_or_else(|| {
        Error::ConstraintViolation(format!("{r}: state out of range"))
    })?;
    let comp = state.components.get(r.component).ok_or_else(|| {
        Error::ConstraintViolation(format!("{r}: component out of range"))
    })?;
    let field = comp
        .family
        .field_names()
        .iter()
        .position(|n| *n == r.field)
        .ok_or_else(|| Error::ConstraintViolation(format!("{r}: unknown field")))?;
    Ok((r.state, r.component, field))
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }
    fn find(&mut self, i: usize) -> usize {
        if self.0[i] != i {
            let root = self.find(self.0[i]);
            self.0[i] = root;
        }
        self.0[i]
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

impl WorkingLayout {
    pub fn new(spec: &ModelSpec) -> Result<WorkingLayout> {
        spec.validate()?;
        let n = spec.n_states();
        let emissions = &spec.params.emissions;

        // Enumerate every scalar slot in deterministic order.
        let mut slots: Vec<SlotId> = Vec::new();
        let mut slot_index: BTreeMap<SlotId, usize> = BTreeMap::new();
        let mut transforms: Vec<Transform> = Vec::new();
        for (s, state) in emissions.states.iter().enumerate() {
            for (c, comp) in state.components.iter().enumerate() {
                for (f, tr) in comp.family.field_transforms().into_iter().enumerate() {
                    slot_index.insert((s, c, f), slots.len());
                    slots.push((s, c, f));
                    transforms.push(tr);
                }
            }
        }

        let mut uf = UnionFind::new(slots.len());
        // Whole-state ties share every scalar of the tied states.
        for group in &spec.constraints.tied_states {
            let lead = group[0];
            let lead_state = &emissions.states[lead];
            for &other in &group[1..] {
                let other_state = &emissions.states[other];
                if other_state.components.len() != lead_state.components.len() {
                    return Err(Error::ConstraintViolation(format!(
                        "tied states {lead} and {other} have different component counts"
                    )));
                }
                for (c, (lc, oc)) in
                    lead_state.components.iter().zip(&other_state.components).enumerate()
                {
                    if lc.family.field_names() != oc.family.field_names() {
                        return Err(Error::ConstraintViolation(format!(
                            "tied states {lead} and {other} have different families at component {c}"
                        )));
                    }
                    for f in 0..lc.family.n_fields() {
                        uf.union(slot_index[&(lead, c, f)], slot_index[&(other, c, f)]);
                    }
                }
            }
        }
        // Explicit scalar shares.
        for group in &spec.constraints.shared {
            let first = resolve_slot(spec, &group[0])?;
            for r in &group[1..] {
                let other = resolve_slot(spec, r)?;
                uf.union(slot_index[&first], slot_index[&other]);
            }
        }

        // Collect groups keyed by root, in representative order.
        let mut root_members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..slots.len() {
            root_members.entry(uf.find(i)).or_default().push(i);
        }
        let mut groups: Vec<EmissionGroup> = Vec::new();
        let mut slot_group: BTreeMap<SlotId, usize> = BTreeMap::new();
        for (_, members) in root_members {
            let transform = transforms[members[0]];
            for &m in &members[1..] {
                if transforms[m] != transform {
                    return Err(Error::ConstraintViolation(format!(
                        "shared scalars {:?} and {:?} have incompatible transforms",
                        slots[members[0]], slots[m]
                    )));
                }
            }
            let gi = groups.len();
            let member_slots: Vec<SlotId> = members.iter().map(|&m| slots[m]).collect();
            for &slot in &member_slots {
                slot_group.insert(slot, gi);
            }
            groups.push(EmissionGroup {
                slots: member_slots,
                transform,
                fixed: None,
                coord: None,
            });
        }

        // Fixed scalars: the group must be a singleton, and each scalar may
        // be fixed at most once.
        for fx in &spec.constraints.fixed {
            let slot = resolve_slot(spec, &fx.scalar_ref())?;
            let gi = slot_group[&slot];
            if groups[gi].slots.len() > 1 {
                return Err(Error::ConstraintViolation(format!(
                    "{} is both fixed and shared",
                    fx.scalar_ref()
                )));
            }
            if groups[gi].fixed.is_some() {
                return Err(Error::ConstraintViolation(format!(
                    "{} is fixed more than once",
                    fx.scalar_ref()
                )));
            }
            groups[gi].fixed = Some(fx.value);
        }

        let delta_free = !spec.constraints.delta_fixed && n > 1;
        let gamma_free: Vec<Vec<usize>> =
            (0..n).map(|i| spec.params.gamma.unmasked_in_row(i)).collect();
        let label_free = !spec.constraints.label_model_fixed
            && matches!(
                spec.params.label_model,
                crate::distributions::LabelModel::Categorical { .. }
            )
            && n > 1;

        let mut coords = Vec::new();
        let mut names = Vec::new();
        if delta_free {
            for s in 1..n {
                coords.push(Coord::Delta { state: s });
                names.push(format!("delta[{s}]"));
            }
        }
        for (row, free) in gamma_free.iter().enumerate() {
            for &col in free.iter().skip(1) {
                coords.push(Coord::Gamma { row, col });
                names.push(format!("gamma[{row},{col}]"));
            }
        }
        if label_free {
            for row in 0..n {
                for z in 1..n {
                    coords.push(Coord::Label { row, z });
                    names.push(format!("labels[{row}][{z}]"));
                }
            }
        }
        for (gi, group) in groups.iter_mut().enumerate() {
            if group.fixed.is_some() {
                continue;
            }
            let (s, c, f) = group.slots[0];
            group.coord = Some(coords.len());
            coords.push(Coord::Emission { group: gi });
            let field = spec.params.emissions.states[s].components[c].family.field_names()[f].clone();
            names.push(format!("state{s}.comp{c}.{field}"));
        }

        Ok(WorkingLayout {
            spec: spec.clone(),
            n_states: n,
            delta_free,
            gamma_free,
            label_free,
            groups,
            slot_group,
            coords,
            names,
        })
    }

    /// Number of working coordinates.
    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Human-readable name of each coordinate.
    pub fn coord_names(&self) -> &[String] {
        &self.names
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Coordinate index of one scalar emission parameter, or `None` when the
    /// scalar is fixed.
    pub fn emission_coord(&self, r: &ScalarRef) -> Result<Option<usize>> {
        let slot = resolve_slot(&self.spec, r)?;
        Ok(self.groups[self.slot_group[&slot]].coord)
    }

    pub(crate) fn groups(&self) -> &[EmissionGroup] {
        &self.groups
    }

    pub(crate) fn coord_list(&self) -> &[Coord] {
        &self.coords
    }

    pub(crate) fn delta_is_free(&self) -> bool {
        self.delta_free
    }

    pub(crate) fn labels_are_free(&self) -> bool {
        self.label_free
    }

    pub(crate) fn gamma_free_cols(&self) -> &[Vec<usize>] {
        &self.gamma_free
    }

    fn check_structure(&self, params: &ModelParams) -> Result<()> {
        if params.n_states() != self.n_states {
            return Err(Error::ShapeMismatch(format!(
                "parameters have {} states, layout expects {}",
                params.n_states(),
                self.n_states
            )));
        }
        if params.gamma.mask() != self.spec.params.gamma.mask() {
            return Err(Error::ShapeMismatch(
                "transition mask differs from the layout's mask".into(),
            ));
        }
        let a = &params.emissions.states;
        let b = &self.spec.params.emissions.states;
        for (s, (sa, sb)) in a.iter().zip(b).enumerate() {
            if sa.components.len() != sb.components.len() {
                return Err(Error::ShapeMismatch(format!(
                    "state {s} component count differs from the layout"
                )));
            }
            for (c, (ca, cb)) in sa.components.iter().zip(&sb.components).enumerate() {
                if ca.family.field_names() != cb.family.field_names()
                    || ca.features != cb.features
                {
                    return Err(Error::ShapeMismatch(format!(
                        "state {s} component {c} structure differs from the layout"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Maps parameters to the unconstrained working vector. The parameters
    /// must have the layout's structure and satisfy its constraints.
    pub fn to_working(&self, params: &ModelParams) -> Result<Vec<f64>> {
        self.check_structure(params)?;
        ModelSpec { params: params.clone(), constraints: self.spec.constraints.clone() }
            .validate()?;
        let logit = |what: &str, p: f64, p_ref: f64| -> Result<f64> {
            if p <= 0.0 || p_ref <= 0.0 {
                return Err(Error::ConstraintViolation(format!(
                    "{what} has a zero probability on a free entry; use the mask or fix it"
                )));
            }
            Ok(p.ln() - p_ref.ln())
        };
        // Per-(state, component) field values, resolved once.
        let mut fields: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        for (s, state) in params.emissions.states.iter().enumerate() {
            for (c, comp) in state.components.iter().enumerate() {
                fields.insert((s, c), comp.family.field_values()?);
            }
        }
        let mut w = Vec::with_capacity(self.dim());
        for coord in &self.coords {
            let v = match *coord {
                Coord::Delta { state } => logit(
                    "initial distribution",
                    params.delta.probs()[state],
                    params.delta.probs()[0],
                )?,
                Coord::Gamma { row, col } => {
                    let free = &self.gamma_free[row];
                    logit(
                        &format!("transition row {row}"),
                        params.gamma.probs()[(row, col)],
                        params.gamma.probs()[(row, free[0])],
                    )?
                }
                Coord::Label { row, z } => {
                    let rows = match &params.label_model {
                        crate::distributions::LabelModel::Categorical { rows } => rows,
                        _ => unreachable!("label coords exist only for categorical models"),
                    };
                    logit(&format!("label row {row}"), rows[row][z], rows[row][0])?
                }
                Coord::Emission { group } => {
                    let (s, c, f) = self.groups[group].slots[0];
                    self.groups[group].transform.to_working(fields[&(s, c)][f])?
                }
            };
            w.push(v);
        }
        Ok(w)
    }

    /// Rebuilds parameters from a working vector. The result always satisfies
    /// the constraints: fixed scalars keep their pinned values, share-group
    /// members are bitwise equal, and masked transitions are exactly zero.
    pub fn to_params(&self, w: &[f64]) -> Result<ModelParams> {
        if w.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "working vector has length {}, layout needs {}",
                w.len(),
                self.dim()
            )));
        }
        let n = self.n_states;
        let mut params = self.spec.params.clone();
        let mut offset = 0;

        if self.delta_free {
            let coords = &w[offset..offset + n - 1];
            offset += n - 1;
            let probs = softmax_with_reference(coords);
            params.delta = InitialDistribution::new(probs)?;
        }

        let mut gamma_probs = ndarray::Array2::<f64>::zeros((n, n));
        for (row, free) in self.gamma_free.iter().enumerate() {
            if free.len() == 1 {
                gamma_probs[(row, free[0])] = 1.0;
                continue;
            }
            let k = free.len() - 1;
            let coords = &w[offset..offset + k];
            offset += k;
            let probs = softmax_with_reference(coords);
            for (slot, &col) in free.iter().enumerate() {
                gamma_probs[(row, col)] = probs[slot];
            }
        }
        params.gamma =
            TransitionMatrix::with_mask(gamma_probs, self.spec.params.gamma.mask().clone())?;

        if self.label_free {
            let mut rows = Vec::with_capacity(n);
            for _ in 0..n {
                let coords = &w[offset..offset + n - 1];
                offset += n - 1;
                rows.push(softmax_with_reference(coords));
            }
            params.label_model = crate::distributions::LabelModel::Categorical { rows };
        }

        // Emission scalars: every slot belongs to exactly one group.
        let mut fields: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        for (s, state) in params.emissions.states.iter().enumerate() {
            for (c, comp) in state.components.iter().enumerate() {
                fields.insert((s, c), vec![0.0; comp.family.n_fields()]);
            }
        }
        for group in &self.groups {
            let value = match (group.fixed, group.coord) {
                (Some(v), _) => v,
                (None, Some(ci)) => group.transform.to_natural(w[ci]),
                (None, None) => unreachable!("free group without a coordinate"),
            };
            for &(s, c, f) in &group.slots {
                fields.get_mut(&(s, c)).unwrap()[f] = value;
            }
        }
        for ((s, c), vals) in fields {
            let family = &params.emissions.states[s].components[c].family;
            params.emissions.states[s].components[c].family = family.with_field_values(&vals)?;
        }
        Ok(params)
    }
}

/// Stable softmax over `[0, coords...]`: the reference entry has logit zero.
fn softmax_with_reference(coords: &[f64]) -> Vec<f64> {
    let mut logits = Vec::with_capacity(coords.len() + 1);
    logits.push(0.0);
    logits.extend_from_slice(coords);
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - m).exp();
        sum += *l;
    }
    for l in logits.iter_mut() {
        *l /= sum;
    }
    logits
}
