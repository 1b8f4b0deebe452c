//! POMDPs, distributions, rewards and belief supports.
//!
//! Ids for states, actions and observations are dense indices into name
//! tables; subsets of states are bitsets so beliefs can be hashed and compared
//! cheaply.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use fixedbitset::FixedBitSet;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::rational::{self, Q};

pub type StateSet = FixedBitSet;

pub fn set_of(universe: usize, items: impl IntoIterator<Item = usize>) -> FixedBitSet {
    let mut s = FixedBitSet::with_capacity(universe);
    for i in items {
        s.insert(i);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DistrError {
    #[error("empty support")]
    Empty,
    #[error("outcome {0} listed twice")]
    Duplicate(usize),
    #[error("outcome {0} out of range")]
    OutOfRange(usize),
    #[error("probability {1} of outcome {0} is not in (0, 1]")]
    BadProbability(usize, Q),
    #[error("probabilities sum to {0}, not 1")]
    Sum(Q),
}

/// A finite probability distribution over dense ids, kept sorted by id.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Distr {
    entries: Vec<(usize, Q)>,
}

impl Distr {
    pub fn new(entries: impl IntoIterator<Item = (usize, Q)>) -> Result<Distr, DistrError> {
        let d = Distr::from_raw(entries.into_iter().collect());
        match d.problems(usize::MAX).into_iter().next() {
            Some(p) => Err(p),
            None => Ok(d),
        }
    }

    /// Builds a distribution without checking it; `problems` reports what is
    /// wrong with it. Used by parsers and validators that want to collect
    /// every defect instead of stopping at the first.
    pub fn from_raw(mut entries: Vec<(usize, Q)>) -> Distr {
        entries.sort_by_key(|e| e.0);
        Distr { entries }
    }

    pub fn point(x: usize) -> Distr {
        Distr { entries: vec![(x, Q::one())] }
    }

    /// Uniform over the given ids. Panics on an empty support.
    pub fn uniform(support: impl IntoIterator<Item = usize>) -> Distr {
        let mut ids: Vec<usize> = support.into_iter().collect();
        ids.sort_unstable();
        ids.dedup();
        assert!(!ids.is_empty(), "uniform distribution over an empty set");
        let p = rational::ratio(1, ids.len() as i64);
        Distr { entries: ids.into_iter().map(|i| (i, p.clone())).collect() }
    }

    pub fn entries(&self) -> &[(usize, Q)] {
        &self.entries
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, x: usize) -> bool {
        self.entries.binary_search_by_key(&x, |e| e.0).is_ok()
    }

    pub fn prob(&self, x: usize) -> Q {
        match self.entries.binary_search_by_key(&x, |e| e.0) {
            Ok(i) => self.entries[i].1.clone(),
            Err(_) => Q::zero(),
        }
    }

    pub fn uniformized(&self) -> Distr {
        Distr::uniform(self.support())
    }

    /// Every invariant violation, for outcomes drawn from `0..universe`.
    pub fn problems(&self, universe: usize) -> Vec<DistrError> {
        let mut out = Vec::new();
        if self.entries.is_empty() {
            out.push(DistrError::Empty);
            return out;
        }
        let mut sum = Q::zero();
        for (i, (x, p)) in self.entries.iter().enumerate() {
            if i > 0 && self.entries[i - 1].0 == *x {
                out.push(DistrError::Duplicate(*x));
            }
            if *x >= universe {
                out.push(DistrError::OutOfRange(*x));
            }
            if !p.is_positive() || *p > Q::one() {
                out.push(DistrError::BadProbability(*x, p.clone()));
            }
            sum += p;
        }
        if !sum.is_one() {
            out.push(DistrError::Sum(sum));
        }
        out
    }
}

/// The raw ingredients of a POMDP. Nothing here is checked; `validate`
/// lists what is wrong and `Pomdp::new` refuses invalid parts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PomdpParts {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub observations: Vec<String>,
    pub obs_of: Vec<usize>,
    pub initial: usize,
    /// Available actions per observation, ascending.
    pub avail: Vec<Vec<usize>>,
    /// Transition rows per state, ascending by action.
    pub trans: Vec<Vec<(usize, Distr)>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptySet { kind: &'static str },
    DuplicateName { kind: &'static str, name: String },
    MissingObservation { state: String },
    BadObservation { state: String, id: usize },
    BadInitial { id: usize },
    SharedInitialObservation { initial: String, others: Vec<String> },
    NoAvailableAction { observation: String },
    BadAvailableAction { observation: String, id: usize },
    MissingRow { state: String, action: String },
    UnavailableRow { state: String, action: String },
    DuplicateRow { state: String, action: String },
    BadRow { state: String, action: String, problem: DistrError },
    MissingReward { state: String, action: String },
    RewardOutOfRange { state: String, action: String, value: Q },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            EmptySet { kind } => write!(f, "no {kind} declared"),
            DuplicateName { kind, name } => write!(f, "duplicate {kind} `{name}`"),
            MissingObservation { state } => write!(f, "state `{state}` has no observation"),
            BadObservation { state, id } => {
                write!(f, "state `{state}` mapped to unknown observation #{id}")
            }
            BadInitial { id } => write!(f, "initial state #{id} does not exist"),
            SharedInitialObservation { initial, others } => write!(
                f,
                "initial state `{initial}` shares its observation with {}",
                others.join(", ")
            ),
            NoAvailableAction { observation } => {
                write!(f, "observation `{observation}` has no available action")
            }
            BadAvailableAction { observation, id } => {
                write!(f, "observation `{observation}` lists unknown action #{id}")
            }
            MissingRow { state, action } => write!(f, "missing row `{state} {action}`"),
            UnavailableRow { state, action } => {
                write!(f, "row `{state} {action}` is for an unavailable action")
            }
            DuplicateRow { state, action } => write!(f, "row `{state} {action}` given twice"),
            BadRow { state, action, problem } => write!(f, "row `{state} {action}`: {problem}"),
            MissingReward { state, action } => write!(f, "no reward for `{state} {action}`"),
            RewardOutOfRange { state, action, value } => {
                write!(f, "reward {value} of `{state} {action}` is outside [0, 1]")
            }
        }
    }
}

fn name_or_id(names: &[String], id: usize) -> String {
    names.get(id).cloned().unwrap_or_else(|| format!("#{id}"))
}

/// Lists every structural defect of `parts`; empty iff the parts form a
/// valid POMDP.
pub fn validate(parts: &PomdpParts) -> Vec<Violation> {
    let mut out = Vec::new();
    for (kind, names) in [
        ("state", &parts.states),
        ("action", &parts.actions),
        ("observation", &parts.observations),
    ] {
        if names.is_empty() {
            out.push(Violation::EmptySet { kind });
        }
        let mut seen = HashSet::new();
        for n in names {
            if !seen.insert(n) {
                out.push(Violation::DuplicateName { kind, name: n.clone() });
            }
        }
    }
    let ns = parts.states.len();
    let no = parts.observations.len();
    let na = parts.actions.len();
    for s in 0..ns {
        match parts.obs_of.get(s) {
            None => out.push(Violation::MissingObservation { state: parts.states[s].clone() }),
            Some(&o) if o >= no => out.push(Violation::BadObservation {
                state: parts.states[s].clone(),
                id: o,
            }),
            _ => {}
        }
    }
    if parts.initial >= ns {
        out.push(Violation::BadInitial { id: parts.initial });
    } else if let Some(&o0) = parts.obs_of.get(parts.initial) {
        let others: Vec<String> = (0..ns)
            .filter(|&s| s != parts.initial && parts.obs_of.get(s) == Some(&o0))
            .map(|s| parts.states[s].clone())
            .collect();
        if !others.is_empty() {
            out.push(Violation::SharedInitialObservation {
                initial: parts.states[parts.initial].clone(),
                others,
            });
        }
    }
    for o in 0..no {
        let av = parts.avail.get(o).map(|v| v.as_slice()).unwrap_or(&[]);
        if av.is_empty() {
            out.push(Violation::NoAvailableAction { observation: parts.observations[o].clone() });
        }
        for &a in av {
            if a >= na {
                out.push(Violation::BadAvailableAction {
                    observation: parts.observations[o].clone(),
                    id: a,
                });
            }
        }
    }
    for s in 0..ns {
        let rows = parts.trans.get(s).map(|v| v.as_slice()).unwrap_or(&[]);
        let av: &[usize] = parts
            .obs_of
            .get(s)
            .and_then(|&o| parts.avail.get(o))
            .map(|v| v.as_slice())
            .unwrap_or(&[]);
        let sname = parts.states[s].clone();
        let aname = |a: usize| name_or_id(&parts.actions, a);
        let mut seen = HashSet::new();
        for (a, d) in rows {
            if !seen.insert(*a) {
                out.push(Violation::DuplicateRow { state: sname.clone(), action: aname(*a) });
            }
            if !av.contains(a) {
                out.push(Violation::UnavailableRow { state: sname.clone(), action: aname(*a) });
            }
            for problem in d.problems(ns) {
                out.push(Violation::BadRow { state: sname.clone(), action: aname(*a), problem });
            }
        }
        for &a in av {
            if !rows.iter().any(|(b, _)| *b == a) {
                out.push(Violation::MissingRow { state: sname.clone(), action: aname(a) });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("invalid model: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("action `{action}` is not available under observation `{observation}`")]
    UnavailableAction { action: String, observation: String },
    #[error("belief must be a non-empty set of states sharing one observation")]
    BadBelief,
}

/// A validated POMDP `(S, Act, δ, O, γ, s₀)` with per-observation action
/// availability.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pomdp {
    parts: PomdpParts,
    members: Vec<Vec<usize>>,
    state_ids: HashMap<String, usize>,
    action_ids: HashMap<String, usize>,
    obs_ids: HashMap<String, usize>,
}

impl Pomdp {
    pub fn new(mut parts: PomdpParts) -> Result<Pomdp, ModelError> {
        for av in parts.avail.iter_mut() {
            av.sort_unstable();
        }
        for rows in parts.trans.iter_mut() {
            rows.sort_by_key(|r| r.0);
        }
        let violations = validate(&parts);
        if !violations.is_empty() {
            return Err(ModelError::Invalid(violations));
        }
        let mut members = vec![Vec::new(); parts.observations.len()];
        for (s, &o) in parts.obs_of.iter().enumerate() {
            members[o].push(s);
        }
        let index = |names: &[String]| {
            names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect::<HashMap<_, _>>()
        };
        Ok(Pomdp {
            state_ids: index(&parts.states),
            action_ids: index(&parts.actions),
            obs_ids: index(&parts.observations),
            members,
            parts,
        })
    }

    pub fn parts(&self) -> &PomdpParts {
        &self.parts
    }

    pub fn num_states(&self) -> usize {
        self.parts.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.parts.actions.len()
    }

    pub fn num_observations(&self) -> usize {
        self.parts.observations.len()
    }

    pub fn state_name(&self, s: usize) -> &str {
        &self.parts.states[s]
    }

    pub fn action_name(&self, a: usize) -> &str {
        &self.parts.actions[a]
    }

    pub fn obs_name(&self, o: usize) -> &str {
        &self.parts.observations[o]
    }

    pub fn state_id(&self, name: &str) -> Option<usize> {
        self.state_ids.get(name).copied()
    }

    pub fn action_id(&self, name: &str) -> Option<usize> {
        self.action_ids.get(name).copied()
    }

    pub fn obs_id(&self, name: &str) -> Option<usize> {
        self.obs_ids.get(name).copied()
    }

    pub fn initial(&self) -> usize {
        self.parts.initial
    }

    pub fn obs_of(&self, s: usize) -> usize {
        self.parts.obs_of[s]
    }

    /// γ⁻¹(o), ascending.
    pub fn members(&self, o: usize) -> &[usize] {
        &self.members[o]
    }

    pub fn avail(&self, o: usize) -> &[usize] {
        &self.parts.avail[o]
    }

    pub fn is_available(&self, o: usize, a: usize) -> bool {
        self.parts.avail[o].binary_search(&a).is_ok()
    }

    pub fn rows(&self, s: usize) -> &[(usize, Distr)] {
        &self.parts.trans[s]
    }

    pub fn delta(&self, s: usize, a: usize) -> Option<&Distr> {
        let rows = &self.parts.trans[s];
        rows.binary_search_by_key(&a, |r| r.0).ok().map(|i| &rows[i].1)
    }

    pub fn transition_count(&self) -> usize {
        self.parts.trans.iter().flat_map(|r| r.iter()).map(|(_, d)| d.len()).sum()
    }

    pub fn state_set(&self, items: impl IntoIterator<Item = usize>) -> StateSet {
        set_of(self.num_states(), items)
    }

    pub fn obs_set(&self, items: impl IntoIterator<Item = usize>) -> FixedBitSet {
        set_of(self.num_observations(), items)
    }

    pub fn class(&self, o: usize) -> StateSet {
        self.state_set(self.members(o).iter().copied())
    }

    /// Names of the states in `set`, in id order, e.g. `{X,X',Y}`.
    pub fn describe_states(&self, set: &StateSet) -> String {
        let names: Vec<&str> = set.ones().map(|s| self.state_name(s)).collect();
        format!("{{{}}}", names.join(","))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RewardRow {
    /// The same reward for every action (state-based rewards).
    Uniform(Q),
    /// Rewards per action, ascending by action id.
    PerAction(Vec<(usize, Q)>),
}

/// Rewards on state–action pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RewardFn {
    rows: Vec<RewardRow>,
}

impl RewardFn {
    pub fn new(rows: Vec<RewardRow>) -> RewardFn {
        let rows = rows
            .into_iter()
            .map(|r| match r {
                RewardRow::PerAction(mut v) => {
                    v.sort_by_key(|e| e.0);
                    RewardRow::PerAction(v)
                }
                u => u,
            })
            .collect();
        RewardFn { rows }
    }

    /// State rewards replicated over every action.
    pub fn from_states(values: Vec<Q>) -> RewardFn {
        RewardFn { rows: values.into_iter().map(RewardRow::Uniform).collect() }
    }

    pub fn from_pairs(num_states: usize, pairs: impl IntoIterator<Item = (usize, usize, Q)>) -> RewardFn {
        let mut rows = vec![Vec::new(); num_states];
        for (s, a, v) in pairs {
            rows[s].push((a, v));
        }
        RewardFn::new(rows.into_iter().map(RewardRow::PerAction).collect())
    }

    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, s: usize) -> &RewardRow {
        &self.rows[s]
    }

    pub fn get(&self, s: usize, a: usize) -> Option<&Q> {
        match self.rows.get(s)? {
            RewardRow::Uniform(v) => Some(v),
            RewardRow::PerAction(v) => v.binary_search_by_key(&a, |e| e.0).ok().map(|i| &v[i].1),
        }
    }
}

/// Checks that `r` is defined on every available pair of `g` with values in
/// [0, 1].
pub fn validate_rewards(g: &Pomdp, r: &RewardFn) -> Vec<Violation> {
    let mut out = Vec::new();
    for s in 0..g.num_states() {
        for &a in g.avail(g.obs_of(s)) {
            let state = g.state_name(s).to_string();
            let action = g.action_name(a).to_string();
            match r.get(s, a) {
                None => out.push(Violation::MissingReward { state, action }),
                Some(v) if !rational::in_unit_interval(v) => {
                    out.push(Violation::RewardOutOfRange { state, action, value: v.clone() })
                }
                _ => {}
            }
        }
    }
    out
}

/// A belief support together with the observation its states share.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Belief {
    support: StateSet,
    observation: usize,
}

impl Belief {
    pub fn new(g: &Pomdp, support: StateSet) -> Result<Belief, ModelError> {
        let first = support.ones().next().ok_or(ModelError::BadBelief)?;
        let observation = g.obs_of(first);
        if support.ones().any(|s| g.obs_of(s) != observation) {
            return Err(ModelError::BadBelief);
        }
        Ok(Belief { support, observation })
    }

    pub fn initial(g: &Pomdp) -> Belief {
        Belief { support: g.state_set([g.initial()]), observation: g.obs_of(g.initial()) }
    }

    pub fn support(&self) -> &StateSet {
        &self.support
    }

    pub fn observation(&self) -> usize {
        self.observation
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BeliefStep {
    Next(Belief),
    /// No state consistent with the observation.
    Empty,
}

/// ⋃_{s∈Y} supp δ(s,a). States without a row for `a` contribute nothing.
pub fn post(g: &Pomdp, support: &StateSet, a: usize) -> StateSet {
    let mut out = FixedBitSet::with_capacity(g.num_states());
    for s in support.ones() {
        if let Some(d) = g.delta(s, a) {
            for t in d.support() {
                out.insert(t);
            }
        }
    }
    out
}

/// Y' = (⋃_{s∈Y} supp δ(s,a)) ∩ γ⁻¹(o) as a set, without the availability
/// check of `belief_update`.
pub fn update_set(g: &Pomdp, support: &StateSet, a: usize, o: usize) -> StateSet {
    let mut next = post(g, support, a);
    next.intersect_with(&g.class(o));
    next
}

pub fn belief_update(g: &Pomdp, b: &Belief, a: usize, o: usize) -> Result<BeliefStep, ModelError> {
    if !g.is_available(b.observation, a) {
        return Err(ModelError::UnavailableAction {
            action: g.action_name(a).to_string(),
            observation: g.obs_name(b.observation).to_string(),
        });
    }
    let next = update_set(g, &b.support, a, o);
    if next.is_clear() {
        Ok(BeliefStep::Empty)
    } else {
        Ok(BeliefStep::Next(Belief { support: next, observation: o }))
    }
}

/// Result of the belief-observation check. On failure the witness is a
/// shortest action/observation sequence from `{s₀}` to a belief that is a
/// strict subset of its observation class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BeliefObsCheck {
    pub holds: bool,
    pub beliefs_explored: usize,
    pub witness: Option<BeliefWitness>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BeliefWitness {
    pub prefix: Vec<(usize, usize)>,
    pub belief: StateSet,
    pub observation: usize,
}

/// Breadth-first exploration of the reachable belief graph from `{s₀}`.
pub fn is_belief_observation(g: &Pomdp) -> BeliefObsCheck {
    let start = g.state_set([g.initial()]);
    let mut parent: HashMap<StateSet, Option<(StateSet, usize, usize)>> = HashMap::new();
    let mut queue = VecDeque::new();
    let witness_of = |parent: &HashMap<StateSet, Option<(StateSet, usize, usize)>>,
                      b: &StateSet,
                      o: usize| {
        let mut prefix = Vec::new();
        let mut cur = b.clone();
        while let Some(Some((p, a, o))) = parent.get(&cur) {
            prefix.push((*a, *o));
            cur = p.clone();
        }
        prefix.reverse();
        BeliefWitness { prefix, belief: b.clone(), observation: o }
    };
    let o0 = g.obs_of(g.initial());
    parent.insert(start.clone(), None);
    if start != g.class(o0) {
        return BeliefObsCheck {
            holds: false,
            beliefs_explored: 1,
            witness: Some(witness_of(&parent, &start, o0)),
        };
    }
    queue.push_back((start, o0));
    while let Some((b, o)) = queue.pop_front() {
        for &a in g.avail(o) {
            let p = post(g, &b, a);
            let mut by_obs: Vec<usize> = p.ones().map(|s| g.obs_of(s)).collect();
            by_obs.sort_unstable();
            by_obs.dedup();
            for o2 in by_obs {
                let mut next = p.clone();
                next.intersect_with(&g.class(o2));
                if parent.contains_key(&next) {
                    continue;
                }
                parent.insert(next.clone(), Some((b.clone(), a, o2)));
                if next != g.class(o2) {
                    return BeliefObsCheck {
                        holds: false,
                        beliefs_explored: parent.len(),
                        witness: Some(witness_of(&parent, &next, o2)),
                    };
                }
                queue.push_back((next, o2));
            }
        }
    }
    BeliefObsCheck { holds: true, beliefs_explored: parent.len(), witness: None }
}
