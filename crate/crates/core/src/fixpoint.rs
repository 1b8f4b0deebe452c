//! Observation-level operators and the almost-sure safety and reachability
//! fixpoints for belief-observation POMDPs.
//!
//! The functions take any `Pomdp` but are only meaningful when every
//! reachable belief is a full observation class; callers are expected to
//! have checked that (`model::is_belief_observation`).

use fixedbitset::FixedBitSet;
use thiserror::Error;

use crate::model::{Distr, ModelError, Pomdp, PomdpParts, RewardFn, RewardRow, StateSet};
use crate::strategy::MemorylessStrategy;

pub type ObsSet = FixedBitSet;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FixpointError {
    #[error("state set is not contained in the states of the given observations")]
    OutsideObservations,
    #[error("the initial observation is not almost-surely safe; no safe strategy exists")]
    NoSafeStrategy,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Successor structure, optionally with a set of states made absorbing.
#[derive(Clone, Copy)]
struct View<'a> {
    g: &'a Pomdp,
    absorbing: Option<&'a StateSet>,
}

impl<'a> View<'a> {
    fn all_succ(&self, s: usize, a: usize, mut pred: impl FnMut(usize) -> bool) -> bool {
        if self.absorbing.is_some_and(|t| t.contains(s)) {
            return pred(s);
        }
        match self.g.delta(s, a) {
            Some(d) => d.support().all(pred),
            None => true,
        }
    }

    fn allow(&self, o: usize, os: &ObsSet) -> Vec<usize> {
        let g = self.g;
        g.avail(o)
            .iter()
            .copied()
            .filter(|&a| g.members(o).iter().all(|&s| self.all_succ(s, a, |t| os.contains(g.obs_of(t)))))
            .collect()
    }

    /// (s, a) pairs per target state t with t ∈ supp δ(s,a).
    fn predecessors(&self) -> Vec<Vec<(usize, usize)>> {
        let g = self.g;
        let mut preds = vec![Vec::new(); g.num_states()];
        for s in 0..g.num_states() {
            for &a in g.avail(g.obs_of(s)) {
                if self.absorbing.is_some_and(|t| t.contains(s)) {
                    preds[s].push((s, a));
                } else if let Some(d) = g.delta(s, a) {
                    for t in d.support() {
                        preds[t].push((s, a));
                    }
                }
            }
        }
        preds
    }
}

/// Allow(o, O): available actions that keep every state of o inside the
/// observations O.
pub fn allow(g: &Pomdp, o: usize, os: &ObsSet) -> Vec<usize> {
    View { g, absorbing: None }.allow(o, os)
}

/// Pre(O): observations of O with at least one allowed action.
pub fn pre(g: &Pomdp, os: &ObsSet) -> ObsSet {
    let view = View { g, absorbing: None };
    let mut out = FixedBitSet::with_capacity(g.num_observations());
    for o in os.ones() {
        if !view.allow(o, os).is_empty() {
            out.insert(o);
        }
    }
    out
}

/// Apre(Y, X): states of γ⁻¹(Y) with an allowed action reaching X with
/// positive probability.
pub fn apre(g: &Pomdp, y: &ObsSet, x: &StateSet) -> Result<StateSet, FixpointError> {
    if x.ones().any(|s| !y.contains(g.obs_of(s))) {
        return Err(FixpointError::OutsideObservations);
    }
    let view = View { g, absorbing: None };
    let mut out = FixedBitSet::with_capacity(g.num_states());
    for o in y.ones() {
        let allowed = view.allow(o, y);
        for &s in g.members(o) {
            let hit = allowed.iter().any(|&a| g.delta(s, a).is_some_and(|d| d.support().any(|t| x.contains(t))));
            if hit {
                out.insert(s);
            }
        }
    }
    Ok(out)
}

/// ObsCover(U): observations all of whose states lie in U.
pub fn obscover(g: &Pomdp, u: &StateSet) -> ObsSet {
    let mut out = FixedBitSet::with_capacity(g.num_observations());
    for o in 0..g.num_observations() {
        if g.members(o).iter().all(|&s| u.contains(s)) {
            out.insert(o);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SafeResult {
    pub winning: ObsSet,
    /// Uniform over Allow(o, Y*) on Y*; undefined elsewhere.
    pub strategy: MemorylessStrategy,
    /// Y₀ = ObsCover(F), Y₁, …, ending with the fixpoint.
    pub iterates: Vec<ObsSet>,
}

/// Observations from which staying inside F forever is possible with
/// probability 1: Y₀ = ObsCover(F), Y_{i+1} = Pre(Y_i) until stable.
pub fn almost_safe(g: &Pomdp, f: &StateSet) -> SafeResult {
    let mut y = obscover(g, f);
    let mut iterates = vec![y.clone()];
    loop {
        let next = pre(g, &y);
        if next == y {
            break;
        }
        iterates.push(next.clone());
        y = next;
    }
    let mut strategy = MemorylessStrategy::undefined(g.num_observations());
    for o in y.ones() {
        strategy.choice[o] = Some(Distr::uniform(allow(g, o, &y)));
    }
    SafeResult { winning: y, strategy, iterates }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReachResult {
    pub winning: ObsSet,
    /// Uniform over Allow(o, Z*) computed with the target absorbing.
    pub strategy: MemorylessStrategy,
    /// Z₀ = all observations, Z₁, …, ending with the fixpoint.
    pub outer: Vec<ObsSet>,
    /// Final X of each outer round.
    pub inner_final: Vec<StateSet>,
    /// Every X_j of every outer round, when tracing.
    pub inner: Option<Vec<Vec<StateSet>>>,
    pub inner_iterations: usize,
}

/// Observations from which T is reached with probability 1:
/// Z* = νZ. ObsCover(μX. (T ∩ γ⁻¹(Z)) ∪ Apre(Z, X)), evaluated with T made
/// absorbing (on a view, the input is not modified).
pub fn almost_reach(g: &Pomdp, t: &StateSet, trace: bool) -> ReachResult {
    let view = View { g, absorbing: Some(t) };
    let preds = view.predecessors();
    let mut z = FixedBitSet::with_capacity(g.num_observations());
    z.insert_range(..);
    let mut outer = vec![z.clone()];
    let mut inner_final = Vec::new();
    let mut inner = trace.then(Vec::new);
    let mut inner_iterations = 0;
    loop {
        let allowed: Vec<Vec<usize>> =
            (0..g.num_observations()).map(|o| if z.contains(o) { view.allow(o, &z) } else { Vec::new() }).collect();
        let mut x = FixedBitSet::with_capacity(g.num_states());
        let mut frontier = Vec::new();
        for s in t.ones() {
            if z.contains(g.obs_of(s)) {
                x.insert(s);
                frontier.push(s);
            }
        }
        let mut layers = vec![x.clone()];
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &xs in &frontier {
                for &(s, a) in &preds[xs] {
                    let o = g.obs_of(s);
                    if !x.contains(s) && z.contains(o) && allowed[o].binary_search(&a).is_ok() {
                        x.insert(s);
                        next.push(s);
                    }
                }
            }
            inner_iterations += 1;
            if !next.is_empty() && trace {
                layers.push(x.clone());
            }
            frontier = next;
        }
        if let Some(inner) = inner.as_mut() {
            inner.push(layers);
        }
        let z2 = obscover(g, &x);
        inner_final.push(x);
        if z2 == z {
            break;
        }
        z = z2;
        outer.push(z.clone());
    }
    let mut strategy = MemorylessStrategy::undefined(g.num_observations());
    for o in z.ones() {
        strategy.choice[o] = Some(Distr::uniform(view.allow(o, &z)));
    }
    ReachResult { winning: z, strategy, outer, inner_final, inner, inner_iterations }
}

/// G̃: the POMDP restricted to γ⁻¹(Y*) with availability av(o) ∩ Allow(o, Y*).
/// Action ids are unchanged; state and observation ids are renumbered in
/// ascending order of the originals.
#[derive(Clone, Debug)]
pub struct Restricted {
    pub pomdp: Pomdp,
    pub state_map: Vec<usize>,
    pub state_back: Vec<Option<usize>>,
    pub obs_map: Vec<usize>,
    pub obs_back: Vec<Option<usize>>,
}

impl Restricted {
    pub fn states_to_original(&self, set: &StateSet, universe: usize) -> StateSet {
        crate::model::set_of(universe, set.ones().map(|s| self.state_map[s]))
    }

    pub fn obs_to_original(&self, set: &ObsSet, universe: usize) -> ObsSet {
        crate::model::set_of(universe, set.ones().map(|o| self.obs_map[o]))
    }

    pub fn rewards(&self, r: &RewardFn) -> RewardFn {
        RewardFn::new(
            self.state_map
                .iter()
                .map(|&s| match r.row(s) {
                    RewardRow::Uniform(v) => RewardRow::Uniform(v.clone()),
                    RewardRow::PerAction(v) => RewardRow::PerAction(v.clone()),
                })
                .collect(),
        )
    }
}

pub fn restrict_safe(g: &Pomdp, y: &ObsSet) -> Result<Restricted, FixpointError> {
    if !y.contains(g.obs_of(g.initial())) {
        return Err(FixpointError::NoSafeStrategy);
    }
    let obs_map: Vec<usize> = y.ones().collect();
    let mut obs_back = vec![None; g.num_observations()];
    for (i, &o) in obs_map.iter().enumerate() {
        obs_back[o] = Some(i);
    }
    let state_map: Vec<usize> = (0..g.num_states()).filter(|&s| y.contains(g.obs_of(s))).collect();
    let mut state_back = vec![None; g.num_states()];
    for (i, &s) in state_map.iter().enumerate() {
        state_back[s] = Some(i);
    }
    let avail: Vec<Vec<usize>> = obs_map.iter().map(|&o| allow(g, o, y)).collect();
    let trans = state_map
        .iter()
        .map(|&s| {
            let av = &avail[obs_back[g.obs_of(s)].unwrap()];
            g.rows(s)
                .iter()
                .filter(|(a, _)| av.binary_search(a).is_ok())
                .map(|(a, d)| {
                    let entries = d.entries().iter().map(|(t, p)| (state_back[*t].expect("allowed actions stay inside"), p.clone()));
                    (*a, Distr::from_raw(entries.collect()))
                })
                .collect()
        })
        .collect();
    let parts = PomdpParts {
        states: state_map.iter().map(|&s| g.state_name(s).to_string()).collect(),
        actions: g.parts().actions.clone(),
        observations: obs_map.iter().map(|&o| g.obs_name(o).to_string()).collect(),
        obs_of: state_map.iter().map(|&s| obs_back[g.obs_of(s)].unwrap()).collect(),
        initial: state_back[g.initial()].unwrap(),
        avail,
        trans,
    };
    Ok(Restricted { pomdp: Pomdp::new(parts)?, state_map, state_back, obs_map, obs_back })
}
