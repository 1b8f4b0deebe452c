//! Finite Markov chains induced by fixing a finite-memory strategy, and their
//! exact analysis: recurrent classes, the reward-1 criterion, mean payoff of
//! recurrent classes and cone probabilities.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use fixedbitset::FixedBitSet;
use num_traits::{One, Zero};
use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use thiserror::Error;

use crate::linalg;
use crate::model::{Distr, Pomdp, RewardFn};
use crate::rational::{self, Q};
use crate::strategy::FiniteMemoryStrategy;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("strategy plays unavailable action `{action}` at state `{state}` with memory `{memory}`")]
    UnavailableAction { state: String, memory: String, action: String },
    #[error("strategy has no memory update for memory `{memory}`, observation `{observation}`, action `{action}`")]
    MissingUpdate { memory: String, observation: String, action: String },
    #[error("malformed strategy: {0}")]
    BadStrategy(String),
    #[error("chain state {state} has no reward annotation")]
    MissingReward { state: usize },
    #[error("states {0:?} do not form a bottom strongly connected component")]
    NotBottomScc(Vec<usize>),
    #[error("malformed prefix: {0}")]
    MalformedPrefix(String),
    #[error("stationary system is singular")]
    Singular,
    #[error("chain state {0} does not exist")]
    BadState(usize),
}

/// Back-reference from a product-chain state to the POMDP state and memory
/// element it stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChainLabel {
    pub state: usize,
    pub memory: usize,
}

/// An action played with positive probability at a chain state, with its
/// reward. Plain chains use a single pseudo-action (`action == None`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlayedAction {
    pub action: Option<usize>,
    pub prob: Q,
    pub reward: Option<Q>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarkovChain {
    rows: Vec<Distr>,
    edge_actions: Vec<Vec<Vec<usize>>>,
    played: Vec<Vec<PlayedAction>>,
    labels: Option<Vec<ChainLabel>>,
}

impl MarkovChain {
    /// A chain without rewards.
    pub fn new(rows: Vec<Distr>) -> MarkovChain {
        let played = rows
            .iter()
            .map(|_| vec![PlayedAction { action: None, prob: Q::one(), reward: None }])
            .collect();
        MarkovChain::assemble(rows, played)
    }

    /// A chain with one reward per state.
    pub fn with_state_rewards(rows: Vec<Distr>, rewards: Vec<Q>) -> MarkovChain {
        assert_eq!(rows.len(), rewards.len());
        let played = rewards
            .into_iter()
            .map(|r| vec![PlayedAction { action: None, prob: Q::one(), reward: Some(r) }])
            .collect();
        MarkovChain::assemble(rows, played)
    }

    fn assemble(rows: Vec<Distr>, played: Vec<Vec<PlayedAction>>) -> MarkovChain {
        let edge_actions = rows.iter().map(|d| vec![Vec::new(); d.len()]).collect();
        MarkovChain { rows, edge_actions, played, labels: None }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &Distr {
        &self.rows[i]
    }

    pub fn successors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.rows[i].support()
    }

    /// Actions contributing to each entry of `row(i)`, aligned with it.
    pub fn edge_actions(&self, i: usize) -> &[Vec<usize>] {
        &self.edge_actions[i]
    }

    pub fn played(&self, i: usize) -> &[PlayedAction] {
        &self.played[i]
    }

    pub fn labels(&self) -> Option<&[ChainLabel]> {
        self.labels.as_deref()
    }

    pub fn label(&self, i: usize) -> Option<ChainLabel> {
        self.labels.as_ref().map(|l| l[i])
    }

    pub fn find(&self, state: usize, memory: usize) -> Option<usize> {
        let target = ChainLabel { state, memory };
        self.labels.as_ref()?.iter().position(|l| *l == target)
    }

    /// Σ_a σ(a)·r(s,a) at chain state `i`.
    pub fn expected_reward(&self, i: usize) -> Result<Q, ChainError> {
        let mut total = Q::zero();
        for p in &self.played[i] {
            let r = p.reward.as_ref().ok_or(ChainError::MissingReward { state: i })?;
            total += &p.prob * r;
        }
        Ok(total)
    }
}

fn check_shape(g: &Pomdp, sigma: &FiniteMemoryStrategy) -> Result<(), ChainError> {
    let nm = sigma.memory.len();
    if nm == 0 || sigma.initial >= nm || sigma.next.len() != nm {
        return Err(ChainError::BadStrategy(
            "memory must be non-empty, with an initial element and one action distribution per element".into(),
        ));
    }
    for (m, d) in sigma.next.iter().enumerate() {
        if let Some(p) = d.problems(g.num_actions()).into_iter().next() {
            return Err(ChainError::BadStrategy(format!("action choice of `{}`: {p}", sigma.memory[m])));
        }
    }
    for ((m, o, a), d) in &sigma.update {
        if *m >= nm || *o >= g.num_observations() || *a >= g.num_actions() {
            return Err(ChainError::BadStrategy(format!("update key ({m}, {o}, {a}) out of range")));
        }
        if let Some(p) = d.problems(nm).into_iter().next() {
            return Err(ChainError::BadStrategy(format!(
                "update of `{}` on `{}` `{}`: {p}",
                sigma.memory[*m],
                g.obs_name(*o),
                g.action_name(*a)
            )));
        }
    }
    Ok(())
}

/// The product chain G↾σ over the part of S×M reachable from (s₀, m₀):
/// δσ((s′,m′)|(s,m)) = Σ_a σ_n(m)(a)·δ(s,a)(s′)·σ_u(m,γ(s′),a)(m′).
///
/// States are numbered in breadth-first discovery order, so the chain is
/// reproducible. Each edge records the actions that contribute to it.
pub fn product_chain(g: &Pomdp, r: &RewardFn, sigma: &FiniteMemoryStrategy) -> Result<MarkovChain, ChainError> {
    check_shape(g, sigma)?;
    let mut index: HashMap<ChainLabel, usize> = HashMap::new();
    let mut labels = vec![ChainLabel { state: g.initial(), memory: sigma.initial }];
    index.insert(labels[0], 0);
    let mut rows = Vec::new();
    let mut edge_actions = Vec::new();
    let mut played = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        let ChainLabel { state: s, memory: m } = labels[i];
        let o = g.obs_of(s);
        let mut acc: BTreeMap<(usize, usize), (Q, BTreeSet<usize>)> = BTreeMap::new();
        let mut here = Vec::new();
        for (a, pa) in sigma.next[m].entries() {
            let a = *a;
            let d = match (g.is_available(o, a), g.delta(s, a)) {
                (true, Some(d)) => d,
                _ => {
                    return Err(ChainError::UnavailableAction {
                        state: g.state_name(s).into(),
                        memory: sigma.memory[m].clone(),
                        action: g.action_name(a).into(),
                    })
                }
            };
            here.push(PlayedAction { action: Some(a), prob: pa.clone(), reward: r.get(s, a).cloned() });
            for (t, pt) in d.entries() {
                let o2 = g.obs_of(*t);
                let u = sigma.update_for(m, o2, a).ok_or_else(|| ChainError::MissingUpdate {
                    memory: sigma.memory[m].clone(),
                    observation: g.obs_name(o2).into(),
                    action: g.action_name(a).into(),
                })?;
                for (m2, pm) in u.entries() {
                    let e = acc.entry((*t, *m2)).or_insert_with(|| (Q::zero(), BTreeSet::new()));
                    e.0 += pa * pt * pm;
                    e.1.insert(a);
                }
            }
        }
        let mut entries = Vec::with_capacity(acc.len());
        for ((t, m2), (p, acts)) in acc {
            let label = ChainLabel { state: t, memory: m2 };
            let id = *index.entry(label).or_insert_with(|| {
                labels.push(label);
                labels.len() - 1
            });
            entries.push((id, p, acts.into_iter().collect::<Vec<_>>()));
        }
        entries.sort_by_key(|e| e.0);
        edge_actions.push(entries.iter().map(|e| e.2.clone()).collect());
        rows.push(Distr::from_raw(entries.into_iter().map(|e| (e.0, e.1)).collect()));
        played.push(here);
        i += 1;
    }
    Ok(MarkovChain { rows, edge_actions, played, labels: Some(labels) })
}

pub fn reachable(mc: &MarkovChain, start: usize) -> FixedBitSet {
    let mut seen = FixedBitSet::with_capacity(mc.len());
    let mut queue = VecDeque::from([start]);
    seen.insert(start);
    while let Some(i) = queue.pop_front() {
        for j in mc.successors(i) {
            if !seen.put(j) {
                queue.push_back(j);
            }
        }
    }
    seen
}

/// Bottom strongly connected components of the support graph, each sorted,
/// ordered by least member.
pub fn recurrent_classes(mc: &MarkovChain) -> Vec<Vec<usize>> {
    let mut graph = DiGraph::<(), ()>::with_capacity(mc.len(), 0);
    for _ in 0..mc.len() {
        graph.add_node(());
    }
    for i in 0..mc.len() {
        for j in mc.successors(i) {
            graph.add_edge(NodeIndex::new(i), NodeIndex::new(j), ());
        }
    }
    let mut comp = vec![0usize; mc.len()];
    let sccs = tarjan_scc(&graph);
    for (c, members) in sccs.iter().enumerate() {
        for n in members {
            comp[n.index()] = c;
        }
    }
    let mut classes: Vec<Vec<usize>> = sccs
        .iter()
        .enumerate()
        .filter(|(c, members)| {
            members.iter().all(|n| mc.successors(n.index()).all(|j| comp[j] == *c))
        })
        .map(|(_, members)| {
            let mut v: Vec<usize> = members.iter().map(|n| n.index()).collect();
            v.sort_unstable();
            v
        })
        .collect();
    classes.sort();
    classes
}

/// Recurrent classes reachable from `start`.
pub fn reachable_classes(mc: &MarkovChain, start: usize) -> Vec<Vec<usize>> {
    let seen = reachable(mc, start);
    recurrent_classes(mc).into_iter().filter(|c| seen.contains(c[0])).collect()
}

/// A state–action pair with reward below 1 inside a reachable recurrent
/// class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ZeroRewardWitness {
    pub class: Vec<usize>,
    pub state: usize,
    pub action: Option<usize>,
    pub reward: Q,
}

/// First violation of the reward-1 criterion among the recurrent classes
/// reachable from `start`, scanning classes and states in id order.
pub fn limavg1_witness(mc: &MarkovChain, start: usize) -> Result<Option<ZeroRewardWitness>, ChainError> {
    if start >= mc.len() {
        return Err(ChainError::BadState(start));
    }
    let classes = reachable_classes(mc, start);
    let mut found = None;
    for class in &classes {
        for &s in class {
            for p in mc.played(s) {
                let r = p.reward.as_ref().ok_or(ChainError::MissingReward { state: s })?;
                if found.is_none() && !r.is_one() {
                    found = Some(ZeroRewardWitness {
                        class: class.clone(),
                        state: s,
                        action: p.action,
                        reward: r.clone(),
                    });
                }
            }
        }
    }
    Ok(found)
}

/// LimAvg = 1 holds almost surely from `start` iff every reachable recurrent
/// class earns reward 1 on every state–action pair played inside it.
pub fn almost_sure_limavg1(mc: &MarkovChain, start: usize) -> Result<bool, ChainError> {
    Ok(limavg1_witness(mc, start)?.is_none())
}

/// Per chain state: does LimAvg = 1 hold almost surely from it?
pub fn winning_states(mc: &MarkovChain) -> Result<FixedBitSet, ChainError> {
    let mut preds = vec![Vec::new(); mc.len()];
    for i in 0..mc.len() {
        for j in mc.successors(i) {
            preds[j].push(i);
        }
    }
    let mut losing = FixedBitSet::with_capacity(mc.len());
    let mut queue = VecDeque::new();
    for class in recurrent_classes(mc) {
        let mut bad = false;
        for &s in &class {
            for p in mc.played(s) {
                let r = p.reward.as_ref().ok_or(ChainError::MissingReward { state: s })?;
                bad |= !r.is_one();
            }
        }
        if bad {
            for s in class {
                losing.insert(s);
                queue.push_back(s);
            }
        }
    }
    while let Some(j) = queue.pop_front() {
        for &i in &preds[j] {
            if !losing.put(i) {
                queue.push_back(i);
            }
        }
    }
    losing.toggle_range(..);
    Ok(losing)
}

fn check_bscc(mc: &MarkovChain, class: &[usize]) -> Result<Vec<usize>, ChainError> {
    let err = || ChainError::NotBottomScc(class.to_vec());
    let mut members = class.to_vec();
    members.sort_unstable();
    members.dedup();
    if members.is_empty() || members.len() != class.len() || *members.last().unwrap() >= mc.len() {
        return Err(err());
    }
    let inside = crate::model::set_of(mc.len(), members.iter().copied());
    if members.iter().any(|&i| mc.successors(i).any(|j| !inside.contains(j))) {
        return Err(err());
    }
    // Closed, so strongly connected iff every member reaches every other;
    // checking forward from each member would be quadratic, so check forward
    // and backward from one.
    let forward = reachable(mc, members[0]);
    let mut preds: HashMap<usize, Vec<usize>> = HashMap::new();
    for &i in &members {
        for j in mc.successors(i) {
            preds.entry(j).or_default().push(i);
        }
    }
    let mut back = FixedBitSet::with_capacity(mc.len());
    back.insert(members[0]);
    let mut queue = VecDeque::from([members[0]]);
    while let Some(j) = queue.pop_front() {
        for &i in preds.get(&j).map(|v| v.as_slice()).unwrap_or(&[]) {
            if !back.put(i) {
                queue.push_back(i);
            }
        }
    }
    if members.iter().any(|&i| !forward.contains(i) || !back.contains(i)) {
        return Err(err());
    }
    Ok(members)
}

/// Long-run average reward inside a recurrent class: Σ π(s)·r̂(s) where π is
/// the stationary distribution of the class, computed exactly.
pub fn bscc_mean_payoff(mc: &MarkovChain, class: &[usize]) -> Result<Q, ChainError> {
    let members = check_bscc(mc, class)?;
    let n = members.len();
    let pos: HashMap<usize, usize> = members.iter().enumerate().map(|(k, &s)| (s, k)).collect();
    let mut a = vec![vec![Q::zero(); n]; n];
    for (i, &s) in members.iter().enumerate() {
        for (t, p) in mc.row(s).entries() {
            a[pos[t]][i] += p;
        }
        a[i][i] -= Q::one();
    }
    a[n - 1] = vec![Q::one(); n];
    let mut b = vec![Q::zero(); n];
    b[n - 1] = Q::one();
    let pi = linalg::solve_exact(a, b).ok_or(ChainError::Singular)?;
    let mut value = Q::zero();
    for (k, &s) in members.iter().enumerate() {
        value += &pi[k] * mc.expected_reward(s)?;
    }
    Ok(value)
}

/// Floating-point mean payoff for large classes; pivots smaller than `tol`
/// are treated as singular.
pub fn bscc_mean_payoff_f64(mc: &MarkovChain, class: &[usize], tol: f64) -> Result<f64, ChainError> {
    let members = check_bscc(mc, class)?;
    let n = members.len();
    let pos: HashMap<usize, usize> = members.iter().enumerate().map(|(k, &s)| (s, k)).collect();
    let mut a = vec![vec![0.0; n]; n];
    for (i, &s) in members.iter().enumerate() {
        for (t, p) in mc.row(s).entries() {
            a[pos[t]][i] += rational::to_f64(p);
        }
        a[i][i] -= 1.0;
    }
    a[n - 1] = vec![1.0; n];
    let mut b = vec![0.0; n];
    b[n - 1] = 1.0;
    let pi = linalg::solve_f64(a, b, tol).ok_or(ChainError::Singular)?;
    let mut value = 0.0;
    for (k, &s) in members.iter().enumerate() {
        value += pi[k] * rational::to_f64(&mc.expected_reward(s)?);
    }
    Ok(value)
}

/// Mean payoff of every recurrent class reachable from `start`.
pub fn class_means(mc: &MarkovChain, start: usize) -> Result<Vec<(Vec<usize>, Q)>, ChainError> {
    if start >= mc.len() {
        return Err(ChainError::BadState(start));
    }
    reachable_classes(mc, start)
        .into_iter()
        .map(|c| {
            let v = bscc_mean_payoff(mc, &c)?;
            Ok((c, v))
        })
        .collect()
}

/// LimAvg > λ almost surely from `start`: every reachable recurrent class has
/// mean payoff strictly above λ.
pub fn almost_sure_limavg_gt(mc: &MarkovChain, start: usize, lambda: &Q) -> Result<bool, ChainError> {
    Ok(class_means(mc, start)?.iter().all(|(_, v)| v > lambda))
}

/// A finite play prefix s₀ a₁ s₁ … aₖ sₖ.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prefix {
    pub start: usize,
    pub steps: Vec<(usize, usize)>,
}

/// μ^σ(Cone(prefix)), marginalising over the strategy's memory.
pub fn prefix_probability(g: &Pomdp, sigma: &FiniteMemoryStrategy, prefix: &Prefix) -> Result<Q, ChainError> {
    check_shape(g, sigma)?;
    let ns = g.num_states();
    if prefix.start >= ns {
        return Err(ChainError::MalformedPrefix(format!("state #{} does not exist", prefix.start)));
    }
    for &(a, t) in &prefix.steps {
        if a >= g.num_actions() || t >= ns {
            return Err(ChainError::MalformedPrefix(format!("step ({a}, {t}) out of range")));
        }
    }
    if prefix.start != g.initial() {
        return Ok(Q::zero());
    }
    let mut mass: BTreeMap<usize, Q> = BTreeMap::from([(sigma.initial, Q::one())]);
    let mut s = prefix.start;
    for &(a, t) in &prefix.steps {
        let mut next: BTreeMap<usize, Q> = BTreeMap::new();
        for (m, p) in &mass {
            let pa = sigma.next[*m].prob(a);
            if pa.is_zero() {
                continue;
            }
            let d = match (g.is_available(g.obs_of(s), a), g.delta(s, a)) {
                (true, Some(d)) => d,
                _ => {
                    return Err(ChainError::UnavailableAction {
                        state: g.state_name(s).into(),
                        memory: sigma.memory[*m].clone(),
                        action: g.action_name(a).into(),
                    })
                }
            };
            let pt = d.prob(t);
            if pt.is_zero() {
                continue;
            }
            let o = g.obs_of(t);
            let u = sigma.update_for(*m, o, a).ok_or_else(|| ChainError::MissingUpdate {
                memory: sigma.memory[*m].clone(),
                observation: g.obs_name(o).into(),
                action: g.action_name(a).into(),
            })?;
            for (m2, pm) in u.entries() {
                *next.entry(*m2).or_insert_with(Q::zero) += p * &pa * &pt * pm;
            }
        }
        mass = next;
        s = t;
    }
    Ok(mass.values().fold(Q::zero(), |acc, p| acc + p))
}
