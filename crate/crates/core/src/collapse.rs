//! Fingerprints of memory elements, the projection graph and the collapsed
//! strategy whose memory is the graph's vertices.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use fixedbitset::FixedBitSet;

use crate::chain::{self, ChainError, MarkovChain};
use crate::model::{self, Distr, Pomdp, RewardFn, StateSet};
use crate::strategy::FiniteMemoryStrategy;

/// (W, R, A) of a memory element: states winning from it, states recurrent
/// with it, and the actions it plays. W and R are total over S and 0 at
/// pairs the product chain never reaches.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MemoryFingerprint {
    pub win: StateSet,
    pub rec: StateSet,
    pub acts: FixedBitSet,
}

/// A projection-graph vertex (Y, W, R, A).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CollapsedMemory {
    pub belief: StateSet,
    pub fp: MemoryFingerprint,
}

impl CollapsedMemory {
    /// The same memory with W and R cut down to the belief. Only values on
    /// the belief are ever inspected by the reduction.
    pub fn restricted(&self) -> CollapsedMemory {
        let mut win = self.fp.win.clone();
        win.intersect_with(&self.belief);
        let mut rec = self.fp.rec.clone();
        rec.intersect_with(&self.belief);
        CollapsedMemory { belief: self.belief.clone(), fp: MemoryFingerprint { win, rec, acts: self.fp.acts.clone() } }
    }

    pub fn describe(&self, g: &Pomdp) -> String {
        let acts: Vec<&str> = self.fp.acts.ones().map(|a| g.action_name(a)).collect();
        format!(
            "Y={} W={} R={} A={{{}}}",
            g.describe_states(&self.belief),
            g.describe_states(&self.fp.win),
            g.describe_states(&self.fp.rec),
            acts.join(",")
        )
    }
}

/// Fingerprints per memory element, computed from one product chain.
pub fn fingerprints(g: &Pomdp, r: &RewardFn, sigma: &FiniteMemoryStrategy) -> Result<Vec<MemoryFingerprint>, ChainError> {
    let mc = chain::product_chain(g, r, sigma)?;
    fingerprints_of_chain(g, sigma, &mc)
}

pub fn fingerprints_of_chain(
    g: &Pomdp,
    sigma: &FiniteMemoryStrategy,
    mc: &MarkovChain,
) -> Result<Vec<MemoryFingerprint>, ChainError> {
    let ns = g.num_states();
    let mut fps: Vec<MemoryFingerprint> = sigma
        .next
        .iter()
        .map(|d| MemoryFingerprint {
            win: FixedBitSet::with_capacity(ns),
            rec: FixedBitSet::with_capacity(ns),
            acts: model::set_of(g.num_actions(), d.support()),
        })
        .collect();
    let labels = mc.labels().expect("product chains carry labels");
    let winning = chain::winning_states(mc)?;
    for i in winning.ones() {
        let l = labels[i];
        fps[l.memory].win.insert(l.state);
    }
    for class in chain::recurrent_classes(mc) {
        for i in class {
            let l = labels[i];
            fps[l.memory].rec.insert(l.state);
        }
    }
    Ok(fps)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProjectionGraph {
    /// Vertices in breadth-first discovery order from `initial`.
    pub vertices: Vec<CollapsedMemory>,
    /// (source, action, target).
    pub edges: BTreeSet<(usize, usize, usize)>,
    pub initial: usize,
}

impl ProjectionGraph {
    pub fn successors(&self, v: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.range((v, 0, 0)..(v + 1, 0, 0)).map(|&(_, a, t)| (a, t))
    }
}

/// The reachable projection graph. There is an edge (Y,W,R,A) –a→ (Y′,W′,R′,A′)
/// iff for some observation o: a ∈ A, Y′ is the non-empty belief update of Y
/// under a and o, and some memories m, m′ with these fingerprints have
/// m′ ∈ supp σ_u(m, o, a).
pub fn projection_graph(g: &Pomdp, sigma: &FiniteMemoryStrategy, fp: &[MemoryFingerprint]) -> ProjectionGraph {
    let mut realizers: BTreeMap<&MemoryFingerprint, Vec<usize>> = BTreeMap::new();
    for (m, f) in fp.iter().enumerate() {
        realizers.entry(f).or_default().push(m);
    }
    let initial = CollapsedMemory { belief: g.state_set([g.initial()]), fp: fp[sigma.initial].clone() };
    let mut index: HashMap<CollapsedMemory, usize> = HashMap::from([(initial.clone(), 0)]);
    let mut vertices = vec![initial];
    let mut edges = BTreeSet::new();
    let mut queue = VecDeque::from([0usize]);
    while let Some(v) = queue.pop_front() {
        let cm = vertices[v].clone();
        let obs = g.obs_of(cm.belief.ones().next().expect("beliefs are non-empty"));
        let ms = &realizers[&cm.fp];
        for a in cm.fp.acts.ones() {
            if !g.is_available(obs, a) {
                continue;
            }
            let post = model::post(g, &cm.belief, a);
            let mut next_obs: Vec<usize> = post.ones().map(|s| g.obs_of(s)).collect();
            next_obs.sort_unstable();
            next_obs.dedup();
            for o in next_obs {
                let mut y2 = post.clone();
                y2.intersect_with(&g.class(o));
                let mut targets = BTreeSet::new();
                for &m in ms {
                    if let Some(u) = sigma.update_for(m, o, a) {
                        targets.extend(u.support());
                    }
                }
                for m2 in targets {
                    let target = CollapsedMemory { belief: y2.clone(), fp: fp[m2].clone() };
                    let t = *index.entry(target.clone()).or_insert_with(|| {
                        vertices.push(target);
                        queue.push_back(vertices.len() - 1);
                        vertices.len() - 1
                    });
                    edges.insert((v, a, t));
                }
            }
        }
    }
    ProjectionGraph { vertices, edges, initial: 0 }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Collapsed {
    pub strategy: FiniteMemoryStrategy,
    pub graph: ProjectionGraph,
    pub fingerprints: Vec<MemoryFingerprint>,
}

/// The collapsed strategy σ′: memory = projection-graph vertices, σ′_n(v)
/// uniform over the actions labelling edges out of v, σ′_u(v,o,a) uniform
/// over a-successors whose belief lies in γ⁻¹(o).
pub fn collapse(g: &Pomdp, r: &RewardFn, sigma: &FiniteMemoryStrategy) -> Result<Collapsed, ChainError> {
    let fp = fingerprints(g, r, sigma)?;
    let graph = projection_graph(g, sigma, &fp);
    let mut next = Vec::with_capacity(graph.vertices.len());
    let mut update = BTreeMap::new();
    for (v, cm) in graph.vertices.iter().enumerate() {
        let mut by_action: BTreeMap<usize, BTreeMap<usize, Vec<usize>>> = BTreeMap::new();
        for (a, t) in graph.successors(v) {
            let o = g.obs_of(graph.vertices[t].belief.ones().next().unwrap());
            by_action.entry(a).or_default().entry(o).or_default().push(t);
        }
        if by_action.is_empty() {
            // No successor recorded (σ never updates here); keep σ's own
            // action support so the strategy stays total.
            next.push(Distr::uniform(cm.fp.acts.ones()));
        } else {
            next.push(Distr::uniform(by_action.keys().copied()));
        }
        for (a, per_obs) in by_action {
            for (o, targets) in per_obs {
                update.insert((v, o, a), Distr::uniform(targets));
            }
        }
    }
    let strategy = FiniteMemoryStrategy {
        memory: (0..graph.vertices.len()).map(|v| format!("v{v}")).collect(),
        initial: graph.initial,
        next,
        update,
    };
    Ok(Collapsed { strategy, graph, fingerprints: fp })
}

/// 3|S| + |Act|: the base-2 logarithm of the collapsed-memory bound.
pub fn memory_bound_exponent(g: &Pomdp) -> usize {
    3 * g.num_states() + g.num_actions()
}

pub fn within_memory_bound(g: &Pomdp, memory: usize) -> bool {
    let e = memory_bound_exponent(g);
    e >= usize::BITS as usize - 1 || memory <= 1usize << e
}
