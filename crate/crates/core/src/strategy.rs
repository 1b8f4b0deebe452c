//! Observation-based strategies: finite-memory `(σ_u, σ_n, M, m₀)` and
//! memoryless `O → D(Act)`.

use std::collections::BTreeMap;

use crate::model::{Distr, Pomdp};

/// A finite-memory strategy. `next` is σ_n indexed by memory element;
/// `update` is σ_u keyed by (memory, observation, action). Updates only
/// need to exist for triples that can actually occur; the product
/// construction reports a missing one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiniteMemoryStrategy {
    pub memory: Vec<String>,
    pub initial: usize,
    pub next: Vec<Distr>,
    pub update: BTreeMap<(usize, usize, usize), Distr>,
}

impl FiniteMemoryStrategy {
    pub fn num_memory(&self) -> usize {
        self.memory.len()
    }

    pub fn update_for(&self, m: usize, o: usize, a: usize) -> Option<&Distr> {
        self.update.get(&(m, o, a))
    }

    /// Same supports, uniform probabilities.
    pub fn uniformized(&self) -> FiniteMemoryStrategy {
        FiniteMemoryStrategy {
            memory: self.memory.clone(),
            initial: self.initial,
            next: self.next.iter().map(Distr::uniformized).collect(),
            update: self.update.iter().map(|(k, d)| (*k, d.uniformized())).collect(),
        }
    }

    /// A single-memory strategy playing `choice` everywhere.
    pub fn stationary(g: &Pomdp, choice: Distr) -> FiniteMemoryStrategy {
        let mut update = BTreeMap::new();
        for o in 0..g.num_observations() {
            for a in choice.support() {
                update.insert((0, o, a), Distr::point(0));
            }
        }
        FiniteMemoryStrategy { memory: vec!["m".into()], initial: 0, next: vec![choice], update }
    }

    pub fn memory_id(&self, name: &str) -> Option<usize> {
        self.memory.iter().position(|m| m == name)
    }
}

/// A memoryless strategy: a distribution over actions per observation,
/// possibly undefined on observations it never needs to visit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemorylessStrategy {
    pub choice: Vec<Option<Distr>>,
}

impl MemorylessStrategy {
    pub fn undefined(num_observations: usize) -> MemorylessStrategy {
        MemorylessStrategy { choice: vec![None; num_observations] }
    }

    pub fn get(&self, o: usize) -> Option<&Distr> {
        self.choice.get(o).and_then(|c| c.as_ref())
    }

    /// The same strategy as a finite-memory one whose memory remembers the
    /// last observation; memory elements are the defined observations.
    pub fn to_finite_memory(&self, g: &Pomdp) -> FiniteMemoryStrategy {
        let defined: Vec<usize> = (0..self.choice.len()).filter(|&o| self.get(o).is_some()).collect();
        let index: BTreeMap<usize, usize> = defined.iter().enumerate().map(|(i, &o)| (o, i)).collect();
        let mut update = BTreeMap::new();
        for (i, &o) in defined.iter().enumerate() {
            for a in self.get(o).unwrap().support() {
                for (&o2, &j) in &index {
                    update.insert((i, o2, a), Distr::point(j));
                }
            }
        }
        FiniteMemoryStrategy {
            memory: defined.iter().map(|&o| g.obs_name(o).to_string()).collect(),
            initial: index.get(&g.obs_of(g.initial())).copied().unwrap_or(0),
            next: defined.iter().map(|&o| self.get(o).unwrap().clone()).collect(),
            update,
        }
    }
}
