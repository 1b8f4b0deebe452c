//! Fixtures, seeded instance generators and brute-force oracles shared by
//! the integration tests. The oracles deliberately avoid the library's own
//! algorithms: they enumerate paths, supports or strategies directly.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use fixedbitset::FixedBitSet;
use limavg::chain::{self, MarkovChain};
use limavg::format;
use limavg::model::{Distr, Pomdp, PomdpParts, RewardFn, StateSet};
use limavg::pfa::Pfa;
use limavg::rational::{self, ratio};
use limavg::{FiniteMemoryStrategy, Q};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> String {
    let path = format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

pub fn model(name: &str) -> (Pomdp, RewardFn) {
    let (g, r) = format::parse_model(&fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    (g, r.expect("fixture carries rewards"))
}

pub fn example1() -> (Pomdp, RewardFn) {
    model("example1.pomdp")
}

pub fn example2() -> (Pomdp, RewardFn) {
    model("example2.pomdp")
}

pub fn blind_zero() -> (Pomdp, RewardFn) {
    model("blind_zero.pomdp")
}

pub fn strategy(g: &Pomdp, name: &str) -> FiniteMemoryStrategy {
    format::parse_strategy(g, &fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn fig5() -> Pfa {
    format::parse_pfa(&fixture("fig5.pfa")).expect("fig5.pfa parses")
}

/// Example 1 plus a state `W` observed as `oU` that nothing ever reaches.
pub fn example1_augmented() -> (Pomdp, RewardFn) {
    let text = fixture("example1.pomdp")
        .replace("states: s0 X X' Y Y' Z Z'", "states: s0 X X' Y Y' Z Z' W")
        .replace("Z'=oU\n", "Z'=oU W=oU\n")
        .replace("reward:\n", "  W a -> W:1\n  W b -> W:1\nreward:\n  W a = 1\n  W b = 1\n");
    let (g, r) = format::parse_model(&text).expect("augmented model parses");
    (g, r.unwrap())
}

pub fn state_ids(g: &Pomdp, names: &[&str]) -> BTreeSet<usize> {
    names.iter().map(|n| g.state_id(n).unwrap_or_else(|| panic!("no state {n}"))).collect()
}

/// Product-chain states rendered `state·memory`.
pub fn chain_names(g: &Pomdp, sigma: &FiniteMemoryStrategy, mc: &MarkovChain, ids: &[usize]) -> BTreeSet<String> {
    ids.iter()
        .map(|&i| {
            let l = mc.label(i).unwrap();
            format!("{}·{}", g.state_name(l.state), sigma.memory[l.memory])
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Copy, Debug)]
pub struct Shape {
    /// Including the initial state.
    pub states: usize,
    pub actions: usize,
    /// Non-initial observations; at most `states - 1`.
    pub observations: usize,
    /// Complete supports until every reachable belief is a full class.
    pub belief_obs: bool,
    /// Every action available everywhere.
    pub full_avail: bool,
}

fn random_distr(rng: &mut ChaCha8Rng, support: &BTreeSet<usize>) -> Distr {
    let weights: Vec<i64> = support.iter().map(|_| rng.gen_range(1..=3)).collect();
    let total: i64 = weights.iter().sum();
    Distr::new(support.iter().zip(&weights).map(|(&t, &w)| (t, ratio(w, total)))).unwrap()
}

fn nonempty_subset(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    loop {
        let v: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
        if !v.is_empty() {
            return v;
        }
    }
}

/// A random POMDP: state 0 is the initial state, alone in observation 0 and
/// never re-entered; the other states are spread over the remaining
/// observations, each of which gets at least one state.
pub fn random_pomdp(rng: &mut ChaCha8Rng, shape: Shape) -> Pomdp {
    let n = shape.states;
    let k = shape.observations.clamp(1, n - 1);
    let na = shape.actions;
    let mut obs_of = vec![0usize];
    for s in 1..n {
        obs_of.push(if s <= k { s } else { rng.gen_range(1..=k) });
    }
    let avail: Vec<Vec<usize>> =
        (0..=k).map(|_| if shape.full_avail { (0..na).collect() } else { nonempty_subset(rng, na) }).collect();
    let mut supports: Vec<BTreeMap<usize, BTreeSet<usize>>> = vec![BTreeMap::new(); n];
    for s in 0..n {
        for &a in &avail[obs_of[s]] {
            let size = rng.gen_range(1..=3.min(n - 1));
            let mut targets: Vec<usize> = (1..n).collect();
            targets.shuffle(rng);
            supports[s].insert(a, targets[..size].iter().copied().collect());
        }
    }
    if shape.belief_obs {
        // post(class(o), a) must meet every class either fully or not at all.
        for (o, acts) in avail.iter().enumerate().take(k + 1) {
            let class: Vec<usize> = (0..n).filter(|&s| obs_of[s] == o).collect();
            for &a in acts {
                let post: BTreeSet<usize> = class.iter().flat_map(|s| supports[*s][&a].iter().copied()).collect();
                let hit: BTreeSet<usize> = post.iter().map(|&t| obs_of[t]).collect();
                for (t, ot) in obs_of.iter().enumerate().skip(1) {
                    if hit.contains(ot) && !post.contains(&t) {
                        let s = *class.choose(rng).unwrap();
                        supports[s].get_mut(&a).unwrap().insert(t);
                    }
                }
            }
        }
    }
    let trans = supports
        .iter()
        .map(|row| row.iter().map(|(&a, sup)| (a, random_distr(rng, sup))).collect())
        .collect();
    let mut states = vec!["s0".to_string()];
    states.extend((1..n).map(|s| format!("q{s}")));
    let parts = PomdpParts {
        states,
        actions: (0..na).map(|a| ["a", "b", "c"][a].to_string()).collect(),
        observations: (0..=k).map(|o| format!("o{o}")).collect(),
        obs_of,
        initial: 0,
        avail,
        trans,
    };
    Pomdp::new(parts).expect("generator produces valid models")
}

/// A seeded belief-observation instance with at most 6 states and 3 actions.
pub fn instance(seed: u64) -> Pomdp {
    let mut rng = rng(seed);
    let n = rng.gen_range(2..=6);
    let shape = Shape {
        states: n,
        actions: rng.gen_range(1..=3),
        observations: rng.gen_range(1..=(n - 1).min(3)),
        belief_obs: true,
        full_avail: false,
    };
    random_pomdp(&mut rng, shape)
}

/// Per-pair rewards: 1 with probability `p_one`, otherwise 0 or 1/2.
pub fn random_rewards(rng: &mut ChaCha8Rng, g: &Pomdp, p_one: f64) -> RewardFn {
    let mut pairs = Vec::new();
    for s in 0..g.num_states() {
        for &a in g.avail(g.obs_of(s)) {
            let v = if rng.gen_bool(p_one) {
                rational::one()
            } else if rng.gen_bool(0.5) {
                rational::zero()
            } else {
                ratio(1, 2)
            };
            pairs.push((s, a, v));
        }
    }
    RewardFn::from_pairs(g.num_states(), pairs)
}

/// A random strategy with `memory` elements over a fully available model:
/// random action supports and random update supports for every triple.
pub fn random_strategy(rng: &mut ChaCha8Rng, g: &Pomdp, memory: usize) -> FiniteMemoryStrategy {
    let na = g.num_actions();
    let next = (0..memory)
        .map(|_| {
            let sup: BTreeSet<usize> = nonempty_subset(rng, na).into_iter().collect();
            random_distr(rng, &sup)
        })
        .collect();
    let mut update = BTreeMap::new();
    for m in 0..memory {
        for o in 0..g.num_observations() {
            for a in 0..na {
                let sup: BTreeSet<usize> = nonempty_subset(rng, memory).into_iter().collect();
                update.insert((m, o, a), random_distr(rng, &sup));
            }
        }
    }
    FiniteMemoryStrategy { memory: (0..memory).map(|m| format!("m{m}")).collect(), initial: 0, next, update }
}

// ---------------------------------------------------------------------------
// Oracles

/// Last states of every path s₀ a₁ s₁ … aₖ sₖ whose actions and
/// observations match `seq`, found by enumerating the paths themselves.
pub fn belief_by_paths(g: &Pomdp, seq: &[(usize, usize)]) -> BTreeSet<usize> {
    let mut paths: Vec<Vec<usize>> = vec![vec![g.initial()]];
    for &(a, o) in seq {
        let mut next = Vec::new();
        for p in &paths {
            let s = *p.last().unwrap();
            if let Some(d) = g.delta(s, a) {
                for t in d.support() {
                    if g.obs_of(t) == o {
                        let mut q = p.clone();
                        q.push(t);
                        next.push(q);
                    }
                }
            }
        }
        paths = next;
    }
    paths.iter().map(|p| *p.last().unwrap()).collect()
}

/// δσ((s′,m′) | (s,m)) summed term by term over actions.
pub fn delta_sigma(g: &Pomdp, sigma: &FiniteMemoryStrategy, s: usize, m: usize, t: usize, m2: usize) -> Q {
    let mut total = rational::zero();
    for (a, pa) in sigma.next[m].entries() {
        let Some(d) = g.delta(s, *a) else { continue };
        let pt = d.prob(t);
        if pt == rational::zero() {
            continue;
        }
        let pm = sigma.update_for(m, g.obs_of(t), *a).map(|u| u.prob(m2)).unwrap_or_else(rational::zero);
        total += pa * &pt * &pm;
    }
    total
}

/// Every memoryless support assignment: one non-empty subset of av(o) per
/// observation, encoded as a list of action lists.
pub fn support_assignments(g: &Pomdp) -> Vec<Vec<Vec<usize>>> {
    let mut out: Vec<Vec<Vec<usize>>> = vec![Vec::new()];
    for o in 0..g.num_observations() {
        let av = g.avail(o);
        let mut subsets = Vec::new();
        for mask in 1u32..(1 << av.len()) {
            subsets.push((0..av.len()).filter(|i| mask & (1 << i) != 0).map(|i| av[i]).collect::<Vec<_>>());
        }
        out = out
            .into_iter()
            .flat_map(|prefix| {
                subsets.iter().map(move |sub| {
                    let mut p = prefix.clone();
                    p.push(sub.clone());
                    p
                })
            })
            .collect();
    }
    out
}

fn successors(g: &Pomdp, choice: &[Vec<usize>], s: usize, absorbing: &StateSet) -> Vec<usize> {
    if absorbing.contains(s) {
        return vec![s];
    }
    let mut out: BTreeSet<usize> = BTreeSet::new();
    for &a in &choice[g.obs_of(s)] {
        out.extend(g.delta(s, a).unwrap().support());
    }
    out.into_iter().collect()
}

/// States reachable from γ⁻¹(o) under the assignment, where reaching any
/// state of an observation puts its whole class in play.
fn class_closure(g: &Pomdp, choice: &[Vec<usize>], o: usize, absorbing: &StateSet) -> FixedBitSet {
    let mut seen = FixedBitSet::with_capacity(g.num_states());
    let mut seen_obs = FixedBitSet::with_capacity(g.num_observations());
    let mut stack: Vec<usize> = Vec::new();
    let mut open = |obs: usize, seen: &mut FixedBitSet, stack: &mut Vec<usize>| {
        if !seen_obs.put(obs) {
            for &s in g.members(obs) {
                seen.insert(s);
                stack.push(s);
            }
        }
    };
    open(o, &mut seen, &mut stack);
    while let Some(s) = stack.pop() {
        for t in successors(g, choice, s, absorbing) {
            open(g.obs_of(t), &mut seen, &mut stack);
        }
    }
    seen
}

/// Observations from which some memoryless support assignment keeps the
/// play inside `f` forever.
pub fn oracle_safe(g: &Pomdp, f: &StateSet) -> FixedBitSet {
    let none = FixedBitSet::with_capacity(g.num_states());
    let mut win = FixedBitSet::with_capacity(g.num_observations());
    for choice in support_assignments(g) {
        for o in 0..g.num_observations() {
            if !win.contains(o) && class_closure(g, &choice, o, &none).ones().all(|s| f.contains(s)) {
                win.insert(o);
            }
        }
    }
    win
}

/// Observations from which some memoryless support assignment reaches the
/// absorbing set `t` with probability 1: every state of the closure has a
/// path into `t`.
pub fn oracle_reach(g: &Pomdp, t: &StateSet) -> FixedBitSet {
    let mut win = FixedBitSet::with_capacity(g.num_observations());
    for choice in support_assignments(g) {
        // States with a path into t under this assignment.
        let mut good = t.clone();
        loop {
            let before = good.count_ones(..);
            for s in 0..g.num_states() {
                if !good.contains(s) && successors(g, &choice, s, t).iter().any(|&x| good.contains(x)) {
                    good.insert(s);
                }
            }
            if good.count_ones(..) == before {
                break;
            }
        }
        for o in 0..g.num_observations() {
            if !win.contains(o) && class_closure(g, &choice, o, t).ones().all(|s| good.contains(s)) {
                win.insert(o);
            }
        }
    }
    win
}

/// Searches strategies with one or two memory elements over a fully
/// available model for an almost-sure LimAvg = 1 winner. Action supports
/// range over all non-empty subsets; updates are deterministic and
/// enumerated for every non-initial observation.
pub fn brute_force_limavg1(g: &Pomdp, r: &RewardFn) -> Option<FiniteMemoryStrategy> {
    let na = g.num_actions();
    let supports: Vec<Distr> = (1u32..(1 << na))
        .map(|mask| Distr::uniform((0..na).filter(|a| mask & (1 << a) != 0)))
        .collect();
    let o0 = g.obs_of(g.initial());
    let observations: Vec<usize> = (0..g.num_observations()).filter(|&o| o != o0).collect();
    for memory in 1..=2usize {
        let keys: Vec<(usize, usize, usize)> = (0..memory)
            .flat_map(|m| observations.iter().flat_map(move |&o| (0..na).map(move |a| (m, o, a))))
            .collect();
        let mut next_choice = vec![0usize; memory];
        loop {
            for code in 0..memory.pow(keys.len() as u32) {
                let mut update = BTreeMap::new();
                let mut c = code;
                for &k in &keys {
                    update.insert(k, Distr::point(c % memory));
                    c /= memory;
                }
                for m in 0..memory {
                    for a in 0..na {
                        update.insert((m, o0, a), Distr::point(m));
                    }
                }
                let sigma = FiniteMemoryStrategy {
                    memory: (0..memory).map(|m| format!("m{m}")).collect(),
                    initial: 0,
                    next: next_choice.iter().map(|&i| supports[i].clone()).collect(),
                    update,
                };
                let mc = chain::product_chain(g, r, &sigma).expect("enumerated strategies are total");
                if chain::almost_sure_limavg1(&mc, 0).unwrap() {
                    return Some(sigma);
                }
            }
            // Odometer over action supports.
            let mut i = 0;
            while i < memory {
                next_choice[i] += 1;
                if next_choice[i] < supports.len() {
                    break;
                }
                next_choice[i] = 0;
                i += 1;
            }
            if i == memory {
                break;
            }
        }
    }
    None
}

/// Bottom SCCs by pairwise reachability; quadratic, for small chains.
pub fn bottom_classes_naive(mc: &MarkovChain) -> BTreeSet<BTreeSet<usize>> {
    let n = mc.len();
    let reach: Vec<FixedBitSet> = (0..n).map(|i| chain::reachable(mc, i)).collect();
    let mut out = BTreeSet::new();
    for i in 0..n {
        let closed = reach[i].ones().all(|j| reach[j].contains(i));
        if closed {
            out.insert(reach[i].ones().collect());
        }
    }
    out
}

/// Stationary mean of a class by power iteration in floating point, with
/// lazy steps so periodic classes converge.
pub fn mean_by_power_iteration(mc: &MarkovChain, class: &[usize]) -> f64 {
    let mut pi: BTreeMap<usize, f64> = class.iter().map(|&i| (i, 1.0 / class.len() as f64)).collect();
    for _ in 0..20_000 {
        let mut next: BTreeMap<usize, f64> = class.iter().map(|&i| (i, 0.0)).collect();
        for (&i, &p) in &pi {
            *next.get_mut(&i).unwrap() += 0.5 * p;
            for (j, q) in mc.row(i).entries() {
                *next.get_mut(j).unwrap() += 0.5 * p * rational::to_f64(q);
            }
        }
        pi = next;
    }
    pi.iter().map(|(&i, &p)| p * rational::to_f64(&mc.expected_reward(i).unwrap())).sum()
}
