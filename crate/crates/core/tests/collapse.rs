mod common;

use std::collections::BTreeSet;

use limavg::chain::{self, MarkovChain};
use limavg::collapse::{self, Collapsed, MemoryFingerprint};
use limavg::model::{self, Distr, Pomdp, RewardFn};
use limavg::solver;
use limavg::FiniteMemoryStrategy;
use proptest::prelude::*;

use common::Shape;

/// Memory count of collapse(σ₄) on Example 1, frozen after the first run.
const SIGMA4_COLLAPSED_MEMORY: usize = 3;

fn set(g: &Pomdp, names: &[&str]) -> fixedbitset::FixedBitSet {
    g.state_set(common::state_ids(g, names))
}

#[test]
fn sigma4_fingerprints() {
    let (g, r) = common::example1();
    let s4 = common::strategy(&g, "sigma4.strategy");
    let fp = collapse::fingerprints(&g, &r, &s4).unwrap();
    let (ma, mb) = (s4.memory_id("ma").unwrap(), s4.memory_id("mb").unwrap());
    let u = ["X", "X'", "Y", "Y'", "Z", "Z'"];
    let mut u_s0 = u.to_vec();
    u_s0.push("s0");
    assert_eq!(fp[ma].win, set(&g, &u_s0));
    assert_eq!(fp[mb].win, set(&g, &u));
    assert_eq!(fp[ma].rec, set(&g, &["X", "Z'"]));
    assert_eq!(fp[mb].rec, set(&g, &["X'", "Z"]));
    assert_eq!(fp[ma].acts, model::set_of(g.num_actions(), [g.action_id("a").unwrap()]));
    assert_eq!(fp[mb].acts, model::set_of(g.num_actions(), [g.action_id("b").unwrap()]));
}

#[test]
fn sigma4_collapse_is_winning_and_small() {
    let (g, r) = common::example1();
    let s4 = common::strategy(&g, "sigma4.strategy");
    let c = collapse::collapse(&g, &r, &s4).unwrap();
    assert_eq!(c.strategy.num_memory(), SIGMA4_COLLAPSED_MEMORY);
    assert!(collapse::within_memory_bound(&g, c.strategy.num_memory()));
    assert_eq!(collapse::memory_bound_exponent(&g), 3 * 7 + 2);
    assert!(solver::validate_strategy(&g, &r, &c.strategy).unwrap().valid);
    check_collapse_properties(&g, &r, &c);
}

#[test]
fn everything_wins_on_a_reward_one_chain() {
    let text = "states: s0 p q\nactions: a\nobservations: o0 o\nobs: s0=o0 p=o q=o\ninit: s0\n\
                trans:\n  s0 a -> p:1\n  p a -> p:1/2 q:1/2\n  q a -> p:1\nreward:\n  s0 a = 1\n  p a = 1\n  q a = 1\n";
    let (g, r) = limavg::format::parse_model(text).unwrap();
    let r = r.unwrap();
    let sigma = FiniteMemoryStrategy::stationary(&g, Distr::point(0));
    let fp = collapse::fingerprints(&g, &r, &sigma).unwrap();
    assert_eq!(fp[0].win, g.state_set([0, 1, 2]));
    assert_eq!(fp[0].rec, g.state_set([1, 2]));
}

#[test]
fn pure_strategy_on_deterministic_model_follows_beliefs() {
    // A deterministic cycle p → q → r → p seen through two observations.
    let text = "states: s0 p q r\nactions: a\nobservations: o0 x y\nobs: s0=o0 p=x q=y r=x\ninit: s0\n\
                trans:\n  s0 a -> p:1\n  p a -> q:1\n  q a -> r:1\n  r a -> p:1\n\
                reward:\n  s0 a = 1\n  p a = 1\n  q a = 1\n  r a = 1\n";
    let (g, r) = limavg::format::parse_model(text).unwrap();
    let r = r.unwrap();
    let sigma = FiniteMemoryStrategy::stationary(&g, Distr::point(0));
    let c = collapse::collapse(&g, &r, &sigma).unwrap();
    // Belief automaton: {s0} → {p} → {q} → {r} → {p}.
    let beliefs: Vec<BTreeSet<usize>> = c.graph.vertices.iter().map(|v| v.belief.ones().collect()).collect();
    let expected: Vec<BTreeSet<usize>> = [0, 1, 2, 3].iter().map(|&s| BTreeSet::from([s])).collect();
    assert_eq!(beliefs, expected);
    let edges: Vec<(usize, usize, usize)> = c.graph.edges.iter().copied().collect();
    assert_eq!(edges, vec![(0, 0, 1), (1, 0, 2), (2, 0, 3), (3, 0, 1)]);
}

#[test]
fn fixture_strategies_respect_the_bound() {
    let (g1, r1) = common::example1();
    let (g2, r2) = common::example2();
    for i in 1..=4 {
        for (g, r, name) in [(&g1, &r1, format!("sigma{i}.strategy")), (&g2, &r2, format!("ex2_sigma{i}.strategy"))] {
            let sigma = common::strategy(g, &name);
            let c = collapse::collapse(g, r, &sigma).unwrap();
            assert!(collapse::within_memory_bound(g, c.strategy.num_memory()), "{name}");
            let before = solver::validate_strategy(g, r, &sigma).unwrap().valid;
            let after = solver::validate_strategy(g, r, &c.strategy).unwrap().valid;
            if before {
                assert!(after, "{name}");
                check_collapse_properties(g, r, &c);
            }
            if i < 4 {
                // Memoryless: the belief-indexed version has the same verdict.
                assert_eq!(before, after, "{name}");
            }
        }
    }
}

/// Edge monotonicity of W and R, the reward-1 run property inside
/// recurrent classes and reachability of pseudo-recurrent states.
fn check_collapse_properties(g: &Pomdp, r: &RewardFn, c: &Collapsed) {
    let vs = &c.graph.vertices;
    for &(v, a, t) in &c.graph.edges {
        let y2 = &vs[t].belief;
        for s in vs[v].belief.ones() {
            let Some(d) = g.delta(s, a) else { continue };
            for s2 in d.support().filter(|s2| y2.contains(*s2)) {
                if vs[v].fp.win.contains(s) {
                    assert!(vs[t].fp.win.contains(s2), "W drops along {v} -{a}-> {t}");
                }
                if vs[v].fp.rec.contains(s) {
                    assert!(vs[t].fp.rec.contains(s2), "R drops along {v} -{a}-> {t}");
                }
            }
        }
    }
    let mc = chain::product_chain(g, r, &c.strategy).unwrap();
    let wr = |i: usize| {
        let l = mc.label(i).unwrap();
        vs[l.memory].fp.win.contains(l.state) && vs[l.memory].fp.rec.contains(l.state)
    };
    for class in chain::reachable_classes(&mc, 0) {
        for &i in &class {
            if wr(i) {
                assert!(mc.played(i).iter().all(|p| p.reward == Some(limavg::rational::one())));
            }
        }
    }
    let pseudo_recurrent = |i: usize| {
        let l = mc.label(i).unwrap();
        vs[l.memory].fp.rec.contains(l.state)
    };
    for i in chain::reachable(&mc, 0).ones() {
        assert!(chain::reachable(&mc, i).ones().any(pseudo_recurrent), "no R-state reachable from {i}");
    }
}

/// W and R recomputed one product-chain state at a time.
fn fingerprints_by_state(g: &Pomdp, sigma: &FiniteMemoryStrategy, mc: &MarkovChain) -> Vec<MemoryFingerprint> {
    let recurrent: BTreeSet<usize> = chain::recurrent_classes(mc).into_iter().flatten().collect();
    let mut out: Vec<MemoryFingerprint> = sigma
        .next
        .iter()
        .map(|d| MemoryFingerprint {
            win: g.state_set([]),
            rec: g.state_set([]),
            acts: model::set_of(g.num_actions(), d.support()),
        })
        .collect();
    for i in 0..mc.len() {
        let l = mc.label(i).unwrap();
        if chain::almost_sure_limavg1(mc, i).unwrap() {
            out[l.memory].win.insert(l.state);
        }
        if recurrent.contains(&i) {
            out[l.memory].rec.insert(l.state);
        }
    }
    out
}

fn random_instance(seed: u64, n: usize, memory: usize, p_one: f64) -> (Pomdp, RewardFn, FiniteMemoryStrategy) {
    let mut rng = common::rng(seed);
    let g = common::random_pomdp(&mut rng, Shape { states: n, actions: 2, observations: 2, belief_obs: false, full_avail: true });
    let r = common::random_rewards(&mut rng, &g, p_one);
    let sigma = common::random_strategy(&mut rng, &g, memory);
    (g, r, sigma)
}

proptest! {
    #[test]
    fn fingerprints_match_per_state_recomputation(seed in any::<u64>(), n in 2usize..=4, m in 1usize..=2) {
        let (g, r, sigma) = random_instance(seed, n, m, 0.7);
        let mc = chain::product_chain(&g, &r, &sigma).unwrap();
        prop_assert_eq!(collapse::fingerprints(&g, &r, &sigma).unwrap(), fingerprints_by_state(&g, &sigma, &mc));
    }

    #[test]
    fn projection_edges_match_the_three_conditions(seed in any::<u64>(), n in 2usize..=4, m in 1usize..=3) {
        let (g, r, sigma) = random_instance(seed, n, m, 0.7);
        let fp = collapse::fingerprints(&g, &r, &sigma).unwrap();
        let graph = collapse::projection_graph(&g, &sigma, &fp);
        let vs = &graph.vertices;
        let mut expected = BTreeSet::new();
        for (v, x) in vs.iter().enumerate() {
            for (t, y) in vs.iter().enumerate() {
                for a in x.fp.acts.ones() {
                    for o in 0..g.num_observations() {
                        let y2 = model::update_set(&g, &x.belief, a, o);
                        if y2.is_clear() || y2 != y.belief {
                            continue;
                        }
                        let realized = (0..sigma.num_memory()).filter(|&m1| fp[m1] == x.fp).any(|m1| {
                            (0..sigma.num_memory())
                                .filter(|&m2| fp[m2] == y.fp)
                                .any(|m2| sigma.update_for(m1, o, a).is_some_and(|u| u.contains(m2)))
                        });
                        if realized {
                            expected.insert((v, a, t));
                        }
                    }
                }
            }
        }
        prop_assert_eq!(&graph.edges, &expected);
        prop_assert!(vs.iter().all(|v| !v.belief.is_clear()));
        prop_assert!(collapse::within_memory_bound(&g, vs.len()));
    }

    #[test]
    fn collapse_preserves_winning(seed in any::<u64>(), n in 2usize..=4, m in 1usize..=2) {
        let (g, r, sigma) = random_instance(seed, n, m, 0.9);
        let winning = solver::validate_strategy(&g, &r, &sigma).unwrap().valid;
        let c = collapse::collapse(&g, &r, &sigma).unwrap();
        if winning {
            prop_assert!(solver::validate_strategy(&g, &r, &c.strategy).unwrap().valid);
            check_collapse_properties(&g, &r, &c);
        }
        if m == 1 {
            prop_assert_eq!(winning, solver::validate_strategy(&g, &r, &c.strategy).unwrap().valid);
        }
    }
}

#[test]
fn seeded_winning_strategies_survive_collapse() {
    let mut winners = 0;
    for seed in 0..300u64 {
        let (g, r, sigma) = random_instance(seed, 2 + (seed % 3) as usize, 1 + (seed % 2) as usize, 0.9);
        if !solver::validate_strategy(&g, &r, &sigma).unwrap().valid {
            continue;
        }
        winners += 1;
        let c = collapse::collapse(&g, &r, &sigma).unwrap();
        assert!(solver::validate_strategy(&g, &r, &c.strategy).unwrap().valid, "seed {seed}");
        check_collapse_properties(&g, &r, &c);
    }
    assert!(winners >= 30, "only {winners} winning samples");
}
