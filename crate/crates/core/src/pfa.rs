//! Probabilistic finite automata and the two PFA → POMDP constructions.
//!
//! Both constructions are blind: every state of the PFA part shares one
//! observation. Because a POMDP here must start in a state with an
//! observation of its own, each construction is prefixed with a fresh state
//! `start` whose every action leads to the construction's initial state with
//! probability 1. It is transient, so it never influences a mean payoff, but
//! strategies spend one action on it (see [`block_strategy`]).
//!
//! Actions the constructions forbid lead to an explicit losing sink that
//! shares the blind observation and loops on every action with reward 0.

use std::collections::BTreeMap;

use fixedbitset::FixedBitSet;
use num_traits::Zero;
use thiserror::Error;

use crate::model::{Distr, DistrError, ModelError, Pomdp, PomdpParts, RewardFn};
use crate::rational::{self, Q};
use crate::strategy::FiniteMemoryStrategy;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PfaError {
    #[error("automaton has no states or no letters")]
    Empty,
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("state id {0} out of range")]
    BadState(usize),
    #[error("missing transition for state `{state}` letter `{letter}`")]
    MissingRow { state: String, letter: String },
    #[error("transition of state `{state}` letter `{letter}`: {problem}")]
    BadRow { state: String, letter: String, problem: DistrError },
    #[error("unknown letter `{0}`")]
    UnknownLetter(String),
    #[error("the periodic part of a word strategy must be non-empty")]
    EmptyPeriod,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A PFA `(S, Σ, δ, F, s₀)` with total transition rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pfa {
    states: Vec<String>,
    alphabet: Vec<String>,
    initial: usize,
    finals: FixedBitSet,
    /// `trans[s][a]`.
    trans: Vec<Vec<Distr>>,
}

fn check_names(names: &[String]) -> Result<(), PfaError> {
    let mut seen = std::collections::HashSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(PfaError::DuplicateName(n.clone()));
        }
    }
    Ok(())
}

impl Pfa {
    pub fn new(
        states: Vec<String>,
        alphabet: Vec<String>,
        initial: usize,
        finals: impl IntoIterator<Item = usize>,
        trans: Vec<Vec<Distr>>,
    ) -> Result<Pfa, PfaError> {
        let rows = trans.into_iter().map(|r| r.into_iter().map(Some).collect()).collect();
        Pfa::build(states, alphabet, initial, finals, rows)
    }

    /// Like [`Pfa::new`] but missing rows are allowed; they are completed
    /// with a fresh rejecting absorbing state `dead` (only added if needed).
    pub fn from_partial(
        states: Vec<String>,
        alphabet: Vec<String>,
        initial: usize,
        finals: impl IntoIterator<Item = usize>,
        mut trans: Vec<Vec<Option<Distr>>>,
    ) -> Result<Pfa, PfaError> {
        let mut states = states;
        if trans.iter().any(|r| r.len() < alphabet.len() || r.iter().any(Option::is_none)) {
            let mut name = "dead".to_string();
            while states.contains(&name) {
                name.push('_');
            }
            let dead = states.len();
            states.push(name);
            for row in trans.iter_mut() {
                row.resize(alphabet.len(), None);
                for d in row.iter_mut() {
                    if d.is_none() {
                        *d = Some(Distr::point(dead));
                    }
                }
            }
            trans.push(vec![Some(Distr::point(dead)); alphabet.len()]);
        }
        Pfa::build(states, alphabet, initial, finals, trans)
    }

    fn build(
        states: Vec<String>,
        alphabet: Vec<String>,
        initial: usize,
        finals: impl IntoIterator<Item = usize>,
        trans: Vec<Vec<Option<Distr>>>,
    ) -> Result<Pfa, PfaError> {
        if states.is_empty() || alphabet.is_empty() {
            return Err(PfaError::Empty);
        }
        check_names(&states)?;
        check_names(&alphabet)?;
        let n = states.len();
        if initial >= n {
            return Err(PfaError::BadState(initial));
        }
        let mut f = FixedBitSet::with_capacity(n);
        for s in finals {
            if s >= n {
                return Err(PfaError::BadState(s));
            }
            f.insert(s);
        }
        let mut rows = Vec::with_capacity(n);
        for (s, name) in states.iter().enumerate() {
            let row = trans.get(s);
            let mut out = Vec::with_capacity(alphabet.len());
            for (a, letter) in alphabet.iter().enumerate() {
                let missing = || PfaError::MissingRow { state: name.clone(), letter: letter.clone() };
                let d = row.and_then(|r| r.get(a)).and_then(|d| d.clone()).ok_or_else(missing)?;
                if let Some(problem) = d.problems(n).into_iter().next() {
                    return Err(PfaError::BadRow { state: name.clone(), letter: letter.clone(), problem });
                }
                out.push(d);
            }
            rows.push(out);
        }
        if trans.len() > n {
            return Err(PfaError::BadState(trans.len() - 1));
        }
        Ok(Pfa { states, alphabet, initial, finals: f, trans: rows })
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_letters(&self) -> usize {
        self.alphabet.len()
    }

    pub fn state_name(&self, s: usize) -> &str {
        &self.states[s]
    }

    pub fn letter_name(&self, a: usize) -> &str {
        &self.alphabet[a]
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn is_final(&self, s: usize) -> bool {
        self.finals.contains(s)
    }

    pub fn finals(&self) -> impl Iterator<Item = usize> + '_ {
        self.finals.ones()
    }

    pub fn delta(&self, s: usize, a: usize) -> &Distr {
        &self.trans[s][a]
    }

    pub fn letter_id(&self, name: &str) -> Option<usize> {
        self.alphabet.iter().position(|l| l == name)
    }

    pub fn word(&self, letters: &[&str]) -> Result<Vec<usize>, PfaError> {
        letters.iter().map(|l| self.letter_id(l).ok_or_else(|| PfaError::UnknownLetter(l.to_string()))).collect()
    }

    /// Distribution over states after reading `word` from s₀.
    pub fn distribution_after(&self, word: &[usize]) -> Result<Vec<Q>, PfaError> {
        let mut v = vec![Q::zero(); self.num_states()];
        v[self.initial] = rational::one();
        for &a in word {
            v = self.step(&v, a)?;
        }
        Ok(v)
    }

    /// One distribution-vector update v ↦ v·δ(·, a).
    pub fn step(&self, v: &[Q], a: usize) -> Result<Vec<Q>, PfaError> {
        if a >= self.num_letters() {
            return Err(PfaError::UnknownLetter(format!("#{a}")));
        }
        let mut out = vec![Q::zero(); self.num_states()];
        for (s, p) in v.iter().enumerate() {
            if p.is_zero() {
                continue;
            }
            for (t, q) in self.trans[s][a].entries() {
                out[*t] += p * q;
            }
        }
        Ok(out)
    }

    /// Probability that reading `word` from s₀ ends in F.
    pub fn acceptance_probability(&self, word: &[usize]) -> Result<Q, PfaError> {
        let v = self.distribution_after(word)?;
        Ok(self.finals.ones().map(|s| v[s].clone()).sum())
    }
}

/// A PFA construction as a POMDP with its rewards and the ids of the two
/// fresh actions.
#[derive(Clone, Debug)]
pub struct PfaReduction {
    pub pomdp: Pomdp,
    pub rewards: RewardFn,
    pub dollar: usize,
    pub hash: usize,
    pub sink: usize,
    pub start: usize,
}

fn fresh(taken: &[String], base: &str) -> String {
    let mut name = base.to_string();
    while taken.contains(&name) {
        name.push('_');
    }
    name
}

/// Adds the losing sink: every available action without a row goes there,
/// and the sink loops on every action. The sink takes observation `obs`.
/// `rewards` are per state; the sink gets 0.
pub fn insert_losing_sink(mut parts: PomdpParts, mut rewards: Vec<Q>, obs: usize) -> (PomdpParts, Vec<Q>, usize) {
    let name = fresh(&parts.states, "sink");
    let sink = parts.states.len();
    parts.states.push(name);
    parts.obs_of.push(obs);
    parts.trans.push(Vec::new());
    rewards.push(Q::zero());
    for s in 0..parts.states.len() {
        let av = parts.avail[parts.obs_of[s]].clone();
        for a in av {
            if !parts.trans[s].iter().any(|(b, _)| *b == a) {
                parts.trans[s].push((a, Distr::point(sink)));
            }
        }
    }
    (parts, rewards, sink)
}

struct Blind {
    states: Vec<String>,
    trans: Vec<Vec<(usize, Distr)>>,
    rewards: Vec<Q>,
}

impl Blind {
    fn add(&mut self, name: String, reward: Q) -> usize {
        self.states.push(name);
        self.trans.push(Vec::new());
        self.rewards.push(reward);
        self.states.len() - 1
    }

    /// Prefixes `start`, adds the sink and assembles the POMDP.
    fn finish(mut self, actions: Vec<String>, initial: usize, dollar: usize, hash: usize) -> Result<PfaReduction, PfaError> {
        let start_name = fresh(&self.states, "start");
        let start = self.add(start_name, Q::zero());
        let na = actions.len();
        self.trans[start] = (0..na).map(|a| (a, Distr::point(initial))).collect();
        let mut obs_of = vec![0; self.states.len()];
        obs_of[start] = 1;
        let parts = PomdpParts {
            states: self.states,
            actions,
            observations: vec!["o".into(), "o_start".into()],
            obs_of,
            initial: start,
            avail: vec![(0..na).collect(), (0..na).collect()],
            trans: self.trans,
        };
        let (parts, rewards, sink) = insert_losing_sink(parts, self.rewards, 0);
        let pomdp = Pomdp::new(parts)?;
        Ok(PfaReduction { pomdp, rewards: RewardFn::from_states(rewards), dollar, hash, sink, start })
    }
}

fn actions_with_fresh(p: &Pfa) -> (Vec<String>, usize, usize) {
    let mut actions = p.alphabet.clone();
    let dollar = fresh(&actions, "dollar");
    actions.push(dollar);
    let hash = fresh(&actions, "hash");
    actions.push(hash);
    let n = p.num_letters();
    (actions, n, n + 1)
}

/// The LimAvg > ½ construction: states (s,1) named `s.1` with reward 1 and
/// (s,0) named `s.0` with reward 0, plus `good` (1) and `bad` (0).
/// (s,1) –$→ (s,0); (s,0) –a→ (s′,1) with δ(s,a)(s′); (s,0) –#→ good or bad
/// by finality; good, bad –#→ (s₀,1). Everything else is losing.
pub fn reduce_quantitative(p: &Pfa) -> Result<PfaReduction, PfaError> {
    let (actions, dollar, hash) = actions_with_fresh(p);
    let n = p.num_states();
    let mut b = Blind { states: Vec::new(), trans: Vec::new(), rewards: Vec::new() };
    for s in 0..n {
        b.add(format!("{}.1", p.states[s]), rational::one());
        b.add(format!("{}.0", p.states[s]), Q::zero());
    }
    let names: Vec<String> = b.states.clone();
    let good = b.add(fresh(&names, "good"), rational::one());
    let bad = b.add(fresh(&names, "bad"), Q::zero());
    let one = |s: usize| 2 * s;
    let zero = |s: usize| 2 * s + 1;
    for s in 0..n {
        b.trans[one(s)].push((dollar, Distr::point(zero(s))));
        for a in 0..p.num_letters() {
            let d = p.trans[s][a].entries().iter().map(|(t, q)| (one(*t), q.clone())).collect();
            b.trans[zero(s)].push((a, Distr::from_raw(d)));
        }
        b.trans[zero(s)].push((hash, Distr::point(if p.is_final(s) { good } else { bad })));
    }
    b.trans[good].push((hash, Distr::point(one(p.initial))));
    b.trans[bad].push((hash, Distr::point(one(p.initial))));
    b.finish(actions, one(p.initial), dollar, hash)
}

/// The value-1 construction: the PFA's own states (reward 0) plus `good`
/// (reward 1) and `bad` (0). s –a→ δ(s,a); s –$→ good or bad by finality;
/// good, bad –$→ s₀; good –#→ good, bad –#→ bad. Everything else is losing.
pub fn reduce_value1(p: &Pfa) -> Result<PfaReduction, PfaError> {
    let (actions, dollar, hash) = actions_with_fresh(p);
    let n = p.num_states();
    let mut b = Blind { states: Vec::new(), trans: Vec::new(), rewards: Vec::new() };
    for s in 0..n {
        b.add(p.states[s].clone(), Q::zero());
    }
    let good = b.add(fresh(&p.states, "good"), rational::one());
    let bad = b.add(fresh(&p.states, "bad"), Q::zero());
    for s in 0..n {
        for a in 0..p.num_letters() {
            b.trans[s].push((a, p.trans[s][a].clone()));
        }
        b.trans[s].push((dollar, Distr::point(if p.is_final(s) { good } else { bad })));
    }
    for x in [good, bad] {
        b.trans[x].push((dollar, Distr::point(p.initial)));
        b.trans[x].push((hash, Distr::point(x)));
    }
    b.finish(actions, p.initial, dollar, hash)
}

/// The pure blind strategy playing u·v^ω: memory `w0 … w{|u|+|v|-1}`,
/// position i plays letter i and moves to i+1, the last position wrapping
/// to |u|. Updates ignore the observation.
pub fn word_strategy(g: &Pomdp, u: &[usize], v: &[usize]) -> Result<FiniteMemoryStrategy, PfaError> {
    if v.is_empty() {
        return Err(PfaError::EmptyPeriod);
    }
    let word: Vec<usize> = u.iter().chain(v).copied().collect();
    if let Some(&a) = word.iter().find(|&&a| a >= g.num_actions()) {
        return Err(PfaError::UnknownLetter(format!("#{a}")));
    }
    let len = word.len();
    let mut update = BTreeMap::new();
    for (i, &a) in word.iter().enumerate() {
        let j = if i + 1 == len { u.len() } else { i + 1 };
        for o in 0..g.num_observations() {
            update.insert((i, o, a), Distr::point(j));
        }
    }
    Ok(FiniteMemoryStrategy {
        memory: (0..len).map(|i| format!("w{i}")).collect(),
        initial: 0,
        next: word.iter().map(|&a| Distr::point(a)).collect(),
        update,
    })
}

/// One period for the LimAvg > ½ construction: $w₁ $w₂ … $wₙ $ # #.
/// Each letter is read from a `·.0` state after a `$`; the final `$` moves
/// to the `·.0` copy of the reached state so that `#` can route to
/// good/bad, and the second `#` returns to (s₀,1).
pub fn quantitative_block(r: &PfaReduction, word: &[usize]) -> Vec<usize> {
    let mut block = Vec::with_capacity(2 * word.len() + 3);
    for &a in word {
        block.push(r.dollar);
        block.push(a);
    }
    block.extend([r.dollar, r.hash, r.hash]);
    block
}

/// The interleaving $w₁ … $wₙ # # without the closing `$`.
pub fn literal_block(r: &PfaReduction, word: &[usize]) -> Vec<usize> {
    let mut block = Vec::with_capacity(2 * word.len() + 2);
    for &a in word {
        block.push(r.dollar);
        block.push(a);
    }
    block.extend([r.hash, r.hash]);
    block
}

/// Word strategy for a construction: one arbitrary action to leave `start`,
/// then `block` forever.
pub fn block_strategy(r: &PfaReduction, block: &[usize]) -> Result<FiniteMemoryStrategy, PfaError> {
    word_strategy(&r.pomdp, &[r.dollar], block)
}

/// Mean payoff of one period of [`quantitative_block`] in expectation:
/// (n + 1 + μ) / (2n + 3) for a word of length n accepted with probability μ.
pub fn quantitative_block_mean(n: usize, mu: &Q) -> Q {
    let n = n as i64;
    (rational::int(n + 1) + mu) / rational::int(2 * n + 3)
}
