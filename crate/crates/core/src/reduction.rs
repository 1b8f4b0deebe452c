//! The belief-observation POMDP red(G).
//!
//! Every state of red(G) carries a collapsed memory (Y, W, R, A) in its
//! observation, so the controller always knows the belief. Action-selection
//! states `(s, cm)` play original actions; memory-selection states
//! `(s′, Y′, a, cm)` pick the next collapsed memory. Anything not enabled
//! leads to an absorbing reward-0 sink. Only the fragment reachable from the
//! fresh initial state is built.
//!
//! Collapsed memories are stored with W and R restricted to Y: the enabling
//! conditions only ever look at W and R on the current belief, so values
//! outside it never matter. Along enabled moves W is forced to be all-ones
//! on the belief (every state of Y′ has a predecessor in Y), so memory
//! actions whose W is not all-ones on Y′ can only lead to the sink; they are
//! left out of the memory-selection availability.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use fixedbitset::FixedBitSet;
use num_traits::One;
use thiserror::Error;

use crate::collapse::{CollapsedMemory, MemoryFingerprint};
use crate::model::{self, Distr, ModelError, Pomdp, PomdpParts, RewardFn, RewardRow, StateSet};
use crate::rational::{int, Q};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RedState {
    Initial,
    Sink,
    ActionSel { state: usize, memory: usize },
    MemorySel { state: usize, context: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RedObs {
    Initial,
    Sink,
    Memory(usize),
    Context(usize),
}

/// The observation (Y′, a, cm) of memory-selection states.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Context {
    pub belief: StateSet,
    pub action: usize,
    pub memory: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct ReduceConfig {
    pub max_states: usize,
}

impl Default for ReduceConfig {
    fn default() -> Self {
        ReduceConfig { max_states: 1_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReduceError {
    #[error("reduction exceeds the state cap of {limit} ({reached} states materialised so far)")]
    Capacity { limit: usize, reached: usize },
    #[error("no reward for state `{state}` action `{action}`")]
    MissingReward { state: String, action: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug)]
pub struct BeliefObsPomdp {
    pub pomdp: Pomdp,
    pub rewards: RewardFn,
    pub states: Vec<RedState>,
    pub observations: Vec<RedObs>,
    /// Interned collapsed memories; memory `k` is action `base_actions + k`.
    pub memories: Vec<CollapsedMemory>,
    pub contexts: Vec<Context>,
    pub base_actions: usize,
    pub sink: usize,
    memory_index: HashMap<CollapsedMemory, usize>,
    context_index: HashMap<Context, usize>,
    memory_obs: Vec<Option<usize>>,
    context_obs: Vec<usize>,
}

impl BeliefObsPomdp {
    pub fn initial_obs(&self) -> usize {
        self.pomdp.obs_of(self.pomdp.initial())
    }

    pub fn sink_obs(&self) -> usize {
        self.pomdp.obs_of(self.sink)
    }

    pub fn memory_action(&self, k: usize) -> usize {
        self.base_actions + k
    }

    pub fn action_memory(&self, a: usize) -> Option<usize> {
        a.checked_sub(self.base_actions)
    }

    pub fn find_memory(&self, cm: &CollapsedMemory) -> Option<usize> {
        self.memory_index.get(cm).copied()
    }

    pub fn find_context(&self, belief: &StateSet, action: usize, memory: usize) -> Option<usize> {
        self.context_index.get(&Context { belief: belief.clone(), action, memory }).copied()
    }

    /// Observation of the action-selection states carrying memory `k`, if
    /// any such state is reachable.
    pub fn memory_obs(&self, k: usize) -> Option<usize> {
        self.memory_obs[k]
    }

    pub fn context_obs(&self, c: usize) -> usize {
        self.context_obs[c]
    }

    /// `S̃_wcs`: action-selection states (s, cm) with W(s) = R(s) = 1.
    pub fn winning_recurrent(&self) -> StateSet {
        let mut out = FixedBitSet::with_capacity(self.states.len());
        for (i, st) in self.states.iter().enumerate() {
            if let RedState::ActionSel { state, memory } = *st {
                let fp = &self.memories[memory].fp;
                if fp.win.contains(state) && fp.rec.contains(state) {
                    out.insert(i);
                }
            }
        }
        out
    }

    /// Every state except the sink.
    pub fn good_states(&self) -> StateSet {
        let mut all = FixedBitSet::with_capacity(self.states.len());
        all.insert_range(..);
        all.set(self.sink, false);
        all
    }

    pub fn stats(&self) -> ReductionStats {
        ReductionStats {
            states: self.pomdp.num_states(),
            observations: self.pomdp.num_observations(),
            transitions: self.pomdp.transition_count(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReductionStats {
    pub states: usize,
    pub observations: usize,
    pub transitions: usize,
}

impl fmt::Display for ReductionStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "states {} observations {} transitions {}", self.states, self.observations, self.transitions)
    }
}

/// (Y,W,R,A) ∈ M_Win iff W(s) = 1 for every s ∈ Y.
pub fn in_m_win(cm: &CollapsedMemory) -> bool {
    cm.belief.is_subset(&cm.fp.win)
}

/// a is enabled at cm iff a ∈ A and every ŝ ∈ Y with W(ŝ) = R(ŝ) = 1 has
/// r(ŝ, a) = 1.
pub fn enabled_action(cm: &CollapsedMemory, a: usize, r: &RewardFn) -> bool {
    cm.fp.acts.contains(a)
        && cm
            .belief
            .ones()
            .filter(|&s| cm.fp.win.contains(s) && cm.fp.rec.contains(s))
            .all(|s| r.get(s, a).is_some_and(|v| v.is_one()))
}

/// cm′ is enabled after (Y′, a, cm) iff for every ŝ ∈ Y and every
/// ŝ′ ∈ supp δ(ŝ,a) ∩ Y′: W(ŝ) = 1 ⇒ W′(ŝ′) = 1 and R(ŝ) = 1 ⇒ R′(ŝ′) = 1.
pub fn enabled_memory_action(g: &Pomdp, next: &CollapsedMemory, belief: &StateSet, a: usize, cm: &CollapsedMemory) -> bool {
    cm.belief.ones().all(|s| {
        let w = cm.fp.win.contains(s);
        let rc = cm.fp.rec.contains(s);
        if !w && !rc {
            return true;
        }
        let Some(d) = g.delta(s, a) else { return true };
        d.support()
            .filter(|&t| belief.contains(t))
            .all(|t| (!w || next.fp.win.contains(t)) && (!rc || next.fp.rec.contains(t)))
    })
}

/// Candidate memories for belief `y` in canonical form: W = Y, R ⊆ Y, A a
/// non-empty subset of the actions available at Y's observation; ordered by
/// the bit pattern of R, then of A.
pub fn memories_for(g: &Pomdp, y: &StateSet, limit: usize) -> Result<Vec<CollapsedMemory>, ReduceError> {
    let members: Vec<usize> = y.ones().collect();
    let av = g.avail(g.obs_of(members[0]));
    let too_big = |bits: usize| bits >= 40;
    if too_big(members.len() + av.len()) || (1usize << members.len()) * ((1usize << av.len()) - 1) > limit {
        return Err(ReduceError::Capacity { limit, reached: 0 });
    }
    let mut out = Vec::new();
    for rmask in 0u64..(1u64 << members.len()) {
        let rec = model::set_of(g.num_states(), members.iter().enumerate().filter(|(i, _)| rmask >> i & 1 == 1).map(|(_, &s)| s));
        for amask in 1u64..(1u64 << av.len()) {
            let acts = model::set_of(g.num_actions(), av.iter().enumerate().filter(|(i, _)| amask >> i & 1 == 1).map(|(_, &a)| a));
            out.push(CollapsedMemory {
                belief: y.clone(),
                fp: MemoryFingerprint { win: y.clone(), rec: rec.clone(), acts },
            });
        }
    }
    Ok(out)
}

struct Builder<'a> {
    g: &'a Pomdp,
    limit: usize,
    states: Vec<RedState>,
    state_index: HashMap<RedState, usize>,
    observations: Vec<RedObs>,
    obs_index: HashMap<RedObs, usize>,
    obs_avail: Vec<Vec<usize>>,
    memories: Vec<CollapsedMemory>,
    memory_index: HashMap<CollapsedMemory, usize>,
    contexts: Vec<Context>,
    context_index: HashMap<Context, usize>,
    candidates: HashMap<StateSet, Vec<usize>>,
    queue: VecDeque<usize>,
}

impl<'a> Builder<'a> {
    fn memory(&mut self, cm: CollapsedMemory) -> usize {
        if let Some(&k) = self.memory_index.get(&cm) {
            return k;
        }
        self.memories.push(cm.clone());
        self.memory_index.insert(cm, self.memories.len() - 1);
        self.memories.len() - 1
    }

    fn candidates(&mut self, y: &StateSet) -> Result<Vec<usize>, ReduceError> {
        if let Some(c) = self.candidates.get(y) {
            return Ok(c.clone());
        }
        let ks: Vec<usize> = memories_for(self.g, y, self.limit)?.into_iter().map(|cm| self.memory(cm)).collect();
        self.candidates.insert(y.clone(), ks.clone());
        Ok(ks)
    }

    fn observation(&mut self, o: RedObs, avail: impl FnOnce(&mut Self) -> Result<Vec<usize>, ReduceError>) -> Result<usize, ReduceError> {
        if let Some(&id) = self.obs_index.get(&o) {
            return Ok(id);
        }
        let av = avail(self)?;
        self.observations.push(o);
        self.obs_avail.push(av);
        self.obs_index.insert(o, self.observations.len() - 1);
        Ok(self.observations.len() - 1)
    }

    fn state(&mut self, st: RedState) -> Result<usize, ReduceError> {
        if let Some(&id) = self.state_index.get(&st) {
            return Ok(id);
        }
        if self.states.len() >= self.limit {
            return Err(ReduceError::Capacity { limit: self.limit, reached: self.states.len() });
        }
        self.states.push(st);
        self.state_index.insert(st, self.states.len() - 1);
        self.queue.push_back(self.states.len() - 1);
        Ok(self.states.len() - 1)
    }

    fn context(&mut self, ctx: Context) -> usize {
        if let Some(&c) = self.context_index.get(&ctx) {
            return c;
        }
        self.contexts.push(ctx.clone());
        self.context_index.insert(ctx, self.contexts.len() - 1);
        self.contexts.len() - 1
    }
}

/// Builds the reachable fragment of red(G) breadth-first from the fresh
/// initial state. All distributions are uniform over their support.
pub fn reduce(g: &Pomdp, r: &RewardFn, cfg: ReduceConfig) -> Result<BeliefObsPomdp, ReduceError> {
    if let Some(model::Violation::MissingReward { state, action }) =
        model::validate_rewards(g, r).into_iter().find(|v| matches!(v, model::Violation::MissingReward { .. }))
    {
        return Err(ReduceError::MissingReward { state, action });
    }
    let na = g.num_actions();
    let mut b = Builder {
        g,
        limit: cfg.max_states,
        states: Vec::new(),
        state_index: HashMap::new(),
        observations: Vec::new(),
        obs_index: HashMap::new(),
        obs_avail: Vec::new(),
        memories: Vec::new(),
        memory_index: HashMap::new(),
        contexts: Vec::new(),
        context_index: HashMap::new(),
        candidates: HashMap::new(),
        queue: VecDeque::new(),
    };
    let start = g.state_set([g.initial()]);
    let initial_memories = b.candidates(&start)?;
    b.state(RedState::Initial)?;
    b.state(RedState::Sink)?;
    b.observation(RedObs::Initial, |_| Ok(initial_memories.iter().map(|k| na + k).collect()))?;
    b.observation(RedObs::Sink, |_| Ok(Vec::new()))?;

    let mut obs_of: Vec<usize> = Vec::new();
    let mut trans: Vec<Vec<(usize, Distr)>> = Vec::new();
    let mut rewards: Vec<RewardRow> = Vec::new();
    while let Some(i) = b.queue.pop_front() {
        let st = b.states[i];
        let (o, rows, reward) = match st {
            RedState::Initial => {
                let mut rows = Vec::new();
                for &k in &initial_memories {
                    let t = b.state(RedState::ActionSel { state: g.initial(), memory: k })?;
                    rows.push((na + k, Distr::point(t)));
                }
                (b.obs_index[&RedObs::Initial], rows, RewardRow::Uniform(Q::one()))
            }
            RedState::Sink => (b.obs_index[&RedObs::Sink], Vec::new(), RewardRow::Uniform(int(0))),
            RedState::ActionSel { state: s, memory: k } => {
                let cm = b.memories[k].clone();
                let go = g.obs_of(s);
                let o = b.observation(RedObs::Memory(k), |_| Ok(g.avail(go).to_vec()))?;
                let mut rows = Vec::new();
                let mut rew = Vec::new();
                for &a in g.avail(go) {
                    rew.push((a, r.get(s, a).cloned().expect("rewards checked above")));
                    if !enabled_action(&cm, a, r) {
                        rows.push((a, Distr::point(b.sink_id())));
                        continue;
                    }
                    let post = model::post(g, &cm.belief, a);
                    let mut targets = Vec::new();
                    for t in g.delta(s, a).expect("valid model").support() {
                        let mut y2 = post.clone();
                        y2.intersect_with(&g.class(g.obs_of(t)));
                        let c = b.context(Context { belief: y2, action: a, memory: k });
                        targets.push(b.state(RedState::MemorySel { state: t, context: c })?);
                    }
                    rows.push((a, Distr::uniform(targets)));
                }
                (o, rows, RewardRow::PerAction(rew))
            }
            RedState::MemorySel { state: t, context: c } => {
                let ctx = b.contexts[c].clone();
                let cands = b.candidates(&ctx.belief)?;
                let o = b.observation(RedObs::Context(c), |_| Ok(cands.iter().map(|k| na + k).collect()))?;
                let cm = b.memories[ctx.memory].clone();
                let mut rows = Vec::new();
                for &k2 in &cands {
                    let target = if enabled_memory_action(g, &b.memories[k2], &ctx.belief, ctx.action, &cm) {
                        b.state(RedState::ActionSel { state: t, memory: k2 })?
                    } else {
                        b.sink_id()
                    };
                    rows.push((na + k2, Distr::point(target)));
                }
                (o, rows, RewardRow::Uniform(Q::one()))
            }
        };
        if obs_of.len() <= i {
            obs_of.resize(i + 1, 0);
            trans.resize(i + 1, Vec::new());
            rewards.resize(i + 1, RewardRow::Uniform(int(0)));
        }
        obs_of[i] = o;
        trans[i] = rows;
        rewards[i] = reward;
    }

    let total_actions = na + b.memories.len();
    let sink = b.sink_id();
    let sink_obs = b.obs_index[&RedObs::Sink];
    b.obs_avail[sink_obs] = (0..total_actions).collect();
    trans[sink] = (0..total_actions).map(|a| (a, Distr::point(sink))).collect();

    let mut actions: Vec<String> = (0..na).map(|a| g.action_name(a).to_string()).collect();
    actions.extend((0..b.memories.len()).map(|k| format!("@m{k}")));
    let state_names = b
        .states
        .iter()
        .map(|st| match *st {
            RedState::Initial => "init".to_string(),
            RedState::Sink => "sink".to_string(),
            RedState::ActionSel { state, memory } => format!("{}@m{memory}", g.state_name(state)),
            RedState::MemorySel { state, context } => format!("{}@c{context}", g.state_name(state)),
        })
        .collect();
    let obs_names = b
        .observations
        .iter()
        .map(|o| match *o {
            RedObs::Initial => "o_init".to_string(),
            RedObs::Sink => "o_sink".to_string(),
            RedObs::Memory(k) => format!("m{k}"),
            RedObs::Context(c) => format!("c{c}"),
        })
        .collect();
    let pomdp = Pomdp::new(PomdpParts {
        states: state_names,
        actions,
        observations: obs_names,
        obs_of,
        initial: 0,
        avail: b.obs_avail,
        trans,
    })?;
    let mut memory_obs = vec![None; b.memories.len()];
    let mut context_obs = vec![0; b.contexts.len()];
    for (o, tag) in b.observations.iter().enumerate() {
        match *tag {
            RedObs::Memory(k) => memory_obs[k] = Some(o),
            RedObs::Context(c) => context_obs[c] = o,
            _ => {}
        }
    }
    Ok(BeliefObsPomdp {
        pomdp,
        rewards: RewardFn::new(rewards),
        states: b.states,
        observations: b.observations,
        memories: b.memories,
        contexts: b.contexts,
        base_actions: na,
        sink,
        memory_index: b.memory_index,
        context_index: b.context_index,
        memory_obs,
        context_obs,
    })
}

impl<'a> Builder<'a> {
    fn sink_id(&self) -> usize {
        self.state_index[&RedState::Sink]
    }
}
