//! The decision procedure for almost-sure LimAvg = 1 under finite memory,
//! witness synthesis, the strategy conversions between G and red(G), and the
//! independent validator.
//!
//! Pipeline: red(G) → Y* = almost_safe(all but the sink) → G̃ =
//! restrict_safe(Y*) → W̃ = almost_reach(G̃, S̃_wcs). The answer is YES iff
//! the initial observation lies in W̃. Every YES is re-checked on G itself
//! through the product chain before it is reported.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::{self, Write as _};
use std::time::{Duration, Instant};

use fixedbitset::FixedBitSet;
use thiserror::Error;

use crate::chain::{self, ChainError, ChainLabel};
use crate::collapse::{self, Collapsed};
use crate::fixpoint::{self, FixpointError, ObsSet, ReachResult, Restricted, SafeResult};
use crate::model::{Distr, Pomdp, RewardFn, StateSet};
use crate::rational::{self, Q};
use crate::reduction::{self, BeliefObsPomdp, ReduceConfig, ReduceError};
use crate::strategy::{FiniteMemoryStrategy, MemorylessStrategy};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Yes,
    No,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Yes => "YES",
            Verdict::No => "NO",
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolveConfig {
    pub max_states: usize,
    /// Keep every fixpoint iterate (including the inner μX layers).
    pub trace: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig { max_states: ReduceConfig::default().max_states, trace: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConversionError {
    #[error("strategy is undefined at observation `{0}`")]
    Undefined(String),
    #[error("the initial choice must be a single memory action, got {0}")]
    InitialNotPoint(String),
    #[error("memory `{0}` is not a collapsed memory of the reduced model")]
    NotCollapsed(String),
    #[error("memories collapse onto observation `{0}` with different distributions")]
    Conflict(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SolveError {
    #[error("reduction exceeds the state cap of {limit} ({reached} states materialised so far)")]
    Capacity { limit: usize, reached: usize },
    #[error(transparent)]
    Reduce(ReduceError),
    #[error(transparent)]
    Fixpoint(#[from] FixpointError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Conversion(#[from] ConversionError),
    #[error("synthesised strategy failed validation: {0}")]
    Unsound(String),
}

impl From<ReduceError> for SolveError {
    fn from(e: ReduceError) -> Self {
        match e {
            ReduceError::Capacity { limit, reached } => SolveError::Capacity { limit, reached },
            other => SolveError::Reduce(other),
        }
    }
}

/// Everything computed on the way to a verdict.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub reduced: BeliefObsPomdp,
    pub safe: SafeResult,
    /// None when the initial observation is not safe.
    pub restricted: Option<Restricted>,
    /// S̃_wcs in ids of the restricted model.
    pub target: StateSet,
    pub reach: Option<ReachResult>,
    /// Memoryless witness on red(G), present on YES.
    pub witness: Option<MemorylessStrategy>,
}

impl Analysis {
    pub fn verdict(&self) -> Verdict {
        if self.witness.is_some() {
            Verdict::Yes
        } else {
            Verdict::No
        }
    }

    /// W̃ in observation ids of red(G).
    pub fn reach_winning(&self) -> ObsSet {
        match (&self.restricted, &self.reach) {
            (Some(rs), Some(reach)) => rs.obs_to_original(&reach.winning, self.reduced.pomdp.num_observations()),
            _ => FixedBitSet::with_capacity(self.reduced.pomdp.num_observations()),
        }
    }
}

pub fn analyze(g: &Pomdp, r: &RewardFn, cfg: SolveConfig) -> Result<Analysis, SolveError> {
    let reduced = reduction::reduce(g, r, ReduceConfig { max_states: cfg.max_states })?;
    let gb = &reduced.pomdp;
    let safe = fixpoint::almost_safe(gb, &reduced.good_states());
    let restricted = match fixpoint::restrict_safe(gb, &safe.winning) {
        Ok(rs) => rs,
        Err(FixpointError::NoSafeStrategy) => {
            return Ok(Analysis {
                target: FixedBitSet::new(),
                reduced,
                safe,
                restricted: None,
                reach: None,
                witness: None,
            })
        }
        Err(e) => return Err(e.into()),
    };
    let gt = &restricted.pomdp;
    let wcs = reduced.winning_recurrent();
    let target = crate::model::set_of(gt.num_states(), wcs.ones().filter_map(|s| restricted.state_back[s]));
    let reach = fixpoint::almost_reach(gt, &target, cfg.trace);
    let init_obs = gt.obs_of(gt.initial());
    let witness = reach.winning.contains(init_obs).then(|| {
        let mut w = MemorylessStrategy::undefined(gb.num_observations());
        for o in 0..gt.num_observations() {
            let d = match reach.strategy.get(o) {
                Some(d) => d.clone(),
                None => Distr::uniform(gt.avail(o).iter().copied()),
            };
            w.choice[restricted.obs_map[o]] = Some(d);
        }
        let first = reach.strategy.get(init_obs).and_then(|d| d.support().next()).expect("initial observation is winning");
        w.choice[reduced.initial_obs()] = Some(Distr::point(first));
        w
    });
    Ok(Analysis { reduced, safe, restricted: Some(restricted), target, reach: Some(reach), witness })
}

/// A failing state–action pair inside a reachable recurrent class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnosis {
    pub class: Vec<ChainLabel>,
    pub at: ChainLabel,
    pub action: Option<usize>,
    pub reward: Q,
}

impl Diagnosis {
    /// POMDP states occurring in the class.
    pub fn class_states(&self) -> BTreeSet<usize> {
        self.class.iter().map(|l| l.state).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Validation {
    pub valid: bool,
    pub chain_states: usize,
    pub recurrent_classes: Vec<Vec<ChainLabel>>,
    pub diagnosis: Option<Diagnosis>,
}

impl Validation {
    pub fn render(&self, g: &Pomdp, sigma: &FiniteMemoryStrategy) -> String {
        let label = |l: &ChainLabel| format!("{}·{}", g.state_name(l.state), sigma.memory[l.memory]);
        let mut out = String::new();
        let _ = writeln!(out, "valid: {}", if self.valid { "yes" } else { "no" });
        let _ = writeln!(out, "chain states: {}", self.chain_states);
        for c in &self.recurrent_classes {
            let states: BTreeSet<usize> = c.iter().map(|l| l.state).collect();
            let names: Vec<String> = c.iter().map(label).collect();
            let _ = writeln!(
                out,
                "recurrent class: {} over {}",
                names.join(" "),
                g.describe_states(&crate::model::set_of(g.num_states(), states))
            );
        }
        if let Some(d) = &self.diagnosis {
            let states = crate::model::set_of(g.num_states(), d.class_states());
            let action = d.action.map_or("-".to_string(), |a| g.action_name(a).to_string());
            let _ = writeln!(
                out,
                "diagnosis: class {} plays `{}` at {} with reward {}",
                g.describe_states(&states),
                action,
                label(&d.at),
                rational::format(&d.reward)
            );
        }
        out
    }
}

/// Exact check on G↾σ from (s₀, m₀): every reachable recurrent class must
/// earn reward 1 on every action it plays. Shares nothing with the fixpoint
/// path.
pub fn validate_strategy(g: &Pomdp, r: &RewardFn, sigma: &FiniteMemoryStrategy) -> Result<Validation, ChainError> {
    let mc = chain::product_chain(g, r, sigma)?;
    let labels = mc.labels().expect("product chains carry labels");
    let lab = |ids: &[usize]| ids.iter().map(|&i| labels[i]).collect::<Vec<_>>();
    let classes = chain::reachable_classes(&mc, 0);
    let diagnosis = chain::limavg1_witness(&mc, 0)?.map(|w| Diagnosis {
        class: lab(&w.class),
        at: labels[w.state],
        action: w.action,
        reward: w.reward,
    });
    Ok(Validation {
        valid: diagnosis.is_none(),
        chain_states: mc.len(),
        recurrent_classes: classes.iter().map(|c| lab(c)).collect(),
        diagnosis,
    })
}

/// Turns a memoryless strategy on red(G) into a finite-memory strategy on G
/// whose memory elements are the collapsed memories it visits. Moves into the
/// sink (disabled actions) have no context in red(G); there the memory is
/// kept unchanged so the strategy stays total.
pub fn memoryless_to_finite_memory(
    gb: &BeliefObsPomdp,
    g: &Pomdp,
    sigma: &MemorylessStrategy,
) -> Result<FiniteMemoryStrategy, ConversionError> {
    let p = &gb.pomdp;
    let undefined = |o: usize| ConversionError::Undefined(p.obs_name(o).to_string());
    let init = sigma.get(gb.initial_obs()).ok_or_else(|| undefined(gb.initial_obs()))?;
    if init.len() != 1 {
        return Err(ConversionError::InitialNotPoint(format!("{} actions", init.len())));
    }
    let k0 = init
        .support()
        .next()
        .and_then(|a| gb.action_memory(a))
        .ok_or_else(|| ConversionError::InitialNotPoint("an original action".into()))?;

    let mut ids: BTreeMap<usize, usize> = BTreeMap::from([(k0, 0)]);
    let mut order = vec![k0];
    let mut queue = VecDeque::from([k0]);
    let mut next = Vec::new();
    // ((memory, observation, action), raw update over red(G) memories)
    type Pending = ((usize, usize, usize), Vec<(usize, Q)>);
    let mut pending: Vec<Pending> = Vec::new();
    while let Some(k) = queue.pop_front() {
        let me = ids[&k];
        let cm = &gb.memories[k];
        let o = gb.memory_obs(k).ok_or_else(|| ConversionError::NotCollapsed(format!("m{k}")))?;
        let d = sigma.get(o).ok_or_else(|| undefined(o))?;
        next.push(d.clone());
        for a in d.support() {
            let post = crate::model::post(g, &cm.belief, a);
            let mut seen_obs: Vec<usize> = post.ones().map(|s| g.obs_of(s)).collect();
            seen_obs.sort_unstable();
            seen_obs.dedup();
            for go in seen_obs {
                let mut y2 = post.clone();
                y2.intersect_with(&g.class(go));
                let Some(c) = gb.find_context(&y2, a, k) else {
                    pending.push(((me, go, a), vec![(k, rational::one())]));
                    continue;
                };
                let co = gb.context_obs(c);
                let dc = sigma.get(co).ok_or_else(|| undefined(co))?;
                let mut targets = Vec::new();
                for m in dc.support() {
                    let k2 = gb.action_memory(m).ok_or_else(|| undefined(co))?;
                    if let std::collections::btree_map::Entry::Vacant(e) = ids.entry(k2) {
                        e.insert(order.len());
                        order.push(k2);
                        queue.push_back(k2);
                    }
                    targets.push(k2);
                }
                let u = Distr::uniform(targets.iter().copied());
                pending.push(((me, go, a), u.entries().to_vec()));
            }
        }
    }
    let update = pending
        .into_iter()
        .map(|(key, entries)| (key, Distr::from_raw(entries.into_iter().map(|(k, q)| (ids[&k], q)).collect())))
        .collect();
    Ok(FiniteMemoryStrategy { memory: order.iter().map(|k| format!("m{k}")).collect(), initial: 0, next, update })
}

/// Maps a collapsed strategy onto red(G): σ̄(cm) = σ′_n(cm), σ̄(Y′,a,cm) =
/// σ′_u(cm,o,a), and the initial observation selects the initial vertex.
/// Vertices are compared in canonical form (W, R cut to the belief).
pub fn finite_memory_to_memoryless(
    gb: &BeliefObsPomdp,
    g: &Pomdp,
    collapsed: &Collapsed,
) -> Result<MemorylessStrategy, ConversionError> {
    let p = &gb.pomdp;
    let graph = &collapsed.graph;
    let sigma = &collapsed.strategy;
    let mut ks = Vec::with_capacity(graph.vertices.len());
    for (v, cm) in graph.vertices.iter().enumerate() {
        let k = gb.find_memory(&cm.restricted()).ok_or_else(|| ConversionError::NotCollapsed(sigma.memory[v].clone()))?;
        ks.push(k);
    }
    let mut out = MemorylessStrategy::undefined(p.num_observations());
    let mut set = |o: usize, d: Distr| -> Result<(), ConversionError> {
        match &out.choice[o] {
            Some(prev) if *prev != d => Err(ConversionError::Conflict(p.obs_name(o).to_string())),
            _ => {
                out.choice[o] = Some(d);
                Ok(())
            }
        }
    };
    set(gb.initial_obs(), Distr::point(gb.memory_action(ks[graph.initial])))?;
    for (v, &k) in ks.iter().enumerate() {
        if let Some(o) = gb.memory_obs(k) {
            set(o, sigma.next[v].clone())?;
        }
    }
    for ((v, go, a), d) in &sigma.update {
        let k = ks[*v];
        let y2 = crate::model::update_set(g, &graph.vertices[*v].belief, *a, *go);
        let Some(c) = gb.find_context(&y2, *a, k) else { continue };
        let mut acc: BTreeMap<usize, Q> = BTreeMap::new();
        for (v2, q) in d.entries() {
            *acc.entry(gb.memory_action(ks[*v2])).or_insert_with(rational::zero) += q;
        }
        set(gb.context_obs(c), Distr::from_raw(acc.into_iter().collect()))?;
    }
    Ok(out)
}

/// Convenience: collapse σ and map it onto red(G).
pub fn collapsed_on_reduction(
    gb: &BeliefObsPomdp,
    g: &Pomdp,
    r: &RewardFn,
    sigma: &FiniteMemoryStrategy,
) -> Result<MemorylessStrategy, SolveError> {
    let c = collapse::collapse(g, r, sigma)?;
    Ok(finite_memory_to_memoryless(gb, g, &c)?)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SolveStats {
    pub reduced_states: usize,
    pub reduced_observations: usize,
    pub reduced_transitions: usize,
    pub restricted_states: usize,
    pub target_states: usize,
    pub safe_iterations: usize,
    pub reach_outer_iterations: usize,
    pub reach_inner_iterations: usize,
    pub strategy_memory: Option<usize>,
    pub wall_time: Duration,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Certificate {
    pub initial_observation: String,
    pub initial_safe: bool,
    pub initial_reach: bool,
    /// Observation names of each iterate; only the final set unless tracing.
    pub safe_iterates: Vec<Vec<String>>,
    pub reach_iterates: Vec<Vec<String>>,
    /// Inner μX layers per outer round (state names), when tracing.
    pub inner_layers: Option<Vec<Vec<Vec<String>>>>,
    pub validation: Option<Validation>,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub verdict: Verdict,
    pub strategy: Option<FiniteMemoryStrategy>,
    pub stats: SolveStats,
    pub certificate: Certificate,
    /// Rendered validation of the strategy, kept so the report can be
    /// printed without the model at hand.
    validation_text: Option<String>,
}

fn obs_names(p: &Pomdp, set: &ObsSet) -> Vec<String> {
    set.ones().map(|o| p.obs_name(o).to_string()).collect()
}

fn state_names(p: &Pomdp, set: &StateSet) -> Vec<String> {
    set.ones().map(|s| p.state_name(s).to_string()).collect()
}

pub fn decide_limavg1(g: &Pomdp, r: &RewardFn, cfg: SolveConfig) -> Result<SolveReport, SolveError> {
    let start = Instant::now();
    let an = analyze(g, r, cfg)?;
    let gb = &an.reduced.pomdp;
    let keep = |v: &[ObsSet], names: &dyn Fn(&ObsSet) -> Vec<String>| -> Vec<Vec<String>> {
        if cfg.trace {
            v.iter().map(names).collect()
        } else {
            v.last().map(|x| vec![names(x)]).unwrap_or_default()
        }
    };
    let safe_iterates = keep(&an.safe.iterates, &|s| obs_names(gb, s));
    let (reach_iterates, inner_layers) = match (&an.restricted, &an.reach) {
        (Some(rs), Some(reach)) => (
            keep(&reach.outer, &|s| obs_names(&rs.pomdp, s)),
            reach.inner.as_ref().map(|rounds| {
                rounds.iter().map(|layers| layers.iter().map(|x| state_names(&rs.pomdp, x)).collect()).collect()
            }),
        ),
        _ => (Vec::new(), None),
    };
    let init_obs = an.reduced.initial_obs();
    let mut certificate = Certificate {
        initial_observation: gb.obs_name(init_obs).to_string(),
        initial_safe: an.safe.winning.contains(init_obs),
        initial_reach: an.reach_winning().contains(init_obs),
        safe_iterates,
        reach_iterates,
        inner_layers,
        validation: None,
    };
    let mut strategy = None;
    let mut validation_text = None;
    if let Some(w) = &an.witness {
        let sigma = memoryless_to_finite_memory(&an.reduced, g, w)?;
        let v = validate_strategy(g, r, &sigma)?;
        if !v.valid {
            return Err(SolveError::Unsound(v.render(g, &sigma)));
        }
        validation_text = Some(v.render(g, &sigma));
        certificate.validation = Some(v);
        strategy = Some(sigma);
    }
    let stats = SolveStats {
        reduced_states: gb.num_states(),
        reduced_observations: gb.num_observations(),
        reduced_transitions: gb.transition_count(),
        restricted_states: an.restricted.as_ref().map_or(0, |rs| rs.pomdp.num_states()),
        target_states: an.target.count_ones(..),
        safe_iterations: an.safe.iterates.len() - 1,
        reach_outer_iterations: an.reach.as_ref().map_or(0, |x| x.outer.len() - 1),
        reach_inner_iterations: an.reach.as_ref().map_or(0, |x| x.inner_iterations),
        strategy_memory: strategy.as_ref().map(|s: &FiniteMemoryStrategy| s.num_memory()),
        wall_time: start.elapsed(),
    };
    Ok(SolveReport { verdict: an.verdict(), strategy, stats, certificate, validation_text })
}

impl SolveReport {
    /// Deterministic text rendering; wall time is left out.
    pub fn render(&self) -> String {
        self.render_inner(false)
    }

    pub fn render_with_timing(&self) -> String {
        self.render_inner(true)
    }

    fn render_inner(&self, timing: bool) -> String {
        let s = &self.stats;
        let c = &self.certificate;
        let yn = |b: bool| if b { "yes" } else { "no" };
        let mut out = String::new();
        let _ = writeln!(out, "verdict: {}", self.verdict);
        let _ = writeln!(
            out,
            "reduced model: states {} observations {} transitions {}",
            s.reduced_states, s.reduced_observations, s.reduced_transitions
        );
        let _ = writeln!(out, "safe fixpoint: {} iterations", s.safe_iterations);
        let _ = writeln!(out, "restricted model: states {}", s.restricted_states);
        let _ = writeln!(out, "reachability target: {} states", s.target_states);
        let _ = writeln!(
            out,
            "reach fixpoint: {} outer iterations, {} inner iterations",
            s.reach_outer_iterations, s.reach_inner_iterations
        );
        let _ = writeln!(
            out,
            "initial observation {}: safe {}, almost-sure reach {}",
            c.initial_observation,
            yn(c.initial_safe),
            yn(c.initial_reach)
        );
        let detailed = self.verdict == Verdict::No || c.inner_layers.is_some();
        let list = |v: &Vec<String>| if detailed { format!(" {{{}}}", v.join(",")) } else { String::new() };
        for (i, y) in c.safe_iterates.iter().enumerate() {
            let _ = writeln!(out, "safe iterate {i}: {} observations{}", y.len(), list(y));
        }
        for (i, z) in c.reach_iterates.iter().enumerate() {
            let _ = writeln!(out, "reach iterate {i}: {} observations{}", z.len(), list(z));
        }
        if let Some(rounds) = &c.inner_layers {
            for (i, layers) in rounds.iter().enumerate() {
                for (j, x) in layers.iter().enumerate() {
                    let _ = writeln!(out, "reach round {i} layer {j}: {} states", x.len());
                }
            }
        }
        if let Some(m) = s.strategy_memory {
            let _ = writeln!(out, "strategy memory: {m}");
        }
        if let Some(v) = &self.validation_text {
            for line in v.lines() {
                let _ = writeln!(out, "validation {line}");
            }
        }
        if timing {
            let _ = writeln!(out, "wall time: {:.3}s", s.wall_time.as_secs_f64());
        }
        out
    }
}

/// The bound of the collapsed-memory construction, as a check on a
/// synthesised strategy.
pub fn within_bounds(g: &Pomdp, gb: &BeliefObsPomdp, sigma: &FiniteMemoryStrategy) -> bool {
    sigma.num_memory() <= gb.pomdp.num_observations() && collapse::within_memory_bound(g, sigma.num_memory())
}
