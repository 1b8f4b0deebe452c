//! Text formats for models, rewards, strategies and PFAs.
//!
//! Files are line oriented and split into sections. A section starts with a
//! header token ending in `:` (names never contain `:`); its content may
//! start on the same line. `#` starts a comment. Rationals are `p/q` or `p`.
//!
//! ```text
//! states: s0 X Y
//! actions: a b
//! observations: o0 o1
//! obs: s0=o0 X=o1 Y=o1
//! init: s0
//! avail: o0=a,b o1=a,b      # optional: all actions everywhere
//! trans:
//!   s0 a -> X:1/2 Y:1/2
//! reward:
//!   s0 a = 1
//! ```
//!
//! Strategy files use `memory:`, `init:`, `next:` lines `m -> a:p ...` and
//! `update:` lines `m obs a -> m':p ...`. PFA files use `states:`,
//! `alphabet:`, `init:`, `final:` and `trans:`.
//!
//! The emitters produce a canonical form; parsing it back yields the same
//! object, and emitting again yields the same bytes.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use crate::model::{self, Distr, Pomdp, PomdpParts, RewardFn, RewardRow, Violation};
use crate::pfa::Pfa;
use crate::rational::{self, Q};
use crate::strategy::FiniteMemoryStrategy;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.column, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Clone, Copy, Debug)]
struct Tok<'a> {
    text: &'a str,
    line: usize,
    col: usize,
}

impl<'a> Tok<'a> {
    fn err(&self, message: impl Into<String>) -> ParseError {
        ParseError { line: self.line, column: self.col, message: message.into() }
    }

    /// Sub-token starting `offset` bytes in.
    fn slice(&self, offset: usize, len: usize) -> Tok<'a> {
        Tok {
            text: &self.text[offset..offset + len],
            line: self.line,
            col: self.col + self.text[..offset].chars().count(),
        }
    }
}

struct Section<'a> {
    header: Tok<'a>,
    /// Content lines (tokens), including any content on the header line.
    lines: Vec<Vec<Tok<'a>>>,
}

impl<'a> Section<'a> {
    fn tokens(&self) -> impl Iterator<Item = &Tok<'a>> {
        self.lines.iter().flatten()
    }
}

fn tokenize(text: &str) -> Vec<Vec<Tok<'_>>> {
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let content = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let mut toks = Vec::new();
        let mut start = None;
        for (b, ch) in content.char_indices().chain(std::iter::once((content.len(), ' '))) {
            if ch.is_whitespace() {
                if let Some(s) = start.take() {
                    toks.push(Tok { text: &content[s..b], line: i + 1, col: content[..s].chars().count() + 1 });
                }
            } else if start.is_none() {
                start = Some(b);
            }
        }
        lines.push(toks);
    }
    lines
}

fn sections<'a>(text: &'a str, allowed: &[&str]) -> Result<Vec<Section<'a>>, ParseError> {
    let mut out: Vec<Section<'a>> = Vec::new();
    for toks in tokenize(text) {
        let Some(first) = toks.first() else { continue };
        if let Some(name) = first.text.strip_suffix(':') {
            if !allowed.contains(&name) {
                return Err(first.err(format!("unknown section `{}`", first.text)));
            }
            if out.iter().any(|s| s.header.text == first.text) {
                return Err(first.err(format!("section `{}` appears twice", first.text)));
            }
            let rest = toks[1..].to_vec();
            out.push(Section { header: *first, lines: if rest.is_empty() { Vec::new() } else { vec![rest] } });
        } else {
            match out.last_mut() {
                Some(s) => s.lines.push(toks),
                None => return Err(first.err("content before the first section header")),
            }
        }
    }
    Ok(out)
}

fn find<'s, 'a>(secs: &'s [Section<'a>], name: &str) -> Option<&'s Section<'a>> {
    secs.iter().find(|s| s.header.text.strip_suffix(':') == Some(name))
}

fn end_of(text: &str) -> ParseError {
    ParseError { line: text.lines().count().max(1), column: 1, message: String::new() }
}

fn require<'s, 'a>(secs: &'s [Section<'a>], name: &str, text: &str) -> Result<&'s Section<'a>, ParseError> {
    find(secs, name).ok_or_else(|| ParseError { message: format!("missing `{name}:` section"), ..end_of(text) })
}

fn valid_name(t: &Tok<'_>) -> Result<String, ParseError> {
    if t.text.is_empty() || t.text.contains([':', '=', ',', '#']) || t.text == "->" {
        return Err(t.err(format!("`{}` is not a valid name", t.text)));
    }
    Ok(t.text.to_string())
}

/// A declared list of names with an index.
struct Names {
    kind: &'static str,
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Names {
    fn declare(sec: &Section<'_>, kind: &'static str) -> Result<Names, ParseError> {
        let mut names = Vec::new();
        let mut index = HashMap::new();
        for t in sec.tokens() {
            let n = valid_name(t)?;
            if index.insert(n.clone(), names.len()).is_some() {
                return Err(t.err(format!("{kind} `{n}` declared twice")));
            }
            names.push(n);
        }
        if names.is_empty() {
            return Err(sec.header.err(format!("no {kind}s declared")));
        }
        Ok(Names { kind, names, index })
    }

    fn get(&self, t: &Tok<'_>) -> Result<usize, ParseError> {
        self.get_str(t, t.text)
    }

    fn get_str(&self, at: &Tok<'_>, name: &str) -> Result<usize, ParseError> {
        self.index.get(name).copied().ok_or_else(|| at.err(format!("undefined {} `{name}`", self.kind)))
    }
}

fn single<'a>(sec: &Section<'a>) -> Result<Tok<'a>, ParseError> {
    let toks: Vec<&Tok<'a>> = sec.tokens().collect();
    match toks.as_slice() {
        [t] => Ok(**t),
        [] => Err(sec.header.err("expected one name")),
        [_, t, ..] => Err(t.err("expected exactly one name")),
    }
}

fn split_pair<'a>(t: &Tok<'a>, sep: char) -> Result<(Tok<'a>, Tok<'a>), ParseError> {
    let p = t.text.find(sep).ok_or_else(|| t.err(format!("expected `name{sep}value`")))?;
    Ok((t.slice(0, p), t.slice(p + 1, t.text.len() - p - 1)))
}

fn parse_q(t: &Tok<'_>) -> Result<Q, ParseError> {
    rational::parse(t.text).ok_or_else(|| t.err(format!("`{}` is not a rational number", t.text)))
}

/// Parses `x:p x:p ...` into a distribution over `names`.
fn parse_distr(toks: &[Tok<'_>], names: &Names, at: &Tok<'_>) -> Result<Distr, ParseError> {
    if toks.is_empty() {
        return Err(at.err("empty distribution"));
    }
    let mut entries = Vec::new();
    for t in toks {
        let (x, p) = split_pair(t, ':')?;
        entries.push((names.get(&x)?, parse_q(&p)?));
    }
    Distr::new(entries).map_err(|e| at.err(format!("bad distribution: {e}")))
}

/// Splits an entry line at `->`.
fn arrow<'l, 'a>(line: &'l [Tok<'a>]) -> Result<(&'l [Tok<'a>], &'l [Tok<'a>]), ParseError> {
    let p = line.iter().position(|t| t.text == "->").ok_or_else(|| line[0].err("expected `->`"))?;
    Ok((&line[..p], &line[p + 1..]))
}

const MODEL_SECTIONS: &[&str] = &["states", "actions", "observations", "obs", "init", "avail", "trans", "reward"];

/// Parses a model file; the reward section is optional.
pub fn parse_model(text: &str) -> Result<(Pomdp, Option<RewardFn>), ParseError> {
    let secs = sections(text, MODEL_SECTIONS)?;
    let states = Names::declare(require(&secs, "states", text)?, "state")?;
    let actions = Names::declare(require(&secs, "actions", text)?, "action")?;
    let observations = Names::declare(require(&secs, "observations", text)?, "observation")?;

    let obs_sec = require(&secs, "obs", text)?;
    let mut obs_of: Vec<Option<usize>> = vec![None; states.names.len()];
    for t in obs_sec.tokens() {
        let (s, o) = split_pair(t, '=')?;
        let s = states.get(&s)?;
        if obs_of[s].replace(observations.get(&o)?).is_some() {
            return Err(t.err(format!("observation of `{}` given twice", states.names[s])));
        }
    }
    let obs_of = obs_of
        .iter()
        .enumerate()
        .map(|(s, o)| o.ok_or_else(|| obs_sec.header.err(format!("state `{}` has no observation", states.names[s]))))
        .collect::<Result<Vec<_>, _>>()?;

    let initial = states.get(&single(require(&secs, "init", text)?)?)?;

    let avail = match find(&secs, "avail") {
        None => vec![(0..actions.names.len()).collect(); observations.names.len()],
        Some(sec) => {
            let mut av: Vec<Option<Vec<usize>>> = vec![None; observations.names.len()];
            for t in sec.tokens() {
                let (o, list) = split_pair(t, '=')?;
                let o = observations.get(&o)?;
                let mut acts = Vec::new();
                let mut off = 0;
                for part in list.text.split(',') {
                    let sub = list.slice(off, part.len());
                    off += part.len() + 1;
                    let a = actions.get(&sub)?;
                    if acts.contains(&a) {
                        return Err(sub.err(format!("action `{part}` listed twice")));
                    }
                    acts.push(a);
                }
                if av[o].replace(acts).is_some() {
                    return Err(t.err(format!("availability of `{}` given twice", observations.names[o])));
                }
            }
            av.into_iter()
                .enumerate()
                .map(|(o, a)| a.ok_or_else(|| sec.header.err(format!("observation `{}` has no availability", observations.names[o]))))
                .collect::<Result<Vec<_>, _>>()?
        }
    };

    let trans_sec = require(&secs, "trans", text)?;
    let mut trans: Vec<Vec<(usize, Distr)>> = vec![Vec::new(); states.names.len()];
    let mut row_line: BTreeMap<(usize, usize), Tok<'_>> = BTreeMap::new();
    for line in &trans_sec.lines {
        let (lhs, rhs) = arrow(line)?;
        let [s, a] = lhs else { return Err(line[0].err("expected `state action -> ...`")) };
        let (s, a_id) = (states.get(s)?, actions.get(a)?);
        if row_line.insert((s, a_id), line[0]).is_some() {
            return Err(line[0].err(format!("row for `{}` `{}` given twice", states.names[s], a.text)));
        }
        trans[s].push((a_id, parse_distr(rhs, &states, &line[0])?));
    }

    let parts = PomdpParts {
        states: states.names.clone(),
        actions: actions.names.clone(),
        observations: observations.names.clone(),
        obs_of,
        initial,
        avail,
        trans,
    };
    let violations = model::validate(&parts);
    if let Some(v) = violations.first() {
        let at = match v {
            Violation::UnavailableRow { state, action } | Violation::BadRow { state, action, .. } => {
                let key = (states.index[state], actions.index[action]);
                row_line.get(&key).copied().unwrap_or(trans_sec.header)
            }
            Violation::MissingRow { .. } => trans_sec.header,
            Violation::BadInitial { .. } | Violation::SharedInitialObservation { .. } => require(&secs, "init", text)?.header,
            _ => find(&secs, "avail").unwrap_or(obs_sec).header,
        };
        return Err(at.err(format!("invalid model: {v}")));
    }
    let g = Pomdp::new(parts).map_err(|e| trans_sec.header.err(e.to_string()))?;
    let rewards = match find(&secs, "reward") {
        None => None,
        Some(sec) => Some(rewards_from_section(&g, sec)?),
    };
    Ok((g, rewards))
}

fn rewards_from_section(g: &Pomdp, sec: &Section<'_>) -> Result<RewardFn, ParseError> {
    let mut pairs = Vec::new();
    let mut seen = BTreeMap::new();
    for line in &sec.lines {
        let [s, a, eq, v] = line.as_slice() else { return Err(line[0].err("expected `state action = value`")) };
        if eq.text != "=" {
            return Err(eq.err("expected `=`"));
        }
        let si = g.state_id(s.text).ok_or_else(|| s.err(format!("undefined state `{}`", s.text)))?;
        let ai = g.action_id(a.text).ok_or_else(|| a.err(format!("undefined action `{}`", a.text)))?;
        if !g.is_available(g.obs_of(si), ai) {
            return Err(a.err(format!("action `{}` is not available at `{}`", a.text, s.text)));
        }
        let q = parse_q(v)?;
        if !rational::in_unit_interval(&q) {
            return Err(v.err("reward must lie in [0, 1]"));
        }
        if seen.insert((si, ai), ()).is_some() {
            return Err(s.err(format!("reward for `{}` `{}` given twice", s.text, a.text)));
        }
        pairs.push((si, ai, q));
    }
    let r = RewardFn::from_pairs(g.num_states(), pairs);
    if let Some(v) = model::validate_rewards(g, &r).first() {
        return Err(sec.header.err(v.to_string()));
    }
    Ok(r)
}

/// Parses a reward file (a single `reward:` section) against a model.
pub fn parse_rewards(g: &Pomdp, text: &str) -> Result<RewardFn, ParseError> {
    let secs = sections(text, &["reward"])?;
    rewards_from_section(g, require(&secs, "reward", text)?)
}

fn fmt_distr(out: &mut String, d: &Distr, name: impl Fn(usize) -> String) {
    for (x, p) in d.entries() {
        let _ = write!(out, " {}:{}", name(*x), rational::format(p));
    }
}

fn emit_rewards_body(out: &mut String, g: &Pomdp, r: &RewardFn) {
    out.push_str("reward:\n");
    for s in 0..g.num_states() {
        for &a in g.avail(g.obs_of(s)) {
            if let Some(v) = r.get(s, a) {
                let _ = writeln!(out, "  {} {} = {}", g.state_name(s), g.action_name(a), rational::format(v));
            }
        }
    }
}

pub fn emit_model(g: &Pomdp, r: Option<&RewardFn>) -> String {
    let p = g.parts();
    let mut out = String::new();
    let _ = writeln!(out, "states: {}", p.states.join(" "));
    let _ = writeln!(out, "actions: {}", p.actions.join(" "));
    let _ = writeln!(out, "observations: {}", p.observations.join(" "));
    out.push_str("obs:");
    for s in 0..g.num_states() {
        let _ = write!(out, " {}={}", g.state_name(s), g.obs_name(g.obs_of(s)));
    }
    out.push('\n');
    let _ = writeln!(out, "init: {}", g.state_name(g.initial()));
    out.push_str("avail:");
    for o in 0..g.num_observations() {
        let acts: Vec<&str> = g.avail(o).iter().map(|&a| g.action_name(a)).collect();
        let _ = write!(out, " {}={}", g.obs_name(o), acts.join(","));
    }
    out.push_str("\ntrans:\n");
    for s in 0..g.num_states() {
        for (a, d) in g.rows(s) {
            let _ = write!(out, "  {} {} ->", g.state_name(s), g.action_name(*a));
            fmt_distr(&mut out, d, |t| g.state_name(t).to_string());
            out.push('\n');
        }
    }
    if let Some(r) = r {
        emit_rewards_body(&mut out, g, r);
    }
    out
}

pub fn emit_rewards(g: &Pomdp, r: &RewardFn) -> String {
    let mut out = String::new();
    emit_rewards_body(&mut out, g, r);
    out
}

/// Rewards in a canonical per-pair form (uniform rows are expanded), so
/// they compare equal after a round trip.
pub fn canonical_rewards(g: &Pomdp, r: &RewardFn) -> RewardFn {
    let mut pairs = Vec::new();
    for s in 0..g.num_states() {
        match r.row(s) {
            RewardRow::Uniform(v) => pairs.extend(g.avail(g.obs_of(s)).iter().map(|&a| (s, a, v.clone()))),
            RewardRow::PerAction(v) => pairs.extend(v.iter().map(|(a, q)| (s, *a, q.clone()))),
        }
    }
    RewardFn::from_pairs(g.num_states(), pairs)
}

const STRATEGY_SECTIONS: &[&str] = &["memory", "init", "next", "update"];

pub fn parse_strategy(g: &Pomdp, text: &str) -> Result<FiniteMemoryStrategy, ParseError> {
    let secs = sections(text, STRATEGY_SECTIONS)?;
    let memory = Names::declare(require(&secs, "memory", text)?, "memory element")?;
    let initial = memory.get(&single(require(&secs, "init", text)?)?)?;
    let action_names = Names {
        kind: "action",
        names: g.parts().actions.clone(),
        index: g.parts().actions.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect(),
    };
    let next_sec = require(&secs, "next", text)?;
    let mut next: Vec<Option<Distr>> = vec![None; memory.names.len()];
    for line in &next_sec.lines {
        let (lhs, rhs) = arrow(line)?;
        let [m] = lhs else { return Err(line[0].err("expected `memory -> action:p ...`")) };
        let m = memory.get(m)?;
        if next[m].replace(parse_distr(rhs, &action_names, &line[0])?).is_some() {
            return Err(line[0].err(format!("action choice of `{}` given twice", memory.names[m])));
        }
    }
    let next = next
        .into_iter()
        .enumerate()
        .map(|(m, d)| d.ok_or_else(|| next_sec.header.err(format!("memory element `{}` has no action choice", memory.names[m]))))
        .collect::<Result<Vec<_>, _>>()?;
    let mut update = BTreeMap::new();
    if let Some(sec) = find(&secs, "update") {
        for line in &sec.lines {
            let (lhs, rhs) = arrow(line)?;
            let [m, o, a] = lhs else { return Err(line[0].err("expected `memory observation action -> memory:p ...`")) };
            let m = memory.get(m)?;
            let o = g.obs_id(o.text).ok_or_else(|| o.err(format!("undefined observation `{}`", o.text)))?;
            let a = action_names.get(a)?;
            if update.insert((m, o, a), parse_distr(rhs, &memory, &line[0])?).is_some() {
                return Err(line[0].err("update given twice"));
            }
        }
    }
    Ok(FiniteMemoryStrategy { memory: memory.names, initial, next, update })
}

pub fn emit_strategy(g: &Pomdp, sigma: &FiniteMemoryStrategy) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "memory: {}", sigma.memory.join(" "));
    let _ = writeln!(out, "init: {}", sigma.memory[sigma.initial]);
    out.push_str("next:\n");
    for (m, d) in sigma.next.iter().enumerate() {
        let _ = write!(out, "  {} ->", sigma.memory[m]);
        fmt_distr(&mut out, d, |a| g.action_name(a).to_string());
        out.push('\n');
    }
    out.push_str("update:\n");
    for ((m, o, a), d) in &sigma.update {
        let _ = write!(out, "  {} {} {} ->", sigma.memory[*m], g.obs_name(*o), g.action_name(*a));
        fmt_distr(&mut out, d, |k| sigma.memory[k].clone());
        out.push('\n');
    }
    out
}

const PFA_SECTIONS: &[&str] = &["states", "alphabet", "init", "final", "trans"];

pub fn parse_pfa(text: &str) -> Result<Pfa, ParseError> {
    let secs = sections(text, PFA_SECTIONS)?;
    let states = Names::declare(require(&secs, "states", text)?, "state")?;
    let alphabet = Names::declare(require(&secs, "alphabet", text)?, "letter")?;
    let initial = states.get(&single(require(&secs, "init", text)?)?)?;
    let mut finals = Vec::new();
    if let Some(sec) = find(&secs, "final") {
        for t in sec.tokens() {
            finals.push(states.get(t)?);
        }
    }
    let trans_sec = require(&secs, "trans", text)?;
    let mut rows: Vec<Vec<Option<Distr>>> = vec![vec![None; alphabet.names.len()]; states.names.len()];
    for line in &trans_sec.lines {
        let (lhs, rhs) = arrow(line)?;
        let [s, a] = lhs else { return Err(line[0].err("expected `state letter -> ...`")) };
        let (s, a) = (states.get(s)?, alphabet.get(a)?);
        if rows[s][a].replace(parse_distr(rhs, &states, &line[0])?).is_some() {
            return Err(line[0].err("row given twice"));
        }
    }
    for (s, row) in rows.iter().enumerate() {
        if let Some(a) = row.iter().position(Option::is_none) {
            return Err(trans_sec.header.err(format!(
                "missing transition for state `{}` letter `{}`",
                states.names[s], alphabet.names[a]
            )));
        }
    }
    let trans = rows.into_iter().map(|r| r.into_iter().map(Option::unwrap).collect()).collect();
    Pfa::new(states.names, alphabet.names, initial, finals, trans).map_err(|e| trans_sec.header.err(e.to_string()))
}

pub fn emit_pfa(p: &Pfa) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "states: {}", p.states().join(" "));
    let _ = writeln!(out, "alphabet: {}", p.alphabet().join(" "));
    let _ = writeln!(out, "init: {}", p.state_name(p.initial()));
    let finals: Vec<&str> = p.finals().map(|s| p.state_name(s)).collect();
    if finals.is_empty() {
        out.push_str("final:\n");
    } else {
        let _ = writeln!(out, "final: {}", finals.join(" "));
    }
    out.push_str("trans:\n");
    for s in 0..p.num_states() {
        for a in 0..p.num_letters() {
            let _ = write!(out, "  {} {} ->", p.state_name(s), p.letter_name(a));
            fmt_distr(&mut out, p.delta(s, a), |t| p.state_name(t).to_string());
            out.push('\n');
        }
    }
    out
}
