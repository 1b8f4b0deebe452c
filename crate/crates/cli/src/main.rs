//! `limavg` command-line front end.
//!
//! Exit codes: 0 = YES / valid, 1 = NO / invalid, 2 = input error,
//! 3 = capacity exceeded.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use limavg::chain;
use limavg::collapse;
use limavg::dot;
use limavg::format;
use limavg::model;
use limavg::pfa;
use limavg::rational;
use limavg::reduction::{self, ReduceConfig, ReduceError};
use limavg::sim::{self, SimConfig};
use limavg::solver::{self, SolveConfig, SolveError, Verdict};
use limavg::{FiniteMemoryStrategy, Pomdp, RewardFn};

#[derive(Parser)]
#[command(name = "limavg", version, about = "Almost-sure LimAvg = 1 for POMDPs under finite memory")]
struct Cli {
    /// Cap on the number of states of the reduced model.
    #[arg(long, global = true, default_value_t = 1_000_000)]
    max_states: usize,
    /// Master seed for simulation.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write a Graphviz rendering of the relevant graph to this path.
    #[arg(long, global = true)]
    dot: Option<PathBuf>,
    /// Print every fixpoint iterate.
    #[arg(long, global = true)]
    trace_fixpoints: bool,
    /// Include wall-clock time in reports.
    #[arg(long, global = true)]
    timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide whether a finite-memory almost-sure winning strategy exists.
    Solve {
        model: PathBuf,
        #[arg(long)]
        rewards: Option<PathBuf>,
        /// Write the synthesised strategy here.
        #[arg(long)]
        strategy_out: Option<PathBuf>,
    },
    /// Check a finite-memory strategy against the model.
    Validate {
        model: PathBuf,
        strategy: PathBuf,
        #[arg(long)]
        rewards: Option<PathBuf>,
    },
    /// Estimate the long-run average reward of a strategy.
    Simulate {
        model: PathBuf,
        strategy: PathBuf,
        #[arg(long)]
        rewards: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        /// Defaults to a tenth of the steps.
        #[arg(long)]
        burn_in: Option<usize>,
    },
    /// Collapse a strategy onto its projection graph.
    Collapse {
        model: PathBuf,
        strategy: PathBuf,
        #[arg(long)]
        rewards: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PFA → POMDP construction for LimAvg > 1/2.
    ReducePfaQuant {
        pfa: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PFA → POMDP construction for the value-1 problem.
    ReducePfaValue1 {
        pfa: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check whether every reachable belief is a full observation class.
    CheckBeliefObs {
        model: PathBuf,
        /// Check the reduced model red(G) instead of G.
        #[arg(long)]
        reduced: bool,
        #[arg(long)]
        rewards: Option<PathBuf>,
    },
    /// Recurrent classes and mean payoffs of the product chain.
    AnalyzeChain {
        model: PathBuf,
        strategy: PathBuf,
        #[arg(long)]
        rewards: Option<PathBuf>,
        /// Also decide LimAvg > λ almost surely.
        #[arg(long)]
        threshold: Option<String>,
    },
}

enum Failure {
    Input(anyhow::Error),
    Capacity(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_model(path: &Path, rewards: Option<&Path>) -> Result<(Pomdp, RewardFn)> {
    let text = read(path)?;
    let (g, r) = format::parse_model(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    let r = match rewards {
        Some(p) => format::parse_rewards(&g, &read(p)?).map_err(|e| anyhow!("{}: {e}", p.display()))?,
        None => r.ok_or_else(|| anyhow!("{}: no reward section and no --rewards file", path.display()))?,
    };
    Ok((g, r))
}

fn load_strategy(g: &Pomdp, path: &Path) -> Result<FiniteMemoryStrategy> {
    format::parse_strategy(g, &read(path)?).map_err(|e| anyhow!("{}: {e}", path.display()))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_dot(cli: &Cli, text: impl FnOnce() -> String) -> Result<()> {
    if let Some(p) = &cli.dot {
        fs::write(p, text()).with_context(|| format!("cannot write {}", p.display()))?;
    }
    Ok(())
}

fn code(ok: bool) -> u8 {
    if ok {
        0
    } else {
        1
    }
}

fn run(cli: &Cli) -> Result<u8, Failure> {
    match &cli.command {
        Command::Solve { model, rewards, strategy_out } => {
            let (g, r) = load_model(model, rewards.as_deref())?;
            let cfg = SolveConfig { max_states: cli.max_states, trace: cli.trace_fixpoints };
            let report = match solver::decide_limavg1(&g, &r, cfg) {
                Ok(rep) => rep,
                Err(SolveError::Capacity { limit, reached }) => {
                    return Err(Failure::Capacity(format!(
                        "reduction exceeds the state cap of {limit} ({reached} states materialised so far)"
                    )))
                }
                Err(e) => return Err(Failure::Input(e.into())),
            };
            print!("{}", if cli.timing { report.render_with_timing() } else { report.render() });
            if let Some(sigma) = &report.strategy {
                if let Some(p) = strategy_out {
                    write_out(Some(p), &format::emit_strategy(&g, sigma))?;
                }
                write_dot(cli, || {
                    let mc = chain::product_chain(&g, &r, sigma).expect("validated strategy");
                    dot::chain_dot(&g, sigma, &mc)
                })?;
            }
            Ok(code(report.verdict == Verdict::Yes))
        }
        Command::Validate { model, strategy, rewards } => {
            let (g, r) = load_model(model, rewards.as_deref())?;
            let sigma = load_strategy(&g, strategy)?;
            let v = solver::validate_strategy(&g, &r, &sigma).map_err(anyhow::Error::from)?;
            print!("{}", v.render(&g, &sigma));
            write_dot(cli, || dot::chain_dot(&g, &sigma, &chain::product_chain(&g, &r, &sigma).expect("checked")))?;
            Ok(code(v.valid))
        }
        Command::Simulate { model, strategy, rewards, steps, runs, burn_in } => {
            let (g, r) = load_model(model, rewards.as_deref())?;
            let sigma = load_strategy(&g, strategy)?;
            let cfg = SimConfig { steps: *steps, runs: *runs, seed: cli.seed, burn_in: *burn_in };
            let res = sim::simulate(&g, &r, &sigma, cfg).map_err(anyhow::Error::from)?;
            println!("runs: {runs}");
            println!("steps: {steps}");
            println!("burn-in: {}", cfg.effective_burn_in());
            println!("seed: {}", cli.seed);
            println!("mean: {:.6}", res.mean);
            println!("standard error: {:.6}", res.std_error);
            println!("min: {:.6}", res.min);
            println!("max: {:.6}", res.max);
            Ok(0)
        }
        Command::Collapse { model, strategy, rewards, out } => {
            let (g, r) = load_model(model, rewards.as_deref())?;
            let sigma = load_strategy(&g, strategy)?;
            let c = collapse::collapse(&g, &r, &sigma).map_err(anyhow::Error::from)?;
            let v = solver::validate_strategy(&g, &r, &c.strategy).map_err(anyhow::Error::from)?;
            eprintln!(
                "collapsed memory: {} (bound 2^{})",
                c.strategy.num_memory(),
                collapse::memory_bound_exponent(&g)
            );
            for (i, cm) in c.graph.vertices.iter().enumerate() {
                eprintln!("  {}: {}", c.strategy.memory[i], cm.describe(&g));
            }
            eprintln!("collapsed strategy valid: {}", if v.valid { "yes" } else { "no" });
            write_out(out.as_deref(), &format::emit_strategy(&g, &c.strategy))?;
            write_dot(cli, || dot::projection_dot(&g, &c.graph))?;
            Ok(code(v.valid))
        }
        Command::ReducePfaQuant { pfa: path, out } | Command::ReducePfaValue1 { pfa: path, out } => {
            let p = format::parse_pfa(&read(path)?).map_err(|e| anyhow!("{}: {e}", path.display()))?;
            let red = if matches!(cli.command, Command::ReducePfaQuant { .. }) {
                pfa::reduce_quantitative(&p)
            } else {
                pfa::reduce_value1(&p)
            }
            .map_err(anyhow::Error::from)?;
            write_out(out.as_deref(), &format::emit_model(&red.pomdp, Some(&red.rewards)))?;
            Ok(0)
        }
        Command::CheckBeliefObs { model, reduced, rewards } => {
            let (g, r) = if *reduced {
                load_model(model, rewards.as_deref())?
            } else {
                let (g, r) = format::parse_model(&read(model)?).map_err(|e| anyhow!("{}: {e}", model.display()))?;
                (g, r.unwrap_or_else(|| RewardFn::from_states(Vec::new())))
            };
            let target = if *reduced {
                match reduction::reduce(&g, &r, ReduceConfig { max_states: cli.max_states }) {
                    Ok(red) => red.pomdp,
                    Err(ReduceError::Capacity { limit, reached }) => {
                        return Err(Failure::Capacity(format!("reduction exceeds the state cap of {limit} ({reached} states)")))
                    }
                    Err(e) => return Err(Failure::Input(e.into())),
                }
            } else {
                g
            };
            let check = model::is_belief_observation(&target);
            println!("belief-observation: {}", if check.holds { "yes" } else { "no" });
            println!("beliefs explored: {}", check.beliefs_explored);
            if let Some(w) = &check.witness {
                let steps: Vec<String> = w
                    .prefix
                    .iter()
                    .map(|&(a, o)| format!("{} {}", target.action_name(a), target.obs_name(o)))
                    .collect();
                println!("witness prefix: {}", steps.join(", "));
                println!(
                    "witness belief: {} under {}",
                    target.describe_states(&w.belief),
                    target.obs_name(w.observation)
                );
            }
            Ok(code(check.holds))
        }
        Command::AnalyzeChain { model, strategy, rewards, threshold } => {
            let (g, r) = load_model(model, rewards.as_deref())?;
            let sigma = load_strategy(&g, strategy)?;
            let mc = chain::product_chain(&g, &r, &sigma).map_err(anyhow::Error::from)?;
            let label = |i: usize| {
                let l = mc.label(i).expect("product chain");
                format!("{}·{}", g.state_name(l.state), sigma.memory[l.memory])
            };
            println!("chain states: {}", mc.len());
            let means = chain::class_means(&mc, 0).map_err(anyhow::Error::from)?;
            for (class, mean) in &means {
                let names: Vec<String> = class.iter().map(|&i| label(i)).collect();
                println!("recurrent class {{{}}} mean payoff {}", names.join(","), rational::format(mean));
            }
            let lim1 = chain::almost_sure_limavg1(&mc, 0).map_err(anyhow::Error::from)?;
            println!("almost-sure LimAvg = 1: {}", if lim1 { "yes" } else { "no" });
            write_dot(cli, || dot::chain_dot(&g, &sigma, &mc))?;
            match threshold {
                None => Ok(code(lim1)),
                Some(t) => {
                    let lambda = rational::parse(t).ok_or_else(|| anyhow!("`{t}` is not a rational number"))?;
                    if !rational::in_unit_interval(&lambda) {
                        return Err(anyhow!("threshold must lie in [0, 1]").into());
                    }
                    let gt = means.iter().all(|(_, v)| *v > lambda);
                    println!("almost-sure LimAvg > {}: {}", rational::format(&lambda), if gt { "yes" } else { "no" });
                    Ok(code(gt))
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(c) => ExitCode::from(c),
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Capacity(msg)) => {
            eprintln!("capacity: {msg}");
            ExitCode::from(3)
        }
    }
}
