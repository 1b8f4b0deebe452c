//! Almost-sure winning for the limit-average objective LimAvg = 1 in POMDPs
//! under finite-memory strategies.
//!
//! The decision procedure reduces a POMDP to a belief-observation POMDP whose
//! observations carry collapsed strategy memories, then solves an
//! almost-sure safety and an almost-sure reachability fixpoint on it. Every
//! positive answer comes with a finite-memory strategy that is checked
//! against the original model by exact Markov-chain analysis.
//!
//! Besides the solver the crate offers the pieces it is built from: exact
//! product chains and recurrent classes, the collapsed-strategy
//! construction, text formats, PFA constructions and a simulator.

pub mod chain;
pub mod collapse;
pub mod dot;
pub mod fixpoint;
pub mod format;
pub mod linalg;
pub mod model;
pub mod pfa;
pub mod rational;
pub mod reduction;
pub mod sim;
pub mod solver;
pub mod strategy;

pub use chain::MarkovChain;
pub use model::{Distr, Pomdp, RewardFn};
pub use rational::Q;
pub use solver::{decide_limavg1, SolveConfig, SolveReport, Verdict};
pub use strategy::{FiniteMemoryStrategy, MemorylessStrategy};
