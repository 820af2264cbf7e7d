//! Neuro-symbolic-causal pricing agents on a simulated weekly market.
//!
//! The crate is organised bottom-up:
//!
//! - [`sim`]: the deterministic market (demand, trust, profit).
//! - [`guardian`]: hard business rules with validation and repair.
//! - [`checker`]: exhaustive breadth-first verification that repaired
//!   transitions never leave the safe region.
//! - [`causal`]: a double machine learning engine that predicts how a
//!   candidate action changes profit and trust relative to holding steady.
//! - [`agents`]: strategists and the three decision architectures.
//! - [`bench`]: episode logs, metrics and the experiment matrix.
//!
//! ```
//! use chimera_core::guardian::{repair_action, ConstraintSet};
//! use chimera_core::sim::{Action, SimConfig};
//!
//! let state = SimConfig::default().initial_state();
//! let repair = repair_action(&Action::new(60.0, 0.0), &state, &ConstraintSet::default());
//! assert_eq!(repair.safe_action.price_change_pct, 50.0);
//! ```

pub mod agents;
pub mod bench;
pub mod causal;
pub mod checker;
pub mod config;
pub mod error;
pub mod guardian;
pub mod sim;

pub use error::{AgentError, BenchError, CausalError, ConfigError, SimError};
pub use guardian::{ConstraintSet, Guardian, Repair, Verdict};
pub use sim::{Action, MarketState, SimConfig, StepOutcome};

// The guide's code listings compile and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/guardian.md")]
    mod guardian {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/causal.md")]
    mod causal {}
    #[doc = include_str!("../../../book/src/agents.md")]
    mod agents {}
    #[doc = include_str!("../../../book/src/benchmarks.md")]
    mod benchmarks {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
