//! Multi-agent dealer market simulator.
//!
//! Market makers quote spreads relative to a synthetic exchange book, win
//! investor flow by price, hedge on the exchange, and are scored on spread,
//! inventory and hedging PnL.

pub mod adaptive;
pub mod agents;
pub mod analytics;
pub mod calibration;
pub mod config;
pub mod engine;
pub mod env_server;
pub mod error;
pub mod market;

pub use adaptive::{AdaptiveAgent, AdaptiveParams, HedgeRule, ResponseTable};
pub use agents::{InvestorOrder, MmAction, MmObservation, StepRewards};
pub use config::{AgentSpec, PolicySpec, ScenarioConfig};
pub use engine::{run_episode, Simulation, StepOutcome, Trajectory, World};
pub use error::{Result, SimError};
pub use market::{LadderSnapshot, LobModelParams, MidPriceParams, Side};
