//! Deterministic multi-node simulation and scenario scripting.

pub mod net;
pub mod outline;
pub mod runner;
pub mod scenario;

pub use net::{
    create_network, entity_key, node_key, Event, Fault, FillItem, Node, NodeId, NodeStatus,
    SimConfig, SimError, SimMessage, SimNetwork, StepReport, SyncReport,
};
pub use outline::{render_outline, Names};
pub use runner::{run_scenario, RunError, RunOptions, RunOutcome, RunReport};
pub use scenario::{parse_scenario, ParseError, Scenario};
