//! Discrete-event simulation of user-base traffic served by geographically
//! distributed data centers under pluggable VM load-balancing policies.

pub mod availability;
pub mod balancer;
pub mod compare;
pub mod config;
pub mod engine;
pub mod metrics;
pub mod report;
pub mod sim;
pub mod time;
pub mod vm;
pub mod workload;

pub use availability::{expected_availability, is_available, AvailabilityParams, AvailabilityRating};
pub use balancer::{BalancerRegistry, PolicyKind, VmLoadBalancer};
pub use config::{
    default_paper_config, load_config, parse_config, serialize_config, validate_config, ConfigError,
    SimulationConfig,
};
pub use sim::{simulate, simulate_with_sinks, RunOutcome, SimError, SimOptions, Sinks};
pub use time::SimTime;
pub use vm::{SchedulerRegistry, SchedulingMode, TaskScheduler};
