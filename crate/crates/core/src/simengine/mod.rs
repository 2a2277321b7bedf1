//! Deterministic discrete-event simulation of a network of NFV nodes.
//!
//! One run is a single-threaded event loop over a [`CompiledScenario`];
//! batches fan independent runs out over a thread pool.

pub mod batch;
pub mod event;
pub mod metrics;
pub mod oracle;
pub mod scenario;
pub mod sim;

pub use batch::{aggregate, run_batch, write_aggregate_csv, AggregateRow, BatchOutput, BoxStats};
pub use event::EventQueue;
pub use metrics::{write_metrics_csv, InstanceSample, MetricsFrame, PhaseShare, RunSummary};
pub use oracle::{oracle_distribution, OracleError, OraclePhase, OracleResult, OracleShare};
pub use scenario::{CompiledScenario, Scenario, ScenarioError, ValidationErrors};
pub use sim::{derive_seed, run, wcmp_tables_at, RunOutput, SimError};
