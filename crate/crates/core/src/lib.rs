//! Adaptive large neighborhood search for anytime multi-agent path finding.
//!
//! Each iteration a bandit chooses a destroy heuristic and a neighborhood size,
//! the chosen agents are replanned by prioritized planning, and the bandit is
//! rewarded with the cost improvement.

pub mod bandit;
pub mod benchmark;
pub mod destroy;
pub mod engine;
pub mod experiment;
pub mod model;
pub mod planner;
pub mod synth;

pub use bandit::{ArmStats, BiLevelBandit, Choice, JointBandit, NormalGamma, Policy};
pub use benchmark::{BenchmarkError, CsvRecord, ScenarioEntry};
pub use destroy::{HeuristicKind, Neighborhood};
pub use engine::{run, Budget, Controller, EngineConfig, EngineError, RunResult, TraceEntry};
pub use experiment::{Algorithm, AlgorithmParams, ExperimentSpec, Suite};
pub use model::{validate, Agent, Conflict, GridMap, Instance, Location, ModelError, Path, Plan};
pub use planner::{plan_path, DistanceCache, PlanFailure, ReservationTable};
