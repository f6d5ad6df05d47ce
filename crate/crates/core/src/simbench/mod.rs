//! Closed-loop benchmark on a noisy double integrator.

pub mod lqg;
pub mod montecarlo;
pub mod plant;
pub mod reference;
pub mod runner;

pub use lqg::{design_lqg, LqgController, LqgOracle};
pub use montecarlo::{monte_carlo, ExperimentConfig, MonteCarloOutput, RunRecord, SummaryRow};
pub use plant::{advance, measure, plant_step, OutputTiming, PlantModel};
pub use reference::{generate_reference, ReferenceSignal};
pub use runner::{
    collect_training_data, run_closed_loop, History, NoiseTape, PdPolicy, Policy, RunResult,
    Scenario, TpcPolicy,
};
