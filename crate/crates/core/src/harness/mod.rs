//! Experiment drivers behind the CLI: site collection runs, the unfairness
//! table, and the two fairness sweeps.

pub mod collect;
pub mod complexity;
pub mod fair;
pub mod output;
pub mod theory_table;

pub use collect::{
    run_collection, simulate, CollectionResult, LoopSettings, PolicyRun, PolicySpec, PriorSpec, SimulateConfig,
    SimulateOutput, SiteSpec,
};
pub use complexity::{complexity_sweep, ComplexityOutput, ComplexitySweepConfig, XorGroupTask};
pub use fair::{
    fair_arm_loop, fair_direct_loop, fairness_sweep, srs_sample, FairSampler, FairnessSweepConfig, FairnessSweepOutput,
    TwoGroupTask,
};
pub use output::{fmt_num, fmt_opt, mean_se, write_json, Table};
pub use theory_table::{theory_table, TheoryConfig, TheoryOutput};
