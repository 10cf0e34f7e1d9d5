//! Shared fixtures for the benchmarks.

use codesign_core::{build_scenario, AgentSpec, MappingConfig, WaitModel};

/// The default nine-region mapping scenario.
pub fn grid9() -> Vec<AgentSpec> {
    let regions = MappingConfig::default().regions().expect("default mapping config is valid");
    build_scenario(&regions, WaitModel::Expected).expect("default regions are valid")
}
