//! Scenario files, run orchestration, and report emission for the
//! treekey simulator.

pub mod commands;
pub mod report;
pub mod scenario;
