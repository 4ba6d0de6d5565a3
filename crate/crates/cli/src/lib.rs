//! Scenario configs, presets, pipelines and output files for the `qmeter`
//! command-line tool.

pub mod analysis;
pub mod config;
pub mod output;
pub mod pipeline;
pub mod presets;
