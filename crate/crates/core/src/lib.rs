pub mod backend;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod evaluation;
pub mod program;
pub mod sandbox;
pub mod synthetic;
pub mod memory;
pub mod prompt;
pub mod search;
