pub mod config;
pub mod demo;
pub mod inputs;
pub mod manifest;
pub mod report;
pub mod sweep;
pub mod synth;
