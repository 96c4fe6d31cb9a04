//! Orchestration engine for context-grounded, spec-driven feature delivery
//! in existing repositories.

pub mod agent;
pub mod artifact;
pub mod checkpoint;
pub mod clock;
pub mod config;
pub mod exec;
pub mod experiment;
pub mod fixture;
pub mod hooks;
pub mod judge;
pub mod ledger;
pub mod orchestrator;
pub mod paths;
pub mod probe;
pub mod repo;
pub mod report;
pub mod service;
pub mod workflow;
