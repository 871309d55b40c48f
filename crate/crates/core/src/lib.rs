pub mod agents;
pub mod context;
pub mod demo;
pub mod evaluation;
pub mod gateway;
pub mod orchestrator;
pub mod scholar;
pub mod specdata;
