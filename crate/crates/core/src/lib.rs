//! Diversity-of-representation evaluation for LLM responses, plus the
//! collective-critique and self-voting prompting pipeline.

pub mod attrib;
pub mod backend;
pub mod dataset;
pub mod dialogue;
pub mod methods;
pub mod metrics;
pub mod report;
pub mod runner;
pub mod stats;
pub mod sxs;
