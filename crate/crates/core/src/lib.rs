//! Scoring, reliability and path analysis for therapy transcripts.

pub mod analysis;
pub mod backend;
pub mod constructs;
pub mod corpus;
pub mod parser;
pub mod pipeline;
pub mod reliability;
pub mod stats;
