//! Geographic circulation analytics for news links in comment archives.

pub mod catalog;
pub mod ingest;
pub mod states;
pub mod stats;
pub mod attributes;
pub mod geolocation;
pub mod scaling;
pub mod contagion;
pub mod diffusion;
pub mod interaction;
pub mod synth;
pub mod pipeline;
