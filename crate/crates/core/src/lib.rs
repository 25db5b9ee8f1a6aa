//! Core library for the multimedia verification pipeline.

pub mod audio;
pub mod cluster;
pub mod config;
pub mod embed;
pub mod evidence;
pub mod imageprep;
pub mod keyframes;
pub mod llm;
pub mod media;
pub mod model;
pub mod net;
pub mod pipeline;
pub mod report;
pub mod shots;
pub mod sidecar;
pub mod verify;
