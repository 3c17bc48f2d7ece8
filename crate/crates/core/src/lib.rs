//! Graph reasoning over visual, semantic and fact layers for knowledge-based
//! visual question answering, built on a small reverse-mode autodiff engine.

pub mod autodiff;
pub mod graph;
pub mod model;
pub mod retrieval;
pub mod train;
pub mod data;
