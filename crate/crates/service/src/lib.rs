//! HTTP API and command line around the contract question-answering engine.

pub mod api;
pub mod app;
pub mod cli;
