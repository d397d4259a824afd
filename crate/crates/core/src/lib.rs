//! Question answering over contract documents and a contract-management
//! database.

pub mod cms;
pub mod config;
pub mod eval;
pub mod fixtures;
pub mod index;
pub mod ingest;
pub mod llm;
pub mod ocs;
pub mod orchestrator;
pub(crate) mod remote;
pub mod sql_agent;

pub use remote::RetryPolicy;
