//! Conversational security-operations agent core.
//!
//! The agent labels each operator message, plans the steps a query or action
//! needs, extracts slots for every step with a chain of model calls, tracks
//! dialogue state across turns and finally runs the plan against an embedded
//! IoC store and a SIEM connector.

pub mod domain;
pub mod store;
pub mod feeds;
pub mod events;
pub mod llm;
pub mod dialogue;
pub mod executor;
pub mod transcripts;
