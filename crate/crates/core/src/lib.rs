//! API-first microservice factory.
//!
//! A natural-language service description is turned into an OpenAPI document
//! by a chain of LLM agents, the finalized document drives code generation
//! into a file tree, the tree is launched with the container engine, probed
//! against its own contract, and repaired through a bounded, user-gated fix
//! loop.
//!
//! The crate is organized by pipeline stage:
//!
//! * [`gateway`]: chat-completion access with function calling (live, replay, scripted).
//! * [`agents`]: the five agent roles and their single-step behavior.
//! * [`spec_engine`]: OpenAPI parsing, validation, versioning and diffing.
//! * [`codetree`]: file-tree JSON repair, parsing, validation and materialization.
//! * [`runtime_tools`]: the function-calling tool registry and its executors.
//! * [`probe`]: contract probes derived from the spec.
//! * [`session`]: the phase machine, persistence and HTTP service.
//! * [`cli`]: the terminal client.

pub mod agents;
pub mod cli;
pub mod clock;
pub mod codetree;
pub mod finding;
pub mod gateway;
pub mod probe;
pub mod runtime_tools;
pub mod session;
pub mod spec_engine;

pub use finding::{Finding, Severity};
