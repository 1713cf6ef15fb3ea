//! Std companion to `intent-core`: file formats, parallel corpus labeling,
//! the chat-completion client, run manifests and the `intent` CLI.

pub mod commands;
pub mod corpus;
pub mod error;
pub mod llm;
pub mod manifest;
pub mod records;
pub mod synth;

pub use error::{Error, Result};
