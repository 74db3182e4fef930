//! Harness for tracking with vision-language models.
//!
//! The crate parses and scores model answers that carry bounding boxes,
//! builds dialogue samples for the tracking and captioning tasks, drives
//! multi-round tracking inference against a chat-completion backend and
//! evaluates the results.

pub mod assignment;
pub mod bbox;
pub mod grammar;
pub mod metrics;
pub mod reward;
pub mod track;
pub mod dialogue;
pub mod driver;
pub mod ingest;
pub mod synth;
pub mod cli;
