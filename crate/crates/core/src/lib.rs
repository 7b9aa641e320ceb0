//! Benchmark curation, See-Think-Answer reward scoring and multiple-choice
//! evaluation for video question answering.
//!
//! Every model call goes through [`gateway::Gateway`], which can record
//! responses to disk and replay them, so the pipelines here run offline and
//! deterministically once a cache exists.

pub mod analytics;
pub mod coldstart;
pub mod corpus;
pub mod debias;
pub mod evalkit;
pub mod gateway;
pub mod media;
pub mod par;
pub mod review;
pub mod rewards;
pub mod service;
