//! Shared verification routines used by several integration test targets.
#![allow(dead_code)]

pub mod gradchecks;
pub mod metrics_exhaustive;
