//! HTTP API and command-line front end for the travista store.

pub mod api;
pub mod cli;
