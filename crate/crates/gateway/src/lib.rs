//! medalchain node service: durable journal, HTTP API and CLI.

pub mod api;
pub mod auth;
pub mod cli;
pub mod config;
pub mod service;
pub mod storage;
