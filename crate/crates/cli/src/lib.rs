//! Library half of the `packtherm` command-line tool, shared with its tests.

pub mod commands;
pub mod config;
pub mod render;
