//! Batch simulator around `rkfusion`: configuration, synthetic data and the
//! `run` / `validate` / `norm-sweep` / `diagnose` subcommands.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod commands;
pub mod config;
pub mod datagen;
