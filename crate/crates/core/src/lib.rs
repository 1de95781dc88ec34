//! Conditional-GAN scenario generation for multi-asset price paths, with
//! long-only maximum-Sharpe allocation and rolling-window backtests.

pub mod autodiff;
pub mod backtest;
pub mod data;
pub mod error;
pub mod gan;
pub mod nn;
pub mod normalization;
pub mod portfolio;
pub mod rng;

pub use error::{Error, Result};
