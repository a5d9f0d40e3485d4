//! Energy storage price arbitrage against real-time electricity markets.
//!
//! The pipeline: ingest historical real-time and day-ahead prices
//! ([`pricedata`]), discretize prices into nodes and train hourly Markov
//! transition matrices ([`markov`]), compute piecewise-linear marginal value
//! functions with a closed-form backward pass ([`valuation`]), map realized
//! prices to dispatch decisions ([`policy`]), and backtest against perfect-
//! forecast and day-ahead MPC benchmarks ([`simulate`]). Brute-force
//! references for everything live in [`oracle`].

pub mod cli;
pub mod config;
pub mod error;
pub mod markov;
pub mod oracle;
pub mod policy;
pub mod pricedata;
pub mod report;
pub mod simulate;
pub mod storage;
pub mod valuation;

pub use error::{Error, Result};
