//! Consistent stochastic price flows with a shadow stock.
//!
//! The crate simulates an `n`-stock market driven by `d` Brownian factors,
//! together with a shadow asset `P0 = p0 * H` that carries the interest rate and
//! the market price of risk. On top of the flow it offers
//!
//! - arbitrage and completeness screens on the coefficients ([`market`]),
//! - wealth, income and gain-in-excess accounting ([`wealth`]),
//! - deflator valuation and hedge synthesis for European claims ([`europricer`]),
//! - regression Snell envelopes for American claims ([`ampricer`]).
//!
//! Every Monte Carlo routine is keyed by `(seed, path_index)`, so results do
//! not depend on the number of worker threads.

pub mod ampricer;
pub mod claim;
pub mod error;
pub mod europricer;
pub mod linalg;
pub mod expr;
pub mod flow;
pub mod market;
pub mod noise;
pub mod presets;
pub mod regression;
pub mod stats;
pub mod wealth;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/markets.md")]
    mod markets {}
    #[doc = include_str!("../../../book/src/flows.md")]
    mod flows {}
    #[doc = include_str!("../../../book/src/wealth.md")]
    mod wealth {}
    #[doc = include_str!("../../../book/src/european.md")]
    mod european {}
    #[doc = include_str!("../../../book/src/american.md")]
    mod american {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
