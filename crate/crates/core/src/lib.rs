//! Deterministic discrete-event simulation of TCP over ATM-UBR switches.

pub mod batch;
pub mod engine;
pub mod experiments;
pub mod framing;
pub mod metrics;
pub mod scenario;
pub mod scoreboard;
pub mod switch;
pub mod tcp;

/// Floating-point type used for reported metrics.
pub type Real = f64;

/// Exact fraction used for switch thresholds and analytic bounds.
pub type Rational = num_rational::Ratio<u64>;
