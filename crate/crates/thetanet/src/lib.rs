//! Simulation and verification toolkit for dynamic theta-random graphs and
//! the associated multiplicative ("momentum") coalescents.
//!
//! The crate simulates the block-size spectrum of the partition process
//! exactly at finite population size, integrates the deterministic hierarchy
//! that the rescaled spectrum converges to, simulates the stable-noise
//! fluctuation limit, and evaluates the exact social-bubble sampling law —
//! each with an independent numerical or combinatorial cross-check.
//!
//! Module map:
//! - [`specfun`]: Gamma/Beta, endpoint-singular quadrature, asymptotic checks.
//! - [`measures`]: the driving measure, event rates and exact event sampling.
//! - [`partition`]: union-find partition state with a live block-size table.
//! - [`simulate`]: the event loop, trajectories, ensembles, bubble tracking.
//! - [`limit`]: the limiting ODE hierarchy, closed-form polynomials, and the
//!   finite-n drift it is approached by.
//! - [`fluct`]: fluctuation extraction, the limiting jump process, scaling
//!   statistics.
//! - [`bubble`]: exact bubble-profile law and its brute-force oracle.
//! - [`stats`]: small statistical helpers (KS, IQR, regression, chi-square).



pub mod fluct;
pub mod limit;
pub mod simulate;
pub mod measures;
pub mod partition;
pub mod rng;

pub mod specfun;
pub mod stats;
