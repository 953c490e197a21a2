//! The driving measure and exact sampling of its non-silent events.
//!
//! The graph process is driven by a Poisson point process with intensity
//! `dt Theta(du dq) / u^2`, which has infinite total mass near `u = 0`. Only
//! events colouring at least two vertices can change the partition, and their
//! total rate
//!
//! ```text
//!   R(n) = ∫ P(Binomial(n, u) >= 2) Theta(du dq) / u^2
//! ```
//!
//! is finite for the Beta family with `alpha ∈ (0, 1)`. This module works
//! with the embedded jump chain of those candidate events: waiting times are
//! exponential at rate `R(n)` (plus the pairwise rate `theta n(n-1)/2`), the
//! colouring probability `u` is drawn from the tilted law
//! `P(Bin(n,u) >= 2) Theta(du)/u^2`, and the coloured count from the
//! conditioned binomial. Events that end up changing nothing (all coloured
//! vertices in one block, or no cross-block edges at `q < 1`) are applied as
//! silent no-ops, so the event law stays exactly that of the first
//! non-silent candidate of the Poisson construction.
//!
//! In rescaled time (the variable of the limit theorems) merger rates are
//! multiplied by `n^(alpha-1)`; this is supported for the Beta x Dirac
//! family only.

use crate::specfun::{self, QuadratureSpec, SpecFunError};
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("rescaled time is only supported for the beta_dirac variant")]
    UnsupportedRescale,
    #[error("total event rate is zero; no event can be sampled")]
    ZeroTotalRate,
    #[error("no continuous u-law to tabulate for this variant")]
    NoContinuousLaw,
    #[error("inverse-CDF grid must have at least 64 knots, got {0}")]
    GridTooSmall(usize),
    #[error(transparent)]
    SpecFun(#[from] SpecFunError),
}

pub type Result<T> = std::result::Result<T, MeasureError>;

/// The driving measure `Theta` on `[0,1] x (0,1]`, plus an optional
/// independent edgewise rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ThetaMeasure {
    /// `u^(alpha-1) (1-u)^(beta-1) du x delta_1(dq)` (unnormalised), the
    /// Beta family the limit theorems are stated for.
    BetaDirac {
        alpha: f64,
        beta: f64,
        #[serde(default)]
        theta: f64,
    },
    /// A finite list of atoms `(weight, u, q)`.
    #[serde(rename = "atoms")]
    GeneralProduct {
        atoms: Vec<(f64, f64, f64)>,
        #[serde(default)]
        theta: f64,
    },
    /// Pure pairwise merging at rate `theta` per vertex pair.
    #[serde(rename = "edgewise")]
    EdgewiseOnly { theta: f64 },
}

impl ThetaMeasure {
    pub fn validate(&self) -> Result<()> {
        match self {
            ThetaMeasure::BetaDirac { alpha, beta, theta } => {
                if !(0.0 < *alpha && *alpha < 1.0) {
                    return Err(MeasureError::InvalidMeasure(format!(
                        "alpha must lie in (0,1), got {alpha}"
                    )));
                }
                if !(*beta > 0.0) {
                    return Err(MeasureError::InvalidMeasure(format!(
                        "beta must be positive, got {beta}"
                    )));
                }
                if !(*theta >= 0.0) {
                    return Err(MeasureError::InvalidMeasure(format!(
                        "theta must be nonnegative, got {theta}"
                    )));
                }
            }
            ThetaMeasure::GeneralProduct { atoms, theta } => {
                if atoms.is_empty() {
                    return Err(MeasureError::InvalidMeasure("atom list is empty".into()));
                }
                for &(w, u, q) in atoms {
                    if !(w > 0.0) || !(u > 0.0 && u <= 1.0) || !(q > 0.0 && q <= 1.0) {
                        return Err(MeasureError::InvalidMeasure(format!(
                            "atom (w={w}, u={u}, q={q}) out of range"
                        )));
                    }
                }
                if !(*theta >= 0.0) {
                    return Err(MeasureError::InvalidMeasure(format!(
                        "theta must be nonnegative, got {theta}"
                    )));
                }
            }
            ThetaMeasure::EdgewiseOnly { theta } => {
                if !(*theta >= 0.0) {
                    return Err(MeasureError::InvalidMeasure(format!(
                        "theta must be nonnegative, got {theta}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Edgewise pair rate.
    pub fn theta(&self) -> f64 {
        match self {
            ThetaMeasure::BetaDirac { theta, .. }
            | ThetaMeasure::GeneralProduct { theta, .. }
            | ThetaMeasure::EdgewiseOnly { theta } => *theta,
        }
    }
}

/// `P(Binomial(n, u) >= 2)`, stable down to arbitrarily small `u`.
///
/// Rewritten as `1 - (1-u)^(n-1) (1 + (n-1)u)` through `ln1p`/`expm1`, with
/// a series for the exponent once `(n-1)u < 1e-4`, where the direct form
/// loses all significant digits.
pub fn prob_at_least_two(n: u64, u: f64) -> f64 {
    if n < 2 || u <= 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    -(log_lt2((n - 1) as f64, u)).exp_m1()
}

// ln P(Bin(n,u) < 2) = m ln(1-u) + ln(1+mu), m = n-1.
fn log_lt2(m: f64, u: f64) -> f64 {
    if m * u < 1e-4 {
        lt2_exponent_over_u2(m, u) * u * u
    } else {
        m * (-u).ln_1p() + (m * u).ln_1p()
    }
}

// (m ln(1-u) + ln(1+mu)) / u^2 as a series, valid for mu < 1e-4; avoids
// forming u^2, which underflows before u does.
fn lt2_exponent_over_u2(m: f64, u: f64) -> f64 {
    -m * (m + 1.0) / 2.0 + u * m * (m * m - 1.0) / 3.0 - u * u * m * (m * m * m + 1.0) / 4.0
}

/// `P(Binomial(n, u) >= 2) / u^2`, the tilt applied to `Theta(du)/u^2`.
pub fn tilted_weight(n: u64, u: f64) -> f64 {
    if n < 2 || u <= 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    let m = (n - 1) as f64;
    if m * u < 1e-4 {
        let s2 = lt2_exponent_over_u2(m, u);
        let s = s2 * u * u;
        // -expm1(s)/u^2 = -s2 (1 + s/2 + s^2/6 + ...)
        -s2 * (1.0 + s / 2.0 + s * s / 6.0)
    } else {
        prob_at_least_two(n, u) / (u * u)
    }
}

/// Rate of candidate mergers (>= 2 coloured vertices), before any time
/// rescaling: `∫ P(Bin(n,u) >= 2) Theta(du x dq) / u^2`.
pub fn merger_event_rate(measure: &ThetaMeasure, n: u64) -> Result<f64> {
    measure.validate()?;
    if n < 2 {
        return Ok(0.0);
    }
    match measure {
        ThetaMeasure::BetaDirac { alpha, beta, .. } => {
            let (a, b) = (*alpha, *beta);
            let spec = QuadratureSpec::default();
            Ok(specfun::singular_integral(
                move |u, omu| tilted_weight(n, u) * omu.powf(b - 1.0),
                a - 1.0,
                &spec,
            )?)
        }
        ThetaMeasure::GeneralProduct { atoms, .. } => Ok(atoms
            .iter()
            .map(|&(w, u, _)| w * tilted_weight(n, u))
            .sum()),
        ThetaMeasure::EdgewiseOnly { .. } => Ok(0.0),
    }
}

/// Total candidate event rate: tilted mergers plus `theta n(n-1)/2` edgewise
/// pairs. With `rescale` the merger part is multiplied by `n^(alpha-1)`
/// (Beta x Dirac only), putting the clock in the time variable of the limit
/// theorems.
pub fn effective_event_rate(measure: &ThetaMeasure, n: u64, rescale: bool) -> Result<f64> {
    let merger = merger_event_rate(measure, n)?;
    let merger = if rescale {
        match measure {
            ThetaMeasure::BetaDirac { alpha, .. } => merger * (n as f64).powf(alpha - 1.0),
            _ => return Err(MeasureError::UnsupportedRescale),
        }
    } else {
        merger
    };
    let nf = n as f64;
    Ok(merger + measure.theta() * nf * (nf - 1.0) / 2.0)
}

/// A sampled candidate event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventSample {
    /// A `(u, q)`-merger with the number of coloured vertices (always >= 2);
    /// the coloured set itself is uniform given the count.
    Merger { u: f64, q: f64, colored_count: u64 },
    /// One uniformly chosen vertex pair merges.
    EdgewisePair,
}

/// Inverse-CDF table for the tilted `u`-law at fixed `(measure, n)`.
///
/// The continuous variant holds monotone `(cdf, u)` knots on a geometric
/// grid, refined where single cells carry too much mass; sampling is linear
/// interpolation in CDF space. The discrete variant is a weighted atom list.
#[derive(Debug, Clone)]
pub enum UCdfTable {
    Continuous { cdf: Vec<f64>, u: Vec<f64> },
    Discrete { cdf: Vec<f64>, u: Vec<f64>, q: Vec<f64> },
}

impl UCdfTable {
    /// Tabulate the tilted law for a Beta x Dirac or atom measure.
    ///
    /// `grid_size` is the initial knot count (>= 64); cells holding more
    /// than four average masses are split until balanced.
    pub fn build(measure: &ThetaMeasure, n: u64, grid_size: usize) -> Result<Self> {
        measure.validate()?;
        if grid_size < 64 {
            return Err(MeasureError::GridTooSmall(grid_size));
        }
        match measure {
            ThetaMeasure::BetaDirac { alpha, beta, .. } => {
                build_continuous(*alpha, *beta, n, grid_size)
            }
            ThetaMeasure::GeneralProduct { atoms, .. } => {
                let mut weights: Vec<f64> = atoms
                    .iter()
                    .map(|&(w, u, _)| w * tilted_weight(n, u))
                    .collect();
                let total: f64 = weights.iter().sum();
                if total <= 0.0 {
                    return Err(MeasureError::ZeroTotalRate);
                }
                let mut acc = 0.0;
                for w in &mut weights {
                    acc += *w / total;
                    *w = acc;
                }
                if let Some(last) = weights.last_mut() {
                    *last = 1.0;
                }
                Ok(UCdfTable::Discrete {
                    cdf: weights,
                    u: atoms.iter().map(|a| a.1).collect(),
                    q: atoms.iter().map(|a| a.2).collect(),
                })
            }
            ThetaMeasure::EdgewiseOnly { .. } => Err(MeasureError::NoContinuousLaw),
        }
    }

    /// Map a uniform variate to `(u, q)`.
    pub fn sample_u(&self, p: f64) -> (f64, f64) {
        match self {
            UCdfTable::Continuous { cdf, u } => {
                let idx = cdf.partition_point(|&c| c < p).clamp(1, cdf.len() - 1);
                let (c0, c1) = (cdf[idx - 1], cdf[idx]);
                let w = if c1 > c0 { (p - c0) / (c1 - c0) } else { 0.0 };
                (u[idx - 1] + w * (u[idx] - u[idx - 1]), 1.0)
            }
            UCdfTable::Discrete { cdf, u, q } => {
                let idx = cdf.partition_point(|&c| c < p).min(cdf.len() - 1);
                (u[idx], q[idx])
            }
        }
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        match self {
            UCdfTable::Continuous { cdf, u } => (cdf, u),
            UCdfTable::Discrete { cdf, u, .. } => (cdf, u),
        }
    }
}

// 16-point Gauss-Legendre nodes/weights on [-1, 1], by Newton iteration on
// the Legendre recurrence.
fn gauss_legendre_16() -> (Vec<f64>, Vec<f64>) {
    let n = 16usize;
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            let dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                xs[i] = -z;
                xs[n - 1 - i] = z;
                let w = 2.0 / ((1.0 - z * z) * dp * dp);
                ws[i] = w;
                ws[n - 1 - i] = w;
                break;
            }
        }
    }
    (xs, ws)
}

fn build_continuous(alpha: f64, beta: f64, n: u64, grid_size: usize) -> Result<UCdfTable> {
    if n < 2 {
        return Err(MeasureError::ZeroTotalRate);
    }
    let (gl_x, gl_w) = gauss_legendre_16();
    // Tilted density P(>=2) u^(alpha-3) (1-u)^(beta-1), u away from 0.
    let density = |u: f64| -> f64 {
        tilted_weight(n, u) * u.powf(alpha - 1.0) * (1.0 - u).powf(beta - 1.0)
    };
    let cell_mass = |a: f64, b: f64| -> f64 {
        if b >= 1.0 && beta < 1.0 {
            // Right-singular cell: substitute 1-u = w0 z^(1/beta) so the
            // (1-u)^(beta-1) factor integrates exactly.
            let w0 = 1.0 - a;
            let scale = w0.powf(beta) / beta;
            let mut s = 0.0;
            for (x, w) in gl_x.iter().zip(&gl_w) {
                let z = 0.5 * (x + 1.0);
                let u = 1.0 - w0 * z.powf(1.0 / beta);
                s += w * 0.5 * tilted_weight(n, u) * u.powf(alpha - 1.0);
            }
            scale * s
        } else {
            let mid = 0.5 * (a + b);
            let half = 0.5 * (b - a);
            let mut s = 0.0;
            for (x, w) in gl_x.iter().zip(&gl_w) {
                s += w * density(mid + half * x);
            }
            s * half
        }
    };

    // Geometric knots from a floor below which the tilted mass is negligible
    // (the density behaves like C(n,2) u^(alpha-1) there).
    let u_floor = (1e-18f64.powf(1.0 / alpha) / n as f64).clamp(1e-280, 1e-3);
    let k = grid_size;
    let ratio = (1.0 / u_floor).powf(1.0 / (k - 1) as f64);
    let mut edges: Vec<f64> = (0..k).map(|j| u_floor * ratio.powi(j as i32)).collect();
    *edges.last_mut().unwrap() = 1.0;

    let mut masses: Vec<f64> = edges.windows(2).map(|w| cell_mass(w[0], w[1])).collect();

    // Split overweight cells at their geometric midpoint until balanced.
    let budget = 4 * grid_size;
    loop {
        let total: f64 = masses.iter().sum();
        if total <= 0.0 {
            return Err(MeasureError::ZeroTotalRate);
        }
        let cap = 4.0 * total / masses.len() as f64;
        let Some(pos) = masses.iter().position(|&m| m > cap) else {
            break;
        };
        if edges.len() >= budget {
            break;
        }
        let (a, b) = (edges[pos], edges[pos + 1]);
        let mid = (a * b).sqrt();
        edges.insert(pos + 1, mid);
        masses[pos] = cell_mass(a, mid);
        masses.insert(pos + 1, cell_mass(mid, b));
    }

    let total: f64 = masses.iter().sum();
    let mut cdf = Vec::with_capacity(edges.len());
    let mut us = Vec::with_capacity(edges.len());
    cdf.push(0.0);
    us.push(edges[0]);
    let mut acc = 0.0;
    for (i, m) in masses.iter().enumerate() {
        acc += m;
        let c = (acc / total).min(1.0);
        if c > *cdf.last().unwrap() {
            cdf.push(c);
            us.push(edges[i + 1]);
        }
    }
    *cdf.last_mut().unwrap() = 1.0;
    *us.last_mut().unwrap() = 1.0;
    Ok(UCdfTable::Continuous { cdf, u: us })
}

/// Event sampler for a fixed `(measure, n)`, caching rates and the
/// inverse-CDF table. Immutable once built; shareable across workers.
#[derive(Debug, Clone)]
pub struct EventSampler {
    n: u64,
    merger_rate: f64,
    pair_rate: f64,
    table: Option<UCdfTable>,
}

impl EventSampler {
    pub fn new(measure: &ThetaMeasure, n: u64, rescale: bool) -> Result<Self> {
        Self::with_grid(measure, n, rescale, 4096)
    }

    pub fn with_grid(
        measure: &ThetaMeasure,
        n: u64,
        rescale: bool,
        grid_size: usize,
    ) -> Result<Self> {
        measure.validate()?;
        let unscaled = merger_event_rate(measure, n)?;
        let merger_rate = if rescale {
            match measure {
                ThetaMeasure::BetaDirac { alpha, .. } => unscaled * (n as f64).powf(alpha - 1.0),
                _ => return Err(MeasureError::UnsupportedRescale),
            }
        } else {
            unscaled
        };
        let nf = n as f64;
        let pair_rate = measure.theta() * nf * (nf - 1.0) / 2.0;
        let table = if unscaled > 0.0 {
            Some(UCdfTable::build(measure, n, grid_size)?)
        } else {
            None
        };
        Ok(Self {
            n,
            merger_rate,
            pair_rate,
            table,
        })
    }

    /// Total candidate rate in the sampler's clock.
    pub fn total_rate(&self) -> f64 {
        self.merger_rate + self.pair_rate
    }

    pub fn merger_rate(&self) -> f64 {
        self.merger_rate
    }

    pub fn pair_rate(&self) -> f64 {
        self.pair_rate
    }

    pub fn table(&self) -> Option<&UCdfTable> {
        self.table.as_ref()
    }

    /// Draw the next candidate event.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<EventSample> {
        let total = self.total_rate();
        if total <= 0.0 {
            return Err(MeasureError::ZeroTotalRate);
        }
        if rng.random::<f64>() * total < self.pair_rate {
            return Ok(EventSample::EdgewisePair);
        }
        let table = self.table.as_ref().ok_or(MeasureError::ZeroTotalRate)?;
        let (u, q) = table.sample_u(rng.random::<f64>());
        let colored_count = sample_count_at_least_two(self.n, u, rng);
        Ok(EventSample::Merger {
            u,
            q,
            colored_count,
        })
    }
}

/// `Binomial(n, u)` conditioned on `>= 2`, exact.
///
/// When the conditioning event is likely, rejection against the plain
/// binomial; otherwise sequential inversion on the pmf ratios
/// `p_{k+1}/p_k = (n-k)/(k+1) * u/(1-u)` starting from `k = 2`, which needs
/// `O(E[k])` steps and no underflowing prefactors.
pub fn sample_count_at_least_two<R: Rng + ?Sized>(n: u64, u: f64, rng: &mut R) -> u64 {
    debug_assert!(n >= 2 && u > 0.0 && u <= 1.0);
    if u >= 1.0 {
        return n;
    }
    let p_lt2 = log_lt2((n - 1) as f64, u).exp();
    if p_lt2 < 0.5 {
        let bin = rand_distr::Binomial::new(n, u).expect("valid binomial parameters");
        loop {
            let k = bin.sample(rng);
            if k >= 2 {
                return k;
            }
        }
    } else {
        let base = u / (1.0 - u);
        let mut terms = Vec::with_capacity(8);
        let mut ck = 1.0f64;
        let mut sum = 1.0f64;
        terms.push(ck);
        let mut k = 2u64;
        while k < n {
            ck *= (n - k) as f64 / (k + 1) as f64 * base;
            if ck < sum * 1e-18 {
                break;
            }
            terms.push(ck);
            sum += ck;
            k += 1;
        }
        let target = rng.random::<f64>() * sum;
        let mut acc = 0.0;
        for (idx, t) in terms.iter().enumerate() {
            acc += t;
            if target <= acc {
                return 2 + idx as u64;
            }
        }
        2 + (terms.len() - 1) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamKind};
    use crate::specfun::singular_integral;

    fn beta_dirac(alpha: f64, beta: f64) -> ThetaMeasure {
        ThetaMeasure::BetaDirac {
            alpha,
            beta,
            theta: 0.0,
        }
    }

    #[test]
    fn serde_formats_round_trip() {
        let examples = [
            r#"{"type":"beta_dirac","alpha":0.5,"beta":1.0,"theta":0.0}"#,
            r#"{"type":"atoms","atoms":[[1.0,0.3,0.5],[0.5,0.9,1.0]],"theta":0.0}"#,
            r#"{"type":"edgewise","theta":1.0}"#,
        ];
        for text in examples {
            let m: ThetaMeasure = serde_json::from_str(text).unwrap();
            m.validate().unwrap();
            let back = serde_json::to_string(&m).unwrap();
            let m2: ThetaMeasure = serde_json::from_str(&back).unwrap();
            assert_eq!(m, m2);
        }
        // theta defaults to 0 when omitted
        let m: ThetaMeasure =
            serde_json::from_str(r#"{"type":"beta_dirac","alpha":0.25,"beta":2.0}"#).unwrap();
        assert_eq!(m.theta(), 0.0);
    }

    #[test]
    fn rate_examples() {
        // n = 1: no pair, no merger.
        for m in [
            beta_dirac(0.5, 1.0),
            ThetaMeasure::EdgewiseOnly { theta: 2.0 },
        ] {
            assert_eq!(merger_event_rate(&m, 1).unwrap(), 0.0);
            assert_eq!(effective_event_rate(&m, 1, false).unwrap(), 0.0);
        }
        // Edgewise on 5 vertices: theta * 10.
        let m = ThetaMeasure::EdgewiseOnly { theta: 0.7 };
        assert!((effective_event_rate(&m, 5, false).unwrap() - 7.0).abs() < 1e-12);
        // BetaDirac alpha=0.5, beta=1, n=2: ∫ u^2 u^{-2.5} du = 2, cross-checked
        // against an independent quadrature route.
        let m = beta_dirac(0.5, 1.0);
        let rate = effective_event_rate(&m, 2, false).unwrap();
        assert!((rate - 2.0).abs() < 1e-8, "rate = {rate}");
        let spec = QuadratureSpec::default();
        let oracle = singular_integral(|_, _| 1.0, -0.5, &spec).unwrap();
        assert!((rate - oracle).abs() < 1e-8);
    }

    #[test]
    fn merger_rate_closed_form_beta_one() {
        // beta = 1, n = 2: rate = 1/alpha for any alpha.
        for alpha in [0.1, 0.25, 0.5, 0.75, 0.9] {
            let rate = merger_event_rate(&beta_dirac(alpha, 1.0), 2).unwrap();
            assert!(
                (rate - 1.0 / alpha).abs() < 1e-8 / alpha,
                "alpha={alpha}: {rate}"
            );
        }
    }

    #[test]
    fn rate_monotone_in_n() {
        let measures = [
            beta_dirac(0.5, 1.0),
            beta_dirac(0.25, 2.0),
            ThetaMeasure::GeneralProduct {
                atoms: vec![(1.0, 0.2, 1.0), (0.3, 0.8, 0.5)],
                theta: 0.1,
            },
        ];
        for m in measures {
            let mut last = -1.0;
            for n in [1u64, 2, 3, 5, 10, 30, 100] {
                let r = effective_event_rate(&m, n, false).unwrap();
                assert!(r >= last - 1e-12, "rate decreased at n={n}");
                last = r;
            }
        }
    }

    #[test]
    fn rescale_unsupported_outside_beta() {
        let m = ThetaMeasure::EdgewiseOnly { theta: 1.0 };
        assert!(matches!(
            effective_event_rate(&m, 5, true),
            Err(MeasureError::UnsupportedRescale)
        ));
    }

    #[test]
    fn prob_at_least_two_small_u_series() {
        // Against the exact n=2 closed form P = u^2.
        for u in [1e-3, 1e-6, 1e-12, 1e-30] {
            let p = prob_at_least_two(2, u);
            assert!((p / (u * u) - 1.0).abs() < 1e-10, "u={u}: {p}");
            assert!((tilted_weight(2, u) - 1.0).abs() < 1e-10);
        }
        // Bounded by C(n,2) and approaching it as u -> 0.
        let w = tilted_weight(1000, 1e-12);
        assert!((w / (999.0 * 1000.0 / 2.0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn edgewise_sampler_always_pairs() {
        let m = ThetaMeasure::EdgewiseOnly { theta: 1.0 };
        let sampler = EventSampler::new(&m, 4, false).unwrap();
        let mut rng = stream(1, StreamKind::Auxiliary, 0);
        for _ in 0..100 {
            assert_eq!(sampler.sample(&mut rng).unwrap(), EventSample::EdgewisePair);
        }
    }

    #[test]
    fn zero_rate_is_an_error() {
        let m = beta_dirac(0.5, 1.0);
        let sampler = EventSampler::new(&m, 1, false).unwrap();
        let mut rng = stream(1, StreamKind::Auxiliary, 1);
        assert!(matches!(
            sampler.sample(&mut rng),
            Err(MeasureError::ZeroTotalRate)
        ));
    }

    #[test]
    fn single_atom_echoes_u_q_and_conditional_binomial() {
        let (u0, q0, n) = (0.3, 0.6, 10u64);
        let m = ThetaMeasure::GeneralProduct {
            atoms: vec![(2.0, u0, q0)],
            theta: 0.0,
        };
        let sampler = EventSampler::new(&m, n, false).unwrap();
        let mut rng = stream(7, StreamKind::Auxiliary, 2);
        let draws = 100_000usize;
        let mut counts = vec![0u64; n as usize + 1];
        for _ in 0..draws {
            match sampler.sample(&mut rng).unwrap() {
                EventSample::Merger {
                    u,
                    q,
                    colored_count,
                } => {
                    assert_eq!(u, u0);
                    assert_eq!(q, q0);
                    assert!(colored_count >= 2);
                    counts[colored_count as usize] += 1;
                }
                EventSample::EdgewisePair => panic!("no pair rate configured"),
            }
        }
        check_conditional_binomial(&counts, n, u0, draws);
    }

    // 4-sigma binomial check of P(colored = k) = C(n,k)u^k(1-u)^{n-k}/P(>=2).
    fn check_conditional_binomial(counts: &[u64], n: u64, u: f64, draws: usize) {
        let z = prob_at_least_two(n, u);
        for k in 2..=n {
            let ln_pmf = specfun::ln_gamma(n as f64 + 1.0)
                - specfun::ln_gamma(k as f64 + 1.0)
                - specfun::ln_gamma((n - k) as f64 + 1.0)
                + k as f64 * u.ln()
                + (n - k) as f64 * (-u).ln_1p();
            let p = ln_pmf.exp() / z;
            let expected = p * draws as f64;
            if expected < 10.0 {
                continue;
            }
            let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
            let diff = (counts[k as usize] as f64 - expected).abs();
            assert!(
                diff <= 4.0 * sigma,
                "k={k}: observed {} expected {expected:.1} (4 sigma = {:.1})",
                counts[k as usize],
                4.0 * sigma
            );
        }
    }

    #[test]
    fn conditional_binomial_both_branches() {
        // u small exercises sequential inversion, u = 0.5 the rejection path.
        for (u, n) in [(0.05f64, 10u64), (0.5, 10u64)] {
            let mut rng = stream(11, StreamKind::Auxiliary, u.to_bits());
            let draws = 100_000usize;
            let mut counts = vec![0u64; n as usize + 1];
            for _ in 0..draws {
                let k = sample_count_at_least_two(n, u, &mut rng);
                assert!(k >= 2);
                counts[k as usize] += 1;
            }
            check_conditional_binomial(&counts, n, u, draws);
        }
    }

    #[test]
    fn table_degenerate_for_single_atom() {
        let m = ThetaMeasure::GeneralProduct {
            atoms: vec![(1.0, 0.42, 1.0)],
            theta: 0.0,
        };
        let table = UCdfTable::build(&m, 10, 64).unwrap();
        for p in [0.0, 0.3, 0.99] {
            assert_eq!(table.sample_u(p), (0.42, 1.0));
        }
    }

    #[test]
    fn table_inverse_matches_square_law_at_n2() {
        // n=2, alpha=0.5, beta=1: tilted density ∝ u^{-1/2}, CDF = sqrt(u),
        // so table knots satisfy u = cdf^2.
        let m = beta_dirac(0.5, 1.0);
        let table = UCdfTable::build(&m, 2, 4096).unwrap();
        let (cdf, us) = table.knots();
        for (c, u) in cdf.iter().zip(us) {
            assert!(
                (u - c * c).abs() < 1e-7,
                "knot cdf={c} u={u} expected {}",
                c * c
            );
        }
    }

    #[test]
    fn table_cdf_reaches_one_and_increases() {
        let m = beta_dirac(0.5, 1.0);
        let table = UCdfTable::build(&m, 1000, 4096).unwrap();
        let (cdf, _) = table.knots();
        assert_eq!(*cdf.last().unwrap(), 1.0);
        assert!(cdf.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn sampled_u_histogram_matches_density() {
        // Chi-square at level 0.01 against bin masses computed by independent
        // quadrature of the tilted density; bin edges aligned to table knots.
        let (alpha, n) = (0.5, 100u64);
        let m = beta_dirac(alpha, 1.0);
        let sampler = EventSampler::new(&m, n, false).unwrap();
        let (_, us) = sampler.table().unwrap().knots();
        let us = us.to_vec();
        let draws = 100_000usize;
        let mut rng = stream(19, StreamKind::Auxiliary, 3);
        let mut samples = Vec::with_capacity(draws);
        for _ in 0..draws {
            match sampler.sample(&mut rng).unwrap() {
                EventSample::Merger { u, .. } => samples.push(u),
                EventSample::EdgewisePair => unreachable!(),
            }
        }
        samples.sort_by(f64::total_cmp);
        let spec = QuadratureSpec::default();
        let total = merger_event_rate(&m, n).unwrap();
        // ∫_a^b of the tilted density, via a shifted unit-interval quadrature.
        let bin_mass = |a: f64, b: f64| -> f64 {
            singular_integral(
                move |x, _| {
                    let u = a + (b - a) * x;
                    tilted_weight(n, u) * u.powf(alpha - 1.0) * (b - a)
                },
                0.0,
                &spec,
            )
            .unwrap()
        };
        let step = us.len() / 40;
        let mut edges: Vec<f64> = us.iter().step_by(step.max(1)).copied().collect();
        edges.push(1.0);
        edges.dedup();
        let mut stat = 0.0;
        let mut dof = 0.0;
        let mut small_exp = 0.0f64;
        let mut small_obs = 0u64;
        for w in edges.windows(2) {
            let p = bin_mass(w[0], w[1]) / total;
            let expected = p * draws as f64;
            let lo = samples.partition_point(|&s| s < w[0]);
            let hi = samples.partition_point(|&s| s < w[1]);
            let observed = (hi - lo) as u64;
            if expected < 20.0 {
                small_exp += expected;
                small_obs += observed;
                continue;
            }
            stat += (observed as f64 - expected).powi(2) / expected;
            dof += 1.0;
        }
        if small_exp > 20.0 {
            stat += (small_obs as f64 - small_exp).powi(2) / small_exp;
            dof += 1.0;
        }
        let p_value = crate::stats::chi_square_pvalue(stat, dof - 1.0);
        assert!(
            p_value > 0.01,
            "chi-square rejects: stat={stat:.1}, dof={dof}, p={p_value:.4}"
        );
    }
}
