//! The deterministic limit of the rescaled block-size spectrum.
//!
//! The spectrum `c = (c_1, ..., c_d)` evolves by the hierarchy
//!
//! ```text
//!   dc_i/dt = sum_{l in P2+(i)}  prod_j (j c_j)^{l_j} / l_j!  * Gamma(alpha + |l| - 2)
//!             - gamma * i * c_i,             gamma = Gamma(alpha)/(1 - alpha),
//! ```
//!
//! where `P2+(i)` are the integer partitions of `i` into at least two parts,
//! encoded as multiplicity vectors with no part equal to `i` itself. The gain
//! term collects mergers assembling a block of size `i` from smaller tracked
//! blocks; the loss term is the rate at which a block of size `i` is swallowed.
//!
//! Solutions have the closed form `c_{t,i} = p_i(t) e^{-i gamma t}` with
//! `p_i` a polynomial of degree `i - 1` built by an integral recursion; both
//! the recursion and a plain RK4 integrator are provided and must agree.
//! `prelimit_drift` evaluates the exact finite-n drift, which converges to
//! the hierarchy at rate `n^(alpha-1)` and serves as a convergence oracle.

use crate::specfun::{self, QuadratureSpec, SpecFunError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LimitError {
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("ODE step too large: halving changed the solution by {diff:e} (> {tol:e})")]
    StepTooLarge { diff: f64, tol: f64 },
    #[error(transparent)]
    SpecFun(#[from] SpecFunError),
}

pub type Result<T> = std::result::Result<T, LimitError>;

/// Integer partitions of `i` into at least two parts, as multiplicity
/// vectors of length `d` (entry `j-1` counts parts of size `j`, entry `i-1`
/// is forced to zero). Deterministic lexicographic order.
pub fn partitions_two_plus(i: usize, d: usize) -> Vec<Vec<u32>> {
    assert!(i >= 1 && i <= d, "need 1 <= i <= d");
    let mut out = Vec::new();
    let mut current = vec![0u32; d];
    // Parts are bounded by i-1 (a single part of size i is excluded).
    fn descend(remaining: usize, max_part: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if remaining == 0 {
            out.push(current.clone());
            return;
        }
        for part in (1..=max_part.min(remaining)).rev() {
            current[part - 1] += 1;
            descend(remaining - part, part, current, out);
            current[part - 1] -= 1;
        }
    }
    if i >= 2 {
        descend(i, i - 1, &mut current, &mut out);
    }
    out.sort();
    out
}

fn validate_state(c: &[f64], tol: f64) -> Result<()> {
    let mut mass = 0.0;
    for (j, &cj) in c.iter().enumerate() {
        if !cj.is_finite() || cj < -tol {
            return Err(LimitError::InvalidState(format!(
                "component {} is {cj}",
                j + 1
            )));
        }
        mass += (j + 1) as f64 * cj;
    }
    if mass > 1.0 + tol {
        return Err(LimitError::InvalidState(format!(
            "tracked mass {mass} exceeds 1"
        )));
    }
    Ok(())
}

/// One gain term of the hierarchy: a partition and its Gamma weight.
struct GainTerm {
    ell: Vec<u32>,
    /// `Gamma(alpha + |l| - 2) * prod_j j^{l_j} / l_j!`
    weight: f64,
    parts_total: u32,
}

/// The drift field and its Jacobian for fixed `(alpha, d)`.
///
/// Precomputes the partition sets and Gamma factors once; evaluation is then
/// a short polynomial sum per component.
pub struct DriftSystem {
    alpha: f64,
    d: usize,
    decay: f64,
    gains: Vec<Vec<GainTerm>>,
}

impl DriftSystem {
    pub fn new(alpha: f64, d: usize) -> Result<Self> {
        if !(0.0 < alpha && alpha < 1.0) {
            return Err(LimitError::InvalidParams(format!(
                "alpha must lie in (0,1), got {alpha}"
            )));
        }
        if d == 0 {
            return Err(LimitError::InvalidParams("d must be >= 1".into()));
        }
        let decay = specfun::gamma(alpha)? / (1.0 - alpha);
        let mut gains = Vec::with_capacity(d);
        for i in 1..=d {
            let mut terms = Vec::new();
            for ell in partitions_two_plus(i, d) {
                let parts_total: u32 = ell.iter().sum();
                let mut weight = specfun::gamma(alpha + f64::from(parts_total) - 2.0)?;
                for (j, &lj) in ell.iter().enumerate() {
                    for r in 0..lj {
                        weight *= (j + 1) as f64 / f64::from(r + 1);
                    }
                }
                terms.push(GainTerm {
                    ell,
                    weight,
                    parts_total,
                });
            }
            gains.push(terms);
        }
        Ok(Self {
            alpha,
            d,
            decay,
            gains,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    /// The exponential decay rate `gamma = Gamma(alpha)/(1-alpha)`.
    pub fn decay_rate(&self) -> f64 {
        self.decay
    }

    /// Drift `F(c)`.
    pub fn drift(&self, c: &[f64]) -> Result<Vec<f64>> {
        self.check_input(c)?;
        Ok(self.drift_unchecked(c))
    }

    fn drift_unchecked(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for (i0, terms) in self.gains.iter().enumerate() {
            let mut gain = 0.0;
            for term in terms {
                let mut mono = term.weight;
                for (j, &lj) in term.ell.iter().enumerate() {
                    for _ in 0..lj {
                        mono *= c[j];
                    }
                }
                gain += mono;
            }
            out[i0] = gain - self.decay * (i0 + 1) as f64 * c[i0];
        }
        out
    }

    /// Analytic Jacobian `dF_i/dc_k`, by monomial differentiation (no
    /// division by `c_k`, so it is exact at zero components).
    pub fn jacobian(&self, c: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(c)?;
        let mut jac = vec![vec![0.0; self.d]; self.d];
        for (i0, terms) in self.gains.iter().enumerate() {
            for term in terms {
                for (k, &lk) in term.ell.iter().enumerate() {
                    if lk == 0 {
                        continue;
                    }
                    // d/dc_k of  w * prod_j c_j^{l_j}  =  w * l_k c_k^{l_k - 1} * prod_{j!=k} c_j^{l_j}
                    let mut v = term.weight * f64::from(lk);
                    for (j, &lj) in term.ell.iter().enumerate() {
                        let pow = if j == k { lj - 1 } else { lj };
                        for _ in 0..pow {
                            v *= c[j];
                        }
                    }
                    jac[i0][k] += v;
                }
            }
            jac[i0][i0] -= self.decay * (i0 + 1) as f64;
        }
        Ok(jac)
    }

    fn check_input(&self, c: &[f64]) -> Result<()> {
        if c.len() != self.d {
            return Err(LimitError::InvalidState(format!(
                "state has dimension {}, expected {}",
                c.len(),
                self.d
            )));
        }
        validate_state(c, 1e-12)
    }
}

/// Dense univariate polynomial with ascending coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial(pub Vec<f64>);

impl Polynomial {
    pub fn constant(c: f64) -> Self {
        Polynomial(vec![c])
    }

    pub fn degree(&self) -> usize {
        self.0
            .iter()
            .rposition(|&c| c != 0.0)
            .unwrap_or(0)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * t + c)
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, &a) in self.0.iter().enumerate() {
            for (j, &b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Polynomial(out)
    }

    /// Antiderivative vanishing at 0.
    pub fn integral(&self) -> Polynomial {
        let mut out = vec![0.0; self.0.len() + 1];
        for (i, &a) in self.0.iter().enumerate() {
            out[i + 1] = a / (i + 1) as f64;
        }
        Polynomial(out)
    }
}

/// The deterministic limit, either as closed-form polynomials
/// `c_{t,i} = p_i(t) e^{-i gamma t}` or as an integration grid.
#[derive(Debug, Clone)]
pub enum LimitSolution {
    ClosedForm {
        alpha: f64,
        decay: f64,
        polys: Vec<Polynomial>,
    },
    Grid {
        alpha: f64,
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

impl LimitSolution {
    pub fn alpha(&self) -> f64 {
        match self {
            LimitSolution::ClosedForm { alpha, .. } => *alpha,
            LimitSolution::Grid { alpha, .. } => *alpha,
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            LimitSolution::ClosedForm { polys, .. } => polys.len(),
            LimitSolution::Grid { values, .. } => values.first().map_or(0, Vec::len),
        }
    }

    /// Evaluate the solution at time `t` (exact for the closed form, linear
    /// interpolation on the grid).
    pub fn eval(&self, t: f64) -> Vec<f64> {
        match self {
            LimitSolution::ClosedForm { decay, polys, .. } => polys
                .iter()
                .enumerate()
                .map(|(i0, p)| p.eval(t) * (-((i0 + 1) as f64) * decay * t).exp())
                .collect(),
            LimitSolution::Grid { times, values, .. } => {
                if t <= times[0] {
                    return values[0].clone();
                }
                if t >= *times.last().unwrap() {
                    return values.last().unwrap().clone();
                }
                let idx = times.partition_point(|&s| s < t);
                let (t0, t1) = (times[idx - 1], times[idx]);
                if t1 == t0 {
                    return values[idx].clone();
                }
                let w = (t - t0) / (t1 - t0);
                values[idx - 1]
                    .iter()
                    .zip(&values[idx])
                    .map(|(a, b)| a + w * (b - a))
                    .collect()
            }
        }
    }

    pub fn eval_component(&self, t: f64, i: usize) -> f64 {
        self.eval(t)[i - 1]
    }
}

/// Classical fixed-step RK4 for the hierarchy, with a halving self-check:
/// the result is accepted only if integrating at `step/2` moves the solution
/// by at most `1e-8` in the sup norm.
pub fn solve_ode(c0: &[f64], alpha: f64, t_max: f64, step: f64) -> Result<LimitSolution> {
    if !(step > 0.0) || !(t_max >= 0.0) || !t_max.is_finite() {
        return Err(LimitError::InvalidParams(format!(
            "need step > 0 and finite t_max >= 0, got step={step}, t_max={t_max}"
        )));
    }
    let system = DriftSystem::new(alpha, c0.len())?;
    validate_state(c0, 1e-12)?;
    let coarse = rk4_grid(&system, c0, t_max, step);
    let fine = rk4_grid(&system, c0, t_max, step / 2.0);
    let mut diff: f64 = 0.0;
    for (k, row) in coarse.1.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            diff = diff.max((v - fine.1[2 * k][j]).abs());
        }
    }
    const HALVING_TOL: f64 = 1e-8;
    if diff > HALVING_TOL {
        return Err(LimitError::StepTooLarge {
            diff,
            tol: HALVING_TOL,
        });
    }
    Ok(LimitSolution::Grid {
        alpha,
        times: coarse.0,
        values: coarse.1,
    })
}

fn rk4_grid(system: &DriftSystem, c0: &[f64], t_max: f64, step: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let steps = (t_max / step).ceil() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    let mut c = c0.to_vec();
    times.push(0.0);
    values.push(c.clone());
    let d = c.len();
    for k in 0..steps {
        let h = step.min(t_max - k as f64 * step);
        if h <= 0.0 {
            break;
        }
        let k1 = system.drift_unchecked(&c);
        let mut tmp = vec![0.0; d];
        for j in 0..d {
            tmp[j] = c[j] + 0.5 * h * k1[j];
        }
        let k2 = system.drift_unchecked(&tmp);
        for j in 0..d {
            tmp[j] = c[j] + 0.5 * h * k2[j];
        }
        let k3 = system.drift_unchecked(&tmp);
        for j in 0..d {
            tmp[j] = c[j] + h * k3[j];
        }
        let k4 = system.drift_unchecked(&tmp);
        for j in 0..d {
            c[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        times.push((k + 1) as f64 * step.min(t_max));
        times[k + 1] = (k as f64 * step + h).min(t_max);
        values.push(c.clone());
    }
    (times, values)
}

/// Closed-form solution: `c_{t,i} = p_i(t) e^{-i gamma t}` with the
/// polynomial recursion
///
/// ```text
///   p_i(t) = c_{0,i} + sum_{l in P2+(i)} Gamma(alpha + |l| - 2)
///            * prod_j j^{l_j}/l_j! * ∫_0^t prod_j p_j(s)^{l_j} ds.
/// ```
pub fn closed_form(c0: &[f64], alpha: f64, d: usize) -> Result<LimitSolution> {
    if c0.len() != d {
        return Err(LimitError::InvalidParams(format!(
            "initial condition has length {}, expected {d}",
            c0.len()
        )));
    }
    let system = DriftSystem::new(alpha, d)?;
    validate_state(c0, 1e-12)?;
    let mut polys: Vec<Polynomial> = Vec::with_capacity(d);
    for i in 1..=d {
        let mut p = Polynomial::constant(c0[i - 1]);
        for term in &system.gains[i - 1] {
            let mut prod = Polynomial::constant(term.weight);
            for (j, &lj) in term.ell.iter().enumerate() {
                for _ in 0..lj {
                    prod = prod.mul(&polys[j]);
                }
            }
            let integ = prod.integral();
            if p.0.len() < integ.0.len() {
                p.0.resize(integ.0.len(), 0.0);
            }
            for (k, v) in integ.0.iter().enumerate() {
                p.0[k] += v;
            }
        }
        debug_assert!(p.degree() <= i.saturating_sub(1), "degree bound violated");
        polys.push(p);
    }
    Ok(LimitSolution::ClosedForm {
        alpha,
        decay: system.decay_rate(),
        polys,
    })
}

/// Exact drift of the finite-n spectrum chain on the `1/n` grid,
/// `F^n = F^{n,+} - F^{n,-}`:
///
/// ```text
///   F_i^{n,+}(c) = n^(alpha-2) sum_{l in P2+(i)} C(nc, l)
///                  ∫ prod_j p_j(u)^{l_j} u^(alpha-3) (1-u)^(n-i+beta-1) du
///   F_i^{n,-}(c) = n^(alpha-1) c_i ∫ p_i(u) (1-(1-u)^(n-i)) u^(alpha-3) (1-u)^(beta-1) du
/// ```
///
/// with `p_j(u) = 1-(1-u)^j` the block marking probability. Converges
/// uniformly to [`DriftSystem::drift`] at rate `n^(alpha-1)`.
pub fn prelimit_drift(
    c: &[f64],
    n: u64,
    alpha: f64,
    beta_param: f64,
    spec: &QuadratureSpec,
) -> Result<Vec<f64>> {
    if !(0.0 < alpha && alpha < 1.0) || !(beta_param > 0.0) {
        return Err(LimitError::InvalidParams(format!(
            "need alpha in (0,1), beta > 0; got ({alpha}, {beta_param})"
        )));
    }
    let d = c.len();
    validate_state(c, 1e-12)?;
    let nf = n as f64;
    let mut block_counts = vec![0u64; d];
    for (j, &cj) in c.iter().enumerate() {
        let scaled = cj * nf;
        if (scaled - scaled.round()).abs() > 1e-6 {
            return Err(LimitError::InvalidState(format!(
                "component {} = {cj} is not on the 1/{n} grid",
                j + 1
            )));
        }
        block_counts[j] = scaled.round() as u64;
    }
    let system = DriftSystem::new(alpha, d)?;
    let mut out = vec![0.0; d];
    for i in 1..=d {
        // Gain part.
        let mut gain = 0.0;
        for term in &system.gains[i - 1] {
            // log C(nc, l); zero if any l_j exceeds the available blocks.
            let mut ln_choose = 0.0;
            let mut feasible = true;
            for (j, &lj) in term.ell.iter().enumerate() {
                if u64::from(lj) > block_counts[j] {
                    feasible = false;
                    break;
                }
                if lj > 0 {
                    let m = block_counts[j] as f64;
                    ln_choose += specfun::ln_gamma(m + 1.0)
                        - specfun::ln_gamma(f64::from(lj) + 1.0)
                        - specfun::ln_gamma(m - f64::from(lj) + 1.0);
                }
            }
            if !feasible {
                continue;
            }
            let tail_pow = nf - i as f64 + beta_param - 1.0;
            let sigma = alpha - 3.0 + f64::from(term.parts_total);
            let ell = term.ell.clone();
            let integral = specfun::singular_integral(
                move |u, omu| {
                    // prod_j (p_j(u)/u)^{l_j} * (1-u)^{n-i+beta-1}
                    let ln_omu = specfun::ln_complement(u, omu);
                    let mut v = (tail_pow * ln_omu).exp();
                    for (j, &lj) in ell.iter().enumerate() {
                        if lj == 0 {
                            continue;
                        }
                        let marked = -(((j + 1) as f64) * ln_omu).exp_m1() / u;
                        for _ in 0..lj {
                            v *= marked;
                        }
                    }
                    v
                },
                sigma,
                spec,
            )?;
            if integral > 0.0 {
                gain += ((alpha - 2.0) * nf.ln() + ln_choose + integral.ln()).exp();
            }
        }
        // Loss part.
        let ci = c[i - 1];
        let loss = if ci > 0.0 {
            let inner = specfun::singular_integral(
                move |u, omu| {
                    let ln_omu = specfun::ln_complement(u, omu);
                    let marked = -((i as f64) * ln_omu).exp_m1() / u;
                    let others = -((nf - i as f64) * ln_omu).exp_m1() / u;
                    marked * others * omu.powf(beta_param - 1.0)
                },
                alpha - 1.0,
                spec,
            )?;
            nf.powf(alpha - 1.0) * ci * inner
        } else {
            0.0
        };
        out[i - 1] = gain - loss;
    }
    Ok(out)
}
