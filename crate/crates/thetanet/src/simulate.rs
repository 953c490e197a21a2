//! The event loop: exact finite-n trajectories of the normalised block-size
//! spectrum, optionally with social-bubble tracking, across independent
//! replicas.
//!
//! A trajectory follows the embedded jump chain of candidate events: the
//! total candidate rate depends only on `n` (vertices are coloured, not
//! blocks), so waiting times are i.i.d. exponentials computed once. For the
//! Beta x Dirac family the clock runs in rescaled time — the time variable of
//! the limit theorems; atom and edgewise measures run in plain time. States
//! are recorded at the requested sample times by carrying the last state
//! forward (the paths are right-continuous).
//!
//! Replicas are embarrassingly parallel: each owns a ChaCha stream derived
//! from `(seed, replica)`, so ensemble output is bitwise independent of the
//! worker count.

use crate::measures::{self, EventSample, EventSampler, MeasureError, ThetaMeasure};
use crate::partition::{PartitionError, PartitionState};
use crate::rng::{stream, StreamKind};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("replica {replica} exceeded the event cap of {cap} events")]
    EventCapExceeded { replica: u64, cap: u64 },
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
}

pub type Result<T> = std::result::Result<T, SimulateError>;

/// Hard per-replica event budget; guards against misconfigured measures
/// whose rates explode.
pub const EVENT_CAP: u64 = 1_000_000_000;

/// What a run records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Block-size spectrum only.
    Spectrum,
    /// Spectrum plus the bubble profile of an initial uniform sample of
    /// size `m0`.
    Bubble { m0: u64 },
}

/// Full description of an ensemble run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub measure: ThetaMeasure,
    pub n: u64,
    pub d: usize,
    pub t_max: f64,
    pub sample_times: Vec<f64>,
    pub replicas: u64,
    pub seed: u64,
    pub mode: Mode,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.measure.validate()?;
        if self.n < 1 {
            return Err(SimulateError::InvalidConfig("n must be >= 1".into()));
        }
        if self.d < 1 || self.d as u64 > self.n {
            return Err(SimulateError::InvalidConfig(format!(
                "need 1 <= d <= n, got d={} n={}",
                self.d, self.n
            )));
        }
        if !(self.t_max >= 0.0) || !self.t_max.is_finite() {
            return Err(SimulateError::InvalidConfig(format!(
                "t_max must be finite and nonnegative, got {}",
                self.t_max
            )));
        }
        if self
            .sample_times
            .windows(2)
            .any(|w| w[0] > w[1])
        {
            return Err(SimulateError::InvalidConfig(
                "sample times must be nondecreasing".into(),
            ));
        }
        if self
            .sample_times
            .iter()
            .any(|&t| t < 0.0 || t > self.t_max || !t.is_finite())
        {
            return Err(SimulateError::InvalidConfig(
                "sample times must lie in [0, t_max]".into(),
            ));
        }
        if self.replicas < 1 {
            return Err(SimulateError::InvalidConfig("replicas must be >= 1".into()));
        }
        if let Mode::Bubble { m0 } = self.mode {
            if m0 < 1 || m0 > self.n {
                return Err(SimulateError::InvalidConfig(format!(
                    "bubble sample size m0={m0} out of range 1..={}",
                    self.n
                )));
            }
        }
        // Rescaled-time runs slow mergers by n^(alpha-1); a simultaneous
        // finite edgewise rate would live on a different clock entirely.
        if let ThetaMeasure::BetaDirac { theta, .. } = &self.measure {
            if *theta > 0.0 {
                return Err(SimulateError::InvalidConfig(
                    "beta_dirac runs use rescaled time and do not support a nonzero edgewise rate"
                        .into(),
                ));
            }
        }
        Ok(())
    }

    /// Beta x Dirac trajectories run in rescaled time.
    pub fn rescaled(&self) -> bool {
        matches!(self.measure, ThetaMeasure::BetaDirac { .. })
    }
}

/// Sampled path of one replica's rescaled spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumTrajectory {
    pub replica: u64,
    pub n: u64,
    /// Sample times (the run clock: rescaled for the Beta family).
    pub times: Vec<f64>,
    /// Raw block counts per sample time, sizes `1..=d`.
    pub counts: Vec<Vec<u64>>,
    pub events_total: u64,
    pub events_silent: u64,
    /// RNG stream index used for this replica.
    pub stream_id: u64,
}

impl SpectrumTrajectory {
    /// Normalised spectrum at sample index `k`: `counts / n ∈ [0,1]^d`.
    pub fn normalized(&self, k: usize) -> Vec<f64> {
        self.counts[k]
            .iter()
            .map(|&c| c as f64 / self.n as f64)
            .collect()
    }
}

/// Bubble observables of one replica.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleTrajectory {
    pub replica: u64,
    pub m0: u64,
    /// The initial uniform sample (0-based vertex ids, sorted).
    pub initial_sample: Vec<u64>,
    pub times: Vec<f64>,
    /// Per sample time: number of bubble blocks of size `1..=d`.
    pub lambda: Vec<Vec<u64>>,
    /// Per sample time: total bubble mass.
    pub mass: Vec<u64>,
}

struct BubbleTracker {
    in_bubble: Vec<bool>,
    counts: Vec<u64>,
    mass: u64,
}

impl BubbleTracker {
    fn new(state: &mut PartitionState, sample: &[usize]) -> Self {
        let n = state.population();
        let mut t = Self {
            in_bubble: vec![false; n],
            counts: vec![0; n + 1],
            mass: 0,
        };
        for &v in sample {
            let r = state.find(v);
            if !t.in_bubble[r] {
                t.in_bubble[r] = true;
                let s = state.block_size(r);
                t.counts[s] += 1;
                t.mass += s as u64;
            }
        }
        t
    }

    fn on_merge(&mut self, group: &crate::partition::MergeGroup) {
        let any_bubble = group.members.iter().any(|&r| self.in_bubble[r]);
        if !any_bubble {
            return;
        }
        for (&r, &s) in group.members.iter().zip(&group.sizes_lost) {
            if self.in_bubble[r] {
                self.counts[s] -= 1;
            } else {
                self.mass += s as u64;
            }
            self.in_bubble[r] = false;
        }
        self.in_bubble[group.root] = true;
        self.counts[group.size_gained] += 1;
    }

    fn lambda(&self, d: usize) -> Vec<u64> {
        self.counts[1..=d].to_vec()
    }
}

fn apply_event<R: Rng + ?Sized>(
    state: &mut PartitionState,
    event: EventSample,
    rng: &mut R,
    bubble: Option<&mut BubbleTracker>,
) -> Result<bool> {
    let report = match event {
        EventSample::Merger {
            q, colored_count, ..
        } => {
            let colored = state.select_colored(colored_count as usize, rng)?;
            state.apply_merger(&colored, q, rng)?
        }
        EventSample::EdgewisePair => {
            let n = state.population();
            let v = rng.random_range(0..n);
            let w = loop {
                let w = rng.random_range(0..n);
                if w != v {
                    break w;
                }
            };
            state.apply_pair_merge(v, w)?
        }
    };
    if let Some(tracker) = bubble {
        for group in &report.groups {
            tracker.on_merge(group);
        }
    }
    Ok(!report.silent())
}

fn run_replica(
    config: &RunConfig,
    sampler: &EventSampler,
    replica: u64,
) -> Result<(SpectrumTrajectory, Option<BubbleTrajectory>)> {
    let mut rng = stream(config.seed, StreamKind::Replica, replica);
    let mut state = PartitionState::new(config.n as usize);
    let mut bubble = match config.mode {
        Mode::Spectrum => None,
        Mode::Bubble { m0 } => {
            let sample = state.select_colored(m0 as usize, &mut rng)?;
            let tracker = BubbleTracker::new(&mut state, &sample);
            let mut ids: Vec<u64> = sample.iter().map(|&v| v as u64).collect();
            ids.sort_unstable();
            Some((tracker, ids))
        }
    };

    let rate = sampler.total_rate();
    let mut t = 0.0f64;
    let mut sample_idx = 0usize;
    let mut counts_out: Vec<Vec<u64>> = Vec::with_capacity(config.sample_times.len());
    let mut lambda_out: Vec<Vec<u64>> = Vec::new();
    let mut mass_out: Vec<u64> = Vec::new();
    let mut events_total = 0u64;
    let mut events_silent = 0u64;

    let mut record_until = |state: &PartitionState,
                            bubble: &Option<(BubbleTracker, Vec<u64>)>,
                            horizon: f64,
                            sample_idx: &mut usize,
                            counts_out: &mut Vec<Vec<u64>>,
                            lambda_out: &mut Vec<Vec<u64>>,
                            mass_out: &mut Vec<u64>| {
        while *sample_idx < config.sample_times.len() && config.sample_times[*sample_idx] <= horizon
        {
            counts_out.push(state.spectrum(config.d));
            if let Some((tracker, _)) = bubble {
                lambda_out.push(tracker.lambda(config.d));
                mass_out.push(tracker.mass);
            }
            *sample_idx += 1;
        }
    };

    if rate > 0.0 {
        loop {
            let u: f64 = rng.random();
            let wait = -(-u).ln_1p() / rate;
            let t_next = t + wait;
            record_until(
                &state,
                &bubble,
                t_next.min(config.t_max),
                &mut sample_idx,
                &mut counts_out,
                &mut lambda_out,
                &mut mass_out,
            );
            if t_next > config.t_max {
                break;
            }
            t = t_next;
            events_total += 1;
            if events_total > EVENT_CAP {
                return Err(SimulateError::EventCapExceeded {
                    replica,
                    cap: EVENT_CAP,
                });
            }
            let event = sampler.sample(&mut rng)?;
            let changed = apply_event(
                &mut state,
                event,
                &mut rng,
                bubble.as_mut().map(|(t, _)| t),
            )?;
            if !changed {
                events_silent += 1;
            }
        }
    } else {
        record_until(
            &state,
            &bubble,
            config.t_max,
            &mut sample_idx,
            &mut counts_out,
            &mut lambda_out,
            &mut mass_out,
        );
    }
    // Any sample times at exactly t_max not yet flushed.
    record_until(
        &state,
        &bubble,
        config.t_max,
        &mut sample_idx,
        &mut counts_out,
        &mut lambda_out,
        &mut mass_out,
    );

    let spectrum = SpectrumTrajectory {
        replica,
        n: config.n,
        times: config.sample_times.clone(),
        counts: counts_out,
        events_total,
        events_silent,
        stream_id: replica,
    };
    let bubble_out = bubble.map(|(tracker, initial)| BubbleTrajectory {
        replica,
        m0: match config.mode {
            Mode::Bubble { m0 } => m0,
            Mode::Spectrum => unreachable!(),
        },
        initial_sample: initial,
        times: config.sample_times.clone(),
        lambda: lambda_out,
        mass: mass_out,
    });
    // Recorded states live on the lattice: integer counts, tracked mass <= n.
    debug_assert!(spectrum.counts.iter().all(|row| {
        row.iter()
            .enumerate()
            .map(|(i, &c)| (i as u64 + 1) * c)
            .sum::<u64>()
            <= spectrum.n
    }));
    Ok((spectrum, bubble_out))
}

/// Exact simulation of one replica's spectrum path.
pub fn run_trajectory(config: &RunConfig, replica: u64) -> Result<SpectrumTrajectory> {
    config.validate()?;
    let sampler = EventSampler::new(&config.measure, config.n, config.rescaled())?;
    Ok(run_replica(config, &sampler, replica)?.0)
}

/// Spectrum plus bubble observables for one replica; the config must be in
/// bubble mode.
pub fn run_bubble_trajectory(
    config: &RunConfig,
    replica: u64,
) -> Result<(SpectrumTrajectory, BubbleTrajectory)> {
    config.validate()?;
    if !matches!(config.mode, Mode::Bubble { .. }) {
        return Err(SimulateError::InvalidConfig(
            "config mode must be bubble".into(),
        ));
    }
    let sampler = EventSampler::new(&config.measure, config.n, config.rescaled())?;
    let (s, b) = run_replica(config, &sampler, replica)?;
    Ok((s, b.expect("bubble mode produces a bubble trajectory")))
}

/// A replica that failed, with the reason; other replicas are unaffected.
#[derive(Debug)]
pub struct ReplicaFailure {
    pub replica: u64,
    pub error: SimulateError,
}

/// All trajectories of an ensemble, ordered by replica id.
#[derive(Debug, Default)]
pub struct Ensemble {
    pub trajectories: Vec<SpectrumTrajectory>,
    pub bubbles: Vec<BubbleTrajectory>,
    pub failures: Vec<ReplicaFailure>,
}

/// Run all replicas of `config` on the current rayon pool.
///
/// Replica streams derive from `(seed, replica)` alone, and results are
/// collected in replica order, so output is identical for any worker count.
pub fn run_ensemble(config: &RunConfig) -> Result<Ensemble> {
    config.validate()?;
    let sampler = EventSampler::new(&config.measure, config.n, config.rescaled())?;
    let results: Vec<_> = (0..config.replicas)
        .into_par_iter()
        .map(|replica| (replica, run_replica(config, &sampler, replica)))
        .collect();
    let mut ensemble = Ensemble::default();
    for (replica, result) in results {
        match result {
            Ok((s, b)) => {
                ensemble.trajectories.push(s);
                if let Some(b) = b {
                    ensemble.bubbles.push(b);
                }
            }
            Err(error) => ensemble.failures.push(ReplicaFailure { replica, error }),
        }
    }
    Ok(ensemble)
}
