//! Seeded Monte Carlo over the dilation's marked Poisson noise.
//!
//! Arrivals come from a rate-lambda exponential clock; each arrival draws
//! a mark from the environment law and moves the system through the
//! coupling's system component. Every path owns an independent,
//! reproducible RNG stream derived from (seed, path index), so parallel
//! generation is deterministic regardless of scheduling: identical seeds
//! give identical results at any thread count.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use rayon::prelude::*;
use thiserror::Error;

use crate::dilation::{Coupling, Dilation, DilationError, EnvironmentLaw, Mark, MarkedConfiguration};

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("horizon {t} must be finite and nonnegative")]
    BadHorizon { t: f64 },
    #[error("at least one path is required")]
    NoPaths,
    #[error("malformed trajectory: {detail}")]
    Malformed { detail: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("two counting processes share the jump time {t}")]
    DuplicateTime { t: f64 },
    #[error(transparent)]
    Dilation(#[from] DilationError),
}

/// Independent reproducible stream for one path: the ChaCha cipher keyed
/// by the seed, with the path index selecting the stream.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Draws (arrival gap, mark) pairs for one environment law.
struct NoiseSampler<'a> {
    gaps: Exp<f64>,
    which: WeightedIndex<f64>,
    support: &'a [(Mark, f64)],
}

impl<'a> NoiseSampler<'a> {
    fn new(law: &'a EnvironmentLaw) -> Self {
        let support = law.support();
        let gaps = Exp::new(law.lambda()).expect("law has positive rate");
        let which =
            WeightedIndex::new(support.iter().map(|&(_, w)| w)).expect("support is non-empty");
        Self { gaps, which, support }
    }

    fn next_arrival(&self, now: f64, rng: &mut ChaCha8Rng) -> (f64, Mark) {
        let mut t = now + self.gaps.sample(rng);
        if t <= now {
            // Ties and zero gaps have probability zero but would break the
            // strict-increase invariant; nudge by one ulp.
            t = now.next_up();
        }
        (t, self.support[self.which.sample(rng)].0)
    }
}

/// Sample the environment's marked Poisson configuration on (0, t_max].
pub fn sample_configuration(
    law: &EnvironmentLaw,
    t_max: f64,
    seed: u64,
) -> Result<MarkedConfiguration, SimulateError> {
    sample_configuration_with(law, t_max, &mut path_rng(seed, 0))
}

/// As [`sample_configuration`] but drawing from a caller-owned stream.
pub fn sample_configuration_with(
    law: &EnvironmentLaw,
    t_max: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MarkedConfiguration, SimulateError> {
    if !t_max.is_finite() || t_max <= 0.0 {
        return Err(SimulateError::BadHorizon { t: t_max });
    }
    let sampler = NoiseSampler::new(law);
    let mut points = Vec::new();
    let mut now = 0.0;
    loop {
        let (t, mark) = sampler.next_arrival(now, rng);
        if t > t_max {
            break;
        }
        points.push((t, mark));
        now = t;
    }
    Ok(MarkedConfiguration::new(points, 0.0, t_max)?)
}

/// One jump of a simulated path: the arrival time, the environment mark
/// that caused it, and the state entered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub mark: Mark,
    pub state: usize,
}

/// A piecewise-constant path on [0, horizon].
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial: usize,
    pub jumps: Vec<Jump>,
    pub horizon: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> usize {
        self.jumps.last().map_or(self.initial, |j| j.state)
    }

    /// State at time t (right-continuous: the jump at t has happened).
    pub fn state_at(&self, t: f64) -> usize {
        let mut state = self.initial;
        for jump in &self.jumps {
            if jump.time > t {
                break;
            }
            state = jump.state;
        }
        state
    }

    /// (time, state entered) for every jump.
    pub fn state_path(&self) -> Vec<(f64, usize)> {
        self.jumps.iter().map(|j| (j.time, j.state)).collect()
    }

    /// Jump times split by mark, sorted by mark: the counting processes
    /// N_g of the path.
    pub fn counting(&self) -> Vec<(Mark, Vec<f64>)> {
        let mut by_mark: Vec<(Mark, Vec<f64>)> = Vec::new();
        for jump in &self.jumps {
            match by_mark.binary_search_by_key(&jump.mark, |&(m, _)| m) {
                Ok(k) => by_mark[k].1.push(jump.time),
                Err(k) => by_mark.insert(k, (jump.mark, vec![jump.time])),
            }
        }
        by_mark
    }
}

/// Drive one path from state k over [0, t_max] using the given stream.
pub fn simulate_path_with(
    d: &Dilation,
    k: usize,
    t_max: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory, SimulateError> {
    if !t_max.is_finite() || t_max < 0.0 {
        return Err(SimulateError::BadHorizon { t: t_max });
    }
    if k >= d.n() {
        return Err(SimulateError::Dilation(DilationError::BadState { state: k, n: d.n() }));
    }
    let sampler = NoiseSampler::new(d.law());
    let mut jumps = Vec::new();
    let mut state = k;
    let mut now = 0.0;
    if t_max > 0.0 {
        loop {
            let (t, mark) = sampler.next_arrival(now, rng);
            if t > t_max {
                break;
            }
            state = d.coupling().system_part(state, mark)?;
            jumps.push(Jump { time: t, mark, state });
            now = t;
        }
    }
    Ok(Trajectory { initial: k, jumps, horizon: t_max })
}

/// Seeded wrapper around [`simulate_path_with`].
pub fn simulate_path(
    d: &Dilation,
    k: usize,
    t_max: f64,
    seed: u64,
) -> Result<Trajectory, SimulateError> {
    simulate_path_with(d, k, t_max, &mut path_rng(seed, 0))
}

/// Replay a fixed noise configuration from state k: the pathwise solution
/// X_t = phi^E-thread of the marks in (0, t].
pub fn path_from_configuration(
    d: &Dilation,
    k: usize,
    config: &MarkedConfiguration,
) -> Result<Trajectory, SimulateError> {
    let (_, hi) = config.window();
    if !hi.is_finite() {
        return Err(SimulateError::BadHorizon { t: hi });
    }
    let mut state = k;
    let mut jumps = Vec::new();
    for &(t, mark) in config.points() {
        if t <= 0.0 {
            continue;
        }
        state = d.coupling().system_part(state, mark)?;
        jumps.push(Jump { time: t, mark, state });
    }
    Ok(Trajectory { initial: k, jumps, horizon: hi })
}

/// Empirical law of X_t over many independent paths.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    counts: Vec<u64>,
    paths: u64,
}

impl EmpiricalDistribution {
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn paths(&self) -> u64 {
        self.paths
    }

    pub fn freq(&self, j: usize) -> f64 {
        self.counts[j] as f64 / self.paths as f64
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|j| self.freq(j)).collect()
    }
}

fn final_state_one_path(d: &Dilation, sampler: &NoiseSampler, k: usize, t: f64, rng: &mut ChaCha8Rng) -> usize {
    let mut state = k;
    let mut now = 0.0;
    loop {
        let (arrival, mark) = sampler.next_arrival(now, rng);
        if arrival > t {
            return state;
        }
        state = d
            .coupling()
            .system_part(state, mark)
            .expect("law support lies in the prescribed region");
        now = arrival;
    }
}

/// Empirical law of X_t from `paths` independent seeded paths started at k.
pub fn empirical_semigroup(
    d: &Dilation,
    k: usize,
    t: f64,
    paths: u64,
    seed: u64,
) -> Result<EmpiricalDistribution, SimulateError> {
    if !t.is_finite() || t < 0.0 {
        return Err(SimulateError::BadHorizon { t });
    }
    if paths == 0 {
        return Err(SimulateError::NoPaths);
    }
    if k >= d.n() {
        return Err(SimulateError::Dilation(DilationError::BadState { state: k, n: d.n() }));
    }
    let sampler = NoiseSampler::new(d.law());
    let n = d.n();
    let counts = (0..paths)
        .into_par_iter()
        .fold(
            || vec![0u64; n],
            |mut acc, path| {
                let mut rng = path_rng(seed, path);
                let state = final_state_one_path(d, &sampler, k, t, &mut rng);
                acc[state] += 1;
                acc
            },
        )
        .reduce(
            || vec![0u64; n],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    Ok(EmpiricalDistribution { counts, paths })
}

/// Joint counts of (X_t, X_{t+s}) over `paths` seeded paths started at k,
/// as an n x n table indexed [state at t][state at t + s].
pub fn conditional_counts(
    d: &Dilation,
    k: usize,
    t: f64,
    s: f64,
    paths: u64,
    seed: u64,
) -> Result<Vec<Vec<u64>>, SimulateError> {
    if !t.is_finite() || t < 0.0 {
        return Err(SimulateError::BadHorizon { t });
    }
    if !s.is_finite() || s <= 0.0 {
        return Err(SimulateError::BadHorizon { t: s });
    }
    if paths == 0 {
        return Err(SimulateError::NoPaths);
    }
    if k >= d.n() {
        return Err(SimulateError::Dilation(DilationError::BadState { state: k, n: d.n() }));
    }
    let sampler = NoiseSampler::new(d.law());
    let n = d.n();
    let flat = (0..paths)
        .into_par_iter()
        .fold(
            || vec![0u64; n * n],
            |mut acc, path| {
                let mut rng = path_rng(seed, path);
                let mut state = k;
                let mut now = 0.0;
                let mut at_t = None;
                loop {
                    let (arrival, mark) = sampler.next_arrival(now, &mut rng);
                    if at_t.is_none() && arrival > t {
                        at_t = Some(state);
                    }
                    if arrival > t + s {
                        break;
                    }
                    state = d
                        .coupling()
                        .system_part(state, mark)
                        .expect("law support lies in the prescribed region");
                    now = arrival;
                }
                let a = at_t.expect("crossing time t happens before t + s");
                acc[a * n + state] += 1;
                acc
            },
        )
        .reduce(
            || vec![0u64; n * n],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    Ok((0..n).map(|i| flat[i * n..(i + 1) * n].to_vec()).collect())
}

fn validate_trajectory(traj: &Trajectory, n: usize) -> Result<(), SimulateError> {
    if traj.initial >= n {
        return Err(SimulateError::Malformed {
            detail: format!("initial state {} out of range", traj.initial),
        });
    }
    let mut prev = 0.0;
    for jump in &traj.jumps {
        if !jump.time.is_finite() || jump.time <= prev || jump.time > traj.horizon {
            return Err(SimulateError::Malformed {
                detail: format!("jump time {} outside (\u{2026}{prev}, {}]", jump.time, traj.horizon),
            });
        }
        if jump.state >= n {
            return Err(SimulateError::Malformed {
                detail: format!("jump state {} out of range", jump.state),
            });
        }
        prev = jump.time;
    }
    Ok(())
}

/// Check the pathwise jump equation for an observable f on states: at
/// every jump with mark g from state x, the increment of f along the path
/// must equal f(phi^E(x, g)) - f(x), and f is constant between jumps by
/// construction. Exact comparison, no tolerance.
pub fn verify_flow_sde(
    traj: &Trajectory,
    coupling: &Coupling,
    f: &[f64],
) -> Result<bool, SimulateError> {
    let n = coupling.n();
    if f.len() != n {
        return Err(SimulateError::DimensionMismatch { expected: n, got: f.len() });
    }
    validate_trajectory(traj, n)?;
    let mut state = traj.initial;
    for jump in &traj.jumps {
        let increment = f[jump.state] - f[state];
        let predicted = f[coupling.system_part(state, jump.mark)?] - f[state];
        if increment != predicted {
            return Ok(false);
        }
        state = jump.state;
    }
    Ok(true)
}

/// Rebuild the state path from per-mark counting processes: merge all jump
/// times, and thread the state through the marks in time order. Returns
/// (time, state entered) pairs.
pub fn innovation_reconstruct(
    coupling: &Coupling,
    k: usize,
    counting: &[(Mark, Vec<f64>)],
) -> Result<Vec<(f64, usize)>, SimulateError> {
    if k >= coupling.n() {
        return Err(SimulateError::Dilation(DilationError::BadState { state: k, n: coupling.n() }));
    }
    let mut merged: Vec<(f64, Mark)> = Vec::new();
    for (mark, times) in counting {
        for &t in times {
            merged.push((t, *mark));
        }
    }
    merged.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("jump times are comparable"));
    for pair in merged.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(SimulateError::DuplicateTime { t: pair[0].0 });
        }
    }
    let mut state = k;
    let mut path = Vec::with_capacity(merged.len());
    for (t, mark) in merged {
        state = coupling.system_part(state, mark)?;
        path.push((t, state));
    }
    Ok(path)
}
