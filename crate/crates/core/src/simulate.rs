//! Exact (Gillespie) simulation of the birth-and-death chain.
//!
//! Trajectory `i` of a study seeded with `seed` draws from
//! `ChaCha8Rng::seed_from_u64(mix64(seed, i))`, so runs are reproducible and
//! independent of thread scheduling.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::Serialize;
use thiserror::Error;

use crate::exec::{map_range, Execution};
use crate::model::{ModelError, RateModel};
use crate::operator::choose_truncation;
use crate::qsd::QsdResult;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// SplitMix64 finalizer applied to `seed + (i+1)·φ`, with φ the 64-bit golden ratio.
pub fn mix64(seed: u64, i: u64) -> u64 {
    let mut z = seed.wrapping_add(i.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn trajectory_rng(seed: u64, i: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(seed, i))
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Fixed(u64),
    /// Quasi-stationary law `ν_n`, `n = 1..=len`.
    FromQsd(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub seed: u64,
    pub n_traj: usize,
    pub t_max: f64,
    pub initial: InitialState,
    pub execution: Execution,
}

impl SimulationConfig {
    fn validate(&self) -> Result<(), SimulationError> {
        if self.n_traj == 0 {
            return Err(SimulationError::InvalidConfig("n_traj must be >= 1".into()));
        }
        if !(self.t_max >= 0.0) {
            return Err(SimulationError::InvalidConfig(format!(
                "t_max must be nonnegative, got {}",
                self.t_max
            )));
        }
        if let InitialState::FromQsd(nu) = &self.initial {
            let s: f64 = nu.iter().sum();
            if nu.is_empty() || (s - 1.0).abs() > 1e-9 || nu.iter().any(|p| !(*p >= 0.0)) {
                return Err(SimulationError::InvalidConfig(
                    "initial law must be a probability vector".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Birth and death rates tabulated up to `cap`, evaluated on demand beyond.
pub struct RateTable<'a> {
    model: &'a RateModel,
    k: u64,
    birth: Vec<f64>,
    death: Vec<f64>,
}

impl<'a> RateTable<'a> {
    pub fn new(model: &'a RateModel, k: u64) -> Result<Self, SimulationError> {
        let cap = choose_truncation(model, k)
            .map(|t| 2 * t.n)
            .unwrap_or(1024);
        let mut birth = Vec::with_capacity(cap + 1);
        let mut death = Vec::with_capacity(cap + 1);
        for n in 0..=cap as u64 {
            let (l, m) = model.rates_at(k, n)?;
            birth.push(l);
            death.push(m);
        }
        Ok(Self {
            model,
            k,
            birth,
            death,
        })
    }

    #[inline]
    pub fn rates(&self, n: u64) -> (f64, f64) {
        match (self.birth.get(n as usize), self.death.get(n as usize)) {
            (Some(&l), Some(&m)) => (l, m),
            _ => self
                .model
                .rates_at(self.k, n)
                .unwrap_or((0.0, f64::INFINITY)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryOutcome {
    /// Extinction time, or `t_max` when censored.
    pub time: f64,
    pub censored: bool,
    pub initial: u64,
    pub events: u64,
    pub max_state: u64,
}

/// One Gillespie event at state `n ≥ 1`: holding time `~ Exp(λ_n + μ_n)` and
/// whether the jump goes up (probability `λ_n/(λ_n + μ_n)`).
#[inline]
pub fn next_event<R: Rng>(table: &RateTable<'_>, n: u64, rng: &mut R) -> (f64, bool) {
    let (lam, mu) = table.rates(n);
    let total = lam + mu;
    let hold = rng.sample::<f64, _>(Exp1) / total;
    let u: f64 = rng.random();
    (hold, u * total < lam)
}

/// Runs one path from `initial` until absorption at 0 or `t_max`.
pub fn run_trajectory<R: Rng>(
    table: &RateTable<'_>,
    initial: u64,
    t_max: f64,
    rng: &mut R,
) -> TrajectoryOutcome {
    let mut n = initial;
    let mut t = 0.0;
    let mut events = 0u64;
    let mut max_state = n;
    while n > 0 {
        let (hold, up) = next_event(table, n, rng);
        if t + hold > t_max {
            return TrajectoryOutcome {
                time: t_max,
                censored: true,
                initial,
                events,
                max_state,
            };
        }
        t += hold;
        if up {
            n += 1;
            max_state = max_state.max(n);
        } else {
            n -= 1;
        }
        events += 1;
    }
    TrajectoryOutcome {
        time: t,
        censored: false,
        initial,
        events,
        max_state,
    }
}

/// Single trajectory with its own RNG stream.
pub fn gillespie_trajectory(
    model: &RateModel,
    k: u64,
    seed: u64,
    initial: u64,
    t_max: f64,
) -> Result<TrajectoryOutcome, SimulationError> {
    let table = RateTable::new(model, k)?;
    let mut rng = trajectory_rng(seed, 0);
    Ok(run_trajectory(&table, initial, t_max, &mut rng))
}

/// Cumulative distribution of `ν` for inverse-CDF sampling.
pub fn cumulative(nu: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = nu
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    if let Some(last) = cdf.last_mut() {
        *last = f64::INFINITY;
    }
    cdf
}

/// State `n ≥ 1` drawn from the cumulative table.
pub fn sample_from_cdf<R: Rng>(cdf: &[f64], rng: &mut R) -> u64 {
    let u: f64 = rng.random();
    cdf.partition_point(|&c| c <= u) as u64 + 1
}

pub fn sample_initial_from_qsd(qsd: &QsdResult, seed: u64) -> u64 {
    let cdf = cumulative(&qsd.nu);
    let mut rng = trajectory_rng(seed, 0);
    sample_from_cdf(&cdf, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtinctionStats {
    pub times: Vec<f64>,
    pub censored: Vec<bool>,
    pub censored_fraction: f64,
    /// Mean over uncensored trajectories.
    pub mean: f64,
    pub stderr: f64,
    /// More than 1% of trajectories censored: `mean` is biased low.
    pub censoring_bias: bool,
    /// `(t, fraction with T > t)` at each uncensored extinction time.
    pub survival_curve: Vec<(f64, f64)>,
}

impl ExtinctionStats {
    fn from_outcomes(outcomes: &[TrajectoryOutcome]) -> Self {
        let n = outcomes.len();
        let times: Vec<f64> = outcomes.iter().map(|o| o.time).collect();
        let censored: Vec<bool> = outcomes.iter().map(|o| o.censored).collect();
        let n_cens = censored.iter().filter(|&&c| c).count();
        let mut done: Vec<f64> = outcomes
            .iter()
            .filter(|o| !o.censored)
            .map(|o| o.time)
            .collect();
        let m = done.len();
        let (mean, stderr) = if m == 0 {
            (f64::NAN, f64::NAN)
        } else {
            let mean = done.iter().sum::<f64>() / m as f64;
            let var = if m > 1 {
                done.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (m - 1) as f64
            } else {
                0.0
            };
            (mean, (var / m as f64).sqrt())
        };
        done.sort_by(f64::total_cmp);
        let mut survival_curve = Vec::with_capacity(m + 1);
        survival_curve.push((0.0, 1.0));
        for (i, &t) in done.iter().enumerate() {
            survival_curve.push((t, (n - i - 1) as f64 / n as f64));
        }
        let censored_fraction = n_cens as f64 / n as f64;
        Self {
            times,
            censored,
            censored_fraction,
            mean,
            stderr,
            censoring_bias: censored_fraction > 0.01,
            survival_curve,
        }
    }

    /// Least-squares slope of `log P(T > t)` over the survival points with
    /// `t` between the first and third quartiles of the extinction times.
    pub fn survival_slope(&self) -> Option<f64> {
        let mut done: Vec<f64> = self
            .times
            .iter()
            .zip(&self.censored)
            .filter(|(_, &c)| !c)
            .map(|(&t, _)| t)
            .collect();
        if done.len() < 8 {
            return None;
        }
        done.sort_by(f64::total_cmp);
        let q = |p: f64| done[((done.len() - 1) as f64 * p).round() as usize];
        let (q1, q3) = (q(0.25), q(0.75));
        let pts: Vec<(f64, f64)> = self
            .survival_curve
            .iter()
            .filter(|(t, s)| *t >= q1 && *t <= q3 && *s > 0.0)
            .map(|&(t, s)| (t, s.ln()))
            .collect();
        least_squares_slope(&pts)
    }

    /// Writes `traj,extinction_time,censored` rows.
    pub fn write_times_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "traj,extinction_time,censored")?;
        for (i, (t, c)) in self.times.iter().zip(&self.censored).enumerate() {
            writeln!(w, "{i},{t:?},{c}")?;
        }
        Ok(())
    }

    /// Writes `t,survivors_fraction` rows.
    pub fn write_survival_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,survivors_fraction")?;
        for (t, s) in &self.survival_curve {
            writeln!(w, "{t:?},{s:?}")?;
        }
        Ok(())
    }
}

pub fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Runs `cfg.n_traj` independent trajectories.
pub fn extinction_study(
    model: &RateModel,
    k: u64,
    cfg: &SimulationConfig,
) -> Result<ExtinctionStats, SimulationError> {
    cfg.validate()?;
    let table = RateTable::new(model, k)?;
    let cdf = match &cfg.initial {
        InitialState::FromQsd(nu) => Some(cumulative(nu)),
        InitialState::Fixed(_) => None,
    };
    let outcomes = map_range(cfg.execution, cfg.n_traj, |i| {
        let mut rng = trajectory_rng(cfg.seed, i as u64);
        let start = match (&cfg.initial, &cdf) {
            (InitialState::Fixed(n), _) => *n,
            (_, Some(c)) => sample_from_cdf(c, &mut rng),
            _ => unreachable!(),
        };
        run_trajectory(&table, start, cfg.t_max, &mut rng)
    });
    Ok(ExtinctionStats::from_outcomes(&outcomes))
}

/// Kolmogorov–Smirnov distance between the samples and `Exponential(rate)`.
pub fn ks_statistic_exponential(samples: &[f64], rate: f64) -> f64 {
    let mut x: Vec<f64> = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &t)| {
            let f = 1.0 - (-rate * t).exp();
            let lo = i as f64 / n;
            let hi = (i + 1) as f64 / n;
            (f - lo).abs().max((hi - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

/// Empirical law of `X_t` given `X_t > 0` at each of the (increasing) `times`.
pub fn conditional_snapshots(
    model: &RateModel,
    k: u64,
    start: u64,
    times: &[f64],
    n_traj: usize,
    seed: u64,
    execution: Execution,
) -> Result<Vec<Vec<f64>>, SimulationError> {
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|t| !(*t >= 0.0)) {
        return Err(SimulationError::InvalidConfig(
            "snapshot times must be nonnegative and increasing".into(),
        ));
    }
    let table = RateTable::new(model, k)?;
    let states = map_range(execution, n_traj, |i| {
        let mut rng = trajectory_rng(seed, i as u64);
        let mut out = Vec::with_capacity(times.len());
        let mut n = start;
        let mut t = 0.0;
        let mut next = 0;
        while next < times.len() {
            if n == 0 {
                out.resize(times.len(), 0);
                break;
            }
            let (hold, up) = next_event(&table, n, &mut rng);
            while next < times.len() && t + hold > times[next] {
                out.push(n);
                next += 1;
            }
            t += hold;
            if up {
                n += 1;
            } else {
                n -= 1;
            }
        }
        out
    });
    let width = states.iter().flatten().copied().max().unwrap_or(0) as usize + 1;
    Ok((0..times.len())
        .map(|s| {
            let mut hist = vec![0.0; width];
            let mut alive = 0usize;
            for path in &states {
                if path[s] > 0 {
                    hist[path[s] as usize] += 1.0;
                    alive += 1;
                }
            }
            if alive > 0 {
                hist.iter_mut().for_each(|h| *h /= alive as f64);
            }
            hist
        })
        .collect())
}

/// `½ Σ |p − q|` with missing entries read as 0.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    0.5 * (0..n)
        .map(|i| (p.get(i).unwrap_or(&0.0) - q.get(i).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}
