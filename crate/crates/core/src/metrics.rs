//! Participation statistics of schedules and Markov-correlated participation generation.
//!
//! * `pi_c`: fraction of rounds in which client `c` is selected.
//! * `rho_h = (1/K) sum_c (1 - pi_c) / pi_c`: selection heterogeneity, 0 under full participation.
//! * `tv = 1/2 sum_c |1/K - pi_c / |pi|_1|`: distance of the normalised frequencies from uniform.
//! * `rho_t`: mean per-client `|lambda_2|` of a fitted two-state chain.
//! * `rho_ts`: second-largest eigenvalue modulus of the fitted chain on the number of active
//!   clients, a tractable stand-in for the chain on all `2^K` participation vectors.

use std::ops::Range;

use nalgebra::{Complex, DMatrix, DVector, Schur};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::scheduler::ScheduleMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("client {client} is never selected, so rho_H is undefined")]
    ZeroFrequency { client: usize },
    #[error("the frequency horizon is empty")]
    EmptyHorizon,
    #[error("no client is ever selected")]
    NoSelections,
    #[error("need at least two slots to estimate transitions, got {0}")]
    TooFewSlots(usize),
    #[error("invalid participation chain: {0}")]
    InvalidChain(String),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

/// Which rounds count towards selection frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyHorizon {
    /// Rounds before the fine-tuning window (all executed rounds when there is none).
    #[default]
    PreFinetune,
    /// Every executed round, fine-tuning included.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionStats<S> {
    pub pi: Vec<S>,
    /// `None` when some client has `pi_c = 0`; see [`SelectionStats::require_rho_h`].
    pub rho_h: Option<S>,
    pub tv: S,
}

impl<S: Scalar> SelectionStats<S> {
    pub fn require_rho_h(&self) -> Result<S> {
        self.rho_h.ok_or_else(|| MetricsError::ZeroFrequency {
            client: self.pi.iter().position(|&p| p <= S::zero()).unwrap_or(0),
        })
    }
}

pub fn selection_frequencies<S: Scalar>(rows: &[Vec<bool>], columns: Range<usize>) -> Result<Vec<S>> {
    if columns.is_empty() {
        return Err(MetricsError::EmptyHorizon);
    }
    let len = S::of_usize(columns.len());
    Ok(rows
        .iter()
        .map(|r| S::of_usize(r[columns.clone()].iter().filter(|&&x| x).count()) / len)
        .collect())
}

pub fn heterogeneity<S: Scalar>(pi: &[S]) -> Result<S> {
    if let Some(client) = pi.iter().position(|&p| p <= S::zero()) {
        return Err(MetricsError::ZeroFrequency { client });
    }
    let k = S::of_usize(pi.len());
    Ok(pi.iter().map(|&p| (S::one() - p) / p).sum::<S>() / k)
}

pub fn tv_from_uniform<S: Scalar>(pi: &[S]) -> Result<S> {
    let norm: S = pi.iter().copied().sum();
    if norm <= S::zero() {
        return Err(MetricsError::NoSelections);
    }
    let k = S::of_usize(pi.len());
    let half = S::of(0.5);
    Ok(half * pi.iter().map(|&p| (S::one() / k - p / norm).abs()).sum::<S>())
}

/// Statistics of a raw participation matrix over `columns`.
pub fn stats_of_rows<S: Scalar>(rows: &[Vec<bool>], columns: Range<usize>) -> Result<SelectionStats<S>> {
    let pi = selection_frequencies(rows, columns)?;
    let tv = tv_from_uniform(&pi)?;
    Ok(SelectionStats {
        rho_h: heterogeneity(&pi).ok(),
        tv,
        pi,
    })
}

pub fn selection_stats<S: Scalar>(schedule: &ScheduleMatrix<S>, horizon: FrequencyHorizon) -> Result<SelectionStats<S>> {
    let end = match horizon {
        FrequencyHorizon::PreFinetune => schedule.pre_finetune_rounds(),
        FrequencyHorizon::Full => schedule.executed_rounds(),
    };
    stats_of_rows(schedule.rows(), 0..end)
}

/// Per-client two-state participation chains, optionally coupled through shared randomness.
///
/// Each client moves inactive→active with probability `p01[c]` and active→inactive with
/// `p10[c]`. With `coupling > 0`, at every step each client independently takes the current
/// state of a shared latent chain (`latent_p01`, `latent_p10`) with probability `coupling` and
/// otherwise steps its own chain from wherever it is, so `coupling = 1` makes every client follow
/// the latent chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipationChain {
    pub p01: Vec<f64>,
    pub p10: Vec<f64>,
    #[serde(default)]
    pub coupling: f64,
    #[serde(default)]
    pub latent_p01: f64,
    #[serde(default)]
    pub latent_p10: f64,
}

impl ParticipationChain {
    /// Independent clients with stationary activity `activity[c]` and second eigenvalue `lambda2`.
    pub fn from_targets(activity: &[f64], lambda2: f64) -> Result<Self> {
        let mut p01 = Vec::with_capacity(activity.len());
        let mut p10 = Vec::with_capacity(activity.len());
        for &pi in activity {
            p01.push(pi * (1.0 - lambda2));
            p10.push((1.0 - pi) * (1.0 - lambda2));
        }
        let chain = Self {
            p01,
            p10,
            coupling: 0.0,
            latent_p01: 0.0,
            latent_p10: 0.0,
        };
        chain.validate()?;
        Ok(chain)
    }

    /// Adds a latent chain with stationary activity `activity` and eigenvalue `lambda2`.
    pub fn with_latent(mut self, coupling: f64, activity: f64, lambda2: f64) -> Result<Self> {
        self.coupling = coupling;
        self.latent_p01 = activity * (1.0 - lambda2);
        self.latent_p10 = (1.0 - activity) * (1.0 - lambda2);
        self.validate()?;
        Ok(self)
    }

    pub fn clients(&self) -> usize {
        self.p01.len()
    }

    pub fn lambda2(&self, client: usize) -> f64 {
        1.0 - self.p01[client] - self.p10[client]
    }

    pub fn stationary_activity(&self, client: usize) -> f64 {
        stationary(self.p01[client], self.p10[client])
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        if self.p01.len() != self.p10.len() || self.p01.is_empty() {
            return Err(MetricsError::InvalidChain("p01 and p10 must be non-empty and equally long".into()));
        }
        let all = self.p01.iter().chain(&self.p10).chain([&self.coupling, &self.latent_p01, &self.latent_p10]);
        if let Some(bad) = all.into_iter().find(|&&p| !prob(p)) {
            return Err(MetricsError::InvalidChain(format!("probability {bad} outside [0, 1]")));
        }
        Ok(())
    }
}

fn stationary(p01: f64, p10: f64) -> f64 {
    if p01 + p10 == 0.0 {
        0.5
    } else {
        p01 / (p01 + p10)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn step(state: bool, p01: f64, p10: f64, u: f64) -> bool {
    if state {
        u >= p10
    } else {
        u < p01
    }
}

/// Samples a `clients × rounds` participation matrix; the initial state is drawn from each
/// chain's stationary distribution. Client `c` draws from stream `c + 1` and the latent chain
/// from stream 0, so the output is independent of generation order.
pub fn mc_generate_schedule(chain: &ParticipationChain, rounds: usize, seed: u64) -> Result<Vec<Vec<bool>>> {
    chain.validate()?;
    let mut latent_rng = stream(seed, 0);
    let mut latent = Vec::with_capacity(rounds);
    if chain.coupling > 0.0 {
        let mut z = latent_rng.random::<f64>() < stationary(chain.latent_p01, chain.latent_p10);
        for _ in 0..rounds {
            latent.push(z);
            z = step(z, chain.latent_p01, chain.latent_p10, latent_rng.random());
        }
    }

    Ok((0..chain.clients())
        .map(|c| {
            let mut rng = stream(seed, c as u64 + 1);
            let (p01, p10) = (chain.p01[c], chain.p10[c]);
            let mut x = rng.random::<f64>() < stationary(p01, p10);
            (0..rounds)
                .map(|t| {
                    let copy = rng.random::<f64>() < chain.coupling;
                    let u = rng.random::<f64>();
                    x = if copy {
                        latent[t]
                    } else if t == 0 {
                        x
                    } else {
                        step(x, p01, p10, u)
                    };
                    x
                })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationEstimate {
    pub rho_t: f64,
    pub rho_ts: f64,
    /// Per-client `|1 - p01 - p10|` estimates.
    pub per_client: Vec<f64>,
    /// Clients constant over the whole matrix; their estimate is set to 1.
    pub degenerate: Vec<usize>,
}

/// Fits per-client two-state chains (add-one smoothed) and the active-count chain.
pub fn estimate_correlation(rows: &[Vec<bool>]) -> Result<CorrelationEstimate> {
    let slots = rows.first().map_or(0, Vec::len);
    if slots < 2 {
        return Err(MetricsError::TooFewSlots(slots));
    }
    let mut per_client = Vec::with_capacity(rows.len());
    let mut degenerate = Vec::new();
    for (c, row) in rows.iter().enumerate() {
        if row.iter().all(|&x| x == row[0]) {
            degenerate.push(c);
            per_client.push(1.0);
            continue;
        }
        let mut n = [[0u64; 2]; 2];
        for w in row.windows(2) {
            n[w[0] as usize][w[1] as usize] += 1;
        }
        let p01 = (n[0][1] as f64 + 1.0) / ((n[0][0] + n[0][1]) as f64 + 2.0);
        let p10 = (n[1][0] as f64 + 1.0) / ((n[1][0] + n[1][1]) as f64 + 2.0);
        per_client.push((1.0 - p01 - p10).abs());
    }
    let rho_t = per_client.iter().sum::<f64>() / per_client.len().max(1) as f64;
    Ok(CorrelationEstimate {
        rho_t,
        rho_ts: lumped_slem(rows),
        per_client,
        degenerate,
    })
}

const SCHUR_MAX_ITERATIONS: usize = 10_000;

/// Eigenvalues via a bounded Schur decomposition. The unshifted iteration can stall on some
/// small stochastic matrices, so a failure is retried on an orthogonally similar matrix.
fn eigenvalues(p: DMatrix<f64>) -> Vec<Complex<f64>> {
    if let Some(schur) = Schur::try_new(p.clone(), f64::EPSILON, SCHUR_MAX_ITERATIONS) {
        return schur.complex_eigenvalues().iter().copied().collect();
    }
    let n = p.nrows();
    let v = DVector::from_iterator(n, (1..=n).map(|i| i as f64)).normalize();
    let q = DMatrix::identity(n, n) - (&v * v.transpose()) * 2.0;
    let similar = &q * p * &q;
    Schur::try_new(similar, 1e-12, SCHUR_MAX_ITERATIONS)
        .expect("Schur decomposition of a rotated stochastic matrix converges")
        .complex_eigenvalues()
        .iter()
        .copied()
        .collect()
}

/// Second-largest eigenvalue modulus of the empirical transition matrix of the active count.
///
/// Only states that are left at least once are kept; transitions into a state that is never
/// left (the trajectory's final state, seen for the first time) are dropped.
pub fn lumped_slem(rows: &[Vec<bool>]) -> f64 {
    let k = rows.len();
    let slots = rows.first().map_or(0, Vec::len);
    let counts: Vec<usize> = (0..slots)
        .map(|t| rows.iter().filter(|r| r[t]).count())
        .collect();
    let mut transitions = vec![vec![0u64; k + 1]; k + 1];
    for w in counts.windows(2) {
        transitions[w[0]][w[1]] += 1;
    }
    let visited: Vec<usize> = (0..=k)
        .filter(|&i| transitions[i].iter().any(|&n| n > 0))
        .collect();
    if visited.len() < 2 {
        return if visited.len() == 1 { 0.0 } else { 1.0 };
    }
    let m = visited.len();
    let mut p = DMatrix::<f64>::zeros(m, m);
    for (i, &from) in visited.iter().enumerate() {
        let total: u64 = visited.iter().map(|&to| transitions[from][to]).sum();
        if total == 0 {
            // Only ever moved to dropped states: treat as absorbing.
            p[(i, i)] = 1.0;
            continue;
        }
        for (j, &to) in visited.iter().enumerate() {
            p[(i, j)] = transitions[from][to] as f64 / total as f64;
        }
    }
    let mut moduli: Vec<(f64, f64)> = eigenvalues(p)
        .iter()
        .map(|z| ((z.re - 1.0).hypot(z.im), z.norm()))
        .collect();
    // Drop the Perron root (the eigenvalue closest to 1), keep the largest remaining modulus.
    moduli.sort_by(|a, b| a.0.total_cmp(&b.0));
    moduli[1..].iter().map(|&(_, r)| r).fold(0.0, f64::max).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ci_traces::CarbonCostMatrix;
    use crate::scheduler::{FinetuneWindow, ScheduleMatrix};

    #[test]
    fn full_participation_stats() {
        let rows = vec![vec![true; 5]; 3];
        let s: SelectionStats<f64> = stats_of_rows(&rows, 0..5).unwrap();
        assert_eq!(s.pi, vec![1.0; 3]);
        assert_eq!(s.rho_h, Some(0.0));
        assert_eq!(s.tv, 0.0);
    }

    #[test]
    fn two_client_hand_computation() {
        let rows = vec![vec![true, true, true, true], vec![true, false, true, false]];
        let s: SelectionStats<f64> = stats_of_rows(&rows, 0..4).unwrap();
        assert_eq!(s.pi, vec![1.0, 0.5]);
        assert_eq!(s.rho_h, Some(0.5));
        assert!((s.tv - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn zero_frequency_keeps_pi_and_tv() {
        let rows = vec![vec![true, false], vec![false, false]];
        let s: SelectionStats<f64> = stats_of_rows(&rows, 0..2).unwrap();
        assert_eq!(s.rho_h, None);
        assert_eq!(s.require_rho_h(), Err(MetricsError::ZeroFrequency { client: 1 }));
        assert_eq!(s.tv, 0.5);
        assert!(matches!(stats_of_rows::<f64>(&rows, 0..0), Err(MetricsError::EmptyHorizon)));
        assert!(matches!(
            stats_of_rows::<f64>(&[vec![false]], 0..1),
            Err(MetricsError::NoSelections)
        ));
    }

    #[test]
    fn pre_finetune_horizon_excludes_window() {
        let costs = CarbonCostMatrix::new(vec![vec![1.0; 4], vec![1.0; 4]]).unwrap();
        let a = vec![vec![true, true, true, false], vec![false, true, true, false]];
        let sched = ScheduleMatrix::new(a, &costs, 1.0, Some(FinetuneWindow::new(2, 1, 1))).unwrap();
        let pre = selection_stats(&sched, FrequencyHorizon::PreFinetune).unwrap();
        assert_eq!(pre.pi, vec![1.0, 0.5]);
        let full = selection_stats(&sched, FrequencyHorizon::Full).unwrap();
        assert_eq!(full.pi, vec![1.0, 2.0 / 3.0]);
    }

    #[test]
    fn alternating_chain() {
        let chain = ParticipationChain {
            p01: vec![1.0; 3],
            p10: vec![1.0; 3],
            coupling: 0.0,
            latent_p01: 0.0,
            latent_p10: 0.0,
        };
        let m = mc_generate_schedule(&chain, 20, 9).unwrap();
        for row in &m {
            assert!(row.windows(2).all(|w| w[0] != w[1]));
        }
    }

    #[test]
    fn generation_is_seeded() {
        let chain = ParticipationChain::from_targets(&[0.3, 0.6, 0.5], 0.4)
            .unwrap()
            .with_latent(0.5, 0.5, 0.8)
            .unwrap();
        assert_eq!(mc_generate_schedule(&chain, 100, 3), mc_generate_schedule(&chain, 100, 3));
        assert_ne!(mc_generate_schedule(&chain, 100, 3), mc_generate_schedule(&chain, 100, 4));
    }

    #[test]
    fn invalid_chain_rejected() {
        assert!(ParticipationChain::from_targets(&[1.5], 0.0).is_err());
        assert!(ParticipationChain::from_targets(&[0.5], 0.0).unwrap().with_latent(2.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn degenerate_rows_flagged() {
        let rows = vec![vec![true; 6], vec![true, false, true, false, true, false]];
        let e = estimate_correlation(&rows).unwrap();
        assert_eq!(e.degenerate, vec![0]);
        assert_eq!(e.per_client[0], 1.0);
        assert!(matches!(estimate_correlation(&[vec![true]]), Err(MetricsError::TooFewSlots(1))));
    }

    #[test]
    fn lumped_slem_of_two_state_alternation() {
        // A single client alternating: the count chain flips 0 <-> 1, eigenvalues {1, -1}.
        let rows = vec![(0..40).map(|t| t % 2 == 0).collect::<Vec<_>>()];
        assert!((lumped_slem(&rows) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn stalling_schur_input_is_handled() {
        // Count chain 2,2,1,2,3,2 has eigenvalues {1, 0, -2/3}.
        let rows = vec![
            vec![true, true, false, true, true, true],
            vec![false, false, false, true, true, true],
            vec![true, true, true, false, true, false],
        ];
        assert!((lumped_slem(&rows) - 2.0 / 3.0).abs() < 1e-9);
    }
}
