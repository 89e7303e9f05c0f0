//! Federated training driven by a schedule: local SGD on the active clients, inverse-frequency
//! weighted aggregation outside the fine-tuning window and plain averaging inside it.

mod data;
mod model;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use data::{
    dirichlet_partition, load_idx, make_synthetic_task, parse_idx_images, parse_idx_labels, Dataset, SyntheticSpec,
    SyntheticTask, PARTITION_ATTEMPTS,
};
pub use model::{Architecture, Model, MLP_HIDDEN};

use crate::ci_traces::CarbonCostMatrix;
use crate::metrics::selection_frequencies;
use crate::scalar::Scalar;
use crate::scheduler::ScheduleMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlError {
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("cannot split {samples} samples over {clients} non-empty clients after {attempts} attempts")]
    PartitionFailure {
        clients: usize,
        samples: usize,
        attempts: usize,
    },
    #[error("aggregation over an empty active set")]
    EmptyActiveSet,
    #[error("client {client} is active but has selection frequency 0")]
    ZeroFrequencyActive { client: usize },
    #[error("non-finite loss on client {client} at round {round}, local step {step}")]
    NonFiniteLoss { client: usize, round: usize, step: usize },
    #[error("schedule is {schedule:?} (clients × slots) but costs are {costs:?} and the task has {clients} clients")]
    ScheduleCostMismatch {
        schedule: (usize, usize),
        costs: (usize, usize),
        clients: usize,
    },
    #[error("empty test set")]
    EmptyTestSet,
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("IDX format: {0}")]
    Idx(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T, E = FlError> = std::result::Result<T, E>;

/// Local training hyper-parameters. `eta = 0` is accepted and yields zero updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlConfig {
    pub tau: usize,
    pub eta: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub dirichlet_beta: f64,
    pub architecture: Architecture,
}

impl Default for FlConfig {
    fn default() -> Self {
        Self {
            tau: 5,
            eta: 10f64.powf(-1.5),
            batch_size: 128,
            seed: 0,
            dirichlet_beta: 0.5,
            architecture: Architecture::SoftmaxRegression,
        }
    }
}

impl FlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 || self.batch_size == 0 || !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(FlError::BadConfig(format!(
                "tau = {}, eta = {}, batch_size = {}",
                self.tau, self.eta, self.batch_size
            )));
        }
        Ok(())
    }
}

/// A model with per-client training partitions and a held-out test set.
#[derive(Debug, Clone, PartialEq)]
pub struct FlTask<S> {
    pub model: Model,
    pub partitions: Vec<Dataset<S>>,
    pub test: Dataset<S>,
}

impl<S: Scalar> FlTask<S> {
    /// Partitions `train` over `clients` with `Dirichlet(beta)` class proportions.
    pub fn from_data(
        train: &Dataset<S>,
        test: Dataset<S>,
        clients: usize,
        arch: Architecture,
        beta: f64,
        seed: u64,
    ) -> Result<Self> {
        let parts = dirichlet_partition(train, clients, beta, seed)?;
        Ok(Self {
            model: Model::for_data(arch, train),
            partitions: parts.iter().map(|p| train.subset(p)).collect(),
            test,
        })
    }

    pub fn synthetic(spec: &SyntheticSpec, clients: usize, config: &FlConfig) -> Result<Self> {
        let SyntheticTask { train, test } = make_synthetic_task(spec, config.seed)?;
        Self::from_data(&train, test, clients, config.architecture, config.dirichlet_beta, config.seed)
    }

    pub fn clients(&self) -> usize {
        self.partitions.len()
    }
}

fn client_rng(round_seed: u64, client: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(round_seed);
    rng.set_stream(client as u64);
    rng
}

/// Runs `tau` minibatch SGD steps from `theta` on one client and returns `theta - theta_after`.
///
/// Minibatches walk a shuffled permutation of the client's samples and reshuffle when it is
/// exhausted; the final batch of an epoch may be short. Batch indices are sorted before the
/// gradient so a full batch sums in storage order.
pub fn local_update<S: Scalar>(
    model: &Model,
    theta: &[S],
    data: &Dataset<S>,
    config: &FlConfig,
    round_seed: u64,
    client: usize,
) -> Result<Vec<S>> {
    config.validate()?;
    if data.is_empty() {
        return Err(FlError::BadShape(format!("client {client} has no samples")));
    }
    let mut rng = client_rng(round_seed, client);
    let eta = S::of(config.eta);
    let mut current = theta.to_vec();
    let mut grad = vec![S::zero(); theta.len()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut batch = Vec::with_capacity(config.batch_size.min(data.len()));
    for step in 0..config.tau {
        if cursor == order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + config.batch_size).min(order.len());
        batch.clear();
        batch.extend_from_slice(&order[cursor..end]);
        batch.sort_unstable();
        cursor = end;

        let loss = model.loss_grad(&current, data, &batch, &mut grad);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(FlError::NonFiniteLoss { client, round: 0, step });
        }
        current.iter_mut().zip(&grad).for_each(|(w, &g)| *w -= eta * g);
    }
    Ok(theta.iter().zip(&current).map(|(&a, &b)| a - b).collect())
}

fn sum_into<S: Scalar>(acc: &mut [S], delta: &[S], weight: Option<S>) {
    match weight {
        None => acc.iter_mut().zip(delta).for_each(|(a, &d)| *a += d),
        Some(p) => acc.iter_mut().zip(delta).for_each(|(a, &d)| *a += d / p),
    }
}

/// Mean of the active clients' updates, summed in the given order.
pub fn fedavg_aggregate<S: Scalar>(deltas: &[Vec<S>]) -> Result<Vec<S>> {
    let first = deltas.first().ok_or(FlError::EmptyActiveSet)?;
    let mut acc = vec![S::zero(); first.len()];
    for d in deltas {
        sum_into(&mut acc, d, None);
    }
    let n = S::of_usize(deltas.len());
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// `(1/K) sum_{c in active} delta_c / pi_c`; `deltas` pairs each active client with its update.
pub fn ufedavg_aggregate<S: Scalar>(deltas: &[(usize, Vec<S>)], pi: &[S], clients: usize) -> Result<Vec<S>> {
    let first = deltas.first().ok_or(FlError::EmptyActiveSet)?;
    let mut acc = vec![S::zero(); first.1.len()];
    for (c, d) in deltas {
        let p = pi[*c];
        if p <= S::zero() {
            return Err(FlError::ZeroFrequencyActive { client: *c });
        }
        sum_into(&mut acc, d, Some(p));
    }
    let k = S::of_usize(clients);
    acc.iter_mut().for_each(|a| *a /= k);
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord<S> {
    /// 1-based round number.
    pub round: usize,
    pub active: Vec<usize>,
    pub finetune: bool,
    pub update_norm: S,
    pub cum_kg: S,
    pub test_acc: S,
    pub test_loss: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun<S> {
    pub rounds: Vec<RoundRecord<S>>,
    /// Selection frequencies used for the inverse-frequency weights.
    pub pi: Vec<S>,
    pub initial_acc: S,
    pub initial_loss: S,
    pub theta: Vec<S>,
}

impl<S: Scalar> TrainingRun<S> {
    pub fn final_accuracy(&self) -> S {
        self.rounds.last().map_or(self.initial_acc, |r| r.test_acc)
    }

    pub fn final_loss(&self) -> S {
        self.rounds.last().map_or(self.initial_loss, |r| r.test_loss)
    }

    pub fn total_kg(&self) -> S {
        self.rounds.last().map_or(S::zero(), |r| r.cum_kg)
    }

    /// `round,active_count,cum_kg,test_acc,test_loss`, with the untrained model as round 0.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,active_count,cum_kg,test_acc,test_loss\n");
        let _ = writeln!(out, "0,0,{:.9},{:.6},{:.6}", 0.0, self.initial_acc, self.initial_loss);
        for r in &self.rounds {
            let _ = writeln!(
                out,
                "{},{},{:.9},{:.6},{:.6}",
                r.round,
                r.active.len(),
                r.cum_kg,
                r.test_acc,
                r.test_loss
            );
        }
        out
    }
}

/// Per-round seed shared by every client of that round; clients draw from their own stream.
pub fn round_seed(seed: u64, round: usize) -> u64 {
    seed ^ (round as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains from `model.init(config.seed)` over the schedule's executed rounds.
///
/// The inverse-frequency weights use selection frequencies over the rounds before fine-tuning.
/// A round without active clients leaves the model unchanged. Client updates run in parallel
/// and are reduced in ascending client order.
pub fn run_training<S: Scalar>(
    task: &FlTask<S>,
    schedule: &ScheduleMatrix<S>,
    costs: &CarbonCostMatrix<S>,
    config: &FlConfig,
) -> Result<TrainingRun<S>> {
    config.validate()?;
    let k = task.clients();
    if schedule.clients() != k
        || costs.clients() != k
        || costs.horizon() != schedule.horizon()
    {
        return Err(FlError::ScheduleCostMismatch {
            schedule: (schedule.clients(), schedule.horizon()),
            costs: (costs.clients(), costs.horizon()),
            clients: k,
        });
    }
    let model = &task.model;
    let pre = schedule.pre_finetune_rounds();
    let pi: Vec<S> = if pre == 0 {
        vec![S::one(); k]
    } else {
        selection_frequencies(schedule.rows(), 0..pre).expect("non-empty horizon")
    };

    let mut theta: Vec<S> = model.init(config.seed);
    let (initial_acc, initial_loss) = model.evaluate(&theta, &task.test)?;
    let mut cum_kg = S::zero();
    let mut rounds = Vec::with_capacity(schedule.executed_rounds());
    for t in 0..schedule.executed_rounds() {
        let active = schedule.active_clients(t);
        let finetune = schedule.in_finetune(t);
        let seed = round_seed(config.seed, t);
        let deltas: Vec<(usize, Vec<S>)> = active
            .par_iter()
            .map(|&c| {
                local_update(model, &theta, &task.partitions[c], config, seed, c)
                    .map(|d| (c, d))
                    .map_err(|e| match e {
                        FlError::NonFiniteLoss { client, step, .. } => FlError::NonFiniteLoss {
                            client,
                            round: t + 1,
                            step,
                        },
                        other => other,
                    })
            })
            .collect::<Result<_>>()?;

        let mut update_norm = S::zero();
        if !deltas.is_empty() {
            let delta = if finetune {
                let plain: Vec<Vec<S>> = deltas.into_iter().map(|(_, d)| d).collect();
                fedavg_aggregate(&plain)?
            } else {
                ufedavg_aggregate(&deltas, &pi, k)?
            };
            update_norm = delta.iter().map(|&d| d * d).sum::<S>().sqrt();
            theta = theta.iter().zip(&delta).map(|(&w, &d)| w - d).collect();
        }
        for &c in &active {
            cum_kg += costs.cost(c, t);
        }
        let (test_acc, test_loss) = model.evaluate(&theta, &task.test)?;
        rounds.push(RoundRecord {
            round: t + 1,
            active,
            finetune,
            update_norm,
            cum_kg,
            test_acc,
            test_loss,
        });
    }
    Ok(TrainingRun {
        rounds,
        pi,
        initial_acc,
        initial_loss,
        theta,
    })
}
