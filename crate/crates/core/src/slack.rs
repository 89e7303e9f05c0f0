//! Prospective carbon savings from slack time.
//!
//! With a training run of `T` one-hour rounds and `t_sl` extra slots, a client can pick the `T`
//! cheapest slots of the `T + t_sl` window instead of the first `T`. Slot and client indices are
//! 0-based throughout; ties always resolve to the lowest index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::ci_traces::CarbonCostMatrix;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SlackError {
    #[error("window of {needed} slots does not fit in {available}")]
    WindowTooShort { needed: usize, available: usize },
    #[error("training duration T must be at least 1")]
    ZeroRounds,
    #[error("baseline emissions are zero (client {client:?})")]
    ZeroBaseline { client: Option<usize> },
    #[error("N = {n} is outside 1..={clients}")]
    BadN { n: usize, clients: usize },
    #[error("start offset {offset} needs {needed} slots but the horizon has {horizon}")]
    OffsetOutOfRange {
        offset: usize,
        needed: usize,
        horizon: usize,
    },
    #[error("cannot draw {count} distinct offsets from {available}")]
    TooFewOffsets { count: usize, available: usize },
}

pub type Result<T, E = SlackError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct SlackReport<S> {
    pub client_id: usize,
    pub t_sl: usize,
    /// Ascending slot indices in `[0, T + t_sl)`.
    pub chosen_slots: Vec<usize>,
    pub baseline_kg: S,
    pub optimized_kg: S,
    pub savings_fraction: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport<S> {
    pub n: usize,
    pub fixed_set: Vec<usize>,
    pub slack_set: Vec<usize>,
    pub fixed_kg: S,
    pub slack_kg: S,
    pub savings_fraction: S,
}

fn check_window(len: usize, rounds: usize, t_sl: usize) -> Result<()> {
    if rounds == 0 {
        return Err(SlackError::ZeroRounds);
    }
    if rounds + t_sl > len {
        return Err(SlackError::WindowTooShort {
            needed: rounds + t_sl,
            available: len,
        });
    }
    Ok(())
}

/// Indices of `items` ordered by ascending key, ties by index.
fn ranked<S: Scalar>(keys: &[S]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].partial_cmp(&keys[b]).unwrap().then(a.cmp(&b)));
    idx
}

/// The `rounds` cheapest slots among the first `rounds + t_sl` of `row`.
pub fn best_slots_single<S: Scalar>(row: &[S], rounds: usize, t_sl: usize) -> Result<Vec<usize>> {
    check_window(row.len(), rounds, t_sl)?;
    let mut slots = ranked(&row[..rounds + t_sl]);
    slots.truncate(rounds);
    slots.sort_unstable();
    Ok(slots)
}

fn slot_sum<S: Scalar>(row: &[S], slots: &[usize]) -> S {
    slots.iter().map(|&t| row[t]).sum()
}

fn first_sum<S: Scalar>(row: &[S], rounds: usize) -> S {
    row[..rounds].iter().copied().sum()
}

/// Savings of one client from shifting its `rounds` slots within a `rounds + t_sl` window.
pub fn savings_single<S: Scalar>(
    row: &[S],
    client_id: usize,
    rounds: usize,
    t_sl: usize,
) -> Result<SlackReport<S>> {
    let chosen_slots = best_slots_single(row, rounds, t_sl)?;
    let baseline_kg = first_sum(row, rounds);
    if baseline_kg <= S::zero() {
        return Err(SlackError::ZeroBaseline {
            client: Some(client_id),
        });
    }
    let optimized_kg = slot_sum(row, &chosen_slots);
    Ok(SlackReport {
        client_id,
        t_sl,
        chosen_slots,
        baseline_kg,
        optimized_kg,
        savings_fraction: S::one() - optimized_kg / baseline_kg,
    })
}

fn check_n<S: Scalar>(costs: &CarbonCostMatrix<S>, n: usize) -> Result<()> {
    if n == 0 || n > costs.clients() {
        return Err(SlackError::BadN {
            n,
            clients: costs.clients(),
        });
    }
    Ok(())
}

fn pick_lowest<S: Scalar>(totals: &[S], n: usize) -> Vec<usize> {
    let mut set = ranked(totals);
    set.truncate(n);
    set.sort_unstable();
    set
}

fn fixed_totals<S: Scalar>(costs: &CarbonCostMatrix<S>, rounds: usize) -> Result<Vec<S>> {
    check_window(costs.horizon(), rounds, 0)?;
    Ok(costs.rows().iter().map(|r| first_sum(r, rounds)).collect())
}

fn slack_totals<S: Scalar>(costs: &CarbonCostMatrix<S>, rounds: usize, t_sl: usize) -> Result<Vec<S>> {
    costs
        .rows()
        .iter()
        .map(|r| best_slots_single(r, rounds, t_sl).map(|s| slot_sum(r, &s)))
        .collect()
}

/// The `n` clients with the smallest emissions over the first `rounds` slots.
pub fn select_clients_fixed<S: Scalar>(
    costs: &CarbonCostMatrix<S>,
    n: usize,
    rounds: usize,
) -> Result<Vec<usize>> {
    check_n(costs, n)?;
    Ok(pick_lowest(&fixed_totals(costs, rounds)?, n))
}

/// The `n` clients with the smallest emissions over their own `rounds` cheapest slots.
pub fn select_clients_slack<S: Scalar>(
    costs: &CarbonCostMatrix<S>,
    n: usize,
    rounds: usize,
    t_sl: usize,
) -> Result<Vec<usize>> {
    check_n(costs, n)?;
    Ok(pick_lowest(&slack_totals(costs, rounds, t_sl)?, n))
}

fn multi_from_totals<S: Scalar>(fixed: &[S], slack: &[S], n: usize) -> Result<SelectionReport<S>> {
    let fixed_set = pick_lowest(fixed, n);
    let slack_set = pick_lowest(slack, n);
    let fixed_kg: S = fixed_set.iter().map(|&c| fixed[c]).sum();
    let slack_kg: S = slack_set.iter().map(|&c| slack[c]).sum();
    if fixed_kg <= S::zero() {
        return Err(SlackError::ZeroBaseline { client: None });
    }
    Ok(SelectionReport {
        n,
        fixed_set,
        slack_set,
        fixed_kg,
        slack_kg,
        savings_fraction: S::one() - slack_kg / fixed_kg,
    })
}

/// Joint client-selection savings for `n` clients.
pub fn savings_multi<S: Scalar>(
    costs: &CarbonCostMatrix<S>,
    n: usize,
    rounds: usize,
    t_sl: usize,
) -> Result<SelectionReport<S>> {
    check_n(costs, n)?;
    let fixed = fixed_totals(costs, rounds)?;
    let slack = slack_totals(costs, rounds, t_sl)?;
    multi_from_totals(&fixed, &slack, n)
}

/// Mean savings for one slack value, averaged over the sweep's start offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint<S> {
    pub t_sl: usize,
    /// Mean single-client savings, indexed by client.
    pub per_client: Vec<S>,
    /// Mean multi-client savings, index `n - 1` holds `N = n`.
    pub per_n: Vec<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlackSweep<S> {
    pub rounds: usize,
    pub offsets: Vec<usize>,
    pub points: Vec<SweepPoint<S>>,
}

impl<S: Scalar> SlackSweep<S> {
    /// Client order for a heatmap: highest savings at the largest slack first, ties by index.
    pub fn heatmap_order(&self) -> Vec<usize> {
        let Some(last) = self.points.iter().max_by_key(|p| p.t_sl) else {
            return Vec::new();
        };
        let neg: Vec<S> = last.per_client.iter().map(|&v| -v).collect();
        ranked(&neg)
    }
}

fn sweep_offset<S: Scalar>(
    costs: &CarbonCostMatrix<S>,
    rounds: usize,
    t_sl_values: &[usize],
    offset: usize,
) -> Result<Vec<(Vec<S>, Vec<S>)>> {
    let clients = costs.clients();
    t_sl_values
        .iter()
        .map(|&t_sl| {
            let window: Vec<&[S]> = costs
                .rows()
                .iter()
                .map(|r| &r[offset..offset + rounds + t_sl])
                .collect();
            let mut singles = Vec::with_capacity(clients);
            let mut fixed = Vec::with_capacity(clients);
            let mut slack = Vec::with_capacity(clients);
            for (c, row) in window.iter().enumerate() {
                let report = savings_single(row, c, rounds, t_sl)?;
                singles.push(report.savings_fraction);
                fixed.push(report.baseline_kg);
                slack.push(report.optimized_kg);
            }
            let multi = (1..=clients)
                .map(|n| multi_from_totals(&fixed, &slack, n).map(|r| r.savings_fraction))
                .collect::<Result<Vec<_>>>()?;
            Ok((singles, multi))
        })
        .collect()
}

/// Averages single- and multi-client savings over start offsets for every slack value.
///
/// Offsets are evaluated in parallel, then reduced sequentially in the given order, so the
/// result does not depend on the thread count.
pub fn sweep_slack<S: Scalar>(
    costs: &CarbonCostMatrix<S>,
    rounds: usize,
    t_sl_values: &[usize],
    offsets: &[usize],
) -> Result<SlackSweep<S>> {
    if rounds == 0 {
        return Err(SlackError::ZeroRounds);
    }
    let max_sl = t_sl_values.iter().copied().max().unwrap_or(0);
    let needed = rounds + max_sl;
    for &offset in offsets {
        if offset + needed > costs.horizon() {
            return Err(SlackError::OffsetOutOfRange {
                offset,
                needed,
                horizon: costs.horizon(),
            });
        }
    }

    let per_offset: Vec<_> = offsets
        .par_iter()
        .map(|&o| sweep_offset(costs, rounds, t_sl_values, o))
        .collect::<Result<_>>()?;

    let clients = costs.clients();
    let count = S::of_usize(offsets.len().max(1));
    let points = t_sl_values
        .iter()
        .enumerate()
        .map(|(i, &t_sl)| {
            let mut per_client = vec![S::zero(); clients];
            let mut per_n = vec![S::zero(); clients];
            for result in &per_offset {
                let (singles, multi) = &result[i];
                per_client.iter_mut().zip(singles).for_each(|(acc, v)| *acc += *v);
                per_n.iter_mut().zip(multi).for_each(|(acc, v)| *acc += *v);
            }
            per_client.iter_mut().for_each(|v| *v /= count);
            per_n.iter_mut().for_each(|v| *v /= count);
            SweepPoint {
                t_sl,
                per_client,
                per_n,
            }
        })
        .collect();

    Ok(SlackSweep {
        rounds,
        offsets: offsets.to_vec(),
        points,
    })
}

/// Draws `count` distinct start offsets uniformly from `0..available`, returned sorted.
pub fn sample_offsets(available: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count > available {
        return Err(SlackError::TooFewOffsets { count, available });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = rand::seq::index::sample(&mut rng, available, count).into_vec();
    v.sort_unstable();
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: Vec<Vec<f64>>) -> CarbonCostMatrix<f64> {
        CarbonCostMatrix::new(rows).unwrap()
    }

    #[test]
    fn constant_row_prefers_earliest() {
        assert_eq!(best_slots_single(&[1.0; 8], 3, 5).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn obvious_minimum() {
        let row = [5.0, 1.0, 5.0, 1.0, 1.0];
        let slots = best_slots_single(&row, 3, 2).unwrap();
        assert_eq!(slots, vec![1, 3, 4]);
        assert_eq!(slot_sum(&row, &slots), 3.0);
    }

    #[test]
    fn window_too_short() {
        assert_eq!(
            best_slots_single(&[1.0; 4], 3, 2),
            Err(SlackError::WindowTooShort { needed: 5, available: 4 })
        );
        assert_eq!(best_slots_single(&[1.0; 4], 0, 2), Err(SlackError::ZeroRounds));
    }

    #[test]
    fn no_variability_no_savings() {
        assert_eq!(savings_single(&[2.0; 10], 0, 4, 6).unwrap().savings_fraction, 0.0);
        let row = [3.0, 1.0, 4.0, 1.0, 5.0];
        assert_eq!(savings_single(&row, 0, 5, 0).unwrap().savings_fraction, 0.0);
    }

    #[test]
    fn hand_computed_savings() {
        let r = savings_single(&[4.0, 4.0, 4.0, 1.0, 1.0, 1.0], 0, 3, 3).unwrap();
        assert_eq!(r.baseline_kg, 12.0);
        assert_eq!(r.optimized_kg, 3.0);
        assert_eq!(r.savings_fraction, 0.75);
        assert_eq!(r.chosen_slots, vec![3, 4, 5]);
    }

    #[test]
    fn zero_baseline_is_an_error() {
        assert_eq!(
            savings_single(&[0.0, 0.0, 1.0], 4, 2, 1),
            Err(SlackError::ZeroBaseline { client: Some(4) })
        );
    }

    #[test]
    fn fixed_selection_ties_and_order() {
        let m = matrix(vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(select_clients_fixed(&m, 1, 2).unwrap(), vec![0]);
        let m = matrix(vec![vec![10.0], vec![2.0], vec![5.0]]);
        assert_eq!(select_clients_fixed(&m, 2, 1).unwrap(), vec![1, 2]);
        assert_eq!(select_clients_fixed(&m, 0, 1), Err(SlackError::BadN { n: 0, clients: 3 }));
        assert_eq!(select_clients_fixed(&m, 4, 1), Err(SlackError::BadN { n: 4, clients: 3 }));
    }

    #[test]
    fn slack_flips_ranking() {
        // A: flat 2 per slot. B: 5 during the first T slots, 0.1 afterwards.
        let a = vec![2.0; 8];
        let b = vec![5.0, 5.0, 5.0, 5.0, 0.1, 0.1, 0.1, 0.1];
        let m = matrix(vec![a, b]);
        assert_eq!(select_clients_fixed(&m, 1, 4).unwrap(), vec![0]);
        assert_eq!(select_clients_slack(&m, 1, 4, 4).unwrap(), vec![1]);
        assert_eq!(select_clients_slack(&m, 1, 4, 0).unwrap(), vec![0]);
    }

    #[test]
    fn constant_matrix_multi_savings_zero() {
        let m = matrix(vec![vec![0.3; 12]; 4]);
        for n in 1..=4 {
            assert_eq!(savings_multi(&m, n, 6, 6).unwrap().savings_fraction, 0.0);
        }
    }

    #[test]
    fn all_clients_same_sets() {
        let m = matrix(vec![vec![3.0, 1.0, 2.0, 0.5], vec![1.0, 1.0, 0.2, 4.0]]);
        let r = savings_multi(&m, 2, 2, 2).unwrap();
        assert_eq!(r.fixed_set, r.slack_set);
        assert_eq!(r.fixed_kg, 6.0);
        assert_eq!(r.slack_kg, 1.5 + 1.2);
    }

    #[test]
    fn sweep_single_offset_equals_direct() {
        let m = matrix(vec![
            vec![4.0, 4.0, 1.0, 2.0, 1.0, 3.0],
            vec![1.0, 2.0, 3.0, 0.5, 0.5, 2.0],
        ]);
        let sw = sweep_slack(&m, 3, &[2], &[1]).unwrap();
        let w = m.window(1, 5).unwrap();
        let single0 = savings_single(w.row(0), 0, 3, 2).unwrap().savings_fraction;
        let multi1 = savings_multi(&w, 1, 3, 2).unwrap().savings_fraction;
        assert_eq!(sw.points[0].per_client[0], single0);
        assert_eq!(sw.points[0].per_n[0], multi1);

        let repeated = sweep_slack(&m, 3, &[2], &[1, 1, 1, 1]).unwrap();
        for (a, b) in repeated.points[0].per_client.iter().zip(&sw.points[0].per_client) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn sweep_offset_out_of_range() {
        let m = matrix(vec![vec![1.0; 10]]);
        assert_eq!(
            sweep_slack(&m, 4, &[0, 3], &[0, 4]),
            Err(SlackError::OffsetOutOfRange { offset: 4, needed: 7, horizon: 10 })
        );
    }

    #[test]
    fn offsets_are_distinct_sorted_and_seeded() {
        let a = sample_offsets(100, 10, 3).unwrap();
        assert_eq!(a, sample_offsets(100, 10, 3).unwrap());
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|&o| o < 100));
        assert!(sample_offsets(5, 6, 0).is_err());
    }

    #[test]
    fn heatmap_order_by_max_slack_savings() {
        let sweep = SlackSweep {
            rounds: 1,
            offsets: vec![0],
            points: vec![
                SweepPoint { t_sl: 1, per_client: vec![0.9, 0.0, 0.0], per_n: vec![] },
                SweepPoint { t_sl: 5, per_client: vec![0.1, 0.5, 0.5], per_n: vec![] },
            ],
        };
        assert_eq!(sweep.heatmap_order(), vec![1, 2, 0]);
    }
}
