//! Lazy cost-benefit greedy with a best-singleton fallback.
//!
//! The objective is monotone submodular in the selected items, so marginal gains only shrink as
//! the selection grows; a popped heap entry whose refreshed ratio still beats every stale bound is
//! the true argmax. Returning the better of the greedy set and the best single item gives the
//! classic `(1 - 1/e) / 2` guarantee for a knapsack constraint. Seeding the greedy with every
//! feasible set of up to three items recovers `1 - 1/e`, at cubic cost.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::instance::{utility, Instance};
use crate::scalar::Scalar;

struct Entry<S> {
    ratio: S,
    index: usize,
}

impl<S: Scalar> PartialEq for Entry<S> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<S: Scalar> Eq for Entry<S> {}

impl<S: Scalar> PartialOrd for Entry<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<S: Scalar> Ord for Entry<S> {
    // Highest ratio first, then lowest (client, slot) index.
    fn cmp(&self, other: &Self) -> Ordering {
        self.ratio
            .partial_cmp(&other.ratio)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.index.cmp(&self.index))
    }
}

fn gain<S: Scalar>(inst: &Instance<S>, utilities: &[S], index: usize) -> S {
    let item = &inst.items[index];
    let u = utilities[item.client];
    utility(u + item.weight, inst.alpha) - utility(u, inst.alpha)
}

fn ratio<S: Scalar>(gain: S, cost: S) -> S {
    if cost > S::zero() {
        gain / cost
    } else if gain > S::zero() {
        S::infinity()
    } else {
        S::zero()
    }
}

/// Greedy completion of `seed` (which must already be feasible).
fn lazy_greedy<S: Scalar>(inst: &Instance<S>, seed: &[usize]) -> Vec<bool> {
    let mut selected = vec![false; inst.items.len()];
    let mut utilities = inst.base.clone();
    let mut used = S::zero();
    for &i in seed {
        selected[i] = true;
        utilities[inst.items[i].client] += inst.items[i].weight;
        used += inst.items[i].cost;
    }

    let mut heap: BinaryHeap<Entry<S>> = (0..inst.items.len())
        .filter(|&i| !selected[i])
        .map(|i| Entry {
            ratio: ratio(gain(inst, &utilities, i), inst.items[i].cost),
            index: i,
        })
        .collect();

    while let Some(top) = heap.pop() {
        let item = inst.items[top.index];
        if !inst.fits(used, item.cost) {
            // Spent budget only grows, so this item can never fit again.
            continue;
        }
        let fresh = Entry {
            ratio: ratio(gain(inst, &utilities, top.index), item.cost),
            index: top.index,
        };
        if heap.peek().is_some_and(|next| fresh < *next) {
            heap.push(fresh);
            continue;
        }
        selected[top.index] = true;
        utilities[item.client] += item.weight;
        used += item.cost;
    }
    selected
}

fn best_singleton<S: Scalar>(inst: &Instance<S>) -> Option<usize> {
    let mut best: Option<(usize, S)> = None;
    for (i, item) in inst.items.iter().enumerate() {
        if !inst.fits(S::zero(), item.cost) {
            continue;
        }
        let g = gain(inst, &inst.base, i);
        if best.is_none_or(|(_, bg)| g > bg) {
            best = Some((i, g));
        }
    }
    best.map(|(i, _)| i)
}

pub(crate) fn solve<S: Scalar>(inst: &Instance<S>, partial_enumeration: bool) -> Vec<bool> {
    let mut best = lazy_greedy(inst, &[]);
    let mut best_value = inst.objective(&best);

    let mut consider = |candidate: Vec<bool>| {
        let value = inst.objective(&candidate);
        if value > best_value + Instance::objective_eps(best_value) {
            best_value = value;
            best = candidate;
        }
    };

    if let Some(i) = best_singleton(inst) {
        let mut single = vec![false; inst.items.len()];
        single[i] = true;
        consider(single);
    }

    if partial_enumeration {
        let n = inst.items.len();
        let cost = |i: usize| inst.items[i].cost;
        for a in 0..n {
            if !inst.fits(S::zero(), cost(a)) {
                continue;
            }
            consider(lazy_greedy(inst, &[a]));
            for b in a + 1..n {
                if !inst.fits(cost(a), cost(b)) {
                    continue;
                }
                consider(lazy_greedy(inst, &[a, b]));
                for c in b + 1..n {
                    if inst.fits(cost(a) + cost(b), cost(c)) {
                        consider(lazy_greedy(inst, &[a, b, c]));
                    }
                }
            }
        }
    }
    best
}
