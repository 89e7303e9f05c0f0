//! Depth-first branch and bound for small instances.
//!
//! Items are branched in (client, slot) order with the "not selected" branch first, and an
//! incumbent is only replaced by a strictly better value, so among optimal schedules the one
//! with the lexicographically smallest flattened matrix is returned.

use std::cmp::Ordering;

use super::instance::{utility, Instance};
use crate::scalar::Scalar;

pub const MAX_EXACT_VARIABLES: usize = 24;

struct Search<'a, S> {
    inst: &'a Instance<S>,
    selected: Vec<bool>,
    utilities: Vec<S>,
    best: Vec<bool>,
    best_value: S,
}

/// Fractional knapsack over `(value, cost)` pairs; zero-cost pairs are taken in full.
fn fractional_knapsack<S: Scalar>(pieces: &mut [(S, S)], budget: S) -> S {
    pieces.sort_by(|a, b| ratio_cmp(b, a));
    let mut left = budget.max(S::zero());
    let mut total = S::zero();
    for &(value, cost) in pieces.iter() {
        if value <= S::zero() {
            continue;
        }
        if cost <= S::zero() {
            total += value;
        } else if cost <= left {
            total += value;
            left -= cost;
        } else {
            total += value * left / cost;
            break;
        }
    }
    total
}

fn ratio_cmp<S: Scalar>(a: &(S, S), b: &(S, S)) -> Ordering {
    // a.0 / a.1 vs b.0 / b.1 with zero costs treated as infinite ratios.
    match (a.1 <= S::zero(), b.1 <= S::zero()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        (false, false) => (a.0 * b.1).partial_cmp(&(b.0 * a.1)).unwrap_or(Ordering::Equal),
    }
}

impl<S: Scalar> Search<'_, S> {
    /// Upper bound on the objective reachable from item `next` with `left` budget.
    fn bound(&self, next: usize, left: S) -> S {
        let inst = self.inst;
        let rest = &inst.items[next..];
        let current = inst.objective_of(&self.utilities);
        if rest.is_empty() {
            return current;
        }
        if inst.alpha == S::one() {
            let mut pieces: Vec<(S, S)> = rest.iter().map(|i| (i.weight, i.cost)).collect();
            return current + fractional_knapsack(&mut pieces, left);
        }

        // Concave case: each client's gain is at most min(G_c, slope_c * b_c), where G_c caps
        // the gain from its own fractional knapsack and slope_c is the tangent at the current sum.
        let mut pieces = Vec::with_capacity(inst.clients);
        for c in 0..inst.clients {
            let mut own: Vec<(S, S)> = rest
                .iter()
                .filter(|i| i.client == c)
                .map(|i| (i.weight, i.cost))
                .collect();
            if own.is_empty() {
                continue;
            }
            let best_ratio = own
                .iter()
                .filter(|p| p.0 > S::zero())
                .map(|p| if p.1 <= S::zero() { S::infinity() } else { p.0 / p.1 })
                .fold(S::zero(), S::max);
            let extra = fractional_knapsack(&mut own, left);
            let u = self.utilities[c];
            let cap = utility(u + extra, inst.alpha) - utility(u, inst.alpha);
            if cap <= S::zero() {
                continue;
            }
            let slope = if u <= S::zero() || best_ratio.is_infinite() {
                S::infinity()
            } else {
                inst.alpha * u.powf(inst.alpha - S::one()) * best_ratio
            };
            let cost = if slope.is_infinite() { S::zero() } else { cap / slope };
            pieces.push((cap, cost));
        }
        current + fractional_knapsack(&mut pieces, left)
    }

    fn visit(&mut self, next: usize, used: S) {
        let inst = self.inst;
        let eps = Instance::objective_eps(self.best_value);
        if next == inst.items.len() {
            let value = inst.objective_of(&self.utilities);
            if value > self.best_value + eps {
                self.best_value = value;
                self.best.clone_from(&self.selected);
            }
            return;
        }
        if self.bound(next, inst.budget + inst.tolerance() - used) <= self.best_value + eps {
            return;
        }

        self.visit(next + 1, used);

        let item = inst.items[next];
        if inst.fits(used, item.cost) {
            self.selected[next] = true;
            self.utilities[item.client] += item.weight;
            self.visit(next + 1, used + item.cost);
            self.utilities[item.client] -= item.weight;
            self.selected[next] = false;
        }
    }
}

/// Globally optimal selection; callers enforce [`MAX_EXACT_VARIABLES`].
pub(crate) fn solve<S: Scalar>(inst: &Instance<S>) -> Vec<bool> {
    let n = inst.items.len();
    let empty = vec![false; n];
    let mut search = Search {
        inst,
        selected: empty.clone(),
        utilities: inst.base.clone(),
        best_value: inst.objective(&empty),
        best: empty,
    };
    search.visit(0, S::zero());
    search.best
}
