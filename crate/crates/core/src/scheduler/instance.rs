//! Flattened (client, slot) item view shared by the solvers.

use crate::scalar::Scalar;

/// Budget slack tolerated when comparing carbon totals against `k`, in kg.
pub const BUDGET_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Item<S> {
    pub client: usize,
    pub slot: usize,
    /// Utility weight `g_max - g`.
    pub weight: S,
    pub cost: S,
}

/// A residual allocation problem: maximise `sum_c (base_c + sum_{i in c} w_i x_i)^alpha`
/// subject to `sum_i g_i x_i <= budget`. Items are stored in (client, slot) order.
#[derive(Debug, Clone)]
pub(crate) struct Instance<S> {
    pub clients: usize,
    pub items: Vec<Item<S>>,
    pub base: Vec<S>,
    pub budget: S,
    pub alpha: S,
}

#[inline]
pub(crate) fn utility<S: Scalar>(x: S, alpha: S) -> S {
    if x <= S::zero() {
        S::zero()
    } else if alpha == S::one() {
        x
    } else {
        x.powf(alpha)
    }
}

impl<S: Scalar> Instance<S> {
    pub fn tolerance(&self) -> S {
        S::of(BUDGET_TOLERANCE)
    }

    pub fn fits(&self, used: S, cost: S) -> bool {
        used + cost <= self.budget + self.tolerance()
    }

    pub fn objective_of(&self, utilities: &[S]) -> S {
        utilities.iter().map(|&u| utility(u, self.alpha)).sum()
    }

    /// Per-client utility sums of a selection.
    pub fn utilities(&self, selected: &[bool]) -> Vec<S> {
        let mut u = self.base.clone();
        for (item, _) in self.items.iter().zip(selected).filter(|(_, &s)| s) {
            u[item.client] += item.weight;
        }
        u
    }

    pub fn objective(&self, selected: &[bool]) -> S {
        self.objective_of(&self.utilities(selected))
    }

    /// Comparison slack for objective values of magnitude `scale`.
    pub fn objective_eps(scale: S) -> S {
        S::epsilon() * S::of(1e3) * scale.abs().max(S::one())
    }
}
