//! α-fair carbon-budgeted allocation of (client, slot) pairs, with an optional movable
//! fine-tuning window of full participation.
//!
//! The utility of a schedule `a` is `sum_c (sum_t (g_max - g_c(t)) a_c(t))^alpha` with
//! `0^alpha = 0`, maximised subject to `sum g_c(t) a_c(t) <= k`. At `alpha = 1` this is a 0-1
//! knapsack; smaller `alpha` spreads the budget across clients.
//!
//! Slots are 0-based internally. The fine-tuning end time `s` keeps its 1-based meaning: the
//! window covers the `t_ft` slots ending at slot `T + s` (1-based), i.e. the 0-based columns
//! `T + s - t_ft .. T + s`.

mod exact;
mod greedy;
mod instance;

use std::fmt::Write as _;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ci_traces::CarbonCostMatrix;
use crate::scalar::Scalar;

pub use exact::MAX_EXACT_VARIABLES;
pub use instance::BUDGET_TOLERANCE;
use instance::{utility, Instance, Item};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("dimension mismatch: expected {expected:?} (clients, slots), found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("alpha must lie in (0, 1], got {0}")]
    BadAlpha(f64),
    #[error("budget must be finite and non-negative, got {0}")]
    BadBudget(f64),
    #[error("invalid schedule configuration: {0}")]
    BadConfig(String),
    #[error("{variables} decision variables exceed the exact solver limit of {max}")]
    InstanceTooLarge { variables: usize, max: usize },
    #[error("no fine-tuning placement fits within the carbon budget")]
    NoFeasiblePlacement,
    #[error("fine-tuning window ending at s = {s} costs {window_kg} kg, above the budget of {budget_kg} kg")]
    WindowOverBudget { s: usize, window_kg: f64, budget_kg: f64 },
}

pub type Result<T, E = ScheduleError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Exact,
    Greedy,
    /// Exact up to [`MAX_EXACT_VARIABLES`] variables, greedy beyond.
    #[default]
    Auto,
}

impl std::str::FromStr for SolverKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Self::Exact),
            "greedy" => Ok(Self::Greedy),
            "auto" => Ok(Self::Auto),
            other => Err(format!("unknown solver `{other}` (expected exact, greedy or auto)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig<S> {
    /// Base number of training rounds `T`.
    #[serde(rename = "T")]
    pub rounds: usize,
    pub t_sl: usize,
    /// Fine-tuning duration; 0 disables the window.
    #[serde(default)]
    pub t_ft: usize,
    pub alpha: S,
    pub budget_kg: S,
    #[serde(default)]
    pub solver: SolverKind,
    /// Seed the greedy with every feasible set of up to three items.
    #[serde(default)]
    pub partial_enumeration: bool,
}

impl<S: Scalar> ScheduleConfig<S> {
    pub fn new(rounds: usize, t_sl: usize, alpha: S, budget_kg: S) -> Self {
        Self {
            rounds,
            t_sl,
            t_ft: 0,
            alpha,
            budget_kg,
            solver: SolverKind::Auto,
            partial_enumeration: false,
        }
    }

    pub fn with_finetuning(mut self, t_ft: usize) -> Self {
        self.t_ft = t_ft;
        self
    }

    pub fn with_solver(mut self, solver: SolverKind) -> Self {
        self.solver = solver;
        self
    }

    pub fn horizon(&self) -> usize {
        self.rounds + self.t_sl
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if !self.budget_kg.is_finite() || self.budget_kg < S::zero() {
            return Err(ScheduleError::BadBudget(self.budget_kg.as_f64()));
        }
        if self.t_ft > self.horizon() {
            return Err(ScheduleError::BadConfig(format!(
                "t_ft = {} exceeds T + t_sl = {}",
                self.t_ft,
                self.horizon()
            )));
        }
        if self.t_ft > 0 && self.t_sl < self.t_ft {
            return Err(ScheduleError::BadConfig(format!(
                "fine-tuning needs t_sl >= t_ft, got t_sl = {} and t_ft = {}",
                self.t_sl, self.t_ft
            )));
        }
        Ok(())
    }

    fn check_costs(&self, costs: &CarbonCostMatrix<S>) -> Result<()> {
        if costs.horizon() != self.horizon() {
            return Err(ScheduleError::DimensionMismatch {
                expected: (costs.clients(), self.horizon()),
                found: (costs.clients(), costs.horizon()),
            });
        }
        Ok(())
    }
}

fn check_alpha<S: Scalar>(alpha: S) -> Result<()> {
    if !(alpha > S::zero() && alpha <= S::one()) {
        return Err(ScheduleError::BadAlpha(alpha.as_f64()));
    }
    Ok(())
}

/// Placement of the forced full-participation block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinetuneWindow {
    /// 1-based end time offset past `T`.
    pub s: usize,
    /// 0-based columns of the window.
    pub columns: Range<usize>,
}

impl FinetuneWindow {
    /// Panics if `t_ft > rounds + s`.
    pub fn new(rounds: usize, t_ft: usize, s: usize) -> Self {
        let end = rounds + s;
        Self {
            s,
            columns: end - t_ft..end,
        }
    }
}

/// Forces full participation inside `window` and clears every slot after it.
pub fn apply_finetune_window(a: &mut [Vec<bool>], window: &FinetuneWindow) {
    for row in a {
        for (t, x) in row.iter_mut().enumerate().skip(window.columns.start) {
            *x = window.columns.contains(&t);
        }
    }
}

/// A binary client × slot allocation together with its carbon total and utility.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleMatrix<S> {
    a: Vec<Vec<bool>>,
    pub finetune: Option<FinetuneWindow>,
    pub total_kg: S,
    pub objective: S,
    pub alpha: S,
}

impl<S: Scalar> ScheduleMatrix<S> {
    /// Wraps a selection, recomputing `total_kg` and the utility from `costs`.
    pub fn new(
        a: Vec<Vec<bool>>,
        costs: &CarbonCostMatrix<S>,
        alpha: S,
        finetune: Option<FinetuneWindow>,
    ) -> Result<Self> {
        let objective = objective_value(&a, costs, alpha)?;
        let total_kg = selection_cost(&a, costs);
        if let Some(w) = &finetune {
            if w.columns.end > costs.horizon() {
                return Err(ScheduleError::BadConfig(format!(
                    "fine-tuning window {:?} exceeds the horizon {}",
                    w.columns,
                    costs.horizon()
                )));
            }
        }
        Ok(Self {
            a,
            finetune,
            total_kg,
            objective,
            alpha,
        })
    }

    pub fn clients(&self) -> usize {
        self.a.len()
    }

    pub fn horizon(&self) -> usize {
        self.a.first().map_or(0, Vec::len)
    }

    pub fn rows(&self) -> &[Vec<bool>] {
        &self.a
    }

    #[inline]
    pub fn is_selected(&self, client: usize, slot: usize) -> bool {
        self.a[client][slot]
    }

    /// 1-based fine-tuning end time.
    pub fn s(&self) -> Option<usize> {
        self.finetune.as_ref().map(|w| w.s)
    }

    /// Rounds the training loop executes: up to the end of fine-tuning, else the whole horizon.
    pub fn executed_rounds(&self) -> usize {
        self.finetune
            .as_ref()
            .map_or(self.horizon(), |w| w.columns.end)
    }

    /// Rounds before fine-tuning starts (all executed rounds without fine-tuning).
    pub fn pre_finetune_rounds(&self) -> usize {
        self.finetune
            .as_ref()
            .map_or(self.horizon(), |w| w.columns.start)
    }

    pub fn in_finetune(&self, slot: usize) -> bool {
        self.finetune.as_ref().is_some_and(|w| w.columns.contains(&slot))
    }

    pub fn active_clients(&self, slot: usize) -> Vec<usize> {
        (0..self.clients()).filter(|&c| self.a[c][slot]).collect()
    }

    /// Slots in which at least one client trains.
    pub fn active_rounds(&self) -> usize {
        (0..self.horizon()).filter(|&t| self.a.iter().any(|r| r[t])).count()
    }

    pub fn selected_count(&self) -> usize {
        self.a.iter().flatten().filter(|&&x| x).count()
    }

    pub fn slots_per_client(&self) -> Vec<usize> {
        self.a.iter().map(|r| r.iter().filter(|&&x| x).count()).collect()
    }

    /// Carbon allocated to each client.
    pub fn allocated_kg(&self, costs: &CarbonCostMatrix<S>) -> Vec<S> {
        self.a
            .iter()
            .enumerate()
            .map(|(c, r)| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &x)| x)
                    .fold(S::zero(), |acc, (t, _)| acc + costs.cost(c, t))
            })
            .collect()
    }

    /// CSV with a header of 1-based slot numbers, one 0/1 row per client (1-based ids in the
    /// first column) and `# s=`, `# total_kg=`, `# objective=` footer lines (`s=0` means no
    /// fine-tuning).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("client");
        for t in 1..=self.horizon() {
            let _ = write!(out, ",{t}");
        }
        out.push('\n');
        for (c, row) in self.a.iter().enumerate() {
            let _ = write!(out, "{}", c + 1);
            for &x in row {
                out.push_str(if x { ",1" } else { ",0" });
            }
            out.push('\n');
        }
        let _ = writeln!(out, "# s={}", self.s().unwrap_or(0));
        let _ = writeln!(out, "# total_kg={}", self.total_kg);
        let _ = writeln!(out, "# objective={}", self.objective);
        out
    }
}

/// Parsed schedule CSV: the matrix and the footer values.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleCsv {
    pub a: Vec<Vec<bool>>,
    pub s: Option<usize>,
    pub total_kg: Option<f64>,
    pub objective: Option<f64>,
}

pub fn parse_schedule_csv(text: &str) -> Result<ScheduleCsv> {
    let bad = |m: String| ScheduleError::BadConfig(format!("schedule csv: {m}"));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let width = header.split(',').count().saturating_sub(1);
    let mut out = ScheduleCsv {
        a: Vec::new(),
        s: None,
        total_kg: None,
        objective: None,
    };
    for line in lines {
        if let Some(footer) = line.strip_prefix('#') {
            let (key, value) = footer
                .trim()
                .split_once('=')
                .ok_or_else(|| bad(format!("bad footer `{line}`")))?;
            let value = value.trim();
            match key.trim() {
                "s" => {
                    let s: usize = value.parse().map_err(|_| bad(format!("bad s `{value}`")))?;
                    out.s = (s > 0).then_some(s);
                }
                "total_kg" => out.total_kg = value.parse().ok(),
                "objective" => out.objective = value.parse().ok(),
                _ => {}
            }
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != width + 1 {
            return Err(bad(format!("row has {} cells, expected {}", cells.len(), width + 1)));
        }
        let row = cells[1..]
            .iter()
            .map(|c| match c.trim() {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(bad(format!("cell `{other}` is not 0/1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        out.a.push(row);
    }
    Ok(out)
}

fn check_dims<S: Scalar>(a: &[Vec<bool>], costs: &CarbonCostMatrix<S>) -> Result<()> {
    let found = (a.len(), a.first().map_or(0, Vec::len));
    if found != (costs.clients(), costs.horizon()) || a.iter().any(|r| r.len() != found.1) {
        return Err(ScheduleError::DimensionMismatch {
            expected: (costs.clients(), costs.horizon()),
            found,
        });
    }
    Ok(())
}

/// Slot-major running sum, the same order in which training accumulates emissions.
fn selection_cost<S: Scalar>(a: &[Vec<bool>], costs: &CarbonCostMatrix<S>) -> S {
    let horizon = a.first().map_or(0, Vec::len);
    let mut total = S::zero();
    for t in 0..horizon {
        for (c, row) in a.iter().enumerate() {
            if row[t] {
                total += costs.cost(c, t);
            }
        }
    }
    total
}

/// `sum_c (sum_t (g_max - g_c(t)) a_c(t))^alpha`, with `0^alpha = 0`.
pub fn objective_value<S: Scalar>(a: &[Vec<bool>], costs: &CarbonCostMatrix<S>, alpha: S) -> Result<S> {
    check_alpha(alpha)?;
    check_dims(a, costs)?;
    let g_max = costs.g_max();
    Ok(a.iter()
        .enumerate()
        .map(|(c, row)| {
            let u: S = row
                .iter()
                .enumerate()
                .filter(|(_, &x)| x)
                .map(|(t, _)| g_max - costs.cost(c, t))
                .sum();
            utility(u, alpha)
        })
        .sum())
}

/// Items for the slots `columns` of every client, with per-client committed utility `base`.
fn instance<S: Scalar>(
    costs: &CarbonCostMatrix<S>,
    columns: Range<usize>,
    base: Vec<S>,
    budget: S,
    alpha: S,
) -> Instance<S> {
    let g_max = costs.g_max();
    let items = (0..costs.clients())
        .flat_map(|client| {
            columns.clone().map(move |slot| (client, slot))
        })
        .map(|(client, slot)| Item {
            client,
            slot,
            weight: g_max - costs.cost(client, slot),
            cost: costs.cost(client, slot),
        })
        .collect();
    Instance {
        clients: costs.clients(),
        items,
        base,
        budget,
        alpha,
    }
}

fn run_solver<S: Scalar>(inst: &Instance<S>, solver: SolverKind, partial_enumeration: bool) -> Result<Vec<bool>> {
    let n = inst.items.len();
    match solver {
        SolverKind::Exact if n > MAX_EXACT_VARIABLES => Err(ScheduleError::InstanceTooLarge {
            variables: n,
            max: MAX_EXACT_VARIABLES,
        }),
        SolverKind::Exact => Ok(exact::solve(inst)),
        SolverKind::Auto if n <= MAX_EXACT_VARIABLES => Ok(exact::solve(inst)),
        SolverKind::Greedy | SolverKind::Auto => Ok(greedy::solve(inst, partial_enumeration)),
    }
}

fn scatter<S>(inst: &Instance<S>, selected: &[bool], a: &mut [Vec<bool>]) {
    for (item, _) in inst.items.iter().zip(selected).filter(|(_, &x)| x) {
        a[item.client][item.slot] = true;
    }
}

fn solve_full<S: Scalar>(costs: &CarbonCostMatrix<S>, config: &ScheduleConfig<S>, solver: SolverKind) -> Result<ScheduleMatrix<S>> {
    config.validate()?;
    config.check_costs(costs)?;
    let inst = instance(
        costs,
        0..costs.horizon(),
        vec![S::zero(); costs.clients()],
        config.budget_kg,
        config.alpha,
    );
    let selected = run_solver(&inst, solver, config.partial_enumeration)?;
    let mut a = vec![vec![false; costs.horizon()]; costs.clients()];
    scatter(&inst, &selected, &mut a);
    ScheduleMatrix::new(a, costs, config.alpha, None)
}

/// Globally optimal α-fair allocation over the whole horizon (no fine-tuning window).
pub fn solve_alpha_fair_exact<S: Scalar>(costs: &CarbonCostMatrix<S>, config: &ScheduleConfig<S>) -> Result<ScheduleMatrix<S>> {
    solve_full(costs, config, SolverKind::Exact)
}

/// Lazy cost-benefit greedy (plus best singleton) over the whole horizon.
pub fn solve_alpha_fair_greedy<S: Scalar>(costs: &CarbonCostMatrix<S>, config: &ScheduleConfig<S>) -> Result<ScheduleMatrix<S>> {
    solve_full(costs, config, SolverKind::Greedy)
}

/// Whole-horizon allocation with the configured solver, ignoring `t_ft`.
pub fn solve_alpha_fair<S: Scalar>(costs: &CarbonCostMatrix<S>, config: &ScheduleConfig<S>) -> Result<ScheduleMatrix<S>> {
    solve_full(costs, config, config.solver)
}

/// Solves with the fine-tuning window forced to end at `s` (1-based, `1..=t_sl`).
///
/// The window is all-ones and its cost is charged to the budget; every slot after it is zero;
/// the slots before it are allocated with the residual budget by the configured solver. The
/// window's utility counts towards each client's α-fair term.
pub fn solve_for_end_time<S: Scalar>(costs: &CarbonCostMatrix<S>, config: &ScheduleConfig<S>, s: usize) -> Result<ScheduleMatrix<S>> {
    config.validate()?;
    config.check_costs(costs)?;
    if config.t_ft == 0 {
        return Err(ScheduleError::BadConfig("fine-tuning is disabled (t_ft = 0)".into()));
    }
    let first = first_end_time(config);
    if s < first || s > config.t_sl {
        return Err(ScheduleError::BadConfig(format!(
            "fine-tuning end time s = {s} outside {first}..={}",
            config.t_sl
        )));
    }
    let window = FinetuneWindow::new(config.rounds, config.t_ft, s);
    let g_max = costs.g_max();
    let mut window_kg = S::zero();
    let mut base = vec![S::zero(); costs.clients()];
    for (c, b) in base.iter_mut().enumerate() {
        for t in window.columns.clone() {
            window_kg += costs.cost(c, t);
            *b += g_max - costs.cost(c, t);
        }
    }
    let tol = S::of(BUDGET_TOLERANCE);
    if window_kg > config.budget_kg + tol {
        return Err(ScheduleError::WindowOverBudget {
            s,
            window_kg: window_kg.as_f64(),
            budget_kg: config.budget_kg.as_f64(),
        });
    }

    let residual = (config.budget_kg - window_kg).max(S::zero());
    let inst = instance(costs, 0..window.columns.start, base, residual, config.alpha);
    let selected = run_solver(&inst, config.solver, config.partial_enumeration)?;

    let mut a = vec![vec![false; costs.horizon()]; costs.clients()];
    scatter(&inst, &selected, &mut a);
    for row in &mut a {
        row[window.columns.clone()].fill(true);
    }
    ScheduleMatrix::new(a, costs, config.alpha, Some(window))
}

/// Smallest end time whose window starts at or after the first slot.
fn first_end_time<S>(config: &ScheduleConfig<S>) -> usize {
    config.t_ft.saturating_sub(config.rounds).max(1)
}

/// Joint allocation and fine-tuning placement: tries every `s` in `1..=t_sl` and keeps the
/// highest utility, ties to the smallest `s`. End times whose window would start before the
/// first slot are skipped. With `t_ft = 0` this is [`solve_alpha_fair`].
pub fn solve_with_finetuning<S: Scalar>(costs: &CarbonCostMatrix<S>, config: &ScheduleConfig<S>) -> Result<ScheduleMatrix<S>> {
    if config.t_ft == 0 {
        return solve_alpha_fair(costs, config);
    }
    config.validate()?;
    config.check_costs(costs)?;

    let candidates: Vec<Option<ScheduleMatrix<S>>> = (first_end_time(config)..=config.t_sl)
        .into_par_iter()
        .map(|s| match solve_for_end_time(costs, config, s) {
            Ok(m) => Ok(Some(m)),
            Err(ScheduleError::WindowOverBudget { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;

    let mut best: Option<ScheduleMatrix<S>> = None;
    for m in candidates.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| m.objective > b.objective) {
            best = Some(m);
        }
    }
    best.ok_or(ScheduleError::NoFeasiblePlacement)
}

/// Slack-agnostic baseline: every client in every slot from the start until the next full
/// round would overshoot `budget_kg`. The utility is reported at `alpha = 1`.
pub fn no_slack_baseline<S: Scalar>(costs: &CarbonCostMatrix<S>, budget_kg: S) -> Result<ScheduleMatrix<S>> {
    if !budget_kg.is_finite() || budget_kg < S::zero() {
        return Err(ScheduleError::BadBudget(budget_kg.as_f64()));
    }
    let tol = S::of(BUDGET_TOLERANCE);
    let mut a = vec![vec![false; costs.horizon()]; costs.clients()];
    let mut spent = S::zero();
    for t in 0..costs.horizon() {
        let round = costs.slot_total(t);
        if spent + round > budget_kg + tol {
            break;
        }
        spent += round;
        for row in &mut a {
            row[t] = true;
        }
    }
    ScheduleMatrix::new(a, costs, S::one(), None)
}

/// Cost of running every client for the first `rounds` slots.
pub fn full_budget_reference<S: Scalar>(costs: &CarbonCostMatrix<S>, rounds: usize) -> S {
    (0..rounds.min(costs.horizon())).map(|t| costs.slot_total(t)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn costs(rows: Vec<Vec<f64>>) -> CarbonCostMatrix<f64> {
        CarbonCostMatrix::new(rows).unwrap()
    }

    #[test]
    fn objective_examples() {
        let m = costs(vec![vec![0.5, 0.3, 0.2]]);
        // g_max = 0.5, weights (0, 0.2, 0.3)
        assert_eq!(objective_value(&[vec![false; 3]], &m, 0.5).unwrap(), 0.0);
        let two = objective_value(&[vec![false, true, true]], &m, 1.0).unwrap();
        assert!((two - 0.5).abs() < 1e-15);

        // Per-client sums (0.25, 0.09) under alpha = 0.5.
        let m = costs(vec![vec![0.75, 1.0], vec![0.91, 0.0]]);
        let a = vec![vec![true, false], vec![true, false]];
        let v = objective_value(&a, &m, 0.5).unwrap();
        assert!((v - 0.8).abs() < 1e-12, "{v}");
    }

    #[test]
    fn objective_errors() {
        let m = costs(vec![vec![1.0, 2.0]]);
        assert!(matches!(
            objective_value(&[vec![true]], &m, 1.0),
            Err(ScheduleError::DimensionMismatch { .. })
        ));
        assert!(matches!(objective_value(&[vec![true, true]], &m, 0.0), Err(ScheduleError::BadAlpha(_))));
        assert!(matches!(objective_value(&[vec![true, true]], &m, 1.5), Err(ScheduleError::BadAlpha(_))));
    }

    #[test]
    fn zero_budget_gives_empty_schedule() {
        let m = costs(vec![vec![0.2, 0.4, 0.1], vec![0.3, 0.3, 0.5]]);
        let cfg = ScheduleConfig::new(2, 1, 1.0, 0.0);
        for s in [solve_alpha_fair_exact(&m, &cfg).unwrap(), solve_alpha_fair_greedy(&m, &cfg).unwrap()] {
            assert_eq!(s.selected_count(), 0);
            assert_eq!(s.objective, 0.0);
        }
    }

    #[test]
    fn ample_budget_selects_everything() {
        let m = costs(vec![vec![0.2, 0.4, 0.1], vec![0.3, 0.3, 0.5]]);
        let cfg = ScheduleConfig::new(2, 1, 0.5, m.total());
        let s = solve_alpha_fair_exact(&m, &cfg).unwrap();
        // The g_max slot has zero weight, so it is optional; every other slot is selected.
        assert_eq!(s.selected_count() + 1, 6);
        let g = solve_alpha_fair_greedy(&m, &cfg).unwrap();
        assert_eq!(g.selected_count(), 6);
        assert!((g.objective - s.objective).abs() < 1e-12);
    }

    #[test]
    fn greedy_uniform_costs_fill_in_index_order() {
        let m = costs(vec![vec![1.0; 3]; 2]);
        let cfg = ScheduleConfig::new(3, 0, 1.0, 4.0);
        let s = solve_alpha_fair_greedy(&m, &cfg).unwrap();
        assert_eq!(s.rows(), &[vec![true, true, true], vec![true, false, false]]);
    }

    #[test]
    fn exact_rejects_large_instances() {
        let m = costs(vec![vec![1.0; 13]; 2]);
        let cfg = ScheduleConfig::new(13, 0, 1.0, 4.0);
        assert!(matches!(
            solve_alpha_fair_exact(&m, &cfg),
            Err(ScheduleError::InstanceTooLarge { variables: 26, max: 24 })
        ));
    }

    #[test]
    fn horizon_must_match() {
        let m = costs(vec![vec![1.0; 5]]);
        let cfg = ScheduleConfig::new(3, 1, 1.0, 4.0);
        assert!(matches!(solve_alpha_fair(&m, &cfg), Err(ScheduleError::DimensionMismatch { .. })));
    }

    #[test]
    fn forced_finetuning_solution() {
        // T = 2, t_sl = t_ft = 1: the window is the last slot.
        let m = costs(vec![vec![0.1, 0.2, 0.3], vec![0.2, 0.1, 0.4]]);
        let cfg = ScheduleConfig::new(2, 1, 1.0, 0.7).with_finetuning(1);
        let s = solve_with_finetuning(&m, &cfg).unwrap();
        assert_eq!(s.s(), Some(1));
        assert_eq!(s.rows(), &[vec![false, false, true], vec![false, false, true]]);
        assert!((s.total_kg - 0.7).abs() < 1e-12);
    }

    #[test]
    fn window_over_budget() {
        let m = costs(vec![vec![0.1, 0.2, 0.3], vec![0.2, 0.1, 0.4]]);
        let cfg = ScheduleConfig::new(2, 1, 1.0, 0.5).with_finetuning(1);
        assert_eq!(solve_with_finetuning(&m, &cfg), Err(ScheduleError::NoFeasiblePlacement));
        assert!(matches!(solve_for_end_time(&m, &cfg, 1), Err(ScheduleError::WindowOverBudget { s: 1, .. })));
    }

    #[test]
    fn finetuning_config_validation() {
        let m = costs(vec![vec![0.1; 4]]);
        let cfg = ScheduleConfig::new(3, 1, 1.0, 1.0).with_finetuning(2);
        assert!(matches!(solve_with_finetuning(&m, &cfg), Err(ScheduleError::BadConfig(_))));
        let cfg = ScheduleConfig::new(3, 1, 1.0, 1.0).with_finetuning(1);
        assert!(matches!(solve_for_end_time(&m, &cfg, 2), Err(ScheduleError::BadConfig(_))));
        assert!(matches!(solve_for_end_time(&m, &cfg, 0), Err(ScheduleError::BadConfig(_))));
    }

    #[test]
    fn zero_t_ft_degrades_to_plain_allocation() {
        let m = costs(vec![vec![0.2, 0.4, 0.1], vec![0.3, 0.3, 0.5]]);
        let cfg = ScheduleConfig::new(2, 1, 0.5, 0.6);
        assert_eq!(solve_with_finetuning(&m, &cfg).unwrap(), solve_alpha_fair(&m, &cfg).unwrap());
    }

    #[test]
    fn baseline_floor_semantics() {
        let m = costs(vec![vec![0.5; 6], vec![0.5; 6]]);
        let b = no_slack_baseline(&m, 3.5).unwrap();
        assert_eq!(b.slots_per_client(), vec![3, 3]);
        assert_eq!(b.active_rounds(), 3);
        assert_eq!(b.total_kg, 3.0);
        assert!(b.rows()[0][..3].iter().all(|&x| x));
        assert_eq!(no_slack_baseline(&m, 0.0).unwrap().selected_count(), 0);
        assert_eq!(full_budget_reference(&m, 4), 4.0);
    }

    #[test]
    fn csv_round_trip() {
        let m = costs(vec![vec![0.1, 0.2, 0.3], vec![0.2, 0.1, 0.4]]);
        let cfg = ScheduleConfig::new(2, 1, 1.0, 0.9).with_finetuning(1);
        let s = solve_with_finetuning(&m, &cfg).unwrap();
        let text = s.to_csv();
        assert!(text.starts_with("client,1,2,3\n"));
        assert!(text.contains("# s=1\n"));
        let parsed = parse_schedule_csv(&text).unwrap();
        assert_eq!(parsed.a, s.rows());
        assert_eq!(parsed.s, Some(1));
        assert_eq!(parsed.total_kg, Some(s.total_kg));
        assert_eq!(parsed.objective, Some(s.objective));
    }

    #[test]
    fn config_json_field_names() {
        let cfg: ScheduleConfig<f64> = serde_json::from_str(
            r#"{"T":50,"t_sl":100,"t_ft":1,"alpha":0.1,"budget_kg":0.94,"solver":"greedy"}"#,
        )
        .unwrap();
        assert_eq!(cfg.rounds, 50);
        assert_eq!(cfg.solver, SolverKind::Greedy);
        assert!(!cfg.partial_enumeration);
        let back = serde_json::to_string(&cfg).unwrap();
        assert!(back.contains("\"T\":50"));
    }

    #[test]
    fn window_longer_than_base_rounds() {
        // T = 1, t_ft = 3: only s = 2 and s = 3 place the window inside the horizon.
        let m = costs(vec![vec![0.1, 0.2, 0.3, 0.4]]);
        let cfg = ScheduleConfig::new(1, 3, 1.0, 10.0).with_finetuning(3);
        let s = solve_with_finetuning(&m, &cfg).unwrap();
        assert!(s.s().unwrap() >= 2);
        assert!(matches!(solve_for_end_time(&m, &cfg, 1), Err(ScheduleError::BadConfig(_))));
        let w = solve_for_end_time(&m, &cfg, 2).unwrap();
        assert_eq!(w.rows()[0], vec![true, true, true, false]);
    }
}
