//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use carbonfl_core::ci_traces::{carbon_cost_matrix, fixture_client_profiles, fixture_traces};
use carbonfl_core::fl_sim::{ufedavg_aggregate, FlError};
use carbonfl_core::metrics::{estimate_correlation, mc_generate_schedule, ParticipationChain};
use carbonfl_core::scheduler::{
    apply_finetune_window, full_budget_reference, no_slack_baseline, solve_alpha_fair_exact, solve_alpha_fair_greedy,
    solve_with_finetuning, FinetuneWindow, ScheduleConfig, ScheduleError, ScheduleMatrix, SolverKind,
};
use carbonfl_core::slack::savings_single;
use carbonfl_core::{
    run_training, Architecture, CarbonCostMatrix, FlConfig, FlTask, Model, SyntheticSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1

/// Cheapest `rounds` slots of `row` by exhaustive enumeration, ties to the smallest sorted list.
fn enumerate_best(row: &[f64], rounds: usize) -> Vec<usize> {
    let n = row.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0u32..1 << n {
        if mask.count_ones() as usize != rounds {
            continue;
        }
        let slots: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let kg: f64 = slots.iter().map(|&i| row[i]).sum();
        let better = match &best {
            None => true,
            Some((b, bs)) => kg < *b || (kg == *b && slots < *bs),
        };
        if better {
            best = Some((kg, slots));
        }
    }
    best.unwrap().1
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut enumerated = 0;
    for i in 0..200 {
        let rounds = rng.random_range(1..=8);
        let row: Vec<f64> = (0..20).map(|_| rng.random_range(0.01..1.0)).collect();
        let mut prev = 0.0;
        for t_sl in 0..=(20 - rounds) {
            let r = savings_single(&row, i, rounds, t_sl).map_err(|e| e.to_string())?;
            if t_sl == 0 {
                check(r.savings_fraction == 0.0, || format!("row {i}: savings {} at t_sl = 0", r.savings_fraction))?;
            }
            check(r.savings_fraction >= prev, || format!("row {i}: savings fell at t_sl = {t_sl}"))?;
            prev = r.savings_fraction;
        }
        let t_sl = rng.random_range(0..=(20 - rounds));
        let r = savings_single(&row, i, rounds, t_sl).map_err(|e| e.to_string())?;
        let expected = enumerate_best(&row[..rounds + t_sl], rounds);
        check(r.chosen_slots == expected, || format!("row {i}: {:?} vs {expected:?}", r.chosen_slots))?;
        enumerated += 1;
    }
    // Daily cycle with a 10:1 peak-to-trough ratio, starting at the peak.
    let trace: Vec<f64> = (0..336)
        .map(|h| 0.55 + 0.45 * (2.0 * std::f64::consts::PI * h as f64 / 24.0).cos())
        .collect();
    let peak = trace.iter().cloned().fold(f64::MIN, f64::max);
    let trough = trace.iter().cloned().fold(f64::MAX, f64::min);
    check((peak / trough - 10.0).abs() < 1e-9, || format!("peak/trough {}", peak / trough))?;
    let s = savings_single(&trace, 0, 100, 236).map_err(|e| e.to_string())?.savings_fraction;
    check(s > 0.5, || format!("10:1 trace saves only {s}"))?;
    Ok(format!("200 rows monotone, {enumerated} enumerations match, 10:1 trace saves {s:.3}"))
}

// ---------------------------------------------------------------- 2, 3

struct Instance {
    costs: CarbonCostMatrix<f64>,
    rounds: usize,
    t_sl: usize,
    budget: f64,
}

/// Instances with at most 12 binary variables and costs of 20 to 400 g.
fn instances() -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut out = Vec::new();
    while out.len() < 100 {
        let clients = rng.random_range(1..=3);
        let rounds = rng.random_range(1..=4);
        let t_sl = rng.random_range(0..=4);
        if clients * (rounds + t_sl) > 12 {
            continue;
        }
        let rows: Vec<Vec<f64>> = (0..clients)
            .map(|_| (0..rounds + t_sl).map(|_| rng.random_range(0.02..0.4)).collect())
            .collect();
        let costs = CarbonCostMatrix::new(rows).unwrap();
        let budget = costs.total() * rng.random_range(0.1..0.9);
        out.push(Instance { costs, rounds, t_sl, budget });
    }
    out
}

fn knapsack(weights: &[f64], grams: &[usize], capacity: usize) -> f64 {
    let mut best = vec![0.0f64; capacity + 1];
    for (&w, &g) in weights.iter().zip(grams) {
        for b in (g..=capacity).rev() {
            best[b] = best[b].max(best[b - g] + w);
        }
    }
    best[capacity]
}

fn criterion_2() -> Outcome {
    let mut worst_width = 0.0f64;
    for (i, inst) in instances().iter().enumerate() {
        let config = ScheduleConfig::new(inst.rounds, inst.t_sl, 1.0, inst.budget);
        let exact = solve_alpha_fair_exact(&inst.costs, &config).map_err(|e| e.to_string())?;
        let g_max = inst.costs.rows().iter().flatten().cloned().fold(0.0, f64::max);
        let items: Vec<f64> = inst.costs.rows().iter().flatten().cloned().collect();
        let weights: Vec<f64> = items.iter().map(|g| g_max - g).collect();
        let grams: Vec<f64> = items.iter().map(|g| g * 1000.0).collect();
        let k = inst.budget * 1000.0;
        // Rounding costs up and the budget down can only lose solutions, the reverse only add.
        let lo = knapsack(&weights, &grams.iter().map(|g| g.ceil() as usize).collect::<Vec<_>>(), k.floor() as usize);
        let hi = knapsack(&weights, &grams.iter().map(|g| g.floor() as usize).collect::<Vec<_>>(), k.ceil() as usize);
        check(exact.objective >= lo - 1e-9 && exact.objective <= hi + 1e-9, || {
            format!("instance {i}: {lo} <= {} <= {hi} fails", exact.objective)
        })?;
        check(exact.total_kg <= inst.budget + 1e-9, || format!("instance {i} over budget"))?;
        worst_width = worst_width.max(hi - lo);
    }
    Ok(format!("100 instances inside the one-gram DP bracket (widest {worst_width:.4})"))
}

fn criterion_3() -> Outcome {
    let mut ratios = Vec::new();
    for inst in instances() {
        for alpha in [1.0, 0.5, 0.1] {
            let config = ScheduleConfig::new(inst.rounds, inst.t_sl, alpha, inst.budget);
            let exact = solve_alpha_fair_exact(&inst.costs, &config).map_err(|e| e.to_string())?.objective;
            let greedy = solve_alpha_fair_greedy(&inst.costs, &config).map_err(|e| e.to_string())?;
            check(greedy.total_kg <= inst.budget + 1e-9, || "greedy over budget".into())?;
            ratios.push(if exact > 0.0 { greedy.objective / exact } else { 1.0 });
        }
    }
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    check(min >= 0.316, || format!("worst ratio {min}"))?;
    let soft = if mean >= 0.90 { "met" } else { "MISSED (soft)" };
    Ok(format!("{} ratios, min {min:.4}, mean {mean:.4} (soft 0.90 {soft})", ratios.len()))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut solved, mut infeasible) = (0, 0);
    for i in 0..1000 {
        let clients = rng.random_range(1..=5);
        let rounds = rng.random_range(1..=8);
        let t_sl = rng.random_range(0..=8);
        let t_ft = if rng.random_bool(0.5) { rng.random_range(0..=t_sl.min(3)) } else { 0 };
        let rows: Vec<Vec<f64>> = (0..clients)
            .map(|_| (0..rounds + t_sl).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let costs = CarbonCostMatrix::new(rows.clone()).unwrap();
        let total: f64 = rows.iter().flatten().sum();
        let budget = total * rng.random_range(0.0..1.1);
        let alpha = [1.0, 0.5, 0.1, 1e-3][rng.random_range(0..4)];
        let solver = if clients * (rounds + t_sl) <= 14 { SolverKind::Exact } else { SolverKind::Greedy };
        let config = ScheduleConfig::new(rounds, t_sl, alpha, budget).with_finetuning(t_ft).with_solver(solver);
        match solve_with_finetuning(&costs, &config) {
            Ok(s) => {
                let mut kg = 0.0;
                for (c, row) in s.rows().iter().enumerate() {
                    for (t, &x) in row.iter().enumerate() {
                        if x {
                            kg += rows[c][t];
                        }
                    }
                }
                check(kg <= budget + 1e-9, || format!("case {i}: {kg} kg over {budget}"))?;
                if t_ft > 0 {
                    let end = s.s().ok_or_else(|| format!("case {i}: no end time"))?;
                    check((1..=t_sl).contains(&end), || format!("case {i}: s = {end}"))?;
                    let (from, to) = (rounds + end - t_ft, rounds + end);
                    for row in s.rows() {
                        check(row[from..to].iter().all(|&x| x), || format!("case {i}: window not full"))?;
                        check(row[to..].iter().all(|&x| !x), || format!("case {i}: tail not empty"))?;
                    }
                }
                solved += 1;
            }
            Err(ScheduleError::NoFeasiblePlacement) => {
                for end in t_ft.saturating_sub(rounds).max(1)..=t_sl {
                    let window: f64 = rows.iter().map(|r| r[rounds + end - t_ft..rounds + end].iter().sum::<f64>()).sum();
                    check(window > budget - 1e-9, || format!("case {i}: s = {end} fits but was rejected"))?;
                }
                infeasible += 1;
            }
            Err(e) => return Err(format!("case {i}: {e}")),
        }
    }
    Ok(format!("1000 cases: {solved} schedules within budget and window structure, {infeasible} correctly infeasible"))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let traces = fixture_traces();
    let profiles = fixture_client_profiles();
    // Costs recomputed here: power times intensity.
    let g: Vec<Vec<f64>> = profiles
        .iter()
        .map(|p| traces.series(&p.region).unwrap()[..48].iter().map(|ci| p.power_kw * ci).collect())
        .collect();
    let costs = carbon_cost_matrix::<f64>(&traces, &profiles, 48).map_err(|e| e.to_string())?;
    let reference: f64 = g.iter().map(|r| r[..24].iter().sum::<f64>()).sum();
    let budget = 0.2 * reference;
    let mut rows_out = Vec::new();
    for alpha in [1.0, 0.5, 0.1, 0.01, 0.001] {
        let config = ScheduleConfig::new(24, 24, alpha, budget).with_solver(SolverKind::Greedy);
        let s = solve_with_finetuning(&costs, &config).map_err(|e| e.to_string())?;
        let allocated: Vec<f64> = s
            .rows()
            .iter()
            .zip(&g)
            .map(|(a, gr)| a.iter().zip(gr).filter(|(x, _)| **x).map(|(_, v)| v).sum())
            .collect();
        let slots: Vec<usize> = s.rows().iter().map(|r| r.iter().filter(|&&x| x).count()).collect();
        let min_kg = allocated.iter().cloned().fold(f64::INFINITY, f64::min);
        rows_out.push((alpha, min_kg, slots.iter().sum::<usize>(), slots));
    }
    for w in rows_out.windows(2) {
        check(w[1].1 >= w[0].1 - 1e-12, || format!("min kg fell from {} to {} at alpha {}", w[0].1, w[1].1, w[1].0))?;
        check(w[1].2 <= w[0].2, || format!("slots rose from {} to {} at alpha {}", w[0].2, w[1].2, w[1].0))?;
    }
    let first = &rows_out[0];
    let last = &rows_out[rows_out.len() - 1];
    check(first.3.contains(&0), || format!("alpha 1 gives every client slots: {:?}", first.3))?;
    check(last.3.iter().all(|&n| n >= 1), || format!("alpha 1e-3 leaves a client out: {:?}", last.3))?;
    let trail: Vec<String> = rows_out.iter().map(|r| format!("{}:{:.3}kg/{}", r.0, r.1, r.2)).collect();
    Ok(format!("alpha:min_kg/slots {}", trail.join(" ")))
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let k = 7;
    let dim = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let deltas: Vec<Vec<f64>> = (0..k).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let pi: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..0.9)).collect();
    let full: Vec<f64> = (0..dim).map(|j| deltas.iter().map(|d| d[j]).sum::<f64>() / k as f64).collect();
    let draws = 100_000;
    let mut mean = vec![0.0; dim];
    for _ in 0..draws {
        let active: Vec<(usize, Vec<f64>)> = (0..k)
            .filter(|&c| rng.random::<f64>() < pi[c])
            .map(|c| (c, deltas[c].clone()))
            .collect();
        match ufedavg_aggregate(&active, &pi, k) {
            Ok(agg) => mean.iter_mut().zip(&agg).for_each(|(m, a)| *m += a / draws as f64),
            Err(FlError::EmptyActiveSet) => {}
            Err(e) => return Err(e.to_string()),
        }
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = mean.iter().zip(&full).map(|(a, b)| a - b).collect();
    let rel = norm(&diff) / norm(&full);
    check(rel < 0.01, || format!("relative error {rel}"))?;
    Ok(format!("relative error {rel:.5} over 1e5 draws"))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let spec = SyntheticSpec {
        num_classes: 4,
        feature_dim: 6,
        samples_per_class: 40,
        test_per_class: 10,
        separation: 3.0,
        noise_std: 1.0,
    };
    let task = carbonfl_core::fl_sim::make_synthetic_task::<f64>(&spec, 7).map_err(|e| e.to_string())?;
    let mut report = Vec::new();
    for arch in [Architecture::SoftmaxRegression, Architecture::Mlp1] {
        let model = Model::new(arch, 6, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(707);
        let theta: Vec<f64> = (0..model.num_params()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let batch: Vec<usize> = (0..64).collect();
        let mut grad = vec![0.0; theta.len()];
        model.loss_grad(&theta, &task.train, &batch, &mut grad);
        let h = 1e-5;
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let i = rng.random_range(0..theta.len());
            let (mut plus, mut minus) = (theta.clone(), theta.clone());
            plus[i] += h;
            minus[i] -= h;
            let fd = (model.loss(&plus, &task.train, &batch) - model.loss(&minus, &task.train, &batch)) / (2.0 * h);
            worst = worst.max((grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-8));
        }
        check(worst < 1e-5, || format!("{arch:?}: relative error {worst}"))?;
        report.push(format!("{arch:?} {worst:.1e}"));
    }
    Ok(format!("max relative error {}", report.join(", ")))
}

// ---------------------------------------------------------------- 8

/// `|1 - p01 - p10|` from raw transition counts.
fn counted_lambda(row: &[bool]) -> f64 {
    let mut n = [[0usize; 2]; 2];
    for w in row.windows(2) {
        n[w[0] as usize][w[1] as usize] += 1;
    }
    let p01 = n[0][1] as f64 / (n[0][0] + n[0][1]) as f64;
    let p10 = n[1][0] as f64 / (n[1][0] + n[1][1]) as f64;
    (1.0 - p01 - p10).abs()
}

fn criterion_8() -> Outcome {
    let mut means = Vec::new();
    for lambda in [0.0, 0.5, 0.9] {
        let chain = ParticipationChain::from_targets(&[0.5], lambda).map_err(|e| e.to_string())?;
        let mut sum = 0.0;
        for seed in 0..10 {
            let rows = mc_generate_schedule(&chain, 10_000, seed).map_err(|e| e.to_string())?;
            let est = estimate_correlation(&rows).map_err(|e| e.to_string())?.rho_t;
            let own = counted_lambda(&rows[0]);
            check((est - own).abs() < 0.01, || format!("estimator {est} vs counts {own}"))?;
            sum += est;
        }
        let mean = sum / 10.0;
        check((mean - lambda).abs() < 0.05, || format!("lambda {lambda}: estimate {mean}"))?;
        means.push(format!("{lambda}->{mean:.3}"));
    }
    let activity = [0.3, 0.4, 0.5, 0.5, 0.6, 0.7, 0.5];
    let tu = ParticipationChain::from_targets(&activity, 0.0).map_err(|e| e.to_string())?;
    let tc = ParticipationChain::from_targets(&activity, 0.9).map_err(|e| e.to_string())?;
    let rho = |c: &ParticipationChain| -> Result<f64, String> {
        let rows = mc_generate_schedule(c, 1000, 8).map_err(|e| e.to_string())?;
        Ok(estimate_correlation(&rows).map_err(|e| e.to_string())?.rho_t)
    };
    let (tu_rho, tc_rho) = (rho(&tu)?, rho(&tc)?);
    check(tu_rho < 0.1, || format!("TU regime rho_T = {tu_rho}"))?;
    check(tc_rho > 0.7, || format!("TC regime rho_T = {tc_rho}"))?;
    Ok(format!("recovered {}; TU rho_T {tu_rho:.3} < 0.1, TC rho_T {tc_rho:.3} > 0.7", means.join(", ")))
}

// ---------------------------------------------------------------- 9, 10

/// One-sided sign-test p-value for `wins` successes out of `n` fair coin flips.
fn sign_test(wins: usize, n: usize) -> f64 {
    let choose = |n: usize, k: usize| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    (wins..=n).map(|k| choose(n, k)).sum::<f64>() / 2f64.powi(n as i32)
}

fn criterion_9() -> Outcome {
    let spec = SyntheticSpec {
        separation: 4.0,
        test_per_class: 300,
        ..SyntheticSpec::default()
    };
    let chain = ParticipationChain::from_targets(&[0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8], 0.95)
        .and_then(|c| c.with_latent(0.8, 0.2, 0.95))
        .map_err(|e| e.to_string())?;
    // Regime of the generating chain, measured on a long draw.
    let long = estimate_correlation(&mc_generate_schedule(&chain, 10_000, 99).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    check(long.rho_t > 0.7 && long.rho_ts > 0.45, || format!("not TC+SC: {} / {}", long.rho_t, long.rho_ts))?;

    let costs = CarbonCostMatrix::new(vec![vec![0.01; 50]; 7]).unwrap();
    let window = FinetuneWindow::new(40, 10, 10);
    let mut wins = 0;
    let (mut with_ft, mut without) = (Vec::new(), Vec::new());
    for seed in 0..5u64 {
        let config = FlConfig {
            tau: 20,
            eta: 0.3,
            batch_size: 128,
            seed,
            dirichlet_beta: 0.1,
            architecture: Architecture::SoftmaxRegression,
        };
        let task = FlTask::synthetic(&spec, 7, &config).map_err(|e| e.to_string())?;
        let rows = mc_generate_schedule(&chain, 50, 100 + seed).map_err(|e| e.to_string())?;
        let plain = ScheduleMatrix::new(rows.clone(), &costs, 1.0, None).map_err(|e| e.to_string())?;
        let mut tuned_rows = rows;
        apply_finetune_window(&mut tuned_rows, &window);
        let tuned = ScheduleMatrix::new(tuned_rows, &costs, 1.0, Some(window.clone())).map_err(|e| e.to_string())?;
        let a = run_training(&task, &tuned, &costs, &config).map_err(|e| e.to_string())?.final_accuracy();
        let b = run_training(&task, &plain, &costs, &config).map_err(|e| e.to_string())?.final_accuracy();
        wins += usize::from(a > b);
        with_ft.push(a);
        without.push(b);
    }
    let p = sign_test(wins, 5);
    let (ma, mb) = (mean(&with_ft), mean(&without));
    check(ma > mb, || format!("mean {ma:.4} with fine-tuning vs {mb:.4} without"))?;
    check(p < 0.1, || format!("{wins}/5 wins, sign test p = {p:.3}"))?;
    Ok(format!(
        "rho_T {:.2}, rho_TS {:.2}; mean acc {ma:.4} vs {mb:.4}, {wins}/5 wins, p = {p:.3}",
        long.rho_t, long.rho_ts
    ))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_10() -> Outcome {
    let spec = SyntheticSpec {
        separation: 6.0,
        feature_dim: 20,
        ..SyntheticSpec::default()
    };
    let traces = fixture_traces();
    let profiles = fixture_client_profiles();
    let costs = carbon_cost_matrix::<f64>(&traces, &profiles, 150).map_err(|e| e.to_string())?;
    let reference = full_budget_reference(&costs, 50);
    let own: f64 = profiles
        .iter()
        .map(|p| traces.series(&p.region).unwrap()[..50].iter().map(|ci| p.power_kw * ci).sum::<f64>())
        .sum();
    check((reference - own).abs() < 1e-9, || format!("reference {reference} vs {own}"))?;
    let base_costs = costs.window(0, 50).map_err(|e| e.to_string())?;

    let mut lines = Vec::new();
    for pct in [5.73, 9.69, 82.0] {
        let k = pct / 100.0 * reference;
        let config = ScheduleConfig::new(50, 100, 0.1, k).with_finetuning(1).with_solver(SolverKind::Greedy);
        let aware = solve_with_finetuning(&costs, &config).map_err(|e| e.to_string())?;
        let baseline = no_slack_baseline(&base_costs, k).map_err(|e| e.to_string())?;
        let (mut a_acc, mut b_acc) = (Vec::new(), Vec::new());
        for seed in 0..5u64 {
            let fl = FlConfig {
                tau: 5,
                eta: 0.003,
                batch_size: 128,
                seed,
                dirichlet_beta: 0.5,
                architecture: Architecture::SoftmaxRegression,
            };
            let task = FlTask::synthetic(&spec, 7, &fl).map_err(|e| e.to_string())?;
            a_acc.push(run_training(&task, &aware, &costs, &fl).map_err(|e| e.to_string())?.final_accuracy());
            b_acc.push(run_training(&task, &baseline, &base_costs, &fl).map_err(|e| e.to_string())?.final_accuracy());
        }
        let (ma, mb) = (mean(&a_acc), mean(&b_acc));
        if pct <= 10.0 {
            check(ma >= mb, || format!("{pct}%: carbon-aware {ma:.4} < baseline {mb:.4}"))?;
        }
        lines.push(format!("{pct}%: {ma:.4} vs {mb:.4} ({} baseline rounds)", baseline.active_rounds()));
    }
    Ok(lines.join("; "))
}

// ---------------------------------------------------------------- 11

/// Rounds of full participation that fit in `budget`, counted directly.
fn counted_rounds(per_round: &[f64], budget: f64) -> usize {
    let mut spent = 0.0;
    let mut n = 0;
    for &r in per_round {
        if spent + r > budget + 1e-9 {
            break;
        }
        spent += r;
        n += 1;
    }
    n
}

fn criterion_11() -> Outcome {
    let traces = fixture_traces();
    let profiles = fixture_client_profiles();
    let costs = carbon_cost_matrix::<f64>(&traces, &profiles, 50).map_err(|e| e.to_string())?;
    // Constant per-round cost: the fixture's first hour, repeated.
    let first: Vec<f64> = costs.rows().iter().map(|r| r[0]).collect();
    let per_round: f64 = first.iter().sum();
    let flat = CarbonCostMatrix::new(first.iter().map(|&g| vec![g; 50]).collect()).unwrap();
    for (mult, expected) in [(0.0, 0), (0.5, 0), (1.0, 1), (2.999, 2), (3.0, 3), (3.5, 3), (7.25, 7), (50.0, 50), (64.0, 50)] {
        let got = no_slack_baseline(&flat, mult * per_round).map_err(|e| e.to_string())?.active_rounds();
        check(got == expected, || format!("{mult} x per-round cost gives {got} rounds, expected {expected}"))?;
    }
    // On the real traces the count follows the cumulative cost.
    let slot_totals: Vec<f64> = (0..50).map(|t| costs.rows().iter().map(|r| r[t]).sum()).collect();
    let reference: f64 = slot_totals.iter().sum();
    let mut counts = Vec::new();
    for pct in [5.73, 9.69, 26.3, 82.0] {
        let k = pct / 100.0 * reference;
        let got = no_slack_baseline(&costs, k).map_err(|e| e.to_string())?.active_rounds();
        let want = counted_rounds(&slot_totals, k);
        check(got == want, || format!("{pct}%: {got} rounds vs {want} counted"))?;
        counts.push(format!("{pct}%->{got}"));
    }
    Ok(format!("floor semantics on 9 constructed budgets; fixture rounds {}", counts.join(", ")))
}

// ---------------------------------------------------------------- 12

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn criterion_12() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = tmp.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"schedule": {"T": 20, "t_sl": 10, "alpha": 0.1, "solver": "greedy"},
            "seeds": [0, 1],
            "fl": {"tau": 2},
            "task": {"synthetic": {"samples_per_class": 60, "test_per_class": 20}},
            "sweep": {"budgets": [{"percent": 5}, {"percent": 25}, {"kg": 3.0}],
                      "s_values": [1, 4, 8], "t_ft_values": [1, 3], "alpha_values": [1.0, 0.1]}}"#,
    )
    .map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for (run, workers) in [("a", "1"), ("b", "4")] {
        let out = tmp.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_carbonfl"))
            .args(["sweep", "--config", spec.to_str().unwrap(), "--out-dir", out.to_str().unwrap()])
            .env("CARBONFL_WORKERS", workers)
            .output()
            .map_err(|e| e.to_string())?;
        check(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())?;
        trees.push(tree(&out));
    }
    check(trees[0].keys().eq(trees[1].keys()), || "file sets differ".into())?;
    for (name, bytes) in &trees[0] {
        check(&trees[1][name] == bytes, || format!("{name} differs"))?;
    }
    let bytes: usize = trees[0].values().map(Vec::len).sum();
    Ok(format!("{} files ({bytes} bytes) identical across two runs with 1 and 4 workers", trees[0].len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 12] = [
        ("slack savings properties", criterion_1, Duration::from_secs(10)),
        ("exact solver vs knapsack DP", criterion_2, Duration::from_secs(30)),
        ("greedy quality", criterion_3, Duration::from_secs(60)),
        ("budget feasibility fuzz", criterion_4, Duration::from_secs(60)),
        ("fairness direction", criterion_5, Duration::from_secs(600)),
        ("U-FedAvg unbiasedness", criterion_6, Duration::from_secs(10)),
        ("gradient check", criterion_7, Duration::from_secs(5)),
        ("correlation machinery", criterion_8, Duration::from_secs(30)),
        ("fine-tuning benefit", criterion_9, Duration::from_secs(300)),
        ("scheduler vs baseline", criterion_10, Duration::from_secs(600)),
        ("baseline round count", criterion_11, Duration::from_secs(600)),
        ("end-to-end determinism", criterion_12, Duration::from_secs(600)),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > *limit => Err(format!("{detail}; took {took:.1?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{took:.2?}]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} [{took:.2?}]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
