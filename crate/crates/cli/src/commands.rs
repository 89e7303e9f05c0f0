use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use carbonfl_core::fl_sim::load_idx;
use carbonfl_core::metrics::FrequencyHorizon;
use carbonfl_core::scheduler::{apply_finetune_window, solve_for_end_time};
use carbonfl_core::slack::sample_offsets;
use carbonfl_core::{
    estimate_correlation, mc_generate_schedule, no_slack_baseline, run_training, savings_multi, savings_single,
    selection_stats, solve_with_finetuning, sweep_slack, ClientProfile, CostMatrix, FinetuneWindow, FlConfig, Schedule,
    ScheduleMatrix, Task,
};
use rayon::prelude::*;

use crate::error::{CliError, ErrorKind, Result};
use crate::spec::{Budget, ExperimentSpec, ScheduleSource, ScheduleSpec};

pub(crate) fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::new(ErrorKind::Io, format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents)
        .map_err(|e| CliError::new(ErrorKind::Io, format!("cannot write {}: {e}", path.display())))
}

fn echo_config(spec: &ExperimentSpec, dir: &Path) -> Result<()> {
    write_file(dir, "config.json", &spec.to_json())
}

fn ids(profiles: &[ClientProfile], members: &[usize]) -> String {
    members.iter().map(|&c| profiles[c].client_id.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn analyze_slack(spec: &ExperimentSpec) -> Result<()> {
    let slack = &spec.slack;
    let mut t_sl_values = slack.t_sl.clone();
    t_sl_values.sort_unstable();
    t_sl_values.dedup();
    let Some(&max_t_sl) = t_sl_values.last() else {
        return Err(CliError::config("slack.t_sl is empty"));
    };
    let needed = slack.rounds + max_t_sl;
    let (hours, offsets) = if slack.offsets == 0 {
        (needed, vec![0])
    } else {
        let available = spec.available_hours()?;
        if available < needed {
            return Err(CliError::data(format!("{needed} hours needed but only {available} available")));
        }
        let seed = spec.seeds.first().copied().unwrap_or(0);
        (available, sample_offsets(available - needed + 1, slack.offsets, seed)?)
    };
    let (profiles, costs) = spec.load_costs(hours)?;
    let first = costs.window(0, needed)?;
    let out = spec.out_dir();

    let mut clients = String::from("client,region,t_sl,baseline_kg,optimized_kg,savings,chosen_slots\n");
    let mut selection = String::from("n,t_sl,fixed_kg,slack_kg,savings,fixed_set,slack_set\n");
    let mut report = String::from("metric,param,value\n");
    for &t_sl in &t_sl_values {
        for (c, p) in profiles.iter().enumerate() {
            let r = savings_single(&first.rows()[c], p.client_id, slack.rounds, t_sl)?;
            let slots: Vec<String> = r.chosen_slots.iter().map(|t| (t + 1).to_string()).collect();
            let _ = writeln!(
                clients,
                "{},{},{},{},{},{},{}",
                p.client_id,
                p.region,
                t_sl,
                r.baseline_kg,
                r.optimized_kg,
                r.savings_fraction,
                slots.join(" ")
            );
            let _ = writeln!(report, "savings_single,client={};t_sl={t_sl},{}", p.client_id, r.savings_fraction);
        }
        for n in 1..=profiles.len() {
            let r = savings_multi(&first, n, slack.rounds, t_sl)?;
            let _ = writeln!(
                selection,
                "{n},{t_sl},{},{},{},{},{}",
                r.fixed_kg,
                r.slack_kg,
                r.savings_fraction,
                ids(&profiles, &r.fixed_set),
                ids(&profiles, &r.slack_set)
            );
            let _ = writeln!(report, "savings_multi,n={n};t_sl={t_sl},{}", r.savings_fraction);
        }
    }
    let sweep = sweep_slack(&costs, slack.rounds, &t_sl_values, &offsets)?;
    for point in &sweep.points {
        for (c, v) in point.per_client.iter().enumerate() {
            let _ = writeln!(report, "mean_savings_client,client={};t_sl={},{v}", profiles[c].client_id, point.t_sl);
        }
        for (i, v) in point.per_n.iter().enumerate() {
            let _ = writeln!(report, "mean_savings_n,n={};t_sl={},{v}", i + 1, point.t_sl);
        }
    }
    let _ = writeln!(report, "offsets,count,{}", offsets.len());

    echo_config(spec, &out)?;
    write_file(&out, "slack_clients.csv", &clients)?;
    write_file(&out, "slack_selection.csv", &selection)?;
    write_file(&out, "slack_report.csv", &report)?;
    println!("analyze-slack: {} clients, {} slack values -> {}", profiles.len(), t_sl_values.len(), out.display());
    Ok(())
}

/// Carbon-aware schedule for `costs` spanning `T + t_sl` slots.
pub fn plan_schedule(sc: &ScheduleSpec, costs: &CostMatrix, budget_kg: f64) -> Result<Schedule> {
    let config = sc.to_config(budget_kg);
    Ok(match sc.s {
        Some(s) => solve_for_end_time(costs, &config, s)?,
        None => solve_with_finetuning(costs, &config)?,
    })
}

fn or_undefined(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| v.to_string())
}

/// `stat,client,value` summary of a schedule; client-level rows carry the client id.
pub fn stats_csv(schedule: &Schedule, costs: &CostMatrix, profiles: &[ClientProfile], budget_kg: f64, reference_kg: f64) -> String {
    let mut out = String::from("stat,client,value\n");
    let _ = writeln!(out, "budget_kg,,{budget_kg}");
    let _ = writeln!(out, "reference_kg,,{reference_kg}");
    let _ = writeln!(out, "total_kg,,{}", schedule.total_kg);
    let _ = writeln!(out, "objective,,{}", schedule.objective);
    let _ = writeln!(out, "s,,{}", schedule.s().map_or(String::new(), |s| s.to_string()));
    let _ = writeln!(out, "executed_rounds,,{}", schedule.active_rounds());
    let _ = writeln!(out, "selected_slots,,{}", schedule.selected_count());
    let slots = schedule.slots_per_client();
    let kg = schedule.allocated_kg(costs);
    let stats = selection_stats(schedule, FrequencyHorizon::PreFinetune).ok();
    for (c, p) in profiles.iter().enumerate() {
        let _ = writeln!(out, "slots,{},{}", p.client_id, slots[c]);
        let _ = writeln!(out, "allocated_kg,{},{}", p.client_id, kg[c]);
        let _ = writeln!(out, "pi,{},{}", p.client_id, or_undefined(stats.as_ref().map(|s| s.pi[c])));
    }
    let _ = writeln!(out, "rho_h,,{}", or_undefined(stats.as_ref().and_then(|s| s.rho_h)));
    let _ = writeln!(out, "tv,,{}", or_undefined(stats.as_ref().map(|s| s.tv)));
    let corr = estimate_correlation(schedule.rows()).ok();
    let _ = writeln!(out, "rho_t,,{}", or_undefined(corr.as_ref().map(|e| e.rho_t)));
    let _ = writeln!(out, "rho_ts,,{}", or_undefined(corr.as_ref().map(|e| e.rho_ts)));
    out
}

pub fn schedule(spec: &ExperimentSpec) -> Result<()> {
    let sc = &spec.schedule;
    let (profiles, costs) = spec.load_costs(sc.horizon())?;
    let reference = spec.reference_kg(&costs);
    let budget_kg = sc.budget()?.resolve(reference);
    let schedule = plan_schedule(sc, &costs, budget_kg)?;
    let out = spec.out_dir();
    echo_config(spec, &out)?;
    write_file(&out, "schedule.csv", &schedule.to_csv())?;
    write_file(&out, "schedule_stats.csv", &stats_csv(&schedule, &costs, &profiles, budget_kg, reference))?;
    println!(
        "schedule: {} selected slots, {} kg of {budget_kg} kg -> {}",
        schedule.selected_count(),
        schedule.total_kg,
        out.display()
    );
    Ok(())
}

/// Per-seed results of one simulated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub executed_rounds: Vec<usize>,
    pub total_kg: Vec<f64>,
    pub acc: Vec<f64>,
    pub loss: Vec<f64>,
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; 0 for a single value.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn build_task(spec: &ExperimentSpec, clients: usize, fl: &FlConfig) -> Result<Task> {
    match &spec.task.idx {
        Some(idx) => {
            let train = load_idx(&idx.train_images, &idx.train_labels)?;
            let test = load_idx(&idx.test_images, &idx.test_labels)?;
            Ok(Task::from_data(&train, test, clients, fl.architecture, fl.dirichlet_beta, fl.seed)?)
        }
        None => Ok(Task::synthetic(&spec.task.synthetic, clients, fl)?),
    }
}

enum Plan {
    Fixed(Schedule),
    Generated(carbonfl_core::ParticipationChain, Option<FinetuneWindow>),
}

/// Builds the schedule(s) named by `spec` and trains on them for every seed, writing
/// `schedule*.csv`, `training_seed<n>.csv` and `summary.csv` into `dir`. `costs` must span at
/// least `T + t_sl` slots.
pub fn simulate_into(spec: &ExperimentSpec, costs: &CostMatrix, dir: &Path) -> Result<CellOutcome> {
    spec.check_seeds()?;
    let sc = &spec.schedule;
    let k = costs.clients();
    let (costs, plan) = match spec.simulate.source {
        ScheduleSource::Optimize => {
            let costs = costs.window(0, sc.horizon())?;
            let budget_kg = sc.budget()?.resolve(spec.reference_kg(&costs));
            let schedule = plan_schedule(sc, &costs, budget_kg)?;
            (costs, Plan::Fixed(schedule))
        }
        ScheduleSource::Baseline => {
            let costs = costs.window(0, sc.rounds)?;
            let budget_kg = sc.budget()?.resolve(spec.reference_kg(&costs));
            let schedule = no_slack_baseline(&costs, budget_kg)?;
            (costs, Plan::Fixed(schedule))
        }
        ScheduleSource::Generated => {
            let chain = spec
                .simulate
                .chain
                .as_ref()
                .ok_or_else(|| CliError::config("simulate.source = generated needs simulate.chain"))?
                .chain()?;
            if chain.clients() != k {
                return Err(CliError::config(format!("chain has {} clients, expected {k}", chain.clients())));
            }
            let window = if sc.t_ft > 0 {
                let s = sc.s.unwrap_or(sc.t_sl);
                if s == 0 || s > sc.t_sl || sc.t_ft > sc.rounds + s {
                    return Err(CliError::config(format!("no fine-tuning window of {} ending at s = {s}", sc.t_ft)));
                }
                Some(FinetuneWindow::new(sc.rounds, sc.t_ft, s))
            } else {
                None
            };
            (costs.window(0, sc.horizon())?, Plan::Generated(chain, window))
        }
    };
    if let Plan::Fixed(schedule) = &plan {
        write_file(dir, "schedule.csv", &schedule.to_csv())?;
    }

    let mut outcome = CellOutcome {
        executed_rounds: Vec::new(),
        total_kg: Vec::new(),
        acc: Vec::new(),
        loss: Vec::new(),
    };
    let mut summary = String::from("seed,executed_rounds,total_kg,final_acc,final_loss\n");
    for &seed in &spec.seeds {
        let generated;
        let schedule = match &plan {
            Plan::Fixed(s) => s,
            Plan::Generated(chain, window) => {
                let mut rows = mc_generate_schedule(chain, sc.horizon(), seed)?;
                if let Some(w) = window {
                    apply_finetune_window(&mut rows, w);
                }
                generated = ScheduleMatrix::new(rows, &costs, sc.alpha, window.clone())?;
                write_file(dir, &format!("schedule_seed{seed}.csv"), &generated.to_csv())?;
                &generated
            }
        };
        let fl = FlConfig {
            seed,
            ..spec.fl.clone()
        };
        let task = build_task(spec, k, &fl)?;
        let run = run_training(&task, schedule, &costs, &fl)?;
        write_file(dir, &format!("training_seed{seed}.csv"), &run.to_csv())?;
        let rounds = schedule.active_rounds();
        let _ = writeln!(
            summary,
            "{seed},{rounds},{},{:.6},{:.6}",
            run.total_kg(),
            run.final_accuracy(),
            run.final_loss()
        );
        outcome.executed_rounds.push(rounds);
        outcome.total_kg.push(run.total_kg());
        outcome.acc.push(run.final_accuracy());
        outcome.loss.push(run.final_loss());
    }
    write_file(dir, "summary.csv", &summary)?;
    Ok(outcome)
}

pub fn simulate(spec: &ExperimentSpec) -> Result<()> {
    let (_, costs) = spec.load_costs(spec.schedule.horizon())?;
    let out = spec.out_dir();
    let outcome = simulate_into(spec, &costs, &out)?;
    echo_config(spec, &out)?;
    println!(
        "simulate: mean final accuracy {:.4} over {} seeds -> {}",
        mean(&outcome.acc),
        outcome.acc.len(),
        out.display()
    );
    Ok(())
}

/// One grid point of a sweep.
#[derive(Debug, Clone)]
struct Cell {
    name: String,
    budget: usize,
    alpha: Option<usize>,
    t_ft: Option<usize>,
    s: Option<usize>,
    spec: ExperimentSpec,
}

enum CellStatus {
    Done(CellOutcome),
    Infeasible,
    Failed(CliError),
}

fn check_unique<T: PartialEq + std::fmt::Debug>(axis: &str, values: &[T]) -> Result<()> {
    for (i, v) in values.iter().enumerate() {
        if values[..i].contains(v) {
            return Err(CliError::config(format!("sweep axis {axis} repeats {v:?}")));
        }
    }
    Ok(())
}

/// Runs the budget × α × t_ft × s grid plus one no-slack baseline per budget.
pub fn sweep(spec: &ExperimentSpec) -> Result<()> {
    spec.check_seeds()?;
    let sc = &spec.schedule;
    let axes = &spec.sweep;
    let budgets = if axes.budgets.is_empty() { vec![sc.budget()?] } else { axes.budgets.clone() };
    let alphas = if axes.alpha_values.is_empty() { vec![sc.alpha] } else { axes.alpha_values.clone() };
    let t_fts = if axes.t_ft_values.is_empty() { vec![sc.t_ft] } else { axes.t_ft_values.clone() };
    let s_values = if axes.s_values.is_empty() { vec![sc.s.unwrap_or(sc.t_sl)] } else { axes.s_values.clone() };
    check_unique("budgets", &budgets)?;
    check_unique("alpha_values", &alphas)?;
    check_unique("t_ft_values", &t_fts)?;
    check_unique("s_values", &s_values)?;
    if let Some(&t) = t_fts.iter().find(|&&t| t == 0) {
        return Err(CliError::config(format!("sweep t_ft values must be at least 1, got {t}")));
    }
    if let Some(&s) = s_values.iter().find(|&&s| s == 0 || s > sc.t_sl) {
        return Err(CliError::config(format!("sweep s value {s} outside 1..={}", sc.t_sl)));
    }

    let (_, costs) = spec.load_costs(sc.horizon())?;
    let reference = spec.reference_kg(&costs);
    let budget_kg: Vec<f64> = budgets.iter().map(|b| b.resolve(reference)).collect();

    let mut cells = Vec::new();
    for (bi, &kg) in budget_kg.iter().enumerate() {
        let mut base = spec.clone();
        base.schedule.set_budget(Budget::Kg(kg));
        let mut baseline = base.clone();
        baseline.simulate.source = ScheduleSource::Baseline;
        cells.push(Cell {
            name: format!("k{bi}_baseline"),
            budget: bi,
            alpha: None,
            t_ft: None,
            s: None,
            spec: baseline,
        });
        for (ai, &alpha) in alphas.iter().enumerate() {
            for &t_ft in &t_fts {
                for &s in &s_values {
                    let mut cell = base.clone();
                    cell.simulate.source = ScheduleSource::Optimize;
                    cell.schedule.alpha = alpha;
                    cell.schedule.t_ft = t_ft;
                    cell.schedule.s = Some(s);
                    cells.push(Cell {
                        name: format!("k{bi}_a{ai}_ft{t_ft}_s{s}"),
                        budget: bi,
                        alpha: Some(ai),
                        t_ft: Some(t_ft),
                        s: Some(s),
                        spec: cell,
                    });
                }
            }
        }
    }

    let out = spec.out_dir();
    let cell_root = out.join("cells");
    let statuses: Vec<CellStatus> = cells
        .par_iter()
        .map(|cell| {
            let dir = cell_root.join(&cell.name);
            match simulate_into(&cell.spec, &costs, &dir) {
                Ok(o) => CellStatus::Done(o),
                Err(e) if e.kind == ErrorKind::Infeasible => CellStatus::Infeasible,
                Err(e) => {
                    let _ = write_file(&dir, "error.txt", &format!("{}: {}\n", e.kind.tag(), e.message));
                    CellStatus::Failed(e)
                }
            }
        })
        .collect();

    let pct = |bi: usize| if reference > 0.0 { budget_kg[bi] / reference * 100.0 } else { f64::NAN };
    let mut summary = String::from(
        "cell,budget_kg,budget_pct,alpha,t_ft,s,status,executed_rounds,total_kg,mean_acc,std_acc,mean_loss\n",
    );
    let (mut failed, mut infeasible) = (0, 0);
    for (cell, status) in cells.iter().zip(&statuses) {
        let opt = |v: Option<usize>| v.map_or(String::new(), |v| v.to_string());
        let alpha = cell.alpha.map_or(String::new(), |ai| alphas[ai].to_string());
        let _ = write!(
            summary,
            "{},{},{:.2},{alpha},{},{},",
            cell.name,
            budget_kg[cell.budget],
            pct(cell.budget),
            opt(cell.t_ft),
            opt(cell.s)
        );
        let _ = match status {
            CellStatus::Done(o) => writeln!(
                summary,
                "ok,{},{},{:.6},{:.6},{:.6}",
                o.executed_rounds[0],
                mean(&o.total_kg),
                mean(&o.acc),
                std_dev(&o.acc),
                mean(&o.loss)
            ),
            CellStatus::Infeasible => {
                infeasible += 1;
                writeln!(summary, "infeasible,---,---,---,---,---")
            }
            CellStatus::Failed(e) => {
                failed += 1;
                writeln!(summary, "error:{},,,,,", e.kind.tag())
            }
        };
    }
    write_file(&out, "summary.csv", &summary)?;

    let lookup = |name: &str| cells.iter().position(|c| c.name == name).map(|i| &statuses[i]);
    for (ai, _) in alphas.iter().enumerate() {
        for &t_ft in &t_fts {
            let mut table = String::from("budget_kg,budget_pct,baseline_rounds,baseline_acc");
            for s in &s_values {
                let _ = write!(table, ",s={s}");
            }
            table.push('\n');
            for bi in 0..budgets.len() {
                let _ = write!(table, "{},{:.2}", budget_kg[bi], pct(bi));
                match lookup(&format!("k{bi}_baseline")) {
                    Some(CellStatus::Done(o)) => {
                        let _ = write!(table, ",{},{:.4}", o.executed_rounds[0], mean(&o.acc));
                    }
                    _ => table.push_str(",error,error"),
                }
                for s in &s_values {
                    let cell = match lookup(&format!("k{bi}_a{ai}_ft{t_ft}_s{s}")) {
                        Some(CellStatus::Done(o)) => format!("{:.4}", mean(&o.acc)),
                        Some(CellStatus::Infeasible) => "---".to_string(),
                        _ => "error".to_string(),
                    };
                    let _ = write!(table, ",{cell}");
                }
                table.push('\n');
            }
            write_file(&out, &format!("table_a{ai}_ft{t_ft}.csv"), &table)?;
        }
    }
    echo_config(spec, &out)?;
    if failed > 0 {
        eprintln!("warning: {failed} sweep cells failed; see cells/*/error.txt");
    }
    println!(
        "sweep: {} cells ({infeasible} infeasible, {failed} failed) -> {}",
        cells.len(),
        out.display()
    );
    Ok(())
}

/// Files under `dir` whose names start with `prefix` and end with `.csv`, sorted.
pub(crate) fn csv_files(dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) => return Err(CliError::new(ErrorKind::Io, format!("cannot read {}: {e}", dir.display()))),
    };
    for entry in entries {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with(prefix) && name.ends_with(".csv") {
            found.push(path);
        }
    }
    found.sort();
    Ok(found)
}
