//! Renders SVG figures from the CSV files the other commands leave in an output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use carbonfl_core::scheduler::parse_schedule_csv;

use crate::commands::{csv_files, write_file};
use crate::error::{CliError, ErrorKind, Result};
use crate::svg;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::new(ErrorKind::Io, format!("cannot read {}: {e}", path.display())))
}

/// Parses `key=value;key=value` report parameters.
fn params(s: &str) -> BTreeMap<&str, &str> {
    s.split(';').filter_map(|kv| kv.split_once('=')).collect()
}

fn number<T: std::str::FromStr>(s: &str, path: &Path) -> Result<T> {
    s.parse()
        .map_err(|_| CliError::data(format!("{}: cannot parse `{s}`", path.display())))
}

/// (series id, t_sl) -> value for one metric of a `metric,param,value` report.
fn slack_series(text: &str, path: &Path, metric: &str, key: &str) -> Result<BTreeMap<(usize, usize), f64>> {
    let mut out = BTreeMap::new();
    for line in text.lines().skip(1) {
        let mut f = line.splitn(3, ',');
        let (Some(m), Some(p), Some(v)) = (f.next(), f.next(), f.next()) else {
            return Err(CliError::data(format!("{}: malformed line `{line}`", path.display())));
        };
        if m != metric {
            continue;
        }
        let p = params(p);
        let (Some(id), Some(t)) = (p.get(key), p.get("t_sl")) else {
            return Err(CliError::data(format!("{}: missing {key} or t_sl in `{line}`", path.display())));
        };
        out.insert((number(id, path)?, number(t, path)?), number(v, path)?);
    }
    Ok(out)
}

fn slack_figures(dir: &Path, written: &mut Vec<String>) -> Result<()> {
    let path = dir.join("slack_report.csv");
    let text = read(&path)?;

    let clients = slack_series(&text, &path, "mean_savings_client", "client")?;
    let ids: Vec<usize> = clients.keys().map(|k| k.0).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let t_sl: Vec<usize> = clients.keys().map(|k| k.1).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    if let Some(&last) = t_sl.last() {
        // Rows by savings at the largest slack, highest first.
        let mut order = ids.clone();
        order.sort_by(|a, b| {
            let va = clients.get(&(*a, last)).copied().unwrap_or(f64::NEG_INFINITY);
            let vb = clients.get(&(*b, last)).copied().unwrap_or(f64::NEG_INFINITY);
            vb.total_cmp(&va).then(a.cmp(b))
        });
        let values: Vec<Vec<f64>> = order
            .iter()
            .map(|&c| t_sl.iter().map(|&t| clients.get(&(c, t)).copied().unwrap_or(f64::NAN)).collect())
            .collect();
        let rows: Vec<String> = order.iter().map(|c| format!("client {c}")).collect();
        let cols: Vec<String> = t_sl.iter().map(|t| t.to_string()).collect();
        write_file(dir, "slack_heatmap.svg", &svg::heatmap("Savings by client and slack", &rows, &cols, &values))?;
        written.push("slack_heatmap.svg".into());
    }

    let per_n = slack_series(&text, &path, "mean_savings_n", "n")?;
    let mut series: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for (&(n, t), &v) in &per_n {
        series.entry(n).or_default().push((t as f64, v));
    }
    if !series.is_empty() {
        let series: Vec<(String, Vec<(f64, f64)>)> = series.into_iter().map(|(n, p)| (format!("N={n}"), p)).collect();
        write_file(dir, "slack_selection.svg", &svg::line_chart("Savings with client selection", "slack (h)", "savings", &series))?;
        written.push("slack_selection.svg".into());
    }
    Ok(())
}

fn training_figure(dir: &Path, files: &[std::path::PathBuf], written: &mut Vec<String>) -> Result<()> {
    let mut series = Vec::new();
    for path in files {
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").trim_start_matches("training_").to_string();
        let text = read(path)?;
        let mut points = Vec::new();
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(CliError::data(format!("{}: malformed line `{line}`", path.display())));
            }
            points.push((number::<f64>(f[0], path)?, number::<f64>(f[3], path)?));
        }
        series.push((name, points));
    }
    write_file(dir, "accuracy.svg", &svg::line_chart("Test accuracy", "round", "accuracy", &series))?;
    written.push("accuracy.svg".into());
    Ok(())
}

fn schedule_figure(dir: &Path, written: &mut Vec<String>) -> Result<()> {
    let path = dir.join("schedule.csv");
    let parsed = parse_schedule_csv(&read(&path)?).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let rows: Vec<String> = (1..=parsed.a.len()).map(|c| format!("client {c}")).collect();
    let horizon = parsed.a.first().map_or(0, Vec::len);
    let cols: Vec<String> = (1..=horizon).map(|t| t.to_string()).collect();
    let values: Vec<Vec<f64>> = parsed.a.iter().map(|r| r.iter().map(|&x| f64::from(u8::from(x))).collect()).collect();
    write_file(dir, "schedule.svg", &svg::heatmap("Selected client slots", &rows, &cols, &values))?;
    written.push("schedule.svg".into());
    Ok(())
}

/// Writes every figure the directory has data for and returns their names.
pub fn report(dir: &Path) -> Result<Vec<String>> {
    if !dir.is_dir() {
        return Err(CliError::new(ErrorKind::Io, format!("file not found: {}", dir.display())));
    }
    let mut written = Vec::new();
    if dir.join("slack_report.csv").is_file() {
        slack_figures(dir, &mut written)?;
    }
    let training = csv_files(dir, "training_seed")?;
    if !training.is_empty() {
        training_figure(dir, &training, &mut written)?;
    }
    if dir.join("schedule.csv").is_file() {
        schedule_figure(dir, &mut written)?;
    }
    if written.is_empty() {
        return Err(CliError::data(format!("nothing to report in {}", dir.display())));
    }
    Ok(written)
}
