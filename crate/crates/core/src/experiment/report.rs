use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{declared_deviations, ExperimentConfig, Task};
use super::runs::RunKey;
use super::ExperimentError;
use crate::label::Channel;
use crate::metrics::mean_std;

/// One long-format result: a metric of one (threshold, fold) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub fold: usize,
    pub threshold: String,
    pub metric: String,
    pub value: f64,
}

impl ResultRow {
    pub fn new(key: RunKey, metric: &str, value: f64) -> Self {
        Self { fold: key.fold, threshold: key.threshold_label(), metric: metric.to_string(), value }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub threshold: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub results: PathBuf,
    pub summary: PathBuf,
    pub table_csv: PathBuf,
    pub table_txt: PathBuf,
    pub plot: PathBuf,
    pub header: PathBuf,
}

fn results_path(out_dir: &Path, task: Task) -> PathBuf {
    out_dir.join(format!("{task}_results.csv"))
}

pub fn write_results(out_dir: &Path, task: Task, rows: &[ResultRow]) -> Result<PathBuf, ExperimentError> {
    fs::create_dir_all(out_dir)?;
    let path = results_path(out_dir, task);
    let mut w = csv::Writer::from_path(&path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(path)
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, ExperimentError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<ResultRow>, _>>()?)
}

fn threshold_order(label: &str) -> (u8, u8) {
    label.parse::<u8>().map_or((1, 0), |v| (0, v))
}

/// Mean and 1-sigma spread across folds for every (threshold, metric).
fn summarize(rows: &[ResultRow]) -> Vec<MetricSummary> {
    let mut groups: BTreeMap<((u8, u8), String, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups.entry((threshold_order(&r.threshold), r.threshold.clone(), r.metric.clone())).or_default().push(r.value);
    }
    groups
        .into_iter()
        .map(|((_, threshold, metric), values)| {
            let (mean, std) = mean_std(&values).expect("groups are nonempty");
            MetricSummary { threshold, metric, mean, std, n: values.len() }
        })
        .collect()
}

fn thresholds_of(summary: &[MetricSummary]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in summary {
        if !out.contains(&s.threshold) {
            out.push(s.threshold.clone());
        }
    }
    out
}

fn lookup<'a>(summary: &'a [MetricSummary], threshold: &str, metric: &str) -> Option<&'a MetricSummary> {
    summary.iter().find(|s| s.threshold == threshold && s.metric == metric)
}

/// Writes the summary CSV, wide table (CSV and text), sweep plot and run
/// header for `task` from its long results file.
pub fn write_report(config: &ExperimentConfig, task: Task) -> Result<ReportFiles, ExperimentError> {
    let out = &config.out_dir;
    let results = results_path(out, task);
    let rows = read_results(&results)?;
    if rows.is_empty() {
        return Err(ExperimentError::Report(format!("{} has no rows", results.display())));
    }
    if let Some(r) = rows.iter().find(|r| !r.value.is_finite()) {
        return Err(ExperimentError::Report(format!("non-finite {} at threshold {} fold {}", r.metric, r.threshold, r.fold)));
    }
    let summary = summarize(&rows);
    let thresholds = thresholds_of(&summary);
    let metrics = task.metrics();

    let summary_path = out.join(format!("{task}_summary.csv"));
    let mut w = csv::Writer::from_path(&summary_path)?;
    for s in &summary {
        w.serialize(s)?;
    }
    w.flush()?;

    let table_csv = out.join(format!("{task}_report.csv"));
    let mut w = csv::Writer::from_path(&table_csv)?;
    let mut header = vec!["threshold"];
    header.extend_from_slice(metrics);
    w.write_record(&header)?;
    for t in &thresholds {
        let mut rec = vec![t.clone()];
        rec.extend(metrics.iter().map(|m| lookup(&summary, t, m).map_or_else(String::new, |s| s.mean.to_string())));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let header_lines = header_block(config, task);
    let mut txt = header_lines.iter().map(|l| format!("# {l}\n")).collect::<String>();
    txt.push('\n');
    txt.push_str(&text_table(&summary, &thresholds, metrics));
    if task == Task::Seg {
        let channels: Vec<String> = Channel::ALL.iter().map(|c| format!("iou.{}", c.name())).collect();
        let names: Vec<&str> = channels.iter().map(String::as_str).collect();
        txt.push_str("\nper-channel IoU\n");
        txt.push_str(&text_table(&summary, &thresholds, &names));
    }
    let table_txt = out.join(format!("{task}_report.txt"));
    fs::write(&table_txt, txt)?;

    let plot = out.join(format!("{task}_sweep.svg"));
    fs::write(&plot, sweep_svg(task, &summary, &thresholds, metrics))?;

    let header = out.join("run.json");
    let meta = serde_json::json!({
        "config_sha256": config.hash(),
        "seed": config.seed,
        "task": task.name(),
        "deviations": declared_deviations(config),
        "config": config,
    });
    fs::write(&header, serde_json::to_string_pretty(&meta).expect("json value serializes") + "\n")?;

    let files = ReportFiles { results, summary: summary_path, table_csv, table_txt, plot, header };
    validate_report(&files, thresholds.len(), metrics.len())?;
    Ok(files)
}

fn header_block(config: &ExperimentConfig, task: Task) -> Vec<String> {
    let mut lines = vec![
        format!("task: {task}"),
        format!("config sha256: {}", config.hash()),
        format!("seed: {}", config.seed),
        "values: mean ± 1-sigma standard deviation across folds (n = fold count)".to_string(),
    ];
    lines.extend(declared_deviations(config).into_iter().map(|d| format!("deviation: {d}")));
    lines
}

fn text_table(summary: &[MetricSummary], thresholds: &[String], metrics: &[&str]) -> String {
    let cell = |t: &str, m: &str| {
        lookup(summary, t, m).map_or_else(|| "-".to_string(), |s| format!("{:.4} ± {:.4} (n={})", s.mean, s.std, s.n))
    };
    let mut widths: Vec<usize> = metrics.iter().map(|m| m.chars().count()).collect();
    for t in thresholds {
        for (i, m) in metrics.iter().enumerate() {
            widths[i] = widths[i].max(cell(t, m).chars().count());
        }
    }
    let mut s = format!("{:<9}", "threshold");
    for (m, w) in metrics.iter().zip(&widths) {
        let _ = write!(s, "  {m:<w$}");
    }
    s.push('\n');
    for t in thresholds {
        let _ = write!(s, "{t:<9}");
        for (m, w) in metrics.iter().zip(&widths) {
            let c = cell(t, m);
            let pad = w.saturating_sub(c.chars().count());
            let _ = write!(s, "  {c}{}", " ".repeat(pad));
        }
        s.push('\n');
    }
    s
}

/// Small-multiple line plots of each metric against the threshold, with
/// 1-sigma error bars.
fn sweep_svg(task: Task, summary: &[MetricSummary], thresholds: &[String], metrics: &[&str]) -> String {
    const PW: f64 = 300.0;
    const PH: f64 = 200.0;
    const M: f64 = 40.0;
    let cols = metrics.len().min(2);
    let rows = metrics.len().div_ceil(2);
    let (w, h) = (cols as f64 * (PW + M) + M, rows as f64 * (PH + M) + M + 20.0);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <text x=\"{M}\" y=\"18\" font-size=\"14\">{task}: metric vs confidence threshold</text>\n"
    );
    let xs: Vec<f64> = thresholds
        .iter()
        .enumerate()
        .map(|(i, t)| t.parse::<f64>().map_or(i as f64 * 100.0 / thresholds.len().max(1) as f64, |v| v))
        .collect();
    for (k, metric) in metrics.iter().enumerate() {
        let ox = M + (k % 2) as f64 * (PW + M);
        let oy = 30.0 + (k / 2) as f64 * (PH + M);
        let pts: Vec<(f64, &MetricSummary)> =
            thresholds.iter().zip(&xs).filter_map(|(t, &x)| lookup(summary, t, metric).map(|s| (x, s))).collect();
        let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, s)| {
            (lo.min(s.mean - s.std), hi.max(s.mean + s.std))
        });
        let (lo, hi) = if pts.is_empty() { (0.0, 1.0) } else if hi - lo < 1e-9 { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
        let px = |x: f64| ox + 10.0 + x / 100.0 * (PW - 20.0);
        let py = |y: f64| oy + PH - 20.0 - (y - lo) / (hi - lo) * (PH - 40.0);
        let _ = writeln!(s, "<rect x=\"{ox}\" y=\"{oy}\" width=\"{PW}\" height=\"{PH}\" fill=\"none\" stroke=\"#999\"/>");
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">{metric}</text>", ox + 6.0, oy + 14.0);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" fill=\"#555\">{hi:.3}</text>", ox + PW - 50.0, oy + 14.0);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" fill=\"#555\">{lo:.3}</text>", ox + PW - 50.0, oy + PH - 24.0);
        for (t, &x) in thresholds.iter().zip(&xs) {
            let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\" fill=\"#555\">{t}</text>", px(x), oy + PH - 5.0);
        }
        let line: Vec<String> = pts.iter().map(|(x, m)| format!("{:.1},{:.1}", px(*x), py(m.mean))).collect();
        let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>", line.join(" "));
        for (x, m) in &pts {
            let (cx, top, bot) = (px(*x), py(m.mean + m.std), py(m.mean - m.std));
            let _ = writeln!(s, "<line x1=\"{cx:.1}\" y1=\"{top:.1}\" x2=\"{cx:.1}\" y2=\"{bot:.1}\" stroke=\"#1f77b4\"/>");
            let _ = writeln!(s, "<circle cx=\"{cx:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"#1f77b4\"/>", py(m.mean));
        }
    }
    s.push_str("</svg>\n");
    s
}

fn validate_report(files: &ReportFiles, thresholds: usize, metrics: usize) -> Result<(), ExperimentError> {
    let mut r = csv::Reader::from_path(&files.table_csv)?;
    let width = r.headers()?.len();
    if width != metrics + 1 {
        return Err(ExperimentError::Report(format!("{} has {width} columns", files.table_csv.display())));
    }
    let records = r.records().collect::<Result<Vec<_>, _>>()?;
    if records.len() != thresholds {
        return Err(ExperimentError::Report(format!("{} has {} rows, expected {thresholds}", files.table_csv.display(), records.len())));
    }
    for rec in &records {
        for cell in rec.iter().skip(1).filter(|c| !c.is_empty()) {
            if !cell.parse::<f64>().is_ok_and(f64::is_finite) {
                return Err(ExperimentError::Report(format!("bad cell {cell:?} in {}", files.table_csv.display())));
            }
        }
    }
    let svg = fs::read_to_string(&files.plot)?;
    if !svg.starts_with("<svg") || !svg.trim_end().ends_with("</svg>") {
        return Err(ExperimentError::Report("malformed sweep plot".into()));
    }
    Ok(())
}
