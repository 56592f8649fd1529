use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::run::RunLog;
use crate::bridge::{save_selection_csv, usage_summary, UsageBucket};
use crate::error::{Error, Result};

pub const SCORE_CSV_HEADER: &str = "env_step,normalized_score";
pub const AGGREGATE_CSV_HEADER: &str = "label,env_step,mean,std,runs";
pub const USAGE_CSV_HEADER: &str = "start_step,steps,offline_fraction";

pub fn score_csv(log: &RunLog) -> String {
    let mut s = format!("{SCORE_CSV_HEADER}\n");
    for r in &log.records {
        writeln!(s, "{},{}", r.env_step, r.normalized_score).expect("string write");
    }
    s
}

pub fn parse_score_csv(text: &str) -> Result<Vec<(u64, f64)>> {
    let mut lines = text.lines();
    if lines.next() != Some(SCORE_CSV_HEADER) {
        return Err(Error::Data("score csv header mismatch".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let bad = || Error::Data(format!("bad score csv line '{l}'"));
            let (step, score) = l.split_once(',').ok_or_else(bad)?;
            Ok((step.parse().map_err(|_| bad())?, score.parse().map_err(|_| bad())?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatePoint {
    pub env_step: u64,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

/// Curves per label. Scores are first averaged across tasks within a seed,
/// then mean and population std are taken across seeds. Every log of a label
/// must share the same evaluation steps.
pub fn aggregate(logs: &[RunLog]) -> Result<BTreeMap<String, Vec<AggregatePoint>>> {
    let mut by_label: BTreeMap<&str, BTreeMap<u64, Vec<&RunLog>>> = BTreeMap::new();
    for log in logs {
        by_label.entry(&log.label).or_default().entry(log.seed).or_default().push(log);
    }
    let mut out = BTreeMap::new();
    for (label, seeds) in by_label {
        let steps: Vec<u64> = seeds.values().next().expect("nonempty")[0].records.iter().map(|r| r.env_step).collect();
        let mut per_seed: Vec<Vec<f64>> = Vec::new();
        for runs in seeds.values() {
            let mut curve = vec![0.0; steps.len()];
            for run in runs {
                let run_steps: Vec<u64> = run.records.iter().map(|r| r.env_step).collect();
                if run_steps != steps {
                    return Err(Error::InvalidArgument(format!(
                        "runs of '{label}' evaluate at different steps ({} vs seed {} on {})",
                        steps.len(),
                        run.seed,
                        run.env_id
                    )));
                }
                for (c, r) in curve.iter_mut().zip(&run.records) {
                    *c += r.normalized_score;
                }
            }
            curve.iter_mut().for_each(|c| *c /= runs.len() as f64);
            per_seed.push(curve);
        }
        let n = per_seed.len() as f64;
        let points = steps
            .iter()
            .enumerate()
            .map(|(i, &env_step)| {
                let mean = per_seed.iter().map(|c| c[i]).sum::<f64>() / n;
                let var = per_seed.iter().map(|c| (c[i] - mean).powi(2)).sum::<f64>() / n;
                AggregatePoint {
                    env_step,
                    mean,
                    std: var.sqrt(),
                    runs: per_seed.len(),
                }
            })
            .collect();
        out.insert(label.to_string(), points);
    }
    Ok(out)
}

pub fn aggregate_csv(agg: &BTreeMap<String, Vec<AggregatePoint>>) -> String {
    let mut s = format!("{AGGREGATE_CSV_HEADER}\n");
    for (label, points) in agg {
        for p in points {
            writeln!(s, "{label},{},{},{},{}", p.env_step, p.mean, p.std, p.runs).expect("string write");
        }
    }
    s
}

pub fn usage_csv(buckets: &[UsageBucket]) -> String {
    let mut s = format!("{USAGE_CSV_HEADER}\n");
    for b in buckets {
        writeln!(s, "{},{},{}", b.start_step, b.steps, b.offline_fraction).expect("string write");
    }
    s
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Plain SVG line chart with axes, ticks at the data extremes and a legend.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 60.0, 150.0, 40.0, 50.0);
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{left} {top} V{} H{}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    );
    for (v, x) in [(x0, sx(x0)), (x1, sx(x1))] {
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{v}</text>"#, top + ph + 16.0);
    }
    for (v, y) in [(y0, sy(y0)), (y1, sy(y1))] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.1}</text>"#, left - 6.0, y + 4.0, v);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, series) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let d: Vec<String> = series
            .points
            .iter()
            .enumerate()
            .map(|(j, &(x, y))| format!("{}{:.2} {:.2}", if j == 0 { 'M' } else { 'L' }, sx(x), sy(y)))
            .collect();
        let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.join(" "));
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 24.0, ly + 4.0, escape(&series.name));
    }
    s.push_str("</svg>\n");
    s
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf> {
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn run_stem(log: &RunLog) -> String {
    format!("{}_{}_seed{}", log.label, log.env_id, log.seed)
}

/// Writes per-run score CSVs and JSON logs, selection and usage CSVs, the
/// aggregate CSV, and SVG charts into `out_dir`. Returns the written paths.
pub fn emit_outputs(logs: &[RunLog], out_dir: &Path, usage_bucket: u64) -> Result<Vec<PathBuf>> {
    if logs.is_empty() {
        return Err(Error::InvalidArgument("no run logs to emit".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut usage_series = Vec::new();
    for log in logs {
        let stem = run_stem(log);
        written.push(write(out_dir.join(format!("{stem}.csv")), &score_csv(log))?);
        written.push(write(out_dir.join(format!("{stem}.json")), &log.to_json())?);
        if !log.selection_log.is_empty() {
            let path = out_dir.join(format!("{stem}_selection.csv"));
            save_selection_csv(&log.selection_log, &path)?;
            written.push(path);
            let buckets = usage_summary(&log.selection_log, usage_bucket)?;
            written.push(write(out_dir.join(format!("{stem}_usage.csv")), &usage_csv(&buckets))?);
            usage_series.push(Series {
                name: stem,
                points: buckets.iter().map(|b| (b.start_step as f64, b.offline_fraction)).collect(),
            });
        }
    }
    let agg = aggregate(logs)?;
    written.push(write(out_dir.join("aggregate.csv"), &aggregate_csv(&agg))?);
    let series: Vec<Series> = agg
        .iter()
        .map(|(label, pts)| Series {
            name: label.clone(),
            points: pts.iter().map(|p| (p.env_step as f64, p.mean)).collect(),
        })
        .collect();
    written.push(write(
        out_dir.join("aggregate.svg"),
        &line_chart_svg("Normalized score", "env steps", "normalized score", &series),
    )?);
    if !usage_series.is_empty() {
        written.push(write(
            out_dir.join("usage.svg"),
            &line_chart_svg("Offline policy usage", "env steps", "fraction from offline policy", &usage_series),
        )?);
    }
    Ok(written)
}

/// Reads every `*.json` run log in `dir`, sorted by file name.
pub fn load_run_logs(dir: &Path) -> Result<Vec<RunLog>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            RunLog::from_json(&text).map_err(|e| Error::Data(format!("{}: {e}", p.display())))
        })
        .collect()
}
