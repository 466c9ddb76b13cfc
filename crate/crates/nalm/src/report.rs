//! Rendering of aggregated benchmark results: one CSV table per operation
//! (with a JSON mirror) and grouped bar charts with confidence whiskers as
//! self-contained SVG.

use crate::error::{NalmError, Result};
use crate::metrics::{solved_at_ci, sparsity_ci, success_rate_ci, MetricKind, MetricSummary};
use crate::train::RunRecord;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// (module id, task id, interpolation-range label), used for grouping.
type CellKey = (String, String, String);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub module: String,
    pub task: String,
    pub range: String,
    pub extrap_range: String,
    pub n_runs: usize,
    pub threshold: f64,
    pub success: MetricSummary,
    pub solved_at: Option<MetricSummary>,
    pub sparsity: Option<MetricSummary>,
}

/// Everything needed to render the benchmark outputs. Cells are kept sorted
/// by (task, module, range), one entry per configured combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub label: String,
    pub generated_at: String,
    pub config_hash: String,
    pub cells: Vec<CellSummary>,
}

/// Groups records by (module, task, range) and summarizes each cell.
pub fn aggregate(records: &[RunRecord], label: &str, config_hash: &str, generated_at: &str) -> Result<ReportBundle> {
    let mut groups: BTreeMap<CellKey, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        let key = (r.task.clone(), r.module.id().to_string(), r.interp_label.clone());
        groups.entry(key).or_default().push(r);
    }
    let mut cells = Vec::new();
    for ((task, module, range), runs) in groups {
        let mut owned: Vec<RunRecord> = runs.iter().map(|r| (*r).clone()).collect();
        owned.sort_by_key(|r| r.seed);
        cells.push(CellSummary {
            module,
            task,
            range,
            extrap_range: owned[0].extrap_label.clone(),
            n_runs: owned.len(),
            threshold: owned[0].threshold,
            success: success_rate_ci(&owned)?,
            solved_at: solved_at_ci(&owned),
            sparsity: sparsity_ci(&owned),
        });
    }
    Ok(ReportBundle {
        label: label.to_string(),
        generated_at: generated_at.to_string(),
        config_hash: config_hash.to_string(),
        cells,
    })
}

impl ReportBundle {
    pub fn tasks(&self) -> Vec<String> {
        let mut tasks: Vec<String> = self.cells.iter().map(|c| c.task.clone()).collect();
        tasks.sort();
        tasks.dedup();
        tasks
    }

    pub fn modules(&self) -> Vec<String> {
        let mut out: Vec<String> = self.cells.iter().map(|c| c.module.clone()).collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn ranges(&self) -> Vec<String> {
        let mut out: Vec<String> = self.cells.iter().map(|c| c.range.clone()).collect();
        out.sort_by(|a, b| range_sort_key(a).partial_cmp(&range_sort_key(b)).unwrap_or(std::cmp::Ordering::Equal));
        out.dedup();
        out
    }
}

fn range_sort_key(label: &str) -> f64 {
    // Sort ranges by their lower bound; labels look like U[lo,hi) or U[[..],..].
    let inner = label.trim_start_matches('U').trim_start_matches('[').trim_start_matches('[');
    inner.split(',').next().and_then(|v| v.parse::<f64>().ok()).unwrap_or(f64::MAX)
}

/// Missing-value cell, as the benchmark tables print it.
const ABSENT: &str = "---";

fn num(v: f64) -> String {
    format!("{v:.9e}")
}

/// Quotes a field when it contains the delimiter (range labels do).
fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Splits one CSV line honoring double-quoted fields.
fn csv_split(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut in_quotes = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if in_quotes && chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            '"' => in_quotes = !in_quotes,
            ',' if !in_quotes => fields.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    fields.push(cur);
    fields
}

fn metric_cells(m: &Option<MetricSummary>) -> [String; 3] {
    match m {
        Some(s) => [num(s.estimate), num(s.ci_low), num(s.ci_high)],
        None => [ABSENT.into(), ABSENT.into(), ABSENT.into()],
    }
}

/// Writes one CSV per task plus a JSON mirror of the whole bundle.
/// Returns the created file paths. CSV bodies contain no timestamp, so
/// re-emitting the same bundle is byte-identical.
pub fn emit_tables(bundle: &ReportBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for task in bundle.tasks() {
        let mut csv = String::new();
        csv.push_str(
            "module,range,extrap_range,n_runs,threshold,success_rate,success_ci_low,success_ci_high,\
             solved_at_mean,solved_at_ci_low,solved_at_ci_high,sparsity_mean,sparsity_ci_low,sparsity_ci_high\n",
        );
        for cell in bundle.cells.iter().filter(|c| c.task == task) {
            let sr = &cell.success;
            let sa = metric_cells(&cell.solved_at);
            let sp = metric_cells(&cell.sparsity);
            writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                csv_field(&cell.module),
                csv_field(&cell.range),
                csv_field(&cell.extrap_range),
                cell.n_runs,
                num(cell.threshold),
                num(sr.estimate),
                num(sr.ci_low),
                num(sr.ci_high),
                sa[0],
                sa[1],
                sa[2],
                sp[0],
                sp[1],
                sp[2]
            )
            .expect("write to string");
        }
        let path = dir.join(format!("results_{task}.csv"));
        std::fs::write(&path, csv)?;
        written.push(path);
    }
    let json_path = dir.join("results.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(bundle)?)?;
    written.push(json_path);
    Ok(written)
}

/// Parses a table produced by [`emit_tables`] back into its numeric cells;
/// used to verify the round-trip contract.
pub fn parse_table(csv: &str) -> Result<Vec<Vec<Option<f64>>>> {
    let mut rows = Vec::new();
    for line in csv.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields = csv_split(line);
        if fields.len() != 14 {
            return Err(NalmError::InvalidInput(format!("bad results row: {line}")));
        }
        let mut row = Vec::new();
        for f in &fields[4..] {
            row.push(if f == ABSENT { None } else { Some(f.parse::<f64>().map_err(|e| NalmError::InvalidInput(e.to_string()))?) });
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Renders one metric as grouped bars (per-module groups across ranges, one
/// panel per task) with CI whiskers. Solved-at and sparsity panels use a
/// log10 axis. Output is a single self-contained SVG file.
pub fn render_svg(bundle: &ReportBundle, metric: MetricKind, path: &Path) -> Result<()> {
    let svg = render_svg_string(bundle, metric);
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, svg)?;
    Ok(())
}

const PALETTE: [&str; 11] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f",
    "#bab0ac", "#2f2f2f",
];

pub fn render_svg_string(bundle: &ReportBundle, metric: MetricKind) -> String {
    let tasks = bundle.tasks();
    let modules = bundle.modules();
    let ranges = bundle.ranges();

    let bar_w = 14.0;
    let group_gap = 18.0;
    let group_w = modules.len() as f64 * bar_w + group_gap;
    let plot_w = (ranges.len() as f64 * group_w).max(300.0);
    let margin_l = 70.0;
    let margin_r = 20.0;
    let panel_h = 240.0;
    let panel_gap = 70.0;
    let legend_h = 30.0;
    let width = margin_l + plot_w + margin_r;
    let height = 40.0 + legend_h + tasks.len() as f64 * (panel_h + panel_gap);

    let metric_name = match metric {
        MetricKind::SuccessRate => "success rate",
        MetricKind::SolvedAt => "solved at iteration",
        MetricKind::Sparsity => "sparsity error",
    };
    let log_axis = !matches!(metric, MetricKind::SuccessRate);

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"18\" font-size=\"14\">{} — {}</text>",
        margin_l,
        escape(&bundle.label),
        metric_name
    );
    // Legend.
    let mut lx = margin_l;
    for (i, m) in modules.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(s, "<rect x=\"{lx:.1}\" y=\"26\" width=\"10\" height=\"10\" fill=\"{color}\"/>");
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"35\">{}</text>", lx + 14.0, escape(m));
        lx += 14.0 + 8.0 * m.len() as f64 + 20.0;
    }

    for (ti, task) in tasks.iter().enumerate() {
        let top = 40.0 + legend_h + ti as f64 * (panel_h + panel_gap);
        let bottom = top + panel_h;

        // Collect values for axis scaling.
        let mut max_v: f64 = f64::MIN;
        let mut min_v: f64 = f64::MAX;
        let mut bars: Vec<(usize, usize, f64, f64, f64)> = Vec::new(); // (range idx, module idx, value, lo, hi)
        for cell in bundle.cells.iter().filter(|c| &c.task == task) {
            let summary: Option<&MetricSummary> = match metric {
                MetricKind::SuccessRate => Some(&cell.success),
                MetricKind::SolvedAt => cell.solved_at.as_ref(),
                MetricKind::Sparsity => cell.sparsity.as_ref(),
            };
            let Some(sm) = summary else { continue };
            let ri = ranges.iter().position(|r| r == &cell.range).unwrap_or(0);
            let mi = modules.iter().position(|m| m == &cell.module).unwrap_or(0);
            bars.push((ri, mi, sm.estimate, sm.ci_low, sm.ci_high));
            max_v = max_v.max(sm.ci_high).max(sm.estimate);
            min_v = min_v.min(sm.ci_low.max(1e-16)).min(sm.estimate.max(1e-16));
        }
        let (axis_min, axis_max) = if matches!(metric, MetricKind::SuccessRate) {
            (0.0, 1.0)
        } else if bars.is_empty() {
            (1.0, 10.0)
        } else {
            (min_v.max(1e-16), max_v.max(min_v * 10.0))
        };
        let to_y = |v: f64| -> f64 {
            let frac = if log_axis {
                let v = v.max(axis_min);
                (v.ln() - axis_min.ln()) / (axis_max.ln() - axis_min.ln()).max(1e-12)
            } else {
                (v - axis_min) / (axis_max - axis_min).max(1e-12)
            };
            bottom - frac.clamp(0.0, 1.0) * panel_h
        };

        let _ = writeln!(s, "<text x=\"{margin_l:.1}\" y=\"{:.1}\" font-size=\"13\">{}</text>", top - 8.0, escape(task));
        // Axes.
        let _ = writeln!(
            s,
            "<line x1=\"{margin_l:.1}\" y1=\"{top:.1}\" x2=\"{margin_l:.1}\" y2=\"{bottom:.1}\" stroke=\"#333\"/>"
        );
        let _ = writeln!(
            s,
            "<line x1=\"{margin_l:.1}\" y1=\"{bottom:.1}\" x2=\"{:.1}\" y2=\"{bottom:.1}\" stroke=\"#333\"/>",
            margin_l + plot_w
        );
        // Y tick labels.
        for frac in [0.0, 0.5, 1.0] {
            let v = if log_axis {
                (axis_min.ln() + frac * (axis_max.ln() - axis_min.ln())).exp()
            } else {
                axis_min + frac * (axis_max - axis_min)
            };
            let y = bottom - frac * panel_h;
            let label = if log_axis { format!("{v:.1e}") } else { format!("{v:.1}") };
            let _ = writeln!(s, "<text x=\"4\" y=\"{:.1}\">{label}</text>", y + 4.0);
            let _ = writeln!(
                s,
                "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{margin_l:.1}\" y2=\"{y:.1}\" stroke=\"#333\"/>",
                margin_l - 4.0
            );
        }
        // Range labels.
        for (ri, r) in ranges.iter().enumerate() {
            let x = margin_l + ri as f64 * group_w + group_w / 2.0;
            let _ = writeln!(
                s,
                "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"9\">{}</text>",
                bottom + 14.0,
                escape(r)
            );
        }
        // Bars and whiskers.
        for (ri, mi, v, lo, hi) in bars {
            let x = margin_l + ri as f64 * group_w + group_gap / 2.0 + mi as f64 * bar_w;
            let y = to_y(v.max(axis_min));
            let color = PALETTE[mi % PALETTE.len()];
            let _ = writeln!(
                s,
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{color}\"/>",
                bar_w - 2.0,
                (bottom - y).max(0.5)
            );
            if hi > lo {
                let cx = x + (bar_w - 2.0) / 2.0;
                let (ylo, yhi) = (to_y(lo.max(axis_min)), to_y(hi));
                let _ = writeln!(s, "<line x1=\"{cx:.1}\" y1=\"{ylo:.1}\" x2=\"{cx:.1}\" y2=\"{yhi:.1}\" stroke=\"#111\"/>");
                for yy in [ylo, yhi] {
                    let _ = writeln!(
                        s,
                        "<line x1=\"{:.1}\" y1=\"{yy:.1}\" x2=\"{:.1}\" y2=\"{yy:.1}\" stroke=\"#111\"/>",
                        cx - 3.0,
                        cx + 3.0
                    );
                }
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
