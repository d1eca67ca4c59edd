//! Flag-grid sweeps: one training and evaluation run per cell.

use std::path::Path;

use anyhow::anyhow;
use ccnet_core::config::RunConfig;
use ccnet_core::eval::REPORT_THRESHOLDS;
use ccnet_core::EvalReport;

use crate::args::Common;
use crate::commands::{check_shapes, train_and_evaluate};
use crate::error::{CliError, CliResult};
use crate::state;

pub const TABLE_FILE: &str = "ablation.txt";

/// One two-valued axis of the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Axis {
    pub name: &'static str,
    pub key: &'static str,
    /// Values for the off and on settings.
    pub values: [&'static str; 2],
    /// Column labels for the off and on settings.
    pub labels: [&'static str; 2],
}

pub const AXES: [Axis; 6] = [
    Axis { name: "cmi", key: "model.enable_cmi", values: ["false", "true"], labels: ["-", "x"] },
    Axis { name: "tcg", key: "model.enable_tcg", values: ["false", "true"], labels: ["-", "x"] },
    Axis { name: "c2f", key: "model.enable_c2f", values: ["false", "true"], labels: ["-", "x"] },
    Axis { name: "f2c", key: "model.enable_f2c", values: ["false", "true"], labels: ["-", "x"] },
    Axis {
        name: "order",
        key: "model.mtgc_order",
        values: ["f2c_then_c2f", "c2f_then_f2c"],
        labels: ["F2C>C2F", "C2F>F2C"],
    },
    Axis {
        name: "granularity",
        key: "model.granularity",
        values: ["adjacent", "all"],
        labels: ["adjacent", "all"],
    },
];

pub fn parse_axes(text: &str) -> CliResult<Vec<Axis>> {
    let mut axes: Vec<Axis> = Vec::new();
    for name in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let axis = AXES.iter().find(|a| a.name == name).ok_or_else(|| {
            let known: Vec<&str> = AXES.iter().map(|a| a.name).collect();
            CliError::usage(anyhow!("unknown ablation axis `{name}`, expected one of: {}", known.join(", ")))
        })?;
        if axes.contains(axis) {
            return Err(CliError::usage(anyhow!("ablation axis `{name}` listed twice")));
        }
        axes.push(*axis);
    }
    if axes.is_empty() {
        return Err(CliError::usage(anyhow!("--axes names no axis")));
    }
    Ok(axes)
}

/// Every on/off combination, first axis varying slowest, all-on first.
pub fn cells(axes: &[Axis]) -> Vec<Vec<usize>> {
    let n = axes.len();
    (0..1usize << n)
        .map(|code| (0..n).map(|i| 1 - ((code >> (n - 1 - i)) & 1)).collect())
        .collect()
}

pub fn cell_config(base: &RunConfig, axes: &[Axis], cell: &[usize]) -> CliResult<RunConfig> {
    let mut cfg = base.clone();
    for (axis, &v) in axes.iter().zip(cell) {
        cfg.set(axis.key, axis.values[v])?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub type CellResult = Result<EvalReport, String>;

/// Fixed-width table: axis columns, mAP at each reporting threshold, then the average.
pub fn format_table(axes: &[Axis], rows: &[(Vec<usize>, CellResult)]) -> String {
    let mut header: Vec<String> = axes.iter().map(|a| a.name.to_uppercase()).collect();
    header.extend(REPORT_THRESHOLDS.iter().map(|t| format!("{t:.1}")));
    header.push("Avg".into());
    let mut lines = vec![header];
    for (cell, result) in rows {
        let mut line: Vec<String> = axes.iter().zip(cell).map(|(a, &v)| a.labels[v].to_string()).collect();
        match result {
            Ok(r) => {
                for &t in REPORT_THRESHOLDS.iter() {
                    line.push(format!("{:.2}", 100.0 * r.map(t).unwrap_or(f64::NAN)));
                }
                line.push(format!("{:.2}", 100.0 * r.map_avg));
            }
            Err(msg) => line.push(format!("failed: {msg}")),
        }
        lines.push(line);
    }
    let cols = lines.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| lines.iter().filter_map(|l| l.get(c)).map(String::len).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for l in &lines {
        let cells: Vec<String> = l.iter().enumerate().map(|(c, s)| format!("{s:>w$}", w = widths[c])).collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

pub fn run(common: &Common, data: &Path, out: &Path, axes: &str) -> CliResult<()> {
    let axes = parse_axes(axes)?;
    let base = state::load_config(common)?;
    let train = state::load_split(data, "train")?;
    let test = state::load_split(data, "test")?;
    check_shapes(&train, &base)?;
    check_shapes(&test, &base)?;
    state::create_dir(out)?;
    state::echo_config(out, &base)?;
    let mut rows = Vec::new();
    for cell in cells(&axes) {
        let result = cell_config(&base, &axes, &cell)
            .and_then(|cfg| train_and_evaluate(&cfg, &train, &test))
            .map_err(|e| format!("{e:#}"));
        let label: Vec<String> = axes.iter().zip(&cell).map(|(a, &v)| format!("{}={}", a.name, a.values[v])).collect();
        match &result {
            Ok(r) => eprintln!("{}: avg mAP {:.4}", label.join(" "), r.map_avg),
            Err(e) => eprintln!("{}: failed: {e}", label.join(" ")),
        }
        rows.push((cell, result));
    }
    let table = format_table(&axes, &rows);
    print!("{table}");
    let path = out.join(TABLE_FILE);
    std::fs::write(&path, table).map_err(|e| CliError::usage(anyhow!("cannot write {}: {e}", path.display())))
}
