//! `report`: renders the artifacts of a completed run as one plain-text
//! summary with Before/After rows and direction arrows.

use std::path::PathBuf;

use crate::config::TaskKind;
use crate::pipeline::{write_file, Artifacts, RunMeta};
use crate::CliError;

struct CsvTable {
    rows: Vec<Vec<String>>,
}

fn read_csv(path: &PathBuf) -> Result<CsvTable, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("reading {}: {e}", path.display())))?;
    let mut lines = text.lines();
    lines
        .next()
        .ok_or_else(|| CliError::Runtime(format!("{} is empty", path.display())))?;
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok(CsvTable { rows })
}

fn pct(field: &str) -> String {
    field
        .parse::<f64>()
        .map(|v| format!("{v:.2}"))
        .unwrap_or_else(|_| field.to_string())
}

pub fn run_report(art: &Artifacts) -> Result<(), CliError> {
    art.require(&[art.meta()])?;
    let meta: RunMeta = serde_json::from_str(
        &std::fs::read_to_string(art.meta())
            .map_err(|e| CliError::Runtime(format!("reading meta: {e}")))?,
    )
    .map_err(|e| CliError::Runtime(format!("parsing meta: {e}")))?;

    let mut required = vec![
        art.manifest(),
        art.instances(),
        art.baseline_log(),
        art.retained(),
        art.sweep(),
        art.grouped(),
        art.knockout_metrics(),
        art.records(),
        art.curves(),
        art.mass(),
    ];
    match meta.task {
        TaskKind::Count => required.extend([
            art.digit_word(),
            art.base_probs(),
            art.correlation(),
            art.prob_impact(),
        ]),
        TaskKind::Color => required.push(art.color_categories()),
    }
    art.require(&required)?;

    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    line(format!(
        "run summary: config {}, task {:?}, tool v{}",
        meta.config_hash, meta.task, meta.tool_version
    ));
    line("=".repeat(64));
    line(String::new());

    let metrics = read_csv(&art.knockout_metrics())?;
    let panel_title = |metric: &str, direction: &str| match (metric, direction) {
        ("exact_match", _) => "Baseline Prompt: Exact Match (↑)".to_string(),
        ("prompt_match", _) => "Misaligned Prompt: Prompt Match (↓)".to_string(),
        ("true_count_match", _) => "Misaligned Prompt: True Count Match (↑)".to_string(),
        (m, d) => format!("{m} ({d})"),
    };
    for row in &metrics.rows {
        line(panel_title(&row[1], &row[2]));
        line(format!("  Before  {:>8}", pct(&row[3])));
        line(format!("  After   {:>8}", pct(&row[4])));
        line(String::new());
    }
    line("Note: prompt-match and true-count-match rates need not sum to".into());
    line("100%, because some responses carry no extractable value.".into());
    line(String::new());

    let sweep = read_csv(&art.sweep())?;
    let mut scored: Vec<(String, f64)> = sweep
        .rows
        .iter()
        .map(|r| {
            (
                format!("L{}H{}", r[0], r[1]),
                r[2].parse::<f64>().unwrap_or(0.0),
            )
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    line(format!(
        "Head sweep: top heads of {} by single-head knockout success",
        scored.len()
    ));
    for (name, score) in scored.iter().take(10) {
        line(format!("  {name:<8} {:.2}%", score * 100.0));
    }
    line(String::new());

    let grouped = read_csv(&art.grouped())?;
    line("Grouped knockout success (Best-m)".into());
    for row in &grouped.rows {
        let selected = if row[3] == "1" { "  <- selected" } else { "" };
        let success: f64 = row[2].parse().unwrap_or(0.0);
        line(format!("  Best-{:<3} {:.2}%{selected}", row[0], success * 100.0));
    }
    line(String::new());

    match meta.task {
        TaskKind::Count => {
            let dw = read_csv(&art.digit_word())?;
            line("Response format (% of responses carrying a number)".into());
            line(format!(
                "  {:<10} {:>7} {:>7}   {:>7} {:>7}",
                "", "digit", "", "word", ""
            ));
            line(format!(
                "  {:<10} {:>7} {:>7}   {:>7} {:>7}",
                "", "Before", "After", "Before", "After"
            ));
            for row in &dw.rows {
                line(format!(
                    "  {:<10} {:>7} {:>7}   {:>7} {:>7}",
                    row[0],
                    pct(&row[1]),
                    pct(&row[2]),
                    pct(&row[3]),
                    pct(&row[4])
                ));
            }
            line(String::new());

            let corr = read_csv(&art.correlation())?;
            if let Some(row) = corr.rows.first() {
                line(format!(
                    "Base-probability correlation: rho = {} over n = {} samples",
                    row[0], row[1]
                ));
            }
            let impact = read_csv(&art.prob_impact())?;
            line("Knockout impact on true-count probability (mean)".into());
            for row in &impact.rows {
                line(format!(
                    "  {:<6} Before {:>8.4}  After {:>8.4}  Δ {:>+.4}",
                    row[0],
                    row[1].parse::<f64>().unwrap_or(0.0),
                    row[2].parse::<f64>().unwrap_or(0.0),
                    row[3].parse::<f64>().unwrap_or(0.0)
                ));
            }
        }
        TaskKind::Color => {
            let cats = read_csv(&art.color_categories())?;
            line("Color response categories (%)".into());
            line(format!("  {:<16} {:>8} {:>8}", "", "Before", "After"));
            for row in &cats.rows {
                line(format!(
                    "  {:<16} {:>8} {:>8}",
                    row[0],
                    pct(&row[2]),
                    pct(&row[3])
                ));
            }
        }
    }
    line(String::new());

    let mass = read_csv(&art.mass())?;
    let argmax = mass
        .rows
        .iter()
        .max_by(|a, b| {
            let da: f64 = a[3].parse::<f64>().unwrap_or(0.0).abs();
            let db: f64 = b[3].parse::<f64>().unwrap_or(0.0).abs();
            da.partial_cmp(&db).unwrap()
        })
        .cloned();
    if let Some(row) = argmax {
        line(format!(
            "Attention mass: largest image-mass shift at layer {} (Δ = {:+.4})",
            row[0],
            row[3].parse::<f64>().unwrap_or(0.0)
        ));
    }
    write_file(&art.report(), out.as_bytes())?;
    print!("{out}");
    Ok(())
}
