//! Result tables in CSV and Markdown. Both formats carry identical cell text.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{write_atomic, ExperimentReport, RunnerError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl TableFormat {
    fn extension(self) -> &'static str {
        match self {
            TableFormat::Csv => "csv",
            TableFormat::Markdown => "md",
        }
    }
}

pub const MISSING: &str = "—";
const MISSING_NOTE: &str = "— no ok record with the required objective.";

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn has_missing(&self) -> bool {
        self.rows.iter().flatten().any(|c| c == MISSING)
    }

    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(&self.headers).expect("in-memory write");
        for row in &self.rows {
            writer.write_record(row).expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }

    pub fn to_markdown(&self) -> String {
        let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
        let mut out = line(&self.headers);
        out += &line(&vec!["---".to_owned(); self.headers.len()]);
        for row in &self.rows {
            out += &line(row);
        }
        if self.has_missing() {
            out += &format!("\n{MISSING_NOTE}\n");
        }
        out
    }
}

pub fn cell(value: Option<f64>) -> String {
    value.map_or_else(|| MISSING.to_owned(), |v| format!("{v:.3}"))
}

/// Best sealed test objective of the final selection per setting and task.
pub fn scores_table(report: &ExperimentReport) -> Table {
    let tasks: BTreeSet<&str> = report.settings.values().map(|s| s.task_id.as_str()).collect();
    let mut headers = vec!["setting".to_owned()];
    headers.extend(tasks.iter().map(|t| t.to_string()));
    let rows = report
        .settings
        .iter()
        .map(|(name, s)| {
            let mut row = vec![name.clone()];
            row.extend(tasks.iter().map(|t| if *t == s.task_id { cell(s.selection.best_test) } else { MISSING.to_owned() }));
            row
        })
        .collect();
    Table {
        name: "scores",
        headers,
        rows,
    }
}

pub fn automl_table(report: &ExperimentReport) -> Table {
    let headers = [
        "setting",
        "automl",
        "cadence",
        "trials_per_entry",
        "searches",
        "trials_total",
        "best_val",
        "best_test",
        "tuned_best_val",
        "tuned_test_at_best_val",
    ];
    let rows = report
        .settings
        .iter()
        .map(|(name, s)| {
            let a = &s.automl;
            vec![
                name.clone(),
                if a.enabled { "on" } else { "off" }.to_owned(),
                a.cadence_iterations.to_string(),
                a.trials_per_entry.to_string(),
                a.searches.to_string(),
                a.trials_total.to_string(),
                cell(s.val_test.best_val),
                cell(s.selection.best_test),
                cell(a.best_val),
                cell(a.test_at_best_val),
            ]
        })
        .collect();
    Table {
        name: "automl",
        headers: headers.map(String::from).to_vec(),
        rows,
    }
}

/// Validation and sealed test objectives side by side per setting.
pub fn ablation_table(report: &ExperimentReport) -> Table {
    let rows = report
        .settings
        .iter()
        .map(|(name, s)| {
            let label = if !s.automl.enabled {
                "off".to_owned()
            } else if s.automl.ablations.is_empty() {
                "full".to_owned()
            } else {
                s.automl.ablations.iter().map(|a| a.to_string()).collect::<Vec<_>>().join("+")
            };
            vec![
                name.clone(),
                label,
                cell(s.val_test.best_val),
                cell(s.val_test.test_at_best_val),
                cell(s.val_test.selected_best_test),
            ]
        })
        .collect();
    Table {
        name: "ablation",
        headers: ["setting", "automl", "best_val", "test_at_best_val", "selected_best_test"]
            .map(String::from)
            .to_vec(),
        rows,
    }
}

pub fn tables(report: &ExperimentReport) -> Vec<Table> {
    vec![scores_table(report), automl_table(report), ablation_table(report)]
}

/// Writes every table in `format` into `dir`; returns the written paths.
pub fn emit_tables(report: &ExperimentReport, format: TableFormat, dir: &Path) -> Result<Vec<PathBuf>, RunnerError> {
    let mut written = Vec::new();
    for table in tables(report) {
        let path = dir.join(format!("{}.{}", table.name, format.extension()));
        let text = match format {
            TableFormat::Csv => table.to_csv(),
            TableFormat::Markdown => table.to_markdown(),
        };
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> Table {
        Table {
            name: "t",
            headers: vec!["setting".into(), "synth-spots".into()],
            rows: vec![vec!["base".into(), cell(Some(0.8671))], vec!["empty".into(), cell(None)]],
        }
    }

    #[test]
    fn three_decimal_cells() {
        assert_eq!(cell(Some(0.867)), "0.867");
        assert_eq!(cell(Some(0.8671)), "0.867");
        assert_eq!(cell(None), MISSING);
    }

    #[test]
    fn missing_cell_gets_footnote() {
        let md = table().to_markdown();
        assert!(md.contains("| empty | — |"));
        assert!(md.ends_with(&format!("{MISSING_NOTE}\n")));
    }

    #[test]
    fn formats_agree_on_cells() {
        let t = table();
        let csv_cells: Vec<String> = t.to_csv().lines().flat_map(|l| l.split(',').map(String::from).collect::<Vec<_>>()).collect();
        let md = t.to_markdown();
        for c in csv_cells {
            assert!(md.contains(&c), "{c}");
        }
    }
}
