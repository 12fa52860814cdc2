use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::experiment::MetricsReport;
use crate::error::{Error, Result};

pub fn write_reports_json(mut out: impl Write, reports: &[MetricsReport]) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, reports)?;
    writeln!(out).map_err(|e| Error::io("<json>", e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_reports_csv(out: impl Write, reports: &[MetricsReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "protocol",
        "target",
        "cohort",
        "model",
        "rmse",
        "accuracy",
        "f1",
        "rows",
        "train_rows",
        "cold_start",
        "n_features",
    ])?;
    for r in reports {
        w.write_record([
            r.protocol.to_string(),
            r.target.to_string(),
            r.cohort.to_string(),
            r.model.clone(),
            r.rmse.to_string(),
            opt(r.accuracy),
            opt(r.f1),
            r.rows.to_string(),
            r.train_rows.to_string(),
            r.cold_start.to_string(),
            r.n_features.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMetric {
    Rmse,
    Accuracy,
    F1,
}

impl SweepMetric {
    fn of(self, r: &MetricsReport) -> Option<f64> {
        match self {
            SweepMetric::Rmse => Some(r.rmse),
            SweepMetric::Accuracy => r.accuracy,
            SweepMetric::F1 => r.f1,
        }
    }
}

/// Rows are target ordinals plus a final average row, columns are models
/// in order of first appearance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub metric: SweepMetric,
    pub models: Vec<String>,
    pub targets: Vec<usize>,
    /// `values[t][m]` for `targets[t]` and `models[m]`.
    pub values: Vec<Vec<Option<f64>>>,
    /// Column means over the targets where the model has a value.
    pub average: Vec<Option<f64>>,
}

impl SweepTable {
    pub fn from_reports(reports: &[MetricsReport], metric: SweepMetric) -> Self {
        let mut models: Vec<String> = Vec::new();
        let mut cells: BTreeMap<usize, BTreeMap<usize, f64>> = BTreeMap::new();
        for r in reports {
            let m = match models.iter().position(|x| *x == r.model) {
                Some(i) => i,
                None => {
                    models.push(r.model.clone());
                    models.len() - 1
                }
            };
            if let Some(v) = metric.of(r) {
                cells.entry(r.target).or_default().insert(m, v);
            }
        }
        let targets: Vec<usize> = cells.keys().copied().collect();
        let values: Vec<Vec<Option<f64>>> = cells
            .values()
            .map(|row| (0..models.len()).map(|m| row.get(&m).copied()).collect())
            .collect();
        let average = (0..models.len())
            .map(|m| {
                let col: Vec<f64> = values.iter().filter_map(|row| row[m]).collect();
                (!col.is_empty()).then(|| col.iter().sum::<f64>() / col.len() as f64)
            })
            .collect();
        SweepTable {
            metric,
            models,
            targets,
            values,
            average,
        }
    }

    /// Value for one model and target.
    pub fn get(&self, model: &str, target: usize) -> Option<f64> {
        let m = self.models.iter().position(|x| x == model)?;
        let t = self.targets.iter().position(|x| *x == target)?;
        self.values[t][m]
    }

    pub fn average_of(&self, model: &str) -> Option<f64> {
        let m = self.models.iter().position(|x| x == model)?;
        self.average[m]
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["target".to_string()];
        header.extend(self.models.iter().cloned());
        w.write_record(&header)?;
        for (t, row) in self.targets.iter().zip(&self.values) {
            let mut rec = vec![t.to_string()];
            rec.extend(row.iter().map(|v| opt(*v)));
            w.write_record(&rec)?;
        }
        let mut avg = vec!["Avg".to_string()];
        avg.extend(self.average.iter().map(|v| opt(*v)));
        w.write_record(&avg)?;
        w.flush().map_err(|e| Error::io("<csv>", e))
    }

    /// Fixed-width text rendering with three decimals.
    pub fn to_text(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
        let width = self
            .models
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max(6);
        let mut s = format!("{:<6}", "target");
        for m in &self.models {
            let _ = write!(s, " {m:>width$}");
        }
        s.push('\n');
        for (t, row) in self.targets.iter().zip(&self.values) {
            let _ = write!(s, "{:<6}", format!("H{t}"));
            for v in row {
                let _ = write!(s, " {:>width$}", cell(*v));
            }
            s.push('\n');
        }
        let _ = write!(s, "{:<6}", "Avg");
        for v in &self.average {
            let _ = write!(s, " {:>width$}", cell(*v));
        }
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{CohortKind, Protocol};

    fn report(model: &str, target: usize, rmse: f64) -> MetricsReport {
        MetricsReport {
            protocol: Protocol::PreviousHw,
            target,
            cohort: CohortKind::All,
            model: model.into(),
            rmse,
            accuracy: None,
            f1: None,
            rows: 10,
            train_rows: 20,
            cold_start: 0,
            n_features: 22,
        }
    }

    #[test]
    fn table_layout_and_average() {
        let reports = [
            report("a", 2, 0.2),
            report("b", 2, 0.4),
            report("a", 3, 0.4),
        ];
        let t = SweepTable::from_reports(&reports, SweepMetric::Rmse);
        assert_eq!(t.models, vec!["a", "b"]);
        assert_eq!(t.targets, vec![2, 3]);
        assert_eq!(t.get("b", 3), None);
        assert!((t.average_of("a").unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(t.average_of("b"), Some(0.4));
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "target,a,b");
        assert!(text.lines().last().unwrap().starts_with("Avg,"));
        assert!(t.to_text().contains("H3"));
    }

    #[test]
    fn reports_roundtrip_through_json() {
        let reports = vec![report("a", 2, 0.25)];
        let mut buf = Vec::new();
        write_reports_json(&mut buf, &reports).unwrap();
        let back: Vec<MetricsReport> = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back, reports);
        let mut csv_buf = Vec::new();
        write_reports_csv(&mut csv_buf, &reports).unwrap();
        assert_eq!(String::from_utf8(csv_buf).unwrap().lines().count(), 2);
    }
}
