use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{io_error, HarnessError, MetricRow};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const REPORT_FILE: &str = "report.txt";

/// Half-width of the two-sided 95% Student-t interval of the mean; zero
/// for fewer than two values.
pub fn ci95(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    t * (var / n as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub retention: f64,
    pub runs: usize,
    pub mean_accuracy: f64,
    pub ci95: f64,
}

/// Mean test accuracy and interval per (model, retention); models in order
/// of first appearance, retention ascending.
pub fn summarize(rows: &[MetricRow]) -> Vec<SummaryRow> {
    let mut models: Vec<&str> = Vec::new();
    for r in rows {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    let mut retentions: Vec<f64> = Vec::new();
    for r in rows {
        if !retentions.contains(&r.retention) {
            retentions.push(r.retention);
        }
    }
    retentions.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    for m in &models {
        for &p in &retentions {
            let acc: Vec<f64> = rows
                .iter()
                .filter(|r| r.model == *m && r.retention == p)
                .map(|r| r.test_accuracy)
                .collect();
            if acc.is_empty() {
                continue;
            }
            out.push(SummaryRow {
                model: m.to_string(),
                retention: p,
                runs: acc.len(),
                mean_accuracy: acc.iter().sum::<f64>() / acc.len() as f64,
                ci95: ci95(&acc),
            });
        }
    }
    out
}

pub(crate) fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

/// Plain-text model × retention table of `mean±ci` test accuracy in percent.
pub fn render_table(rows: &[SummaryRow]) -> String {
    let mut retentions: Vec<f64> = rows.iter().map(|r| r.retention).collect();
    retentions.sort_by(f64::total_cmp);
    retentions.dedup();
    let mut models: Vec<&str> = Vec::new();
    for r in rows {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    let width = models.iter().map(|m| m.len()).max().unwrap_or(5).max(5);
    let mut s = String::from("Comparison of accuracies (test %, mean±95% CI over seeds)\n");
    let _ = write!(s, "{:<width$}", "model");
    for p in &retentions {
        let _ = write!(s, "  {:>13}", format!("{p}%"));
    }
    s.push('\n');
    for m in models {
        let _ = write!(s, "{m:<width$}");
        for p in &retentions {
            let cell = rows
                .iter()
                .find(|r| r.model == m && r.retention == *p)
                .map(|r| format!("{:.2}±{:.2}", 100.0 * r.mean_accuracy, 100.0 * r.ci95))
                .unwrap_or_else(|| "-".into());
            let _ = write!(s, "  {cell:>13}");
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_run_interval_matches_hand_computation() {
        // mean 0.8, sample sd 0.0158114, t(0.975, 4) = 2.776445
        let v = [0.78, 0.79, 0.80, 0.81, 0.82];
        let want = 2.776_445_105 * 0.015_811_388_3 / 5f64.sqrt();
        assert!((ci95(&v) - want).abs() < 1e-8, "{}", ci95(&v));
        assert_eq!(ci95(&[0.5]), 0.0);
        assert_eq!(ci95(&[0.5, 0.5, 0.5]), 0.0);
    }

    fn row(model: &str, retention: f64, seed: u64, acc: f64) -> MetricRow {
        MetricRow {
            model: model.into(),
            retention,
            seed,
            test_accuracy: acc,
            best_val_accuracy: acc,
            best_epoch: 0,
            parameters: 1,
        }
    }

    #[test]
    fn two_models_by_three_retentions() {
        let mut rows = Vec::new();
        for (m, off) in [("xcnn", 0.02), ("base", 0.0)] {
            for p in [100.0, 20.0, 60.0] {
                for s in 0..3 {
                    rows.push(row(m, p, s, 0.5 + off + p / 1000.0 + s as f64 * 0.01));
                }
            }
        }
        let sum = summarize(&rows);
        assert_eq!(sum.len(), 6);
        assert_eq!(sum[0].model, "xcnn");
        assert_eq!(
            sum.iter().map(|r| r.retention).take(3).collect::<Vec<_>>(),
            vec![20.0, 60.0, 100.0]
        );
        assert!((sum[0].mean_accuracy - 0.55).abs() < 1e-12);
        let table = render_table(&sum);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].contains("20%") && lines[1].contains("100%"));
        assert!(lines[2].starts_with("xcnn") && lines[2].contains("55.00±"));
    }
}
