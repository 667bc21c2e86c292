//! Experiment reports: per-seed metric series, cross-seed summaries, and the
//! pinned CSV layout.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::trainer::{MetricPoint, RunSeries};

/// Results of one experiment arm across seeds.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub arm: String,
    pub series: Vec<RunSeries>,
    /// Resolved `key = value` snapshot sufficient to reproduce the run.
    pub config_snapshot: String,
}

/// Mean and sample standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub seeds: usize,
    pub final_miou_mean: f64,
    pub final_miou_std: f64,
    pub best_miou_mean: f64,
    pub best_miou_std: f64,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

impl ExperimentReport {
    pub fn summary(&self) -> Summary {
        let finals: Vec<f64> = self.series.iter().map(|s| s.final_miou()).collect();
        let bests: Vec<f64> = self.series.iter().map(|s| s.best_miou()).collect();
        let (final_miou_mean, final_miou_std) = mean_std(&finals);
        let (best_miou_mean, best_miou_std) = mean_std(&bests);
        Summary {
            seeds: self.series.len(),
            final_miou_mean,
            final_miou_std,
            best_miou_mean,
            best_miou_std,
        }
    }
}

pub const CSV_HEADER: &str = "seed,iteration,miou,sup_loss,unsup_loss,lambda_mean";

/// Write the metric series of every seed, one row per evaluation point.
/// Floats print in Rust's shortest round-trip form, decimal point, no
/// thousands separators, `\n` line endings.
pub fn write_metrics_csv(report: &ExperimentReport, path: &Path) -> Result<()> {
    let mut text = String::from(CSV_HEADER);
    text.push('\n');
    for series in &report.series {
        for p in &series.points {
            text.push_str(&format!(
                "{},{},{},{},{},{}\n",
                series.seed, p.iteration, p.miou, p.sup_loss, p.unsup_loss, p.lambda_mean
            ));
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(text.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Parse a metrics CSV back into (seed, point) rows.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<(u64, MetricPoint)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != CSV_HEADER {
        return Err(Error::Format {
            path: path.display().to_string(),
            msg: format!("unexpected header {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Format {
                path: path.display().to_string(),
                msg: format!("row {}: expected 6 fields, got {}", i + 2, fields.len()),
            });
        }
        let bad = |what: &str| Error::Format {
            path: path.display().to_string(),
            msg: format!("row {}: bad {what}", i + 2),
        };
        rows.push((
            fields[0].parse::<u64>().map_err(|_| bad("seed"))?,
            MetricPoint {
                iteration: fields[1].parse().map_err(|_| bad("iteration"))?,
                miou: fields[2].parse().map_err(|_| bad("miou"))?,
                sup_loss: fields[3].parse().map_err(|_| bad("sup_loss"))?,
                unsup_loss: fields[4].parse().map_err(|_| bad("unsup_loss"))?,
                lambda_mean: fields[5].parse().map_err(|_| bad("lambda_mean"))?,
            },
        ));
    }
    Ok(rows)
}

/// One summary row per arm: `arm,seeds,final_miou_mean,final_miou_std,best_miou_mean,best_miou_std`.
pub fn write_summary_csv(reports: &[ExperimentReport], path: &Path) -> Result<()> {
    let mut text = String::from("arm,seeds,final_miou_mean,final_miou_std,best_miou_mean,best_miou_std\n");
    for r in reports {
        let s = r.summary();
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.arm, s.seeds, s.final_miou_mean, s.final_miou_std, s.best_miou_mean, s.best_miou_std
        ));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(text.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::ModelParams;

    fn series(seed: u64, points: Vec<MetricPoint>) -> RunSeries {
        RunSeries {
            seed,
            points,
            final_student: ModelParams::new(vec![]),
            final_teacher: ModelParams::new(vec![]),
        }
    }

    fn point(iteration: u64, miou: f64) -> MetricPoint {
        MetricPoint {
            iteration,
            miou,
            sup_loss: 0.123456789123,
            unsup_loss: 1.0 / 3.0,
            lambda_mean: 0.25,
        }
    }

    #[test]
    fn empty_series_gives_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let report = ExperimentReport {
            arm: "x".into(),
            series: vec![],
            config_snapshot: String::new(),
        };
        write_metrics_csv(&report, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn one_seed_two_evals_is_three_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let report = ExperimentReport {
            arm: "x".into(),
            series: vec![series(7, vec![point(0, 0.1), point(200, 0.5)])],
            config_snapshot: String::new(),
        };
        write_metrics_csv(&report, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.ends_with('\n'));
        assert!(!text.contains(' '));
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let pts = vec![point(0, 0.987654321012345), point(200, 1.0 / 7.0)];
        let report = ExperimentReport {
            arm: "x".into(),
            series: vec![series(3, pts.clone())],
            config_snapshot: String::new(),
        };
        write_metrics_csv(&report, &path).unwrap();
        let rows = read_metrics_csv(&path).unwrap();
        assert_eq!(rows.len(), 2);
        for ((seed, got), want) in rows.iter().zip(&pts) {
            assert_eq!(*seed, 3);
            assert_eq!(got.iteration, want.iteration);
            assert_eq!(got.miou.to_bits(), want.miou.to_bits());
            assert_eq!(got.sup_loss.to_bits(), want.sup_loss.to_bits());
            assert_eq!(got.unsup_loss.to_bits(), want.unsup_loss.to_bits());
            assert_eq!(got.lambda_mean.to_bits(), want.lambda_mean.to_bits());
        }
    }

    #[test]
    fn summary_mean_and_sample_std() {
        let report = ExperimentReport {
            arm: "x".into(),
            series: vec![
                series(0, vec![point(0, 0.2), point(1, 0.4)]),
                series(1, vec![point(0, 0.3), point(1, 0.6)]),
            ],
            config_snapshot: String::new(),
        };
        let s = report.summary();
        assert_eq!(s.seeds, 2);
        assert!((s.final_miou_mean - 0.5).abs() < 1e-12);
        let want_std = ((0.4 - 0.5_f64).powi(2) + (0.6 - 0.5_f64).powi(2)).sqrt(); // n-1 = 1
        assert!((s.final_miou_std - want_std).abs() < 1e-12);
    }
}
