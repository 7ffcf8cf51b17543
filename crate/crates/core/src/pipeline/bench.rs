use std::fmt::Write as _;

use serde::Serialize;

use super::config::BenchVariant;
use super::train::{train_pipeline, PhaseTimings, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub label: String,
    /// Per-phase medians over the runs.
    pub median: PhaseTimings,
    /// Median of the per-run totals.
    pub total: f64,
    pub runs: Vec<PhaseTimings>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl BenchTable {
    pub fn csv(&self) -> String {
        let mut out = String::from("config");
        for n in PhaseTimings::NAMES {
            write!(out, ",{n}_s").unwrap();
        }
        out.push_str(",total_s\n");
        for r in &self.rows {
            out.push_str(&r.label.replace(',', ";"));
            for v in r.median.values() {
                write!(out, ",{v:.6}").unwrap();
            }
            writeln!(out, ",{:.6}", r.total).unwrap();
        }
        out
    }

    pub fn row(&self, label: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

/// Trains every variant `runs` times on the same samples, interleaving the
/// variants within each round, and reports per-phase medians.
pub fn benchmark_timing(variants: &[BenchVariant], runs: usize, samples: &[Sample]) -> Result<BenchTable> {
    if variants.is_empty() || runs == 0 {
        return Err(Error::Config("benchmark needs at least one variant and one run".into()));
    }
    let mut timings: Vec<Vec<PhaseTimings>> = vec![Vec::with_capacity(runs); variants.len()];
    for round in 0..runs {
        for (v, slot) in variants.iter().zip(&mut timings) {
            log::info!("benchmark round {round}: {}", v.label);
            slot.push(train_pipeline(&v.config, samples)?.timings);
        }
    }
    let rows = variants
        .iter()
        .zip(timings)
        .map(|(v, runs)| {
            let mut phases = [0.0; 6];
            for (p, slot) in phases.iter_mut().enumerate() {
                let mut col: Vec<f64> = runs.iter().map(|t| t.values()[p]).collect();
                *slot = median(&mut col);
            }
            let mut totals: Vec<f64> = runs.iter().map(PhaseTimings::total).collect();
            BenchRow {
                label: v.label.clone(),
                median: PhaseTimings::from_values(phases),
                total: median(&mut totals),
                runs,
            }
        })
        .collect();
    Ok(BenchTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn csv_has_six_phase_columns_and_total() {
        let t = BenchTable {
            rows: vec![BenchRow {
                label: "a".into(),
                median: PhaseTimings::from_values([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
                total: 21.0,
                runs: vec![],
            }],
        };
        let csv = t.csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "config,detect_s,describe_s,cluster_s,encode_s,gram_s,svm_s,total_s"
        );
        assert_eq!(lines.next().unwrap().split(',').count(), 8);
    }
}
