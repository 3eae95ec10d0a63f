//! Evaluation matrices and the Average / Forgetting meta-metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Divisor convention for the Average metric. The literal formula sums the
/// T - i + 1 observed entries but divides by T; `Observed` is the true mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DivisorMode {
    #[serde(rename = "observed")]
    Observed,
    #[serde(rename = "T")]
    FullT,
}

/// Lower-triangular metric-by-step matrix: entry (j, i) is the metric on
/// domain i's test set measured after fine-tuning step j, defined only for
/// j >= i. Indices are 1-based to match the usual formulas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMatrix {
    pub metric: String,
    pub t: usize,
    rows: Vec<Vec<f64>>,
}

impl EvalMatrix {
    pub fn new(metric: impl Into<String>, t: usize) -> Self {
        EvalMatrix { metric: metric.into(), t, rows: Vec::new() }
    }

    /// Append the row for the next fine-tuning step; row j must carry exactly
    /// j entries (domains 1..=j).
    pub fn push_row(&mut self, values: Vec<f64>) -> Result<()> {
        let j = self.rows.len() + 1;
        if j > self.t {
            return Err(Error::Data(format!("matrix already has {} rows", self.t)));
        }
        if values.len() != j {
            return Err(Error::Data(format!(
                "row {} must have {} entries, got {}",
                j,
                j,
                values.len()
            )));
        }
        self.rows.push(values);
        Ok(())
    }

    pub fn steps_recorded(&self) -> usize {
        self.rows.len()
    }

    /// Entry at (step j, domain i), 1-based, defined for i <= j only.
    pub fn get(&self, j: usize, i: usize) -> Option<f64> {
        if i == 0 || j == 0 || i > j {
            return None;
        }
        self.rows.get(j - 1).and_then(|row| row.get(i - 1)).copied()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn from_rows(metric: impl Into<String>, t: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = EvalMatrix::new(metric, t);
        for row in rows {
            m.push_row(row)?;
        }
        Ok(m)
    }
}

/// Average of a metric over the steps where domain i has been seen:
/// entries (j, i) for j = i..T. `Observed` divides by the T - i + 1 defined
/// entries; `FullT` divides by T as the literal formula does.
pub fn average_metric(matrix: &EvalMatrix, i: usize, mode: DivisorMode) -> Result<f64> {
    if i == 0 || i > matrix.t {
        return Err(Error::Data(format!("domain index {i} out of 1..={}", matrix.t)));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for j in i..=matrix.t {
        match matrix.get(j, i) {
            Some(v) => {
                sum += v;
                n += 1;
            }
            None => {
                return Err(Error::Data(format!(
                    "matrix entry ({j}, {i}) missing for average"
                )))
            }
        }
    }
    let divisor = match mode {
        DivisorMode::Observed => n as f64,
        DivisorMode::FullT => matrix.t as f64,
    };
    Ok(sum / divisor)
}

/// Forgetting of domain i at step k: first measurement minus measurement at
/// k. Positive means forgetting; negative means positive transfer.
pub fn forgetting(matrix: &EvalMatrix, i: usize, k: usize) -> Result<f64> {
    if i >= k {
        return Err(Error::Data(format!("forgetting requires i < k, got i={i} k={k}")));
    }
    let first = matrix
        .get(i, i)
        .ok_or_else(|| Error::Data(format!("matrix entry ({i}, {i}) missing")))?;
    let at_k = matrix
        .get(k, i)
        .ok_or_else(|| Error::Data(format!("matrix entry ({k}, {i}) missing")))?;
    Ok(first - at_k)
}

/// Per-metric report block; the serialized form is the external schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub matrix: Vec<Vec<f64>>,
    #[serde(rename = "A")]
    pub average: BTreeMap<String, f64>,
    #[serde(rename = "F")]
    pub forgetting: BTreeMap<String, f64>,
    pub divisor_mode: DivisorMode,
    pub config_hash: String,
}

impl MetricReport {
    /// Build from a complete T-step matrix: A for every domain, F^T for
    /// domains 1..T-1 (the last domain has no forgetting entry).
    pub fn from_matrix(
        matrix: &EvalMatrix,
        domains: &[String],
        mode: DivisorMode,
        config_hash: &str,
    ) -> Result<Self> {
        if domains.len() != matrix.t {
            return Err(Error::Data(format!(
                "{} domains but matrix has T={}",
                domains.len(),
                matrix.t
            )));
        }
        let mut average = BTreeMap::new();
        let mut forget = BTreeMap::new();
        for (idx, name) in domains.iter().enumerate() {
            let i = idx + 1;
            average.insert(name.clone(), average_metric(matrix, i, mode)?);
            if i < matrix.t {
                forget.insert(name.clone(), forgetting(matrix, i, matrix.t)?);
            }
        }
        Ok(MetricReport {
            metric: matrix.metric.clone(),
            matrix: matrix.rows().to_vec(),
            average,
            forgetting: forget,
            divisor_mode: mode,
            config_hash: config_hash.to_string(),
        })
    }
}

/// Full continual-run report: matrices plus A/F per metric and run metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinualReport {
    pub strategy: String,
    pub model_kind: String,
    pub domains: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub config_hash: String,
    pub reports: Vec<MetricReport>,
    #[serde(default)]
    pub diagnostics: serde_json::Value,
}

impl ContinualReport {
    pub fn metric(&self, name: &str) -> Option<&MetricReport> {
        self.reports.iter().find(|r| r.metric == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix_3() -> EvalMatrix {
        // Column 3 is [60, 58, 56] over steps 3..5 of a T=5 run.
        EvalMatrix::from_rows(
            "em@1",
            5,
            vec![
                vec![50.0],
                vec![48.0, 52.0],
                vec![46.0, 50.0, 60.0],
                vec![44.0, 49.0, 58.0, 41.0],
                vec![42.0, 47.0, 56.0, 40.0, 55.0],
            ],
        )
        .unwrap()
    }

    #[test]
    fn average_both_modes() {
        let m = matrix_3();
        let observed = average_metric(&m, 3, DivisorMode::Observed).unwrap();
        assert!((observed - 58.0).abs() < 1e-12);
        let full = average_metric(&m, 3, DivisorMode::FullT).unwrap();
        assert!((full - 34.8).abs() < 1e-12);
    }

    #[test]
    fn average_constant_column() {
        let m = EvalMatrix::from_rows(
            "em",
            3,
            vec![vec![40.0], vec![40.0, 1.0], vec![40.0, 2.0, 3.0]],
        )
        .unwrap();
        assert_eq!(average_metric(&m, 1, DivisorMode::Observed).unwrap(), 40.0);
    }

    #[test]
    fn average_matches_brute_force_on_random_matrix() {
        let mut seed = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed >> 11) as f64 / (1u64 << 53) as f64 * 100.0
        };
        let t = 6;
        let rows: Vec<Vec<f64>> = (1..=t).map(|j| (0..j).map(|_| next()).collect()).collect();
        let m = EvalMatrix::from_rows("bleu", t, rows.clone()).unwrap();
        for i in 1..=t {
            let mut sum = 0.0;
            let mut n = 0;
            for j in i..=t {
                sum += rows[j - 1][i - 1];
                n += 1;
            }
            let expected = sum / n as f64;
            let got = average_metric(&m, i, DivisorMode::Observed).unwrap();
            assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn forgetting_paper_values() {
        let m = EvalMatrix::from_rows(
            "em@1",
            5,
            vec![
                vec![57.37],
                vec![56.0, 60.93],
                vec![55.0, 57.66, 30.0],
                vec![54.0, 56.0, 29.0, 40.0],
                vec![51.73, 55.0, 28.0, 39.0, 50.0],
            ],
        )
        .unwrap();
        let f_general = forgetting(&m, 1, 5).unwrap();
        assert!((f_general - 5.64).abs() < 1e-12, "got {f_general}");
        let f_one_step = forgetting(&m, 2, 3).unwrap();
        assert!((f_one_step - 3.27).abs() < 1e-12, "got {f_one_step}");
    }

    #[test]
    fn forgetting_zero_and_ordering() {
        let m = EvalMatrix::from_rows("em", 2, vec![vec![10.0], vec![10.0, 5.0]]).unwrap();
        assert_eq!(forgetting(&m, 1, 2).unwrap(), 0.0);
        assert!(forgetting(&m, 2, 2).is_err());
        assert!(forgetting(&m, 2, 1).is_err());
    }

    #[test]
    fn forgetting_telescopes() {
        let m = matrix_3();
        for i in 1..=3usize {
            for j in (i + 1)..=4 {
                for k in (j + 1)..=5 {
                    let direct = forgetting(&m, i, k).unwrap();
                    let via = forgetting(&m, i, j).unwrap()
                        + (m.get(j, i).unwrap() - m.get(k, i).unwrap());
                    assert!((direct - via).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn report_recomputable_from_matrix() {
        let m = matrix_3();
        let domains: Vec<String> =
            ["d1", "d2", "d3", "d4", "d5"].iter().map(|s| s.to_string()).collect();
        let report =
            MetricReport::from_matrix(&m, &domains, DivisorMode::Observed, "deadbeef").unwrap();
        assert_eq!(report.forgetting.len(), 4);
        assert!(report.forgetting.get("d5").is_none());
        let rebuilt = EvalMatrix::from_rows(&report.metric, 5, report.matrix.clone()).unwrap();
        for (idx, name) in domains.iter().enumerate() {
            let a = average_metric(&rebuilt, idx + 1, DivisorMode::Observed).unwrap();
            assert_eq!(a, report.average[name]);
        }
    }
}
