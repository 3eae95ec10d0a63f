//! Report files: run JSON, per-metric JSON, heatmap CSVs, summary CSV.
//!
//! Report files carry no timestamps; the wall-clock stamp lives in the
//! separate run_info.json so reports from identical runs are byte-identical.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{average_metric, forgetting, ContinualReport, EvalMatrix};

/// Write every artifact of a continual run into `out_dir`.
pub fn emit_report(report: &ContinualReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", out_dir.display())))?;
    let json = serde_json::to_string_pretty(report)? + "\n";
    fs::write(out_dir.join("report.json"), json)?;

    for metric_report in &report.reports {
        let name = &metric_report.metric;
        let task = task_of(name);
        fs::write(
            out_dir.join(format!("metric_{task}_{name}.json")),
            serde_json::to_string_pretty(metric_report)? + "\n",
        )?;
        let mut csv = String::from("step");
        for d in &report.domains {
            csv.push(',');
            csv.push_str(d);
        }
        csv.push('\n');
        let t = report.domains.len();
        for (j, row) in metric_report.matrix.iter().enumerate() {
            csv.push_str(&(j + 1).to_string());
            for i in 0..t {
                csv.push(',');
                if let Some(v) = row.get(i) {
                    csv.push_str(&v.to_string());
                }
            }
            csv.push('\n');
        }
        fs::write(out_dir.join(format!("heatmap_{task}_{name}.csv")), csv)?;
    }

    fs::write(out_dir.join("summary.csv"), summary_csv(&[report], false))?;
    Ok(())
}

fn task_of(metric: &str) -> &'static str {
    match metric {
        "em@1" | "em@5" | "em@10" => "api_call",
        _ => "api_usage",
    }
}

/// Summary rows of A and F per (strategy, model, task, metric, domain).
pub fn summary_csv(reports: &[&ContinualReport], _merged: bool) -> String {
    let mut csv = String::from("strategy,model,task,metric,domain,A,F\n");
    for report in reports {
        for mr in &report.reports {
            for domain in &report.domains {
                let a = mr.average.get(domain).map(|v| v.to_string()).unwrap_or_default();
                let f = mr.forgetting.get(domain).map(|v| v.to_string()).unwrap_or_default();
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    report.strategy,
                    report.model_kind,
                    task_of(&mr.metric),
                    mr.metric,
                    domain,
                    a,
                    f
                ));
            }
        }
    }
    csv
}

/// Write the wall-clock sidecar; isolated so reports stay byte-identical.
pub fn emit_run_info(out_dir: &Path) -> Result<()> {
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    fs::write(
        out_dir.join("run_info.json"),
        serde_json::to_string_pretty(&serde_json::json!({ "timestamp_unix": now }))? + "\n",
    )?;
    Ok(())
}

/// Load a report back from a run directory.
pub fn load_report(dir: &Path) -> Result<ContinualReport> {
    let text = fs::read_to_string(dir.join("report.json"))
        .map_err(|e| Error::Data(format!("cannot read {}/report.json: {e}", dir.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Recompute A and F from a stored matrix and check them against the stored
/// values; used by the round-trip audit and the merge command.
pub fn verify_report(report: &ContinualReport) -> Result<()> {
    let t = report.domains.len();
    for mr in &report.reports {
        let matrix = EvalMatrix::from_rows(&mr.metric, t, mr.matrix.clone())?;
        for (idx, domain) in report.domains.iter().enumerate() {
            let i = idx + 1;
            let a = average_metric(&matrix, i, mr.divisor_mode)?;
            let stored = mr.average.get(domain).copied().ok_or_else(|| {
                Error::Data(format!("report missing A for domain {domain}"))
            })?;
            if a != stored {
                return Err(Error::Data(format!(
                    "A mismatch for {}/{domain}: {a} vs stored {stored}",
                    mr.metric
                )));
            }
            if i < t {
                let f = forgetting(&matrix, i, t)?;
                let stored = mr.forgetting.get(domain).copied().ok_or_else(|| {
                    Error::Data(format!("report missing F for domain {domain}"))
                })?;
                if f != stored {
                    return Err(Error::Data(format!(
                        "F mismatch for {}/{domain}: {f} vs stored {stored}",
                        mr.metric
                    )));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{DivisorMode, MetricReport};
    use std::collections::BTreeMap;

    fn toy_report() -> ContinualReport {
        let matrix = EvalMatrix::from_rows(
            "em@1",
            2,
            vec![vec![50.0], vec![45.0, 60.0]],
        )
        .unwrap();
        let domains = vec!["A".to_string(), "B".to_string()];
        let mr =
            MetricReport::from_matrix(&matrix, &domains, DivisorMode::Observed, "cafe").unwrap();
        ContinualReport {
            strategy: "naive".into(),
            model_kind: "decoder".into(),
            domains,
            seeds: BTreeMap::new(),
            config_hash: "cafe".into(),
            reports: vec![mr],
            diagnostics: serde_json::json!({}),
        }
    }

    #[test]
    fn emit_and_reload_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let report = toy_report();
        emit_report(&report, dir.path()).unwrap();
        let back = load_report(dir.path()).unwrap();
        verify_report(&back).unwrap();
        assert_eq!(back.config_hash, report.config_hash);

        let heatmap = fs::read_to_string(dir.path().join("heatmap_api_call_em@1.csv")).unwrap();
        let lines: Vec<&str> = heatmap.lines().collect();
        assert_eq!(lines.len(), 3); // header + 2 steps
        assert_eq!(lines[0], "step,A,B");
        assert_eq!(lines[1], "1,50,"); // blank above the diagonal
        assert_eq!(lines[2], "2,45,60");
    }

    #[test]
    fn verify_detects_tampering() {
        let mut report = toy_report();
        report.reports[0].average.insert("A".into(), 99.0);
        assert!(verify_report(&report).is_err());
    }
}
