//! Report serialization: JSON (complete) and CSV (aggregates plus a
//! per-trial companion file).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::runner::Report;
use crate::HarnessError;

pub fn to_json(report: &Report) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:?}"),
        _ => String::new(),
    }
}

/// Quotes a field when it contains a separator or quote.
fn text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn aggregates_csv(report: &Report) -> String {
    let mut out = String::from(
        "point,algorithm,trials,failures,accuracy_mean,accuracy_std,mse_db_mean,mse_db_std,runtime_mean,runtime_std,converged_fraction,iterations_mean\n",
    );
    for a in &report.aggregates {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            text(&a.point),
            a.algorithm,
            a.trials,
            a.failures,
            cell(Some(a.accuracy_mean)),
            cell(Some(a.accuracy_std)),
            cell(a.mse_db_mean),
            cell(a.mse_db_std),
            cell(a.runtime_mean),
            cell(a.runtime_std),
            cell(Some(a.converged_fraction)),
            cell(Some(a.iterations_mean)),
        );
    }
    out
}

pub fn trials_csv(report: &Report) -> String {
    let mut out =
        String::from("point,trial_index,algorithm,accuracy,mse_linear,mse_db,runtime_seconds,converged,iterations,error\n");
    for r in &report.per_trial {
        let s = r.score.as_ref();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            text(&r.point),
            r.trial_index,
            r.algorithm,
            cell(s.map(|s| s.accuracy)),
            cell(s.map(|s| s.mse_linear)),
            cell(s.map(|s| s.mse_db)),
            cell(s.map(|s| s.runtime_seconds)),
            r.converged,
            r.iterations,
            text(r.error.as_deref().unwrap_or("")),
        );
    }
    out
}

/// `results.csv` → `results.trials.csv`.
pub fn trials_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.trials.csv"))
}

pub fn write_file(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text)
        .map_err(|e| HarnessError::Runtime(format!("cannot write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::AlgorithmName;
    use crate::runner::{aggregate, TrialResult};
    use jfalc_core::metrics::TrialScore;

    fn report() -> Report {
        let per_trial = vec![
            TrialResult {
                point: "a,b".into(),
                trial_index: 0,
                algorithm: AlgorithmName::Kmeans,
                score: Some(TrialScore::new(0.5, f64::NAN, 0.0)),
                converged: true,
                iterations: 4,
                error: None,
            },
            TrialResult {
                point: "a,b".into(),
                trial_index: 1,
                algorithm: AlgorithmName::Kmeans,
                score: None,
                converged: false,
                iterations: 0,
                error: Some("boom".into()),
            },
        ];
        Report {
            config_hash: "h".into(),
            aggregates: aggregate(&per_trial, false),
            per_trial,
        }
    }

    #[test]
    fn json_has_the_three_sections_and_nulls_for_missing_values() {
        let v: serde_json::Value = serde_json::from_str(&to_json(&report())).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["aggregates", "config_hash", "per_trial"]);
        assert!(v["per_trial"][0]["score"]["mse_db"].is_null());
        assert!(v["per_trial"][1]["score"].is_null());
        assert_eq!(v["aggregates"][0]["failures"], 1);
    }

    #[test]
    fn csv_rows_and_quoting() {
        let r = report();
        let agg = aggregates_csv(&r);
        assert_eq!(agg.lines().count(), 2);
        assert!(agg
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("\"a,b\",kmeans,2,1,0.5,0.0,,"));
        let trials = trials_csv(&r);
        assert_eq!(trials.lines().count(), 3);
        assert!(trials.lines().nth(2).unwrap().ends_with(",false,0,boom"));
        assert_eq!(
            trials_path(Path::new("out/res.csv")),
            Path::new("out/res.trials.csv")
        );
    }
}
