//! Seeded Monte-Carlo execution and aggregation.

use std::time::Instant;

use jfalc_core::metrics::{clustering_accuracy_masked, matched_mse, TrialScore};
use jfalc_core::rng;
use jfalc_core::synth::{generate, GroundTruth, SynthParams};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{self, AlgorithmName};
use crate::config::ExperimentConfig;
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub point: String,
    pub trial_index: usize,
    pub algorithm: AlgorithmName,
    /// Absent when the algorithm failed; `mse_*` are null for algorithms
    /// without a factor estimate.
    pub score: Option<TrialScore>,
    pub converged: bool,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub point: String,
    pub algorithm: AlgorithmName,
    pub trials: usize,
    pub failures: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub mse_db_mean: Option<f64>,
    pub mse_db_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub runtime_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub runtime_std: Option<f64>,
    pub converged_fraction: f64,
    pub iterations_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub per_trial: Vec<TrialResult>,
    pub aggregates: Vec<Aggregate>,
}

/// Seed of the instance of trial `trial`; shared by every point so that a
/// sweep compares settings on common random numbers.
pub fn instance_seed(cfg: &ExperimentConfig, trial: usize) -> u64 {
    rng::derive_seed(cfg.seed, &[rng::label("instance"), trial as u64])
}

/// Seed handed to every algorithm in trial `trial`.
pub fn solver_seed(cfg: &ExperimentConfig, trial: usize) -> u64 {
    rng::derive_seed(cfg.seed, &[rng::label("solver"), trial as u64])
}

/// The instance of (`point`, `trial`).
pub fn instance(
    cfg: &ExperimentConfig,
    point: usize,
    trial: usize,
) -> Result<(SynthParams, GroundTruth), HarnessError> {
    let points = cfg.resolved_points();
    let p = points.get(point).ok_or_else(|| {
        HarnessError::Validation(format!("point {point} out of range (0..{})", points.len()))
    })?;
    let mut synth = cfg.synth_for(p)?;
    synth.seed = instance_seed(cfg, trial);
    let truth =
        generate(&synth).map_err(|e| HarnessError::Runtime(format!("instance generation: {e}")))?;
    Ok((synth, truth))
}

fn score(
    truth: &GroundTruth,
    out: &algorithms::Outcome,
    runtime: f64,
) -> Result<TrialScore, HarnessError> {
    let failed = |e: jfalc_core::Error| HarnessError::Runtime(format!("scoring: {e}"));
    let acc = clustering_accuracy_masked(truth.labels().labels(), &out.labels, &truth.excluded())
        .map_err(failed)?;
    let mse = match &out.factor {
        Some(w) => matched_mse(truth.scored_factor(), w).map_err(failed)?,
        None => f64::NAN,
    };
    Ok(TrialScore::new(acc, mse, runtime))
}

/// Every listed algorithm on the instance of (`point`, `trial`). A failing
/// algorithm yields a result with an error message instead of a score.
pub fn run_trial(
    cfg: &ExperimentConfig,
    point: usize,
    trial: usize,
) -> Result<Vec<TrialResult>, HarnessError> {
    let points = cfg.resolved_points();
    let label = points
        .get(point)
        .ok_or_else(|| HarnessError::Validation(format!("point {point} out of range")))?
        .label
        .clone();
    let failure = |alg: AlgorithmName, e: String| TrialResult {
        point: label.clone(),
        trial_index: trial,
        algorithm: alg,
        score: None,
        converged: false,
        iterations: 0,
        error: Some(e),
    };
    let (synth, truth) = match instance(cfg, point, trial) {
        Ok(v) => v,
        Err(HarnessError::Runtime(e)) => {
            return Ok(cfg
                .algorithms
                .iter()
                .map(|a| failure(a.name, e.clone()))
                .collect());
        }
        Err(e) => return Err(e),
    };
    let seed = solver_seed(cfg, trial);
    let mut results = Vec::with_capacity(cfg.algorithms.len());
    for alg in &cfg.algorithms {
        let params = cfg.params_for(alg, &points[point]);
        let start = Instant::now();
        let outcome = algorithms::run(alg.name, &params, &synth, &truth, seed);
        let runtime = if cfg.timing {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        let result = outcome.and_then(|out| {
            let s = score(&truth, &out, runtime)?;
            Ok(TrialResult {
                point: label.clone(),
                trial_index: trial,
                algorithm: alg.name,
                score: Some(s),
                converged: out.converged,
                iterations: out.iterations,
                error: None,
            })
        });
        results.push(match result {
            Ok(r) => r,
            Err(HarnessError::Validation(e)) => return Err(HarnessError::Validation(e)),
            Err(e) => failure(alg.name, e.to_string()),
        });
    }
    Ok(results)
}

fn mean_std(v: &[f64]) -> Option<(f64, f64)> {
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

/// Per-(point, algorithm) means and sample standard deviations, in the
/// order the results are given.
pub fn aggregate(results: &[TrialResult], timing: bool) -> Vec<Aggregate> {
    let mut groups: Vec<(&str, AlgorithmName, Vec<&TrialResult>)> = Vec::new();
    for r in results {
        match groups
            .iter_mut()
            .find(|g| g.0 == r.point && g.1 == r.algorithm)
        {
            Some(g) => g.2.push(r),
            None => groups.push((&r.point, r.algorithm, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(point, algorithm, rs)| {
            let ok: Vec<&TrialScore> = rs.iter().filter_map(|r| r.score.as_ref()).collect();
            let acc: Vec<f64> = ok.iter().map(|s| s.accuracy).collect();
            let mse: Vec<f64> = ok
                .iter()
                .map(|s| s.mse_db)
                .filter(|v| v.is_finite())
                .collect();
            let rt: Vec<f64> = ok.iter().map(|s| s.runtime_seconds).collect();
            let (accuracy_mean, accuracy_std) = mean_std(&acc).unwrap_or((f64::NAN, f64::NAN));
            let mse = mean_std(&mse);
            let rt = if timing { mean_std(&rt) } else { None };
            let n = rs.len() as f64;
            Aggregate {
                point: point.to_string(),
                algorithm,
                trials: rs.len(),
                failures: rs.len() - ok.len(),
                accuracy_mean,
                accuracy_std,
                mse_db_mean: mse.map(|m| m.0),
                mse_db_std: mse.map(|m| m.1),
                runtime_mean: rt.map(|m| m.0),
                runtime_std: rt.map(|m| m.1),
                converged_fraction: rs.iter().filter(|r| r.converged).count() as f64 / n,
                iterations_mean: rs.iter().map(|r| r.iterations as f64).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Runs every (point, trial) on a pool of `cfg.parallelism` workers.
/// Results are sorted by (point, algorithm, trial) before aggregation, so
/// the report does not depend on the worker count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report, HarnessError> {
    cfg.validate()?;
    let points = cfg.resolved_points();
    let work: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..cfg.trials).map(move |t| (p, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| HarnessError::Runtime(format!("worker pool: {e}")))?;
    let batches: Vec<Result<Vec<TrialResult>, HarnessError>> = pool.install(|| {
        work.par_iter()
            .map(|&(p, t)| run_trial(cfg, p, t))
            .collect()
    });
    let mut per_trial = Vec::with_capacity(work.len() * cfg.algorithms.len());
    for b in batches {
        per_trial.extend(b?);
    }
    let point_rank = |label: &str| {
        points
            .iter()
            .position(|p| p.label == label)
            .unwrap_or(usize::MAX)
    };
    let alg_rank = |a: AlgorithmName| {
        cfg.algorithms
            .iter()
            .position(|s| s.name == a)
            .unwrap_or(usize::MAX)
    };
    per_trial.sort_by_key(|r| (point_rank(&r.point), alg_rank(r.algorithm), r.trial_index));
    let aggregates = aggregate(&per_trial, cfg.timing);
    Ok(Report {
        config_hash: cfg.hash(),
        per_trial,
        aggregates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{AlgorithmSpec, Experiment};
    use jfalc_core::synth::Model;
    use proptest::prelude::*;

    fn tiny(algs: &[AlgorithmName], trials: usize) -> ExperimentConfig {
        ExperimentConfig {
            synth: SynthParams {
                model: Model::Nmf,
                i: 12,
                j: 60,
                f: 3,
                k: 3,
                outlier_fraction: 0.0,
                ..SynthParams::default()
            }
            .noiseless(),
            algorithms: algs
                .iter()
                .map(|&name| AlgorithmSpec {
                    name,
                    params: Default::default(),
                })
                .collect(),
            trials,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn kmeans_on_noiseless_clusters_is_exact() {
        let cfg = tiny(&[AlgorithmName::Kmeans], 1);
        let r = run_trial(&cfg, 0, 0).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].score.unwrap().accuracy, 1.0);
        assert!(r[0].score.unwrap().mse_db.is_nan());
    }

    #[test]
    fn trials_are_reproducible() {
        let cfg = tiny(&[AlgorithmName::Kmeans, AlgorithmName::NmfKm], 2);
        let json = || serde_json::to_string(&run_trial(&cfg, 0, 1).unwrap()).unwrap();
        assert_eq!(json(), json());
        assert_ne!(instance_seed(&cfg, 0), instance_seed(&cfg, 1));
    }

    #[test]
    fn counts_of_results_and_aggregates() {
        let cfg = tiny(&[AlgorithmName::Kmeans, AlgorithmName::NmfKm], 3);
        let rep = run_experiment(&cfg).unwrap();
        assert_eq!(rep.per_trial.len(), 6);
        assert_eq!(rep.aggregates.len(), 2);
        assert_eq!(rep.aggregates[0].algorithm, AlgorithmName::Kmeans);
        assert!(rep.aggregates[1].mse_db_mean.is_some());
        assert!(rep.aggregates[0].runtime_mean.is_none());
    }

    #[test]
    fn empty_algorithm_list_fails_before_running() {
        let cfg = tiny(&[], 1);
        assert!(matches!(
            run_experiment(&cfg),
            Err(HarnessError::Validation(_))
        ));
    }

    #[test]
    fn worker_count_does_not_change_the_report() {
        let mut cfg = ExperimentConfig::preset(Experiment::Table6);
        cfg.trials = 2;
        cfg.points.truncate(2);
        let serial = run_experiment(&cfg).unwrap();
        cfg.parallelism = 4;
        assert_eq!(run_experiment(&cfg).unwrap(), serial);
    }

    #[test]
    fn algorithm_failures_are_recorded() {
        let mut cfg = tiny(&[AlgorithmName::Jnkm, AlgorithmName::Kmeans], 1);
        // a negative weight makes the solver reject its parameters
        cfg.algorithms[0]
            .params
            .insert("lambda".into(), (-1.0).into());
        let r = run_trial(&cfg, 0, 0).unwrap();
        assert!(r[0].score.is_none() && r[0].error.is_some());
        assert!(r[1].score.is_some());
    }

    fn result(point: &str, alg: AlgorithmName, t: usize, acc: f64) -> TrialResult {
        TrialResult {
            point: point.into(),
            trial_index: t,
            algorithm: alg,
            score: Some(TrialScore::new(acc, 0.1, 0.0)),
            converged: true,
            iterations: 3,
            error: None,
        }
    }

    proptest! {
        #[test]
        fn aggregates_match_direct_statistics(accs in proptest::collection::vec(0.0f64..1.0, 1..20)) {
            let rs: Vec<TrialResult> = accs.iter().enumerate().map(|(t, &a)| result("p", AlgorithmName::Kmeans, t, a)).collect();
            let agg = aggregate(&rs, false);
            prop_assert_eq!(agg.len(), 1);
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            prop_assert!((agg[0].accuracy_mean - mean).abs() < 1e-12);
            prop_assert!(agg[0].accuracy_std >= 0.0);
            prop_assert!((agg[0].mse_db_mean.unwrap() + 10.0).abs() < 1e-12);
        }
    }
}
