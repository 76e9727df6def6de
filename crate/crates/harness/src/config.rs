//! Experiment configuration: presets, TOML overlay, validation, hashing.
//!
//! A config file is TOML. Its `experiment` key picks a preset; every other
//! key overrides the preset field of the same name (tables merge
//! recursively, arrays replace). See the README for the full grammar.

use std::path::PathBuf;

use jfalc_core::synth::{Model, SynthParams};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::algorithms::{check_params, AlgorithmName};
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Experiment {
    Table1,
    Table2,
    Table3,
    Table4,
    Table5,
    Table6,
    LambdaSweep,
    #[default]
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub name: AlgorithmName,
    #[serde(default)]
    pub params: Map<String, Value>,
}

/// One setting of a sweep: overrides applied to the base synth parameters
/// and to every algorithm that knows the parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Point {
    pub label: String,
    #[serde(default)]
    pub synth: Map<String, Value>,
    #[serde(default)]
    pub params: Map<String, Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    /// Stdout when absent.
    pub path: Option<PathBuf>,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Base instance parameters; the seed is replaced per trial.
    pub synth: SynthParams,
    pub algorithms: Vec<AlgorithmSpec>,
    /// Sweep settings; empty means a single point with the base parameters.
    pub points: Vec<Point>,
    pub trials: usize,
    pub seed: u64,
    pub parallelism: usize,
    /// Record wall-clock runtimes (makes the output nondeterministic).
    pub timing: bool,
    pub output: OutputSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Custom,
            synth: SynthParams::default(),
            algorithms: Vec::new(),
            points: Vec::new(),
            trials: 10,
            seed: 0,
            parallelism: 1,
            timing: false,
            output: OutputSpec::default(),
        }
    }
}

fn algs(names: &[AlgorithmName]) -> Vec<AlgorithmSpec> {
    names
        .iter()
        .map(|&name| AlgorithmSpec {
            name,
            params: Map::new(),
        })
        .collect()
}

fn with_params(name: AlgorithmName, params: Value) -> AlgorithmSpec {
    let Value::Object(params) = params else {
        unreachable!("literal object")
    };
    AlgorithmSpec { name, params }
}

fn point(label: String, synth: Value, params: Value) -> Point {
    let obj = |v: Value| match v {
        Value::Object(m) => m,
        _ => Map::new(),
    };
    Point {
        label,
        synth: obj(synth),
        params: obj(params),
    }
}

fn sweep(key: &str, values: &[f64]) -> Vec<Point> {
    values
        .iter()
        .map(|v| point(format!("{key}={v}"), json!({ key: v }), Value::Null))
        .collect()
}

/// The λ grid of the sweep preset: nine log-spaced values from 1 to 10⁴.
pub fn lambda_grid() -> Vec<f64> {
    (0..9).map(|e| 10f64.powf(e as f64 / 2.0)).collect()
}

impl ExperimentConfig {
    pub fn preset(experiment: Experiment) -> Self {
        use AlgorithmName::*;
        let base = Self {
            experiment,
            ..Self::default()
        };
        let snr_grid = [3.0, 6.0, 9.0, 12.0, 15.0, 18.0];
        match experiment {
            Experiment::Custom => base,
            Experiment::Table1 | Experiment::Table2 => {
                let (synth, points) = if experiment == Experiment::Table1 {
                    (
                        SynthParams {
                            snr1_db: Some(15.0),
                            ..SynthParams::default()
                        },
                        sweep("snr2_db", &snr_grid),
                    )
                } else {
                    (
                        SynthParams {
                            snr2_db: Some(10.0),
                            ..SynthParams::default()
                        },
                        sweep("snr1_db", &[5.0, 10.0, 15.0, 20.0, 25.0, 30.0]),
                    )
                };
                let mut algorithms = algs(&[Kmeans, Rkm, Fkm, Jnkm]);
                algorithms.push(with_params(Jvkm, json!({ "normalize_l1": true })));
                algorithms.extend(algs(&[NmfKm]));
                Self {
                    synth,
                    algorithms,
                    points,
                    ..base
                }
            }
            Experiment::Table3 => Self {
                synth: SynthParams {
                    snr1_db: Some(6.0),
                    snr2_db: Some(8.0),
                    ..SynthParams::default()
                },
                algorithms: algs(&[Rkm, Fkm, Jnkm]),
                points: (5..=11)
                    .map(|k| {
                        point(
                            format!("k={k}"),
                            json!({ "k": k, "j": 100 * k }),
                            Value::Null,
                        )
                    })
                    .collect(),
                ..base
            },
            Experiment::Table4 => Self {
                synth: SynthParams {
                    model: Model::Volmin,
                    snr1_db: Some(15.0),
                    outlier_fraction: 0.0,
                    ..SynthParams::default()
                },
                algorithms: algs(&[Kmeans, Rkm, Fkm, Jnkm, Jvkm, VolminKm]),
                points: sweep("snr2_db", &snr_grid),
                ..base
            },
            Experiment::Table5 => Self {
                synth: SynthParams {
                    model: Model::Tensor,
                    i: 30,
                    j: 30,
                    l: 30,
                    snr1_db: Some(20.0),
                    snr2_db: Some(25.0),
                    outlier_fraction: 0.0,
                    outlier_slabs: 2,
                    ..SynthParams::default()
                },
                algorithms: algs(&[Jtkm, Ntf]),
                points: (2..=8)
                    .map(|f| point(format!("f=k={f}"), json!({ "f": f, "k": f }), Value::Null))
                    .collect(),
                ..base
            },
            Experiment::Table6 => Self {
                synth: SynthParams {
                    model: Model::Subspace,
                    i: 10,
                    j: 200,
                    f: 4,
                    k: 2,
                    snr1_db: Some(30.0),
                    outlier_fraction: 0.0,
                    ranks: vec![2, 2],
                    ..SynthParams::default()
                },
                algorithms: algs(&[Jnks, NmfKm]),
                points: sweep("snr2_db", &[3.0, 5.0, 7.0, 9.0, 11.0, 13.0, 15.0]),
                ..base
            },
            Experiment::LambdaSweep => Self {
                synth: SynthParams {
                    i: 10,
                    j: 100,
                    f: 2,
                    k: 2,
                    snr1_db: Some(5.0),
                    snr2_db: Some(30.0),
                    ..SynthParams::default()
                },
                algorithms: algs(&[Jnkm]),
                points: lambda_grid()
                    .into_iter()
                    .map(|l| point(format!("lambda={l}"), Value::Null, json!({ "lambda": l })))
                    .collect(),
                ..base
            },
        }
    }

    /// Resolves a TOML document against the preset named by its
    /// `experiment` key (`custom` when absent).
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let doc: toml::Table =
            toml::from_str(text).map_err(|e| HarnessError::Validation(format!("config: {e}")))?;
        let overlay =
            serde_json::to_value(&doc).map_err(|e| HarnessError::Validation(e.to_string()))?;
        let experiment = match overlay.get("experiment") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| HarnessError::Validation(format!("experiment: {e}")))?,
            None => Experiment::Custom,
        };
        let mut base = serde_json::to_value(Self::preset(experiment)).expect("config serializes");
        merge(&mut base, overlay);
        serde_json::from_value(base).map_err(|e| HarnessError::Validation(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// The points to run; a single unnamed point when none are listed.
    pub fn resolved_points(&self) -> Vec<Point> {
        if self.points.is_empty() {
            vec![point("base".into(), Value::Null, Value::Null)]
        } else {
            self.points.clone()
        }
    }

    /// Base synth parameters with the point's overrides applied.
    pub fn synth_for(&self, point: &Point) -> Result<SynthParams, HarnessError> {
        let mut v = serde_json::to_value(&self.synth).expect("synth serializes");
        merge(&mut v, Value::Object(point.synth.clone()));
        serde_json::from_value(v)
            .map_err(|e| HarnessError::Validation(format!("point {:?}: {e}", point.label)))
    }

    /// Parameters of `alg` at `point`: the point's keys that `alg` knows
    /// override the algorithm's own.
    pub fn params_for(&self, alg: &AlgorithmSpec, point: &Point) -> Map<String, Value> {
        let known = alg.name.known_keys();
        let mut p = alg.params.clone();
        for (k, v) in &point.params {
            if known.contains(k) {
                p.insert(k.clone(), v.clone());
            }
        }
        p
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Validation(m));
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.parallelism == 0 {
            return bad("parallelism must be >= 1".into());
        }
        if self.algorithms.is_empty() {
            return bad("no algorithms listed".into());
        }
        let points = self.resolved_points();
        let mut labels = std::collections::BTreeSet::new();
        for p in &points {
            if !labels.insert(p.label.as_str()) {
                return bad(format!("duplicate point label {:?}", p.label));
            }
            if let Some(key) = p.params.keys().find(|k| {
                !self
                    .algorithms
                    .iter()
                    .any(|a| a.name.known_keys().contains(*k))
            }) {
                return bad(format!(
                    "point {:?}: no listed algorithm takes {key:?}",
                    p.label
                ));
            }
            let synth = self.synth_for(p)?;
            synth
                .validate()
                .map_err(|e| HarnessError::Validation(format!("point {:?}: {e}", p.label)))?;
            let tensor = synth.model == Model::Tensor;
            for a in &self.algorithms {
                if !a.name.accepts(tensor) {
                    return bad(format!(
                        "{} does not apply to the {:?} model",
                        a.name, synth.model
                    ));
                }
                check_params(a.name, &self.params_for(a, p))?;
            }
        }
        Ok(())
    }

    /// SHA-256 of everything that determines the emitted numbers; the
    /// worker count and output destination are excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.parallelism = 1;
        c.output = OutputSpec::default();
        let text = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Recursive object merge; non-object values replace.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [Experiment; 8] = [
        Experiment::Table1,
        Experiment::Table2,
        Experiment::Table3,
        Experiment::Table4,
        Experiment::Table5,
        Experiment::Table6,
        Experiment::LambdaSweep,
        Experiment::Custom,
    ];

    #[test]
    fn presets_validate_and_round_trip() {
        for e in ALL {
            let c = ExperimentConfig::preset(e);
            if e == Experiment::Custom {
                assert!(c.validate().is_err());
                continue;
            }
            c.validate().unwrap();
            let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
            assert_eq!(back, c, "{e:?}");
            assert_eq!(back.hash(), c.hash());
        }
    }

    #[test]
    fn preset_instances_match_their_captions() {
        let t1 = ExperimentConfig::preset(Experiment::Table1);
        let s = t1.synth_for(&t1.points[2]).unwrap();
        assert_eq!((s.i, s.j, s.f, s.k), (50, 1000, 7, 10));
        assert_eq!(
            (s.snr1_db, s.snr2_db, s.outlier_fraction),
            (Some(15.0), Some(9.0), 0.03)
        );
        let t3 = ExperimentConfig::preset(Experiment::Table3);
        let s = t3.synth_for(&t3.points[0]).unwrap();
        assert_eq!(
            (s.j, s.k, s.snr1_db, s.snr2_db),
            (500, 5, Some(6.0), Some(8.0))
        );
        let t5 = ExperimentConfig::preset(Experiment::Table5);
        let s = t5.synth_for(&t5.points[0]).unwrap();
        assert_eq!(
            (s.i, s.j, s.l, s.f, s.k, s.outlier_slabs),
            (30, 30, 30, 2, 2, 2)
        );
        let t6 = ExperimentConfig::preset(Experiment::Table6);
        let s = t6.synth_for(t6.points.last().unwrap()).unwrap();
        assert_eq!(
            (s.i, s.j, s.f, s.k, s.snr1_db, s.snr2_db),
            (10, 200, 4, 2, Some(30.0), Some(15.0))
        );
    }

    #[test]
    fn lambda_grid_spans_four_decades() {
        let g = lambda_grid();
        assert_eq!(g.first(), Some(&1.0));
        assert!((g.last().unwrap() - 1e4).abs() < 1e-9);
        for w in g.windows(2) {
            assert!((w[1] / w[0] - 10f64.sqrt()).abs() < 1e-12);
        }
        let c = ExperimentConfig::preset(Experiment::LambdaSweep);
        assert_eq!(c.resolved_points().len(), 9);
        let p = c.params_for(&c.algorithms[0], &c.points[8]);
        assert!((p["lambda"].as_f64().unwrap() - 1e4).abs() < 1e-9);
    }

    #[test]
    fn overlay_merges_into_the_preset() {
        let c = ExperimentConfig::from_toml(
            "experiment = \"table1\"\ntrials = 3\n[synth]\nsnr1_db = 20.0\n[[algorithms]]\nname = \"jnkm\"\nparams = { lambda = 2.0 }\n",
        )
        .unwrap();
        assert_eq!(c.trials, 3);
        assert_eq!(c.synth.snr1_db, Some(20.0));
        assert_eq!(c.synth.i, 50);
        assert_eq!(c.points.len(), 6);
        assert_eq!(c.algorithms.len(), 1);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for text in [
            "trials = 2\n",
            "experiment = \"table9\"\n",
            "bogus = 1\n",
            "[[algorithms]]\nname = \"magic\"\n",
            "trials = 0\n[[algorithms]]\nname = \"kmeans\"\n",
            "[[algorithms]]\nname = \"kmeans\"\nparams = { lambda = 1.0 }\n",
            "[[algorithms]]\nname = \"jtkm\"\n",
            "[synth]\nk = 0\n[[algorithms]]\nname = \"kmeans\"\n",
            "not toml ===",
        ] {
            let r = ExperimentConfig::from_toml(text).and_then(|c| c.validate());
            assert!(matches!(r, Err(HarnessError::Validation(_))), "{text}");
        }
    }

    #[test]
    fn hash_ignores_workers_and_destination() {
        let a = ExperimentConfig::preset(Experiment::Table6);
        let mut b = a.clone();
        b.parallelism = 8;
        b.output.path = Some("elsewhere.json".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
