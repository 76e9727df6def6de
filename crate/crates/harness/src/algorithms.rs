//! Algorithm registry: name, typed parameters, and a uniform entry point.

use std::collections::BTreeSet;

use jfalc_core::baselines::{
    fkm_solve, nmf_km, rkm_solve, volmin_km, ProjectionOptions, TwoStageOptions,
};
use jfalc_core::clustering::{kmeans_lloyd, KmeansInit};
use jfalc_core::linalg::{DenseMatrix, Mode};
use jfalc_core::solvers::jnkm::{jnkm_solve, JnkmInit, JnkmParams};
use jfalc_core::solvers::jnks::{jnks_solve, JnksInit, JnksParams};
use jfalc_core::solvers::jtkm::{
    jtkm_solve, ntf_labels, ntf_solve, JtkmInit, JtkmParams, NtfOptions, Regularizer,
};
use jfalc_core::solvers::jvkm::{jvkm_solve, JvkmInit, JvkmParams};
use jfalc_core::synth::{GroundTruth, SynthParams};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmName {
    Kmeans,
    Rkm,
    Fkm,
    NmfKm,
    VolminKm,
    Ntf,
    Jnkm,
    Jvkm,
    Jtkm,
    Jnks,
}

impl AlgorithmName {
    pub const ALL: [AlgorithmName; 10] = [
        Self::Kmeans,
        Self::Rkm,
        Self::Fkm,
        Self::NmfKm,
        Self::VolminKm,
        Self::Ntf,
        Self::Jnkm,
        Self::Jvkm,
        Self::Jtkm,
        Self::Jnks,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Kmeans => "kmeans",
            Self::Rkm => "rkm",
            Self::Fkm => "fkm",
            Self::NmfKm => "nmf_km",
            Self::VolminKm => "volmin_km",
            Self::Ntf => "ntf",
            Self::Jnkm => "jnkm",
            Self::Jvkm => "jvkm",
            Self::Jtkm => "jtkm",
            Self::Jnks => "jnks",
        }
    }

    /// Whether the algorithm applies to matrix and/or tensor instances.
    pub fn accepts(self, tensor: bool) -> bool {
        match self {
            Self::Kmeans | Self::Rkm | Self::Fkm => true,
            Self::Ntf | Self::Jtkm => tensor,
            _ => !tensor,
        }
    }

    /// Parameter names understood by this algorithm.
    pub fn known_keys(self) -> BTreeSet<String> {
        let v = match self {
            Self::Kmeans => serde_json::to_value(KmeansParams::default()),
            Self::Rkm | Self::Fkm => serde_json::to_value(ProjectionOptions::default()),
            Self::NmfKm => serde_json::to_value(TwoStageOptions::default()),
            Self::VolminKm | Self::Jvkm => serde_json::to_value(VolminParams::default()),
            Self::Ntf => serde_json::to_value(NtfParams::default()),
            Self::Jnkm => serde_json::to_value(JnkmParams::default()),
            Self::Jtkm => serde_json::to_value(JtkmParams::default()),
            Self::Jnks => serde_json::to_value(JnksParams::default()),
        };
        match v {
            Ok(Value::Object(m)) => m.keys().cloned().collect(),
            _ => BTreeSet::new(),
        }
    }
}

impl std::fmt::Display for AlgorithmName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KmeansParams {
    pub max_iters: usize,
}

impl Default for KmeansParams {
    fn default() -> Self {
        Self { max_iters: 300 }
    }
}

/// VolMin-based solvers may rescale the data columns to unit ℓ1 norm first,
/// which maps nonnegative data onto the simplex model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VolminParams {
    pub normalize_l1: bool,
    #[serde(flatten)]
    pub solver: JvkmParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NtfParams {
    pub eta: f64,
    pub reg: Regularizer,
    #[serde(flatten)]
    pub options: NtfOptions,
}

impl Default for NtfParams {
    fn default() -> Self {
        Self {
            eta: 0.1,
            reg: Regularizer::Fro,
            options: NtfOptions::default(),
        }
    }
}

/// What an algorithm reports back for scoring.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub labels: Vec<usize>,
    /// Estimate of the scored factor (`W`, or `A` for tensors).
    pub factor: Option<DenseMatrix>,
    pub converged: bool,
    pub iterations: usize,
}

fn typed<T: DeserializeOwned>(
    name: AlgorithmName,
    params: &Map<String, Value>,
    overrides: Value,
) -> Result<T, HarnessError> {
    let mut merged = params.clone();
    if let Value::Object(o) = overrides {
        merged.extend(o);
    }
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| HarnessError::Validation(format!("parameters of {name}: {e}")))
}

/// Columns of `X`, or the mode-one slices of a tensor as columns.
fn points(truth: &GroundTruth) -> DenseMatrix {
    match truth {
        GroundTruth::Matrix(t) => t.x.clone(),
        GroundTruth::Tensor(t) => t.x.unfold(Mode::One),
    }
}

fn unit_l1_columns(x: &DenseMatrix) -> DenseMatrix {
    let mut y = x.clone();
    for mut col in y.column_iter_mut() {
        let s: f64 = col.iter().map(|v| v.abs()).sum();
        if s > 0.0 {
            col /= s;
        }
    }
    y
}

/// Checks that `params` deserializes for `name`, without running anything.
pub fn check_params(name: AlgorithmName, params: &Map<String, Value>) -> Result<(), HarnessError> {
    let known = name.known_keys();
    if let Some(bad) = params.keys().find(|k| !known.contains(*k)) {
        return Err(HarnessError::Validation(format!(
            "unknown parameter {bad:?} for {name}"
        )));
    }
    let z = Value::Null;
    match name {
        AlgorithmName::Kmeans => typed::<KmeansParams>(name, params, z).map(drop),
        AlgorithmName::Rkm | AlgorithmName::Fkm => {
            typed::<ProjectionOptions>(name, params, z).map(drop)
        }
        AlgorithmName::NmfKm => typed::<TwoStageOptions>(name, params, z).map(drop),
        AlgorithmName::VolminKm | AlgorithmName::Jvkm => {
            typed::<VolminParams>(name, params, z).map(drop)
        }
        AlgorithmName::Ntf => typed::<NtfParams>(name, params, z).map(drop),
        AlgorithmName::Jnkm => typed::<JnkmParams>(name, params, z).map(drop),
        AlgorithmName::Jtkm => typed::<JtkmParams>(name, params, z).map(drop),
        AlgorithmName::Jnks => typed::<JnksParams>(name, params, z).map(drop),
    }
}

/// Runs `name` on `truth`. Ranks and cluster counts come from `synth`;
/// every random choice is drawn from `seed`.
pub fn run(
    name: AlgorithmName,
    params: &Map<String, Value>,
    synth: &SynthParams,
    truth: &GroundTruth,
    seed: u64,
) -> Result<Outcome, HarnessError> {
    let tensor = matches!(truth, GroundTruth::Tensor(_));
    if !name.accepts(tensor) {
        return Err(HarnessError::Validation(format!(
            "{name} does not apply to {} instances",
            if tensor { "tensor" } else { "matrix" }
        )));
    }
    let (f, k) = (synth.f, synth.k);
    let fk = serde_json::json!({ "f": f, "k": k });
    let failed = |e: jfalc_core::Error| HarnessError::Runtime(format!("{name}: {e}"));
    let matrix = |t: &GroundTruth| match t {
        GroundTruth::Matrix(m) => m.x.clone(),
        GroundTruth::Tensor(_) => unreachable!("checked by accepts"),
    };
    let tensor_x = |t: &GroundTruth| match t {
        GroundTruth::Tensor(m) => m.x.clone(),
        GroundTruth::Matrix(_) => unreachable!("checked by accepts"),
    };
    let out = match name {
        AlgorithmName::Kmeans => {
            let p: KmeansParams = typed(name, params, Value::Null)?;
            let r = kmeans_lloyd(
                &points(truth),
                k,
                KmeansInit::PlusPlus { seed },
                p.max_iters,
            )
            .map_err(failed)?;
            Outcome {
                labels: r.assignment.into_labels(),
                factor: None,
                converged: r.iterations < p.max_iters,
                iterations: r.iterations,
            }
        }
        AlgorithmName::Rkm | AlgorithmName::Fkm => {
            let p: ProjectionOptions = typed(name, params, serde_json::json!({ "seed": seed }))?;
            let x = points(truth);
            let r = if name == AlgorithmName::Rkm {
                rkm_solve(&x, f, k, &p)
            } else {
                fkm_solve(&x, f, k, &p)
            }
            .map_err(failed)?;
            Outcome {
                labels: r.s.into_labels(),
                factor: None,
                converged: r.info.converged,
                iterations: r.info.iterations,
            }
        }
        AlgorithmName::NmfKm => {
            let mut p: TwoStageOptions = typed(name, params, serde_json::json!({ "seed": seed }))?;
            p.nmf.seed = seed;
            let r = nmf_km(&matrix(truth), f, k, &p).map_err(failed)?;
            Outcome {
                labels: r.assignment.into_labels(),
                factor: Some(r.w),
                converged: r.info.converged,
                iterations: r.info.iterations,
            }
        }
        AlgorithmName::VolminKm | AlgorithmName::Jvkm => {
            let p: VolminParams = typed(name, params, fk)?;
            let mut x = matrix(truth);
            if p.normalize_l1 {
                x = unit_l1_columns(&x);
            }
            if name == AlgorithmName::VolminKm {
                let r = volmin_km(&x, &p.solver, seed).map_err(failed)?;
                Outcome {
                    labels: r.assignment.into_labels(),
                    factor: Some(r.w),
                    converged: r.info.converged,
                    iterations: r.info.iterations,
                }
            } else {
                let r = jvkm_solve(&x, &p.solver, JvkmInit::Random { seed }).map_err(failed)?;
                Outcome {
                    labels: r.s.into_labels(),
                    factor: Some(r.w),
                    converged: r.info.converged,
                    iterations: r.info.iterations,
                }
            }
        }
        AlgorithmName::Jnkm => {
            let p: JnkmParams = typed(name, params, fk)?;
            let r = jnkm_solve(&matrix(truth), &p, JnkmInit::Nmf { seed }).map_err(failed)?;
            Outcome {
                labels: r.s.into_labels(),
                factor: Some(r.w),
                converged: r.info.converged,
                iterations: r.info.iterations,
            }
        }
        AlgorithmName::Jnks => {
            let mut p: JnksParams = typed(name, params, fk)?;
            if p.ranks.is_empty() {
                p.ranks = synth.subspace_ranks();
            }
            let r = jnks_solve(&matrix(truth), &p, JnksInit::Nmf { seed }).map_err(failed)?;
            Outcome {
                labels: r.s.into_labels(),
                factor: Some(r.w),
                converged: r.info.converged,
                iterations: r.info.iterations,
            }
        }
        AlgorithmName::Jtkm => {
            let p: JtkmParams = typed(name, params, fk)?;
            let r = jtkm_solve(&tensor_x(truth), &p, JtkmInit::Ntf { seed }).map_err(failed)?;
            Outcome {
                labels: r.s.into_labels(),
                factor: Some(r.d.scale_rows(&r.a)),
                converged: r.info.converged,
                iterations: r.info.iterations,
            }
        }
        AlgorithmName::Ntf => {
            let p: NtfParams = typed(name, params, serde_json::json!({ "seed": seed }))?;
            let r = ntf_solve(&tensor_x(truth), f, p.eta, p.reg, &p.options).map_err(failed)?;
            let labels = ntf_labels(&r, k, seed).map_err(failed)?;
            Outcome {
                labels: labels.into_labels(),
                factor: Some(r.a),
                converged: r.info.converged,
                iterations: r.info.iterations,
            }
        }
    };
    Ok(out)
}
