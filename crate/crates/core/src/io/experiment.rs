//! End-to-end experiment runs: data, training, evaluation and artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::continuous::{self, ContinuousModel, CtTrainOutput};
use crate::discrete::{self, CoefficientPath, DiscreteModel, TrainOutput};
use crate::error::{Error, Result};
use crate::io::archive::{save_model, ArchivedModel, ModelArchive};
use crate::io::config::{ExperimentConfig, ExperimentData, ModelVariant};
use crate::io::table::write_csv;
use crate::linalg::{Matrix, Vector};
use crate::metrics::{align_dictionaries, EvalReport};
use crate::systems::Trajectory;

pub const MODEL_FILE: &str = "model.dlds";
pub const REPORT_FILE: &str = "report.json";
pub const COEFFICIENTS_FILE: &str = "coefficients.csv";
pub const RECONSTRUCTION_FILE: &str = "reconstruction.csv";
pub const TRACES_FILE: &str = "coefficient_traces.csv";
pub const TRAINING_FILE: &str = "training.csv";
pub const PHASE_FILE: &str = "phase_portrait.csv";

/// A trained model with the states and coefficients inferred for each sequence.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Discrete {
        model: DiscreteModel,
        paths: Vec<CoefficientPath>,
    },
    Continuous {
        model: ContinuousModel,
        /// Observed states (`D = I`) per sequence.
        states: Vec<Vec<Vector>>,
        coefficients: Vec<Vec<Vector>>,
    },
}

impl FittedModel {
    /// Latent states and coefficients per sequence.
    pub fn paths(&self) -> Vec<(&[Vector], &[Vector])> {
        match self {
            FittedModel::Discrete { paths, .. } => paths.iter().map(|p| (&p.x[..], &p.c[..])).collect(),
            FittedModel::Continuous {
                states, coefficients, ..
            } => states
                .iter()
                .zip(coefficients)
                .map(|(x, c)| (&x[..], &c[..]))
                .collect(),
        }
    }
}

/// Dictionary recovery against planted operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub assignment: Vec<usize>,
    pub scores: Vec<f64>,
    pub mean_score: f64,
    pub min_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub variant: ModelVariant,
    pub epochs: usize,
    /// Final reconstruction error (discrete) or loss (continuous).
    pub final_error: f64,
    /// One-step prediction against the observed data.
    pub metrics: EvalReport,
    /// Frobenius norm of every operator or generator.
    pub operator_norms: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery: Option<Recovery>,
}

#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: FittedModel,
    pub data: ExperimentData,
    /// Per-epoch training error (reconstruction error or loss).
    pub error_trace: Vec<f64>,
    /// Per-epoch objective (discrete only).
    pub objective_trace: Vec<f64>,
    /// One-step predictions per sequence (`k × (T−1)`).
    pub predictions: Vec<Matrix>,
    pub report: ExperimentReport,
}

impl Fitted {
    pub fn archive(&self, config: &ExperimentConfig) -> Result<ModelArchive> {
        let model = match &self.model {
            FittedModel::Discrete { model, .. } => ArchivedModel::Discrete(model.clone()),
            FittedModel::Continuous { model, .. } => ArchivedModel::Continuous(model.clone()),
        };
        Ok(ModelArchive {
            variant: config.variant,
            model,
            config: config.to_toml()?,
            epochs: self.report.epochs as u64,
            final_error: self.report.final_error,
        })
    }
}

/// Loads the data, trains the configured variant and evaluates it, without
/// touching the filesystem beyond reading input data.
pub fn fit(cfg: &ExperimentConfig) -> Result<Fitted> {
    cfg.validate()?;
    let data = cfg
        .load_data()
        .map_err(|e| e.context(format!("loading data for {}", cfg.name)))?;
    let trajs = &data.trajectories;
    let (model, error_trace, objective_trace, epochs) = match cfg.variant {
        ModelVariant::Discrete | ModelVariant::DiscreteIdentity => {
            let train = cfg.train_config();
            let out: TrainOutput = if cfg.variant == ModelVariant::Discrete {
                let p = cfg.latent_dim.unwrap_or(trajs[0].dim());
                discrete::train_discrete_batch(trajs, cfg.operators, p, &train)
            } else {
                discrete::train_identity_observation_batch(trajs, cfg.operators, &train)
            }
            .map_err(|e| e.context(format!("training {}", cfg.name)))?;
            let epochs = out.trace.final_epoch;
            (
                FittedModel::Discrete {
                    model: out.model,
                    paths: out.paths,
                },
                out.trace.rmse,
                out.trace.objective,
                epochs,
            )
        }
        ModelVariant::Continuous => {
            if trajs.len() != 1 {
                return Err(Error::Config("the continuous variant trains on a single sequence".into()));
            }
            let ct = cfg.continuous_config();
            let out: CtTrainOutput = continuous::train_continuous(&trajs[0], cfg.operators, &ct)
                .map_err(|e| e.context(format!("training {}", cfg.name)))?;
            let coefficients = continuous::infer_continuous(&out.model, &trajs[0], &ct)?;
            (
                FittedModel::Continuous {
                    model: out.model,
                    states: vec![trajs[0].samples().collect()],
                    coefficients: vec![coefficients],
                },
                out.trace.loss,
                Vec::new(),
                out.trace.final_epoch,
            )
        }
    };

    let predictions = predict(&model, trajs, cfg)?;
    let metrics = evaluate(trajs, &predictions)?;
    let operator_norms = match &model {
        FittedModel::Discrete { model, .. } => model.dictionary().iter().map(|f| f.norm()).collect(),
        FittedModel::Continuous { model, .. } => model.frobenius_norms(),
    };
    let recovery = match (&data.truth, &model) {
        (Some(truth), FittedModel::Discrete { model, .. }) if truth.dictionary.len() == model.n_operators() => {
            let a = align_dictionaries(model.dictionary(), &truth.dictionary)?;
            Some(Recovery {
                mean_score: a.mean_score(),
                min_score: a.min_score(),
                assignment: a.assignment,
                scores: a.scores,
            })
        }
        _ => None,
    };
    let report = ExperimentReport {
        name: cfg.name.clone(),
        variant: cfg.variant,
        epochs,
        final_error: error_trace.last().copied().unwrap_or(f64::NAN),
        metrics,
        operator_norms,
        recovery,
    };
    Ok(Fitted {
        model,
        data,
        error_trace,
        objective_trace,
        predictions,
        report,
    })
}

fn predict(model: &FittedModel, trajs: &[Trajectory], cfg: &ExperimentConfig) -> Result<Vec<Matrix>> {
    match model {
        FittedModel::Discrete { model, paths } => paths.iter().map(|p| discrete::one_step_predict(model, p)).collect(),
        FittedModel::Continuous {
            model, coefficients, ..
        } => trajs
            .iter()
            .zip(coefficients)
            .map(|(t, c)| continuous::one_step_predict(model, t, c, cfg.continuous.tau))
            .collect(),
    }
}

/// A stored model applied to new sequences.
#[derive(Debug, Clone)]
pub struct Applied {
    pub model: FittedModel,
    pub predictions: Vec<Matrix>,
    pub metrics: EvalReport,
}

/// Infers states and coefficients for `trajs` with an archived model, using
/// the inference settings recorded in the archive, and scores the one-step
/// predictions.
pub fn apply_archive(archive: &ModelArchive, trajs: &[Trajectory]) -> Result<Applied> {
    let cfg = archive_config(archive)?;
    let model = match &archive.model {
        ArchivedModel::Discrete(model) => {
            let train = cfg.train_config();
            let paths = trajs
                .iter()
                .map(|t| discrete::infer_sequence(t, model, &train))
                .collect::<Result<Vec<_>>>()?;
            FittedModel::Discrete {
                model: model.clone(),
                paths,
            }
        }
        ArchivedModel::Continuous(model) => {
            let ct = cfg.continuous_config();
            let coefficients = trajs
                .iter()
                .map(|t| continuous::infer_continuous(model, t, &ct))
                .collect::<Result<Vec<_>>>()?;
            FittedModel::Continuous {
                model: model.clone(),
                states: trajs.iter().map(|t| t.samples().collect()).collect(),
                coefficients,
            }
        }
    };
    let predictions = predict(&model, trajs, &cfg)?;
    let metrics = evaluate(trajs, &predictions)?;
    Ok(Applied {
        model,
        predictions,
        metrics,
    })
}

/// The experiment configuration snapshot stored in an archive.
pub fn archive_config(archive: &ModelArchive) -> Result<ExperimentConfig> {
    ExperimentConfig::from_toml(&archive.config).map_err(|e| e.context("reading the archived configuration"))
}

/// Writes the long-format `(episode, t, kind, index, value)` table of a model's paths.
pub fn write_coefficients(path: &Path, model: &FittedModel) -> Result<()> {
    write_csv(path, Some(&header(&["episode", "t", "kind", "index", "value"])), &long_format(&model.paths()))
}

/// Metrics over all sequences, comparing samples `1..T` with their predictions.
pub fn evaluate(trajs: &[Trajectory], predictions: &[Matrix]) -> Result<EvalReport> {
    let truth: Vec<Vector> = trajs
        .iter()
        .flat_map(|t| t.data().columns(1, t.len() - 1).column_iter().map(|c| c.into_owned()).collect::<Vec<_>>())
        .collect();
    let pred: Vec<Vector> = predictions
        .iter()
        .flat_map(|p| p.column_iter().map(|c| c.into_owned()).collect::<Vec<_>>())
        .collect();
    EvalReport::compare(&Matrix::from_columns(&truth), &Matrix::from_columns(&pred))
}

/// Paths of the artifacts written by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub artifacts: Vec<PathBuf>,
}

/// Fits the experiment and writes every artifact into `out_dir`.
///
/// Artifacts are staged in a temporary directory inside `out_dir` and moved
/// into place only once all of them have been written, so a failed run
/// leaves no partial files behind.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutcome> {
    let fitted = fit(cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let staging = tempfile::Builder::new()
        .prefix(".staging-")
        .tempdir_in(out_dir)
        .map_err(|e| Error::io(out_dir, e))?;
    let names = write_artifacts(&fitted, cfg, staging.path())
        .map_err(|e| e.context(format!("writing artifacts for {}", cfg.name)))?;
    let mut artifacts = Vec::with_capacity(names.len());
    for name in &names {
        let target = out_dir.join(name);
        fs::rename(staging.path().join(name), &target).map_err(|e| Error::io(&target, e))?;
        artifacts.push(target);
    }
    Ok(ExperimentOutcome {
        report: fitted.report,
        artifacts,
    })
}

fn write_artifacts(fitted: &Fitted, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<&'static str>> {
    let mut names = vec![MODEL_FILE, REPORT_FILE, COEFFICIENTS_FILE, RECONSTRUCTION_FILE, TRACES_FILE, TRAINING_FILE];
    save_model(&fitted.archive(cfg)?, &dir.join(MODEL_FILE))?;
    let report = serde_json::to_string_pretty(&fitted.report)
        .map_err(|e| Error::io(dir.join(REPORT_FILE), std::io::Error::other(e)))?;
    let report_path = dir.join(REPORT_FILE);
    fs::write(&report_path, report + "\n").map_err(|e| Error::io(&report_path, e))?;

    let paths = fitted.model.paths();
    write_coefficients(&dir.join(COEFFICIENTS_FILE), &fitted.model)?;
    write_csv(
        &dir.join(RECONSTRUCTION_FILE),
        Some(&reconstruction_header(fitted.data.trajectories[0].dim())),
        &reconstruction_rows(&fitted.data.trajectories, &fitted.predictions),
    )?;
    let m = paths[0].1.first().map_or(0, |c| c.len());
    let mut trace_header = header(&["episode", "t"]);
    trace_header.extend((0..m).map(|i| format!("c{i}")));
    write_csv(&dir.join(TRACES_FILE), Some(&trace_header), &coefficient_rows(&paths))?;
    write_csv(&dir.join(TRAINING_FILE), Some(&header(&["epoch", "error", "objective"])), &training_rows(fitted))?;

    if let Some(rows) = phase_portrait(&fitted.model, &paths, cfg.phase_grid) {
        write_csv(&dir.join(PHASE_FILE), Some(&header(&["operator", "x0", "x1", "dx0", "dx1"])), &rows)?;
        names.push(PHASE_FILE);
    }
    Ok(names)
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

fn reconstruction_header(k: usize) -> Vec<String> {
    let mut h = header(&["episode", "t"]);
    h.extend((0..k).map(|i| format!("truth{i}")));
    h.extend((0..k).map(|i| format!("pred{i}")));
    h
}

fn rows_matrix(rows: Vec<Vec<f64>>, width: usize) -> Matrix {
    let n = rows.len();
    Matrix::from_row_iterator(n, width, rows.into_iter().flatten())
}

/// Long format `(episode, t, kind, index, value)`; kind 0 is a latent state
/// entry, kind 1 a coefficient. Coefficient `t` drives state `t − 1` to `t`.
fn long_format(paths: &[(&[Vector], &[Vector])]) -> Matrix {
    let mut rows = Vec::new();
    for (e, (xs, cs)) in paths.iter().enumerate() {
        for (t, x) in xs.iter().enumerate() {
            rows.extend(x.iter().enumerate().map(|(i, &v)| vec![e as f64, t as f64, 0.0, i as f64, v]));
        }
        for (t, c) in cs.iter().enumerate() {
            rows.extend(c.iter().enumerate().map(|(i, &v)| vec![e as f64, (t + 1) as f64, 1.0, i as f64, v]));
        }
    }
    rows_matrix(rows, 5)
}

fn reconstruction_rows(trajs: &[Trajectory], predictions: &[Matrix]) -> Matrix {
    let k = trajs[0].dim();
    let mut rows = Vec::new();
    for (e, (traj, pred)) in trajs.iter().zip(predictions).enumerate() {
        for t in 1..traj.len() {
            let mut row = vec![e as f64, t as f64];
            row.extend(traj.data().column(t).iter());
            row.extend(pred.column(t - 1).iter());
            rows.push(row);
        }
    }
    rows_matrix(rows, 2 + 2 * k)
}

fn coefficient_rows(paths: &[(&[Vector], &[Vector])]) -> Matrix {
    let m = paths[0].1.first().map_or(0, |c| c.len());
    let mut rows = Vec::new();
    for (e, (_, cs)) in paths.iter().enumerate() {
        for (t, c) in cs.iter().enumerate() {
            let mut row = vec![e as f64, (t + 1) as f64];
            row.extend(c.iter());
            rows.push(row);
        }
    }
    rows_matrix(rows, 2 + m)
}

fn training_rows(fitted: &Fitted) -> Matrix {
    let rows = fitted
        .error_trace
        .iter()
        .enumerate()
        .map(|(i, &err)| {
            let obj = fitted.objective_trace.get(i).copied().unwrap_or(err);
            vec![(i + 1) as f64, err, obj]
        })
        .collect();
    rows_matrix(rows, 3)
}

/// Vector field of every operator on a `grid × grid` lattice spanning the
/// latent states (padded by 10%); `None` unless the latent space is 2-D.
///
/// Discrete operators contribute the one-step displacement `f x − x`,
/// continuous generators the velocity `G x`.
pub fn phase_portrait(model: &FittedModel, paths: &[(&[Vector], &[Vector])], grid: usize) -> Option<Matrix> {
    let operators: Vec<(Matrix, bool)> = match model {
        FittedModel::Discrete { model, .. } if model.latent_dim() == 2 => {
            model.dictionary().iter().map(|f| (f.clone(), true)).collect()
        }
        FittedModel::Continuous { model, .. } if model.latent_dim() == 2 => {
            model.generators().iter().map(|g| (g.clone(), false)).collect()
        }
        _ => return None,
    };
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for x in paths.iter().flat_map(|(xs, _)| xs.iter()) {
        for d in 0..2 {
            lo[d] = lo[d].min(x[d]);
            hi[d] = hi[d].max(x[d]);
        }
    }
    for d in 0..2 {
        let pad = 0.1 * (hi[d] - lo[d]).max(1e-12);
        lo[d] -= pad;
        hi[d] += pad;
    }
    let axis = |d: usize, i: usize| lo[d] + (hi[d] - lo[d]) * i as f64 / (grid - 1) as f64;
    let mut rows = Vec::with_capacity(operators.len() * grid * grid);
    for (m, (op, displacement)) in operators.iter().enumerate() {
        for i in 0..grid {
            for j in 0..grid {
                let x = Vector::from_vec(vec![axis(0, i), axis(1, j)]);
                let mut v = op * &x;
                if *displacement {
                    v -= &x;
                }
                rows.push(vec![m as f64, x[0], x[1], v[0], v[1]]);
            }
        }
    }
    Some(rows_matrix(rows, 5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::table::load_csv;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig::from_toml(
            r#"
name = "tiny"
variant = "discrete_identity"
operators = 2

[data.system]
kind = "fhn"
samples = 40

[train]
max_epochs = 3
"#,
        )
        .unwrap()
    }

    #[test]
    fn writes_reingestible_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&tiny_config(), dir.path()).unwrap();
        assert!(out.artifacts.iter().any(|p| p.ends_with(PHASE_FILE)));
        for path in &out.artifacts {
            assert!(path.exists());
            if path.extension().is_some_and(|e| e == "csv") {
                let table = load_csv(path, true).unwrap();
                assert!(table.nrows() > 0, "{}", path.display());
            }
        }
        let coefs = load_csv(&dir.path().join(COEFFICIENTS_FILE), true).unwrap();
        // 40 states × 2 entries + 39 coefficient vectors × 2 entries
        assert_eq!(coefs.nrows(), 80 + 78);
        let leftovers: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with(".staging"))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn zero_epochs_still_reports() {
        let mut cfg = tiny_config();
        cfg.train.max_epochs = 0;
        let fitted = fit(&cfg).unwrap();
        assert_eq!(fitted.report.epochs, 0);
        assert!(fitted.report.metrics.pearson_r.is_finite());
    }

    #[test]
    fn failed_run_leaves_no_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.data.system = None;
        cfg.data.file = Some(crate::io::config::FileSource {
            path: dir.path().join("missing.csv"),
            dt: 0.1,
            has_header: false,
        });
        let out = dir.path().join("out");
        assert!(run_experiment(&cfg, &out).is_err());
        assert!(!out.exists() || fs::read_dir(&out).unwrap().next().is_none());
    }
}
