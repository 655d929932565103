//! Experiment orchestration: data generation, model training, rolling
//! forecast evaluation, and plot-data emission, all reproducible from a
//! single master seed.
//!
//! Every command reads and writes files under the configured output
//! directory, so the stages compose: `gen_data` then `train` (per model
//! instance) then `eval` then `report`. The resolved configuration is
//! echoed next to the artifacts it produced.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::datagen::{
    build_dataset, generate_corpus, sidecar_path, DatasetSidecar, InitRanges, InputPolicyConfig,
    RegressionDataset, TargetKind,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_experiment, EvalModel, ForecastReport};
use crate::integrate::Trajectory;
use crate::nn::{self, ModelFile, TrainConfig};
use crate::plant::PlantConstants;
use crate::predictor::{ModelType, Predictor};

/// Full description of one experiment. The default value reproduces the
/// reference experiment shape: 40 training and 100 test trajectories of
/// 5000 steps at dt = 10 s, ten instances of each of the four network
/// model types, and forecast horizons of 1000/3000/5000 steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub steps: usize,
    pub dt: f64,
    pub init_ranges: InitRanges,
    pub input_policy: InputPolicyConfig,
    pub constants: PlantConstants,
    pub layer_sizes: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda_dense: f64,
    pub lambda_sparse: f64,
    /// Optional magnitude-pruning threshold applied to sparse models
    /// after training (off by default).
    pub prune_threshold: Option<f64>,
    pub instances_per_type: usize,
    pub model_types: Vec<ModelType>,
    /// Forecast horizons in steps.
    pub horizons: Vec<usize>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 0,
            n_train: 40,
            n_test: 100,
            steps: 5000,
            dt: 10.0,
            init_ranges: InitRanges::default(),
            input_policy: InputPolicyConfig::default(),
            constants: PlantConstants::default(),
            layer_sizes: vec![13, 20, 20, 20, 20, 8],
            epochs: 100,
            batch_size: 128,
            learning_rate: 1e-3,
            lambda_dense: 0.0,
            lambda_sparse: 1e-4,
            prune_threshold: None,
            instances_per_type: 10,
            model_types: ModelType::NETWORK_TYPES.to_vec(),
            horizons: vec![1000, 3000, 5000],
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.display().to_string()));
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn lambda_for(&self, ty: ModelType) -> f64 {
        if ty.is_sparse() {
            self.lambda_sparse
        } else {
            self.lambda_dense
        }
    }

    /// Per-instance training seed, decorrelated across model types.
    pub fn instance_seed(&self, ty: ModelType, instance: usize) -> u64 {
        let type_tag = match ty {
            ModelType::Pbm => 0u64,
            ModelType::DdmDense => 1,
            ModelType::DdmSparse => 2,
            ModelType::CostaDense => 3,
            ModelType::CostaSparse => 4,
        };
        self.master_seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(type_tag << 32)
            .wrapping_add(instance as u64)
    }

    pub fn train_config(&self, ty: ModelType, instance: usize) -> TrainConfig {
        TrainConfig {
            layer_sizes: self.layer_sizes.clone(),
            lambda: self.lambda_for(ty),
            learning_rate: self.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.instance_seed(ty, instance),
        }
    }

    // Artifact layout.
    pub fn train_dir(&self) -> PathBuf {
        self.out_dir.join("train")
    }
    pub fn test_dir(&self) -> PathBuf {
        self.out_dir.join("test")
    }
    pub fn trajectory_path(&self, dir: &Path, index: usize) -> PathBuf {
        dir.join(format!("traj_{index:03}.csv"))
    }
    pub fn dataset_path(&self, kind: TargetKind) -> PathBuf {
        self.out_dir.join(format!("dataset_{}.csv", kind.as_str()))
    }
    pub fn models_dir(&self) -> PathBuf {
        self.out_dir.join("models")
    }
    pub fn model_path(&self, ty: ModelType, instance: usize) -> PathBuf {
        self.models_dir()
            .join(format!("{}_{instance:02}.json", ty.as_str()))
    }
    pub fn report_dir(&self) -> PathBuf {
        self.out_dir.join("report")
    }
    pub fn report_path(&self) -> PathBuf {
        self.report_dir().join("report.json")
    }
    pub fn runs_path(&self) -> PathBuf {
        self.report_dir().join("runs.csv")
    }
    pub fn config_echo_path(&self) -> PathBuf {
        self.out_dir.join("experiment_config.json")
    }

    fn write_config_echo(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir)?;
        std::fs::write(
            self.config_echo_path(),
            serde_json::to_string_pretty(self)?,
        )?;
        Ok(())
    }
}

/// Summary returned by [`cmd_gen_data`].
#[derive(Debug, Clone, PartialEq)]
pub struct GenDataSummary {
    pub n_train: usize,
    pub n_test: usize,
    pub pairs_per_dataset: usize,
}

/// Generates the corpus and writes trajectory CSVs plus the two
/// regression datasets (state-derivative and residual targets) with
/// their normalization sidecars.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<GenDataSummary> {
    let (train, test) = generate_corpus(
        cfg.master_seed,
        cfg.n_train,
        cfg.n_test,
        cfg.steps,
        cfg.dt,
        &cfg.init_ranges,
        &cfg.input_policy,
        &cfg.constants,
    )?;

    std::fs::create_dir_all(cfg.train_dir())?;
    std::fs::create_dir_all(cfg.test_dir())?;
    for (i, traj) in train.iter().enumerate() {
        traj.write_csv(&cfg.trajectory_path(&cfg.train_dir(), i))?;
    }
    for (i, traj) in test.iter().enumerate() {
        traj.write_csv(&cfg.trajectory_path(&cfg.test_dir(), i))?;
    }

    let mut pairs = 0;
    for kind in [TargetKind::StateDerivative, TargetKind::Residual] {
        let ds = build_dataset(&train, kind, &cfg.constants)?;
        ds.write_csv(&cfg.dataset_path(kind))?;
        pairs = ds.features.len();
    }
    cfg.write_config_echo()?;

    Ok(GenDataSummary {
        n_train: train.len(),
        n_test: test.len(),
        pairs_per_dataset: pairs,
    })
}

fn load_dataset(cfg: &ExperimentConfig, kind: TargetKind) -> Result<RegressionDataset> {
    let path = cfg.dataset_path(kind);
    if !path.exists() {
        return Err(Error::MissingArtifact(format!(
            "{} (run gen-data first)",
            path.display()
        )));
    }
    RegressionDataset::read_csv(&path)
}

/// Trains one model instance and writes its JSON file. Sparse models are
/// optionally magnitude-pruned afterwards when a threshold is set.
pub fn cmd_train(cfg: &ExperimentConfig, ty: ModelType, instance: usize) -> Result<PathBuf> {
    let kind = ty.target_kind().ok_or(Error::Malformed {
        what: "model type",
        detail: "the physics-based model is not trained".into(),
    })?;
    let dataset = load_dataset(cfg, kind)?;
    let train_cfg = cfg.train_config(ty, instance);
    let (mut params, history) = nn::train(&dataset, &train_cfg)?;
    if ty.is_sparse() {
        if let Some(threshold) = cfg.prune_threshold {
            nn::magnitude_prune(&mut params, threshold);
        }
    }
    let file = ModelFile::from_parts(&params, &train_cfg, &history, Some(ty.as_str().into()));
    std::fs::create_dir_all(cfg.models_dir())?;
    let path = cfg.model_path(ty, instance);
    file.save(&path)?;
    Ok(path)
}

/// Trains the whole model grid (all configured types and instances) in
/// parallel. Each instance owns its seed, so the result is identical to
/// training them one by one.
pub fn train_all(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let jobs: Vec<(ModelType, usize)> = cfg
        .model_types
        .iter()
        .flat_map(|&ty| (0..cfg.instances_per_type).map(move |i| (ty, i)))
        .collect();
    jobs.par_iter()
        .map(|&(ty, instance)| cmd_train(cfg, ty, instance))
        .collect()
}

fn load_test_set(cfg: &ExperimentConfig) -> Result<Vec<Trajectory>> {
    let mut out = Vec::with_capacity(cfg.n_test);
    for i in 0..cfg.n_test {
        let path = cfg.trajectory_path(&cfg.test_dir(), i);
        if !path.exists() {
            return Err(Error::MissingArtifact(format!(
                "{} (run gen-data first)",
                path.display()
            )));
        }
        out.push(Trajectory::read_csv(&path)?);
    }
    Ok(out)
}

/// Runs the full evaluation grid and writes the report JSON and the
/// per-run CSV.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<ForecastReport> {
    let testset = load_test_set(cfg)?;

    // The state stds for the error metric come from the training corpus,
    // recorded in the dataset sidecar.
    let sidecar_file = sidecar_path(&cfg.dataset_path(TargetKind::StateDerivative));
    if !sidecar_file.exists() {
        return Err(Error::MissingArtifact(format!(
            "{} (run gen-data first)",
            sidecar_file.display()
        )));
    }
    let sidecar: DatasetSidecar =
        serde_json::from_str(&std::fs::read_to_string(&sidecar_file)?)?;
    let state_std = sidecar.norm.state_std;

    let mut models: Vec<EvalModel> = vec![EvalModel::new(
        ModelType::Pbm,
        0,
        Predictor::pbm(cfg.constants),
    )];
    let mut missing = Vec::new();
    for &ty in &cfg.model_types {
        for instance in 0..cfg.instances_per_type {
            let path = cfg.model_path(ty, instance);
            if !path.exists() {
                missing.push(path.display().to_string());
                continue;
            }
            let file = ModelFile::load(&path)?;
            models.push(EvalModel::new(
                ty,
                instance,
                Predictor::from_model_file(file, &cfg.constants)?,
            ));
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingArtifact(format!(
            "model files: {}",
            missing.join(", ")
        )));
    }

    let mut report = evaluate_experiment(&models, &testset, &cfg.horizons, &state_std);
    report.metadata.master_seed = cfg.master_seed;

    std::fs::create_dir_all(cfg.report_dir())?;
    std::fs::write(cfg.report_path(), serde_json::to_string_pretty(&report)?)?;

    let mut runs = std::io::BufWriter::new(std::fs::File::create(cfg.runs_path())?);
    writeln!(runs, "model_type,instance,trajectory,horizon,an_rfmse,blowup")?;
    for r in &report.runs {
        let value = match r.an_rfmse {
            Some(v) => format!("{v}"),
            None => "nan".into(),
        };
        writeln!(
            runs,
            "{},{},{},{},{},{}",
            r.model_type, r.instance, r.trajectory, r.horizon, value, r.blowup
        )?;
    }
    runs.flush()?;
    Ok(report)
}

/// Emits plot-ready data from the report: one sorted AN-RFMSE list per
/// (model type, horizon) for violin plots, and the blow-up counts table.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let path = cfg.report_path();
    if !path.exists() {
        return Err(Error::MissingArtifact(format!(
            "{} (run eval first)",
            path.display()
        )));
    }
    let report: ForecastReport = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    let mut written = Vec::new();

    for ty_report in &report.types {
        for hs in &ty_report.per_horizon {
            let out = cfg.report_dir().join(format!(
                "violin_{}_h{}.csv",
                ty_report.model_type, hs.horizon
            ));
            let mut w = std::io::BufWriter::new(std::fs::File::create(&out)?);
            writeln!(w, "an_rfmse")?;
            for v in &hs.an_rfmse_values {
                writeln!(w, "{v}")?;
            }
            w.flush()?;
            written.push(out);
        }
    }

    let blowups = cfg.report_dir().join("blowups.csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&blowups)?);
    writeln!(w, "model_type,horizon,blowup_count,n")?;
    for ty_report in &report.types {
        for hs in &ty_report.per_horizon {
            writeln!(
                w,
                "{},{},{},{}",
                ty_report.model_type, hs.horizon, hs.blowup_count, hs.n
            )?;
        }
    }
    w.flush()?;
    written.push(blowups);
    Ok(written)
}

/// Convenience wrapper: the full pipeline from one config.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<ForecastReport> {
    cmd_gen_data(cfg)?;
    train_all(cfg)?;
    let report = cmd_eval(cfg)?;
    cmd_report(cfg)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(out: &Path) -> ExperimentConfig {
        ExperimentConfig {
            master_seed: 5,
            n_train: 2,
            n_test: 2,
            steps: 60,
            dt: 10.0,
            epochs: 2,
            batch_size: 16,
            instances_per_type: 1,
            model_types: vec![ModelType::DdmDense, ModelType::CostaSparse],
            horizons: vec![20, 60],
            out_dir: out.to_path_buf(),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn pipeline_produces_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let summary = cmd_gen_data(&cfg).unwrap();
        assert_eq!(summary.n_train, 2);
        assert_eq!(summary.n_test, 2);
        assert_eq!(summary.pairs_per_dataset, 2 * 60);
        assert!(cfg.config_echo_path().exists());

        for ty in [ModelType::DdmDense, ModelType::CostaSparse] {
            cmd_train(&cfg, ty, 0).unwrap();
            assert!(cfg.model_path(ty, 0).exists());
        }

        let report = cmd_eval(&cfg).unwrap();
        assert!(cfg.report_path().exists());
        assert!(cfg.runs_path().exists());
        // PBM plus the two trained types.
        assert_eq!(report.types.len(), 3);
        for ty_report in &report.types {
            for hs in &ty_report.per_horizon {
                assert_eq!(hs.n, ty_report.instances * 2);
            }
        }

        let files = cmd_report(&cfg).unwrap();
        assert!(files.iter().all(|f| f.exists()));
        // 3 types x 2 horizons violin files + blowups.csv
        assert_eq!(files.len(), 7);
    }

    #[test]
    fn eval_without_models_lists_missing_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        cmd_gen_data(&cfg).unwrap();
        let err = cmd_eval(&cfg).unwrap_err();
        match err {
            Error::MissingArtifact(msg) => {
                assert!(msg.contains("ddm_dense_00.json"), "{msg}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn train_without_dataset_is_a_missing_artifact_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        assert!(matches!(
            cmd_train(&cfg, ModelType::DdmDense, 0),
            Err(Error::MissingArtifact(_))
        ));
    }

    #[test]
    fn instance_seeds_differ_across_types_and_instances() {
        let cfg = ExperimentConfig::default();
        let a = cfg.instance_seed(ModelType::DdmDense, 0);
        let b = cfg.instance_seed(ModelType::DdmDense, 1);
        let c = cfg.instance_seed(ModelType::CostaDense, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, cfg.instance_seed(ModelType::DdmDense, 0));
    }

    #[test]
    fn dense_and_sparse_lambdas_follow_the_config() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.train_config(ModelType::DdmDense, 0).lambda, 0.0);
        assert_eq!(cfg.train_config(ModelType::DdmSparse, 0).lambda, 1e-4);
        assert_eq!(cfg.train_config(ModelType::CostaDense, 0).lambda, 0.0);
        assert_eq!(cfg.train_config(ModelType::CostaSparse, 0).lambda, 1e-4);
    }

    #[test]
    fn config_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let path = dir.path().join("config.json");
        std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        let back = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_config_files_fall_back_to_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("partial.json");
        std::fs::write(&path, r#"{"master_seed": 7, "steps": 123}"#).unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.master_seed, 7);
        assert_eq!(cfg.steps, 123);
        assert_eq!(cfg.n_train, 40);
        assert_eq!(cfg.dt, 10.0);
    }
}
