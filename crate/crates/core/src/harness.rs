//! Experiment orchestration: configuration, the gen/train/attack/embed/report
//! stages and the files they exchange.
//!
//! Layout under `<out>/<case>/`:
//! `config.json`, `dataset/{train,val,test}.csv`, `dataset/manifest.json`,
//! `models/model_p<P>.json` (+ `.meta.json`), `curves/loss_p<P>.csv`,
//! `eval/cells/*.json`, `eval/attack_eval.csv`, `embed/embedding.csv`,
//! `report.json`, `summary.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::{choose_compromised, run_attack, AttackError, AttackSpec, Pipeline, Strategy, DEFAULT_EPSILON};
use crate::casefile::{builtin_case, parse_case, CaseFormat, CaseSystem};
use crate::dataset::{generate_dataset, split, Dataset, DatasetError, Label, Normalization};
use crate::dcmodel::{build_h, MeasurementModel, DEFAULT_SIGMA};
use crate::defense::{train_defended, DefenseError, PaddingScheme, ValuePolicy, DEFAULT_EXPANSION, DEFAULT_VOTES};
use crate::nnet::{hex_digest, init_model, train, DetectorModel, LossCurve, NnetError, Optimizer, TrainConfig, DEFAULT_HIDDEN};
use crate::{seed, VERSION};

/// Injection size, in per-meter standard deviations, for the false samples
/// the detector is trained on.
pub const DEFAULT_INJECTION_EPSILON: f64 = 6.0;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("missing {0}")]
    Missing(String),
    #[error("digest mismatch: {0}")]
    Digest(String),
    #[error("embedding needs two non-degenerate activation directions, found {0}")]
    Degenerate(usize),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] NnetError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Defense(#[from] DefenseError),
}

impl HarnessError {
    /// 1 for usage or configuration problems, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixEntry {
    pub strategy: Strategy,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub count: usize,
    pub false_ratio: f64,
    /// Budget of the training injections, in per-meter standard deviations.
    pub injection_epsilon: f64,
    /// Model-free strategies for the training injections; each is paired
    /// with every attack-grid `k`.
    pub mix: Vec<MixEntry>,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub optimizer: Optimizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackGrid {
    pub strategies: Vec<Strategy>,
    pub k: Vec<usize>,
    pub epsilon: Vec<f64>,
    /// Overrides every strategy's default iteration count.
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub population: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseGrid {
    /// Padding sizes besides the undefended `p = 0`.
    pub paddings: Vec<usize>,
    pub train_expansion: usize,
    pub infer_votes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Built-in case name, or a path to a MATPOWER `.m` or native `.json` file.
    pub case: String,
    pub sigma: f64,
    pub dataset: DatasetConfig,
    pub detector: DetectorConfig,
    pub attacks: AttackGrid,
    pub defense: DefenseGrid,
    pub seed: u64,
    pub out: String,
}

/// Compromised-meter counts per built-in case.
pub fn default_k(case: &str) -> Option<[usize; 3]> {
    match case {
        "case14" => Some([3, 5, 8]),
        "case30" => Some([6, 11, 15]),
        "case118" => Some([12, 26, 35]),
        "case300" => Some([18, 25, 40]),
        _ => None,
    }
}

impl ExperimentConfig {
    /// Defaults for a built-in case.
    pub fn for_case(case: &str) -> Result<Self> {
        let system = builtin_case(case).map_err(|e| HarnessError::Config(e.to_string()))?;
        let m = system.meter_count();
        let k = default_k(case).map(Vec::from).unwrap_or_else(|| vec![1.max(m / 20)]);
        let train = TrainConfig::default();
        Ok(Self {
            case: case.to_string(),
            sigma: DEFAULT_SIGMA,
            dataset: DatasetConfig {
                count: 40_000,
                false_ratio: 0.5,
                injection_epsilon: DEFAULT_INJECTION_EPSILON,
                mix: [Strategy::RandomPerturbation, Strategy::UniversalNoise, Strategy::IterativeGaussian]
                    .into_iter()
                    .map(|strategy| MixEntry { strategy, weight: 1.0 })
                    .collect(),
                split: [0.8, 0.1, 0.1],
            },
            detector: DetectorConfig {
                hidden: DEFAULT_HIDDEN.to_vec(),
                epochs: train.epochs,
                batch_size: train.batch_size,
                learning_rate: train.learning_rate,
                momentum: train.momentum,
                optimizer: train.optimizer,
            },
            attacks: AttackGrid {
                strategies: Strategy::ALL.to_vec(),
                k,
                epsilon: vec![DEFAULT_EPSILON],
                iterations: None,
                population: None,
            },
            defense: DefenseGrid {
                paddings: vec![2, 4, m / 4, m / 2],
                train_expansion: DEFAULT_EXPANSION,
                infer_votes: DEFAULT_VOTES,
            },
            seed: 1,
            out: "runs".to_string(),
        })
    }

    /// Parses JSON, naming the offending field on error.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            HarnessError::Config(format!("at `{path}`: {}", e.inner()))
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Digest of everything that affects results; the output directory is
    /// left out so relocated runs stay byte-identical.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.out.clear();
        hex_digest(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }

    pub fn check(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(HarnessError::Config(format!("at `{field}`: {why}")));
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma", "must be finite and non-negative");
        }
        let d = &self.dataset;
        if d.count == 0 {
            return bad("dataset.count", "must be positive");
        }
        if !(0.0..=1.0).contains(&d.false_ratio) {
            return bad("dataset.false_ratio", "must lie in [0, 1]");
        }
        if !(d.injection_epsilon >= 0.0 && d.injection_epsilon.is_finite()) {
            return bad("dataset.injection_epsilon", "must be finite and non-negative");
        }
        if d.false_ratio > 0.0 && d.mix.is_empty() {
            return bad("dataset.mix", "is empty but false_ratio is positive");
        }
        for (i, e) in d.mix.iter().enumerate() {
            if e.strategy == Strategy::IterativeGradient {
                return bad(&format!("dataset.mix[{i}].strategy"), "needs a trained model");
            }
            if !(e.weight > 0.0 && e.weight.is_finite()) {
                return bad(&format!("dataset.mix[{i}].weight"), "must be positive");
            }
        }
        if d.split.iter().any(|f| *f <= 0.0) || (d.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("dataset.split", "fractions must be positive and sum to 1");
        }
        let t = &self.detector;
        if t.hidden.is_empty() || t.hidden.contains(&0) {
            return bad("detector.hidden", "needs at least one non-empty layer");
        }
        if t.epochs == 0 || t.batch_size == 0 {
            return bad("detector", "epochs and batch_size must be positive");
        }
        if self.attacks.k.is_empty() || self.attacks.k.contains(&0) {
            return bad("attacks.k", "needs positive compromised counts");
        }
        if self.attacks.epsilon.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return bad("attacks.epsilon", "must be finite and non-negative");
        }
        if self.defense.train_expansion == 0 || self.defense.infer_votes == 0 {
            return bad("defense", "train_expansion and infer_votes must be at least 1");
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.detector;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            seed: seed::derive(self.seed, "train", 0),
            optimizer: t.optimizer,
            momentum: t.momentum,
        }
    }

    /// Padding sizes evaluated, starting with the undefended 0.
    pub fn padding_sizes(&self) -> Vec<usize> {
        let mut ps = vec![0];
        for p in &self.defense.paddings {
            if !ps.contains(p) {
                ps.push(*p);
            }
        }
        ps
    }

    pub fn case_dir(&self) -> PathBuf {
        Path::new(&self.out).join(case_label(&self.case))
    }
}

fn case_label(case: &str) -> String {
    Path::new(case)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| case.to_string())
}

pub fn load_case(case: &str) -> Result<CaseSystem> {
    let format = if case.ends_with(".m") {
        Some(CaseFormat::MatpowerSubset)
    } else if case.ends_with(".json") {
        Some(CaseFormat::NativeJson)
    } else {
        None
    };
    match format {
        None => builtin_case(case).map_err(|e| HarnessError::Config(format!("at `case`: {e}"))),
        Some(f) => {
            let text = read(Path::new(case))?;
            parse_case(&text, f).map_err(|e| HarnessError::Config(format!("at `case`: {e}")))
        }
    }
}

/// The case and its measurement model for a config.
pub struct Setup {
    pub case: CaseSystem,
    pub model: MeasurementModel,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let case = load_case(&cfg.case)?;
        let model = build_h(&case)
            .and_then(|m| m.with_sigma(cfg.sigma))
            .map_err(|e| HarnessError::Config(format!("at `case`: {e}")))?;
        Ok(Self { case, model })
    }

    pub fn m(&self) -> usize {
        self.model.meter_count()
    }

    pub fn compromised(&self, cfg: &ExperimentConfig, k: usize) -> Vec<usize> {
        choose_compromised(self.m(), k, cfg.seed)
    }

    /// Every configured strategy paired with every grid `k`, equal share of
    /// the strategy's weight per `k`.
    pub fn injection_mix(&self, cfg: &ExperimentConfig) -> Vec<(AttackSpec, f64)> {
        let ks = &cfg.attacks.k;
        cfg.dataset
            .mix
            .iter()
            .enumerate()
            .flat_map(|(i, e)| {
                ks.iter().map(move |&k| (i, e, k))
            })
            .map(|(i, e, k)| {
                let spec = AttackSpec::new(
                    e.strategy,
                    self.compromised(cfg, k),
                    cfg.dataset.injection_epsilon,
                    seed::derive(cfg.seed, "mix", (i * 1000 + k) as u64),
                );
                (spec, e.weight / ks.len() as f64)
            })
            .collect()
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io { path: path.to_path_buf(), message: e.to_string() }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            HarnessError::Missing(path.display().to_string())
        } else {
            io_err(path, e)
        }
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?).map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub normal: usize,
    #[serde(rename = "false")]
    pub false_data: usize,
}

impl From<(usize, usize)> for ClassCounts {
    fn from((normal, false_data): (usize, usize)) -> Self {
        Self { normal, false_data }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_digest: String,
    pub seed: u64,
    pub provenance: String,
    pub meter_count: usize,
    pub total: ClassCounts,
    pub train: ClassCounts,
    pub val: ClassCounts,
    pub test: ClassCounts,
    pub class_ratio: f64,
    /// Fit on the training split; applied to every split before use.
    pub normalization: Normalization,
}

/// Raw splits plus the manifest, as written by [`cmd_gen`].
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub manifest: Manifest,
}

impl Splits {
    /// Generates and splits without touching the filesystem.
    pub fn generate(cfg: &ExperimentConfig, setup: &Setup) -> Result<Self> {
        let mix = setup.injection_mix(cfg);
        let all = generate_dataset(
            &setup.case,
            &setup.model,
            cfg.dataset.count,
            cfg.dataset.false_ratio,
            &mix,
            seed::derive(cfg.seed, "dataset", 0),
        )?;
        let [a, b, c] = cfg.dataset.split;
        let (train, val, test) = split(&all, (a, b, c), seed::derive(cfg.seed, "split", 0))?;
        let (_, normalization) = crate::dataset::fit_normalization(&train)?;
        let total = all.class_counts();
        let manifest = Manifest {
            config_digest: cfg.digest(),
            seed: cfg.seed,
            provenance: all.provenance.clone(),
            meter_count: setup.m(),
            total: total.into(),
            train: train.class_counts().into(),
            val: val.class_counts().into(),
            test: test.class_counts().into(),
            class_ratio: total.1 as f64 / all.len() as f64,
            normalization,
        };
        Ok(Self { train, val, test, manifest })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = read_json(&dir.join("dataset/manifest.json"))?;
        let load = |name: &str| -> Result<Dataset> {
            let path = dir.join(format!("dataset/{name}.csv"));
            let mut d = Dataset::from_csv(&read(&path)?, manifest.meter_count)?;
            d.provenance = manifest.provenance.clone();
            Ok(d)
        };
        Ok(Self { train: load("train")?, val: load("val")?, test: load("test")?, manifest })
    }

    pub fn normalized(&self) -> (Dataset, Dataset, Dataset) {
        let n = &self.manifest.normalization;
        (n.apply_dataset(&self.train), n.apply_dataset(&self.val), n.apply_dataset(&self.test))
    }
}

fn check_digest(cfg: &ExperimentConfig, found: &str, what: &str) -> Result<()> {
    if found != cfg.digest() {
        return Err(HarnessError::Digest(format!(
            "{what} was produced by config {found}, current config is {}",
            cfg.digest()
        )));
    }
    Ok(())
}

/// Writes the config, the three dataset splits and the manifest.
pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<Manifest> {
    cfg.check()?;
    let setup = Setup::new(cfg)?;
    let splits = Splits::generate(cfg, &setup)?;
    let dir = cfg.case_dir();
    write(&dir.join("config.json"), &cfg.to_json())?;
    write(&dir.join("dataset/train.csv"), &splits.train.to_csv())?;
    write(&dir.join("dataset/val.csv"), &splits.val.to_csv())?;
    write(&dir.join("dataset/test.csv"), &splits.test.to_csv())?;
    write(
        &dir.join("dataset/manifest.json"),
        &serde_json::to_string_pretty(&splits.manifest).expect("manifest serializes"),
    )?;
    Ok(splits.manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config_digest: String,
    pub p: usize,
    pub input_dim: usize,
    pub best_epoch: usize,
    /// `C(m + p, p)`.
    pub guessing_space: f64,
    /// Wall time; the only non-reproducible value in a run.
    pub train_seconds: f64,
}

/// Trains the undefended detector (`p = 0`) or a padded one.
pub fn train_detector(
    cfg: &ExperimentConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    p: usize,
) -> Result<(DetectorModel, LossCurve)> {
    let tc = cfg.train_config();
    if p == 0 {
        let mut model = init_model(train_set.feature_dim, &cfg.detector.hidden, tc.seed);
        model.normalization = train_set.normalization.clone();
        return Ok(train(&model, train_set, val_set, &tc)?);
    }
    let scheme = PaddingScheme {
        m: train_set.feature_dim,
        p,
        value_policy: ValuePolicy::from_dataset(train_set),
        train_expansion: cfg.defense.train_expansion,
        infer_votes: cfg.defense.infer_votes,
    };
    Ok(train_defended(train_set, val_set, &scheme, &cfg.detector.hidden, &tc)?)
}

pub fn model_path(dir: &Path, p: usize) -> PathBuf {
    dir.join(format!("models/model_p{p}.json"))
}

/// Trains one detector and writes its model, metadata and loss curve.
pub fn cmd_train(cfg: &ExperimentConfig, padding: Option<usize>) -> Result<LossCurve> {
    cfg.check()?;
    let dir = cfg.case_dir();
    let splits = Splits::load(&dir)?;
    check_digest(cfg, &splits.manifest.config_digest, "dataset")?;
    let (train_set, val_set, _) = splits.normalized();
    let p = padding.unwrap_or(0);
    let start = Instant::now();
    let (model, curve) = train_detector(cfg, &train_set, &val_set, p)?;
    let meta = ModelMeta {
        config_digest: cfg.digest(),
        p,
        input_dim: model.input_dim(),
        best_epoch: curve.best_epoch,
        guessing_space: model.padding.map_or(1.0, |s| s.guessing_space()),
        train_seconds: start.elapsed().as_secs_f64(),
    };
    write(&model_path(&dir, p), &model.to_json())?;
    write(
        &dir.join(format!("models/model_p{p}.meta.json")),
        &serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )?;
    write(&dir.join(format!("curves/loss_p{p}.csv")), &curve.to_csv())?;
    Ok(curve)
}

pub fn load_model(dir: &Path, p: usize, cfg: &ExperimentConfig) -> Result<(DetectorModel, ModelMeta)> {
    let path = model_path(dir, p);
    let model = DetectorModel::from_json(&read(&path)?)?;
    let meta: ModelMeta = read_json(&dir.join(format!("models/model_p{p}.meta.json")))?;
    check_digest(cfg, &meta.config_digest, &path.display().to_string())?;
    Ok((model, meta))
}

/// One row of `attack_eval.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub case: String,
    pub strategy: Strategy,
    pub k: usize,
    pub epsilon: f64,
    pub p: usize,
    #[serde(rename = "R")]
    pub r: usize,
    /// Accuracy on the clean test split.
    pub clean_accuracy: f64,
    /// Fraction of attacked false samples still detected.
    pub attacked_accuracy: f64,
    /// Fraction of clean false samples detected.
    pub recall_on_false: f64,
    pub mean_l2: f64,
    pub seed: u64,
    pub config_digest: String,
}

pub const ATTACK_EVAL_HEADER: &str =
    "case,strategy,k,epsilon,p,R,clean_accuracy,attacked_accuracy,recall_on_false,mean_l2,seed";

impl CellRecord {
    pub fn file_name(&self) -> String {
        cell_name(self.strategy, self.k, self.epsilon, self.p)
    }

    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.case,
            self.strategy.name(),
            self.k,
            self.epsilon,
            self.p,
            self.r,
            self.clean_accuracy,
            self.attacked_accuracy,
            self.recall_on_false,
            self.mean_l2,
            self.seed
        )
    }
}

fn cell_name(strategy: Strategy, k: usize, epsilon: f64, p: usize) -> String {
    format!("{}_k{k}_eps{epsilon}_p{p}.json", strategy.name())
}

pub fn records_csv(records: &[CellRecord]) -> String {
    let mut out = format!("{ATTACK_EVAL_HEADER}\n");
    for r in records {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

/// Attack specification for one grid cell. Compromised sets depend only on
/// the master seed and `k`.
pub fn cell_spec(cfg: &ExperimentConfig, setup: &Setup, strategy: Strategy, k: usize, epsilon: f64) -> AttackSpec {
    let mut spec = AttackSpec::new(
        strategy,
        setup.compromised(cfg, k),
        epsilon,
        seed::derive(cfg.seed, strategy.name(), k as u64),
    );
    if let Some(it) = cfg.attacks.iterations {
        spec.iterations = it;
    }
    if let Some(pop) = cfg.attacks.population {
        spec.population = pop;
    }
    spec
}

/// Crafts every grid attack against the undefended model and scores it on
/// every trained pipeline. Padded pipelines therefore face transferred
/// attacks: the attacker never sees their paddings.
pub fn evaluate_grid(
    cfg: &ExperimentConfig,
    setup: &Setup,
    test: &Dataset,
    models: &[(usize, DetectorModel)],
) -> Result<Vec<CellRecord>> {
    let base = models
        .iter()
        .find(|(p, _)| *p == 0)
        .map(|(_, m)| m)
        .ok_or_else(|| HarnessError::Missing("undefended model (p = 0)".into()))?;
    let sources = test.filter(Label::False);
    let eval_seed = seed::derive(cfg.seed, "eval", 0);
    let pipelines: Vec<(usize, usize, Pipeline<'_>)> = models
        .iter()
        .map(|(p, m)| match (&m.padding, p) {
            (Some(s), _) => Ok((*p, s.infer_votes, Pipeline::Defended(m, s))),
            (None, 0) => Ok((0, 1, Pipeline::Undefended(m))),
            (None, _) => Err(HarnessError::Missing(format!("padding scheme in model_p{p}"))),
        })
        .collect::<Result<_>>()?;
    let mut baselines = Vec::new();
    for (_, _, pipe) in &pipelines {
        let labels = pipe.classify(test, eval_seed)?;
        let correct = labels.iter().zip(&test.samples).filter(|(l, s)| **l == s.label).count();
        baselines.push((correct as f64 / test.len().max(1) as f64, pipe.detection_rate(&sources, eval_seed)?));
    }
    let mut records = Vec::new();
    for &strategy in &cfg.attacks.strategies {
        for &k in &cfg.attacks.k {
            for &epsilon in &cfg.attacks.epsilon {
                let spec = cell_spec(cfg, setup, strategy, k, epsilon);
                let result = run_attack(base, &sources, &spec)?;
                for ((p, r, pipe), (clean, recall)) in pipelines.iter().zip(&baselines) {
                    records.push(CellRecord {
                        case: case_label(&cfg.case),
                        strategy,
                        k,
                        epsilon,
                        p: *p,
                        r: *r,
                        clean_accuracy: *clean,
                        attacked_accuracy: pipe.detection_rate(&result.adversarial, eval_seed)?,
                        recall_on_false: *recall,
                        mean_l2: result.mean_l2,
                        seed: cfg.seed,
                        config_digest: cfg.digest(),
                    });
                }
            }
        }
    }
    Ok(records)
}

/// Runs the attack grid against every trained padding size and writes one
/// file per cell plus `attack_eval.csv`.
pub fn cmd_attack(cfg: &ExperimentConfig) -> Result<Vec<CellRecord>> {
    cfg.check()?;
    let setup = Setup::new(cfg)?;
    let dir = cfg.case_dir();
    let splits = Splits::load(&dir)?;
    check_digest(cfg, &splits.manifest.config_digest, "dataset")?;
    let (_, _, test) = splits.normalized();
    let models = cfg
        .padding_sizes()
        .into_iter()
        .map(|p| Ok((p, load_model(&dir, p, cfg)?.0)))
        .collect::<Result<Vec<_>>>()?;
    let records = evaluate_grid(cfg, &setup, &test, &models)?;
    for r in &records {
        write(
            &dir.join("eval/cells").join(r.file_name()),
            &serde_json::to_string_pretty(r).expect("record serializes"),
        )?;
    }
    write(&dir.join("eval/attack_eval.csv"), &records_csv(&records))?;
    Ok(records)
}

/// Principal-component projection of row vectors onto their top two
/// directions. Returns the coordinates and the `2 x d` basis.
pub fn pca_2d(rows: &[Vec<f64>]) -> Result<(Vec<[f64; 2]>, [Vec<f64>; 2])> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if n < 2 || d < 2 {
        return Err(HarnessError::Degenerate(0));
    }
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let mean = x.row_mean();
    let centred = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centred.transpose() * &centred / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let live = order.iter().filter(|&&i| eig.eigenvalues[i] > 1e-12 * top.max(1e-300)).count();
    if live < 2 || top <= 0.0 {
        return Err(HarnessError::Degenerate(live));
    }
    let basis: [Vec<f64>; 2] = [0, 1].map(|r| {
        let v: Vec<f64> = eig.eigenvectors.column(order[r]).iter().copied().collect();
        // Fix the sign so the largest component is positive.
        let pivot = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if pivot < 0.0 {
            v.iter().map(|c| -c).collect()
        } else {
            v
        }
    });
    let coords = (0..n)
        .map(|i| {
            let row = centred.row(i);
            [0, 1].map(|r| row.iter().zip(&basis[r]).map(|(a, b)| a * b).sum())
        })
        .collect();
    Ok((coords, basis))
}

/// Projects the undefended detector's last hidden layer over the test split
/// to two principal components.
pub fn cmd_embed(cfg: &ExperimentConfig) -> Result<usize> {
    cfg.check()?;
    let dir = cfg.case_dir();
    let splits = Splits::load(&dir)?;
    let (_, _, test) = splits.normalized();
    let (model, _) = load_model(&dir, 0, cfg)?;
    let acts = test
        .samples
        .iter()
        .map(|s| model.embedding(&s.features))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let (coords, _) = pca_2d(&acts)?;
    let mut out = String::from("x,y,label\n");
    for (c, s) in coords.iter().zip(&test.samples) {
        let _ = writeln!(out, "{},{},{}", c[0], c[1], s.label as u8);
    }
    write(&dir.join("embed/embedding.csv"), &out)?;
    Ok(coords.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    #[serde(flatten)]
    pub cell: CellRecord,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub case: String,
    pub config_digest: String,
    pub tool_version: String,
    pub embedding_method: String,
    pub records: Vec<ReportRecord>,
    pub loss_curves: Vec<LossCurve>,
    /// `C(m + p, p)` per padding size.
    pub guessing_space: Vec<(usize, f64)>,
}

/// Merges per-cell results and loss curves of a case directory. Fails on the
/// first missing cell or on artifacts from a different config.
pub fn cmd_report(case_dir: &Path) -> Result<RunReport> {
    let cfg = ExperimentConfig::from_json(&read(&case_dir.join("config.json"))?)?;
    let digest = cfg.digest();
    let mut missing = Vec::new();
    let mut records = Vec::new();
    let mut metas = Vec::new();
    for p in cfg.padding_sizes() {
        let meta_path = case_dir.join(format!("models/model_p{p}.meta.json"));
        match read_json::<ModelMeta>(&meta_path) {
            Ok(meta) => {
                check_digest(&cfg, &meta.config_digest, &meta_path.display().to_string())?;
                metas.push(meta);
            }
            Err(HarnessError::Missing(_)) => missing.push(format!("models/model_p{p}.meta.json")),
            Err(e) => return Err(e),
        }
    }
    let mut curves = Vec::new();
    for p in cfg.padding_sizes() {
        let path = case_dir.join(format!("curves/loss_p{p}.csv"));
        match read(&path) {
            Ok(text) => curves.push(parse_curve(&text, p).map_err(|e| io_err(&path, e))?),
            Err(HarnessError::Missing(_)) => missing.push(format!("curves/loss_p{p}.csv")),
            Err(e) => return Err(e),
        }
    }
    for &strategy in &cfg.attacks.strategies {
        for &k in &cfg.attacks.k {
            for &epsilon in &cfg.attacks.epsilon {
                for p in cfg.padding_sizes() {
                    let name = cell_name(strategy, k, epsilon, p);
                    let path = case_dir.join("eval/cells").join(&name);
                    match read_json::<CellRecord>(&path) {
                        Ok(cell) => {
                            if cell.config_digest != digest {
                                return Err(HarnessError::Digest(format!(
                                    "cell {name} has digest {}, config has {digest}",
                                    cell.config_digest
                                )));
                            }
                            let train_seconds =
                                metas.iter().find(|m| m.p == p).map_or(f64::NAN, |m| m.train_seconds);
                            records.push(ReportRecord { cell, train_seconds });
                        }
                        Err(HarnessError::Missing(_)) => missing.push(format!("eval/cells/{name}")),
                        Err(e) => return Err(e),
                    }
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(HarnessError::Missing(format!("grid cells: {}", missing.join(", "))));
    }
    let m = Setup::new(&cfg)?.m();
    let report = RunReport {
        case: case_label(&cfg.case),
        config_digest: digest,
        tool_version: VERSION.to_string(),
        embedding_method: "pca".to_string(),
        records,
        loss_curves: curves,
        guessing_space: cfg
            .padding_sizes()
            .into_iter()
            .map(|p| (p, PaddingScheme::new(m, p, ValuePolicy::UniformRange { lo: 0.0, hi: 0.0 }).guessing_space()))
            .collect(),
    };
    write(
        &case_dir.join("report.json"),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    let cells: Vec<CellRecord> = report.records.iter().map(|r| r.cell.clone()).collect();
    write(&case_dir.join("summary.csv"), &records_csv(&cells))?;
    Ok(report)
}

fn parse_curve(text: &str, p: usize) -> std::result::Result<LossCurve, String> {
    let mut points = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(format!("bad curve row {line:?}"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| e.to_string());
        points.push(crate::nnet::EpochStats {
            epoch: f[0].parse().map_err(|e: std::num::ParseIntError| e.to_string())?,
            train_loss: num(f[1])?,
            val_loss: num(f[2])?,
            val_accuracy: num(f[3])?,
        });
    }
    let best_epoch = points
        .iter()
        .fold((f64::NEG_INFINITY, 0), |(acc, e), pt| if pt.val_accuracy > acc { (pt.val_accuracy, pt.epoch) } else { (acc, e) })
        .1;
    Ok(LossCurve { padding: p, points, best_epoch })
}
