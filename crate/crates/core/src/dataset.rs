//! Labeled measurement datasets: generation, stratified splits, feature
//! standardization and CSV persistence.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::{model_free_delta, AttackError, AttackSpec};
use crate::casefile::CaseSystem;
use crate::dcmodel::{measure, sample_states, DcError, MeasurementModel, DEFAULT_LOAD_SCALE};
use crate::nnet::hex_digest;
use crate::{par, seed};

pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("false_ratio must lie in [0, 1], got {0}")]
    BadRatio(f64),
    #[error("attack_mix is empty but false_ratio is positive")]
    EmptyMix,
    #[error("attack_mix weight {0} is not positive")]
    BadWeight(f64),
    #[error("split fractions must be positive and sum to 1, got {0:?}")]
    BadFractions((f64, f64, f64)),
    #[error("split {split} would receive no samples of class {label}")]
    EmptyClass { split: &'static str, label: u8 },
    #[error("empty dataset")]
    Empty,
    #[error("sample {index} has {got} features, expected {expected}")]
    Ragged { index: usize, expected: usize, got: usize },
    #[error("sample {index} has a non-finite feature")]
    NonFinite { index: usize },
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Dc(#[from] DcError),
    #[error(transparent)]
    Attack(#[from] AttackError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Normal,
    False,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    /// Label 1 only when its probability strictly exceeds label 0's.
    pub fn from_probs(p: [f64; 2]) -> Self {
        if p[1] > p[0] {
            Label::False
        } else {
            Label::Normal
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(Label::Normal),
            1 => Ok(Label::False),
            _ => Err(format!("label must be 0 or 1, got {v}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: Label,
}

/// Per-feature `(v - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn apply_dataset(&self, d: &Dataset) -> Dataset {
        let mut out = d.clone();
        for s in &mut out.samples {
            s.features = self.apply(&s.features);
        }
        out.normalization = Some(self.clone());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub feature_dim: usize,
    pub meter_count: usize,
    pub normalization: Option<Normalization>,
    /// Digest of the generation config.
    pub provenance: String,
}

impl Dataset {
    pub fn new(samples: Vec<LabeledSample>, feature_dim: usize, meter_count: usize) -> Self {
        Self {
            samples,
            feature_dim,
            meter_count,
            normalization: None,
            provenance: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(normal, false)` sample counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let ones = self.samples.iter().filter(|s| s.label == Label::False).count();
        (self.len() - ones, ones)
    }

    /// Keeps the samples carrying `label`.
    pub fn filter(&self, label: Label) -> Dataset {
        let mut out = self.with_samples(Vec::new());
        out.samples = self.samples.iter().filter(|s| s.label == label).cloned().collect();
        out
    }

    /// Same metadata, different samples.
    pub fn with_samples(&self, samples: Vec<LabeledSample>) -> Dataset {
        Dataset {
            samples,
            feature_dim: self.feature_dim,
            meter_count: self.meter_count,
            normalization: self.normalization.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn check(&self) -> Result<(), DatasetError> {
        for (index, s) in self.samples.iter().enumerate() {
            if s.features.len() != self.feature_dim {
                return Err(DatasetError::Ragged {
                    index,
                    expected: self.feature_dim,
                    got: s.features.len(),
                });
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(DatasetError::NonFinite { index });
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.len() * self.feature_dim * 20);
        for j in 0..self.feature_dim {
            let _ = write!(out, "meter_{j},");
        }
        out.push_str("label\n");
        for s in &self.samples {
            for v in &s.features {
                // `Display` for f64 is the shortest string that round-trips.
                let _ = write!(out, "{v},");
            }
            let _ = writeln!(out, "{}", s.label as u8);
        }
        out
    }

    pub fn from_csv(text: &str, meter_count: usize) -> Result<Dataset, DatasetError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(DatasetError::Csv {
            line: 1,
            message: "missing header".into(),
        })?;
        let cols: Vec<&str> = header.split(',').collect();
        let dim = cols.len().saturating_sub(1);
        let expected: Vec<String> = (0..dim)
            .map(|j| format!("meter_{j}"))
            .chain(std::iter::once("label".to_string()))
            .collect();
        if cols != expected {
            return Err(DatasetError::Csv {
                line: 1,
                message: "header must be meter_0..meter_{d-1},label".into(),
            });
        }
        let mut samples = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| DatasetError::Csv { line: i + 1, message };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 1 {
                return Err(bad(format!("expected {} fields, got {}", dim + 1, fields.len())));
            }
            let features = fields[..dim]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| bad(format!("{f:?}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let label = fields[dim]
                .parse::<u8>()
                .map_err(|e| bad(e.to_string()))
                .and_then(|v| Label::try_from(v).map_err(bad))?;
            samples.push(LabeledSample { features, label });
        }
        let d = Dataset::new(samples, dim, meter_count);
        d.check()?;
        Ok(d)
    }
}

/// A generated dataset together with what produced each sample.
#[derive(Debug, Clone)]
pub struct Generated {
    pub dataset: Dataset,
    /// Each sample's measurement before any injection.
    pub clean: Vec<Vec<f64>>,
    /// Index into the attack mix, for label-1 samples.
    pub attack: Vec<Option<usize>>,
    /// Per-meter standard deviation of the clean measurements; injections are
    /// expressed in these units.
    pub scale: Vec<f64>,
}

#[derive(Serialize)]
struct GenDigest<'a> {
    case: &'a str,
    sigma: f64,
    count: usize,
    false_ratio: f64,
    attack_mix: &'a [(AttackSpec, f64)],
    seed: u64,
}

/// Normal measurements from random load scenarios; `round(count *
/// false_ratio)` of them additionally carry an injection drawn from
/// `attack_mix`. Injections are model-free and sized in units of each
/// meter's standard deviation across the clean measurements.
pub fn generate_dataset(
    case: &CaseSystem,
    model: &MeasurementModel,
    count: usize,
    false_ratio: f64,
    attack_mix: &[(AttackSpec, f64)],
    seed: u64,
) -> Result<Dataset, DatasetError> {
    Ok(generate_detailed(case, model, count, false_ratio, attack_mix, seed)?.dataset)
}

pub fn generate_detailed(
    case: &CaseSystem,
    model: &MeasurementModel,
    count: usize,
    false_ratio: f64,
    attack_mix: &[(AttackSpec, f64)],
    seed: u64,
) -> Result<Generated, DatasetError> {
    if !(0.0..=1.0).contains(&false_ratio) {
        return Err(DatasetError::BadRatio(false_ratio));
    }
    let n_false = (count as f64 * false_ratio).round() as usize;
    if n_false > 0 && attack_mix.is_empty() {
        return Err(DatasetError::EmptyMix);
    }
    if let Some(&(_, w)) = attack_mix.iter().find(|(_, w)| !(*w > 0.0 && w.is_finite())) {
        return Err(DatasetError::BadWeight(w));
    }
    let m = model.meter_count();
    for (spec, _) in attack_mix {
        spec.check(m)?;
    }

    let states = sample_states(case, count, DEFAULT_LOAD_SCALE, seed::derive(seed, "loads", 0))?;
    let clean: Vec<Vec<f64>> = par::map_slice(&states, |i, x| {
        measure(model, x, seed::derive(seed, "noise", i as u64)).map(|z| z.z)
    })
    .into_iter()
    .collect::<Result<_, _>>()?;
    let scale = column_std(&clean, m);

    let mut labels: Vec<Label> = (0..count)
        .map(|i| if i < n_false { Label::False } else { Label::Normal })
        .collect();
    labels.shuffle(&mut seed::rng(seed, "labels", 0));

    let total_weight: f64 = attack_mix.iter().map(|(_, w)| w).sum();
    let rows: Vec<Result<(Vec<f64>, Option<usize>), DatasetError>> =
        par::map_range(count, |i| {
            let mut z = clean[i].clone();
            if labels[i] == Label::Normal {
                return Ok((z, None));
            }
            let mut rng = seed::rng(seed, "inject", i as u64);
            let mut pick = rng.gen::<f64>() * total_weight;
            let mut which = attack_mix.len() - 1;
            for (j, (_, w)) in attack_mix.iter().enumerate() {
                if pick < *w {
                    which = j;
                    break;
                }
                pick -= w;
            }
            let spec = &attack_mix[which].0;
            let delta = model_free_delta(spec, &mut rng)?;
            for (&j, d) in spec.compromised.iter().zip(delta) {
                z[j] += d * scale[j];
            }
            Ok((z, Some(which)))
        });

    let mut samples = Vec::with_capacity(count);
    let mut attack = Vec::with_capacity(count);
    for (r, label) in rows.into_iter().zip(&labels) {
        let (features, a) = r?;
        samples.push(LabeledSample { features, label: *label });
        attack.push(a);
    }
    let digest = GenDigest {
        case: &case.name,
        sigma: model.sigma,
        count,
        false_ratio,
        attack_mix,
        seed,
    };
    let mut dataset = Dataset::new(samples, m, m);
    dataset.provenance = hex_digest(serde_json::to_string(&digest).expect("serializes").as_bytes());
    dataset.check()?;
    Ok(Generated { dataset, clean, attack, scale })
}

fn column_std(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let n = rows.len().max(1) as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect()
}

/// Stratified three-way split. Each class is shuffled and cut separately, so
/// every split keeps the parent's class ratio up to rounding.
pub fn split(
    d: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset), DatasetError> {
    let (a, b, c) = fractions;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadFractions(fractions));
    }
    let mut parts: [Vec<usize>; 3] = Default::default();
    for label in [Label::Normal, Label::False] {
        let mut idx: Vec<usize> = (0..d.len()).filter(|&i| d.samples[i].label == label).collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut seed::rng(seed, "split", label as u64));
        let n = idx.len() as f64;
        let n_train = (n * a).round() as usize;
        let n_val = ((n * b).round() as usize).min(idx.len() - n_train);
        let cuts = [(0, n_train), (n_train, n_train + n_val), (n_train + n_val, idx.len())];
        for ((lo, hi), (part, name)) in cuts.iter().zip(parts.iter_mut().zip(["train", "val", "test"])) {
            if lo == hi {
                return Err(DatasetError::EmptyClass { split: name, label: label as u8 });
            }
            part.extend_from_slice(&idx[*lo..*hi]);
        }
    }
    let [tr, va, te] = parts;
    let make = |mut idx: Vec<usize>, tag: u64| {
        idx.shuffle(&mut seed::rng(seed, "split-order", tag));
        d.with_samples(idx.into_iter().map(|i| d.samples[i].clone()).collect())
    };
    Ok((make(tr, 0), make(va, 1), make(te, 2)))
}

/// Fits `(mean, std)` per feature and returns the standardized dataset with
/// the table attached.
pub fn fit_normalization(d: &Dataset) -> Result<(Dataset, Normalization), DatasetError> {
    if d.is_empty() {
        return Err(DatasetError::Empty);
    }
    let n = d.len() as f64;
    let dim = d.feature_dim;
    let mut mean = vec![0.0; dim];
    for s in &d.samples {
        for (m, v) in mean.iter_mut().zip(&s.features) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for s in &d.samples {
        for ((acc, v), m) in var.iter_mut().zip(&s.features).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    let std = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
    let norm = Normalization { mean, std };
    Ok((norm.apply_dataset(d), norm))
}
