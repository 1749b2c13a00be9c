//! Random input padding. Each length-`m` measurement vector is widened to
//! `m + p` by inserting random values at random positions; the detector is
//! trained on several paddings per sample and votes over fresh paddings at
//! inference, so a perturbation crafted for one layout meets another.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::binomial;
use thiserror::Error;

use crate::attacks::{AttackError, Target};
use crate::dataset::{Dataset, Label, LabeledSample};
use crate::nnet::{init_model, train, DetectorModel, LossCurve, NnetError, TrainConfig};
use crate::{par, seed};

pub const DEFAULT_EXPANSION: usize = 4;
pub const DEFAULT_VOTES: usize = 3;

#[derive(Debug, Error)]
pub enum DefenseError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid padding scheme: {0}")]
    Scheme(String),
    #[error("model was trained for padding {model:?}, scheme is {scheme:?}")]
    Mismatch { model: Option<(usize, usize)>, scheme: (usize, usize) },
    #[error(transparent)]
    Model(#[from] NnetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ValuePolicy {
    UniformRange { lo: f64, hi: f64 },
}

impl ValuePolicy {
    /// The smallest and largest feature value in `d`.
    pub fn from_dataset(d: &Dataset) -> Self {
        let (lo, hi) = d
            .samples
            .iter()
            .flat_map(|s| s.features.iter())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        if lo > hi {
            ValuePolicy::UniformRange { lo: 0.0, hi: 0.0 }
        } else {
            ValuePolicy::UniformRange { lo, hi }
        }
    }

    fn draw(&self, rng: &mut seed::Rng) -> f64 {
        match *self {
            ValuePolicy::UniformRange { lo, hi } if lo < hi => rng.gen_range(lo..hi),
            ValuePolicy::UniformRange { lo, .. } => lo,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaddingScheme {
    pub m: usize,
    pub p: usize,
    pub value_policy: ValuePolicy,
    /// Paddings per training sample.
    pub train_expansion: usize,
    /// Paddings averaged per prediction.
    pub infer_votes: usize,
}

impl PaddingScheme {
    pub fn new(m: usize, p: usize, value_policy: ValuePolicy) -> Self {
        Self {
            m,
            p,
            value_policy,
            train_expansion: DEFAULT_EXPANSION,
            infer_votes: DEFAULT_VOTES,
        }
    }

    pub fn padded_dim(&self) -> usize {
        self.m + self.p
    }

    pub fn check(&self) -> Result<(), DefenseError> {
        if self.train_expansion == 0 || self.infer_votes == 0 {
            return Err(DefenseError::Scheme("train_expansion and infer_votes must be at least 1".into()));
        }
        let ValuePolicy::UniformRange { lo, hi } = self.value_policy;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(DefenseError::Scheme(format!("bad value range [{lo}, {hi}]")));
        }
        Ok(())
    }

    /// Number of distinct position sets, `C(m + p, p)`: the attacker's
    /// guessing space.
    pub fn guessing_space(&self) -> f64 {
        binomial((self.m + self.p) as u64, self.p as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaddingCombination {
    /// Strictly increasing slots in `0..m + p` holding pad values.
    pub positions: Vec<usize>,
    pub values: Vec<f64>,
}

/// Positions uniform over all `C(m + p, p)` subsets, values from the policy.
pub fn sample_combination(scheme: &PaddingScheme, rng: &mut seed::Rng) -> PaddingCombination {
    if scheme.p == 0 {
        return PaddingCombination { positions: vec![], values: vec![] };
    }
    let mut positions = rand::seq::index::sample(rng, scheme.padded_dim(), scheme.p).into_vec();
    positions.sort_unstable();
    let values = (0..scheme.p).map(|_| scheme.value_policy.draw(rng)).collect();
    PaddingCombination { positions, values }
}

/// Pads occupy `combo.positions`; the original features fill the remaining
/// slots in order.
pub fn pad(z: &[f64], combo: &PaddingCombination) -> Result<Vec<f64>, DefenseError> {
    let p = combo.positions.len();
    let n = z.len() + p;
    if combo.values.len() != p || combo.positions.last().is_some_and(|&last| last >= n) {
        return Err(DefenseError::Dimension {
            expected: n,
            got: combo.positions.last().copied().unwrap_or(0) + 1,
        });
    }
    let mut out = Vec::with_capacity(n);
    let (mut next_pad, mut next_z) = (0, 0);
    for slot in 0..n {
        if next_pad < p && combo.positions[next_pad] == slot {
            out.push(combo.values[next_pad]);
            next_pad += 1;
        } else {
            out.push(z[next_z]);
            next_z += 1;
        }
    }
    Ok(out)
}

/// Drops the pad slots of `x`.
pub fn unpad(x: &[f64], combo: &PaddingCombination) -> Result<Vec<f64>, DefenseError> {
    let p = combo.positions.len();
    if x.len() < p || combo.positions.last().is_some_and(|&last| last >= x.len()) {
        return Err(DefenseError::Dimension { expected: p, got: x.len() });
    }
    let mut out = Vec::with_capacity(x.len() - p);
    let mut next_pad = 0;
    for (slot, v) in x.iter().enumerate() {
        if next_pad < p && combo.positions[next_pad] == slot {
            next_pad += 1;
        } else {
            out.push(*v);
        }
    }
    Ok(out)
}

/// Each sample repeated `K` times under independent paddings, sample-major.
pub fn expand_training(d: &Dataset, scheme: &PaddingScheme, seed: u64) -> Result<Dataset, DefenseError> {
    scheme.check()?;
    if d.feature_dim != scheme.m {
        return Err(DefenseError::Dimension { expected: scheme.m, got: d.feature_dim });
    }
    if scheme.p == 0 && scheme.train_expansion == 1 {
        return Ok(d.clone());
    }
    let k = scheme.train_expansion;
    let copies: Vec<Result<Vec<LabeledSample>, DefenseError>> = par::map_slice(&d.samples, |i, s| {
        let mut rng = seed::rng(seed, "expand", i as u64);
        (0..k)
            .map(|_| {
                let combo = sample_combination(scheme, &mut rng);
                Ok(LabeledSample { features: pad(&s.features, &combo)?, label: s.label })
            })
            .collect()
    });
    let mut samples = Vec::with_capacity(d.len() * k);
    for c in copies {
        samples.extend(c?);
    }
    let mut out = d.with_samples(samples);
    out.feature_dim = scheme.padded_dim();
    Ok(out)
}

fn check_model(model: &DetectorModel, scheme: &PaddingScheme) -> Result<(), DefenseError> {
    if model.input_dim() != scheme.padded_dim() {
        return Err(DefenseError::Dimension { expected: scheme.padded_dim(), got: model.input_dim() });
    }
    if let Some(s) = &model.padding {
        if (s.m, s.p) != (scheme.m, scheme.p) || s.value_policy != scheme.value_policy {
            return Err(DefenseError::Mismatch { model: Some((s.m, s.p)), scheme: (scheme.m, scheme.p) });
        }
    }
    Ok(())
}

/// Averages class probabilities over `R` fresh paddings.
pub fn defended_predict(
    model: &DetectorModel,
    scheme: &PaddingScheme,
    z: &[f64],
    rng: &mut seed::Rng,
) -> Result<(Label, [f64; 2]), DefenseError> {
    scheme.check()?;
    check_model(model, scheme)?;
    if z.len() != scheme.m {
        return Err(DefenseError::Dimension { expected: scheme.m, got: z.len() });
    }
    let mut mean = [0.0; 2];
    for _ in 0..scheme.infer_votes {
        let combo = sample_combination(scheme, rng);
        let p = model.forward(&pad(z, &combo)?)?;
        mean[0] += p[0];
        mean[1] += p[1];
    }
    let r = scheme.infer_votes as f64;
    let mean = [mean[0] / r, mean[1] / r];
    Ok((Label::from_probs(mean), mean))
}

/// Expands both splits, trains a fresh `m + p` input model and tags it with
/// the scheme.
pub fn train_defended(
    raw_train: &Dataset,
    raw_val: &Dataset,
    scheme: &PaddingScheme,
    hidden: &[usize],
    cfg: &TrainConfig,
) -> Result<(DetectorModel, LossCurve), DefenseError> {
    let train_set = expand_training(raw_train, scheme, seed::derive(cfg.seed, "expand-train", scheme.p as u64))?;
    let val_set = expand_training(raw_val, scheme, seed::derive(cfg.seed, "expand-val", scheme.p as u64))?;
    let mut model = init_model(scheme.padded_dim(), hidden, cfg.seed);
    model.normalization = raw_train.normalization.clone();
    if scheme.p > 0 {
        model.padding = Some(*scheme);
    }
    let (model, mut curve) = train(&model, &train_set, &val_set, cfg)?;
    curve.padding = scheme.p;
    Ok((model, curve))
}

/// A defended model seen through one fixed padding the attacker has learned.
/// Gradients flow back to the `m` measurement slots.
pub struct FixedPadding<'a> {
    pub model: &'a DetectorModel,
    pub combo: PaddingCombination,
}

impl Target for FixedPadding<'_> {
    fn input_dim(&self) -> usize {
        self.model.input_dim() - self.combo.positions.len()
    }

    fn probs(&self, x: &[f64]) -> Result<[f64; 2], AttackError> {
        Ok(self.model.forward(&pad(x, &self.combo)?)?)
    }

    fn loss_and_gradient(&self, x: &[f64], target: Label) -> Result<(f64, Vec<f64>), AttackError> {
        let (loss, g) = self.model.loss_and_input_gradient(&pad(x, &self.combo)?, target)?;
        Ok((loss, unpad(&g, &self.combo)?))
    }
}
