//! Detector-evasion attacks confined to a compromised meter set.
//!
//! Every attack starts from false-data samples (label 1) in normalized feature
//! space and perturbs only the compromised coordinates, by at most `epsilon`
//! each, trying to make the detector answer 0.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Label, LabeledSample};
use crate::defense::{defended_predict, DefenseError, PaddingScheme};
use crate::nnet::{DetectorModel, NnetError};
use crate::{par, seed};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("compromised index {index} out of range for {m} meters")]
    OutOfRange { index: usize, m: usize },
    #[error("compromised set must be sorted, unique and non-empty")]
    BadSupport,
    #[error("invalid attack parameter: {0}")]
    BadParameter(String),
    #[error("{0:?} needs a trained model and cannot generate training data")]
    NeedsModel(Strategy),
    #[error("strategy mismatch: spec is {got:?}, operation is {expected:?}")]
    WrongStrategy { expected: Strategy, got: Strategy },
    #[error("dimension mismatch: target expects {expected}, sources have {got}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] NnetError),
    #[error(transparent)]
    Defense(#[from] DefenseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    RandomPerturbation,
    UniversalNoise,
    IterativeGaussian,
    IterativeGradient,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::RandomPerturbation,
        Strategy::UniversalNoise,
        Strategy::IterativeGaussian,
        Strategy::IterativeGradient,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::RandomPerturbation => "random_perturbation",
            Strategy::UniversalNoise => "universal_noise",
            Strategy::IterativeGaussian => "iterative_gaussian",
            Strategy::IterativeGradient => "iterative_gradient",
        }
    }

    fn default_iterations(self) -> usize {
        match self {
            Strategy::RandomPerturbation => 1,
            Strategy::UniversalNoise => 100,
            Strategy::IterativeGaussian => 50,
            Strategy::IterativeGradient => 40,
        }
    }
}

pub const DEFAULT_EPSILON: f64 = 0.5;
pub const DEFAULT_POPULATION: usize = 32;
const GAUSSIAN_GROWTH: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub strategy: Strategy,
    /// Sorted meter indices the attacker controls.
    pub compromised: Vec<usize>,
    /// Per-meter budget in normalized feature units.
    pub epsilon: f64,
    pub iterations: usize,
    pub step: f64,
    /// Candidates per round for `iterative_gaussian`.
    pub population: usize,
    pub seed: u64,
}

impl AttackSpec {
    /// Spec with this strategy's default iterations, `step = epsilon / 10`.
    pub fn new(strategy: Strategy, compromised: Vec<usize>, epsilon: f64, seed: u64) -> Self {
        Self {
            strategy,
            compromised,
            epsilon,
            iterations: strategy.default_iterations(),
            step: epsilon / 10.0,
            population: DEFAULT_POPULATION,
            seed,
        }
    }

    pub fn k(&self) -> usize {
        self.compromised.len()
    }

    pub fn check(&self, m: usize) -> Result<(), AttackError> {
        let c = &self.compromised;
        if c.is_empty() || c.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AttackError::BadSupport);
        }
        if let Some(&index) = c.iter().find(|&&i| i >= m) {
            return Err(AttackError::OutOfRange { index, m });
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(AttackError::BadParameter(format!("epsilon {}", self.epsilon)));
        }
        if !(self.step >= 0.0 && self.step.is_finite()) {
            return Err(AttackError::BadParameter(format!("step {}", self.step)));
        }
        Ok(())
    }

    fn expect(&self, strategy: Strategy) -> Result<(), AttackError> {
        if self.strategy != strategy {
            return Err(AttackError::WrongStrategy { expected: strategy, got: self.strategy });
        }
        Ok(())
    }
}

/// The first `k` meters of a seeded random ordering, sorted. Sets for
/// different `k` under one seed are nested, so a larger attacker controls
/// everything a smaller one does.
pub fn choose_compromised(m: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut seed::rng(seed, "compromised", 0));
    let mut set = order[..k.min(m)].to_vec();
    set.sort_unstable();
    set
}

/// Injection used when building training data, before any detector exists.
/// Returns one offset per compromised meter, in normalized units.
/// `universal_noise` draws a single offset per spec seed and reuses it;
/// `iterative_gaussian` draws clipped `N(0, (epsilon/2)^2)` offsets.
pub fn model_free_delta(spec: &AttackSpec, rng: &mut seed::Rng) -> Result<Vec<f64>, AttackError> {
    let k = spec.k();
    let eps = spec.epsilon;
    Ok(match spec.strategy {
        Strategy::RandomPerturbation => {
            let alpha: f64 = rng.gen();
            (0..k).map(|_| alpha * rng.gen_range(-1.0..=1.0) * eps).collect()
        }
        Strategy::UniversalNoise => {
            let mut shared = seed::rng(spec.seed, "universal-gen", 0);
            (0..k).map(|_| shared.gen_range(-1.0..=1.0) * eps).collect()
        }
        Strategy::IterativeGaussian => {
            if eps == 0.0 {
                return Ok(vec![0.0; k]);
            }
            let g = Normal::new(0.0, eps / 2.0).expect("positive std");
            (0..k).map(|_| g.sample(rng).clamp(-eps, eps)).collect()
        }
        Strategy::IterativeGradient => return Err(AttackError::NeedsModel(spec.strategy)),
    })
}

/// Anything an attacker can query for probabilities and input gradients.
pub trait Target: Sync {
    fn input_dim(&self) -> usize;
    fn probs(&self, x: &[f64]) -> Result<[f64; 2], AttackError>;
    /// Cross-entropy of `target` and its gradient with respect to `x`.
    fn loss_and_gradient(&self, x: &[f64], target: Label) -> Result<(f64, Vec<f64>), AttackError>;
}

impl Target for DetectorModel {
    fn input_dim(&self) -> usize {
        DetectorModel::input_dim(self)
    }

    fn probs(&self, x: &[f64]) -> Result<[f64; 2], AttackError> {
        Ok(self.forward(x)?)
    }

    fn loss_and_gradient(&self, x: &[f64], target: Label) -> Result<(f64, Vec<f64>), AttackError> {
        Ok(self.loss_and_input_gradient(x, target)?)
    }
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    /// Perturbed samples, all labeled 1.
    pub adversarial: Dataset,
    /// Fraction the attacked target classifies as 0.
    pub success_rate: f64,
    pub mean_l2: f64,
    pub queries: usize,
}

struct Crafted {
    x: Vec<f64>,
    evaded: bool,
    queries: usize,
}

fn check_dims(target: &dyn Target, sources: &Dataset, spec: &AttackSpec) -> Result<(), AttackError> {
    if target.input_dim() != sources.feature_dim {
        return Err(AttackError::Dimension {
            expected: target.input_dim(),
            got: sources.feature_dim,
        });
    }
    spec.check(sources.feature_dim)
}

fn finish(sources: &Dataset, crafted: Vec<Result<Crafted, AttackError>>) -> Result<AttackResult, AttackError> {
    let mut samples = Vec::with_capacity(crafted.len());
    let (mut evaded, mut queries, mut l2) = (0usize, 0usize, 0.0);
    for (c, src) in crafted.into_iter().zip(&sources.samples) {
        let c = c?;
        evaded += c.evaded as usize;
        queries += c.queries;
        l2 += c
            .x
            .iter()
            .zip(&src.features)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        samples.push(LabeledSample { features: c.x, label: Label::False });
    }
    let n = samples.len().max(1) as f64;
    Ok(AttackResult {
        adversarial: sources.with_samples(samples),
        success_rate: evaded as f64 / n,
        mean_l2: l2 / n,
        queries,
    })
}

fn evades(target: &dyn Target, x: &[f64]) -> Result<bool, AttackError> {
    Ok(Label::from_probs(target.probs(x)?) == Label::Normal)
}

/// Adds `alpha * u * epsilon` on each compromised meter, with one intensity
/// `alpha ~ U[0, 1]` per sample and `u ~ U[-1, 1]` per meter. The target is
/// only consulted to score the result.
pub fn random_perturbation(
    target: &dyn Target,
    sources: &Dataset,
    spec: &AttackSpec,
) -> Result<AttackResult, AttackError> {
    spec.expect(Strategy::RandomPerturbation)?;
    check_dims(target, sources, spec)?;
    let crafted = par::map_slice(&sources.samples, |i, s| {
        let mut rng = seed::rng(spec.seed, "random", i as u64);
        let mut x = s.features.clone();
        let alpha: f64 = rng.gen();
        for &j in &spec.compromised {
            x[j] += alpha * rng.gen_range(-1.0..=1.0) * spec.epsilon;
        }
        Ok(Crafted { evaded: evades(target, &x)?, x, queries: 1 })
    });
    finish(sources, crafted)
}

/// Mean cross-entropy of label 1 over `sources` shifted by `delta`, and its
/// gradient. Per-sample terms are reduced in index order.
fn mean_loss(target: &dyn Target, sources: &Dataset, delta: &[f64]) -> Result<(f64, Vec<f64>), AttackError> {
    let per = par::map_slice(&sources.samples, |_, s| {
        let x: Vec<f64> = s.features.iter().zip(delta).map(|(a, d)| a + d).collect();
        target.loss_and_gradient(&x, Label::False)
    });
    let mut loss = 0.0;
    let mut grad = vec![0.0; delta.len()];
    for r in per {
        let (l, g) = r?;
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let n = sources.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

/// One shared offset for every source, found by sign-of-mean-gradient ascent
/// on the mean label-1 loss with projection onto the budget box. The best
/// iterate seen is returned.
pub fn universal_noise(
    target: &dyn Target,
    sources: &Dataset,
    spec: &AttackSpec,
) -> Result<(Vec<f64>, AttackResult), AttackError> {
    spec.expect(Strategy::UniversalNoise)?;
    check_dims(target, sources, spec)?;
    let dim = sources.feature_dim;
    let mut delta = vec![0.0; dim];
    let (mut best_loss, mut grad) = mean_loss(target, sources, &delta)?;
    let mut best = delta.clone();
    let mut queries = sources.len();
    for _ in 0..spec.iterations {
        for &j in &spec.compromised {
            delta[j] = (delta[j] + spec.step * sign(grad[j])).clamp(-spec.epsilon, spec.epsilon);
        }
        let (loss, g) = mean_loss(target, sources, &delta)?;
        queries += sources.len();
        if loss > best_loss {
            best_loss = loss;
            best.clone_from(&delta);
        }
        grad = g;
    }
    let crafted = par::map_slice(&sources.samples, |_, s| {
        let x: Vec<f64> = s.features.iter().zip(&best).map(|(a, d)| a + d).collect();
        Ok(Crafted { evaded: evades(target, &x)?, x, queries: 0 })
    });
    let mut result = finish(sources, crafted)?;
    result.queries = queries;
    Ok((best, result))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient-free evolutionary search. Each round samples `population`
/// Gaussian candidates around the current offset; the best one that lowers
/// the label-1 probability becomes the new centre, otherwise the spread grows.
/// Stops as soon as a candidate is classified 0, keeping the smallest such.
pub fn iterative_gaussian(
    target: &dyn Target,
    sources: &Dataset,
    spec: &AttackSpec,
) -> Result<AttackResult, AttackError> {
    spec.expect(Strategy::IterativeGaussian)?;
    check_dims(target, sources, spec)?;
    let eps = spec.epsilon;
    let crafted = par::map_slice(&sources.samples, |i, s| {
        let x0 = &s.features;
        let p0 = target.probs(x0)?;
        let mut queries = 1;
        if Label::from_probs(p0) == Label::Normal || spec.population == 0 || eps == 0.0 {
            return Ok(Crafted { evaded: Label::from_probs(p0) == Label::Normal, x: x0.clone(), queries });
        }
        let mut rng = seed::rng(spec.seed, "gaussian", i as u64);
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let k = spec.k();
        let mut centre = vec![0.0; k];
        let mut best_p1 = p0[1];
        let mut spread = eps / 10.0;
        let mut x = x0.clone();
        for _ in 0..spec.iterations {
            let mut round_best: Option<(f64, Vec<f64>)> = None;
            let mut winner: Option<(f64, Vec<f64>)> = None;
            for _ in 0..spec.population {
                let cand: Vec<f64> = centre
                    .iter()
                    .map(|c| (c + spread * unit.sample(&mut rng)).clamp(-eps, eps))
                    .collect();
                for (&j, d) in spec.compromised.iter().zip(&cand) {
                    x[j] = x0[j] + d;
                }
                let p = target.probs(&x)?;
                queries += 1;
                if Label::from_probs(p) == Label::Normal {
                    let l2 = cand.iter().map(|d| d * d).sum::<f64>();
                    if winner.as_ref().map_or(true, |(w, _)| l2 < *w) {
                        winner = Some((l2, cand.clone()));
                    }
                }
                if round_best.as_ref().map_or(true, |(b, _)| p[1] < *b) {
                    round_best = Some((p[1], cand));
                }
            }
            if let Some((_, cand)) = winner {
                for (&j, d) in spec.compromised.iter().zip(&cand) {
                    x[j] = x0[j] + d;
                }
                return Ok(Crafted { x, evaded: true, queries });
            }
            match round_best {
                Some((p1, cand)) if p1 < best_p1 => {
                    best_p1 = p1;
                    centre = cand;
                }
                _ => spread = (spread * GAUSSIAN_GROWTH).min(eps),
            }
        }
        for (&j, d) in spec.compromised.iter().zip(&centre) {
            x[j] = x0[j] + d;
        }
        Ok(Crafted { evaded: evades(target, &x)?, x, queries })
    });
    finish(sources, crafted)
}

/// Projected sign-gradient ascent on the label-1 loss, per sample.
pub fn iterative_gradient(
    target: &dyn Target,
    sources: &Dataset,
    spec: &AttackSpec,
) -> Result<AttackResult, AttackError> {
    spec.expect(Strategy::IterativeGradient)?;
    check_dims(target, sources, spec)?;
    let eps = spec.epsilon;
    let crafted = par::map_slice(&sources.samples, |_, s| {
        let x0 = &s.features;
        let mut x = x0.clone();
        for _ in 0..spec.iterations {
            let (_, g) = target.loss_and_gradient(&x, Label::False)?;
            for &j in &spec.compromised {
                let d = (x[j] - x0[j] + spec.step * sign(g[j])).clamp(-eps, eps);
                x[j] = x0[j] + d;
            }
        }
        Ok(Crafted { evaded: evades(target, &x)?, x, queries: spec.iterations + 1 })
    });
    finish(sources, crafted)
}

/// Dispatches on `spec.strategy`.
pub fn run_attack(target: &dyn Target, sources: &Dataset, spec: &AttackSpec) -> Result<AttackResult, AttackError> {
    match spec.strategy {
        Strategy::RandomPerturbation => random_perturbation(target, sources, spec),
        Strategy::UniversalNoise => universal_noise(target, sources, spec).map(|(_, r)| r),
        Strategy::IterativeGaussian => iterative_gaussian(target, sources, spec),
        Strategy::IterativeGradient => iterative_gradient(target, sources, spec),
    }
}

/// The deployed classifier: a bare detector or a padded one with voting.
#[derive(Clone, Copy)]
pub enum Pipeline<'a> {
    Undefended(&'a DetectorModel),
    Defended(&'a DetectorModel, &'a PaddingScheme),
}

impl Pipeline<'_> {
    /// Labels every sample. Defended predictions draw fresh paddings from
    /// per-sample streams of `seed`.
    pub fn classify(&self, data: &Dataset, seed: u64) -> Result<Vec<Label>, AttackError> {
        par::map_slice(&data.samples, |i, s| match *self {
            Pipeline::Undefended(m) => Ok(m.predict(&s.features)?),
            Pipeline::Defended(m, scheme) => {
                let mut rng = seed::rng(seed, "defended-predict", i as u64);
                Ok(defended_predict(m, scheme, &s.features, &mut rng)?.0)
            }
        })
        .into_iter()
        .collect()
    }

    /// Fraction of `data` labeled 1.
    pub fn detection_rate(&self, data: &Dataset, seed: u64) -> Result<f64, AttackError> {
        let labels = self.classify(data, seed)?;
        Ok(labels.iter().filter(|l| **l == Label::False).count() as f64 / labels.len().max(1) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackEval {
    /// Fraction of adversarial samples the pipeline still labels 1.
    pub attacked_accuracy: f64,
    pub mean_l2: f64,
    /// Evasion rate against the crafting target itself.
    pub crafting_success: f64,
}

/// Crafts against `crafting` and scores the result on `pipeline`. The
/// attacker never sees the pipeline's runtime padding.
pub fn evaluate_under_attack(
    crafting: &dyn Target,
    pipeline: Pipeline<'_>,
    sources: &Dataset,
    spec: &AttackSpec,
    eval_seed: u64,
) -> Result<AttackEval, AttackError> {
    let result = run_attack(crafting, sources, spec)?;
    Ok(AttackEval {
        attacked_accuracy: pipeline.detection_rate(&result.adversarial, eval_seed)?,
        mean_l2: result.mean_l2,
        crafting_success: result.success_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{init_model, Activation, Dense};

    fn linear(w0: Vec<f64>, w1: Vec<f64>, b: [f64; 2]) -> DetectorModel {
        let n = w0.len();
        DetectorModel {
            layer_dims: vec![n, 2],
            activation: Activation::Relu,
            layers: vec![Dense { inputs: n, outputs: 2, weights: [w0, w1].concat(), biases: b.to_vec() }],
            normalization: None,
            train_digest: None,
            padding: None,
        }
    }

    fn sources(n: usize, dim: usize, seed: u64) -> Dataset {
        let mut rng = seed::rng_from(seed);
        let samples = (0..n)
            .map(|_| LabeledSample {
                features: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                label: Label::False,
            })
            .collect();
        Dataset::new(samples, dim, dim)
    }

    fn spec(strategy: Strategy, k: &[usize], eps: f64) -> AttackSpec {
        AttackSpec::new(strategy, k.to_vec(), eps, 5)
    }

    #[test]
    fn support_and_budget_hold_for_every_strategy() {
        let model = init_model(8, &[16], 2);
        let src = sources(40, 8, 1);
        for s in Strategy::ALL {
            let sp = spec(s, &[1, 3, 6], 0.7);
            let r = run_attack(&model, &src, &sp).unwrap();
            for (a, b) in r.adversarial.samples.iter().zip(&src.samples) {
                for j in 0..8 {
                    let d = a.features[j] - b.features[j];
                    if [1, 3, 6].contains(&j) {
                        assert!(d.abs() <= 0.7 + 1e-12, "{s:?} {d}");
                    } else {
                        assert_eq!(a.features[j].to_bits(), b.features[j].to_bits());
                    }
                }
                assert_eq!(a.label, Label::False);
            }
        }
    }

    #[test]
    fn zero_budget_is_identity() {
        let model = init_model(4, &[8], 0);
        let src = sources(10, 4, 3);
        for s in Strategy::ALL {
            let r = run_attack(&model, &src, &spec(s, &[0, 2], 0.0)).unwrap();
            assert_eq!(r.adversarial.samples, src.samples, "{s:?}");
            assert_eq!(r.mean_l2, 0.0);
        }
        let mut sp = spec(Strategy::IterativeGaussian, &[0, 2], 0.5);
        sp.population = 0;
        assert_eq!(iterative_gaussian(&model, &src, &sp).unwrap().adversarial.samples, src.samples);
    }

    #[test]
    fn zero_iterations_keep_baseline_false_negatives() {
        let model = init_model(4, &[8], 3);
        let src = sources(200, 4, 4);
        let mut sp = spec(Strategy::UniversalNoise, &[0, 1], 0.5);
        sp.iterations = 0;
        let (delta, r) = universal_noise(&model, &src, &sp).unwrap();
        assert!(delta.iter().all(|d| *d == 0.0));
        let missed = src
            .samples
            .iter()
            .filter(|s| model.predict(&s.features).unwrap() == Label::Normal)
            .count();
        assert_eq!(r.success_rate, missed as f64 / 200.0);
    }

    #[test]
    fn attacks_are_deterministic() {
        let model = init_model(6, &[8], 1);
        let src = sources(30, 6, 2);
        for s in Strategy::ALL {
            let sp = spec(s, &[0, 4], 0.4);
            let a = run_attack(&model, &src, &sp).unwrap();
            let b = run_attack(&model, &src, &sp).unwrap();
            assert_eq!(a.adversarial, b.adversarial);
            assert_eq!(a.queries, b.queries);
        }
    }

    #[test]
    fn spec_validation() {
        let model = init_model(4, &[4], 0);
        let src = sources(3, 4, 0);
        let bad = spec(Strategy::IterativeGradient, &[1, 9], 0.1);
        assert!(matches!(run_attack(&model, &src, &bad), Err(AttackError::OutOfRange { index: 9, m: 4 })));
        let unsorted = spec(Strategy::IterativeGradient, &[2, 1], 0.1);
        assert!(matches!(run_attack(&model, &src, &unsorted), Err(AttackError::BadSupport)));
        let wide = init_model(5, &[4], 0);
        assert!(matches!(
            run_attack(&wide, &src, &spec(Strategy::IterativeGradient, &[1], 0.1)),
            Err(AttackError::Dimension { .. })
        ));
        assert!(matches!(
            random_perturbation(&model, &src, &spec(Strategy::UniversalNoise, &[1], 0.1)),
            Err(AttackError::WrongStrategy { .. })
        ));
        let mut rng = seed::rng_from(0);
        assert!(model_free_delta(&spec(Strategy::IterativeGradient, &[1], 0.1), &mut rng).is_err());
    }

    #[test]
    fn single_step_is_fast_gradient() {
        let model = init_model(5, &[8], 7);
        let src = sources(20, 5, 8);
        let mut sp = spec(Strategy::IterativeGradient, &[0, 2, 3], 0.3);
        sp.iterations = 1;
        sp.step = 0.3;
        let r = iterative_gradient(&model, &src, &sp).unwrap();
        for (a, s) in r.adversarial.samples.iter().zip(&src.samples) {
            let g = model.input_gradient(&s.features, Label::False).unwrap();
            for &j in &[0, 2, 3] {
                let expected = s.features[j] + 0.3 * sign(g[j]);
                assert_eq!(a.features[j], expected);
            }
        }
    }

    #[test]
    fn linear_model_one_step_is_box_optimal() {
        // For a linear detector the label-1 loss increases fastest along the
        // sign of (w0 - w1); one full step lands on the optimal box corner.
        let model = linear(vec![0.5, -1.0, 2.0], vec![-0.5, 1.5, 0.25], [0.0, 1.0]);
        let src = sources(10, 3, 9);
        let mut sp = spec(Strategy::IterativeGradient, &[0, 1, 2], 0.2);
        sp.iterations = 1;
        sp.step = 0.2;
        let r = iterative_gradient(&model, &src, &sp).unwrap();
        let corner = [0.2, -0.2, 0.2];
        for (a, s) in r.adversarial.samples.iter().zip(&src.samples) {
            let best = model.loss(&a.features, Label::False).unwrap();
            for mask in 0..8u32 {
                let x: Vec<f64> = (0..3)
                    .map(|j| s.features[j] + if mask >> j & 1 == 1 { 0.2 } else { -0.2 })
                    .collect();
                assert!(model.loss(&x, Label::False).unwrap() <= best + 1e-12);
            }
            for j in 0..3 {
                assert!((a.features[j] - s.features[j] - corner[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn universal_sign_pattern_on_linear_model() {
        let model = linear(vec![1.0, -2.0, 0.3, 4.0], vec![0.0, 0.5, 1.0, 1.0], [0.0, 0.0]);
        let src = sources(50, 4, 10);
        let sp = spec(Strategy::UniversalNoise, &[0, 1, 2], 0.5);
        let (delta, _) = universal_noise(&model, &src, &sp).unwrap();
        for (d, e) in delta.iter().zip([0.5, -0.5, -0.5, 0.0]) {
            assert!((d - e).abs() < 1e-12, "{delta:?}");
        }
    }

    #[test]
    fn universal_matches_grid_search() {
        // Non-convex toy: a small ReLU network on two features.
        let model = init_model(2, &[6], 13);
        let src = sources(60, 2, 14);
        let sp = spec(Strategy::UniversalNoise, &[0, 1], 1.0);
        let (delta, _) = universal_noise(&model, &src, &sp).unwrap();
        let objective = |d: &[f64]| mean_loss(&model, &src, d).unwrap().0;
        let found = objective(&delta);
        let levels: Vec<f64> = (0..8).map(|i| -1.0 + 2.0 * i as f64 / 7.0).collect();
        let grid_best = levels
            .iter()
            .flat_map(|a| levels.iter().map(move |b| [*a, *b]))
            .map(|d| objective(&d))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(found >= 0.95 * grid_best, "{found} vs {grid_best}");
    }

    #[test]
    fn gaussian_stops_on_success_with_small_offsets() {
        // Detector says 1 iff x0 > 0.1; sources sit just above the boundary.
        let model = linear(vec![0.0], vec![10.0], [1.0, 0.0]);
        let samples = (0..20)
            .map(|i| LabeledSample { features: vec![0.12 + 0.001 * i as f64], label: Label::False })
            .collect();
        let src = Dataset::new(samples, 1, 1);
        let sp = spec(Strategy::IterativeGaussian, &[0], 1.0);
        let r = iterative_gaussian(&model, &src, &sp).unwrap();
        assert_eq!(r.success_rate, 1.0);
        assert!(r.mean_l2 < 0.5, "{}", r.mean_l2);
    }

    #[test]
    fn model_free_generation_forms() {
        let sp = spec(Strategy::UniversalNoise, &[0, 1, 2], 2.0);
        let a = model_free_delta(&sp, &mut seed::rng_from(1)).unwrap();
        let b = model_free_delta(&sp, &mut seed::rng_from(2)).unwrap();
        assert_eq!(a, b);
        let g = spec(Strategy::IterativeGaussian, &[0, 1, 2], 2.0);
        let mut rng = seed::rng_from(3);
        for _ in 0..200 {
            assert!(model_free_delta(&g, &mut rng).unwrap().iter().all(|d| d.abs() <= 2.0));
        }
    }

    #[test]
    fn compromised_sets() {
        let c = choose_compromised(20, 5, 4);
        assert_eq!(c.len(), 5);
        assert!(c.windows(2).all(|w| w[0] < w[1]) && c[4] < 20);
        assert_eq!(c, choose_compromised(20, 5, 4));
        let big = choose_compromised(20, 8, 4);
        assert!(c.iter().all(|i| big.contains(i)));
    }
}
