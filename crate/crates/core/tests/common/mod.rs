//! Finite-difference oracles shared by the gradient tests and the acceptance
//! suite.

#![allow(dead_code)]

use fdia_core::dataset::Label;
use fdia_core::nnet::DetectorModel;

/// On/off state of every hidden ReLU, from an independent forward pass.
pub fn relu_pattern(model: &DetectorModel, x: &[f64]) -> Vec<bool> {
    let mut a = x.to_vec();
    let mut pattern = Vec::new();
    let last = model.layers.len() - 1;
    for (l, layer) in model.layers.iter().enumerate() {
        let z: Vec<f64> = (0..layer.outputs)
            .map(|o| {
                layer.biases[o]
                    + layer.weights[o * layer.inputs..(o + 1) * layer.inputs]
                        .iter()
                        .zip(&a)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
            })
            .collect();
        if l < last {
            pattern.extend(z.iter().map(|v| *v > 0.0));
            a = z.into_iter().map(|v| v.max(0.0)).collect();
        }
    }
    pattern
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

#[derive(Debug, Default)]
pub struct FdStats {
    pub worst: f64,
    pub checked: usize,
    /// Coordinates whose difference interval crosses a ReLU kink.
    pub skipped: usize,
}

/// Central differences of the label loss against `input_gradient`, one
/// coordinate at a time.
pub fn check_input_gradient(model: &DetectorModel, x: &[f64], label: Label, h: f64, stats: &mut FdStats) {
    let g = model.input_gradient(x, label).unwrap();
    let base = relu_pattern(model, x);
    for j in 0..x.len() {
        let mut plus = x.to_vec();
        let mut minus = x.to_vec();
        plus[j] += h;
        minus[j] -= h;
        if relu_pattern(model, &plus) != base || relu_pattern(model, &minus) != base {
            stats.skipped += 1;
            continue;
        }
        let numeric = (model.loss(&plus, label).unwrap() - model.loss(&minus, label).unwrap()) / (2.0 * h);
        stats.worst = stats.worst.max(rel_err(g[j], numeric));
        stats.checked += 1;
    }
}

/// Central differences of the label loss against `param_gradient` for every
/// weight and bias.
pub fn check_param_gradient(model: &DetectorModel, x: &[f64], label: Label, h: f64, stats: &mut FdStats) {
    let (_, grads) = model.param_gradient(x, label).unwrap();
    let base = relu_pattern(model, x);
    let mut probe = model.clone();
    for l in 0..model.layers.len() {
        let n_w = model.layers[l].weights.len();
        let n_b = model.layers[l].biases.len();
        for idx in 0..n_w + n_b {
            let (analytic, orig) = if idx < n_w {
                (grads.layers[l].weights[idx], model.layers[l].weights[idx])
            } else {
                (grads.layers[l].biases[idx - n_w], model.layers[l].biases[idx - n_w])
            };
            let mut eval = |v: f64| {
                if idx < n_w {
                    probe.layers[l].weights[idx] = v;
                } else {
                    probe.layers[l].biases[idx - n_w] = v;
                }
                (relu_pattern(&probe, x) == base, probe.loss(x, label).unwrap())
            };
            let (ok_p, lp) = eval(orig + h);
            let (ok_m, lm) = eval(orig - h);
            eval(orig);
            if !(ok_p && ok_m) {
                stats.skipped += 1;
                continue;
            }
            stats.worst = stats.worst.max(rel_err(analytic, (lp - lm) / (2.0 * h)));
            stats.checked += 1;
        }
    }
}
