mod common;

use common::{check_input_gradient, check_param_gradient, FdStats};
use fdia_core::dataset::Label;
use fdia_core::nnet::init_model;
use fdia_core::seed;
use rand::Rng;

fn random_input(rng: &mut seed::Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

fn random_label(rng: &mut seed::Rng) -> Label {
    if rng.gen::<bool>() {
        Label::False
    } else {
        Label::Normal
    }
}

#[test]
fn input_gradient_matches_central_differences() {
    for (dim, hidden) in [(20, vec![128, 64]), (7, vec![16, 8]), (3, vec![5])] {
        let model = init_model(dim, &hidden, 11);
        let mut rng = seed::rng_from(dim as u64);
        let mut stats = FdStats::default();
        for _ in 0..100 {
            let x = random_input(&mut rng, dim);
            check_input_gradient(&model, &x, random_label(&mut rng), 1e-4, &mut stats);
        }
        assert!(stats.worst < 1e-4, "{dim} {hidden:?}: {stats:?}");
        assert!(stats.checked > 90 * dim, "{stats:?}");
    }
}

#[test]
fn parameter_gradient_matches_central_differences() {
    let model = init_model(4, &[5, 3], 2);
    let mut rng = seed::rng_from(8);
    let mut stats = FdStats::default();
    for _ in 0..20 {
        let x = random_input(&mut rng, 4);
        check_param_gradient(&model, &x, random_label(&mut rng), 1e-5, &mut stats);
    }
    assert!(stats.worst < 1e-4, "{stats:?}");
    assert!(stats.checked > stats.skipped * 10, "{stats:?}");
}

#[test]
fn gradient_is_large_where_probabilities_are_confident_and_wrong() {
    // The loss gradient norm scales with (1 - p_target): compare a confident
    // right answer against the same input scored for the other label.
    let model = init_model(6, &[8], 3);
    let mut rng = seed::rng_from(1);
    for _ in 0..20 {
        let x = random_input(&mut rng, 6);
        let p = model.forward(&x).unwrap();
        let right = Label::from_probs(p);
        let wrong = if right == Label::False { Label::Normal } else { Label::False };
        let n = |l| model.input_gradient(&x, l).unwrap().iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(n(wrong) >= n(right) - 1e-12);
    }
}
