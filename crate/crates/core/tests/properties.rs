use fdia_core::attacks::{run_attack, AttackSpec, Strategy as Attack};
use fdia_core::casefile::{builtin_case, parse_case, CaseFormat};
use fdia_core::dataset::{fit_normalization, split, Dataset, Label, LabeledSample};
use fdia_core::dcmodel::{build_h, StateVector};
use fdia_core::defense::{pad, sample_combination, unpad, PaddingScheme, ValuePolicy};
use fdia_core::estimator::{stealth_vector, WlsEstimator};
use fdia_core::nnet::init_model;
use fdia_core::seed;
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, any::<f64>().prop_filter("finite", |v| v.is_finite())]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pad_unpad_round_trip(z in prop::collection::vec(finite(), 1..30), p in 0usize..12, s in any::<u64>()) {
        let scheme = PaddingScheme::new(z.len(), p, ValuePolicy::UniformRange { lo: -3.0, hi: 3.0 });
        let combo = sample_combination(&scheme, &mut seed::rng_from(s));
        let padded = pad(&z, &combo).unwrap();
        prop_assert_eq!(padded.len(), z.len() + p);
        for (pos, v) in combo.positions.iter().zip(&combo.values) {
            prop_assert_eq!(padded[*pos].to_bits(), v.to_bits());
        }
        let back = unpad(&padded, &combo).unwrap();
        prop_assert!(back.iter().zip(&z).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn probabilities_sum_to_one(x in prop::collection::vec(-50.0..50.0f64, 9), s in 0u64..50) {
        let model = init_model(9, &[12, 6], s);
        let p = model.forward(&x).unwrap();
        prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]));
    }

    #[test]
    fn attacks_respect_support_and_budget(
        strategy in prop::sample::select(Attack::ALL.to_vec()),
        mask in prop::collection::vec(any::<bool>(), 6),
        eps in 0.0..2.0f64,
        s in any::<u64>(),
    ) {
        let mut support: Vec<usize> = (0..6).filter(|&j| mask[j]).collect();
        if support.is_empty() {
            support.push(2);
        }
        let model = init_model(6, &[8], s % 16);
        let mut rng = seed::rng_from(s);
        let samples = (0..8)
            .map(|_| LabeledSample {
                features: (0..6).map(|_| rand::Rng::gen_range(&mut rng, -2.0..2.0)).collect(),
                label: Label::False,
            })
            .collect();
        let src = Dataset::new(samples, 6, 6);
        let mut spec = AttackSpec::new(strategy, support.clone(), eps, s);
        spec.iterations = spec.iterations.min(8);
        spec.population = 6;
        let r = run_attack(&model, &src, &spec).unwrap();
        for (a, b) in r.adversarial.samples.iter().zip(&src.samples) {
            for j in 0..6 {
                let d = a.features[j] - b.features[j];
                if support.contains(&j) {
                    prop_assert!(d.abs() <= eps + 1e-12);
                } else {
                    prop_assert_eq!(a.features[j].to_bits(), b.features[j].to_bits());
                }
            }
        }
    }

    #[test]
    fn stealth_offsets_leave_the_residual_unchanged(
        z in prop::collection::vec(-2.0..2.0f64, 20),
        c in prop::collection::vec(-0.5..0.5f64, 13),
    ) {
        let model = build_h(&builtin_case("case14").unwrap()).unwrap();
        let est = WlsEstimator::new(&model).unwrap();
        let a = stealth_vector(&model, &c).unwrap().a;
        let shifted: Vec<f64> = z.iter().zip(&a).map(|(x, y)| x + y).collect();
        let r0 = est.estimate(&z).unwrap();
        let r1 = est.estimate(&shifted).unwrap();
        prop_assert!((r0.residual_norm2 - r1.residual_norm2).abs() < 1e-8);
        for ((x1, x0), ci) in r1.x_hat.theta.iter().zip(&r0.x_hat.theta).zip(&c) {
            prop_assert!((x1 - x0 - ci).abs() < 1e-8);
        }
    }

    #[test]
    fn wls_recovers_noiseless_states(theta in prop::collection::vec(-0.5..0.5f64, 29)) {
        let model = build_h(&builtin_case("case30").unwrap()).unwrap();
        let x = StateVector { theta };
        let z = model.flows(&x).unwrap();
        let r = WlsEstimator::new(&model).unwrap().estimate(&z).unwrap();
        for (a, b) in r.x_hat.theta.iter().zip(&x.theta) {
            prop_assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn split_is_a_stratified_partition(labels in prop::collection::vec(any::<bool>(), 200..400), s in any::<u64>()) {
        let samples: Vec<LabeledSample> = labels
            .iter()
            .enumerate()
            .map(|(i, &f)| LabeledSample {
                features: vec![i as f64],
                label: if f { Label::False } else { Label::Normal },
            })
            .collect();
        let d = Dataset::new(samples, 1, 1);
        let (n0, n1) = d.class_counts();
        prop_assume!(n0 >= 40 && n1 >= 40);
        let (a, b, c) = split(&d, (0.8, 0.1, 0.1), s).unwrap();
        let mut ids: Vec<usize> = [&a, &b, &c]
            .iter()
            .flat_map(|p| p.samples.iter().map(|s| s.features[0] as usize))
            .collect();
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..d.len()).collect::<Vec<_>>());
        let parent = n1 as f64 / d.len() as f64;
        // Rounding each class separately moves a split's ratio by at most one
        // sample per class.
        for part in [&a, &b, &c] {
            let r = part.class_counts().1 as f64 / part.len() as f64;
            prop_assert!((r - parent).abs() <= 0.01 + 1.0 / part.len() as f64);
        }
    }

    #[test]
    fn normalized_training_split_is_standard(rows in prop::collection::vec(prop::collection::vec(-1e3..1e3f64, 3), 5..60)) {
        let samples = rows.into_iter().map(|features| LabeledSample { features, label: Label::Normal }).collect();
        let (n, table) = fit_normalization(&Dataset::new(samples, 3, 3)).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = n.samples.iter().map(|s| s.features[j]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            prop_assert!(mean.abs() < 1e-9);
            if table.std[j] > 1e-6 {
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
                prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact(rows in prop::collection::vec(prop::collection::vec(finite(), 4), 1..20)) {
        let samples = rows
            .into_iter()
            .enumerate()
            .map(|(i, features)| LabeledSample { features, label: if i % 3 == 0 { Label::False } else { Label::Normal } })
            .collect();
        let d = Dataset::new(samples, 4, 4);
        let back = Dataset::from_csv(&d.to_csv(), 4).unwrap();
        for (a, b) in back.samples.iter().zip(&d.samples) {
            prop_assert_eq!(a.label, b.label);
            prop_assert!(a.features.iter().zip(&b.features).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}

#[test]
fn case_files_survive_both_formats() {
    for name in ["case14", "case30", "case118", "case300"] {
        let case = builtin_case(name).unwrap();
        let json = parse_case(&case.to_native_json(), CaseFormat::NativeJson).unwrap();
        let m = parse_case(&case.to_matpower(), CaseFormat::MatpowerSubset).unwrap();
        assert_eq!(json, case);
        assert_eq!(m, case);
    }
}
