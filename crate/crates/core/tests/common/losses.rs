//! Closed-form values of the stage-one losses.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use tmn::matcher::{contrastive_loss, joint_loss, trigger_class_loss, MatchLossConfig, PairVectors, TriggerClassifier};

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-scale..scale))
}

pub fn classifier(types: usize, width: usize, rng: Option<&mut ChaCha8Rng>) -> TriggerClassifier {
    let names = (0..types).map(|k| format!("T{k}")).collect();
    let (weight, bias) = match rng {
        Some(r) => (random_matrix(r, width, types, 1.0), random_matrix(r, 1, types, 1.0)),
        None => (Array2::zeros((width, types)), Array2::zeros((1, types))),
    };
    TriggerClassifier { types: names, weight, bias }
}

/// ln K for a uniform classifier, ½d² and ½max(0, m − d)² at chosen
/// distances, and the joint loss of one matched pair.
pub fn closed_form_losses() {
    for k in 1..=6 {
        let clf = classifier(k, 3, None);
        let l = trigger_class_loss(&[0.3, -1.0, 2.0], "T0", &clf).unwrap();
        assert!((l - (k as f64).ln()).abs() < 1e-9);
    }
    assert!((contrastive_loss(&[1.0, 2.0], &[1.0, 2.0], true, 1.0).unwrap()).abs() < 1e-9);
    assert!((contrastive_loss(&[0.0, 0.0], &[3.0, 4.0], false, 5.0).unwrap()).abs() < 1e-9);
    assert!((contrastive_loss(&[0.0, 0.0], &[3.0, 4.0], false, 4.0).unwrap()).abs() < 1e-9);
    assert!((contrastive_loss(&[1.0, 1.0], &[1.0, 1.0], false, 0.5).unwrap() - 0.125).abs() < 1e-9);
    assert!((contrastive_loss(&[0.0, 1.0], &[0.0, 0.0], true, 0.5).unwrap() - 0.5).abs() < 1e-9);
    // uniform classifier over 4 types, one matched pair at distance zero
    let clf = classifier(4, 2, None);
    let batch = [PairVectors {
        g_s: vec![0.5, 0.5],
        g_t: vec![0.5, 0.5],
        matched: true,
        entity_type: Some("T2".into()),
    }];
    let l = joint_loss(&batch, &clf, &MatchLossConfig::default()).unwrap();
    assert!((l - 4f64.ln()).abs() < 1e-9);
    assert!(trigger_class_loss(&[0.0, 0.0], "nope", &clf).is_err());
    assert!(joint_loss(&[], &clf, &MatchLossConfig::default()).is_err());
}
