use nalgebra::Vector3;
use panosum_core::synthetic::{
    circle_radius_spread, collinearity_error, dolly_sequence, orbit_sequence, static_sequence, SyntheticSequence,
};
use panosum_core::vo::{run_vo, run_vo_on_features, VoConfig, VoOutput};

fn on_ideal_features(seq: &SyntheticSequence, noise_px: f64, seed: u64) -> VoOutput {
    let feats = seq.ideal_features(25.0, noise_px, seed);
    let idx: Vec<usize> = (0..feats.len()).collect();
    run_vo_on_features(feats, &idx, &seq.intrinsics, &VoConfig::default()).unwrap()
}

fn centers(out: &VoOutput) -> Vec<Vector3<f64>> {
    out.keyframes.iter().map(|k| k.pose.unwrap().center()).collect()
}

fn orbit_spread(seq: &SyntheticSequence, out: &VoOutput) -> f64 {
    let truth: Vec<Vector3<f64>> = out.keyframes.iter().map(|k| seq.poses[k.frame_index].center()).collect();
    circle_radius_spread(&centers(out), &truth, &Vector3::new(0.0, 0.0, 5.0))
}

#[test]
fn exact_dolly_features_give_a_straight_track() {
    let seq = dolly_sequence(3);
    let out = on_ideal_features(&seq, 0.0, 3);
    assert!(out.all_posed());
    assert!(out.keyframes.len() >= 4);
    assert!(collinearity_error(&centers(&out)) < 1e-9);
}

#[test]
fn noisy_orbit_features_stay_on_a_circle() {
    for seed in 0..3 {
        let seq = orbit_sequence(seed);
        let out = on_ideal_features(&seq, 0.3, seed);
        assert!(out.all_posed(), "{:?}", out.diagnostics.keyframes);
        assert!(out.keyframes.len() >= 4);
        let spread = orbit_spread(&seq, &out);
        assert!(spread < 0.05, "seed {seed}: {spread}");
    }
}

#[test]
fn rendered_orbit_stays_on_a_circle() {
    let seq = orbit_sequence(0);
    let out = run_vo(&seq.frames, &seq.intrinsics, &VoConfig::default()).unwrap();
    assert!(out.diagnostics.initialized);
    let posed = out.keyframes.iter().filter(|k| k.pose.is_some()).count();
    assert_eq!(posed, out.keyframes.len(), "{:?}", out.diagnostics.keyframes);
    let spread = orbit_spread(&seq, &out);
    assert!(spread < 0.05, "{spread}");
}

#[test]
fn rendered_dolly_is_tracked() {
    let seq = dolly_sequence(11);
    let out = run_vo(&seq.frames, &seq.intrinsics, &VoConfig::default()).unwrap();
    assert!(out.diagnostics.initialized);
    assert!(out.all_posed(), "{:?}", out.diagnostics.keyframes);
    assert!(out.keyframes.len() >= 4);
    assert!(collinearity_error(&centers(&out)) < 1e-2);
}

#[test]
fn rendered_static_sequence_does_not_initialise() {
    let seq = static_sequence(10, 13);
    let out = run_vo(&seq.frames, &seq.intrinsics, &VoConfig::default()).unwrap();
    assert_eq!(out.keyframes.len(), 1);
    assert!(out.diagnostics.initialization_failure);
    assert!(out.map_points.is_empty());
}
