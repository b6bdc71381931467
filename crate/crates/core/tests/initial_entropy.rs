use std::path::Path;

use tiltray_core::entropy::{expected_finite_sample_entropy, finite_sample_entropy};
use tiltray_core::experiment::{run_experiment, ExperimentSpec};
use tiltray_core::geometry::{PartShape, Vec2};

fn spec(trials: usize) -> ExperimentSpec {
    ExperimentSpec::parse(&format!(
        r#"
label = "h0"
trials = {trials}
master_seed = 11
[shape]
preset = "allen-key"
[friction]
level = "low"
seed = 1
[sequence]
directions = [0]
"#
    ))
    .unwrap()
}

#[test]
fn allen_key_h0_is_close_to_the_finite_sample_value() {
    let config = spec(50).resolve(Path::new(".")).unwrap().remove(0);
    let h0 = run_experiment(&config).unwrap().trend.h_bits[0];
    let expected = expected_finite_sample_entropy(50, 64, 2000, 3);
    assert!((h0 - expected).abs() < 0.5, "H0 {h0} vs {expected}");
}

#[test]
fn small_part_h0_is_within_three_standard_errors() {
    let trials = 500;
    let mut config = spec(trials).resolve(Path::new(".")).unwrap().remove(0);
    let side = 0.006;
    config.shape = PartShape::new(
        "chip",
        vec![Vec2::new(0.0, 0.0), Vec2::new(side, 0.0), Vec2::new(side, side), Vec2::new(0.0, side)],
        39.0,
    )
    .unwrap();
    let h0 = run_experiment(&config).unwrap().trend.h_bits[0];
    // one H0 value, so the spread of single plug-in estimates is the yardstick
    let oracle = finite_sample_entropy(trials, 64, 2000, 3);
    assert!(
        (h0 - oracle.mean).abs() < 3.0 * oracle.std_dev,
        "H0 {h0} vs {} ± {}",
        oracle.mean,
        oracle.std_dev
    );
}
