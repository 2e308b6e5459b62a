use nalgebra::Vector6;

use geovo::fields::WeightMap;
use geovo::lie::TangentPose;
use geovo::residuals::{objective, ResidualWorkspace};
use geovo::synth::{render_sequence, scenario_preset, PresetName};

/// Mean squared 2D residual per valid pixel at a pose off the ground truth.
fn mean_2d_objective(width: usize, height: usize, offset: &Vector6<f64>) -> f64 {
    let spec = scenario_preset(PresetName::Scanning, 5).without_deformation().with_resolution(width, height).with_frames(2);
    let seq = render_sequence(&spec).unwrap();
    let pair = seq.frame_pair(1).unwrap();
    let ws = ResidualWorkspace::new(
        &pair,
        &WeightMap::uniform(width, height, 1.0).unwrap(),
        &WeightMap::uniform(width, height, 0.0).unwrap(),
    )
    .unwrap();
    let p = TangentPose::from_vector(&(seq.gt_pose(1).to_vector() + offset));
    objective(&ws, &p).unwrap() / ws.len() as f64
}

#[test]
fn per_pixel_2d_residual_is_independent_of_image_size() {
    for offset in [
        Vector6::new(2e-3, -1e-3, 0.0, 0.0, 0.0, 0.0),
        Vector6::new(0.0, 0.0, 5e-3, 2e-3, -1e-3, 3e-3),
    ] {
        let low = mean_2d_objective(160, 128, &offset);
        let high = mean_2d_objective(320, 256, &offset);
        assert!(low > 0.0);
        assert!((high / low - 1.0).abs() < 0.02, "low {low:e} high {high:e}");
    }
}
