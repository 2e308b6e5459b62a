use geovo::fields::build_omega;
use geovo::synth::{consistency_errors, consistency_violations, render_sequence, scenario_preset, PresetName};

#[test]
fn rigid_presets_satisfy_identities() {
    for name in PresetName::ALL {
        let spec = scenario_preset(name, 7).without_deformation().with_frames(8);
        let seq = render_sequence(&spec).unwrap();
        for t in 1..seq.len() {
            let r = consistency_errors(&seq.frame_pair(t).unwrap(), &seq.gt_pose(t)).unwrap();
            assert!(r.max_2d < 1e-6, "{name} frame {t}: 2D identity off by {}", r.max_2d);
            assert!(r.max_3d < 1e-6, "{name} frame {t}: 3D identity off by {}", r.max_3d);
            assert!(r.pixels > spec.rig.width * spec.rig.height / 2);
        }
    }
}

#[test]
fn labels_agree_with_violations() {
    let spec = scenario_preset(PresetName::Deforming, 7).with_frames(10);
    let seq = render_sequence(&spec).unwrap();
    for t in 1..seq.len() {
        let pair = seq.frame_pair(t).unwrap();
        let omega = build_omega(&pair).unwrap();
        let v = consistency_violations(&pair, &seq.gt_pose(t), &omega).unwrap();
        let label = seq.frames[t].label.as_slice();
        let agree = omega
            .iter()
            .zip(&v)
            .filter(|(&k, &(_, e3))| (label[k] != 0) == (e3 > 1e-8))
            .count();
        assert!(agree as f64 >= 0.99 * omega.len() as f64, "frame {t}: {agree}/{}", omega.len());
        assert!(label.iter().any(|&l| l & 2 != 0), "frame {t}: patch never labeled");
    }
}

#[test]
fn preset_sequences_are_bit_identical() {
    let spec = scenario_preset(PresetName::Scanning, 4).with_resolution(64, 48).with_frames(4);
    assert_eq!(render_sequence(&spec).unwrap(), render_sequence(&spec).unwrap());
}

#[test]
fn scanning_preset_moves_camera_and_tissue() {
    let spec = scenario_preset(PresetName::Scanning, 2).with_resolution(80, 64).with_frames(6);
    let seq = render_sequence(&spec).unwrap();
    assert!(seq.gt_relative.iter().all(|p| p.to_vector().norm() > 0.0));
    assert!(seq.frames[1..].iter().any(|f| f.label.as_slice().iter().any(|&l| l & 1 != 0)));
}
