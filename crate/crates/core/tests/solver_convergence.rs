use geovo::fields::WeightMap;
use geovo::lie::TangentPose;
use geovo::residuals::ResidualWorkspace;
use geovo::solver::{solve_pose, SolverConfig};
use geovo::synth::{render_sequence, scenario_preset, NoiseSpec, PresetName};

const MAX_ITERATIONS: usize = 30;

#[test]
fn full_resolution_solves_converge_within_thirty_iterations() {
    for noise in [None, Some(NoiseSpec { depth_sigma: 2e-4, flow_sigma: 0.05, seed: 1 })] {
        let mut spec = scenario_preset(PresetName::Scanning, 9).without_deformation().with_frames(4);
        spec.noise = noise;
        let seq = render_sequence(&spec).unwrap();
        let (w, h) = (spec.rig.width, spec.rig.height);
        let ones = WeightMap::uniform(w, h, 1.0).unwrap();
        let zeros = WeightMap::uniform(w, h, 0.0).unwrap();
        for t in 1..seq.len() {
            let pair = seq.frame_pair(t).unwrap();
            for (name, w2, w3) in [("combined", &ones, &ones), ("2D", &ones, &zeros), ("3D", &zeros, &ones)] {
                let ws = ResidualWorkspace::new(&pair, w2, w3).unwrap();
                let r = solve_pose(&ws, &SolverConfig::default(), &TangentPose::zero()).unwrap();
                assert!(
                    r.converged && r.iterations <= MAX_ITERATIONS,
                    "frame {t} {name}: {} iterations, {:?}",
                    r.iterations,
                    r.termination
                );
            }
        }
    }
}
