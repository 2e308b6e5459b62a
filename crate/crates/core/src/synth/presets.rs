//! Named scenarios: tissue-only motion, camera plus tissue motion, and
//! tool-driven local deformation under a static camera.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{CameraPath, Deformation, SceneSpec, SpatialMask, Surface, TextureSpec};
use crate::camera::{PinholeIntrinsics, StereoRig};
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    Breathing,
    Scanning,
    Deforming,
}

impl PresetName {
    pub const ALL: [PresetName; 3] = [PresetName::Breathing, PresetName::Scanning, PresetName::Deforming];

    pub fn as_str(&self) -> &'static str {
        match self {
            PresetName::Breathing => "breathing",
            PresetName::Scanning => "scanning",
            PresetName::Deforming => "deforming",
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        PresetName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset '{s}', expected breathing, scanning or deforming")))
    }
}

pub const PRESET_WIDTH: usize = 320;
pub const PRESET_HEIGHT: usize = 256;
pub const PRESET_FRAMES: usize = 150;

fn preset_rig() -> StereoRig {
    StereoRig {
        intrinsics: PinholeIntrinsics::new(280.0, 280.0, 159.5, 127.5),
        baseline: 0.005,
        d_max: 0.2,
        width: PRESET_WIDTH,
        height: PRESET_HEIGHT,
    }
}

fn breathing(center: [f64; 2], radius: f64, amplitude: f64) -> Deformation {
    Deformation::Breathing {
        amplitude,
        period_frames: 30.0,
        mask: SpatialMask::Disk {
            center,
            radius,
            falloff: 0.01,
        },
    }
}

/// Breathing near the image corner, where depth motion shows up as flow.
fn flank_breathing() -> Deformation {
    breathing([0.055, 0.035], 0.015, 0.05)
}

fn central_breathing() -> Deformation {
    breathing([0.03, 0.0], 0.02, 0.08)
}

/// Deterministic scene for `(name, seed)`. The seed drives the surface
/// relief and the texture.
pub fn scenario_preset(name: PresetName, seed: u64) -> SceneSpec {
    let surface = Surface::Heightfield {
        depth: 0.1,
        slope: [0.15, -0.1],
        seed,
        amplitude: 5e-4,
        smoothness: 0.06,
    };
    let texture = TextureSpec {
        seed: seed.wrapping_add(1),
        ..Default::default()
    };
    let (camera, deformation, tool_mask) = match name {
        PresetName::Breathing => (CameraPath::default(), vec![flank_breathing()], Vec::new()),
        PresetName::Scanning => (
            CameraPath {
                velocity: [3e-4, 1.5e-4, 5e-5, 2e-4, -3e-4, 5e-4],
                oscillation: [1e-3, -6e-4, 4e-4, 2e-3, 1.5e-3, -1e-3],
                period_frames: 50.0,
            },
            vec![central_breathing()],
            Vec::new(),
        ),
        PresetName::Deforming => (
            CameraPath::default(),
            vec![
                central_breathing(),
                Deformation::Patch {
                    center: [-0.02, 0.01],
                    radius: 0.012,
                    displacement: [0.002, 0.001, -0.003],
                    period_frames: 20.0,
                },
            ],
            vec![[0.0, 255.0], [0.0, 228.0], [62.0, 182.0], [74.0, 196.0], [24.0, 255.0]],
        ),
    };
    SceneSpec {
        surface,
        rig: preset_rig(),
        camera,
        deformation,
        texture,
        noise: None,
        tool_mask,
        n_frames: PRESET_FRAMES,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::render_sequence;

    #[test]
    fn presets_match_their_definitions() {
        for seed in [0, 7] {
            let b = scenario_preset(PresetName::Breathing, seed);
            assert!(b.camera.is_static());
            assert!(b.deformation.iter().any(|d| matches!(d, Deformation::Breathing { .. })));
            let s = scenario_preset(PresetName::Scanning, seed);
            assert!(!s.camera.is_static());
            assert!(s.deformation.iter().any(|d| matches!(d, Deformation::Breathing { amplitude, .. } if *amplitude > 0.0)));
            let d = scenario_preset(PresetName::Deforming, seed);
            assert!(d.camera.is_static());
            assert!(d.deformation.iter().any(|d| matches!(d, Deformation::Patch { .. })));
            for spec in [b, s, d] {
                spec.validate().unwrap();
                assert_eq!(spec.n_frames, PRESET_FRAMES);
            }
        }
    }

    #[test]
    fn breathing_preset_has_zero_camera_motion() {
        let spec = scenario_preset(PresetName::Breathing, 3).with_resolution(40, 32).with_frames(6);
        let seq = render_sequence(&spec).unwrap();
        assert!(seq.gt_relative.iter().all(|p| p.to_vector().amax() == 0.0));
    }

    #[test]
    fn equal_seeds_give_identical_specs() {
        for name in PresetName::ALL {
            assert_eq!(scenario_preset(name, 11), scenario_preset(name, 11));
            assert_eq!(name.as_str().parse::<PresetName>().unwrap(), name);
        }
        assert_ne!(scenario_preset(PresetName::Scanning, 1), scenario_preset(PresetName::Scanning, 2));
        assert!("rigid".parse::<PresetName>().is_err());
    }
}
