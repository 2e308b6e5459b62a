//! TOML run configuration with strict parsing and `--key value` overrides.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{PinholeIntrinsics, StereoRig};
use crate::ddn::FitConfig;
use crate::error::{Error, Result};
use crate::fields::MaskConfig;
use crate::solver::SolverConfig;
use crate::synth::{scenario_preset, NoiseSpec, PresetName, SceneSpec};

/// Flat rig description used by `rig.cfg` and the `[rig]` section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub baseline: f64,
    pub d_max: f64,
    pub width: usize,
    pub height: usize,
}

impl From<StereoRig> for RigConfig {
    fn from(r: StereoRig) -> Self {
        let i = r.intrinsics;
        Self {
            fx: i.fx,
            fy: i.fy,
            cx: i.cx,
            cy: i.cy,
            baseline: r.baseline,
            d_max: r.d_max,
            width: r.width,
            height: r.height,
        }
    }
}

impl RigConfig {
    pub fn to_rig(&self) -> Result<StereoRig> {
        let rig = StereoRig {
            intrinsics: PinholeIntrinsics::new(self.fx, self.fy, self.cx, self.cy),
            baseline: self.baseline,
            d_max: self.d_max,
            width: self.width,
            height: self.height,
        };
        rig.validate().map_err(|e| Error::Config(format!("rig: {e}")))?;
        Ok(rig)
    }
}

/// Scene to simulate: a named preset with optional adjustments, or a full
/// explicit scene.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub preset: Option<PresetName>,
    pub spec: Option<SceneSpec>,
    pub n_frames: Option<usize>,
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub noise: Option<NoiseSpec>,
    /// Drops every deformation from the scene.
    pub rigid: bool,
}

/// Which residual terms the pose solve uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermMode {
    #[default]
    Combined,
    Only2d,
    Only3d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub terms: TermMode,
    pub specularity_mask: bool,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            terms: TermMode::Combined,
            specularity_mask: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Frame offset of relative pose errors.
    pub rpe_delta: usize,
    pub align: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            rpe_delta: 1,
            align: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub rig: Option<RigConfig>,
    pub solver: SolverConfig,
    pub ddn: FitConfig,
    pub masks: MaskConfig,
    pub scenario: ScenarioConfig,
    pub estimate: EstimateConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate().map_err(|e| Error::Config(format!("solver: {e}")))?;
        self.ddn.validate().map_err(|e| Error::Config(format!("ddn: {e}")))?;
        if let Some(rig) = &self.rig {
            rig.to_rig()?;
        }
        if self.eval.rpe_delta == 0 {
            return Err(Error::Config("eval.rpe_delta must be positive".into()));
        }
        Ok(())
    }

    /// Scene described by the `[scenario]` and `[rig]` sections for `seed`.
    pub fn scene(&self, seed: u64) -> Result<SceneSpec> {
        let sc = &self.scenario;
        let mut spec = match (&sc.spec, sc.preset) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("scenario: give either preset or spec, not both".into()));
            }
            (Some(spec), None) => spec.clone(),
            (None, Some(p)) => scenario_preset(p, seed),
            (None, None) => return Err(Error::Config("scenario: missing preset or spec".into())),
        };
        if let Some(rig) = &self.rig {
            spec.rig = rig.to_rig()?;
        }
        if sc.width.is_some() || sc.height.is_some() {
            let w = sc.width.unwrap_or(spec.rig.width);
            let h = sc.height.unwrap_or(spec.rig.height);
            spec = spec.with_resolution(w, h);
        }
        if let Some(n) = sc.n_frames {
            spec.n_frames = n;
        }
        if sc.rigid {
            spec.deformation.clear();
        }
        if let Some(noise) = &sc.noise {
            spec.noise = Some(noise.clone());
        }
        Ok(spec)
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets dotted `key` in `table`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key '{key}'")));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override '{key}': '{p}' is not a section")))?;
    }
    cur.insert(last.to_string(), parse_value(raw));
    Ok(())
}

/// Parses configuration text, applies overrides in order and validates.
pub fn parse_config(text: &str, overrides: &[(String, String)], path: &Path) -> Result<RunConfig> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::format(path, e.to_string()))?;
    for (k, v) in overrides {
        apply_override(&mut table, k, v)?;
    }
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("{}: {}", path.display(), e.message())))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path, overrides: &[(String, String)]) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, overrides, path)
}

pub fn read_rig(path: &Path) -> Result<StereoRig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: RigConfig = toml::from_str(&text).map_err(|e| Error::format(path, e.message().to_string()))?;
    cfg.to_rig().map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_rig(path: &Path, rig: &StereoRig) -> Result<()> {
    let text = toml::to_string(&RigConfig::from(*rig)).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn p() -> PathBuf {
        PathBuf::from("run.toml")
    }

    #[test]
    fn empty_config_uses_defaults() {
        let cfg = parse_config("", &[], &p()).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_config("[solver]\nmax_iter = 5\n", &[], &p()).is_err());
        assert!(parse_config("[bogus]\n", &[], &p()).is_err());
        assert!(parse_config("[rig]\nfx = 1\n", &[], &p()).is_err());
        let bad = [("solver.nope".to_string(), "1".to_string())];
        assert!(parse_config("", &bad, &p()).is_err());
    }

    #[test]
    fn overrides_are_typed() {
        let ov = [
            ("solver.max_iters".to_string(), "7".to_string()),
            ("scenario.preset".to_string(), "deforming".to_string()),
            ("ddn.step".to_string(), "0.5".to_string()),
            ("seed".to_string(), "9".to_string()),
        ];
        let cfg = parse_config("seed = 1\n[solver]\nmax_iters = 3\n", &ov, &p()).unwrap();
        assert_eq!(cfg.solver.max_iters, 7);
        assert_eq!(cfg.scenario.preset, Some(PresetName::Deforming));
        assert_eq!(cfg.ddn.step, 0.5);
        assert_eq!(cfg.seed, 9);
        let bad = [("seed.x".to_string(), "1".to_string())];
        assert!(parse_config("seed = 1\n", &bad, &p()).is_err());
    }

    #[test]
    fn scene_resolution_and_rig() {
        let text = "[scenario]\npreset = \"breathing\"\nn_frames = 5\nwidth = 80\nheight = 64\n";
        let cfg = parse_config(text, &[], &p()).unwrap();
        let spec = cfg.scene(3).unwrap();
        assert_eq!((spec.rig.width, spec.rig.height, spec.n_frames), (80, 64, 5));
        assert!((spec.rig.intrinsics.cx - 39.5).abs() < 1e-12);
        assert!(parse_config("", &[], &p()).unwrap().scene(0).is_err());
    }

    #[test]
    fn rig_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rig.cfg");
        let rig = scenario_preset(PresetName::Scanning, 0).rig;
        write_rig(&path, &rig).unwrap();
        assert_eq!(read_rig(&path).unwrap(), rig);
        fs::write(&path, "fx = 1\n").unwrap();
        assert!(read_rig(&path).is_err());
    }
}
