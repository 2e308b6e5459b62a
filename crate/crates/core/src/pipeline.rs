//! Sequence-level drivers: per-pair pose estimation with chaining, and
//! weight fitting over a sequence with ground truth.

use std::path::Path;

use serde::Serialize;

use crate::ddn::{fit_weight_maps, FitResult, FitSample, WeightParams};
use crate::error::{Error, ErrorClass, Result};
use crate::fields::{FramePair, WeightMap};
use crate::io::config::{RunConfig, TermMode};
use crate::lie::TangentPose;
use crate::residuals::ResidualWorkspace;
use crate::solver::{chain_trajectory, solve_pose, InitPolicy};
use crate::trajeval::Trajectory;

/// Per-pair solve summary; `fallback` marks frames whose pose repeats the
/// previous relative pose because the solve could not run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameReport {
    pub frame: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
    pub grad_norm: f64,
    pub behind_camera_count: usize,
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct EstimateResult {
    /// Relative poses with translation in normalized units.
    pub relative: Vec<TangentPose>,
    /// Absolute poses in scene units.
    pub trajectory: Trajectory,
    pub frames: Vec<FrameReport>,
}

/// Fixed weights for estimation; `None` means uniform one.
#[derive(Debug, Clone, Default)]
pub struct EstimateWeights {
    pub w2d: Option<WeightMap>,
    pub w3d: Option<WeightMap>,
}

fn workspace_for(pair: &FramePair, weights: &EstimateWeights, terms: TermMode) -> Result<ResidualWorkspace> {
    let (w, h) = (pair.width(), pair.height());
    let ones = || WeightMap::uniform(w, h, 1.0);
    let zeros = || WeightMap::uniform(w, h, 0.0);
    let w2 = match terms {
        TermMode::Only3d => zeros()?,
        _ => weights.w2d.clone().map_or_else(ones, Ok)?,
    };
    let w3 = match terms {
        TermMode::Only2d => zeros()?,
        _ => weights.w3d.clone().map_or_else(ones, Ok)?,
    };
    ResidualWorkspace::new(pair, &w2, &w3)
}

/// Solves every pair in order and chains the result. `stamps` must have
/// one more entry than there are pairs.
pub fn estimate_pairs<I>(pairs: I, stamps: &[f64], d_max: f64, cfg: &RunConfig, weights: &EstimateWeights) -> Result<EstimateResult>
where
    I: IntoIterator<Item = Result<(usize, FramePair)>>,
{
    let mut relative = Vec::new();
    let mut frames = Vec::new();
    let mut last = TangentPose::zero();
    for item in pairs {
        let (t, pair) = item?;
        let pair = if cfg.estimate.specularity_mask {
            pair.with_specularity_mask(&cfg.masks)
        } else {
            pair
        };
        let init = match cfg.solver.init_policy {
            InitPolicy::Identity => TangentPose::zero(),
            InitPolicy::PreviousPose => last,
        };
        let attempt = workspace_for(&pair, weights, cfg.estimate.terms).and_then(|ws| solve_pose(&ws, &cfg.solver, &init));
        let report = match attempt {
            Ok(r) if !r.degenerate() => Some(r),
            Ok(_) => None,
            Err(e) if e.class() == ErrorClass::Usage => return Err(e),
            Err(_) => None,
        };
        match report {
            Some(r) => {
                last = r.pose;
                frames.push(FrameReport {
                    frame: t,
                    iterations: r.iterations,
                    converged: r.converged,
                    final_objective: r.final_objective,
                    grad_norm: r.final_grad_norm,
                    behind_camera_count: r.behind_camera_count,
                    fallback: false,
                });
            }
            None => frames.push(FrameReport {
                frame: t,
                iterations: 0,
                converged: false,
                final_objective: f64::NAN,
                grad_norm: f64::NAN,
                behind_camera_count: 0,
                fallback: true,
            }),
        }
        relative.push(last);
    }
    if relative.is_empty() {
        return Err(Error::Sequence("a sequence needs at least two frames".into()));
    }
    let scaled: Vec<_> = relative.iter().map(|p| p.scale_translation(d_max)).collect();
    let trajectory = chain_trajectory(&scaled, stamps)?;
    Ok(EstimateResult {
        relative,
        trajectory,
        frames,
    })
}

pub fn write_frame_report_csv(path: &Path, frames: &[FrameReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for f in frames {
        w.serialize(f).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Fits weight maps on pairs with known relative poses (normalized units),
/// starting from all-0.5 weights.
pub fn fit_pairs<I>(pairs: I, gt_relative: &[TangentPose], cfg: &RunConfig) -> Result<FitResult>
where
    I: IntoIterator<Item = Result<(usize, FramePair)>>,
{
    let mut samples = Vec::new();
    let mut size = None;
    for item in pairs {
        let (t, pair) = item?;
        let pair = if cfg.estimate.specularity_mask {
            pair.with_specularity_mask(&cfg.masks)
        } else {
            pair
        };
        size = Some((pair.width(), pair.height()));
        let p_gt = *gt_relative
            .get(t - 1)
            .ok_or_else(|| Error::Sequence(format!("no ground-truth pose for frame {t}")))?;
        match FitSample::new(&pair, p_gt) {
            Ok(s) => samples.push(s),
            Err(e) if e.class() == ErrorClass::Usage => return Err(e),
            Err(_) => {}
        }
    }
    let (w, h) = size.ok_or_else(|| Error::Sequence("a sequence needs at least two frames".into()))?;
    if samples.is_empty() {
        return Err(Error::FittingFailure("no usable frame pair".into()));
    }
    fit_weight_maps(&mut samples, WeightParams::zeros(w, h), &cfg.ddn, &cfg.solver)
}

#[derive(Debug, Serialize)]
struct LossRow {
    iteration: usize,
    train_loss: f64,
    val_loss: Option<f64>,
    valid_samples: usize,
}

pub fn write_loss_csv(path: &Path, fit: &FitResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for t in &fit.trace {
        w.serialize(LossRow {
            iteration: t.iteration,
            train_loss: t.train_loss,
            val_loss: t.val_loss,
            valid_samples: t.valid_samples,
        })
        .map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
