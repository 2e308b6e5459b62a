//! Finite-difference checks of the analytic pose gradients and of the
//! implicit weight gradient through the full pose solve.

use nalgebra::Vector6;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::ddn::{implicit_gradient, pose_loss, WeightParams};
use crate::error::{Error, Result};
use crate::fields::{FramePair, Raster};
use crate::lie::TangentPose;
use crate::residuals::{objective, residual_2d, residual_3d, ResidualWorkspace};
use crate::solver::{solve_pose, SolverConfig};
use crate::synth::{render_sequence, scenario_preset, CameraPath, NoiseSpec, PresetName};

pub const JACOBIAN_TOLERANCE: f64 = 1e-5;
pub const IMPLICIT_TOLERANCE: f64 = 1e-3;
pub const GRADCHECK_SIZE: usize = 16;

/// Central-difference step in pose coordinates.
const POSE_STEP: f64 = 1e-7;
/// Central-difference step along a unit direction in weight-parameter space.
const THETA_STEP: f64 = 1e-3;
/// Directional derivatives probed per implicit check.
const DIRECTIONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckReport {
    pub jacobian_max_rel: f64,
    pub implicit_max_rel: f64,
}

impl GradcheckReport {
    pub fn jacobian_ok(&self) -> bool {
        self.jacobian_max_rel < JACOBIAN_TOLERANCE
    }

    pub fn implicit_ok(&self) -> bool {
        self.implicit_max_rel < IMPLICIT_TOLERANCE
    }

    pub fn passed(&self) -> bool {
        self.jacobian_ok() && self.implicit_ok()
    }
}

/// Seeded test pair: a scanning-style scene with random camera motion and
/// noisy flow, so the weighted optimum differs from the ground truth.
pub fn random_scene(seed: u64, width: usize, height: usize) -> Result<(FramePair, TangentPose)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = scenario_preset(PresetName::Scanning, seed).with_resolution(width, height).with_frames(2);
    let mut velocity = [0.0; 6];
    for (i, v) in velocity.iter_mut().enumerate() {
        let scale = if i < 3 { 3e-3 } else { 2e-2 };
        *v = rng.random_range(-scale..scale);
    }
    spec.camera = CameraPath {
        velocity,
        ..CameraPath::default()
    };
    spec.noise = Some(NoiseSpec {
        depth_sigma: 2e-4,
        flow_sigma: 0.05,
        seed: rng.random(),
    });
    let seq = render_sequence(&spec)?;
    Ok((seq.frame_pair(1)?, seq.gt_pose(1)))
}

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|x| x.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn perturbed(p: &TangentPose, i: usize, h: f64) -> TangentPose {
    let mut v = p.to_vector();
    v[i] += h;
    TangentPose::from_vector(&v)
}

fn central<F: Fn(&TangentPose) -> Result<f64>>(f: F, p: &TangentPose) -> Result<Vector6<f64>> {
    let mut g = Vector6::zeros();
    for i in 0..6 {
        g[i] = (f(&perturbed(p, i, POSE_STEP))? - f(&perturbed(p, i, -POSE_STEP))?) / (2.0 * POSE_STEP);
    }
    Ok(g)
}

fn random_pose_near(rng: &mut ChaCha8Rng, p: &TangentPose) -> TangentPose {
    let offset = Vector6::from_fn(|_, _| rng.random_range(-0.02..0.02));
    TangentPose::from_vector(&(p.to_vector() + offset))
}

/// Largest relative error of the analytic objective gradient and of the
/// per-pixel residual gradients at a random pose of one scene.
pub fn jacobian_error(pair: &FramePair, p_gt: &TangentPose, seed: u64, flip_sign: bool) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5DEE_CE66);
    let mut ws = ResidualWorkspace::geometry(pair)?;
    let n = ws.len();
    ws.set_weight_values(
        (0..n).map(|_| rng.random_range(0.05..1.0)).collect(),
        (0..n).map(|_| rng.random_range(0.05..1.0)).collect(),
    )?;
    let p = random_pose_near(&mut rng, p_gt);
    let sign = if flip_sign { -1.0 } else { 1.0 };

    let analytic = ws.evaluate_pose(&p)?.gradient * sign;
    let numeric = central(|q| objective(&ws, q), &p)?;
    let mut worst = rel_error(analytic.as_slice(), numeric.as_slice());

    let terms = ws.pixel_terms(&p)?;
    for (k, t) in terms.iter().enumerate().filter(|(_, t)| !t.behind_camera) {
        let n2 = central(|q| residual_2d(&ws, q, k), &p)?;
        let n3 = central(|q| residual_3d(&ws, q, k), &p)?;
        worst = worst.max(rel_error((t.dr2d * sign).as_slice(), n2.as_slice()));
        worst = worst.max(rel_error((t.dr3d * sign).as_slice(), n3.as_slice()));
    }
    Ok(worst)
}

/// Solver settings tight enough for differences of the argmin.
pub fn precise_solver() -> SolverConfig {
    SolverConfig {
        max_iters: 1000,
        grad_tol: 1e-13,
        step_tol: 1e-18,
        ..SolverConfig::default()
    }
}

/// Largest relative error between directional derivatives of the
/// ground-truth pose loss predicted by the implicit gradient and central
/// differences that re-run the solve.
pub fn implicit_error(pair: &FramePair, p_gt: &TangentPose, seed: u64, flip_sign: bool) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA076_1D64);
    let (w, h) = (pair.width(), pair.height());
    let mut params = WeightParams::zeros(w, h);
    for v in params.theta2d.as_mut_slice().iter_mut().chain(params.theta3d.as_mut_slice()) {
        *v = StandardNormal.sample(&mut rng);
    }
    let solver = precise_solver();
    let mut ws = ResidualWorkspace::geometry(pair)?;

    let mut solve = |params: &WeightParams, init: &TangentPose| -> Result<crate::solver::SolveReport> {
        let (w2, w3) = params.weight_maps();
        ws.set_weights(&w2, &w3)?;
        let report = solve_pose(&ws, &solver, init)?;
        if !report.converged {
            return Err(Error::NumericalFailure(format!(
                "gradcheck solve stopped with {:?} at gradient norm {:e}",
                report.termination, report.final_grad_norm
            )));
        }
        Ok(report)
    };
    let report = solve(&params, &TangentPose::zero())?;
    let (w2, w3) = params.weight_maps();
    let mut ws0 = ResidualWorkspace::geometry(pair)?;
    ws0.set_weights(&w2, &w3)?;
    let grad = implicit_gradient(&ws0, &report, p_gt)?;
    if !grad.valid {
        return Err(Error::NumericalFailure("implicit gradient unavailable at the optimum".into()));
    }
    let sign = if flip_sign { -1.0 } else { 1.0 };

    let mut worst: f64 = 0.0;
    for _ in 0..DIRECTIONS {
        let mut d2 = Raster::filled(w, h, 0.0);
        let mut d3 = Raster::filled(w, h, 0.0);
        for v in d2.as_mut_slice().iter_mut().chain(d3.as_mut_slice()) {
            *v = StandardNormal.sample(&mut rng);
        }
        let norm = d2.as_slice().iter().chain(d3.as_slice()).map(|v| v * v).sum::<f64>().sqrt();
        let shifted = |s: f64| {
            let mut q = params.clone();
            for (t, d) in q.theta2d.as_mut_slice().iter_mut().zip(d2.as_slice()) {
                *t += s * d / norm;
            }
            for (t, d) in q.theta3d.as_mut_slice().iter_mut().zip(d3.as_slice()) {
                *t += s * d / norm;
            }
            q
        };
        let plus = pose_loss(&solve(&shifted(THETA_STEP), &report.pose)?.pose, p_gt);
        let minus = pose_loss(&solve(&shifted(-THETA_STEP), &report.pose)?.pose, p_gt);
        let numeric = (plus - minus) / (2.0 * THETA_STEP);
        let analytic = sign
            * (grad.d_theta2d.as_slice().iter().zip(d2.as_slice()).map(|(g, d)| g * d).sum::<f64>()
                + grad.d_theta3d.as_slice().iter().zip(d3.as_slice()).map(|(g, d)| g * d).sum::<f64>())
            / norm;
        worst = worst.max(rel_error(&[analytic], &[numeric]));
    }
    Ok(worst)
}

/// Both suites on the gradcheck raster size, scene seeds derived from `seed`.
pub fn run_gradcheck(seed: u64, scenes: usize, flip_sign: bool) -> Result<GradcheckReport> {
    let mut report = GradcheckReport {
        jacobian_max_rel: 0.0,
        implicit_max_rel: 0.0,
    };
    for i in 0..scenes as u64 {
        let s = seed.wrapping_mul(1000).wrapping_add(i);
        let (pair, p_gt) = random_scene(s, GRADCHECK_SIZE, GRADCHECK_SIZE)?;
        report.jacobian_max_rel = report.jacobian_max_rel.max(jacobian_error(&pair, &p_gt, s, flip_sign)?);
        report.implicit_max_rel = report.implicit_max_rel.max(implicit_error(&pair, &p_gt, s, flip_sign)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_seed_passes() {
        let r = run_gradcheck(0, 1, false).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn seed_sweep_passes() {
        for seed in 1..10 {
            let r = run_gradcheck(seed, 1, false).unwrap();
            assert!(r.passed(), "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn flipped_sign_fails() {
        let r = run_gradcheck(0, 1, true).unwrap();
        assert!(!r.jacobian_ok() && !r.implicit_ok(), "{r:?}");
    }
}
