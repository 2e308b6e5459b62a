//! Implicit differentiation through the pose solve and per-pixel weight fitting.
//!
//! At a minimizer `p*` of `f(p; w)` the stationarity condition
//! `grad_p f(p*; w) = 0` gives `dp*/dw = -H^{-1} d^2 f / dp dw`, so for a
//! loss `L(p*)` every weight derivative reduces to one 6x6 solve:
//! `dL/dw = -(H^{-1} dL/dp) . d^2 f / dp dw`.

use nalgebra::{Matrix6, SymmetricEigen, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{FramePair, Raster, WeightMap};
use crate::lie::TangentPose;
use crate::residuals::ResidualWorkspace;
use crate::solver::{solve_pose, PoseObjective, SolveReport, SolverConfig};

pub const HESSIAN_STEP: f64 = 1e-8;
pub const MAX_CONDITION: f64 = 1e10;

/// l1 distance between tangent coordinates.
pub fn pose_loss(p_star: &TangentPose, p_gt: &TangentPose) -> f64 {
    (p_star.to_vector() - p_gt.to_vector()).abs().sum()
}

/// Subgradient of `pose_loss` in `p_star`, zero on exact ties.
pub fn pose_loss_subgradient(p_star: &TangentPose, p_gt: &TangentPose) -> Vector6<f64> {
    (p_star.to_vector() - p_gt.to_vector()).map(|d| {
        if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        }
    })
}

/// Symmetrized central-difference Hessian of the analytic gradient.
pub fn hessian<O: PoseObjective + ?Sized>(obj: &O, p: &TangentPose) -> Result<Matrix6<f64>> {
    let x = p.to_vector();
    let mut h = Matrix6::zeros();
    for i in 0..6 {
        let mut a = x;
        let mut b = x;
        a[i] += HESSIAN_STEP;
        b[i] -= HESSIAN_STEP;
        let ga = obj.evaluate(&TangentPose::from_vector(&a))?.gradient;
        let gb = obj.evaluate(&TangentPose::from_vector(&b))?.gradient;
        h.set_column(i, &((ga - gb) / (2.0 * HESSIAN_STEP)));
    }
    Ok((h + h.transpose()) * 0.5)
}

/// `H^{-1} dl_dp`, or `None` when `H` is not safely positive definite.
pub fn argmin_sensitivity(h: &Matrix6<f64>, dl_dp: &Vector6<f64>) -> Option<Vector6<f64>> {
    let eig = SymmetricEigen::new(*h);
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        return None;
    }
    let inv = eig.eigenvectors.transpose() * dl_dp;
    let scaled = Vector6::from_fn(|i, _| inv[i] / eig.eigenvalues[i]);
    Some(eig.eigenvectors * scaled)
}

/// Unconstrained per-pixel parameters; weights are `sigmoid(theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightParams {
    pub theta2d: Raster<f64>,
    pub theta3d: Raster<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl WeightParams {
    /// All weights at 0.5.
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            theta2d: Raster::filled(width, height, 0.0),
            theta3d: Raster::filled(width, height, 0.0),
        }
    }

    pub fn width(&self) -> usize {
        self.theta2d.width()
    }

    pub fn height(&self) -> usize {
        self.theta2d.height()
    }

    pub fn weight_maps(&self) -> (WeightMap, WeightMap) {
        (
            WeightMap::new(self.theta2d.map(|&t| sigmoid(t))).expect("sigmoid lies in [0, 1]"),
            WeightMap::new(self.theta3d.map(|&t| sigmoid(t))).expect("sigmoid lies in [0, 1]"),
        )
    }
}

/// Gradient of the pose loss with respect to the weight parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DdnGradient {
    pub d_theta2d: Raster<f64>,
    pub d_theta3d: Raster<f64>,
    pub loss_value: f64,
    pub valid: bool,
}

impl DdnGradient {
    fn zeros(width: usize, height: usize, loss_value: f64, valid: bool) -> Self {
        Self {
            d_theta2d: Raster::filled(width, height, 0.0),
            d_theta3d: Raster::filled(width, height, 0.0),
            loss_value,
            valid,
        }
    }
}

/// Loss gradients with respect to the weights themselves, on the valid set.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightGradient {
    pub d_w2d: Vec<f64>,
    pub d_w3d: Vec<f64>,
}

/// `dL/dw` over the valid set of `ws`, or `None` if the Hessian at `p_star`
/// is unusable.
pub fn weight_gradient(
    ws: &ResidualWorkspace,
    p_star: &TangentPose,
    dl_dp: &Vector6<f64>,
) -> Result<Option<WeightGradient>> {
    let h = hessian(ws, p_star)?;
    let Some(v) = argmin_sensitivity(&h, dl_dp) else {
        return Ok(None);
    };
    let terms = ws.pixel_terms(p_star)?;
    let (w2, w3) = (ws.weights_2d(), ws.weights_3d());
    let mut d_w2d = Vec::with_capacity(terms.len());
    let mut d_w3d = Vec::with_capacity(terms.len());
    for (k, t) in terms.iter().enumerate() {
        let r = w2[k] * t.r2d + w3[k] * t.r3d;
        let dr = t.dr2d * w2[k] + t.dr3d * w3[k];
        let m2 = (dr * t.r2d + t.dr2d * r) * 2.0;
        let m3 = (dr * t.r3d + t.dr3d * r) * 2.0;
        d_w2d.push(-v.dot(&m2));
        d_w3d.push(-v.dot(&m3));
    }
    Ok(Some(WeightGradient { d_w2d, d_w3d }))
}

/// Gradient of `pose_loss(p*, p_gt)` with respect to `theta`, assuming the
/// weights of `ws` are `sigmoid(theta)`.
pub fn implicit_gradient(ws: &ResidualWorkspace, report: &SolveReport, p_gt: &TangentPose) -> Result<DdnGradient> {
    let (w, h) = (ws.width(), ws.height());
    let loss = pose_loss(&report.pose, p_gt);
    if !report.converged || report.degenerate() {
        return Ok(DdnGradient::zeros(w, h, loss, false));
    }
    let dl_dp = pose_loss_subgradient(&report.pose, p_gt);
    let mut out = DdnGradient::zeros(w, h, loss, true);
    if dl_dp == Vector6::zeros() {
        return Ok(out);
    }
    let Some(g) = weight_gradient(ws, &report.pose, &dl_dp)? else {
        out.valid = false;
        return Ok(out);
    };
    let (w2, w3) = (ws.weights_2d(), ws.weights_3d());
    for (k, &i) in ws.omega().iter().enumerate() {
        out.d_theta2d.as_mut_slice()[i] = g.d_w2d[k] * w2[k] * (1.0 - w2[k]);
        out.d_theta3d.as_mut_slice()[i] = g.d_w3d[k] * w3[k] * (1.0 - w3[k]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    GradientDescent,
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub step: f64,
    pub iters: usize,
    /// Fraction of samples, taken from the end, held out for selection.
    pub val_split: f64,
    pub optimizer: Optimizer,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            step: 1e-2,
            iters: 200,
            val_split: 0.2,
            optimizer: Optimizer::Adam,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !(0.0..1.0).contains(&self.val_split) {
            return Err(Error::InvalidArgument(format!("invalid fit config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub valid_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: WeightParams,
    pub trace: Vec<TraceEntry>,
    pub best_iteration: usize,
}

/// One training pair with its precomputed geometry and warm start.
#[derive(Debug, Clone)]
pub struct FitSample {
    pub workspace: ResidualWorkspace,
    pub p_gt: TangentPose,
    warm: TangentPose,
}

impl FitSample {
    pub fn new(pair: &FramePair, p_gt: TangentPose) -> Result<Self> {
        Ok(Self {
            workspace: ResidualWorkspace::geometry(pair)?,
            p_gt,
            warm: TangentPose::zero(),
        })
    }

    pub fn from_workspace(workspace: ResidualWorkspace, p_gt: TangentPose) -> Self {
        Self {
            workspace,
            p_gt,
            warm: TangentPose::zero(),
        }
    }
}

/// Solves every sample under `params`; returns the mean loss, the summed
/// parameter gradient when requested, and the valid sample count.
pub fn evaluate_params(
    samples: &mut [FitSample],
    params: &WeightParams,
    solver: &SolverConfig,
    with_gradient: bool,
) -> Result<(f64, Option<(Raster<f64>, Raster<f64>)>, usize)> {
    let (w2, w3) = params.weight_maps();
    let (w, h) = (params.width(), params.height());
    let mut g2 = Raster::filled(w, h, 0.0);
    let mut g3 = Raster::filled(w, h, 0.0);
    let mut loss = 0.0;
    let mut valid = 0usize;
    for s in samples.iter_mut() {
        s.workspace.set_weights(&w2, &w3)?;
        let report = solve_pose(&s.workspace, solver, &s.warm)?;
        if !report.converged || report.degenerate() {
            continue;
        }
        s.warm = report.pose;
        if with_gradient {
            let g = implicit_gradient(&s.workspace, &report, &s.p_gt)?;
            if !g.valid {
                continue;
            }
            for (acc, v) in g2.as_mut_slice().iter_mut().zip(g.d_theta2d.as_slice()) {
                *acc += v;
            }
            for (acc, v) in g3.as_mut_slice().iter_mut().zip(g.d_theta3d.as_slice()) {
                *acc += v;
            }
        }
        loss += pose_loss(&report.pose, &s.p_gt);
        valid += 1;
    }
    if valid == 0 {
        return Ok((f64::NAN, None, 0));
    }
    let n = valid as f64;
    loss /= n;
    let grads = with_gradient.then(|| (g2.map(|v| v / n), g3.map(|v| v / n)));
    Ok((loss, grads, valid))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, x: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
            x[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Fits both weight rasters jointly on the mean pose loss of the training
/// samples and returns the parameters with the lowest selection loss seen.
pub fn fit_weight_maps(
    samples: &mut [FitSample],
    params: WeightParams,
    cfg: &FitConfig,
    solver: &SolverConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty fitting dataset".into()));
    }
    for s in samples.iter() {
        if (s.workspace.width(), s.workspace.height()) != (params.width(), params.height()) {
            return Err(Error::InvalidArgument("sample and parameter raster sizes differ".into()));
        }
    }
    let n_val = ((samples.len() as f64) * cfg.val_split).floor() as usize;
    let n_val = n_val.min(samples.len() - 1);
    let (train, val) = samples.split_at_mut(samples.len() - n_val);

    let n = params.theta2d.len();
    let mut adam = Adam::new(2 * n);
    let mut current = params;
    let mut best = (f64::INFINITY, 0usize, current.clone());
    let mut trace = Vec::with_capacity(cfg.iters + 1);
    for iteration in 0..=cfg.iters {
        let want_grad = iteration < cfg.iters;
        let (train_loss, grads, valid) = evaluate_params(train, &current, solver, want_grad)?;
        if valid == 0 {
            return Err(Error::FittingFailure(format!(
                "no valid training sample at iteration {iteration}"
            )));
        }
        let val_loss = if val.is_empty() {
            None
        } else {
            let (l, _, nv) = evaluate_params(val, &current, solver, false)?;
            (nv > 0).then_some(l)
        };
        trace.push(TraceEntry {
            iteration,
            train_loss,
            val_loss,
            valid_samples: valid,
        });
        let selection = val_loss.unwrap_or(train_loss);
        if selection < best.0 {
            best = (selection, iteration, current.clone());
        }
        let Some((g2, g3)) = grads else { break };
        match cfg.optimizer {
            Optimizer::GradientDescent => {
                for (t, g) in current.theta2d.as_mut_slice().iter_mut().zip(g2.as_slice()) {
                    *t -= cfg.step * g;
                }
                for (t, g) in current.theta3d.as_mut_slice().iter_mut().zip(g3.as_slice()) {
                    *t -= cfg.step * g;
                }
            }
            Optimizer::Adam => {
                let mut x: Vec<f64> = current
                    .theta2d
                    .as_slice()
                    .iter()
                    .chain(current.theta3d.as_slice())
                    .copied()
                    .collect();
                let g: Vec<f64> = g2.as_slice().iter().chain(g3.as_slice()).copied().collect();
                adam.step(&mut x, &g, cfg.step);
                current.theta2d.as_mut_slice().copy_from_slice(&x[..n]);
                current.theta3d.as_mut_slice().copy_from_slice(&x[n..]);
            }
        }
    }
    Ok(FitResult {
        params: best.2,
        trace,
        best_iteration: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::Evaluation;
    use nalgebra::{Matrix3x6, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// f(p; w) = sum_i w_i |A_i p - b_i|^2.
    struct WeightedQuadratic {
        a: Vec<Matrix3x6<f64>>,
        b: Vec<Vector3<f64>>,
        w: Vec<f64>,
    }

    impl WeightedQuadratic {
        fn random(rng: &mut ChaCha8Rng, n: usize) -> Self {
            Self {
                a: (0..n).map(|_| Matrix3x6::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect(),
                b: (0..n).map(|_| Vector3::from_fn(|_, _| rng.random_range(-0.05..0.05))).collect(),
                w: (0..n).map(|_| rng.random_range(0.2..1.0)).collect(),
            }
        }

        fn normal_matrix(&self) -> Matrix6<f64> {
            self.a.iter().zip(&self.w).map(|(a, w)| a.transpose() * a * *w).sum()
        }

        fn argmin(&self) -> Vector6<f64> {
            let rhs: Vector6<f64> = self.a.iter().zip(&self.b).zip(&self.w).map(|((a, b), w)| a.transpose() * b * *w).sum();
            self.normal_matrix().cholesky().unwrap().solve(&rhs)
        }

        fn mixed(&self, p: &Vector6<f64>, i: usize) -> Vector6<f64> {
            self.a[i].transpose() * (self.a[i] * p - self.b[i]) * 2.0
        }
    }

    impl PoseObjective for WeightedQuadratic {
        fn evaluate(&self, p: &TangentPose) -> Result<Evaluation> {
            let x = p.to_vector();
            let mut value = 0.0;
            let mut gradient = Vector6::zeros();
            for ((a, b), w) in self.a.iter().zip(&self.b).zip(&self.w) {
                let e = a * x - b;
                value += w * e.norm_squared();
                gradient += a.transpose() * e * (2.0 * w);
            }
            Ok(Evaluation {
                value,
                gradient,
                behind_camera: 0,
            })
        }
    }

    #[test]
    fn pose_loss_examples() {
        let z = TangentPose::zero();
        assert_eq!(pose_loss(&z, &z), 0.0);
        let p = TangentPose::from_vector(&Vector6::new(0.1, 0.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(pose_loss(&p, &z), 0.1);
        let a = Vector6::new(0.1, -0.2, 0.3, 0.0, 0.05, -0.01);
        let mut b = a;
        b.as_mut_slice().reverse();
        assert!(
            (pose_loss(&TangentPose::from_vector(&a), &z) - pose_loss(&TangentPose::from_vector(&b), &z)).abs()
                < 1e-15
        );
        assert_eq!(pose_loss_subgradient(&z, &z), Vector6::zeros());
    }

    #[test]
    fn implicit_derivative_matches_closed_form_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = SolverConfig {
            grad_tol: 1e-14,
            step_tol: 1e-18,
            max_iters: 500,
            ..Default::default()
        };
        for _ in 0..10 {
            let q = WeightedQuadratic::random(&mut rng, 8);
            let report = solve_pose(&q, &cfg, &TangentPose::zero()).unwrap();
            let p_star = report.pose.to_vector();
            assert!((p_star - q.argmin()).amax() < 1e-10);
            let c = Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let h = hessian(&q, &report.pose).unwrap();
            let v = argmin_sensitivity(&h, &c).unwrap();
            let m_inv = q.normal_matrix().try_inverse().unwrap();
            let exact_p = q.argmin();
            for i in 0..q.a.len() {
                let implicit = -v.dot(&q.mixed(&p_star, i));
                let dp = m_inv * (q.a[i].transpose() * (q.b[i] - q.a[i] * exact_p));
                let closed = c.dot(&dp);
                assert!(
                    (implicit - closed).abs() <= 1e-8 * closed.abs().max(1e-12),
                    "{implicit} vs {closed}"
                );
            }
        }
    }

    #[test]
    fn sensitivity_rejects_ill_conditioned_hessian() {
        let mut h = Matrix6::identity();
        h[(5, 5)] = 1e-12;
        assert!(argmin_sensitivity(&h, &Vector6::repeat(1.0)).is_none());
        h[(5, 5)] = -1.0;
        assert!(argmin_sensitivity(&h, &Vector6::repeat(1.0)).is_none());
    }

    #[test]
    fn hessian_of_quadratic_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let q = WeightedQuadratic::random(&mut rng, 5);
        let h = hessian(&q, &TangentPose::zero()).unwrap();
        assert!((h - q.normal_matrix() * 2.0).amax() < 1e-8);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
        let x = 1.3;
        assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
    }
}
