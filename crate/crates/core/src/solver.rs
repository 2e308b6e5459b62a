//! L-BFGS pose solve with a strong-Wolfe line search.

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{exp_map, log_map, RigidTransform, TangentPose};
use crate::trajeval::Trajectory;

/// Minimum number of valid pixels for a 6-DoF pose to be observable.
pub const MIN_OBSERVATIONS: usize = 6;

/// Upper bound on the tangent-space length of a trial step.
const MAX_STEP: f64 = 0.1;
const MAX_BRACKET: usize = 20;
const MAX_ZOOM: usize = 20;
/// Relative change of the step below which the secant refinement is skipped.
const REFINE_MIN_CHANGE: f64 = 1e-3;
const ROUNDOFF: f64 = 1e3 * f64::EPSILON;

/// Value and gradient of a pose objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Vector6<f64>,
    pub behind_camera: usize,
}

/// A smooth scalar function of the pose.
pub trait PoseObjective {
    fn evaluate(&self, p: &TangentPose) -> Result<Evaluation>;

    /// Number of independent observations; solves need at least six.
    fn observation_count(&self) -> usize {
        usize::MAX
    }

    /// True when the objective is identically zero.
    fn is_flat(&self) -> bool {
        false
    }
}

impl PoseObjective for crate::residuals::ResidualWorkspace {
    fn evaluate(&self, p: &TangentPose) -> Result<Evaluation> {
        self.evaluate_pose(p)
    }

    fn observation_count(&self) -> usize {
        self.len()
    }

    fn is_flat(&self) -> bool {
        self.weights_2d().iter().chain(self.weights_3d()).all(|&w| w == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    #[default]
    Identity,
    PreviousPose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub memory: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    pub init_policy: InitPolicy,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 100,
            grad_tol: 1e-8,
            step_tol: 1e-10,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            init_policy: InitPolicy::Identity,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.memory > 0
            && self.wolfe_c1 > 0.0
            && self.wolfe_c1 < self.wolfe_c2
            && self.wolfe_c2 < 1.0
            && self.grad_tol > 0.0
            && self.step_tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid solver config {self:?}")))
        }
    }
}

/// Why the iteration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    StepTolerance,
    MaxIterations,
    LineSearchFailure,
    FlatObjective,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub pose: TangentPose,
    pub iterations: usize,
    pub final_objective: f64,
    pub final_grad_norm: f64,
    pub converged: bool,
    pub behind_camera_count: usize,
    pub termination: Termination,
    /// Objective at the initial point and after every accepted step;
    /// non-increasing up to a relative rounding band of `1e3 * EPSILON`.
    pub objective_trace: Vec<f64>,
}

impl SolveReport {
    /// Set when the weights vanish and the pose is unconstrained.
    pub fn degenerate(&self) -> bool {
        self.termination == Termination::FlatObjective
    }
}

#[derive(Debug, Clone, Copy)]
struct Point {
    x: Vector6<f64>,
    eval: Evaluation,
}

struct Trial {
    alpha: f64,
    f: f64,
    df: f64,
    point: Option<Point>,
}

enum Search {
    Accepted(Point),
    Failed { bracket_width: f64 },
}

struct LineSearch<'a, O: PoseObjective + ?Sized> {
    obj: &'a O,
    cfg: &'a SolverConfig,
    x0: Vector6<f64>,
    f0: f64,
    df0: f64,
    dir: Vector6<f64>,
}

impl<O: PoseObjective + ?Sized> LineSearch<'_, O> {
    fn trial(&self, alpha: f64) -> Trial {
        let x = self.x0 + self.dir * alpha;
        match self.obj.evaluate(&TangentPose::from_vector(&x)) {
            Ok(eval) => Trial {
                alpha,
                f: eval.value,
                df: eval.gradient.dot(&self.dir),
                point: Some(Point { x, eval }),
            },
            Err(_) => Trial {
                alpha,
                f: f64::INFINITY,
                df: f64::NAN,
                point: None,
            },
        }
    }

    fn armijo(&self, t: &Trial) -> bool {
        t.f <= self.f0 + self.cfg.wolfe_c1 * t.alpha * self.df0
    }

    fn curvature(&self, t: &Trial) -> bool {
        t.df.abs() <= -self.cfg.wolfe_c2 * self.df0
    }

    /// Acceptance once function differences are lost in rounding: the
    /// value may move by at most `ROUNDOFF * |f0|` and the slope must
    /// satisfy the approximate Wolfe bounds.
    fn roundoff_accept(&self, t: &Trial) -> bool {
        t.point.is_some()
            && (t.f - self.f0).abs() <= ROUNDOFF * self.f0.abs()
            && t.df >= self.cfg.wolfe_c2 * self.df0
            && t.df <= (2.0 * self.cfg.wolfe_c1 - 1.0) * self.df0
    }

    fn accept(&self, t: &Trial) -> Option<Point> {
        let ok = (t.point.is_some() && self.armijo(t) && self.curvature(t)) || self.roundoff_accept(t);
        if ok {
            self.refine(t).or(t.point)
        } else {
            None
        }
    }

    /// One secant step on the directional derivative from an acceptable
    /// trial, kept only if it also satisfies strong Wolfe with a lower value.
    fn refine(&self, t: &Trial) -> Option<Point> {
        let denom = self.df0 - t.df;
        if !(denom < 0.0) {
            return None;
        }
        let alpha = t.alpha * self.df0 / denom;
        if !alpha.is_finite() || (alpha - t.alpha).abs() <= REFINE_MIN_CHANGE * t.alpha {
            return None;
        }
        let r = self.trial(alpha);
        r.point.filter(|_| r.f < t.f && self.armijo(&r) && self.curvature(&r))
    }

    fn run(&self, alpha0: f64) -> Search {
        let mut prev = Trial {
            alpha: 0.0,
            f: self.f0,
            df: self.df0,
            point: None,
        };
        let mut alpha = alpha0;
        for i in 0..MAX_BRACKET {
            let t = self.trial(alpha);
            if let Some(p) = self.accept(&t) {
                return Search::Accepted(p);
            }
            if !self.armijo(&t) || (i > 0 && t.f >= prev.f) || !t.df.is_finite() {
                return self.zoom(prev, t);
            }
            if t.df >= 0.0 {
                return self.zoom(t, prev);
            }
            alpha *= 4.0;
            prev = t;
        }
        Search::Failed {
            bracket_width: alpha * self.dir.norm(),
        }
    }

    fn zoom(&self, mut lo: Trial, mut hi: Trial) -> Search {
        for _ in 0..MAX_ZOOM {
            let alpha = interpolate(&lo, &hi);
            let t = self.trial(alpha);
            if let Some(p) = self.accept(&t) {
                return Search::Accepted(p);
            }
            if !self.armijo(&t) || t.f >= lo.f || !t.df.is_finite() {
                hi = t;
            } else {
                if t.df * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = t;
            }
            if (hi.alpha - lo.alpha).abs() * self.dir.norm() < f64::EPSILON {
                break;
            }
        }
        if lo.alpha > 0.0 && lo.f < self.f0 {
            if let Some(p) = lo.point {
                // Best decrease found when the bracket collapses.
                return Search::Accepted(p);
            }
        }
        Search::Failed {
            bracket_width: (hi.alpha - lo.alpha).abs() * self.dir.norm(),
        }
    }
}

/// Cubic interpolation, clamped to the inner 80% of the bracket.
fn interpolate(lo: &Trial, hi: &Trial) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let (left, right) = (a.min(b), a.max(b));
    let width = right - left;
    let guard = 0.1 * width;
    let bisect = 0.5 * (a + b);
    if !(lo.f.is_finite() && hi.f.is_finite() && lo.df.is_finite() && hi.df.is_finite()) {
        return bisect;
    }
    let d1 = lo.df + hi.df - 3.0 * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.df * hi.df;
    if disc < 0.0 {
        return bisect;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let denom = hi.df - lo.df + 2.0 * d2;
    if denom == 0.0 {
        return bisect;
    }
    let c = b - (b - a) * (hi.df + d2 - d1) / denom;
    if c.is_finite() {
        c.clamp(left + guard, right - guard)
    } else {
        bisect
    }
}

/// Minimizes `obj` over the tangent pose starting at `init`.
pub fn solve_pose<O: PoseObjective + ?Sized>(
    obj: &O,
    cfg: &SolverConfig,
    init: &TangentPose,
) -> Result<SolveReport> {
    cfg.validate()?;
    if !init.is_finite() {
        return Err(Error::InvalidArgument("initial pose is not finite".into()));
    }
    let n_obs = obj.observation_count();
    if n_obs < MIN_OBSERVATIONS {
        return Err(Error::DegenerateFrame(format!(
            "{n_obs} valid pixels, at least {MIN_OBSERVATIONS} required"
        )));
    }
    let mut cur = Point {
        x: init.to_vector(),
        eval: obj.evaluate(init)?,
    };
    let mut trace = vec![cur.eval.value];
    let finish = |cur: &Point, iterations, converged, termination, trace| SolveReport {
        pose: TangentPose::from_vector(&cur.x),
        iterations,
        final_objective: cur.eval.value,
        final_grad_norm: cur.eval.gradient.norm(),
        converged,
        behind_camera_count: cur.eval.behind_camera,
        termination,
        objective_trace: trace,
    };
    if obj.is_flat() {
        return Ok(finish(&cur, 0, true, Termination::FlatObjective, trace));
    }

    let mut history: Vec<(Vector6<f64>, Vector6<f64>, f64)> = Vec::with_capacity(cfg.memory);
    let mut fresh = true;
    for iter in 0..cfg.max_iters {
        let g = cur.eval.gradient;
        if g.norm() <= cfg.grad_tol {
            return Ok(finish(&cur, iter, true, Termination::GradientTolerance, trace));
        }
        let mut dir = two_loop(&history, &g);
        if dir.dot(&g) >= 0.0 || !dir.iter().all(|c| c.is_finite()) {
            history.clear();
            fresh = true;
            dir = -g;
        }
        let dnorm = dir.norm();
        let alpha0 = if fresh {
            MAX_STEP / dnorm
        } else {
            (MAX_STEP / dnorm).min(1.0)
        };
        let ls = LineSearch {
            obj,
            cfg,
            x0: cur.x,
            f0: cur.eval.value,
            df0: dir.dot(&g),
            dir,
        };
        match ls.run(alpha0) {
            Search::Accepted(next) => {
                let s = next.x - cur.x;
                let y = next.eval.gradient - g;
                let sy = s.dot(&y);
                if sy > f64::EPSILON * s.norm() * y.norm() {
                    if history.len() == cfg.memory {
                        history.remove(0);
                    }
                    history.push((s, y, 1.0 / sy));
                }
                fresh = false;
                let step = s.norm();
                cur = next;
                trace.push(cur.eval.value);
                if step < cfg.step_tol {
                    return Ok(finish(&cur, iter + 1, true, Termination::StepTolerance, trace));
                }
            }
            Search::Failed { bracket_width } => {
                if bracket_width < cfg.step_tol {
                    return Ok(finish(&cur, iter, true, Termination::StepTolerance, trace));
                }
                if !fresh {
                    history.clear();
                    fresh = true;
                    continue;
                }
                return Ok(finish(&cur, iter, false, Termination::LineSearchFailure, trace));
            }
        }
    }
    let converged = cur.eval.gradient.norm() <= cfg.grad_tol;
    let term = if converged {
        Termination::GradientTolerance
    } else {
        Termination::MaxIterations
    };
    Ok(finish(&cur, cfg.max_iters, converged, term, trace))
}

fn two_loop(history: &[(Vector6<f64>, Vector6<f64>, f64)], g: &Vector6<f64>) -> Vector6<f64> {
    let mut q = *g;
    let mut alphas = vec![0.0; history.len()];
    for (i, (s, y, rho)) in history.iter().enumerate().rev() {
        let a = rho * s.dot(&q);
        alphas[i] = a;
        q -= y * a;
    }
    if let Some((s, y, _)) = history.last() {
        q *= s.dot(y) / y.dot(y);
    }
    for (i, (s, y, rho)) in history.iter().enumerate() {
        let b = rho * y.dot(&q);
        q += s * (alphas[i] - b);
    }
    -q
}

/// Chains relative poses into an absolute trajectory starting at identity.
///
/// `stamps` has one more entry than `relative`; pose `t` is
/// `abs[t-1] * exp(relative[t-1])`.
pub fn chain_trajectory(relative: &[TangentPose], stamps: &[f64]) -> Result<Trajectory> {
    if stamps.len() != relative.len() + 1 {
        return Err(Error::InvalidArgument(format!(
            "{} relative poses need {} stamps, got {}",
            relative.len(),
            relative.len() + 1,
            stamps.len()
        )));
    }
    let mut poses = Vec::with_capacity(stamps.len());
    let mut abs = RigidTransform::identity();
    poses.push(abs);
    for p in relative {
        abs = abs.compose(&exp_map(p)?);
        poses.push(abs);
    }
    Trajectory::new(stamps.to_vec(), poses)
}

/// Relative poses between consecutive entries of a trajectory.
pub fn relative_poses(traj: &Trajectory) -> Result<Vec<TangentPose>> {
    traj.poses()
        .windows(2)
        .map(|w| log_map(&w[0].inverse().compose(&w[1])))
        .collect()
}
