//! Weighted 2D/3D geometric residuals and their pose derivatives.
//!
//! For a pixel `x` in the valid set with back-projection `P = pi_3D(D_t, x)`,
//! flow target `u = x + F_t(x)` and warped previous point
//! `Q = pi_3D(D_{t-1}, u)`:
//!
//! ```text
//! r2d(p, x) = sqrt(1 / (X Y)) * | pi_2D(exp(p) P) - u |
//! r3d(p, x) = | exp(p) P - Q |
//! r(p, x)   = w2d(x) r2d(p, x) + w3d(x) r3d(p, x)
//! f(p)      = sum over x of r(p, x)^2
//! ```
//!
//! Sums run sequentially in the row-major order of the valid set, so a
//! pixel with zero weights adds exactly `0.0` and reruns are bitwise
//! reproducible.

use nalgebra::{Matrix3, Vector2, Vector3, Vector6};

use crate::camera::{PinholeIntrinsics, MIN_DEPTH};
use crate::error::{Error, Result};
use crate::fields::{build_omega, warp_backproject, FramePair, WeightMap};
use crate::lie::{exp_map, se3_right_jacobian, RigidTransform, TangentPose};
use crate::solver::Evaluation;

/// Geometry and weights of one frame pair, gathered over the valid set.
#[derive(Debug, Clone)]
pub struct ResidualWorkspace {
    width: usize,
    height: usize,
    intrinsics: PinholeIntrinsics,
    omega: Vec<usize>,
    points: Vec<Vector3<f64>>,
    warped: Vec<Vector3<f64>>,
    targets: Vec<Vector2<f64>>,
    scale2d: f64,
    w2d: Vec<f64>,
    w3d: Vec<f64>,
}

/// Residual values and their pose gradients at one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelTerms {
    pub r2d: f64,
    pub r3d: f64,
    pub dr2d: Vector6<f64>,
    pub dr3d: Vector6<f64>,
    pub behind_camera: bool,
}

impl ResidualWorkspace {
    pub fn new(pair: &FramePair, w2d: &WeightMap, w3d: &WeightMap) -> Result<Self> {
        let mut ws = Self::geometry(pair)?;
        ws.set_weights(w2d, w3d)?;
        Ok(ws)
    }

    /// Workspace with the same weight everywhere in both maps.
    pub fn uniform(pair: &FramePair, weight: f64) -> Result<Self> {
        let w = WeightMap::uniform(pair.width(), pair.height(), weight)?;
        Self::new(pair, &w, &w)
    }

    /// Precomputes the geometry; weights start at one.
    pub fn geometry(pair: &FramePair) -> Result<Self> {
        let omega = build_omega(pair)?;
        let (w, h) = (pair.width(), pair.height());
        let intr = pair.rig.intrinsics;
        let mut points = Vec::with_capacity(omega.len());
        let mut warped = Vec::with_capacity(omega.len());
        let mut targets = Vec::with_capacity(omega.len());
        for &i in &omega {
            let (x, y) = (i % w, i / w);
            let d = pair.depth_t.get(x, y).expect("omega has valid depth");
            points.push(intr.backproject_point(x as f64, y as f64, d));
            warped.push(warp_backproject(pair, x, y).expect("omega has valid warp").xyz());
            targets.push(pair.flow_target(x, y).expect("omega has valid flow"));
        }
        let n = omega.len();
        Ok(Self {
            width: w,
            height: h,
            intrinsics: intr,
            omega,
            points,
            warped,
            targets,
            scale2d: (1.0 / (w * h) as f64).sqrt(),
            w2d: vec![1.0; n],
            w3d: vec![1.0; n],
        })
    }

    /// Builds a workspace from explicit correspondences.
    #[allow(clippy::too_many_arguments)]
    pub fn from_correspondences(
        width: usize,
        height: usize,
        intrinsics: PinholeIntrinsics,
        omega: Vec<usize>,
        points: Vec<Vector3<f64>>,
        warped: Vec<Vector3<f64>>,
        targets: Vec<Vector2<f64>>,
    ) -> Result<Self> {
        let n = omega.len();
        if points.len() != n || warped.len() != n || targets.len() != n {
            return Err(Error::InvalidArgument("correspondence lengths differ".into()));
        }
        if n == 0 {
            return Err(Error::DegenerateFrame("no valid pixels".into()));
        }
        Ok(Self {
            width,
            height,
            intrinsics,
            omega,
            points,
            warped,
            targets,
            scale2d: (1.0 / (width * height) as f64).sqrt(),
            w2d: vec![1.0; n],
            w3d: vec![1.0; n],
        })
    }

    pub fn set_weights(&mut self, w2d: &WeightMap, w3d: &WeightMap) -> Result<()> {
        for m in [w2d, w3d] {
            if (m.width(), m.height()) != (self.width, self.height) {
                return Err(Error::InvalidArgument(format!(
                    "weight map is {}x{}, frame is {}x{}",
                    m.width(),
                    m.height(),
                    self.width,
                    self.height
                )));
            }
        }
        self.w2d = self.omega.iter().map(|&i| w2d.raster().as_slice()[i]).collect();
        self.w3d = self.omega.iter().map(|&i| w3d.raster().as_slice()[i]).collect();
        Ok(())
    }

    /// Sets weights already gathered over the valid set.
    pub fn set_weight_values(&mut self, w2d: Vec<f64>, w3d: Vec<f64>) -> Result<()> {
        if w2d.len() != self.len() || w3d.len() != self.len() {
            return Err(Error::InvalidArgument("weight vector length differs from |omega|".into()));
        }
        if w2d.iter().chain(&w3d).any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::InvalidArgument("weights must lie in [0, 1]".into()));
        }
        self.w2d = w2d;
        self.w3d = w3d;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn omega(&self) -> &[usize] {
        &self.omega
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn scale2d(&self) -> f64 {
        self.scale2d
    }

    pub fn weights_2d(&self) -> &[f64] {
        &self.w2d
    }

    pub fn weights_3d(&self) -> &[f64] {
        &self.w3d
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn warped_points(&self) -> &[Vector3<f64>] {
        &self.warped
    }

    pub fn targets(&self) -> &[Vector2<f64>] {
        &self.targets
    }

    /// Keeps only the valid-set entries selected by `keep`.
    pub fn retain(&mut self, mut keep: impl FnMut(usize) -> bool) {
        let flags: Vec<bool> = self.omega.iter().map(|&i| keep(i)).collect();
        let mut it = flags.iter();
        self.omega.retain(|_| *it.next().unwrap());
        macro_rules! filter {
            ($v:expr) => {{
                let mut it = flags.iter();
                $v.retain(|_| *it.next().unwrap());
            }};
        }
        filter!(self.points);
        filter!(self.warped);
        filter!(self.targets);
        filter!(self.w2d);
        filter!(self.w3d);
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "pixel index {k} out of range for |omega| = {}",
                self.len()
            )));
        }
        Ok(())
    }

    fn residual_2d_at(&self, t: &RigidTransform, k: usize) -> Option<f64> {
        let y = t.apply(&self.points[k]);
        let px = self.intrinsics.project_point(&y)?;
        Some(self.scale2d * (px - self.targets[k]).norm())
    }

    fn residual_3d_at(&self, t: &RigidTransform, k: usize) -> f64 {
        (t.apply(&self.points[k]) - self.warped[k]).norm()
    }

    /// Per-pixel residuals and pose gradients at `p`.
    pub fn pixel_terms(&self, p: &TangentPose) -> Result<Vec<PixelTerms>> {
        let t = exp_map(p)?;
        let rt = t.rotation().transpose();
        let jr_t = se3_right_jacobian(p).transpose();
        let to_tangent = |y: &Vector3<f64>, a: &Vector3<f64>| -> Vector6<f64> {
            let lin = rt * a;
            let ang = rt * (y - t.translation()).cross(a);
            jr_t * Vector6::new(lin.x, lin.y, lin.z, ang.x, ang.y, ang.z)
        };
        let mut out = Vec::with_capacity(self.len());
        for k in 0..self.len() {
            let y = t.apply(&self.points[k]);
            let (r2d, a2, behind) = self.residual_2d_terms(&y, k);
            let e3 = y - self.warped[k];
            let r3d = e3.norm();
            let a3 = if r3d > 0.0 { e3 / r3d } else { Vector3::zeros() };
            out.push(PixelTerms {
                r2d,
                r3d,
                dr2d: to_tangent(&y, &a2),
                dr3d: to_tangent(&y, &a3),
                behind_camera: behind,
            });
        }
        Ok(out)
    }

    /// `(r2d, d r2d / d Y, behind_camera)` at the transformed point `y`.
    #[inline]
    fn residual_2d_terms(&self, y: &Vector3<f64>, k: usize) -> (f64, Vector3<f64>, bool) {
        if y.z <= MIN_DEPTH {
            return (0.0, Vector3::zeros(), true);
        }
        let intr = &self.intrinsics;
        let inv_z = 1.0 / y.z;
        let u = intr.fx * y.x * inv_z + intr.cx;
        let v = intr.fy * y.y * inv_z + intr.cy;
        let eu = u - self.targets[k].x;
        let ev = v - self.targets[k].y;
        let n = (eu * eu + ev * ev).sqrt();
        if n == 0.0 {
            return (0.0, Vector3::zeros(), false);
        }
        let c = self.scale2d / n * inv_z;
        let grad = Vector3::new(
            c * eu * intr.fx,
            c * ev * intr.fy,
            -c * (eu * intr.fx * y.x + ev * intr.fy * y.y) * inv_z,
        );
        (self.scale2d * n, grad, false)
    }

    /// Objective value and gradient in a single pass.
    pub fn evaluate_pose(&self, p: &TangentPose) -> Result<Evaluation> {
        let t = exp_map(p)?;
        let r = t.rotation();
        let tr = t.translation();
        let mut value = 0.0;
        let mut sum_a = Vector3::zeros();
        let mut sum_cross = Vector3::zeros();
        let mut behind = 0usize;
        for k in 0..self.len() {
            let (w2, w3) = (self.w2d[k], self.w3d[k]);
            let y = r * self.points[k] + tr;
            let (r2d, a2, is_behind) = self.residual_2d_terms(&y, k);
            behind += is_behind as usize;
            let e3 = y - self.warped[k];
            let r3d = e3.norm();
            let res = w2 * r2d + w3 * r3d;
            value += res * res;
            let mut a = a2 * w2;
            if r3d > 0.0 {
                a += e3 * (w3 / r3d);
            }
            a *= 2.0 * res;
            sum_a += a;
            sum_cross += (y - tr).cross(&a);
        }
        if !value.is_finite() || !sum_a.iter().chain(sum_cross.iter()).all(|c| c.is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "non-finite objective accumulation at pose {:?}",
                p.to_vector().as_slice()
            )));
        }
        let rt: Matrix3<f64> = r.transpose();
        let lin = rt * sum_a;
        let ang = rt * sum_cross;
        let local = Vector6::new(lin.x, lin.y, lin.z, ang.x, ang.y, ang.z);
        let gradient = se3_right_jacobian(p).transpose() * local;
        Ok(Evaluation {
            value,
            gradient,
            behind_camera: behind,
        })
    }
}

/// Reprojection residual at valid-set entry `k`. Points
/// behind the camera contribute zero.
pub fn residual_2d(ws: &ResidualWorkspace, p: &TangentPose, k: usize) -> Result<f64> {
    ws.check_index(k)?;
    let t = exp_map(p)?;
    Ok(ws.residual_2d_at(&t, k).unwrap_or(0.0))
}

/// Point-to-point residual at valid-set entry `k`.
pub fn residual_3d(ws: &ResidualWorkspace, p: &TangentPose, k: usize) -> Result<f64> {
    ws.check_index(k)?;
    let t = exp_map(p)?;
    Ok(ws.residual_3d_at(&t, k))
}

pub fn residual_combined(ws: &ResidualWorkspace, p: &TangentPose, k: usize) -> Result<f64> {
    ws.check_index(k)?;
    let t = exp_map(p)?;
    let r2 = ws.residual_2d_at(&t, k).unwrap_or(0.0);
    let r3 = ws.residual_3d_at(&t, k);
    Ok(ws.w2d[k] * r2 + ws.w3d[k] * r3)
}

pub fn objective(ws: &ResidualWorkspace, p: &TangentPose) -> Result<f64> {
    Ok(ws.evaluate_pose(p)?.value)
}

pub fn objective_gradient(ws: &ResidualWorkspace, p: &TangentPose) -> Result<Vector6<f64>> {
    Ok(ws.evaluate_pose(p)?.gradient)
}
