//! Trajectory error metrics: ATE-RMSE after rigid alignment and RPE.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lie::RigidTransform;

/// Absolute camera poses, world from camera, with strictly increasing stamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    stamps: Vec<f64>,
    poses: Vec<RigidTransform>,
}

impl Trajectory {
    pub fn new(stamps: Vec<f64>, poses: Vec<RigidTransform>) -> Result<Self> {
        if stamps.len() != poses.len() {
            return Err(Error::InvalidArgument(format!(
                "{} stamps for {} poses",
                stamps.len(),
                poses.len()
            )));
        }
        if let Some(i) = stamps.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(format!(
                "stamps not strictly increasing at index {}",
                i + 1
            )));
        }
        if stamps.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument("non-finite stamp".into()));
        }
        Ok(Self { stamps, poses })
    }

    pub fn stamps(&self) -> &[f64] {
        &self.stamps
    }

    pub fn poses(&self) -> &[RigidTransform] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(|p| *p.translation()).collect()
    }

    /// Applies `t` on the left of every pose.
    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            stamps: self.stamps.clone(),
            poses: self.poses.iter().map(|p| t.compose(p)).collect(),
        }
    }
}

fn check_matching(est: &Trajectory, gt: &Trajectory) -> Result<()> {
    if est.len() != gt.len() {
        return Err(Error::Alignment(format!(
            "estimate has {} poses, ground truth {}",
            est.len(),
            gt.len()
        )));
    }
    if est.is_empty() {
        return Err(Error::Alignment("empty trajectories".into()));
    }
    if let Some(i) = est.stamps.iter().zip(&gt.stamps).position(|(a, b)| a != b) {
        return Err(Error::Alignment(format!(
            "stamp mismatch at index {i}: {} vs {}",
            est.stamps[i], gt.stamps[i]
        )));
    }
    Ok(())
}

/// Rigid transform `T` minimizing the summed squared distance between
/// `T * src[i]` and `dst[i]`.
pub fn align_points(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<RigidTransform> {
    if src.len() != dst.len() || src.is_empty() {
        return Err(Error::Alignment("point sets must be nonempty and equal length".into()));
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Alignment("SVD failed".into())),
    };
    let v = vt.transpose();
    let sign = (v * u.transpose()).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign));
    let r = v * fix * u.transpose();
    let t = cd - r * cs;
    RigidTransform::from_parts(r, t)
}

/// Translational residuals of `est` against `gt`, after alignment when requested.
pub fn ate_residuals(est: &Trajectory, gt: &Trajectory, align: bool) -> Result<Vec<f64>> {
    check_matching(est, gt)?;
    let pe = est.positions();
    let pg = gt.positions();
    let t = if align {
        align_points(&pe, &pg)?
    } else {
        RigidTransform::identity()
    };
    Ok(pe.iter().zip(&pg).map(|(e, g)| (t.apply(e) - g).norm()).collect())
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// ATE-RMSE in scene units, after rigid alignment of `est` onto `gt`.
pub fn ate_rmse(est: &Trajectory, gt: &Trajectory) -> Result<f64> {
    ate_rmse_with(est, gt, true)
}

pub fn ate_rmse_with(est: &Trajectory, gt: &Trajectory, align: bool) -> Result<f64> {
    Ok(rms(&ate_residuals(est, gt, align)?))
}

/// Per-index relative pose errors over a frame gap.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RpeSeries {
    pub trans: Vec<f64>,
    pub rot_deg: Vec<f64>,
}

pub fn rpe(est: &Trajectory, gt: &Trajectory, delta: usize) -> Result<RpeSeries> {
    check_matching(est, gt)?;
    if delta == 0 {
        return Err(Error::InvalidArgument("RPE frame gap must be at least 1".into()));
    }
    let mut out = RpeSeries::default();
    for t in 0..gt.len().saturating_sub(delta) {
        let dg = gt.poses[t].inverse().compose(&gt.poses[t + delta]);
        let de = est.poses[t].inverse().compose(&est.poses[t + delta]);
        let e = dg.inverse().compose(&de);
        out.trans.push(e.translation().norm());
        out.rot_deg.push(e.rotation_angle().to_degrees());
    }
    Ok(out)
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(v: &[f64]) -> MeanStd {
    if v.is_empty() {
        return MeanStd::default();
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    MeanStd {
        mean,
        std: var.sqrt(),
    }
}

/// Metrics of one sequence along with the per-frame values behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEvaluation {
    pub name: String,
    pub ate_residuals: Vec<f64>,
    pub rpe: RpeSeries,
}

impl SequenceEvaluation {
    pub fn compute(name: &str, est: &Trajectory, gt: &Trajectory, delta: usize, align: bool) -> Result<Self> {
        Ok(Self {
            name: name.to_string(),
            ate_residuals: ate_residuals(est, gt, align)?,
            rpe: rpe(est, gt, delta)?,
        })
    }

    pub fn metrics(&self) -> MetricsRow {
        let t = mean_std(&self.rpe.trans);
        let r = mean_std(&self.rpe.rot_deg);
        MetricsRow {
            name: self.name.clone(),
            frames: self.ate_residuals.len(),
            ate_rmse: rms(&self.ate_residuals),
            rpe_trans_mean: t.mean,
            rpe_trans_std: t.std,
            rpe_rot_mean: r.mean,
            rpe_rot_std: r.std,
        }
    }
}

/// One CSV row of sequence-level metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub name: String,
    pub frames: usize,
    pub ate_rmse: f64,
    pub rpe_trans_mean: f64,
    pub rpe_trans_std: f64,
    pub rpe_rot_mean: f64,
    pub rpe_rot_std: f64,
}

/// Pools every frame of every sequence.
pub fn micro_average(evals: &[SequenceEvaluation]) -> MetricsRow {
    let ate: Vec<f64> = evals.iter().flat_map(|e| e.ate_residuals.iter().copied()).collect();
    let trans: Vec<f64> = evals.iter().flat_map(|e| e.rpe.trans.iter().copied()).collect();
    let rot: Vec<f64> = evals.iter().flat_map(|e| e.rpe.rot_deg.iter().copied()).collect();
    let t = mean_std(&trans);
    let r = mean_std(&rot);
    MetricsRow {
        name: "micro_avg".into(),
        frames: ate.len(),
        ate_rmse: if ate.is_empty() { 0.0 } else { rms(&ate) },
        rpe_trans_mean: t.mean,
        rpe_trans_std: t.std,
        rpe_rot_mean: r.mean,
        rpe_rot_std: r.std,
    }
}

/// Averages the sequence-level metrics with equal weight per sequence.
pub fn macro_average(evals: &[SequenceEvaluation]) -> MetricsRow {
    let rows: Vec<MetricsRow> = evals.iter().map(|e| e.metrics()).collect();
    let avg = |f: fn(&MetricsRow) -> f64| mean_std(&rows.iter().map(f).collect::<Vec<_>>()).mean;
    MetricsRow {
        name: "macro_avg".into(),
        frames: rows.iter().map(|r| r.frames).sum(),
        ate_rmse: avg(|r| r.ate_rmse),
        rpe_trans_mean: avg(|r| r.rpe_trans_mean),
        rpe_trans_std: avg(|r| r.rpe_trans_std),
        rpe_rot_mean: avg(|r| r.rpe_rot_mean),
        rpe_rot_std: avg(|r| r.rpe_rot_std),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct FrameRow<'a> {
    sequence: &'a str,
    frame: usize,
    ate_residual: f64,
    rpe_trans: Option<f64>,
    rpe_rot_deg: Option<f64>,
}

/// Per-frame values for plotting; RPE columns are empty past the last gap.
pub fn write_per_frame_csv(path: &Path, evals: &[SequenceEvaluation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for e in evals {
        for (i, a) in e.ate_residuals.iter().enumerate() {
            w.serialize(FrameRow {
                sequence: &e.name,
                frame: i,
                ate_residual: *a,
                rpe_trans: e.rpe.trans.get(i).copied(),
                rpe_rot_deg: e.rpe.rot_deg.get(i).copied(),
            })
            .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{exp_map, TangentPose};
    use nalgebra::{Matrix4, SymmetricEigen, UnitQuaternion, Vector6};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_transform(rng: &mut ChaCha8Rng, s: f64) -> RigidTransform {
        exp_map(&TangentPose::from_vector(&Vector6::from_fn(|_, _| rng.random_range(-s..s)))).unwrap()
    }

    fn random_trajectory(rng: &mut ChaCha8Rng, n: usize) -> Trajectory {
        let mut abs = RigidTransform::identity();
        let mut poses = vec![abs];
        for _ in 1..n {
            abs = abs.compose(&random_transform(rng, 0.3));
            poses.push(abs);
        }
        Trajectory::new((0..n).map(|i| i as f64).collect(), poses).unwrap()
    }

    fn from_positions(p: &[Vector3<f64>]) -> Trajectory {
        Trajectory::new(
            (0..p.len()).map(|i| i as f64).collect(),
            p.iter().map(|t| RigidTransform::from_translation(*t)).collect(),
        )
        .unwrap()
    }

    /// Closed-form absolute orientation via the unit quaternion of the
    /// largest eigenvector of the 4x4 symmetric cross-covariance matrix.
    fn horn_rmse(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> f64 {
        let n = src.len() as f64;
        let cs = src.iter().sum::<Vector3<f64>>() / n;
        let cd = dst.iter().sum::<Vector3<f64>>() / n;
        let mut m = Matrix3::zeros();
        for (a, b) in src.iter().zip(dst) {
            m += (a - cs) * (b - cd).transpose();
        }
        let (sxx, sxy, sxz) = (m[(0, 0)], m[(0, 1)], m[(0, 2)]);
        let (syx, syy, syz) = (m[(1, 0)], m[(1, 1)], m[(1, 2)]);
        let (szx, szy, szz) = (m[(2, 0)], m[(2, 1)], m[(2, 2)]);
        let k = Matrix4::new(
            sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
            syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
            szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
            sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz,
        );
        let eig = SymmetricEigen::new(k);
        let i = eig.eigenvalues.imax();
        let q = eig.eigenvectors.column(i);
        let r = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
        let t = cd - r * cs;
        let sq: f64 = src.iter().zip(dst).map(|(a, b)| (r * a + t - b).norm_squared()).sum();
        (sq / n).sqrt()
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_trajectory(&mut rng, 20);
        assert!(ate_rmse(&t, &t).unwrap() < 1e-12);
        assert_eq!(ate_rmse_with(&t, &t, false).unwrap(), 0.0);
        let r = rpe(&t, &t, 1).unwrap();
        assert!(r.trans.iter().chain(&r.rot_deg).all(|&e| e < 1e-6));
    }

    #[test]
    fn ate_removes_a_global_rigid_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let gt = random_trajectory(&mut rng, 30);
            let est = gt.transformed(&random_transform(&mut rng, 2.0));
            assert!(ate_rmse(&est, &gt).unwrap() < 1e-9);
        }
    }

    #[test]
    fn ate_matches_quaternion_reference_on_line() {
        let gt: Vec<_> = (0..10).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let mut est = gt.clone();
        est[4].y += 0.3;
        let ours = ate_rmse(&from_positions(&est), &from_positions(&gt)).unwrap();
        let reference = horn_rmse(&est, &gt);
        assert!((ours - reference).abs() < 1e-12, "{ours} vs {reference}");
    }

    #[test]
    fn ate_matches_quaternion_reference_on_random_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let gt = random_trajectory(&mut rng, 25);
            let mut est = gt.transformed(&random_transform(&mut rng, 1.0)).positions();
            for p in &mut est {
                *p += Vector3::from_fn(|_, _| rng.random_range(-0.05..0.05));
            }
            let ours = ate_rmse(&from_positions(&est), &gt).unwrap();
            let reference = horn_rmse(&est, &gt.positions());
            assert!((ours - reference).abs() < 1e-12);
        }
    }

    #[test]
    fn rpe_is_invariant_to_independent_global_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gt = random_trajectory(&mut rng, 20);
        let mut est_poses = gt.poses().to_vec();
        for p in &mut est_poses {
            *p = p.compose(&random_transform(&mut rng, 0.01));
        }
        let est = Trajectory::new(gt.stamps().to_vec(), est_poses).unwrap();
        let a = rpe(&est, &gt, 1).unwrap();
        let b = rpe(
            &est.transformed(&random_transform(&mut rng, 1.0)),
            &gt.transformed(&random_transform(&mut rng, 1.0)),
            1,
        )
        .unwrap();
        for (x, y) in a.trans.iter().zip(&b.trans).chain(a.rot_deg.iter().zip(&b.rot_deg)) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn injected_rotation_error_shows_in_one_step() {
        let step = RigidTransform::from_translation(Vector3::new(0.1, 0.0, 0.0));
        let gt_poses = vec![RigidTransform::identity(), step, step.compose(&step)];
        let err = RigidTransform::from_quaternion(
            &UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 1f64.to_radians()),
            Vector3::zeros(),
        );
        let est_poses = vec![
            gt_poses[0],
            gt_poses[1],
            gt_poses[1].compose(&step).compose(&err),
        ];
        let stamps = vec![0.0, 1.0, 2.0];
        let gt = Trajectory::new(stamps.clone(), gt_poses).unwrap();
        let est = Trajectory::new(stamps, est_poses).unwrap();
        let r = rpe(&est, &gt, 1).unwrap();
        assert!(r.rot_deg[0].abs() < 1e-12);
        assert!((r.rot_deg[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rpe_rotation_matches_quaternion_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = random_trajectory(&mut rng, 15);
        let est = random_trajectory(&mut rng, 15);
        let ours = rpe(&est, &gt, 2).unwrap();
        for t in 0..13 {
            let qg = gt.poses()[t].quaternion().inverse() * gt.poses()[t + 2].quaternion();
            let qe = est.poses()[t].quaternion().inverse() * est.poses()[t + 2].quaternion();
            let angle = (qg.inverse() * qe).angle().to_degrees();
            assert!((ours.rot_deg[t] - angle).abs() < 1e-7);
        }
    }

    #[test]
    fn constant_drift_grows_ate_not_rpe() {
        let build = |n: usize| {
            let step = RigidTransform::from_translation(Vector3::new(0.01, 0.0, 0.0));
            let drift = exp_map(&TangentPose::new(Vector3::new(0.0, 0.0005, 0.0), Vector3::new(0.0, 0.0, 0.002)))
                .unwrap();
            let (mut g, mut e) = (RigidTransform::identity(), RigidTransform::identity());
            let (mut gp, mut ep) = (vec![g], vec![e]);
            for _ in 1..n {
                g = g.compose(&step);
                e = e.compose(&step).compose(&drift);
                gp.push(g);
                ep.push(e);
            }
            let s: Vec<f64> = (0..n).map(|i| i as f64).collect();
            (Trajectory::new(s.clone(), ep).unwrap(), Trajectory::new(s, gp).unwrap())
        };
        let (e1, g1) = build(50);
        let (e2, g2) = build(200);
        assert!(ate_rmse(&e2, &g2).unwrap() > 2.0 * ate_rmse(&e1, &g1).unwrap());
        let r1 = mean_std(&rpe(&e1, &g1, 1).unwrap().trans);
        let r2 = mean_std(&rpe(&e2, &g2, 1).unwrap().trans);
        assert!((r1.mean - r2.mean).abs() < 1e-12);
        assert!(r1.std < 1e-12 && r2.std < 1e-12);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_trajectory(&mut rng, 5);
        let b = random_trajectory(&mut rng, 6);
        assert!(matches!(ate_rmse(&a, &b), Err(Error::Alignment(_))));
        let shifted = Trajectory::new((0..5).map(|i| i as f64 + 0.5).collect(), a.poses().to_vec()).unwrap();
        assert!(matches!(rpe(&a, &shifted, 1), Err(Error::Alignment(_))));
        assert!(Trajectory::new(vec![0.0, 0.0], a.poses()[..2].to_vec()).is_err());
    }

    #[test]
    fn no_align_keeps_global_offset() {
        let gt = from_positions(&[Vector3::zeros(), Vector3::x(), Vector3::new(2.0, 0.0, 0.0)]);
        let est = gt.transformed(&RigidTransform::from_translation(Vector3::new(0.0, 0.5, 0.0)));
        assert!((ate_rmse_with(&est, &gt, false).unwrap() - 0.5).abs() < 1e-15);
        assert!(ate_rmse(&est, &gt).unwrap() < 1e-12);
    }

    #[test]
    fn micro_and_macro_aggregation() {
        let a = SequenceEvaluation {
            name: "a".into(),
            ate_residuals: vec![1.0, 1.0],
            rpe: RpeSeries {
                trans: vec![1.0],
                rot_deg: vec![2.0],
            },
        };
        let b = SequenceEvaluation {
            name: "b".into(),
            ate_residuals: vec![3.0; 4],
            rpe: RpeSeries {
                trans: vec![3.0; 3],
                rot_deg: vec![0.0; 3],
            },
        };
        let mac = macro_average(&[a.clone(), b.clone()]);
        assert!((mac.ate_rmse - 2.0).abs() < 1e-15);
        assert!((mac.rpe_trans_mean - 2.0).abs() < 1e-15);
        let mic = micro_average(&[a, b]);
        assert!((mic.ate_rmse - ((2.0 + 36.0) / 6.0f64).sqrt()).abs() < 1e-15);
        assert!((mic.rpe_trans_mean - 2.5).abs() < 1e-15);
        assert!((mic.rpe_rot_mean - 0.5).abs() < 1e-15);
    }
}
