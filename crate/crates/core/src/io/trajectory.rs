//! Text trajectories, one `stamp tx ty tz qx qy qz qw` line per pose.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::lie::RigidTransform;
use crate::trajeval::Trajectory;

/// Largest accepted deviation of a quaternion norm from one.
pub const QUATERNION_TOLERANCE: f64 = 1e-4;

/// Shortest decimal that parses back to the same value; negative zero is
/// printed as `0`.
fn num(v: f64) -> f64 {
    v + 0.0
}

pub fn format_trajectory(traj: &Trajectory) -> String {
    let mut out = String::new();
    for (stamp, pose) in traj.stamps().iter().zip(traj.poses()) {
        let t = pose.translation();
        let q = pose.quaternion();
        writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            num(*stamp),
            num(t.x),
            num(t.y),
            num(t.z),
            num(q.i),
            num(q.j),
            num(q.k),
            num(q.w)
        )
        .expect("writing to a string");
    }
    out
}

/// Parses trajectory text. Blank lines and lines starting with `#` are
/// skipped; everything else must hold exactly eight finite numbers.
pub fn parse_trajectory(text: &str, path: &Path) -> Result<Trajectory> {
    let mut stamps = Vec::new();
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::format(path, format!("line {lineno}: {msg}"));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", fields.len())));
        }
        let mut v = [0.0; 8];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| err(format!("'{f}' is not a finite number")))?;
        }
        let q = Quaternion::new(v[7], v[4], v[5], v[6]);
        let norm = q.norm();
        if (norm - 1.0).abs() > QUATERNION_TOLERANCE {
            return Err(err(format!("quaternion norm {norm} is not 1")));
        }
        if let Some(&last) = stamps.last() {
            if !(v[0] > last) {
                return Err(err(format!("stamp {} does not follow {last}", v[0])));
            }
        }
        stamps.push(v[0]);
        poses.push(RigidTransform::from_quaternion(
            &UnitQuaternion::from_quaternion(q),
            Vector3::new(v[1], v[2], v[3]),
        ));
    }
    Trajectory::new(stamps, poses).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory(&text, path)
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    fs::write(path, format_trajectory(traj)).map_err(|e| Error::io(path, e))
}
