//! Rectified pinhole stereo model.
//!
//! Pixel centers sit at integer coordinates: pixel `(0, 0)` is centered at
//! `(0.0, 0.0)`. Depth maps handed to the geometry are normalized by the rig's
//! maximum expected depth `d_max`, so back-projected points live in
//! normalized scene units.

use nalgebra::{Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{DepthMap, Raster};

/// Points closer than this to the image plane cannot be projected.
pub const MIN_DEPTH: f64 = 1e-6;

/// Disparities at or below this are treated as unmeasured.
pub const DEFAULT_MIN_DISPARITY: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinholeIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl PinholeIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy }
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < width as f64 && self.cy >= 0.0 && self.cy < height as f64)
        {
            return Err(Error::InvalidArgument(format!(
                "principal point ({}, {}) outside {width}x{height} raster",
                self.cx, self.cy
            )));
        }
        Ok(())
    }

    /// Projection of a Euclidean point; `None` when behind the camera.
    #[inline]
    pub fn project_point(&self, x: &Vector3<f64>) -> Option<Vector2<f64>> {
        if x.z <= MIN_DEPTH {
            return None;
        }
        let inv_z = 1.0 / x.z;
        Some(Vector2::new(
            self.fx * x.x * inv_z + self.cx,
            self.fy * x.y * inv_z + self.cy,
        ))
    }

    /// The point at depth `depth` along the ray through pixel `(u, v)`.
    #[inline]
    pub fn backproject_point(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new(
            depth * (u - self.cx) / self.fx,
            depth * (v - self.cy) / self.fy,
            depth,
        )
    }

    /// Ray direction with unit z component.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        self.backproject_point(u, v, 1.0)
    }

    /// Scales focal lengths and principal point for a resampled raster.
    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
        }
    }
}

/// Rectified stereo pair sharing one set of intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StereoRig {
    pub intrinsics: PinholeIntrinsics,
    /// Distance between the optical centers, scene units.
    pub baseline: f64,
    /// Maximum expected depth, scene units.
    pub d_max: f64,
    pub width: usize,
    pub height: usize,
}

impl StereoRig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("empty raster size".into()));
        }
        self.intrinsics.validate(self.width, self.height)?;
        if !(self.baseline > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "baseline must be positive, got {}",
                self.baseline
            )));
        }
        if !(self.d_max > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "d_max must be positive, got {}",
                self.d_max
            )));
        }
        Ok(())
    }

    /// Rig for the same optics sampled at a different raster size.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            intrinsics: self.intrinsics.scaled(sx, sy),
            width,
            height,
            ..*self
        }
    }
}

/// `pi_2D` on a homogeneous point. Fails behind the camera.
pub fn project(intr: &PinholeIntrinsics, x: &Vector4<f64>) -> Result<Vector2<f64>> {
    let w = if x.w == 0.0 { 1.0 } else { x.w };
    let e = Vector3::new(x.x / w, x.y / w, x.z / w);
    intr.project_point(&e)
        .ok_or(Error::BehindCamera { z: e.z })
}

/// `pi_3D`: homogeneous back-projection of pixel `(x, y)` with its depth.
pub fn backproject(
    intr: &PinholeIntrinsics,
    depth: &DepthMap,
    x: usize,
    y: usize,
) -> Result<Vector4<f64>> {
    if x >= depth.width() || y >= depth.height() {
        return Err(Error::InvalidPixel {
            x,
            y,
            reason: "out of bounds",
        });
    }
    let d = depth.get(x, y).ok_or(Error::InvalidPixel {
        x,
        y,
        reason: "invalid depth",
    })?;
    Ok(intr.backproject_point(x as f64, y as f64, d).push(1.0))
}

/// `fx * baseline / disparity`, or `None` for disparities at or below
/// `min_disparity`.
pub fn disparity_to_depth(rig: &StereoRig, disparity: f64, min_disparity: f64) -> Option<f64> {
    if disparity.is_finite() && disparity > min_disparity {
        Some(rig.intrinsics.fx * rig.baseline / disparity)
    } else {
        None
    }
}

pub fn depth_to_disparity(rig: &StereoRig, depth: f64) -> Option<f64> {
    if depth.is_finite() && depth > 0.0 {
        Some(rig.intrinsics.fx * rig.baseline / depth)
    } else {
        None
    }
}

/// Divides raw scene-unit depths by `d_max`. Depths outside `(0, d_max]`
/// (or already invalid) become invalid pixels; nothing is clamped.
pub fn normalize_depth(rig: &StereoRig, raw: &Raster<f64>, valid: Option<&Raster<bool>>) -> DepthMap {
    let inv = 1.0 / rig.d_max;
    let mut values = Raster::filled(raw.width(), raw.height(), 0.0);
    let mut mask = Raster::filled(raw.width(), raw.height(), false);
    for i in 0..raw.len() {
        let d = raw.as_slice()[i];
        let ok = valid.is_none_or(|v| v.as_slice()[i]) && d.is_finite() && d > 0.0 && d <= rig.d_max;
        if ok {
            values.as_mut_slice()[i] = d * inv;
            mask.as_mut_slice()[i] = true;
        }
    }
    DepthMap::new(values, mask).expect("shapes match by construction")
}
