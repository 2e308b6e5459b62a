//! Raster containers, bilinear sampling and the valid pixel set.
//!
//! All rasters are row-major with `(x, y) = (column, row)` and the origin at
//! the top-left pixel center.

use std::ops::{Add, Mul, Sub};

use nalgebra::{Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::camera::{StereoRig, MIN_DEPTH};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Raster<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "raster data has {} elements, expected {width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape<U>(&self, other: &Raster<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        let i = self.index(x, y);
        self.data[i] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

/// Depth relative to the left camera, normalized by `d_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    values: Raster<f64>,
    valid: Raster<bool>,
}

impl DepthMap {
    pub fn new(values: Raster<f64>, valid: Raster<bool>) -> Result<Self> {
        if !values.same_shape(&valid) {
            return Err(Error::InvalidArgument("depth and validity shapes differ".into()));
        }
        let mut valid = valid;
        for (v, ok) in values.as_slice().iter().zip(valid.as_mut_slice()) {
            if !(v.is_finite() && *v > 0.0) {
                *ok = false;
            }
        }
        Ok(Self { values, valid })
    }

    /// Every finite positive entry is valid.
    pub fn from_values(values: Raster<f64>) -> Self {
        let valid = values.map(|v| v.is_finite() && *v > 0.0);
        Self { values, valid }
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = self.values.index(x, y);
        self.valid.as_slice()[i].then(|| self.values.as_slice()[i])
    }

    pub fn values(&self) -> &Raster<f64> {
        &self.values
    }

    pub fn valid(&self) -> &Raster<bool> {
        &self.valid
    }

    pub fn sample(&self, pos: Vector2<f64>) -> Option<f64> {
        bilinear_sample(&self.values, Some(&self.valid), pos)
    }
}

/// A two-channel displacement raster with per-pixel validity.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    data: Raster<Vector2<f64>>,
    valid: Raster<bool>,
}

impl DisplacementField {
    pub fn new(data: Raster<Vector2<f64>>, valid: Raster<bool>) -> Result<Self> {
        if !data.same_shape(&valid) {
            return Err(Error::InvalidArgument("field and validity shapes differ".into()));
        }
        let mut valid = valid;
        for (v, ok) in data.as_slice().iter().zip(valid.as_mut_slice()) {
            if !(v.x.is_finite() && v.y.is_finite()) {
                *ok = false;
            }
        }
        Ok(Self { data, valid })
    }

    pub fn from_data(data: Raster<Vector2<f64>>) -> Self {
        let valid = data.map(|v| v.x.is_finite() && v.y.is_finite());
        Self { data, valid }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::from_data(Raster::filled(width, height, Vector2::zeros()))
    }

    pub fn width(&self) -> usize {
        self.data.width()
    }

    pub fn height(&self) -> usize {
        self.data.height()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<Vector2<f64>> {
        let i = self.data.index(x, y);
        self.valid.as_slice()[i].then(|| self.data.as_slice()[i])
    }

    pub fn data(&self) -> &Raster<Vector2<f64>> {
        &self.data
    }

    pub fn valid(&self) -> &Raster<bool> {
        &self.valid
    }
}

/// Optical flow from frame `t` to frame `t - 1`: pixel `x` of frame `t`
/// appears at `x + F(x)` in frame `t - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField(pub DisplacementField);

/// Left-to-right stereo correspondence. The horizontal channel holds the
/// disparity `d`, so the right-image column is `x - d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallaxFlow(pub DisplacementField);

impl std::ops::Deref for FlowField {
    type Target = DisplacementField;
    fn deref(&self) -> &DisplacementField {
        &self.0
    }
}

impl std::ops::Deref for ParallaxFlow {
    type Target = DisplacementField;
    fn deref(&self) -> &DisplacementField {
        &self.0
    }
}

impl ParallaxFlow {
    pub fn disparity(&self, x: usize, y: usize) -> Option<f64> {
        self.get(x, y).map(|d| d.x)
    }
}

/// Per-pixel residual weight in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap(Raster<f64>);

impl WeightMap {
    pub fn new(values: Raster<f64>) -> Result<Self> {
        if let Some(bad) = values.as_slice().iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::InvalidArgument(format!(
                "weight {bad} outside [0, 1]"
            )));
        }
        Ok(Self(values))
    }

    pub fn uniform(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(Raster::filled(width, height, value))
    }

    pub fn raster(&self) -> &Raster<f64> {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }
}

/// Excluded pixels (`true` = excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMask(Raster<bool>);

impl PixelMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self(Raster::filled(width, height, false))
    }

    pub fn from_raster(raster: Raster<bool>) -> Self {
        Self(raster)
    }

    pub fn raster(&self) -> &Raster<bool> {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    #[inline]
    pub fn is_excluded(&self, x: usize, y: usize) -> bool {
        *self.0.at(x, y)
    }

    pub fn count(&self) -> usize {
        self.0.as_slice().iter().filter(|m| **m).count()
    }

    pub fn union(&self, other: &PixelMask) -> Result<PixelMask> {
        if !self.0.same_shape(&other.0) {
            return Err(Error::InvalidArgument("mask shapes differ".into()));
        }
        let data = self
            .0
            .as_slice()
            .iter()
            .zip(other.0.as_slice())
            .map(|(a, b)| *a || *b)
            .collect();
        Ok(PixelMask(Raster::from_vec(self.width(), self.height(), data)?))
    }

    /// Excludes every pixel where `valid` is false.
    pub fn exclude_invalid(&mut self, valid: &Raster<bool>) {
        for (m, ok) in self.0.as_mut_slice().iter_mut().zip(valid.as_slice()) {
            *m |= !*ok;
        }
    }

    /// Square-structuring-element dilation with the given radius.
    pub fn dilate(&self, radius: usize) -> PixelMask {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = (self.width(), self.height());
        let src = self.0.as_slice();
        let mut rows = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let lo = x.saturating_sub(radius);
                let hi = (x + radius).min(w - 1);
                rows[y * w + x] = src[y * w + lo..=y * w + hi].iter().any(|m| *m);
            }
        }
        let mut out = vec![false; w * h];
        for y in 0..h {
            let lo = y.saturating_sub(radius);
            let hi = (y + radius).min(h - 1);
            for x in 0..w {
                out[y * w + x] = (lo..=hi).any(|yy| rows[yy * w + x]);
            }
        }
        PixelMask(Raster::from_vec(w, h, out).expect("shape preserved"))
    }
}

/// Three-channel intensity image with values in `[0, 1]`.
pub type Image = Raster<Vector3<f64>>;

/// Specularity detection settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    pub specular_threshold: f64,
    pub dilate_px: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            specular_threshold: 0.98,
            dilate_px: 2,
        }
    }
}

/// Marks pixels whose brightest channel reaches `threshold_frac`, then dilates.
pub fn specularity_mask(image: &Image, threshold_frac: f64, dilate_px: usize) -> PixelMask {
    let hits = image.map(|c| c.max() >= threshold_frac);
    PixelMask(hits).dilate(dilate_px)
}

/// Bilinear interpolation of `raster` at a continuous position.
///
/// Returns `None` outside `[0, W-1] x [0, H-1]`, or when a neighbor with
/// nonzero interpolation weight is invalid. Lattice positions return the
/// stored value exactly and constant rasters interpolate exactly.
pub fn bilinear_sample<T>(raster: &Raster<T>, valid: Option<&Raster<bool>>, pos: Vector2<f64>) -> Option<T>
where
    T: Copy + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>,
{
    let (w, h) = (raster.width(), raster.height());
    if w == 0 || h == 0 {
        return None;
    }
    let max_x = (w - 1) as f64;
    let max_y = (h - 1) as f64;
    if !(pos.x >= 0.0 && pos.x <= max_x && pos.y >= 0.0 && pos.y <= max_y) {
        return None;
    }
    let x0 = (pos.x.floor() as usize).min(w.saturating_sub(2));
    let y0 = (pos.y.floor() as usize).min(h.saturating_sub(2));
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let tx = pos.x - x0 as f64;
    let ty = pos.y - y0 as f64;

    let fetch = |x: usize, y: usize| -> Option<T> {
        let i = y * w + x;
        match valid {
            Some(v) if !v.as_slice()[i] => None,
            _ => Some(raster.as_slice()[i]),
        }
    };
    let row = |y: usize| -> Option<T> {
        if tx == 0.0 {
            fetch(x0, y)
        } else if tx == 1.0 {
            fetch(x1, y)
        } else {
            let a = fetch(x0, y)?;
            let b = fetch(x1, y)?;
            Some(a + (b - a) * tx)
        }
    };
    if ty == 0.0 {
        row(y0)
    } else if ty == 1.0 {
        row(y1)
    } else {
        let a = row(y0)?;
        let b = row(y1)?;
        Some(a + (b - a) * ty)
    }
}

/// Everything one relative-pose solve consumes.
#[derive(Debug, Clone)]
pub struct FramePair {
    pub depth_t: DepthMap,
    pub depth_prev: DepthMap,
    pub flow: FlowField,
    pub parallax_t: ParallaxFlow,
    pub parallax_prev: ParallaxFlow,
    pub image_t: Option<Image>,
    pub image_prev: Option<Image>,
    /// Union of all exclusions, including invalid depth in either frame.
    pub mask: PixelMask,
    pub rig: StereoRig,
}

impl FramePair {
    /// Checks shapes and folds invalid depth and flow pixels into `mask`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        depth_t: DepthMap,
        depth_prev: DepthMap,
        flow: FlowField,
        parallax_t: ParallaxFlow,
        parallax_prev: ParallaxFlow,
        image_t: Option<Image>,
        image_prev: Option<Image>,
        mask: PixelMask,
        rig: StereoRig,
    ) -> Result<Self> {
        rig.validate()?;
        let (w, h) = (rig.width, rig.height);
        let shapes = [
            ("depth_t", depth_t.width(), depth_t.height()),
            ("depth_prev", depth_prev.width(), depth_prev.height()),
            ("flow", flow.width(), flow.height()),
            ("parallax_t", parallax_t.width(), parallax_t.height()),
            ("parallax_prev", parallax_prev.width(), parallax_prev.height()),
            ("mask", mask.width(), mask.height()),
        ];
        for (name, sw, sh) in shapes {
            if (sw, sh) != (w, h) {
                return Err(Error::InvalidArgument(format!(
                    "{name} is {sw}x{sh}, rig expects {w}x{h}"
                )));
            }
        }
        for (name, img) in [("image_t", &image_t), ("image_prev", &image_prev)] {
            if let Some(img) = img {
                if (img.width(), img.height()) != (w, h) {
                    return Err(Error::InvalidArgument(format!(
                        "{name} is {}x{}, rig expects {w}x{h}",
                        img.width(),
                        img.height()
                    )));
                }
            }
        }
        let mut mask = mask;
        mask.exclude_invalid(depth_t.valid());
        mask.exclude_invalid(depth_prev.valid());
        mask.exclude_invalid(flow.valid());
        Ok(Self {
            depth_t,
            depth_prev,
            flow,
            parallax_t,
            parallax_prev,
            image_t,
            image_prev,
            mask,
            rig,
        })
    }

    pub fn width(&self) -> usize {
        self.rig.width
    }

    pub fn height(&self) -> usize {
        self.rig.height
    }

    /// Adds the specularity mask of the frame-`t` image, if one is present.
    pub fn with_specularity_mask(mut self, cfg: &MaskConfig) -> Self {
        if let Some(img) = &self.image_t {
            let spec = specularity_mask(img, cfg.specular_threshold, cfg.dilate_px);
            self.mask = self.mask.union(&spec).expect("shapes checked at construction");
        }
        self
    }

    /// Flow target `x + F(x)` of pixel `(x, y)`.
    #[inline]
    pub fn flow_target(&self, x: usize, y: usize) -> Option<Vector2<f64>> {
        self.flow
            .get(x, y)
            .map(|f| Vector2::new(x as f64 + f.x, y as f64 + f.y))
    }
}

/// `pi_3D(D_{t-1}, x + F_t(x))`, sampling the previous depth bilinearly.
pub fn warp_backproject(pair: &FramePair, x: usize, y: usize) -> Option<Vector4<f64>> {
    let target = pair.flow_target(x, y)?;
    let d = pair.depth_prev.sample(target)?;
    Some(
        pair.rig
            .intrinsics
            .backproject_point(target.x, target.y, d)
            .push(1.0),
    )
}

/// Row-major linear indices of the pixels contributing to the objective.
///
/// Excludes masked pixels, invalid depth, flow targets that leave the image
/// or land on invalid previous depth, and points behind the camera.
pub fn build_omega(pair: &FramePair) -> Result<Vec<usize>> {
    let (w, h) = (pair.width(), pair.height());
    let mut omega = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if pair.mask.is_excluded(x, y) {
                continue;
            }
            let Some(d) = pair.depth_t.get(x, y) else {
                continue;
            };
            if d <= MIN_DEPTH {
                continue;
            }
            if warp_backproject(pair, x, y).is_none() {
                continue;
            }
            omega.push(y * w + x);
        }
    }
    if omega.is_empty() {
        return Err(Error::DegenerateFrame("no valid pixels".into()));
    }
    Ok(omega)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::PinholeIntrinsics;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn flat_pair(w: usize, h: usize, depth: f64) -> FramePair {
        let rig = StereoRig {
            intrinsics: PinholeIntrinsics::new(20.0, 20.0, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0),
            baseline: 0.005,
            d_max: 0.2,
            width: w,
            height: h,
        };
        let d = DepthMap::from_values(Raster::filled(w, h, depth));
        FramePair::new(
            d.clone(),
            d,
            FlowField(DisplacementField::zeros(w, h)),
            ParallaxFlow(DisplacementField::zeros(w, h)),
            ParallaxFlow(DisplacementField::zeros(w, h)),
            None,
            None,
            PixelMask::empty(w, h),
            rig,
        )
        .unwrap()
    }

    #[test]
    fn lattice_sampling_is_exact() {
        let r = Raster::from_fn(5, 4, |x, y| (x * 7 + y) as f64 * 0.37);
        for y in 0..4 {
            for x in 0..5 {
                let s = bilinear_sample(&r, None, Vector2::new(x as f64, y as f64)).unwrap();
                assert_eq!(s, *r.at(x, y));
            }
        }
    }

    #[test]
    fn midpoint_is_average() {
        let r = Raster::from_vec(2, 1, vec![2.0, 4.0]).unwrap();
        assert_eq!(bilinear_sample(&r, None, Vector2::new(0.5, 0.0)), Some(3.0));
        let c = Raster::from_vec(1, 2, vec![2.0, 4.0]).unwrap();
        assert_eq!(bilinear_sample(&c, None, Vector2::new(0.0, 0.5)), Some(3.0));
    }

    #[test]
    fn constant_raster_interpolates_exactly() {
        let r = Raster::filled(7, 6, 0.123456789);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let p = Vector2::new(rng.random_range(0.0..6.0), rng.random_range(0.0..5.0));
            assert_eq!(bilinear_sample(&r, None, p), Some(0.123456789));
        }
    }

    #[test]
    fn sampling_is_linear_along_an_axis() {
        let r = Raster::from_fn(4, 4, |x, y| 3.0 * x as f64 - 2.0 * y as f64 + 1.0);
        let s = bilinear_sample(&r, None, Vector2::new(1.25, 2.75)).unwrap();
        assert!((s - (3.0 * 1.25 - 2.0 * 2.75 + 1.0)).abs() < 1e-14);
    }

    #[test]
    fn sampling_outside_or_near_invalid_fails() {
        let r = Raster::filled(3, 3, 1.0);
        assert_eq!(bilinear_sample(&r, None, Vector2::new(-0.01, 0.0)), None);
        assert_eq!(bilinear_sample(&r, None, Vector2::new(2.0001, 1.0)), None);
        assert_eq!(bilinear_sample(&r, None, Vector2::new(f64::NAN, 1.0)), None);
        assert_eq!(bilinear_sample(&r, None, Vector2::new(2.0, 2.0)), Some(1.0));
        let mut valid = Raster::filled(3, 3, true);
        valid.set(1, 1, false);
        assert_eq!(bilinear_sample(&r, Some(&valid), Vector2::new(0.5, 0.5)), None);
        // The invalid neighbor carries zero weight on the lattice line y = 0.
        assert_eq!(bilinear_sample(&r, Some(&valid), Vector2::new(0.5, 0.0)), Some(1.0));
    }

    #[test]
    fn vector_rasters_interpolate_per_channel() {
        let r = Raster::from_vec(2, 1, vec![Vector2::new(0.0, 2.0), Vector2::new(1.0, 4.0)]).unwrap();
        let s = bilinear_sample(&r, None, Vector2::new(0.25, 0.0)).unwrap();
        assert_eq!(s, Vector2::new(0.25, 2.5));
    }

    #[test]
    fn warp_with_zero_flow_is_plain_backprojection() {
        let pair = flat_pair(6, 5, 0.5);
        let p = warp_backproject(&pair, 2, 3).unwrap();
        let q = crate::camera::backproject(&pair.rig.intrinsics, &pair.depth_prev, 2, 3).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn warp_out_of_bounds_is_invalid() {
        let mut pair = flat_pair(6, 5, 0.5);
        let mut flow = Raster::filled(6, 5, Vector2::zeros());
        flow.set(5, 0, Vector2::new(0.5, 0.0));
        pair.flow = FlowField(DisplacementField::from_data(flow));
        assert!(warp_backproject(&pair, 5, 0).is_none());
        assert!(warp_backproject(&pair, 4, 0).is_some());
    }

    #[test]
    fn specularity_examples() {
        let black = Raster::filled(6, 6, Vector3::zeros());
        assert_eq!(specularity_mask(&black, 0.98, 2).count(), 0);
        let grey = Raster::filled(6, 6, Vector3::new(0.5, 0.5, 0.5));
        assert_eq!(specularity_mask(&grey, 0.98, 2).count(), 0);
        let mut spot = black.clone();
        spot.set(3, 2, Vector3::new(1.0, 0.2, 0.2));
        let m = specularity_mask(&spot, 0.98, 1);
        assert_eq!(m.count(), 9);
        for y in 1..=3 {
            for x in 2..=4 {
                assert!(m.is_excluded(x, y));
            }
        }
    }

    #[test]
    fn omega_covers_clean_frame() {
        let pair = flat_pair(5, 4, 0.5);
        let omega = build_omega(&pair).unwrap();
        assert_eq!(omega, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn fully_masked_frame_is_degenerate() {
        let mut pair = flat_pair(4, 4, 0.5);
        pair.mask = PixelMask::from_raster(Raster::filled(4, 4, true));
        assert!(matches!(build_omega(&pair), Err(Error::DegenerateFrame(_))));
    }

    #[test]
    fn checkerboard_mask_keeps_half_in_row_major_order() {
        let mut pair = flat_pair(4, 4, 0.5);
        pair.mask = PixelMask::from_raster(Raster::from_fn(4, 4, |x, y| (x + y) % 2 == 1));
        let omega = build_omega(&pair).unwrap();
        assert_eq!(omega, vec![0, 2, 5, 7, 8, 10, 13, 15]);
    }

    #[test]
    fn omega_is_independent_of_exclusion_order() {
        let base = flat_pair(6, 6, 0.5);
        let mut a = base.clone();
        let mut b = base.clone();
        let m1 = PixelMask::from_raster(Raster::from_fn(6, 6, |x, _| x == 1));
        let m2 = PixelMask::from_raster(Raster::from_fn(6, 6, |_, y| y == 4));
        a.mask = a.mask.union(&m1).unwrap().union(&m2).unwrap();
        b.mask = b.mask.union(&m2).unwrap().union(&m1).unwrap();
        assert_eq!(build_omega(&a).unwrap(), build_omega(&b).unwrap());
    }

    #[test]
    fn frame_pair_folds_invalid_depth_into_mask() {
        let pair = flat_pair(4, 4, 0.5);
        let mut valid = Raster::filled(4, 4, true);
        valid.set(0, 0, false);
        let dprev = DepthMap::new(Raster::filled(4, 4, 0.5), valid).unwrap();
        let p = FramePair::new(
            pair.depth_t.clone(),
            dprev,
            pair.flow.clone(),
            pair.parallax_t.clone(),
            pair.parallax_prev.clone(),
            None,
            None,
            PixelMask::empty(4, 4),
            pair.rig,
        )
        .unwrap();
        assert!(p.mask.is_excluded(0, 0));
        assert_eq!(p.mask.count(), 1);
    }

    #[test]
    fn weight_map_rejects_out_of_range() {
        assert!(WeightMap::uniform(2, 2, 1.5).is_err());
        assert!(WeightMap::uniform(2, 2, -0.1).is_err());
        assert!(WeightMap::uniform(2, 2, 0.3).is_ok());
    }
}
