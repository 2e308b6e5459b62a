//! Synthetic stereo sequences with exact depth, flow, parallax and poses.
//!
//! The world frame is camera 0 in scene units. Every pixel ray of frame `t`
//! is intersected with the deformed surface in material coordinates, so the
//! flow of a pixel is the projection into frame `t - 1` of the same material
//! point at time `t - 1`.

mod presets;
mod surface;
mod texture;

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Vector2, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use presets::{scenario_preset, PresetName, PRESET_FRAMES, PRESET_HEIGHT, PRESET_WIDTH};
pub use surface::{Deformation, SpatialMask, Surface};
pub use texture::TextureSpec;

use crate::camera::{normalize_depth, StereoRig, MIN_DEPTH};
use crate::error::{Error, Result};
use crate::fields::{
    build_omega, warp_backproject, DepthMap, DisplacementField, FlowField, FramePair, Image, ParallaxFlow, PixelMask, Raster,
};
use crate::lie::{exp_map, log_map, RigidTransform, TangentPose};
use crate::trajeval::Trajectory;
use surface::{material_position, smoothstep, BaseSurface};
use texture::{shade, ValueNoise};

/// Threshold on material motion between frames, normalized units, above
/// which a pixel is labeled as deformed.
pub const LABEL_THRESHOLD: f64 = 1e-12;

/// World-from-camera pose `exp(t * velocity + sin(2 pi t / period) * oscillation)`
/// with tangents ordered translation first, scene units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraPath {
    pub velocity: [f64; 6],
    pub oscillation: [f64; 6],
    pub period_frames: f64,
}

impl Default for CameraPath {
    fn default() -> Self {
        Self {
            velocity: [0.0; 6],
            oscillation: [0.0; 6],
            period_frames: 1.0,
        }
    }
}

impl CameraPath {
    pub fn is_static(&self) -> bool {
        self.velocity.iter().chain(&self.oscillation).all(|&c| c == 0.0)
    }

    pub fn pose(&self, t: f64) -> Result<RigidTransform> {
        let s = (TAU * t / self.period_frames).sin();
        let xi = Vector6::from_column_slice(&self.velocity) * t + Vector6::from_column_slice(&self.oscillation) * s;
        exp_map(&TangentPose::from_vector(&xi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Standard deviation of additive depth noise, scene units.
    pub depth_sigma: f64,
    /// Standard deviation of additive flow noise per component, pixels.
    pub flow_sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub surface: Surface,
    pub rig: StereoRig,
    #[serde(default)]
    pub camera: CameraPath,
    #[serde(default)]
    pub deformation: Vec<Deformation>,
    #[serde(default)]
    pub texture: TextureSpec,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    /// Static instrument polygon in pixel coordinates; empty for none.
    #[serde(default)]
    pub tool_mask: Vec<[f64; 2]>,
    pub n_frames: usize,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.rig
            .validate()
            .map_err(|e| Error::SpecInvalid(e.to_string()))?;
        self.surface.validate()?;
        for d in &self.deformation {
            d.validate()?;
        }
        if self.n_frames == 0 {
            return Err(Error::SpecInvalid("n_frames must be positive".into()));
        }
        if !(self.camera.period_frames > 0.0) {
            return Err(Error::SpecInvalid("camera period must be positive".into()));
        }
        if let Some(n) = &self.noise {
            if !(n.depth_sigma >= 0.0 && n.flow_sigma >= 0.0) {
                return Err(Error::SpecInvalid("noise sigmas must be non-negative".into()));
            }
        }
        Ok(())
    }

    /// Same scene with deformation and noise removed.
    pub fn without_deformation(&self) -> Self {
        Self {
            deformation: Vec::new(),
            noise: None,
            ..self.clone()
        }
    }

    pub fn with_resolution(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.rig.width as f64;
        let sy = height as f64 / self.rig.height as f64;
        Self {
            rig: self.rig.resized(width, height),
            tool_mask: self.tool_mask.iter().map(|p| [(p[0] + 0.5) * sx - 0.5, (p[1] + 0.5) * sy - 0.5]).collect(),
            ..self.clone()
        }
    }

    pub fn with_frames(&self, n_frames: usize) -> Self {
        Self {
            n_frames,
            ..self.clone()
        }
    }
}

/// Rendered outputs of one frame. Flow and depth are in pixels and scene
/// units; frame 0 has an all-invalid flow field.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFrame {
    pub image: Image,
    pub depth: Raster<f64>,
    pub depth_valid: Raster<bool>,
    pub flow: FlowField,
    pub parallax: ParallaxFlow,
    pub mask: PixelMask,
    /// Bit set of deformations that moved the pixel's material point since
    /// the previous frame; bit values come from `Deformation::label_bit`.
    pub label: Raster<u8>,
}

impl SyntheticFrame {
    pub fn normalized_depth(&self, rig: &StereoRig) -> DepthMap {
        normalize_depth(rig, &self.depth, Some(&self.depth_valid))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    pub rig: StereoRig,
    pub frames: Vec<SyntheticFrame>,
    /// Relative poses `p_t`, `t >= 1`, translation in normalized units.
    pub gt_relative: Vec<TangentPose>,
    /// Absolute world-from-camera poses in scene units.
    pub gt_trajectory: Trajectory,
}

impl SyntheticSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Pair `(t, t - 1)` for `t >= 1`.
    pub fn frame_pair(&self, t: usize) -> Result<FramePair> {
        if t == 0 || t >= self.frames.len() {
            return Err(Error::InvalidArgument(format!(
                "frame pair index {t} outside 1..{}",
                self.frames.len()
            )));
        }
        let (cur, prev) = (&self.frames[t], &self.frames[t - 1]);
        FramePair::new(
            cur.normalized_depth(&self.rig),
            prev.normalized_depth(&self.rig),
            cur.flow.clone(),
            cur.parallax.clone(),
            prev.parallax.clone(),
            Some(cur.image.clone()),
            Some(prev.image.clone()),
            cur.mask.clone(),
            self.rig,
        )
    }

    /// Ground-truth relative pose of pair `t`.
    pub fn gt_pose(&self, t: usize) -> TangentPose {
        self.gt_relative[t - 1]
    }
}

struct Scene<'a> {
    spec: &'a SceneSpec,
    base: BaseSurface,
    noise: ValueNoise,
}

#[derive(Clone, Copy)]
struct Hit {
    a: f64,
    b: f64,
    lambda: f64,
}

impl Scene<'_> {
    fn position(&self, t: f64, a: f64, b: f64) -> surface::Position {
        material_position(&self.base, &self.spec.deformation, t, a, b)
    }

    fn intersect(
        &self,
        t: f64,
        origin: &Vector3<f64>,
        dir: &Vector3<f64>,
        guess: Hit,
    ) -> Option<(Hit, surface::Position)> {
        let mut h = guess;
        for _ in 0..50 {
            let p = self.position(t, h.a, h.b);
            let f = p.x - origin - dir * h.lambda;
            let j = Matrix3::from_columns(&[p.da, p.db, -dir]);
            let step = j.lu().solve(&f)?;
            h.a -= step.x;
            h.b -= step.y;
            h.lambda -= step.z;
            if !(h.a.is_finite() && h.b.is_finite() && h.lambda.is_finite()) {
                return None;
            }
            if step.amax() <= 1e-7 * (1.0 + h.lambda.abs()) {
                // The remaining error is quadratic in the last step.
                let mut p = p;
                p.x -= p.da * step.x + p.db * step.y;
                return (h.lambda > 0.0).then_some((h, p));
            }
        }
        None
    }

    fn initial_guess(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Hit {
        let lambda = (self.spec.surface.depth() - origin.z) / dir.z;
        let p = origin + dir * lambda;
        Hit { a: p.x, b: p.y, lambda }
    }
}

fn label_bits(scene: &Scene, t: f64, a: f64, b: f64, moved: f64) -> u8 {
    let d_max = scene.spec.rig.d_max;
    let total = moved / d_max;
    if total <= LABEL_THRESHOLD {
        return 0;
    }
    let mut bits = 0u8;
    let mut best = (0.0, 0u8);
    for d in &scene.spec.deformation {
        let one = std::slice::from_ref(d);
        let moved = (material_position(&scene.base, one, t, a, b).x - material_position(&scene.base, one, t - 1.0, a, b).x)
            .norm()
            / d_max;
        if moved > 0.5 * LABEL_THRESHOLD {
            bits |= d.label_bit();
        }
        if moved > best.0 {
            best = (moved, d.label_bit());
        }
    }
    if bits == 0 {
        best.1
    } else {
        bits
    }
}

fn point_in_polygon(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = (poly[i][0], poly[i][1]);
        let (xj, yj) = (poly[j][0], poly[j][1]);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn tool_mask(spec: &SceneSpec) -> PixelMask {
    let (w, h) = (spec.rig.width, spec.rig.height);
    if spec.tool_mask.len() < 3 {
        return PixelMask::empty(w, h);
    }
    PixelMask::from_raster(Raster::from_fn(w, h, |x, y| point_in_polygon(&spec.tool_mask, x as f64, y as f64)))
}

fn render_frame(scene: &Scene, t: usize, poses: &[RigidTransform], mask: &PixelMask) -> Result<SyntheticFrame> {
    let spec = scene.spec;
    let rig = &spec.rig;
    let intr = rig.intrinsics;
    let (w, h) = (rig.width, rig.height);
    let tf = t as f64;
    let pose = &poses[t];
    let origin = *pose.translation();
    let rot = *pose.rotation();
    let pose_inv = pose.inverse();
    let prev_inv = (t > 0).then(|| poses[t - 1].inverse());

    let mut image = Raster::filled(w, h, Vector3::zeros());
    let mut depth = Raster::filled(w, h, 0.0);
    let mut depth_valid = Raster::filled(w, h, true);
    let mut flow = Raster::filled(w, h, Vector2::zeros());
    let mut flow_valid = Raster::filled(w, h, t > 0);
    let mut parallax = Raster::filled(w, h, Vector2::zeros());
    let mut label = Raster::filled(w, h, 0u8);

    let mut row_start: Option<Hit> = None;
    for y in 0..h {
        let mut history: [Option<Hit>; 3] = [row_start, None, None];
        for x in 0..w {
            let (u, v) = (x as f64, y as f64);
            let dir = rot * intr.ray(u, v);
            let start = match history {
                [Some(g1), Some(g2), Some(g3)] => Hit {
                    a: 3.0 * (g1.a - g2.a) + g3.a,
                    b: 3.0 * (g1.b - g2.b) + g3.b,
                    lambda: 3.0 * (g1.lambda - g2.lambda) + g3.lambda,
                },
                [Some(g1), Some(g2), None] => Hit {
                    a: 2.0 * g1.a - g2.a,
                    b: 2.0 * g1.b - g2.b,
                    lambda: 2.0 * g1.lambda - g2.lambda,
                },
                [Some(g1), ..] => g1,
                _ => scene.initial_guess(&origin, &dir),
            };
            let (hit, p) = scene
                .intersect(tf, &origin, &dir, start)
                .or_else(|| scene.intersect(tf, &origin, &dir, scene.initial_guess(&origin, &dir)))
                .ok_or_else(|| Error::SpecInvalid(format!("frame {t}: ray through pixel ({x}, {y}) misses the surface")))?;
            if x == 0 {
                row_start = Some(hit);
            }
            history = if x == 0 { [Some(hit), None, None] } else { [Some(hit), history[0], history[1]] };
            let z = hit.lambda;
            if !(z > 0.0 && z <= rig.d_max) {
                return Err(Error::SpecInvalid(format!(
                    "frame {t}: depth {z} at pixel ({x}, {y}) outside (0, {}]",
                    rig.d_max
                )));
            }
            depth.set(x, y, z);
            parallax.set(x, y, Vector2::new(intr.fx * rig.baseline / z, 0.0));

            let mut n = p.da.cross(&p.db).normalize();
            if n.dot(&(origin - p.x)) < 0.0 {
                n = -n;
            }
            image.set(x, y, shade(&spec.texture, &scene.noise, hit.a, hit.b, &p.x, &n, &origin));

            if let Some(prev_inv) = &prev_inv {
                let before = scene.position(tf - 1.0, hit.a, hit.b).x;
                let cam = prev_inv.apply(&before);
                let here = intr.project_point(&pose_inv.apply(&p.x));
                match (intr.project_point(&cam), here) {
                    (Some(px), Some(x0)) if cam.z > MIN_DEPTH => flow.set(x, y, px - x0),
                    _ => flow_valid.set(x, y, false),
                }
                label.set(x, y, label_bits(scene, tf, hit.a, hit.b, (p.x - before).norm()));
            }
        }
    }

    if let Some(noise) = &spec.noise {
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        if noise.depth_sigma > 0.0 {
            let dist = Normal::new(0.0, noise.depth_sigma).map_err(|e| Error::SpecInvalid(e.to_string()))?;
            for i in 0..depth.len() {
                let d = depth.as_slice()[i] + dist.sample(&mut rng);
                depth.as_mut_slice()[i] = d;
                if !(d > 0.0 && d <= rig.d_max) {
                    depth_valid.as_mut_slice()[i] = false;
                }
            }
        }
        if noise.flow_sigma > 0.0 && t > 0 {
            let dist = Normal::new(0.0, noise.flow_sigma).map_err(|e| Error::SpecInvalid(e.to_string()))?;
            for f in flow.as_mut_slice() {
                f.x += dist.sample(&mut rng);
                f.y += dist.sample(&mut rng);
            }
        }
    }

    Ok(SyntheticFrame {
        image,
        depth,
        depth_valid,
        flow: FlowField(DisplacementField::new(flow, flow_valid)?),
        parallax: ParallaxFlow(DisplacementField::from_data(parallax)),
        mask: mask.clone(),
        label,
    })
}

/// Renders every frame of `spec`.
pub fn render_sequence(spec: &SceneSpec) -> Result<SyntheticSequence> {
    spec.validate()?;
    let scene = Scene {
        spec,
        base: spec.surface.expand(),
        noise: ValueNoise::new(spec.texture.seed, spec.texture.cell_size),
    };
    let poses = (0..spec.n_frames)
        .map(|t| spec.camera.pose(t as f64))
        .collect::<Result<Vec<_>>>()?;
    let mask = tool_mask(spec);
    let frames = (0..spec.n_frames)
        .map(|t| render_frame(&scene, t, &poses, &mask))
        .collect::<Result<Vec<_>>>()?;
    let gt_relative = poses
        .windows(2)
        .map(|w| Ok(log_map(&w[0].inverse().compose(&w[1]))?.scale_translation(1.0 / spec.rig.d_max)))
        .collect::<Result<Vec<_>>>()?;
    let stamps = (0..spec.n_frames).map(|t| t as f64).collect();
    Ok(SyntheticSequence {
        rig: spec.rig,
        frames,
        gt_relative,
        gt_trajectory: Trajectory::new(stamps, poses)?,
    })
}

/// Largest violations of the two ground-truth identities over the valid
/// pixels of a pair: `pi_2D(exp(p) pi_3D(D_t, x)) = x + F_t(x)` in pixels,
/// and `exp(p) pi_3D(D_t, x) = pi_3D(D_{t-1}, x + F_t(x))` in normalized units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyReport {
    pub max_2d: f64,
    pub max_3d: f64,
    pub pixels: usize,
}

pub fn consistency_errors(pair: &FramePair, p_gt: &TangentPose) -> Result<ConsistencyReport> {
    let omega = build_omega(pair)?;
    let violations = consistency_violations(pair, p_gt, &omega)?;
    let mut report = ConsistencyReport {
        max_2d: 0.0,
        max_3d: 0.0,
        pixels: omega.len(),
    };
    for (e2, e3) in violations {
        report.max_2d = report.max_2d.max(e2);
        report.max_3d = report.max_3d.max(e3);
    }
    Ok(report)
}

/// Per-pixel `(2D, 3D)` identity violations for the pixels in `omega`.
pub fn consistency_violations(pair: &FramePair, p_gt: &TangentPose, omega: &[usize]) -> Result<Vec<(f64, f64)>> {
    let t = exp_map(p_gt)?;
    let intr = pair.rig.intrinsics;
    let w = pair.width();
    omega
        .iter()
        .map(|&k| {
            let (x, y) = (k % w, k / w);
            let d = pair
                .depth_t
                .get(x, y)
                .ok_or_else(|| Error::InvalidArgument(format!("pixel ({x}, {y}) has no depth")))?;
            let moved = t.apply(&intr.backproject_point(x as f64, y as f64, d));
            let target = pair
                .flow_target(x, y)
                .ok_or_else(|| Error::InvalidArgument(format!("pixel ({x}, {y}) has no flow")))?;
            let e2 = intr.project_point(&moved).map_or(f64::INFINITY, |px| (px - target).norm());
            let e3 = warp_backproject(pair, x, y).map_or(f64::INFINITY, |q| (moved - q.xyz()).norm());
            Ok((e2, e3))
        })
        .collect()
}

/// Sinusoidal depth modulation `d (1 + a m sin(2 pi frame / period))` where
/// `m` is one inside `region`, feathered to zero at its boundary over
/// `falloff_px` pixels, and zero outside. Depths are normalized, so the
/// amplitude must stay below `0.1` (a tenth of `d_max`).
pub fn breathing_deformation(
    base: &DepthMap,
    amplitude: f64,
    period: f64,
    frame_idx: usize,
    region: &Raster<bool>,
    falloff_px: f64,
) -> Result<DepthMap> {
    if !(0.0..0.1).contains(&amplitude) {
        return Err(Error::InvalidArgument(format!("breathing amplitude {amplitude} outside [0, 0.1)")));
    }
    if !(period > 0.0) {
        return Err(Error::InvalidArgument("breathing period must be positive".into()));
    }
    if !base.values().same_shape(region) {
        return Err(Error::InvalidArgument("region and depth shapes differ".into()));
    }
    let s = amplitude * (TAU * frame_idx as f64 / period).sin();
    let weight = feather(region, falloff_px);
    let values = Raster::from_fn(base.width(), base.height(), |x, y| {
        base.values().at(x, y) * (1.0 + s * weight.at(x, y))
    });
    DepthMap::new(values, base.valid().clone())
}

/// Smoothstep of the distance to the nearest pixel outside `region`.
fn feather(region: &Raster<bool>, falloff: f64) -> Raster<f64> {
    let (w, h) = (region.width(), region.height());
    let reach = falloff.ceil() as isize;
    Raster::from_fn(w, h, |x, y| {
        if !*region.at(x, y) {
            return 0.0;
        }
        if falloff <= 0.0 {
            return 1.0;
        }
        let mut best = f64::INFINITY;
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                if !*region.at(nx as usize, ny as usize) {
                    best = best.min(((dx * dx + dy * dy) as f64).sqrt());
                }
            }
        }
        smoothstep(best / falloff).0
    })
}
