//! Base surfaces and time-varying displacements in material coordinates.
//!
//! A material point `(a, b)` rests at `(a, b, h(a, b))` in the world frame
//! (camera 0). Deformations move it; every map comes with its partial
//! derivatives in `a` and `b` so ray intersection can run Newton steps.

use std::f64::consts::TAU;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Surface {
    Plane {
        depth: f64,
        slope: [f64; 2],
    },
    /// Cap of a sphere bulging toward the camera, apex at `depth`.
    SpherePatch {
        depth: f64,
        radius: f64,
    },
    /// Tilted plane plus a seeded sum of sinusoids with wavelengths in
    /// `[smoothness, 2 * smoothness]` and total amplitude `amplitude`.
    Heightfield {
        depth: f64,
        slope: [f64; 2],
        seed: u64,
        amplitude: f64,
        smoothness: f64,
    },
}

/// Value and first partials of a scalar over material coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Scalar {
    pub v: f64,
    pub da: f64,
    pub db: f64,
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    k: Vector2<f64>,
    phase: f64,
    amp: f64,
}

const WAVES: usize = 6;

/// Surface with any random terms expanded.
#[derive(Debug, Clone)]
pub(crate) struct BaseSurface {
    depth: f64,
    slope: [f64; 2],
    sphere_radius: Option<f64>,
    waves: Vec<Wave>,
}

impl Surface {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Surface::Plane { depth, slope } => depth > 0.0 && slope.iter().all(|s| s.is_finite()),
            Surface::SpherePatch { depth, radius } => depth > 0.0 && radius > 0.0,
            Surface::Heightfield {
                depth,
                slope,
                amplitude,
                smoothness,
                ..
            } => depth > 0.0 && slope.iter().all(|s| s.is_finite()) && amplitude >= 0.0 && smoothness > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::SpecInvalid(format!("bad surface parameters {self:?}")))
        }
    }

    pub fn depth(&self) -> f64 {
        match *self {
            Surface::Plane { depth, .. } | Surface::SpherePatch { depth, .. } | Surface::Heightfield { depth, .. } => {
                depth
            }
        }
    }

    pub(crate) fn expand(&self) -> BaseSurface {
        match *self {
            Surface::Plane { depth, slope } => BaseSurface {
                depth,
                slope,
                sphere_radius: None,
                waves: Vec::new(),
            },
            Surface::SpherePatch { depth, radius } => BaseSurface {
                depth,
                slope: [0.0; 2],
                sphere_radius: Some(radius),
                waves: Vec::new(),
            },
            Surface::Heightfield {
                depth,
                slope,
                seed,
                amplitude,
                smoothness,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut waves: Vec<Wave> = (0..WAVES)
                    .map(|_| {
                        let angle = rng.random_range(0.0..TAU);
                        let lambda = smoothness * rng.random_range(1.0..2.0);
                        let k = Vector2::new(angle.cos(), angle.sin()) * (TAU / lambda);
                        Wave {
                            k,
                            phase: rng.random_range(0.0..TAU),
                            amp: rng.random_range(0.5..1.0),
                        }
                    })
                    .collect();
                let total: f64 = waves.iter().map(|w| w.amp).sum();
                for w in &mut waves {
                    w.amp *= amplitude / total;
                }
                BaseSurface {
                    depth,
                    slope,
                    sphere_radius: None,
                    waves,
                }
            }
        }
    }
}

impl BaseSurface {
    pub(crate) fn height(&self, a: f64, b: f64) -> Scalar {
        let mut h = Scalar {
            v: self.depth + self.slope[0] * a + self.slope[1] * b,
            da: self.slope[0],
            db: self.slope[1],
        };
        if let Some(r) = self.sphere_radius {
            let rho2 = (a * a + b * b).min(0.999 * r * r);
            let s = (r * r - rho2).sqrt();
            h.v += r - s;
            h.da += a / s;
            h.db += b / s;
        }
        for w in &self.waves {
            let arg = w.k.x * a + w.k.y * b + w.phase;
            let (sin, cos) = arg.sin_cos();
            h.v += w.amp * sin;
            h.da += w.amp * cos * w.k.x;
            h.db += w.amp * cos * w.k.y;
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpatialMask {
    Full,
    /// One inside `radius`, smoothly falling to zero at `radius + falloff`.
    Disk {
        center: [f64; 2],
        radius: f64,
        falloff: f64,
    },
}

/// `3t^2 - 2t^3` clamped to `[0, 1]`, with its derivative.
pub(crate) fn smoothstep(t: f64) -> (f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0)
    } else if t >= 1.0 {
        (1.0, 0.0)
    } else {
        (t * t * (3.0 - 2.0 * t), 6.0 * t * (1.0 - t))
    }
}

impl SpatialMask {
    pub(crate) fn eval(&self, a: f64, b: f64) -> Scalar {
        match *self {
            SpatialMask::Full => Scalar { v: 1.0, da: 0.0, db: 0.0 },
            SpatialMask::Disk { center, radius, falloff } => {
                let (da, db) = (a - center[0], b - center[1]);
                let rho = (da * da + db * db).sqrt();
                if falloff <= 0.0 {
                    let v = if rho <= radius { 1.0 } else { 0.0 };
                    return Scalar { v, da: 0.0, db: 0.0 };
                }
                let (s, ds) = smoothstep((radius + falloff - rho) / falloff);
                if ds == 0.0 || rho == 0.0 {
                    return Scalar { v: s, da: 0.0, db: 0.0 };
                }
                let g = -ds / falloff / rho;
                Scalar {
                    v: s,
                    da: g * da,
                    db: g * db,
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Deformation {
    /// World-z modulation `z (1 + amplitude * m(a, b) * sin(2 pi t / period))`.
    Breathing {
        amplitude: f64,
        period_frames: f64,
        mask: SpatialMask,
    },
    /// Compactly supported bump moved along `displacement * sin(2 pi t / period)`.
    Patch {
        center: [f64; 2],
        radius: f64,
        displacement: [f64; 3],
        period_frames: f64,
    },
}

impl Deformation {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Deformation::Breathing {
                amplitude,
                period_frames,
                mask,
            } => {
                let mask_ok = match mask {
                    SpatialMask::Full => true,
                    SpatialMask::Disk { radius, falloff, .. } => *radius >= 0.0 && *falloff >= 0.0,
                };
                (0.0..0.1).contains(amplitude) && *period_frames > 0.0 && mask_ok
            }
            Deformation::Patch {
                radius,
                displacement,
                period_frames,
                ..
            } => *radius > 0.0 && *period_frames > 0.0 && displacement.iter().all(|d| d.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::SpecInvalid(format!("bad deformation parameters {self:?}")))
        }
    }

    pub fn label_bit(&self) -> u8 {
        match self {
            Deformation::Breathing { .. } => 1,
            Deformation::Patch { .. } => 2,
        }
    }
}

/// `(1 - rho^2 / r^2)^3` inside the radius.
pub(crate) fn bump(center: [f64; 2], radius: f64, a: f64, b: f64) -> Scalar {
    let (da, db) = (a - center[0], b - center[1]);
    let q = 1.0 - (da * da + db * db) / (radius * radius);
    if q <= 0.0 {
        return Scalar { v: 0.0, da: 0.0, db: 0.0 };
    }
    let g = 3.0 * q * q * (-2.0 / (radius * radius));
    Scalar {
        v: q * q * q,
        da: g * da,
        db: g * db,
    }
}

/// World position of a material point with partials in `a` and `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Position {
    pub x: Vector3<f64>,
    pub da: Vector3<f64>,
    pub db: Vector3<f64>,
}

/// Applies one deformation at frame `t`.
pub(crate) fn deform(d: &Deformation, t: f64, a: f64, b: f64, p: Position) -> Position {
    match *d {
        Deformation::Breathing {
            amplitude,
            period_frames,
            ref mask,
        } => {
            let s = amplitude * (TAU * t / period_frames).sin();
            let m = mask.eval(a, b);
            let f = 1.0 + s * m.v;
            let z = p.x.z;
            let mut out = p;
            out.x.z = z * f;
            out.da.z = p.da.z * f + z * s * m.da;
            out.db.z = p.db.z * f + z * s * m.db;
            out
        }
        Deformation::Patch {
            center,
            radius,
            displacement,
            period_frames,
        } => {
            let w = bump(center, radius, a, b);
            let dt = Vector3::from(displacement) * (TAU * t / period_frames).sin();
            Position {
                x: p.x + dt * w.v,
                da: p.da + dt * w.da,
                db: p.db + dt * w.db,
            }
        }
    }
}

/// Position at frame `t` after applying `deformations` in order.
pub(crate) fn material_position(base: &BaseSurface, deformations: &[Deformation], t: f64, a: f64, b: f64) -> Position {
    let h = base.height(a, b);
    let mut p = Position {
        x: Vector3::new(a, b, h.v),
        da: Vector3::new(1.0, 0.0, h.da),
        db: Vector3::new(0.0, 1.0, h.db),
    };
    for d in deformations {
        p = deform(d, t, a, b, p);
    }
    p
}
