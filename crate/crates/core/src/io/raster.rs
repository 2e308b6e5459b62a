//! `GVR1` raster container: little-endian header, planar `f32` payload and
//! an optional byte validity plane.

use std::fs;
use std::path::Path;

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::fields::{DepthMap, DisplacementField, Image, PixelMask, Raster, WeightMap};

pub const MAGIC: &[u8; 4] = b"GVR1";
pub const HEADER_LEN: usize = 20;
const FLAG_VALIDITY: u32 = 1;

/// Raw multi-channel raster as stored on disk.
#[derive(Debug, Clone)]
pub struct RasterFile {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// `channels` planes of `width * height` values each, row-major.
    pub planes: Vec<f32>,
    pub valid: Option<Vec<bool>>,
}

impl PartialEq for RasterFile {
    /// Bitwise comparison, so NaN payloads compare equal to themselves.
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.channels == other.channels
            && self.valid == other.valid
            && self.planes.len() == other.planes.len()
            && self.planes.iter().zip(&other.planes).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl RasterFile {
    pub fn new(width: usize, height: usize, channels: usize, planes: Vec<f32>, valid: Option<Vec<bool>>) -> Result<Self> {
        let n = width * height;
        if planes.len() != n * channels {
            return Err(Error::InvalidArgument(format!(
                "{} values for a {width}x{height}x{channels} raster",
                planes.len()
            )));
        }
        if valid.as_ref().is_some_and(|v| v.len() != n) {
            return Err(Error::InvalidArgument("validity plane length mismatch".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            planes,
            valid,
        })
    }

    fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.pixels();
        &self.planes[c * n..(c + 1) * n]
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.valid.as_ref().is_none_or(|v| v[i])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.pixels();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.planes.len() + if self.valid.is_some() { n } else { 0 });
        out.extend_from_slice(MAGIC);
        for v in [self.width as u32, self.height as u32, self.channels as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let flags = if self.valid.is_some() { FLAG_VALIDITY } else { 0 };
        out.extend_from_slice(&flags.to_le_bytes());
        for v in &self.planes {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(valid) = &self.valid {
            out.extend(valid.iter().map(|&b| b as u8));
        }
        out
    }

    /// Parses a container; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let err = |msg: String| Error::format(path, msg);
        if bytes.len() < HEADER_LEN {
            return Err(err(format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(err(format!("bad magic {:?} at byte offset 0", &bytes[..4])));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("four bytes"));
        let (width, height, channels, flags) = (word(4) as usize, word(8) as usize, word(12) as usize, word(16));
        if flags & !FLAG_VALIDITY != 0 {
            return Err(err(format!("unknown flag bits {flags:#x} at byte offset 16")));
        }
        let n = width
            .checked_mul(height)
            .ok_or_else(|| err("raster dimensions overflow".into()))?;
        let values = n
            .checked_mul(channels)
            .ok_or_else(|| err("raster dimensions overflow".into()))?;
        let has_valid = flags & FLAG_VALIDITY != 0;
        let expected = HEADER_LEN + 4 * values + if has_valid { n } else { 0 };
        if bytes.len() != expected {
            let kind = if bytes.len() < expected { "truncated payload" } else { "trailing bytes" };
            return Err(err(format!(
                "{kind}: file has {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let planes: Vec<f32> = bytes[HEADER_LEN..HEADER_LEN + 4 * values]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect();
        let valid = if has_valid {
            let start = HEADER_LEN + 4 * values;
            let plane = &bytes[start..];
            if let Some(i) = plane.iter().position(|&b| b > 1) {
                return Err(err(format!(
                    "validity byte {} at byte offset {} is not 0 or 1",
                    plane[i],
                    start + i
                )));
            }
            Some(plane.iter().map(|&b| b == 1).collect::<Vec<_>>())
        } else {
            None
        };
        for (k, v) in planes.iter().enumerate() {
            let i = k % n.max(1);
            let valid_here = valid.as_ref().is_none_or(|m| m[i]);
            if valid_here && !v.is_finite() {
                return Err(err(format!(
                    "non-finite value in valid region at byte offset {}",
                    HEADER_LEN + 4 * k
                )));
            }
        }
        Ok(Self {
            width,
            height,
            channels,
            planes,
            valid,
        })
    }

    fn expect_shape(&self, channels: usize, path: &Path) -> Result<()> {
        if self.channels != channels {
            return Err(Error::format(
                path,
                format!("expected {channels} channel(s), found {}", self.channels),
            ));
        }
        Ok(())
    }

    fn valid_raster(&self) -> Raster<bool> {
        Raster::from_fn(self.width, self.height, |x, y| self.is_valid(y * self.width + x))
    }
}

pub fn read_raster(path: &Path) -> Result<RasterFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    RasterFile::from_bytes(&bytes, path)
}

pub fn write_raster(path: &Path, raster: &RasterFile) -> Result<()> {
    fs::write(path, raster.to_bytes()).map_err(|e| Error::io(path, e))
}

fn plane_of<'a, T>(r: &'a Raster<T>, f: impl Fn(&T) -> f32 + 'a) -> impl Iterator<Item = f32> + 'a {
    r.as_slice().iter().map(f)
}

/// Single-channel scalar raster with optional validity.
pub fn scalar_to_file(values: &Raster<f64>, valid: Option<&Raster<bool>>) -> RasterFile {
    RasterFile {
        width: values.width(),
        height: values.height(),
        channels: 1,
        planes: plane_of(values, |&v| v as f32).collect(),
        valid: valid.map(|v| v.as_slice().to_vec()),
    }
}

pub fn scalar_from_file(file: &RasterFile, path: &Path) -> Result<(Raster<f64>, Raster<bool>)> {
    file.expect_shape(1, path)?;
    let values = Raster::from_vec(file.width, file.height, file.plane(0).iter().map(|&v| v as f64).collect())?;
    Ok((values, file.valid_raster()))
}

/// Depth map in whatever units the caller keeps.
pub fn depth_to_file(depth: &DepthMap) -> RasterFile {
    scalar_to_file(depth.values(), Some(depth.valid()))
}

pub fn depth_from_file(file: &RasterFile, path: &Path) -> Result<DepthMap> {
    let (values, valid) = scalar_from_file(file, path)?;
    DepthMap::new(values, valid)
}

pub fn displacement_to_file(field: &DisplacementField) -> RasterFile {
    let data = field.data();
    RasterFile {
        width: data.width(),
        height: data.height(),
        channels: 2,
        planes: plane_of(data, |v| v.x as f32).chain(plane_of(data, |v| v.y as f32)).collect(),
        valid: Some(field.valid().as_slice().to_vec()),
    }
}

pub fn displacement_from_file(file: &RasterFile, path: &Path) -> Result<DisplacementField> {
    file.expect_shape(2, path)?;
    let (u, v) = (file.plane(0), file.plane(1));
    let data = Raster::from_vec(
        file.width,
        file.height,
        u.iter().zip(v).map(|(&a, &b)| Vector2::new(a as f64, b as f64)).collect(),
    )?;
    DisplacementField::new(data, file.valid_raster())
}

pub fn image_to_file(image: &Image) -> RasterFile {
    RasterFile {
        width: image.width(),
        height: image.height(),
        channels: 3,
        planes: (0..3).flat_map(|c| plane_of(image, move |v| v[c] as f32)).collect(),
        valid: None,
    }
}

pub fn image_from_file(file: &RasterFile, path: &Path) -> Result<Image> {
    file.expect_shape(3, path)?;
    let (r, g, b) = (file.plane(0), file.plane(1), file.plane(2));
    Raster::from_vec(
        file.width,
        file.height,
        (0..file.pixels()).map(|i| Vector3::new(r[i] as f64, g[i] as f64, b[i] as f64)).collect(),
    )
}

/// Excluded pixels are stored as `1.0`.
pub fn mask_to_file(mask: &PixelMask) -> RasterFile {
    RasterFile {
        width: mask.width(),
        height: mask.height(),
        channels: 1,
        planes: plane_of(mask.raster(), |&m| if m { 1.0 } else { 0.0 }).collect(),
        valid: None,
    }
}

pub fn mask_from_file(file: &RasterFile, path: &Path) -> Result<PixelMask> {
    file.expect_shape(1, path)?;
    let excluded = file
        .plane(0)
        .iter()
        .map(|&v| {
            if v == 0.0 || v == 1.0 {
                Ok(v == 1.0)
            } else {
                Err(Error::format(path, format!("mask value {v} is not 0 or 1")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PixelMask::from_raster(Raster::from_vec(file.width, file.height, excluded)?))
}

pub fn label_to_file(label: &Raster<u8>) -> RasterFile {
    RasterFile {
        width: label.width(),
        height: label.height(),
        channels: 1,
        planes: plane_of(label, |&l| l as f32).collect(),
        valid: None,
    }
}

pub fn label_from_file(file: &RasterFile, path: &Path) -> Result<Raster<u8>> {
    file.expect_shape(1, path)?;
    let bits = file
        .plane(0)
        .iter()
        .map(|&v| {
            if v.fract() == 0.0 && (0.0..=255.0).contains(&v) {
                Ok(v as u8)
            } else {
                Err(Error::format(path, format!("label value {v} is not a byte")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Raster::from_vec(file.width, file.height, bits)
}

pub fn weights_to_file(weights: &WeightMap) -> RasterFile {
    scalar_to_file(weights.raster(), None)
}

pub fn weights_from_file(file: &RasterFile, path: &Path) -> Result<WeightMap> {
    let (values, _) = scalar_from_file(file, path)?;
    WeightMap::new(values).map_err(|e| Error::format(path, e.to_string()))
}
