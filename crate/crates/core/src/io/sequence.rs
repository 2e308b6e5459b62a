//! Sequence directories: `rig.cfg`, optional `gt.traj`, and per-frame
//! `NNNNNN.{depth,flow,parallax,mask,img,label}.gvr` rasters.
//!
//! Depth is stored in scene units and normalized by `d_max` on load.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector2;

use super::config::{read_rig, write_rig};
use super::raster::{
    depth_from_file, depth_to_file, displacement_from_file, displacement_to_file, image_from_file, image_to_file,
    label_from_file, label_to_file, mask_from_file, mask_to_file, read_raster, scalar_from_file, scalar_to_file,
    write_raster, RasterFile,
};
use super::trajectory::{read_trajectory, write_trajectory};
use crate::camera::{depth_to_disparity, normalize_depth, StereoRig};
use crate::error::{Error, Result};
use crate::fields::{DepthMap, DisplacementField, FlowField, FramePair, Image, ParallaxFlow, PixelMask, Raster};
use crate::lie::TangentPose;
use crate::solver::relative_poses;
use crate::synth::{SyntheticFrame, SyntheticSequence};
use crate::trajeval::Trajectory;

pub const RIG_FILE: &str = "rig.cfg";
pub const GT_FILE: &str = "gt.traj";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FrameFile {
    Depth,
    Flow,
    Parallax,
    Mask,
    Image,
    Label,
}

impl FrameFile {
    pub const ALL: [FrameFile; 6] = [
        FrameFile::Depth,
        FrameFile::Flow,
        FrameFile::Parallax,
        FrameFile::Mask,
        FrameFile::Image,
        FrameFile::Label,
    ];

    pub fn suffix(&self) -> &'static str {
        match self {
            FrameFile::Depth => "depth",
            FrameFile::Flow => "flow",
            FrameFile::Parallax => "parallax",
            FrameFile::Mask => "mask",
            FrameFile::Image => "img",
            FrameFile::Label => "label",
        }
    }
}

pub fn frame_file_name(index: usize, kind: FrameFile) -> String {
    format!("{index:06}.{}.gvr", kind.suffix())
}

fn parse_frame_file_name(name: &str) -> Option<(usize, FrameFile)> {
    let rest = name.strip_suffix(".gvr")?;
    let (idx, kind) = rest.split_once('.')?;
    if idx.len() != 6 || !idx.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let kind = FrameFile::ALL.into_iter().find(|k| k.suffix() == kind)?;
    Some((idx.parse().ok()?, kind))
}

/// One frame as loaded from disk. Depth is normalized.
#[derive(Debug, Clone)]
pub struct FrameData {
    pub index: usize,
    pub depth: DepthMap,
    pub flow: Option<FlowField>,
    pub parallax: ParallaxFlow,
    pub mask: PixelMask,
    pub image: Option<Image>,
    pub label: Option<Raster<u8>>,
}

/// Handle on a sequence directory. Frames are read on demand.
#[derive(Debug, Clone)]
pub struct SequenceDir {
    dir: PathBuf,
    rig: StereoRig,
    n_frames: usize,
    present: BTreeMap<usize, Vec<FrameFile>>,
    gt: Option<Trajectory>,
}

impl SequenceDir {
    pub fn open(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Sequence(format!("{} is not a directory", dir.display())));
        }
        let rig = read_rig(&dir.join(RIG_FILE))?;
        let mut present: BTreeMap<usize, Vec<FrameFile>> = BTreeMap::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            if let Some((i, kind)) = entry.file_name().to_str().and_then(parse_frame_file_name) {
                present.entry(i).or_default().push(kind);
            }
        }
        let n_frames = present.keys().next_back().map_or(0, |&m| m + 1);
        if n_frames == 0 {
            return Err(Error::Sequence(format!("{} holds no frames", dir.display())));
        }
        for i in 0..n_frames {
            let kinds = present.get(&i).map(Vec::as_slice).unwrap_or(&[]);
            if !kinds.contains(&FrameFile::Depth) {
                return Err(Error::Sequence(format!(
                    "missing frame {i:06}: no {}",
                    frame_file_name(i, FrameFile::Depth)
                )));
            }
            if i > 0 && !kinds.contains(&FrameFile::Flow) {
                return Err(Error::Sequence(format!(
                    "missing frame {i:06}: no {}",
                    frame_file_name(i, FrameFile::Flow)
                )));
            }
        }
        let gt_path = dir.join(GT_FILE);
        let gt = if gt_path.exists() {
            let gt = read_trajectory(&gt_path)?;
            if gt.len() != n_frames {
                return Err(Error::Sequence(format!(
                    "{} has {} poses for {n_frames} frames",
                    gt_path.display(),
                    gt.len()
                )));
            }
            Some(gt)
        } else {
            None
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            rig,
            n_frames,
            present,
            gt,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn rig(&self) -> &StereoRig {
        &self.rig
    }

    pub fn len(&self) -> usize {
        self.n_frames
    }

    pub fn is_empty(&self) -> bool {
        self.n_frames == 0
    }

    pub fn ground_truth(&self) -> Option<&Trajectory> {
        self.gt.as_ref()
    }

    /// Ground-truth relative poses with translation in normalized units.
    pub fn gt_relative(&self) -> Result<Option<Vec<TangentPose>>> {
        self.gt
            .as_ref()
            .map(|gt| {
                Ok(relative_poses(gt)?
                    .into_iter()
                    .map(|p| p.scale_translation(1.0 / self.rig.d_max))
                    .collect())
            })
            .transpose()
    }

    pub fn has(&self, index: usize, kind: FrameFile) -> bool {
        self.present.get(&index).is_some_and(|k| k.contains(&kind))
    }

    pub fn path(&self, index: usize, kind: FrameFile) -> PathBuf {
        self.dir.join(frame_file_name(index, kind))
    }

    fn load(&self, index: usize, kind: FrameFile) -> Result<Option<(RasterFile, PathBuf)>> {
        if !self.has(index, kind) {
            return Ok(None);
        }
        let path = self.path(index, kind);
        let file = read_raster(&path)?;
        if (file.width, file.height) != (self.rig.width, self.rig.height) {
            return Err(Error::Sequence(format!(
                "{} is {}x{}, rig is {}x{}",
                path.display(),
                file.width,
                file.height,
                self.rig.width,
                self.rig.height
            )));
        }
        Ok(Some((file, path)))
    }

    /// Raw depth in scene units with its validity.
    pub fn read_raw_depth(&self, index: usize) -> Result<(Raster<f64>, Raster<bool>)> {
        let (file, path) = self
            .load(index, FrameFile::Depth)?
            .ok_or_else(|| Error::Sequence(format!("frame {index:06} has no depth")))?;
        scalar_from_file(&file, &path)
    }

    pub fn read_frame(&self, index: usize) -> Result<FrameData> {
        if index >= self.n_frames {
            return Err(Error::Sequence(format!("frame {index:06} outside 0..{}", self.n_frames)));
        }
        let (raw, valid) = self.read_raw_depth(index)?;
        let depth = normalize_depth(&self.rig, &raw, Some(&valid));
        let flow = self
            .load(index, FrameFile::Flow)?
            .map(|(f, p)| displacement_from_file(&f, &p).map(FlowField))
            .transpose()?;
        let parallax = match self.load(index, FrameFile::Parallax)? {
            Some((f, p)) => ParallaxFlow(displacement_from_file(&f, &p)?),
            None => {
                let disp = raw.map(|&z| depth_to_disparity(&self.rig, z));
                let data = disp.map(|d| Vector2::new(d.unwrap_or(0.0), 0.0));
                let ok = Raster::from_fn(raw.width(), raw.height(), |x, y| *valid.at(x, y) && disp.at(x, y).is_some());
                ParallaxFlow(DisplacementField::new(data, ok)?)
            }
        };
        let mask = match self.load(index, FrameFile::Mask)? {
            Some((f, p)) => mask_from_file(&f, &p)?,
            None => PixelMask::empty(self.rig.width, self.rig.height),
        };
        let image = self
            .load(index, FrameFile::Image)?
            .map(|(f, p)| image_from_file(&f, &p))
            .transpose()?;
        let label = self
            .load(index, FrameFile::Label)?
            .map(|(f, p)| label_from_file(&f, &p))
            .transpose()?;
        Ok(FrameData {
            index,
            depth,
            flow,
            parallax,
            mask,
            image,
            label,
        })
    }

    /// Streams pairs `(t, t - 1)` for `t = 1..len`, reading each frame once.
    pub fn pairs(&self) -> PairStream<'_> {
        PairStream {
            seq: self,
            next: 1,
            prev: None,
        }
    }
}

fn make_pair(rig: &StereoRig, cur: &FrameData, prev: &FrameData) -> Result<FramePair> {
    let flow = cur
        .flow
        .clone()
        .ok_or_else(|| Error::Sequence(format!("frame {:06} has no flow", cur.index)))?;
    FramePair::new(
        cur.depth.clone(),
        prev.depth.clone(),
        flow,
        cur.parallax.clone(),
        prev.parallax.clone(),
        cur.image.clone(),
        prev.image.clone(),
        cur.mask.clone(),
        *rig,
    )
}

pub struct PairStream<'a> {
    seq: &'a SequenceDir,
    next: usize,
    prev: Option<FrameData>,
}

impl Iterator for PairStream<'_> {
    type Item = Result<(usize, FramePair)>;

    fn next(&mut self) -> Option<Self::Item> {
        let t = self.next;
        if t >= self.seq.n_frames {
            return None;
        }
        self.next += 1;
        let result = (|| {
            let prev = match self.prev.take() {
                Some(p) => p,
                None => self.seq.read_frame(t - 1)?,
            };
            let cur = self.seq.read_frame(t)?;
            let pair = make_pair(&self.seq.rig, &cur, &prev)?;
            self.prev = Some(cur);
            Ok((t, pair))
        })();
        if result.is_err() {
            self.next = self.seq.n_frames;
        }
        Some(result)
    }
}

/// Writes a rendered sequence, creating `dir` if needed.
pub fn write_sequence(dir: &Path, seq: &SyntheticSequence) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_rig(&dir.join(RIG_FILE), &seq.rig)?;
    write_trajectory(&dir.join(GT_FILE), &seq.gt_trajectory)?;
    for (i, f) in seq.frames.iter().enumerate() {
        let files = [
            (FrameFile::Depth, scalar_to_file(&f.depth, Some(&f.depth_valid))),
            (FrameFile::Flow, displacement_to_file(&f.flow)),
            (FrameFile::Parallax, displacement_to_file(&f.parallax)),
            (FrameFile::Mask, mask_to_file(&f.mask)),
            (FrameFile::Image, image_to_file(&f.image)),
            (FrameFile::Label, label_to_file(&f.label)),
        ];
        for (kind, file) in files {
            write_raster(&dir.join(frame_file_name(i, kind)), &file)?;
        }
    }
    Ok(())
}

/// Reads a complete sequence as written by [`write_sequence`]; every frame
/// file and `gt.traj` must be present.
pub fn read_sequence(dir: &Path) -> Result<SyntheticSequence> {
    let sd = SequenceDir::open(dir)?;
    let gt = sd
        .ground_truth()
        .cloned()
        .ok_or_else(|| Error::Sequence(format!("{} has no {GT_FILE}", dir.display())))?;
    let mut frames = Vec::with_capacity(sd.len());
    for i in 0..sd.len() {
        let require = |kind: FrameFile| -> Result<(RasterFile, PathBuf)> {
            sd.load(i, kind)?
                .ok_or_else(|| Error::Sequence(format!("missing {}", frame_file_name(i, kind))))
        };
        let (depth, depth_valid) = sd.read_raw_depth(i)?;
        let (flow, fp) = require(FrameFile::Flow)?;
        let (par, pp) = require(FrameFile::Parallax)?;
        let (mask, mp) = require(FrameFile::Mask)?;
        let (img, ip) = require(FrameFile::Image)?;
        let (label, lp) = require(FrameFile::Label)?;
        frames.push(SyntheticFrame {
            image: image_from_file(&img, &ip)?,
            depth,
            depth_valid,
            flow: FlowField(displacement_from_file(&flow, &fp)?),
            parallax: ParallaxFlow(displacement_from_file(&par, &pp)?),
            mask: mask_from_file(&mask, &mp)?,
            label: label_from_file(&label, &lp)?,
        });
    }
    Ok(SyntheticSequence {
        rig: sd.rig,
        gt_relative: sd.gt_relative()?.expect("ground truth checked above"),
        gt_trajectory: gt,
        frames,
    })
}

pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    write_raster(path, &depth_to_file(depth))
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    depth_from_file(&read_raster(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{render_sequence, scenario_preset, PresetName};

    fn small(n: usize) -> SyntheticSequence {
        render_sequence(&scenario_preset(PresetName::Scanning, 1).with_resolution(32, 24).with_frames(n)).unwrap()
    }

    #[test]
    fn names_parse() {
        assert_eq!(parse_frame_file_name("000012.flow.gvr"), Some((12, FrameFile::Flow)));
        assert_eq!(parse_frame_file_name("12.flow.gvr"), None);
        assert_eq!(parse_frame_file_name("000012.foo.gvr"), None);
        assert_eq!(frame_file_name(3, FrameFile::Image), "000003.img.gvr");
    }

    #[test]
    fn two_frames_give_one_pair() {
        let dir = tempfile::tempdir().unwrap();
        write_sequence(dir.path(), &small(2)).unwrap();
        let sd = SequenceDir::open(dir.path()).unwrap();
        let pairs: Vec<_> = sd.pairs().collect::<Result<_>>().unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].0, 1);
    }

    #[test]
    fn gap_in_indices_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_sequence(dir.path(), &small(3)).unwrap();
        for kind in FrameFile::ALL {
            fs::remove_file(dir.path().join(frame_file_name(1, kind))).unwrap();
        }
        fs::remove_file(dir.path().join(GT_FILE)).unwrap();
        let msg = SequenceDir::open(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("000001"), "{msg}");
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_sequence(dir.path(), &small(2)).unwrap();
        let other = render_sequence(&scenario_preset(PresetName::Scanning, 1).with_resolution(16, 12).with_frames(2)).unwrap();
        let f = &other.frames[1];
        write_raster(&dir.path().join(frame_file_name(1, FrameFile::Depth)), &scalar_to_file(&f.depth, None)).unwrap();
        let sd = SequenceDir::open(dir.path()).unwrap();
        assert!(sd.pairs().any(|p| p.is_err()));
    }

    #[test]
    fn optional_files_are_tolerated() {
        let dir = tempfile::tempdir().unwrap();
        let seq = small(3);
        write_sequence(dir.path(), &seq).unwrap();
        for i in 0..3 {
            for kind in [FrameFile::Parallax, FrameFile::Mask, FrameFile::Image, FrameFile::Label] {
                fs::remove_file(dir.path().join(frame_file_name(i, kind))).unwrap();
            }
        }
        fs::remove_file(dir.path().join(frame_file_name(0, FrameFile::Flow))).unwrap();
        let sd = SequenceDir::open(dir.path()).unwrap();
        assert_eq!(sd.pairs().count(), 2);
        let f = sd.read_frame(1).unwrap();
        let expected = seq.frames[1].parallax.get(5, 5).unwrap().x;
        assert!((f.parallax.get(5, 5).unwrap().x - expected).abs() < 1e-5 * expected);
        assert!(read_sequence(dir.path()).is_err());
    }

    #[test]
    fn written_sequence_reloads_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let seq = small(3);
        write_sequence(dir.path(), &seq).unwrap();
        let back = read_sequence(dir.path()).unwrap();
        let again = tempfile::tempdir().unwrap();
        write_sequence(again.path(), &back).unwrap();
        for i in 0..3 {
            for kind in FrameFile::ALL {
                let name = frame_file_name(i, kind);
                assert_eq!(fs::read(dir.path().join(&name)).unwrap(), fs::read(again.path().join(&name)).unwrap());
            }
        }
        assert_eq!(back.gt_trajectory.stamps(), seq.gt_trajectory.stamps());
        assert_eq!(back.frames[2].label, seq.frames[2].label);
    }
}
