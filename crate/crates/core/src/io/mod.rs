//! File formats and the sequence directory layout.

pub mod config;
pub mod raster;
pub mod sequence;
pub mod trajectory;

pub use config::{load_config, parse_config, read_rig, write_rig, RigConfig, RunConfig, ScenarioConfig, TermMode};
pub use raster::{read_raster, write_raster, RasterFile};
pub use sequence::{read_sequence, write_sequence, FrameData, FrameFile, SequenceDir};
pub use trajectory::{read_trajectory, write_trajectory};
