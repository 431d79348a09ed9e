//! File formats: PNG frame directories and the RLRT tensor format.

mod frames;
pub mod rlrt;

use std::path::Path;

pub use frames::{list_frames, read_frames, read_luminance_png, write_frames, FrameSequence};
pub use rlrt::{decode_rlrt, encode_rlrt, read_rlrt, write_rlrt};

use crate::error::Result;

/// Reads either a `.rlrt` file (one channel, reported as 16-bit) or a PNG directory.
pub fn read_video(path: impl AsRef<Path>) -> Result<FrameSequence> {
    let path = path.as_ref();
    let is_rlrt = path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("rlrt"));
    if is_rlrt {
        Ok(FrameSequence {
            channels: vec![read_rlrt(path)?],
            bit_depth: 16,
        })
    } else {
        read_frames(path)
    }
}
