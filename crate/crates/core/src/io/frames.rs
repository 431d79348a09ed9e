//! PNG frame sequences: one file per frame, ordered by file name.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};
use crate::tensor::{Image, VideoTensor};

/// A decoded frame sequence: one tensor per channel (1 for grayscale, 3 for RGB).
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub channels: Vec<VideoTensor>,
    pub bit_depth: u8,
}

impl FrameSequence {
    pub fn frames(&self) -> usize {
        self.channels[0].frames()
    }

    /// `0.299 R + 0.587 G + 0.114 B` (or the single channel itself).
    pub fn luminance(&self) -> VideoTensor {
        match self.channels.as_slice() {
            [r, g, b] => {
                let mut out = r.clone();
                for (((o, &r), &g), &b) in out
                    .data_mut()
                    .iter_mut()
                    .zip(r.data())
                    .zip(g.data())
                    .zip(b.data())
                {
                    *o = (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) as f32;
                }
                out
            }
            [single, ..] => single.clone(),
            [] => unreachable!("frame sequences always have at least one channel"),
        }
    }
}

struct DecodedPng {
    height: usize,
    width: usize,
    bit_depth: u8,
    channels: Vec<Vec<f32>>,
}

fn decode_png(path: &Path) -> Result<DecodedPng> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format(path, format!("invalid PNG: {e}")))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "PNG too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, format!("invalid PNG: {e}")))?;
    let (h, w) = (info.height as usize, info.width as usize);
    let (stored, keep) = match info.color_type {
        ColorType::Grayscale => (1, 1),
        ColorType::GrayscaleAlpha => (2, 1),
        ColorType::Rgb => (3, 3),
        ColorType::Rgba => (4, 3),
        other => {
            return Err(Error::format(
                path,
                format!("unsupported color type {other:?}"),
            ));
        }
    };
    let (bit_depth, scale) = match info.bit_depth {
        BitDepth::Eight => (8u8, 255.0f64),
        BitDepth::Sixteen => (16u8, 65535.0f64),
        other => {
            return Err(Error::format(
                path,
                format!("unsupported bit depth {other:?}"),
            ))
        }
    };
    let bytes_per = (bit_depth / 8) as usize;
    let mut channels = vec![Vec::with_capacity(h * w); keep];
    for r in 0..h {
        let row = &buf[r * info.line_size..(r + 1) * info.line_size];
        for c in 0..w {
            for (ch, plane) in channels.iter_mut().enumerate() {
                let o = (c * stored + ch) * bytes_per;
                let raw = if bytes_per == 1 {
                    row[o] as f64
                } else {
                    u16::from_be_bytes([row[o], row[o + 1]]) as f64
                };
                plane.push((raw / scale) as f32);
            }
        }
    }
    Ok(DecodedPng {
        height: h,
        width: w,
        bit_depth,
        channels,
    })
}

/// PNG files in `dir`, sorted by file name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    if files.is_empty() {
        return Err(Error::format(dir, "directory contains no PNG frames"));
    }
    Ok(files)
}

pub fn read_frames(dir: impl AsRef<Path>) -> Result<FrameSequence> {
    let dir = dir.as_ref();
    let files = list_frames(dir)?;
    let mut decoded = Vec::with_capacity(files.len());
    for path in &files {
        let png = decode_png(path)?;
        if let Some(first) = decoded.first() {
            let first: &DecodedPng = first;
            if png.height != first.height || png.width != first.width {
                return Err(Error::format(
                    path,
                    format!(
                        "frame is {}x{} but the first frame is {}x{}",
                        png.height, png.width, first.height, first.width
                    ),
                ));
            }
            if png.channels.len() != first.channels.len() {
                return Err(Error::format(
                    path,
                    "channel count differs from the first frame",
                ));
            }
        }
        decoded.push(png);
    }
    let first = &decoded[0];
    let (h, w, n) = (first.height, first.width, decoded.len());
    let bit_depth = decoded.iter().map(|d| d.bit_depth).max().unwrap_or(8);
    let channels = (0..first.channels.len())
        .map(|ch| {
            let mut data = Vec::with_capacity(h * w * n);
            for d in &decoded {
                data.extend_from_slice(&d.channels[ch]);
            }
            VideoTensor::from_vec(h, w, n, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameSequence {
        channels,
        bit_depth,
    })
}

/// Loads a single PNG and converts it to luminance.
pub fn read_luminance_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let png = decode_png(path)?;
    let data = match png.channels.as_slice() {
        [r, g, b] => r
            .iter()
            .zip(g)
            .zip(b)
            .map(|((&r, &g), &b)| (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) as f32)
            .collect(),
        [y] => y.clone(),
        _ => unreachable!("decode_png yields 1 or 3 channels"),
    };
    Image::new(png.height, png.width, data)
}

#[inline]
fn quantize(v: f32, max: f64) -> u16 {
    (v as f64)
        .clamp(0.0, 1.0)
        .mul_add(max, 0.0)
        .round_ties_even() as u16
}

/// Writes `frame_00000.png, frame_00001.png, …`; one channel → grayscale, three → RGB.
pub fn write_frames(channels: &[VideoTensor], dir: impl AsRef<Path>, bit_depth: u8) -> Result<()> {
    let dir = dir.as_ref();
    let first = channels
        .first()
        .ok_or_else(|| Error::arg("write_frames: no channels"))?;
    if channels.len() != 1 && channels.len() != 3 {
        return Err(Error::arg("write_frames: expected 1 or 3 channels"));
    }
    for ch in channels {
        first.require_same_shape(ch, "write_frames")?;
    }
    let (depth, max) = match bit_depth {
        8 => (BitDepth::Eight, 255.0),
        16 => (BitDepth::Sixteen, 65535.0),
        other => return Err(Error::arg(format!("unsupported bit depth {other}"))),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = (first.height(), first.width());
    let color = if channels.len() == 1 {
        ColorType::Grayscale
    } else {
        ColorType::Rgb
    };
    for f in 0..first.frames() {
        let mut bytes = Vec::with_capacity(h * w * channels.len() * 2);
        for i in 0..h * w {
            for ch in channels {
                let q = quantize(ch.frame(f)[i], max);
                if bit_depth == 8 {
                    bytes.push(q as u8);
                } else {
                    bytes.extend_from_slice(&q.to_be_bytes());
                }
            }
        }
        let path = dir.join(format!("frame_{f:05}.png"));
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let png_err =
            |e: png::EncodingError| Error::format(&path, format!("PNG encoding failed: {e}"));
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&bytes).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(())
}
