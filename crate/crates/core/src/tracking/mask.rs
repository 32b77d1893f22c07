use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrackingError;

/// Which camera of the stereo rig an image belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Left => write!(f, "left"),
            Side::Right => write!(f, "right"),
        }
    }
}

/// Binary pixel mask of one object instance in one image.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMask {
    pub frame_index: usize,
    pub side: Side,
    pub instance_label: u32,
    width: usize,
    height: usize,
    pixels: Vec<bool>,
}

impl InstanceMask {
    /// An all-clear mask.
    pub fn empty(frame_index: usize, side: Side, instance_label: u32, width: usize, height: usize) -> Self {
        InstanceMask {
            frame_index,
            side,
            instance_label,
            width,
            height,
            pixels: vec![false; width * height],
        }
    }

    pub fn from_pixels(
        frame_index: usize,
        side: Side,
        instance_label: u32,
        width: usize,
        height: usize,
        pixels: Vec<bool>,
    ) -> Self {
        assert_eq!(pixels.len(), width * height, "pixel buffer must match dimensions");
        InstanceMask { frame_index, side, instance_label, width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize) {
        self.pixels[y * self.width + x] = true;
    }

    /// Number of set pixels.
    pub fn area(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.pixels.iter().any(|&p| p)
    }

    /// Coordinates of all set pixels, row-major order.
    pub fn set_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pixels
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }

    pub(crate) fn raw_pixels(&self) -> &[bool] {
        &self.pixels
    }

    pub fn same_dimensions(&self, other: &InstanceMask) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Splits a label raster (0 = unlabeled) into one mask per distinct label,
/// ordered by label.
pub fn masks_from_labels(
    frame_index: usize,
    side: Side,
    width: usize,
    height: usize,
    labels: &[u8],
) -> Vec<InstanceMask> {
    assert_eq!(labels.len(), width * height, "label buffer must match dimensions");
    let mut present: Vec<u8> = labels.iter().copied().filter(|&l| l > 0).collect();
    present.sort_unstable();
    present.dedup();
    present
        .into_iter()
        .map(|label| {
            let pixels = labels.iter().map(|&l| l == label).collect();
            InstanceMask::from_pixels(frame_index, side, u32::from(label), width, height, pixels)
        })
        .collect()
}

/// Paints masks into a label raster, in the order given. Overlapping pixels
/// take the later mask's label.
pub fn labels_from_masks(
    width: usize,
    height: usize,
    masks: &[InstanceMask],
) -> Result<Vec<u8>, TrackingError> {
    let mut labels = vec![0u8; width * height];
    for mask in masks {
        if mask.width != width || mask.height != height {
            return Err(TrackingError::DimensionMismatch {
                a_width: width,
                a_height: height,
                b_width: mask.width,
                b_height: mask.height,
            });
        }
        let label =
            u8::try_from(mask.instance_label).map_err(|_| TrackingError::LabelOutOfRange(mask.instance_label))?;
        for (x, y) in mask.set_pixels() {
            labels[y * width + x] = label;
        }
    }
    Ok(labels)
}

/// Writes a label raster as a binary PGM (P5), pixel value = instance label.
pub fn write_pgm(path: &Path, width: usize, height: usize, labels: &[u8]) -> Result<(), TrackingError> {
    assert_eq!(labels.len(), width * height, "label buffer must match dimensions");
    let io_err = |source| TrackingError::Io { path: path.display().to_string(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    write!(w, "P5\n{} {}\n255\n", width, height).map_err(io_err)?;
    w.write_all(labels).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Reads a binary PGM (P5) label raster.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>), TrackingError> {
    let io_err = |source| TrackingError::Io { path: path.display().to_string(), source };
    let parse_err = |message: &str| TrackingError::ParseError {
        path: path.display().to_string(),
        message: message.to_string(),
    };
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(io_err)?)
        .read_to_end(&mut bytes)
        .map_err(io_err)?;

    // Header: "P5", width, height, maxval as whitespace-separated tokens,
    // with '#' comments, followed by a single whitespace byte and raw data.
    let mut pos = 0usize;
    let mut tokens: Vec<String> = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err("truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if tokens[0] != "P5" {
        return Err(parse_err("not a binary PGM (P5)"));
    }
    let width: usize = tokens[1].parse().map_err(|_| parse_err("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| parse_err("bad height"))?;
    let maxval: usize = tokens[3].parse().map_err(|_| parse_err("bad maxval"))?;
    if maxval == 0 || maxval > 255 {
        return Err(parse_err("maxval must be in 1..=255"));
    }
    pos += 1; // single whitespace after maxval
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| parse_err("dimensions overflow"))?;
    let data = bytes.get(pos..pos + expected).ok_or_else(|| parse_err("truncated pixel data"))?;
    Ok((width, height, data.to_vec()))
}
