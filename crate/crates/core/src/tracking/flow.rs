use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{InstanceMask, Side, TrackingError};

/// Magic number of the Middlebury `.flo` format ("PIEH" as a float).
const FLO_MAGIC: f32 = 202021.25;

/// Dense per-pixel 2D displacement field between two images.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub source_frame: usize,
    pub source_side: Side,
    pub target_frame: usize,
    pub target_side: Side,
    width: usize,
    height: usize,
    /// Row-major interleaved (u, v) displacements, pixels.
    data: Vec<f32>,
}

impl FlowField {
    pub fn zero(
        source_frame: usize,
        source_side: Side,
        target_frame: usize,
        target_side: Side,
        width: usize,
        height: usize,
    ) -> Self {
        FlowField {
            source_frame,
            source_side,
            target_frame,
            target_side,
            width,
            height,
            data: vec![0.0; width * height * 2],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = (y * self.width + x) * 2;
        (self.data[i], self.data[i + 1])
    }

    pub fn set(&mut self, x: usize, y: usize, u: f32, v: f32) {
        let i = (y * self.width + x) * 2;
        self.data[i] = u;
        self.data[i + 1] = v;
    }

    /// Transports every set pixel of `mask` by the flow, rounding to the
    /// nearest target pixel. Out-of-image targets are dropped; colliding
    /// targets collapse into a single set pixel. Fails with
    /// [`TrackingError::EmptyPrediction`] when nothing lands inside the
    /// target image.
    pub fn warp_mask(&self, mask: &InstanceMask) -> Result<InstanceMask, TrackingError> {
        if mask.frame_index != self.source_frame || mask.side != self.source_side {
            return Err(TrackingError::FlowMismatch {
                expected: format!("mask at frame {} {}", mask.frame_index, mask.side),
                got: format!("flow from frame {} {}", self.source_frame, self.source_side),
            });
        }
        if mask.width() != self.width || mask.height() != self.height {
            return Err(TrackingError::DimensionMismatch {
                a_width: mask.width(),
                a_height: mask.height(),
                b_width: self.width,
                b_height: self.height,
            });
        }
        let mut warped = InstanceMask::empty(
            self.target_frame,
            self.target_side,
            mask.instance_label,
            self.width,
            self.height,
        );
        let mut any = false;
        for (x, y) in mask.set_pixels() {
            let (u, v) = self.at(x, y);
            let tx = (x as f64 + f64::from(u)).round();
            let ty = (y as f64 + f64::from(v)).round();
            if tx >= 0.0 && ty >= 0.0 && (tx as usize) < self.width && (ty as usize) < self.height {
                warped.set(tx as usize, ty as usize);
                any = true;
            }
        }
        if any {
            Ok(warped)
        } else {
            Err(TrackingError::EmptyPrediction)
        }
    }

    /// Writes the field in Middlebury `.flo` layout, bit-exact.
    pub fn write_flo(&self, path: &Path) -> Result<(), TrackingError> {
        let io_err = |source| TrackingError::Io { path: path.display().to_string(), source };
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        w.write_f32::<LittleEndian>(FLO_MAGIC).map_err(io_err)?;
        w.write_i32::<LittleEndian>(self.width as i32).map_err(io_err)?;
        w.write_i32::<LittleEndian>(self.height as i32).map_err(io_err)?;
        for &value in &self.data {
            w.write_f32::<LittleEndian>(value).map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }

    /// Reads a Middlebury `.flo` file. The format carries no frame metadata,
    /// so source and target are supplied by the caller (from file naming).
    pub fn read_flo(
        path: &Path,
        source_frame: usize,
        source_side: Side,
        target_frame: usize,
        target_side: Side,
    ) -> Result<Self, TrackingError> {
        let io_err = |source| TrackingError::Io { path: path.display().to_string(), source };
        let parse_err = |message: String| TrackingError::ParseError {
            path: path.display().to_string(),
            message,
        };
        let mut r = BufReader::new(File::open(path).map_err(io_err)?);
        let magic = r.read_f32::<LittleEndian>().map_err(io_err)?;
        if magic.to_bits() != FLO_MAGIC.to_bits() {
            return Err(parse_err(format!("bad magic {magic}, expected {FLO_MAGIC}")));
        }
        let width = r.read_i32::<LittleEndian>().map_err(io_err)?;
        let height = r.read_i32::<LittleEndian>().map_err(io_err)?;
        if width <= 0 || height <= 0 || width > 1 << 16 || height > 1 << 16 {
            return Err(parse_err(format!("implausible dimensions {width}x{height}")));
        }
        let count = width as usize * height as usize * 2;
        let mut data = vec![0f32; count];
        r.read_f32_into::<LittleEndian>(&mut data)
            .map_err(|_| parse_err("truncated flow data".to_string()))?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(parse_err("flow contains non-finite values".to_string()));
        }
        Ok(FlowField {
            source_frame,
            source_side,
            target_frame,
            target_side,
            width: width as usize,
            height: height as usize,
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn square_mask(frame: usize, x0: usize, y0: usize, size: usize, w: usize, h: usize) -> InstanceMask {
        let mut mask = InstanceMask::empty(frame, Side::Left, 1, w, h);
        for y in y0..y0 + size {
            for x in x0..x0 + size {
                mask.set(x, y);
            }
        }
        mask
    }

    #[test]
    fn zero_flow_is_identity_on_masks() {
        let flow = FlowField::zero(3, Side::Left, 4, Side::Left, 16, 12);
        let mask = square_mask(3, 2, 2, 5, 16, 12);
        let warped = flow.warp_mask(&mask).unwrap();
        assert_eq!(warped.frame_index, 4);
        assert_eq!(warped.raw_pixels(), mask.raw_pixels());
    }

    #[test]
    fn uniform_shift_clips_at_border() {
        let mut flow = FlowField::zero(0, Side::Left, 1, Side::Left, 12, 12);
        for y in 0..12 {
            for x in 0..12 {
                flow.set(x, y, 5.0, 0.0);
            }
        }
        // 10x10 square at origin, shifted +5 px right in a 12-wide image:
        // columns 5..12 remain -> 7 columns x 10 rows.
        let mask = square_mask(0, 0, 0, 10, 12, 12);
        let warped = flow.warp_mask(&mask).unwrap();
        assert_eq!(warped.area(), 7 * 10);
        assert!(warped.get(5, 0) && warped.get(11, 9));
        assert!(!warped.get(4, 0));
    }

    #[test]
    fn all_pixels_leaving_is_empty_prediction() {
        let mut flow = FlowField::zero(0, Side::Left, 1, Side::Left, 8, 8);
        for y in 0..8 {
            for x in 0..8 {
                flow.set(x, y, 100.0, 0.0);
            }
        }
        let mask = square_mask(0, 1, 1, 3, 8, 8);
        assert!(matches!(flow.warp_mask(&mask), Err(TrackingError::EmptyPrediction)));
    }

    #[test]
    fn warp_rejects_mismatched_source() {
        let flow = FlowField::zero(2, Side::Left, 3, Side::Left, 8, 8);
        let mask = square_mask(0, 1, 1, 3, 8, 8);
        assert!(matches!(flow.warp_mask(&mask), Err(TrackingError::FlowMismatch { .. })));
    }

    #[test]
    fn flo_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("field.flo");
        let mut flow = FlowField::zero(1, Side::Left, 1, Side::Right, 7, 5);
        for y in 0..5 {
            for x in 0..7 {
                flow.set(x, y, x as f32 * 0.1 - 3.0, y as f32 * -0.25 + 1.0 / 3.0);
            }
        }
        flow.write_flo(&path).unwrap();
        let back = FlowField::read_flo(&path, 1, Side::Left, 1, Side::Right).unwrap();
        assert_eq!(back, flow);
    }

    #[test]
    fn flo_rejects_bad_magic() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.flo");
        std::fs::write(&path, [0u8; 12]).unwrap();
        assert!(matches!(
            FlowField::read_flo(&path, 0, Side::Left, 1, Side::Left),
            Err(TrackingError::ParseError { .. })
        ));
    }

    #[test]
    fn flo_rejects_truncation() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("short.flo");
        let flow = FlowField::zero(0, Side::Left, 1, Side::Left, 4, 4);
        flow.write_flo(&path).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 5]).unwrap();
        assert!(matches!(
            FlowField::read_flo(&path, 0, Side::Left, 1, Side::Left),
            Err(TrackingError::ParseError { .. })
        ));
    }
}
