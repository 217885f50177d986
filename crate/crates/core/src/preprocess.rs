//! Face crops from externally supplied bounding boxes.
//!
//! The crop is a square of side `s = 2 * max(w, h)` centered on the box
//! center. Boxes whose square is smaller than the minimum side are rejected
//! for resolution; squares that leave the image are rejected for boundary.
//! Both checks happen before any pixel is touched. Accepted squares are
//! resized bilinearly to the output size.
//!
//! When a center coordinate falls on a half pixel the square grows by one
//! pixel so that it stays centered; the side then becomes `s + 1` on both
//! axes, and an axis with a whole-pixel center takes the extra pixel on its
//! far side.

use crate::dataset::worker_pool;
use crate::error::{Error, Result};
use crate::export::atomic_write;
use crate::image::Image;
use rayon::prelude::*;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, width: u32, height: u32) -> Self {
        BBox {
            x,
            y,
            width,
            height,
        }
    }

    pub fn validate(&self, image_width: usize, image_height: usize) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument(format!("empty bounding box {self:?}")));
        }
        if self.x as u64 + self.width as u64 > image_width as u64
            || self.y as u64 + self.height as u64 > image_height as u64
        {
            return Err(Error::InvalidArgument(format!(
                "bounding box {self:?} exceeds the {image_width}x{image_height} image"
            )));
        }
        Ok(())
    }
}

/// Pixel square `[x0, x0 + side) x [y0, y0 + side)`; may extend past the
/// image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Square {
    pub x0: i64,
    pub y0: i64,
    pub side: i64,
}

/// The expanded square for `bbox`.
pub fn crop_square(bbox: &BBox) -> Square {
    let s = 2 * bbox.width.max(bbox.height) as i64;
    // Centers in half-pixel units: 2 * x + w.
    let cx2 = 2 * bbox.x as i64 + bbox.width as i64;
    let cy2 = 2 * bbox.y as i64 + bbox.height as i64;
    let odd = cx2 % 2 != 0 || cy2 % 2 != 0;
    let side = s + odd as i64;
    let start = |c2: i64| {
        if c2 % 2 == 0 {
            c2 / 2 - s / 2
        } else {
            (c2 - 1) / 2 - s / 2
        }
    };
    Square {
        x0: start(cx2),
        y0: start(cy2),
        side,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CropStatus {
    Accepted,
    RejectedBoundary,
    RejectedResolution,
}

impl CropStatus {
    pub fn name(self) -> &'static str {
        match self {
            CropStatus::Accepted => "accepted",
            CropStatus::RejectedBoundary => "rejected_boundary",
            CropStatus::RejectedResolution => "rejected_resolution",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropOutcome {
    pub status: CropStatus,
    pub square: Square,
    /// Present exactly when accepted.
    pub crop: Option<Image>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropParams {
    /// Smallest acceptable square side before resizing.
    pub min_side: usize,
    /// Side of the resized output.
    pub output_size: usize,
}

impl Default for CropParams {
    fn default() -> Self {
        CropParams {
            min_side: 224,
            output_size: 224,
        }
    }
}

/// Decides the status from geometry alone.
pub fn crop_status(bbox: &BBox, image_width: usize, image_height: usize, params: &CropParams) -> Result<(CropStatus, Square)> {
    bbox.validate(image_width, image_height)?;
    let sq = crop_square(bbox);
    let s = 2 * bbox.width.max(bbox.height) as usize;
    let status = if s < params.min_side {
        CropStatus::RejectedResolution
    } else if sq.x0 < 0
        || sq.y0 < 0
        || sq.x0 + sq.side > image_width as i64
        || sq.y0 + sq.side > image_height as i64
    {
        CropStatus::RejectedBoundary
    } else {
        CropStatus::Accepted
    };
    Ok((status, sq))
}

pub fn crop_face(image: &Image, bbox: &BBox, params: &CropParams) -> Result<CropOutcome> {
    if params.output_size == 0 {
        return Err(Error::Config("output size must be positive".into()));
    }
    let (status, square) = crop_status(bbox, image.width, image.height, params)?;
    let crop = (status == CropStatus::Accepted).then(|| {
        let side = square.side as usize;
        let c = image.crop(square.x0 as usize, square.y0 as usize, side, side);
        if side == params.output_size {
            c
        } else {
            c.resize_bilinear(params.output_size, params.output_size)
        }
    });
    Ok(CropOutcome {
        status,
        square,
        crop,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub path: PathBuf,
    pub bbox: BBox,
}

/// Parses `path,x,y,w,h` rows. A first row starting with `path` is a header.
/// Relative paths resolve against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("path")) {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |m: &str| Error::Parse {
            line: i + 1,
            message: format!("{m}: `{line}`"),
        };
        if cols.len() != 5 {
            return Err(bad("expected path,x,y,w,h"));
        }
        let num = |k: usize| cols[k].parse::<u32>().map_err(|_| bad("bad integer"));
        let p = PathBuf::from(cols[0]);
        out.push(ManifestRecord {
            path: if p.is_absolute() { p } else { base.join(p) },
            bbox: BBox::new(num(1)?, num(2)?, num(3)?, num(4)?),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Summary {
    pub total: usize,
    pub accepted: usize,
    pub rejected_boundary: usize,
    pub rejected_resolution: usize,
    /// Images that could not be read or decoded.
    pub unreadable: usize,
    /// Boxes that do not fit their image.
    pub invalid_bbox: usize,
}

impl Summary {
    pub fn to_text(&self) -> String {
        format!(
            "total: {}\naccepted: {}\nrejected_boundary: {}\nrejected_resolution: {}\nunreadable: {}\ninvalid_bbox: {}\n",
            self.total,
            self.accepted,
            self.rejected_boundary,
            self.rejected_resolution,
            self.unreadable,
            self.invalid_bbox
        )
    }
}

enum RecordResult {
    Status(CropStatus),
    Unreadable,
    Invalid,
}

/// Crops every record into `out_dir` as `crop_NNNNNN.png` (numbered by
/// manifest row, so duplicate rows give separate files) and writes
/// `summary.txt`. Per-record failures are counted, not fatal.
pub fn run_manifest(
    records: &[ManifestRecord],
    out_dir: &Path,
    params: &CropParams,
    workers: usize,
) -> Result<Summary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let process = |(i, r): (usize, &ManifestRecord)| -> Result<RecordResult> {
        let img = match Image::load_png(&r.path) {
            Ok(img) => img,
            Err(_) => return Ok(RecordResult::Unreadable),
        };
        match crop_face(&img, &r.bbox, params) {
            Ok(outcome) => {
                if let Some(c) = &outcome.crop {
                    c.save_png(&out_dir.join(format!("crop_{i:06}.png")))?;
                }
                Ok(RecordResult::Status(outcome.status))
            }
            Err(_) => Ok(RecordResult::Invalid),
        }
    };
    let results: Vec<Result<RecordResult>> = match worker_pool(workers)? {
        Some(pool) => pool.install(|| records.par_iter().enumerate().map(process).collect()),
        None => records.iter().enumerate().map(process).collect(),
    };
    let mut s = Summary {
        total: records.len(),
        ..Default::default()
    };
    for r in results {
        match r? {
            RecordResult::Status(CropStatus::Accepted) => s.accepted += 1,
            RecordResult::Status(CropStatus::RejectedBoundary) => s.rejected_boundary += 1,
            RecordResult::Status(CropStatus::RejectedResolution) => s.rejected_resolution += 1,
            RecordResult::Unreadable => s.unreadable += 1,
            RecordResult::Invalid => s.invalid_bbox += 1,
        }
    }
    atomic_write(&out_dir.join("summary.txt"), s.to_text().as_bytes())?;
    Ok(s)
}
