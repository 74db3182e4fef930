//! Normalized bounding boxes.
//!
//! Boxes are stored as top-left corner plus size in `[0, 1]` image
//! coordinates. Pixel coordinates only exist at ingestion and reporting
//! boundaries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack allowed on the right/bottom edge before clamping kicks in.
pub const EDGE_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("non-finite box coordinate")]
    NonFinite,
    #[error("box size must be positive (w={w}, h={h})")]
    NonPositiveSize { w: f64, h: f64 },
    #[error("box lies entirely outside the frame")]
    OutOfFrame,
    #[error("image size must be positive (got {width}x{height})")]
    BadImageSize { width: u32, height: u32 },
}

/// Axis-aligned box in normalized `(x, y, w, h)` form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BBox {
    /// Builds a box, clamping partially out-of-frame boxes to the image.
    ///
    /// Boxes that are already inside the frame (within [`EDGE_EPSILON`]) are
    /// stored unchanged so that textual round trips stay exact.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(GeometryError::NonPositiveSize { w, h });
        }
        let (x, w) = clamp_axis(x, w)?;
        let (y, h) = clamp_axis(y, h)?;
        Ok(Self { x, y, w, h })
    }

    /// Like [`BBox::new`] but never fails: degenerate input is pushed back
    /// into a minimal valid box. Used by perturbation code.
    pub fn saturating(x: f64, y: f64, w: f64, h: f64) -> Self {
        const MIN_SIZE: f64 = 1e-4;
        let fix = |v: f64, lo: f64, hi: f64| if v.is_finite() { v.min(hi).max(lo) } else { lo };
        let x = fix(x, 0.0, 1.0 - MIN_SIZE);
        let y = fix(y, 0.0, 1.0 - MIN_SIZE);
        let w = fix(w, MIN_SIZE, 1.0 - x);
        let h = fix(h, MIN_SIZE, 1.0 - y);
        Self { x, y, w, h }
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Converts back to pixel `(left, top, width, height)`.
    pub fn to_pixels(&self, image_size: ImageSize) -> (f64, f64, f64, f64) {
        let (iw, ih) = (image_size.width as f64, image_size.height as f64);
        (self.x * iw, self.y * ih, self.w * iw, self.h * ih)
    }
}

fn clamp_axis(start: f64, len: f64) -> Result<(f64, f64), GeometryError> {
    let end = start + len;
    if start >= 1.0 || end <= 0.0 {
        return Err(GeometryError::OutOfFrame);
    }
    let lo = start.max(0.0);
    let hi = if end > 1.0 + EDGE_EPSILON { 1.0 } else { end };
    if lo == start && hi == end {
        return Ok((start, len));
    }
    let clamped = hi - lo;
    if clamped <= 0.0 {
        return Err(GeometryError::OutOfFrame);
    }
    Ok((lo, clamped))
}

/// Image dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::BadImageSize { width, height });
        }
        Ok(Self { width, height })
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Converts a pixel `(left, top, width, height)` box into normalized form.
pub fn normalize_bbox(pixel_box: (f64, f64, f64, f64), image_size: ImageSize) -> Result<BBox, GeometryError> {
    let (px, py, pw, ph) = pixel_box;
    if pw <= 0.0 || ph <= 0.0 {
        return Err(GeometryError::NonPositiveSize { w: pw, h: ph });
    }
    let (iw, ih) = (image_size.width as f64, image_size.height as f64);
    BBox::new(px / iw, py / ih, pw / iw, ph / ih)
}
