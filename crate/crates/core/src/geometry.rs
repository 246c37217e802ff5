//! Box representations and the overlap measures built on them.
//!
//! Two box forms are used throughout the crate: [`BBoxNorm`] is the
//! annotation-file form (center, size as fractions of the image) and
//! [`BBoxPix`] is the corner form in pixels used for matching. Corners are
//! treated as continuous coordinates, so the area of a corner box is simply
//! `(x2 - x1) * (y2 - y1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized center-form box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBoxNorm {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBoxNorm {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = BBoxNorm { cx, cy, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.cx)
            && (0.0..=1.0).contains(&self.cy)
            && self.w > 0.0
            && self.w <= 1.0
            && self.h > 0.0
            && self.h <= 1.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "normalized box out of range: cx={} cy={} w={} h={}",
                self.cx, self.cy, self.w, self.h
            )))
        }
    }

    /// Corner form on an `img_w` x `img_h` image.
    pub fn to_pixels(&self, img_w: f64, img_h: f64) -> BBoxPix {
        BBoxPix {
            x1: (self.cx - self.w / 2.0) * img_w,
            y1: (self.cy - self.h / 2.0) * img_h,
            x2: (self.cx + self.w / 2.0) * img_w,
            y2: (self.cy + self.h / 2.0) * img_h,
        }
    }
}

/// Pixel corner-form box, `x1 < x2`, `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBoxPix {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBoxPix {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBoxPix { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite());
        if finite && self.x1 < self.x2 && self.y1 < self.y2 {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "degenerate box ({}, {}, {}, {})",
                self.x1, self.y1, self.x2, self.y2
            )))
        }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Inverse of [`BBoxNorm::to_pixels`]. Fails if the result violates the
    /// normalized-box invariants.
    pub fn to_normalized(&self, img_w: f64, img_h: f64) -> Result<BBoxNorm> {
        if !(img_w > 0.0 && img_h > 0.0) {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        let (cx, cy) = self.center();
        BBoxNorm::new(
            snap_unit(cx / img_w),
            snap_unit(cy / img_h),
            snap_unit(self.width() / img_w),
            snap_unit(self.height() / img_h),
        )
    }
}

/// Pulls values within round-off of the unit interval's ends back inside it.
fn snap_unit(v: f64) -> f64 {
    const EPS: f64 = 1e-12;
    if (-EPS..0.0).contains(&v) {
        0.0
    } else if v > 1.0 && v <= 1.0 + EPS {
        1.0
    } else {
        v
    }
}

/// Box shape only: width and height in pixels.
///
/// Serializes as a two-element array `[w, h]`, the layout anchor lists use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Wh {
    pub w: f64,
    pub h: f64,
}

impl Wh {
    pub fn new(w: f64, h: f64) -> Result<Self> {
        let s = Wh { w, h };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.is_finite() && self.h.is_finite() && self.w > 0.0 && self.h > 0.0 {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "shape must have positive finite sides, got ({}, {})",
                self.w, self.h
            )))
        }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn scaled(&self, s: f64) -> Wh {
        Wh {
            w: self.w * s,
            h: self.h * s,
        }
    }

    /// The box of this shape centered at `(cx, cy)`.
    pub fn centered_at(&self, cx: f64, cy: f64) -> BBoxPix {
        BBoxPix {
            x1: cx - self.w / 2.0,
            y1: cy - self.h / 2.0,
            x2: cx + self.w / 2.0,
            y2: cy + self.h / 2.0,
        }
    }
}

impl From<[f64; 2]> for Wh {
    fn from(v: [f64; 2]) -> Self {
        Wh { w: v[0], h: v[1] }
    }
}

impl From<Wh> for [f64; 2] {
    fn from(s: Wh) -> Self {
        [s.w, s.h]
    }
}

/// Intersection over union of two corner boxes. Touching boxes give 0.
pub fn iou(a: &BBoxPix, b: &BBoxPix) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// `1 - iou(a, b)`: the clustering dissimilarity between a real and a predicted box.
pub fn iou_distance(a: &BBoxPix, b: &BBoxPix) -> Result<f64> {
    Ok(1.0 - iou(a, b)?)
}

/// IoU of two shapes placed on a common center.
pub fn wh_iou(a: Wh, b: Wh) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(wh_iou_unchecked(a, b))
}

#[inline]
pub(crate) fn wh_iou_unchecked(a: Wh, b: Wh) -> f64 {
    let inter = a.w.min(b.w) * a.h.min(b.h);
    inter / (a.area() + b.area() - inter)
}
