//! Box and mask geometry.
//!
//! Masks are stored as [`RleMask`]: row-major runs starting with a run of
//! zeros (possibly empty), alternating zeros and ones. Apart from that
//! leading run no run may be empty, so every mask has exactly one encoding.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid box {0}")]
    InvalidBox(String),
    #[error("mask dimensions must be positive, got {width}x{height}")]
    EmptyDimensions { width: usize, height: usize },
    #[error("run lengths sum to {actual}, expected {expected}")]
    CountsMismatch { expected: usize, actual: usize },
    #[error("zero-length run at index {0} (only the leading run may be empty)")]
    InteriorZeroRun(usize),
    #[error("bitmask has {actual} cells, expected {expected}")]
    BitmaskSize { expected: usize, actual: usize },
    #[error("mask {role:?} is {width}x{height}, expected {expected_width}x{expected_height}")]
    DimensionMismatch {
        role: String,
        width: usize,
        height: usize,
        expected_width: usize,
        expected_height: usize,
    },
    #[error("point ({x}, {y}) outside {width}x{height} image")]
    OutOfRange {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("confidence {1} of mask {0:?} outside [0, 1]")]
    InvalidConfidence(String, f64),
}

/// Axis-aligned box `[x1, y1, x2, y2]` in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        let b = BoundingBox { x1, y1, x2, y2 };
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(GeometryError::InvalidBox(format!(
                "{b}: coordinates must be finite and non-negative"
            )));
        }
        if x2 <= x1 || y2 <= y1 {
            return Err(GeometryError::InvalidBox(format!(
                "{b}: requires x2 > x1 and y2 > y1"
            )));
        }
        Ok(b)
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

    /// Half-open containment: `[x1, x2) x [y1, y2)`.
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x1 && p.x < self.x2 && p.y >= self.y1 && p.y < self.y2
    }

    pub fn within_image(&self, width: f64, height: f64) -> bool {
        self.x2 <= width && self.y2 <= height
    }

    pub fn scaled(&self, s: f64) -> Result<Self, GeometryError> {
        Self::new(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)
    }

    /// Column range `[lo, hi)` of pixels whose centers fall inside the box,
    /// clipped to `0..width`.
    fn pixel_span(lo: f64, hi: f64, limit: usize) -> (usize, usize) {
        let clamp = |v: f64| v.max(0.0).min(limit as f64) as usize;
        let start = clamp((lo - 0.5).ceil());
        let end = clamp((hi - 0.5).ceil());
        (start, end.max(start))
    }

    pub(crate) fn pixel_rect(&self, width: usize, height: usize) -> PixelRect {
        let (c0, c1) = Self::pixel_span(self.x1, self.x2, width);
        let (r0, r1) = Self::pixel_span(self.y1, self.y2, height);
        PixelRect { c0, c1, r0, r1 }
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = GeometryError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// Pixel rectangle, rows `r0..r1`, columns `c0..c1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PixelRect {
    pub c0: usize,
    pub c1: usize,
    pub r0: usize,
    pub r1: usize,
}

impl PixelRect {
    pub fn area(&self) -> usize {
        (self.c1 - self.c0) * (self.r1 - self.r0)
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    /// Pixel `(column, row)` containing the point, or a range error.
    pub fn pixel(&self, width: usize, height: usize) -> Result<(usize, usize), GeometryError> {
        let inside = self.x.is_finite()
            && self.y.is_finite()
            && self.x >= 0.0
            && self.y >= 0.0
            && self.x < width as f64
            && self.y < height as f64;
        if !inside {
            return Err(GeometryError::OutOfRange {
                x: self.x,
                y: self.y,
                width,
                height,
            });
        }
        Ok((self.x as usize, self.y as usize))
    }
}

/// Intersection over union on continuous coordinates.
pub fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Dense binary grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Bitmask {
    pub fn new(width: usize, height: usize) -> Self {
        Bitmask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, GeometryError> {
        if bits.len() != width * height {
            return Err(GeometryError::BitmaskSize {
                expected: width * height,
                actual: bits.len(),
            });
        }
        Ok(Bitmask {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// Run-length encoded binary mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RleMask {
    width: usize,
    height: usize,
    counts: Vec<u32>,
}

impl RleMask {
    /// Validates `counts` against the canonical form.
    pub fn from_counts(width: usize, height: usize, counts: Vec<u32>) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::EmptyDimensions { width, height });
        }
        let expected = width * height;
        let actual: usize = counts.iter().map(|&c| c as usize).sum();
        if actual != expected {
            return Err(GeometryError::CountsMismatch { expected, actual });
        }
        if let Some(i) = counts.iter().skip(1).position(|&c| c == 0) {
            return Err(GeometryError::InteriorZeroRun(i + 1));
        }
        Ok(RleMask {
            width,
            height,
            counts,
        })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self, GeometryError> {
        Self::from_intervals(width, height, std::iter::empty())
    }

    /// Builds a mask from sorted, non-overlapping `[start, end)` ranges of
    /// linear pixel indices. Touching ranges are merged.
    pub(crate) fn from_intervals<I>(width: usize, height: usize, intervals: I) -> Result<Self, GeometryError>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if width == 0 || height == 0 {
            return Err(GeometryError::EmptyDimensions { width, height });
        }
        let total = width * height;
        let mut counts = Vec::new();
        let mut cursor = 0usize;
        let mut last_one_end: Option<usize> = None;
        for (start, end) in intervals {
            if start >= end {
                continue;
            }
            debug_assert!(start >= cursor && end <= total);
            if last_one_end == Some(start) {
                // extend previous ones-run
                *counts.last_mut().unwrap() += (end - start) as u32;
            } else {
                counts.push((start - cursor) as u32);
                counts.push((end - start) as u32);
            }
            cursor = end;
            last_one_end = Some(end);
        }
        if cursor < total || counts.is_empty() {
            counts.push((total - cursor) as u32);
        }
        Ok(RleMask {
            width,
            height,
            counts,
        })
    }

    pub(crate) fn from_rect(width: usize, height: usize, rect: PixelRect) -> Result<Self, GeometryError> {
        let rows = if rect.c0 < rect.c1 { rect.r0..rect.r1 } else { 0..0 };
        Self::from_intervals(
            width,
            height,
            rows.map(|r| (r * width + rect.c0, r * width + rect.c1)),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Number of set pixels.
    pub fn area(&self) -> usize {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    /// `[start, end)` linear index ranges of set pixels, ascending.
    pub fn intervals(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let mut pos = 0usize;
        self.counts.iter().enumerate().filter_map(move |(i, &c)| {
            let start = pos;
            pos += c as usize;
            (i % 2 == 1).then_some((start, pos))
        })
    }

    /// Whether pixel `(x, y)` is set.
    pub fn get(&self, x: usize, y: usize) -> bool {
        let idx = y * self.width + x;
        let mut pos = 0usize;
        for (i, &c) in self.counts.iter().enumerate() {
            pos += c as usize;
            if idx < pos {
                return i % 2 == 1;
            }
        }
        false
    }

    /// Number of set pixels inside a pixel rectangle.
    pub(crate) fn count_in_rect(&self, rect: PixelRect) -> usize {
        if rect.is_empty() {
            return 0;
        }
        let w = self.width;
        let mut total = 0;
        for (start, end) in self.intervals() {
            let first_row = start / w;
            let last_row = (end - 1) / w;
            let lo_row = first_row.max(rect.r0);
            let hi_row = (last_row + 1).min(rect.r1);
            for r in lo_row..hi_row {
                let a = start.max(r * w + rect.c0);
                let b = end.min(r * w + rect.c1);
                if b > a {
                    total += b - a;
                }
            }
        }
        total
    }
}

pub fn rle_encode(bitmask: &Bitmask) -> Result<RleMask, GeometryError> {
    let (w, h) = (bitmask.width, bitmask.height);
    if w == 0 || h == 0 {
        return Err(GeometryError::EmptyDimensions {
            width: w,
            height: h,
        });
    }
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for &bit in &bitmask.bits {
        if bit != current {
            counts.push(run);
            run = 0;
            current = bit;
        }
        run += 1;
    }
    counts.push(run);
    RleMask::from_counts(w, h, counts)
}

pub fn rle_decode(mask: &RleMask) -> Bitmask {
    let mut bits = Vec::with_capacity(mask.width * mask.height);
    for (i, &c) in mask.counts.iter().enumerate() {
        bits.extend(std::iter::repeat_n(i % 2 == 1, c as usize));
    }
    Bitmask {
        width: mask.width,
        height: mask.height,
        bits,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GeometryWarning {
    /// The box does not cover any pixel center of the image.
    BoxOutsideImage,
}

impl fmt::Display for GeometryWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometryWarning::BoxOutsideImage => f.write_str("box covers no pixel of the image; mask is empty"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxRaster {
    pub mask: RleMask,
    pub warning: Option<GeometryWarning>,
}

/// Rasterizes a box: pixel `(row i, col j)` is set iff its center
/// `(j + 0.5, i + 0.5)` lies in `[x1, x2) x [y1, y2)` within the image.
pub fn box_to_mask(bbox: &BoundingBox, width: usize, height: usize) -> Result<BoxRaster, GeometryError> {
    let rect = bbox.pixel_rect(width, height);
    let mask = RleMask::from_rect(width, height, rect)?;
    let warning = rect.is_empty().then_some(GeometryWarning::BoxOutsideImage);
    Ok(BoxRaster { mask, warning })
}

/// A mask labelled with the frame role it segments.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityMask {
    pub role: String,
    pub mask: RleMask,
    pub confidence: f64,
}

/// Resolves overlaps so every pixel belongs to at most one mask.
///
/// A contested pixel goes to the mask with the highest confidence, then the
/// smallest original area, then the earliest position in `masks`. Because
/// that ranking is per mask, the work is a sweep over run boundaries rather
/// than a scan over pixels.
pub fn make_disjoint(masks: &[EntityMask]) -> Result<Vec<EntityMask>, GeometryError> {
    let Some(first) = masks.first() else {
        return Ok(Vec::new());
    };
    let (w, h) = (first.mask.width, first.mask.height);
    for m in masks {
        if m.mask.width != w || m.mask.height != h {
            return Err(GeometryError::DimensionMismatch {
                role: m.role.clone(),
                width: m.mask.width,
                height: m.mask.height,
                expected_width: w,
                expected_height: h,
            });
        }
    }

    let areas: Vec<usize> = par::map_slice(masks, |m| m.mask.area());
    let mut order: Vec<usize> = (0..masks.len()).collect();
    order.sort_by(|&a, &b| {
        masks[b]
            .confidence
            .total_cmp(&masks[a].confidence)
            .then(areas[a].cmp(&areas[b]))
            .then(a.cmp(&b))
    });
    // rank[i] = priority of mask i, 0 is strongest
    let mut rank = vec![0usize; masks.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }

    let mut events: Vec<(usize, bool, usize)> = Vec::new();
    for (i, m) in masks.iter().enumerate() {
        for (s, e) in m.mask.intervals() {
            events.push((s, true, rank[i]));
            events.push((e, false, rank[i]));
        }
    }
    events.sort_unstable();

    let mut owned: Vec<Vec<(usize, usize)>> = vec![Vec::new(); masks.len()];
    let mut active: BTreeSet<usize> = BTreeSet::new();
    let mut k = 0;
    while k < events.len() {
        let pos = events[k].0;
        while k < events.len() && events[k].0 == pos {
            let (_, open, r) = events[k];
            if open {
                active.insert(r);
            } else {
                active.remove(&r);
            }
            k += 1;
        }
        if let (Some(&winner), Some(next)) = (active.first(), events.get(k)) {
            let list = &mut owned[order[winner]];
            match list.last_mut() {
                Some(last) if last.1 == pos => last.1 = next.0,
                _ => list.push((pos, next.0)),
            }
        }
    }

    let rebuilt: Vec<Result<RleMask, GeometryError>> =
        par::map_range(masks.len(), |i| RleMask::from_intervals(w, h, owned[i].iter().copied()));
    masks
        .iter()
        .zip(rebuilt)
        .map(|(m, mask)| {
            Ok(EntityMask {
                role: m.role.clone(),
                mask: mask?,
                confidence: m.confidence,
            })
        })
        .collect()
}

/// True when no pixel is set in more than one mask.
pub fn is_pairwise_disjoint(masks: &[EntityMask]) -> bool {
    let mut all: Vec<(usize, usize)> = masks.iter().flat_map(|m| m.mask.intervals()).collect();
    all.sort_unstable();
    all.windows(2).all(|w| w[0].1 <= w[1].0)
}

/// What a point query is tested against.
#[derive(Debug, Clone, Copy)]
pub enum CoverSource<'a> {
    Masks(&'a [EntityMask]),
    Boxes(&'a [(String, BoundingBox)]),
}

/// Roles whose mask pixel or box (half-open) covers `point`, in input order.
pub fn covering_set(
    source: CoverSource<'_>,
    width: usize,
    height: usize,
    point: Point,
) -> Result<Vec<String>, GeometryError> {
    let (col, row) = point.pixel(width, height)?;
    Ok(match source {
        CoverSource::Masks(masks) => masks
            .iter()
            .filter(|m| m.mask.get(col, row))
            .map(|m| m.role.clone())
            .collect(),
        CoverSource::Boxes(boxes) => boxes
            .iter()
            .filter(|(_, b)| b.contains(point))
            .map(|(role, _)| role.clone())
            .collect(),
    })
}

/// The mask file: `{width, height, entities: [{role, confidence, counts}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMaskSet", into = "RawMaskSet")]
pub struct MaskSet {
    pub width: usize,
    pub height: usize,
    pub entities: Vec<EntityMask>,
}

impl MaskSet {
    pub fn new(width: usize, height: usize, entities: Vec<EntityMask>) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::EmptyDimensions { width, height });
        }
        for e in &entities {
            if e.mask.width != width || e.mask.height != height {
                return Err(GeometryError::DimensionMismatch {
                    role: e.role.clone(),
                    width: e.mask.width,
                    height: e.mask.height,
                    expected_width: width,
                    expected_height: height,
                });
            }
            if !(0.0..=1.0).contains(&e.confidence) {
                return Err(GeometryError::InvalidConfidence(e.role.clone(), e.confidence));
            }
        }
        Ok(MaskSet {
            width,
            height,
            entities,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawMaskSet {
    width: usize,
    height: usize,
    entities: Vec<RawEntity>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawEntity {
    role: String,
    confidence: f64,
    counts: Vec<u32>,
}

impl TryFrom<RawMaskSet> for MaskSet {
    type Error = GeometryError;

    fn try_from(raw: RawMaskSet) -> Result<Self, Self::Error> {
        let entities = raw
            .entities
            .into_iter()
            .map(|e| {
                Ok(EntityMask {
                    mask: RleMask::from_counts(raw.width, raw.height, e.counts)?,
                    role: e.role,
                    confidence: e.confidence,
                })
            })
            .collect::<Result<Vec<_>, GeometryError>>()?;
        MaskSet::new(raw.width, raw.height, entities)
    }
}

impl From<MaskSet> for RawMaskSet {
    fn from(set: MaskSet) -> Self {
        RawMaskSet {
            width: set.width,
            height: set.height,
            entities: set
                .entities
                .into_iter()
                .map(|e| RawEntity {
                    role: e.role,
                    confidence: e.confidence,
                    counts: e.mask.counts,
                })
                .collect(),
        }
    }
}
