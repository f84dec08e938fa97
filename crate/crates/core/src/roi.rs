//! Region-of-interest queries over a scene bundle.
//!
//! In mask mode a point resolves against the disjoint masks, so it names at
//! most one entity. Bbox mode answers from the raw boxes and may return
//! several overlapping candidates; [`ambiguity_report`] measures how often.

use std::num::NonZeroUsize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{covering_set, BoundingBox, CoverSource, GeometryError, Point};
use crate::par;
use crate::pipeline::SceneBundle;

#[derive(Debug, Error, PartialEq)]
pub enum RoiError {
    #[error(transparent)]
    OutOfRange(#[from] GeometryError),
    #[error("region {0} covers no pixel of the image")]
    DegenerateRegion(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryMode {
    #[default]
    Mask,
    Bbox,
}

impl std::str::FromStr for QueryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mask" => Ok(QueryMode::Mask),
            "bbox" => Ok(QueryMode::Bbox),
            other => Err(format!("unknown mode {other:?}, expected mask or bbox")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub role: String,
    pub noun: String,
    pub display: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolveResult {
    pub mode: QueryMode,
    pub hits: Vec<Hit>,
    pub ambiguous: bool,
    pub background: bool,
    pub spoken_text: String,
}

fn hit(bundle: &SceneBundle, role: &str) -> Hit {
    let noun = bundle
        .situation
        .entry(role)
        .map(|e| e.noun.clone())
        .unwrap_or_default();
    let display = bundle.display(role).unwrap_or_default().to_string();
    let confidence = bundle
        .masks
        .entities
        .iter()
        .find(|m| m.role == role)
        .map_or(1.0, |m| m.confidence);
    Hit {
        role: role.to_string(),
        noun,
        display,
        confidence,
    }
}

fn phrase(h: &Hit) -> String {
    let role = h.role.to_lowercase();
    if h.display.is_empty() {
        format!("the {role}")
    } else {
        format!("{}, the {role}", h.display)
    }
}

fn spoken(hits: &[Hit]) -> String {
    match hits {
        [] => "background".to_string(),
        [one] => phrase(one),
        many => format!(
            "{} candidates: {}",
            many.len(),
            many.iter().map(phrase).collect::<Vec<_>>().join("; ")
        ),
    }
}

/// Which entity is at `point`.
pub fn resolve_point(bundle: &SceneBundle, point: Point, mode: QueryMode) -> Result<ResolveResult, RoiError> {
    let roles = match mode {
        QueryMode::Mask => covering_set(
            CoverSource::Masks(&bundle.masks.entities),
            bundle.width,
            bundle.height,
            point,
        )?,
        QueryMode::Bbox => {
            let boxes = bundle.situation.boxes();
            covering_set(CoverSource::Boxes(&boxes), bundle.width, bundle.height, point)?
        }
    };
    let hits: Vec<Hit> = roles.iter().map(|r| hit(bundle, r)).collect();
    Ok(ResolveResult {
        mode,
        ambiguous: hits.len() > 1,
        background: hits.is_empty(),
        spoken_text: spoken(&hits),
        hits,
    })
}

/// Query at the image center, the default target when no point is given.
pub fn resolve_center(bundle: &SceneBundle, mode: QueryMode) -> Result<ResolveResult, RoiError> {
    let p = Point::new(bundle.width as f64 / 2.0, bundle.height as f64 / 2.0);
    resolve_point(bundle, p, mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionHit {
    pub role: String,
    pub noun: String,
    pub display: String,
    /// Share of the region's in-image pixels covered by this entity's mask.
    pub fraction: f64,
}

/// Entities under a region, largest overlap first; zero overlaps omitted.
pub fn resolve_region(bundle: &SceneBundle, region: &BoundingBox) -> Result<Vec<RegionHit>, RoiError> {
    let rect = region.pixel_rect(bundle.width, bundle.height);
    if rect.is_empty() {
        return Err(RoiError::DegenerateRegion(region.to_string()));
    }
    let total = rect.area() as f64;
    let mut hits: Vec<(usize, RegionHit)> = bundle
        .masks
        .entities
        .iter()
        .enumerate()
        .filter_map(|(i, m)| {
            let n = m.mask.count_in_rect(rect);
            (n > 0).then(|| {
                let h = hit(bundle, &m.role);
                (
                    i,
                    RegionHit {
                        role: h.role,
                        noun: h.noun,
                        display: h.display,
                        fraction: n as f64 / total,
                    },
                )
            })
        })
        .collect();
    hits.sort_by(|a, b| b.1.fraction.total_cmp(&a.1.fraction).then(a.0.cmp(&b.0)));
    Ok(hits.into_iter().map(|(_, h)| h).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmbiguitySummary {
    pub spacing: usize,
    pub points: usize,
    pub bbox_ambiguous: usize,
    pub mask_ambiguous: usize,
    pub bbox_background: usize,
    pub mask_background: usize,
    pub bbox_fraction: f64,
    pub mask_fraction: f64,
}

/// Scans pixel centers `(i * spacing + 0.5, j * spacing + 0.5)` and counts
/// points claimed by more than one entity in each mode.
pub fn ambiguity_report(bundle: &SceneBundle, spacing: NonZeroUsize) -> AmbiguitySummary {
    let s = spacing.get();
    let (w, h) = (bundle.width, bundle.height);
    let boxes = bundle.situation.boxes();
    // per-pixel count of covering masks, only on sampled rows
    let rows: Vec<usize> = (0..h).step_by(s).collect();
    let per_row = par::map_slice(&rows, |&y| {
        let mut mask_count = vec![0u8; w];
        let (row_start, row_end) = (y * w, (y + 1) * w);
        for m in &bundle.masks.entities {
            for (start, end) in m.mask.intervals() {
                if start >= row_end {
                    break;
                }
                if end <= row_start {
                    continue;
                }
                let (a, b) = (start.max(row_start) - row_start, end.min(row_end) - row_start);
                for c in &mut mask_count[a..b] {
                    *c = c.saturating_add(1);
                }
            }
        }
        let mut counts = [0usize; 5];
        for x in (0..w).step_by(s) {
            let p = Point::new(x as f64 + 0.5, y as f64 + 0.5);
            let nb = boxes.iter().filter(|(_, b)| b.contains(p)).count();
            let nm = mask_count[x] as usize;
            counts[0] += 1;
            counts[1] += (nb > 1) as usize;
            counts[2] += (nm > 1) as usize;
            counts[3] += (nb == 0) as usize;
            counts[4] += (nm == 0) as usize;
        }
        counts
    });
    let mut t = [0usize; 5];
    for c in per_row {
        for i in 0..5 {
            t[i] += c[i];
        }
    }
    let frac = |n: usize| if t[0] == 0 { 0.0 } else { n as f64 / t[0] as f64 };
    AmbiguitySummary {
        spacing: s,
        points: t[0],
        bbox_ambiguous: t[1],
        mask_ambiguous: t[2],
        bbox_background: t[3],
        mask_background: t[4],
        bbox_fraction: frac(t[1]),
        mask_fraction: frac(t[2]),
    }
}
