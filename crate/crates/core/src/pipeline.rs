//! One scene end to end: situation and lexicon give the caption, the
//! grounded boxes go to the segmenter, the masks are made disjoint, and the
//! result is kept as a [`SceneBundle`].

use std::collections::HashSet;
use std::io::{Read, Write};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{FrameError, FrameLexicon, Violation, BLANK_NOUN};
use crate::geometry::{is_pairwise_disjoint, make_disjoint, BoundingBox, EntityMask, GeometryError, MaskSet};
use crate::segmenter::{Backend, Prompt, SegmentRequest};
use crate::swig::{Annotation, PredictedFrame};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("situation does not fit its frame: {}", join_violations(.0))]
    Validation(Vec<Violation>),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("bundle JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bundle I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid bundle: {0}")]
    InvalidBundle(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SituationEntry {
    pub role: String,
    pub noun: String,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
}

/// A verb with, per role, a noun (possibly blank) and an optional box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedSituation {
    pub verb: String,
    #[serde(rename = "roles")]
    pub entries: Vec<SituationEntry>,
}

impl GroundedSituation {
    /// Ground truth as a situation: per role the noun most annotators chose
    /// (ties go to the earliest annotator) and the shared box.
    pub fn from_annotation(a: &Annotation) -> Self {
        let entries = a
            .roles
            .iter()
            .map(|r| {
                let votes = |n: &String| r.nouns.iter().filter(|m| *m == n).count();
                let noun = r
                    .nouns
                    .iter()
                    .fold(None::<&String>, |best, n| match best {
                        Some(b) if votes(b) >= votes(n) => Some(b),
                        _ => Some(n),
                    })
                    .cloned()
                    .unwrap_or_default();
                SituationEntry {
                    role: r.role.clone(),
                    noun,
                    bbox: r.bbox,
                }
            })
            .collect();
        GroundedSituation {
            verb: a.verb.clone(),
            entries,
        }
    }

    pub fn from_prediction(verb: &str, frame: &PredictedFrame) -> Self {
        GroundedSituation {
            verb: verb.to_string(),
            entries: frame
                .roles
                .iter()
                .map(|r| SituationEntry {
                    role: r.role.clone(),
                    noun: r.noun.clone(),
                    bbox: r.bbox,
                })
                .collect(),
        }
    }

    pub fn entry(&self, role: &str) -> Option<&SituationEntry> {
        self.entries.iter().find(|e| e.role == role)
    }

    /// `(role, box)` for every grounded role, in entry order.
    pub fn boxes(&self) -> Vec<(String, BoundingBox)> {
        self.entries
            .iter()
            .filter_map(|e| e.bbox.map(|b| (e.role.clone(), b)))
            .collect()
    }

    fn noun_pairs(&self) -> Vec<(&str, &str)> {
        self.entries.iter().map(|e| (e.role.as_str(), e.noun.as_str())).collect()
    }
}

/// Everything needed to build one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneInput {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    pub width: usize,
    pub height: usize,
    #[serde(flatten)]
    pub situation: GroundedSituation,
}

impl SceneInput {
    pub fn from_annotation(a: &Annotation, image_ref: Option<String>) -> Self {
        SceneInput {
            image_id: a.image_id.clone(),
            image_ref,
            width: a.width as usize,
            height: a.height as usize,
            situation: GroundedSituation::from_annotation(a),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend_id: String,
    /// Masks came from the box-fill fallback instead of the requested backend.
    pub degraded: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub created_unix_ms: u64,
    pub segment_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub image_id: String,
    pub image_ref: Option<String>,
    pub width: usize,
    pub height: usize,
    /// Entries in frame order.
    pub situation: GroundedSituation,
    /// Display strings aligned with `situation.entries`.
    pub displays: Vec<String>,
    pub caption: String,
    /// Pairwise disjoint; only grounded roles have a mask.
    pub masks: MaskSet,
    pub provenance: Provenance,
}

impl SceneBundle {
    pub fn display(&self, role: &str) -> Option<&str> {
        self.situation
            .entries
            .iter()
            .position(|e| e.role == role)
            .map(|i| self.displays[i].as_str())
    }

    /// Equality ignoring timestamps and timings.
    pub fn same_content(&self, other: &SceneBundle) -> bool {
        let strip = |b: &SceneBundle| {
            let mut b = b.clone();
            b.provenance.created_unix_ms = 0;
            b.provenance.segment_ms = 0.0;
            b
        };
        strip(self) == strip(other)
    }

    /// Re-renders the caption and compares it with the stored one.
    pub fn caption_matches(&self, lexicon: &FrameLexicon) -> Result<bool, FrameError> {
        Ok(lexicon.render_caption(&self.situation.verb, &self.situation.noun_pairs())? == self.caption)
    }

    fn validate(&self) -> Result<(), PipelineError> {
        if self.masks.width != self.width || self.masks.height != self.height {
            return Err(PipelineError::InvalidBundle(format!(
                "masks are {}x{}, image is {}x{}",
                self.masks.width, self.masks.height, self.width, self.height
            )));
        }
        let roles: HashSet<&str> = self.situation.entries.iter().map(|e| e.role.as_str()).collect();
        let mut masked = HashSet::new();
        for m in &self.masks.entities {
            if !roles.contains(m.role.as_str()) {
                return Err(PipelineError::InvalidBundle(format!(
                    "mask for role {:?} not in the situation",
                    m.role
                )));
            }
            if !masked.insert(m.role.as_str()) {
                return Err(PipelineError::InvalidBundle(format!("two masks for role {:?}", m.role)));
            }
        }
        if !is_pairwise_disjoint(&self.masks.entities) {
            return Err(PipelineError::InvalidBundle("masks overlap".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BuildOptions {
    /// Fixed creation time; the wall clock when `None`.
    pub created_unix_ms: Option<u64>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Builds a scene bundle.
///
/// `backend == None` means no segmenter is configured: box-fill masks are
/// used and the bundle is flagged degraded. A failing backend also falls
/// back to box-fill instead of failing the build.
pub fn build_scene(
    input: &SceneInput,
    lexicon: &FrameLexicon,
    backend: Option<&Backend>,
    options: BuildOptions,
) -> Result<SceneBundle, PipelineError> {
    let violations = lexicon.validate_situation(&input.situation);
    if !violations.is_empty() {
        return Err(PipelineError::Validation(violations));
    }
    if input.width == 0 || input.height == 0 {
        return Err(GeometryError::EmptyDimensions {
            width: input.width,
            height: input.height,
        }
        .into());
    }
    let frame = lexicon.frame(&input.situation.verb)?;
    let mut entries = input.situation.entries.clone();
    entries.sort_by_key(|e| frame.role_index(&e.role));
    let situation = GroundedSituation {
        verb: input.situation.verb.clone(),
        entries,
    };
    let caption = lexicon.render_caption(&situation.verb, &situation.noun_pairs())?;
    let displays = situation
        .entries
        .iter()
        .map(|e| {
            if e.noun == BLANK_NOUN {
                String::new()
            } else {
                lexicon.display(&e.noun).to_string()
            }
        })
        .collect();

    let mut warnings = Vec::new();
    let prompts: Vec<Prompt> = situation
        .boxes()
        .into_iter()
        .map(|(role, bbox)| Prompt { role, bbox })
        .collect();
    let (backend_id, degraded, segment_ms, raw_masks) = if prompts.is_empty() {
        (backend.map_or(Backend::BoxFill.id(), Backend::id).to_string(), false, 0.0, Vec::new())
    } else {
        let request = SegmentRequest {
            image_ref: input.image_ref.clone().unwrap_or_else(|| input.image_id.clone()),
            width: input.width,
            height: input.height,
            prompts,
        };
        let attempt = match backend {
            Some(b) => b.segment(&request).map_err(|e| {
                warnings.push(format!("segmenter {} failed ({e}); using box-fill masks", b.id()));
            }),
            None => {
                warnings.push("no segmenter configured; using box-fill masks".to_string());
                Err(())
            }
        };
        match attempt {
            Ok(resp) => (resp.backend_id, false, resp.elapsed_ms, resp.entities),
            Err(()) => {
                let resp = Backend::BoxFill
                    .segment(&request)
                    .map_err(|e| PipelineError::InvalidBundle(e.to_string()))?;
                (resp.backend_id, true, resp.elapsed_ms, resp.entities)
            }
        }
    };
    for w in &warnings {
        log::warn!("{}: {w}", input.image_id);
    }
    let masks: Vec<EntityMask> = make_disjoint(&raw_masks)?;
    let masks = MaskSet::new(input.width, input.height, masks)?;

    Ok(SceneBundle {
        image_id: input.image_id.clone(),
        image_ref: input.image_ref.clone(),
        width: input.width,
        height: input.height,
        situation,
        displays,
        caption,
        masks,
        provenance: Provenance {
            backend_id,
            degraded,
            warnings,
            created_unix_ms: options.created_unix_ms.unwrap_or_else(now_ms),
            segment_ms,
        },
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct RawBundle {
    image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_ref: Option<String>,
    width: usize,
    height: usize,
    verb: String,
    roles: Vec<RawBundleRole>,
    caption: String,
    masks: MaskSet,
    provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawBundleRole {
    role: String,
    noun: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    display: String,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    bbox: Option<BoundingBox>,
}

pub fn bundle_to_json(bundle: &SceneBundle) -> String {
    let raw = RawBundle {
        image_id: bundle.image_id.clone(),
        image_ref: bundle.image_ref.clone(),
        width: bundle.width,
        height: bundle.height,
        verb: bundle.situation.verb.clone(),
        roles: bundle
            .situation
            .entries
            .iter()
            .zip(&bundle.displays)
            .map(|(e, d)| RawBundleRole {
                role: e.role.clone(),
                noun: e.noun.clone(),
                display: d.clone(),
                bbox: e.bbox,
            })
            .collect(),
        caption: bundle.caption.clone(),
        masks: bundle.masks.clone(),
        provenance: bundle.provenance.clone(),
    };
    serde_json::to_string_pretty(&raw).expect("bundle serialization")
}

pub fn save_bundle<W: Write>(bundle: &SceneBundle, mut sink: W) -> Result<(), PipelineError> {
    sink.write_all(bundle_to_json(bundle).as_bytes())?;
    sink.write_all(b"\n")?;
    Ok(())
}

/// Reads a bundle and checks its invariants (mask dims, disjointness,
/// masked roles present in the situation).
pub fn load_bundle<R: Read>(source: R) -> Result<SceneBundle, PipelineError> {
    let raw: RawBundle = serde_json::from_reader(source)?;
    let displays = raw
        .roles
        .iter()
        .map(|r| if r.display.is_empty() { r.noun.clone() } else { r.display.clone() })
        .collect();
    let bundle = SceneBundle {
        image_id: raw.image_id,
        image_ref: raw.image_ref,
        width: raw.width,
        height: raw.height,
        situation: GroundedSituation {
            verb: raw.verb,
            entries: raw
                .roles
                .into_iter()
                .map(|r| SituationEntry {
                    role: r.role,
                    noun: r.noun,
                    bbox: r.bbox,
                })
                .collect(),
        },
        displays,
        caption: raw.caption,
        masks: raw.masks,
        provenance: raw.provenance,
    };
    bundle.validate()?;
    Ok(bundle)
}

pub fn load_bundle_str(source: &str) -> Result<SceneBundle, PipelineError> {
    load_bundle(source.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::box_to_mask;
    use crate::swig::RoleAnnotation;

    fn lexicon() -> FrameLexicon {
        FrameLexicon::load(
            "riding\tAgent,Vehicle,Place\tA {Agent} rides the {Vehicle} at a ~{Place}\n".as_bytes(),
        )
        .unwrap()
    }

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    fn input(place_box: Option<BoundingBox>) -> SceneInput {
        SceneInput {
            image_id: "riding_1".into(),
            image_ref: None,
            width: 40,
            height: 30,
            situation: GroundedSituation {
                verb: "riding".into(),
                entries: vec![
                    SituationEntry {
                        role: "Vehicle".into(),
                        noun: "motorcycle".into(),
                        bbox: Some(bx(5.0, 12.0, 35.0, 28.0)),
                    },
                    SituationEntry {
                        role: "Agent".into(),
                        noun: "man".into(),
                        bbox: Some(bx(12.0, 2.0, 24.0, 20.0)),
                    },
                    SituationEntry {
                        role: "Place".into(),
                        noun: "road".into(),
                        bbox: place_box,
                    },
                ],
            },
        }
    }

    const FIXED: BuildOptions = BuildOptions {
        created_unix_ms: Some(1),
    };

    #[test]
    fn builds_in_frame_order_with_disjoint_masks() {
        let b = build_scene(&input(Some(bx(0.0, 20.0, 40.0, 30.0))), &lexicon(), Some(&Backend::BoxFill), FIXED).unwrap();
        assert_eq!(b.caption, "A man rides the motorcycle at a road");
        let roles: Vec<&str> = b.situation.entries.iter().map(|e| e.role.as_str()).collect();
        assert_eq!(roles, ["Agent", "Vehicle", "Place"]);
        assert_eq!(b.masks.entities.len(), 3);
        assert!(is_pairwise_disjoint(&b.masks.entities));
        assert!(!b.provenance.degraded);
        // smallest box keeps the overlap
        let agent = box_to_mask(&bx(12.0, 2.0, 24.0, 20.0), 40, 30).unwrap().mask;
        assert_eq!(b.masks.entities[0].mask, agent);
        assert!(b.caption_matches(&lexicon()).unwrap());
    }

    #[test]
    fn ungrounded_role_has_no_mask() {
        let b = build_scene(&input(None), &lexicon(), Some(&Backend::BoxFill), FIXED).unwrap();
        let roles: Vec<&str> = b.masks.entities.iter().map(|m| m.role.as_str()).collect();
        assert_eq!(roles, ["Agent", "Vehicle"]);
    }

    #[test]
    fn unconfigured_backend_degrades() {
        let b = build_scene(&input(None), &lexicon(), None, FIXED).unwrap();
        assert!(b.provenance.degraded);
        assert_eq!(b.provenance.backend_id, "box-fill");
        assert_eq!(b.provenance.warnings.len(), 1);
    }

    #[test]
    fn validation_failure_is_error() {
        let mut i = input(None);
        i.situation.entries.pop();
        assert!(matches!(
            build_scene(&i, &lexicon(), None, FIXED),
            Err(PipelineError::Validation(v)) if v == vec![Violation::MissingRole("Place".into())]
        ));
    }

    #[test]
    fn round_trip_and_corruption() {
        let b = build_scene(&input(None), &lexicon(), Some(&Backend::BoxFill), FIXED).unwrap();
        let json = bundle_to_json(&b);
        assert_eq!(load_bundle_str(&json).unwrap(), b);

        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        // give the vehicle the full image, overlapping the agent
        v["masks"]["entities"][1]["counts"] = serde_json::json!([0, 1200]);
        let err = load_bundle_str(&v.to_string()).unwrap_err();
        assert!(matches!(err, PipelineError::InvalidBundle(ref m) if m.contains("overlap")), "{err}");
    }

    #[test]
    fn caption_only_bundle_is_valid() {
        let mut i = input(None);
        for e in &mut i.situation.entries {
            e.bbox = None;
        }
        let b = build_scene(&i, &lexicon(), Some(&Backend::BoxFill), FIXED).unwrap();
        assert!(b.masks.entities.is_empty());
        assert_eq!(load_bundle_str(&bundle_to_json(&b)).unwrap(), b);
    }

    #[test]
    fn majority_noun_from_annotation() {
        let a = Annotation {
            image_id: "i".into(),
            width: 10,
            height: 10,
            verb: "riding".into(),
            roles: vec![RoleAnnotation {
                role: "Agent".into(),
                nouns: ["person".into(), "man".into(), "man".into()],
                bbox: None,
            }],
        };
        assert_eq!(GroundedSituation::from_annotation(&a).entries[0].noun, "man");
    }
}
