//! SWiG-style annotation and prediction files.
//!
//! Annotation file: a JSON object keyed by image id,
//! `{width, height, verb, frames: [3 x {role: noun}], bb: {role: [x1, y1, x2, y2]}}`.
//! An ungrounded role carries `[-1, -1, -1, -1]` (or no `bb` entry) and is
//! normalized to "no box" on load.
//!
//! Prediction file: a JSON array of
//! `{image_id, verbs: [{verb, score, frame?}], gt_frame?}` where a frame maps
//! role to `{noun, box?, box_absent?}`.

use std::collections::HashSet;
use std::io::Read;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{FrameLexicon, BLANK_NOUN, MAX_ROLES};
use crate::geometry::BoundingBox;
use crate::par;

pub const ANNOTATORS: usize = 3;
pub const MAX_VERB_GUESSES: usize = 5;
const ABSENT_BOX: [f64; 4] = [-1.0, -1.0, -1.0, -1.0];

/// One problem with one record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordIssue {
    pub image_id: String,
    pub field: String,
    pub message: String,
    pub kind: IssueKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    /// Structure or types do not match the documented schema.
    Schema,
    /// Well-formed, but a value breaks an invariant (e.g. box outside image).
    Validation,
}

impl std::fmt::Display for RecordIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "image {:?}, field {}: {}", self.image_id, self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum SwigError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Record(RecordIssue),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// First issue aborts the parse.
    #[default]
    Strict,
    /// Offending records are skipped and their issues collected.
    Lenient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub issues: Vec<RecordIssue>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoleAnnotation {
    pub role: String,
    /// One noun per annotator; [`BLANK_NOUN`] when left empty.
    pub nouns: [String; ANNOTATORS],
    /// `None` for an ungrounded role.
    pub bbox: Option<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub verb: String,
    pub roles: Vec<RoleAnnotation>,
}

impl Annotation {
    pub fn role(&self, name: &str) -> Option<&RoleAnnotation> {
        self.roles.iter().find(|r| r.role == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedRole {
    pub role: String,
    pub noun: String,
    pub bbox: Option<BoundingBox>,
    /// The model states this role has no box.
    pub box_absent: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictedFrame {
    pub roles: Vec<PredictedRole>,
}

impl PredictedFrame {
    pub fn role(&self, name: &str) -> Option<&PredictedRole> {
        self.roles.iter().find(|r| r.role == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerbGuess {
    pub verb: String,
    pub score: f64,
    pub frame: Option<PredictedFrame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub image_id: String,
    /// Best first, at most five.
    pub top5: Vec<VerbGuess>,
    /// Frame predicted when the ground-truth verb is supplied.
    pub gt_conditioned: Option<PredictedFrame>,
}

impl Prediction {
    pub fn top1(&self) -> &VerbGuess {
        &self.top5[0]
    }

    pub fn guess(&self, verb: &str) -> Option<&VerbGuess> {
        self.top5.iter().find(|g| g.verb == verb)
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct RawAnnotation {
    width: u32,
    height: u32,
    verb: String,
    frames: Vec<IndexMap<String, String>>,
    #[serde(default)]
    bb: IndexMap<String, Vec<f64>>,
}

#[derive(Debug, Deserialize, Serialize)]
struct RawPrediction {
    image_id: String,
    verbs: Vec<RawGuess>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_frame: Option<IndexMap<String, RawRole>>,
}

#[derive(Debug, Deserialize, Serialize)]
struct RawGuess {
    verb: String,
    score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame: Option<IndexMap<String, RawRole>>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawRole {
    noun: String,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    bbox: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    box_absent: bool,
}

struct IssueSink<'a> {
    image_id: &'a str,
}

impl IssueSink<'_> {
    fn schema(&self, field: impl Into<String>, message: impl Into<String>) -> RecordIssue {
        self.issue(IssueKind::Schema, field, message)
    }

    fn validation(&self, field: impl Into<String>, message: impl Into<String>) -> RecordIssue {
        self.issue(IssueKind::Validation, field, message)
    }

    fn issue(&self, kind: IssueKind, field: impl Into<String>, message: impl Into<String>) -> RecordIssue {
        RecordIssue {
            image_id: self.image_id.to_string(),
            field: field.into(),
            message: message.into(),
            kind,
        }
    }
}

fn parse_box(sink: &IssueSink<'_>, field: &str, v: &[f64]) -> Result<Option<BoundingBox>, RecordIssue> {
    let arr: [f64; 4] = v
        .try_into()
        .map_err(|_| sink.schema(field, format!("expected [x1, y1, x2, y2], got {} values", v.len())))?;
    if arr == ABSENT_BOX {
        return Ok(None);
    }
    BoundingBox::try_from(arr)
        .map(Some)
        .map_err(|e| sink.validation(field, e.to_string()))
}

fn convert_annotation(image_id: &str, value: serde_json::Value) -> Result<Annotation, RecordIssue> {
    let sink = IssueSink { image_id };
    let raw: RawAnnotation = serde_json::from_value(value).map_err(|e| {
        let msg = e.to_string();
        let field = msg
            .split('`')
            .nth(1)
            .map_or_else(|| "record".to_string(), str::to_string);
        sink.schema(field, msg)
    })?;
    if raw.width == 0 || raw.height == 0 {
        return Err(sink.schema("width/height", "image dimensions must be positive"));
    }
    if raw.frames.len() != ANNOTATORS {
        return Err(sink.schema(
            "frames",
            format!("expected {ANNOTATORS} annotator frames, found {}", raw.frames.len()),
        ));
    }
    let roles: Vec<&String> = raw.frames[0].keys().collect();
    if roles.is_empty() || roles.len() > MAX_ROLES {
        return Err(sink.schema("frames", format!("role count {} outside 1..={MAX_ROLES}", roles.len())));
    }
    for (i, f) in raw.frames.iter().enumerate().skip(1) {
        if f.len() != roles.len() || !roles.iter().all(|r| f.contains_key(*r)) {
            return Err(sink.schema(format!("frames[{i}]"), "annotators disagree on the role set"));
        }
    }
    for role in raw.bb.keys() {
        if !raw.frames[0].contains_key(role) {
            return Err(sink.schema(format!("bb.{role}"), "box for a role absent from frames"));
        }
    }
    let mut out = Vec::with_capacity(roles.len());
    for role in roles {
        let field = format!("bb.{role}");
        let bbox = match raw.bb.get(role) {
            Some(v) => parse_box(&sink, &field, v)?,
            None => None,
        };
        if let Some(b) = &bbox {
            if !b.within_image(raw.width as f64, raw.height as f64) {
                return Err(sink.validation(
                    field,
                    format!("box {b} outside {}x{} image", raw.width, raw.height),
                ));
            }
        }
        let nouns = [0, 1, 2].map(|a| raw.frames[a][role].clone());
        out.push(RoleAnnotation {
            role: role.clone(),
            nouns,
            bbox,
        });
    }
    Ok(Annotation {
        image_id: image_id.to_string(),
        width: raw.width,
        height: raw.height,
        verb: raw.verb,
        roles: out,
    })
}

fn collect<T>(results: Vec<Result<T, RecordIssue>>, mode: ParseMode) -> Result<Parsed<T>, SwigError> {
    let mut records = Vec::with_capacity(results.len());
    let mut issues = Vec::new();
    for r in results {
        match r {
            Ok(v) => records.push(v),
            Err(issue) if mode == ParseMode::Lenient => issues.push(issue),
            Err(issue) => return Err(SwigError::Record(issue)),
        }
    }
    Ok(Parsed { records, issues })
}

/// Parses an annotation file, preserving record order.
pub fn parse_annotations<R: Read>(source: R, mode: ParseMode) -> Result<Parsed<Annotation>, SwigError> {
    let raw: IndexMap<String, serde_json::Value> = serde_json::from_reader(source)?;
    let entries: Vec<(String, serde_json::Value)> = raw.into_iter().collect();
    let results = par::map_slice(&entries, |(id, v)| convert_annotation(id, v.clone()));
    collect(results, mode)
}

pub fn parse_annotations_str(source: &str, mode: ParseMode) -> Result<Parsed<Annotation>, SwigError> {
    parse_annotations(source.as_bytes(), mode)
}

/// Parses several annotation files independently and concatenates them in
/// argument order.
pub fn load_annotation_files<P: AsRef<Path> + Sync>(
    paths: &[P],
    mode: ParseMode,
) -> Result<Parsed<Annotation>, SwigError> {
    let parsed = par::map_slice(paths, |p| {
        let p = p.as_ref();
        let file = std::fs::File::open(p).map_err(|source| SwigError::Io {
            path: p.to_path_buf(),
            source,
        })?;
        parse_annotations(std::io::BufReader::new(file), mode)
    });
    let mut out = Parsed {
        records: Vec::new(),
        issues: Vec::new(),
    };
    for p in parsed {
        let p = p?;
        out.records.extend(p.records);
        out.issues.extend(p.issues);
    }
    Ok(out)
}

/// Serializes annotations back into the file schema.
pub fn write_annotations(annotations: &[Annotation]) -> String {
    let map: IndexMap<&str, RawAnnotation> = annotations
        .iter()
        .map(|a| {
            let frames = (0..ANNOTATORS)
                .map(|i| a.roles.iter().map(|r| (r.role.clone(), r.nouns[i].clone())).collect())
                .collect();
            let bb = a
                .roles
                .iter()
                .map(|r| {
                    let v: [f64; 4] = r.bbox.map_or(ABSENT_BOX, Into::into);
                    (r.role.clone(), v.to_vec())
                })
                .collect();
            (
                a.image_id.as_str(),
                RawAnnotation {
                    width: a.width,
                    height: a.height,
                    verb: a.verb.clone(),
                    frames,
                    bb,
                },
            )
        })
        .collect();
    serde_json::to_string_pretty(&map).expect("annotation serialization")
}

fn convert_frame(
    sink: &IssueSink<'_>,
    field: &str,
    raw: IndexMap<String, RawRole>,
) -> Result<PredictedFrame, RecordIssue> {
    if raw.len() > MAX_ROLES {
        return Err(sink.schema(field, format!("{} roles exceed {MAX_ROLES}", raw.len())));
    }
    let mut roles = Vec::with_capacity(raw.len());
    for (role, r) in raw {
        let f = format!("{field}.{role}.box");
        let mut bbox = None;
        let mut box_absent = r.box_absent;
        if let Some(v) = &r.bbox {
            bbox = parse_box(sink, &f, v)?;
            if bbox.is_none() {
                box_absent = true;
            } else if r.box_absent {
                return Err(sink.schema(f, "box given together with box_absent"));
            }
        }
        roles.push(PredictedRole {
            role,
            noun: r.noun,
            bbox,
            box_absent,
        });
    }
    Ok(PredictedFrame { roles })
}

fn convert_prediction(raw: RawPrediction) -> Result<Prediction, RecordIssue> {
    let sink = IssueSink {
        image_id: &raw.image_id,
    };
    if raw.verbs.is_empty() || raw.verbs.len() > MAX_VERB_GUESSES {
        return Err(sink.schema(
            "verbs",
            format!("expected 1..={MAX_VERB_GUESSES} verbs, found {}", raw.verbs.len()),
        ));
    }
    let mut seen = HashSet::new();
    let mut prev = f64::INFINITY;
    let mut top5 = Vec::with_capacity(raw.verbs.len());
    for (i, g) in raw.verbs.into_iter().enumerate() {
        let field = format!("verbs[{i}]");
        if !seen.insert(g.verb.clone()) {
            return Err(sink.schema(field, format!("duplicate verb {:?}", g.verb)));
        }
        if !g.score.is_finite() || g.score > prev {
            return Err(sink.schema(format!("{field}.score"), "scores must be finite and non-increasing"));
        }
        prev = g.score;
        let frame = g
            .frame
            .map(|f| convert_frame(&sink, &format!("{field}.frame"), f))
            .transpose()?;
        top5.push(VerbGuess {
            verb: g.verb,
            score: g.score,
            frame,
        });
    }
    if top5[0].frame.is_none() {
        return Err(sink.schema("verbs[0].frame", "the top-1 verb must carry a frame"));
    }
    let gt_conditioned = raw
        .gt_frame
        .map(|f| convert_frame(&sink, "gt_frame", f))
        .transpose()?;
    Ok(Prediction {
        image_id: raw.image_id,
        top5,
        gt_conditioned,
    })
}

pub fn parse_predictions<R: Read>(source: R, mode: ParseMode) -> Result<Parsed<Prediction>, SwigError> {
    let values: Vec<serde_json::Value> = serde_json::from_reader(source)?;
    let results = par::map_slice(&values, |v| {
        let id = v
            .get("image_id")
            .and_then(|x| x.as_str())
            .unwrap_or("<missing image_id>")
            .to_string();
        let raw: RawPrediction = serde_json::from_value(v.clone()).map_err(|e| RecordIssue {
            image_id: id,
            field: "record".into(),
            message: e.to_string(),
            kind: IssueKind::Schema,
        })?;
        convert_prediction(raw)
    });
    collect(results, mode)
}

pub fn parse_predictions_str(source: &str, mode: ParseMode) -> Result<Parsed<Prediction>, SwigError> {
    parse_predictions(source.as_bytes(), mode)
}

fn frame_to_raw(f: &PredictedFrame) -> IndexMap<String, RawRole> {
    f.roles
        .iter()
        .map(|r| {
            (
                r.role.clone(),
                RawRole {
                    noun: r.noun.clone(),
                    bbox: r.bbox.map(|b| <[f64; 4]>::from(b).to_vec()),
                    box_absent: r.box_absent,
                },
            )
        })
        .collect()
}

pub fn write_predictions(predictions: &[Prediction]) -> String {
    let raw: Vec<RawPrediction> = predictions
        .iter()
        .map(|p| RawPrediction {
            image_id: p.image_id.clone(),
            verbs: p
                .top5
                .iter()
                .map(|g| RawGuess {
                    verb: g.verb.clone(),
                    score: g.score,
                    frame: g.frame.as_ref().map(frame_to_raw),
                })
                .collect(),
            gt_frame: p.gt_conditioned.as_ref().map(frame_to_raw),
        })
        .collect();
    serde_json::to_string_pretty(&raw).expect("prediction serialization")
}

/// Checks every predicted frame's role set against the lexicon.
pub fn check_prediction_roles(lexicon: &FrameLexicon, prediction: &Prediction, gt_verb: Option<&str>) -> Vec<String> {
    let mut problems = Vec::new();
    let mut check = |verb: &str, frame: &PredictedFrame, label: &str| match lexicon.roles_of(verb) {
        Ok(roles) => {
            let expected: HashSet<&str> = roles.iter().map(|r| r.as_str()).collect();
            let got: HashSet<&str> = frame.roles.iter().map(|r| r.role.as_str()).collect();
            if expected != got {
                problems.push(format!("{label}: roles {got:?} differ from the {verb:?} frame {expected:?}"));
            }
        }
        Err(e) => problems.push(format!("{label}: {e}")),
    };
    for (i, g) in prediction.top5.iter().enumerate() {
        if let Some(f) = &g.frame {
            check(&g.verb, f, &format!("verbs[{i}]"));
        }
    }
    if let (Some(verb), Some(f)) = (gt_verb, &prediction.gt_conditioned) {
        check(verb, f, "gt_frame");
    }
    problems
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub images: usize,
    pub verbs: usize,
    pub roles: usize,
    /// Distinct non-blank noun classes across all annotators.
    pub nouns: usize,
    pub boxes: usize,
}

pub fn dataset_stats(annotations: &[Annotation]) -> DatasetStats {
    let mut verbs = HashSet::new();
    let mut roles = HashSet::new();
    let mut nouns = HashSet::new();
    let mut boxes = 0;
    for a in annotations {
        verbs.insert(a.verb.as_str());
        for r in &a.roles {
            roles.insert(r.role.as_str());
            nouns.extend(r.nouns.iter().map(String::as_str).filter(|n| *n != BLANK_NOUN));
            boxes += r.bbox.is_some() as usize;
        }
    }
    DatasetStats {
        images: annotations.len(),
        verbs: verbs.len(),
        roles: roles.len(),
        nouns: nouns.len(),
        boxes,
    }
}
