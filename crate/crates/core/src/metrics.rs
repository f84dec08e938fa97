//! SWiG evaluation: verb, value, value-all, grounded-value and
//! grounded-value-all under the Top-1, Top-5 and ground-truth-verb settings.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::box_iou;
use crate::par;
use crate::swig::{Annotation, PredictedFrame, Prediction, RoleAnnotation, ANNOTATORS};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("annotation {gt:?} paired with prediction {pred:?}")]
    ImageMismatch { gt: String, pred: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Top1,
    Top5,
    GtVerb,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::Top1, Setting::Top5, Setting::GtVerb];

    pub fn label(self) -> &'static str {
        match self {
            Setting::Top1 => "Top-1-Verb",
            Setting::Top5 => "Top-5-Verb",
            Setting::GtVerb => "Ground-Truth-Verb",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Pooled over all images (and image-role pairs).
    #[default]
    Micro,
    /// Mean of per-verb scores, verbs taken from the ground truth.
    PerVerbMacro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameMatch {
    /// value-all holds when every role matches some annotator.
    #[default]
    AnyAnnotatorPerRole,
    /// value-all holds only when one annotator's whole frame matches.
    SingleAnnotator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// A box is grounded when IoU >= this value.
    pub iou_threshold: f64,
    pub averaging: Averaging,
    pub frame_match: FrameMatch,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            averaging: Averaging::Micro,
            frame_match: FrameMatch::AnyAnnotatorPerRole,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoleFlags {
    pub role: String,
    pub value_correct: bool,
    pub grounded_correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleFlags {
    pub setting: Setting,
    pub image_id: String,
    pub gt_verb: String,
    /// `None` under [`Setting::GtVerb`].
    pub verb_correct: Option<bool>,
    pub roles: Vec<RoleFlags>,
    pub value_all: bool,
    pub grounded_all: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub flags: SampleFlags,
    pub warning: Option<String>,
}

fn grounding_ok(gt: &RoleAnnotation, pred: &crate::swig::PredictedRole, threshold: f64) -> bool {
    match (&gt.bbox, &pred.bbox) {
        (Some(g), Some(p)) => box_iou(g, p) >= threshold,
        (None, _) => pred.box_absent,
        (Some(_), None) => false,
    }
}

fn all_wrong(gt: &Annotation, setting: Setting, verb_correct: Option<bool>) -> SampleFlags {
    SampleFlags {
        setting,
        image_id: gt.image_id.clone(),
        gt_verb: gt.verb.clone(),
        verb_correct,
        roles: gt
            .roles
            .iter()
            .map(|r| RoleFlags {
                role: r.role.clone(),
                value_correct: false,
                grounded_correct: false,
            })
            .collect(),
        value_all: false,
        grounded_all: false,
    }
}

fn score_frame(gt: &Annotation, frame: &PredictedFrame, config: &EvalConfig) -> (Vec<RoleFlags>, bool, bool) {
    let mut roles = Vec::with_capacity(gt.roles.len());
    // per annotator: all nouns match / all nouns and boxes match
    let mut annotator_value = [true; ANNOTATORS];
    let mut annotator_grounded = [true; ANNOTATORS];
    for r in &gt.roles {
        let (value, grounded) = match frame.role(&r.role) {
            Some(p) => {
                let grounding = grounding_ok(r, p, config.iou_threshold);
                for a in 0..ANNOTATORS {
                    let hit = r.nouns[a] == p.noun;
                    annotator_value[a] &= hit;
                    annotator_grounded[a] &= hit && grounding;
                }
                let value = r.nouns.contains(&p.noun);
                (value, value && grounding)
            }
            None => {
                annotator_value = [false; ANNOTATORS];
                annotator_grounded = [false; ANNOTATORS];
                (false, false)
            }
        };
        roles.push(RoleFlags {
            role: r.role.clone(),
            value_correct: value,
            grounded_correct: grounded,
        });
    }
    let (value_all, grounded_all) = match config.frame_match {
        FrameMatch::AnyAnnotatorPerRole => (
            roles.iter().all(|f| f.value_correct),
            roles.iter().all(|f| f.grounded_correct),
        ),
        FrameMatch::SingleAnnotator => (
            annotator_value.iter().any(|b| *b),
            annotator_grounded.iter().any(|b| *b),
        ),
    };
    (roles, value_all, grounded_all)
}

/// Correctness flags of one prediction under one setting.
///
/// A wrong verb (Top-1/Top-5) makes every other flag false. A frame the
/// setting needs but the prediction lacks is scored wrong with a warning.
pub fn eval_sample(
    gt: &Annotation,
    pred: &Prediction,
    setting: Setting,
    config: &EvalConfig,
) -> Result<SampleOutcome, MetricsError> {
    if gt.image_id != pred.image_id {
        return Err(MetricsError::ImageMismatch {
            gt: gt.image_id.clone(),
            pred: pred.image_id.clone(),
        });
    }
    let (verb_correct, frame) = match setting {
        Setting::Top1 => {
            let top1 = pred.top1();
            let ok = top1.verb == gt.verb;
            (Some(ok), ok.then_some(top1.frame.as_ref()))
        }
        Setting::Top5 => match pred.guess(&gt.verb) {
            Some(g) => (Some(true), Some(g.frame.as_ref())),
            None => (Some(false), None),
        },
        Setting::GtVerb => (None, Some(pred.gt_conditioned.as_ref())),
    };
    let Some(frame) = frame else {
        return Ok(SampleOutcome {
            flags: all_wrong(gt, setting, verb_correct),
            warning: None,
        });
    };
    let Some(frame) = frame else {
        return Ok(SampleOutcome {
            flags: all_wrong(gt, setting, verb_correct),
            warning: Some(format!(
                "{}: no frame for {} setting, counted wrong",
                gt.image_id,
                setting.label()
            )),
        });
    };
    let (roles, value_all, grounded_all) = score_frame(gt, frame, config);
    Ok(SampleOutcome {
        flags: SampleFlags {
            setting,
            image_id: gt.image_id.clone(),
            gt_verb: gt.verb.clone(),
            verb_correct,
            roles,
            value_all,
            grounded_all,
        },
        warning: None,
    })
}

/// Raw hit counts behind one setting's percentages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettingCounts {
    pub images: usize,
    pub role_units: usize,
    pub verb: usize,
    pub value: usize,
    pub value_all: usize,
    pub grounded_value: usize,
    pub grounded_value_all: usize,
}

impl SettingCounts {
    fn add(&mut self, f: &SampleFlags) {
        self.images += 1;
        self.role_units += f.roles.len();
        self.verb += f.verb_correct.unwrap_or(false) as usize;
        self.value += f.roles.iter().filter(|r| r.value_correct).count();
        self.grounded_value += f.roles.iter().filter(|r| r.grounded_correct).count();
        self.value_all += f.value_all as usize;
        self.grounded_value_all += f.grounded_all as usize;
    }
}

/// Percentages for one setting; `None` marks an undefined metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettingReport {
    pub setting: Setting,
    pub verb: Option<f64>,
    pub value: Option<f64>,
    pub value_all: Option<f64>,
    pub grounded_value: Option<f64>,
    pub grounded_value_all: Option<f64>,
    pub counts: SettingCounts,
}

fn pct(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| 100.0 * hits as f64 / total as f64)
}

impl SettingReport {
    fn from_counts(setting: Setting, c: SettingCounts) -> Self {
        SettingReport {
            setting,
            verb: if setting == Setting::GtVerb {
                None
            } else {
                pct(c.verb, c.images)
            },
            value: pct(c.value, c.role_units),
            value_all: pct(c.value_all, c.images),
            grounded_value: pct(c.grounded_value, c.role_units),
            grounded_value_all: pct(c.grounded_value_all, c.images),
            counts: c,
        }
    }

    /// The metric columns in table order.
    pub fn columns(&self) -> [Option<f64>; 5] {
        [
            self.verb,
            self.value,
            self.value_all,
            self.grounded_value,
            self.grounded_value_all,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub top1: Option<SettingReport>,
    pub top5: Option<SettingReport>,
    pub gt_verb: Option<SettingReport>,
}

impl EvalReport {
    pub fn setting(&self, s: Setting) -> Option<&SettingReport> {
        match s {
            Setting::Top1 => self.top1.as_ref(),
            Setting::Top5 => self.top5.as_ref(),
            Setting::GtVerb => self.gt_verb.as_ref(),
        }
    }

    /// The fourteen table numbers: five for Top-1, five for Top-5, four for
    /// the ground-truth verb setting. Missing settings yield `None`.
    pub fn table_row(&self) -> Vec<Option<f64>> {
        let mut row = Vec::with_capacity(14);
        for s in Setting::ALL {
            let cols = self.setting(s).map_or([None; 5], SettingReport::columns);
            if s == Setting::GtVerb {
                row.extend_from_slice(&cols[1..]);
            } else {
                row.extend_from_slice(&cols);
            }
        }
        row
    }
}

fn macro_report(setting: Setting, flags: &[&SampleFlags]) -> SettingReport {
    let mut per_verb: BTreeMap<&str, SettingCounts> = BTreeMap::new();
    let mut total = SettingCounts::default();
    for f in flags {
        per_verb.entry(f.gt_verb.as_str()).or_default().add(f);
        total.add(f);
    }
    let reports: Vec<SettingReport> = per_verb
        .values()
        .map(|c| SettingReport::from_counts(setting, *c))
        .collect();
    let mean = |pick: fn(&SettingReport) -> Option<f64>| {
        let vals: Vec<f64> = reports.iter().filter_map(pick).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    SettingReport {
        setting,
        verb: mean(|r| r.verb),
        value: mean(|r| r.value),
        value_all: mean(|r| r.value_all),
        grounded_value: mean(|r| r.grounded_value),
        grounded_value_all: mean(|r| r.grounded_value_all),
        counts: total,
    }
}

/// Folds flags into percentages. Settings with no flags at all are omitted
/// unless listed in `settings`, in which case they report undefined metrics.
pub fn aggregate(flags: &[SampleFlags], settings: &[Setting], config: &EvalConfig) -> EvalReport {
    let mut report = EvalReport {
        config: *config,
        top1: None,
        top5: None,
        gt_verb: None,
    };
    for &s in settings {
        let subset: Vec<&SampleFlags> = flags.iter().filter(|f| f.setting == s).collect();
        let r = match config.averaging {
            Averaging::Micro => {
                let mut c = SettingCounts::default();
                for f in &subset {
                    c.add(f);
                }
                SettingReport::from_counts(s, c)
            }
            Averaging::PerVerbMacro => macro_report(s, &subset),
        };
        match s {
            Setting::Top1 => report.top1 = Some(r),
            Setting::Top5 => report.top5 = Some(r),
            Setting::GtVerb => report.gt_verb = Some(r),
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEvaluation {
    pub report: EvalReport,
    pub flags: Vec<SampleFlags>,
    pub warnings: Vec<String>,
    /// Annotated images without a prediction (not scored).
    pub unmatched_annotations: Vec<String>,
    /// Predictions for images with no annotation.
    pub unmatched_predictions: Vec<String>,
}

/// Pairs annotations with predictions by image id and evaluates every pair
/// under each requested setting. Unpaired records are listed, not scored.
pub fn evaluate_dataset(
    annotations: &[Annotation],
    predictions: &[Prediction],
    settings: &[Setting],
    config: &EvalConfig,
) -> DatasetEvaluation {
    let mut warnings = Vec::new();
    let mut by_id: HashMap<&str, &Prediction> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        match by_id.entry(p.image_id.as_str()) {
            std::collections::hash_map::Entry::Occupied(_) => {
                warnings.push(format!("{}: duplicate prediction, later record ignored", p.image_id));
            }
            std::collections::hash_map::Entry::Vacant(v) => {
                v.insert(p);
            }
        }
    }
    let mut pairs = Vec::new();
    let mut unmatched_annotations = Vec::new();
    for a in annotations {
        match by_id.get(a.image_id.as_str()) {
            Some(p) => pairs.push((a, *p)),
            None => unmatched_annotations.push(a.image_id.clone()),
        }
    }
    let annotated: std::collections::HashSet<&str> = annotations.iter().map(|a| a.image_id.as_str()).collect();
    let mut unmatched_predictions: Vec<String> = predictions
        .iter()
        .filter(|p| !annotated.contains(p.image_id.as_str()))
        .map(|p| p.image_id.clone())
        .collect();
    unmatched_predictions.dedup();

    let outcomes: Vec<Vec<SampleOutcome>> = par::map_slice(&pairs, |(a, p)| {
        settings
            .iter()
            .map(|&s| eval_sample(a, p, s, config).expect("pairs share image ids"))
            .collect()
    });
    let mut flags = Vec::with_capacity(pairs.len() * settings.len());
    for o in outcomes.into_iter().flatten() {
        warnings.extend(o.warning);
        flags.push(o.flags);
    }
    let report = aggregate(&flags, settings, config);
    DatasetEvaluation {
        report,
        flags,
        warnings,
        unmatched_annotations,
        unmatched_predictions,
    }
}

const UNDEFINED: &str = "\u{2014}";
const HEADERS: [&str; 5] = ["verb", "value", "val-all", "grnd", "grnd-all"];

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |x| format!("{x:.2}"))
}

/// Fixed-layout text table, one row per setting, two-decimal percentages.
pub fn format_report(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<18}", "setting");
    for h in HEADERS {
        let _ = write!(out, " {h:>8}");
    }
    let _ = writeln!(out, " {:>8} {:>8}", "images", "roles");
    for s in Setting::ALL {
        let Some(r) = report.setting(s) else { continue };
        let _ = write!(out, "{:<18}", s.label());
        for (i, v) in r.columns().into_iter().enumerate() {
            let text = if s == Setting::GtVerb && i == 0 {
                String::new()
            } else {
                cell(v)
            };
            let _ = write!(out, " {text:>8}");
        }
        let _ = writeln!(out, " {:>8} {:>8}", r.counts.images, r.counts.role_units);
    }
    out
}

/// JSON twin of [`format_report`].
pub fn report_json(report: &EvalReport) -> String {
    serde_json::to_string_pretty(report).expect("report serialization")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;
    use crate::swig::{PredictedRole, RoleAnnotation, VerbGuess};

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    fn gt() -> Annotation {
        Annotation {
            image_id: "img".into(),
            width: 100,
            height: 100,
            verb: "riding".into(),
            roles: vec![
                RoleAnnotation {
                    role: "agent".into(),
                    nouns: ["man".into(), "person".into(), "man".into()],
                    bbox: Some(bx(0.0, 0.0, 10.0, 10.0)),
                },
                RoleAnnotation {
                    role: "vehicle".into(),
                    nouns: ["motorcycle".into(), "motorcycle".into(), "bike".into()],
                    bbox: Some(bx(20.0, 20.0, 60.0, 60.0)),
                },
                RoleAnnotation {
                    role: "place".into(),
                    nouns: ["road".into(), "".into(), "street".into()],
                    bbox: None,
                },
            ],
        }
    }

    fn exact_frame(a: &Annotation) -> PredictedFrame {
        PredictedFrame {
            roles: a
                .roles
                .iter()
                .map(|r| PredictedRole {
                    role: r.role.clone(),
                    noun: r.nouns[0].clone(),
                    bbox: r.bbox,
                    box_absent: r.bbox.is_none(),
                })
                .collect(),
        }
    }

    fn prediction(verbs: &[&str], frame: PredictedFrame) -> Prediction {
        Prediction {
            image_id: "img".into(),
            top5: verbs
                .iter()
                .enumerate()
                .map(|(i, v)| VerbGuess {
                    verb: v.to_string(),
                    score: 1.0 - i as f64 * 0.1,
                    frame: Some(frame.clone()),
                })
                .collect(),
            gt_conditioned: Some(frame),
        }
    }

    fn run(gt: &Annotation, p: &Prediction, s: Setting) -> SampleFlags {
        eval_sample(gt, p, s, &EvalConfig::default()).unwrap().flags
    }

    #[test]
    fn exact_match_all_true() {
        let g = gt();
        let p = prediction(&["riding"], exact_frame(&g));
        for s in Setting::ALL {
            let f = run(&g, &p, s);
            assert!(f.verb_correct.unwrap_or(true));
            assert!(f.value_all && f.grounded_all);
            assert!(f.roles.iter().all(|r| r.value_correct && r.grounded_correct));
        }
    }

    #[test]
    fn wrong_verb_zeroes_top1_and_top5() {
        let g = gt();
        let p = prediction(&["jumping", "eating"], exact_frame(&g));
        for s in [Setting::Top1, Setting::Top5] {
            let f = run(&g, &p, s);
            assert_eq!(f.verb_correct, Some(false));
            assert!(!f.value_all && !f.grounded_all);
            assert!(f.roles.iter().all(|r| !r.value_correct && !r.grounded_correct));
        }
        // gt-verb setting is unaffected
        assert!(run(&g, &p, Setting::GtVerb).grounded_all);
    }

    #[test]
    fn top5_uses_matching_verb_frame() {
        let g = gt();
        let mut p = prediction(&["jumping", "riding"], exact_frame(&g));
        p.top5[0].frame = Some(PredictedFrame::default());
        assert_eq!(run(&g, &p, Setting::Top1).verb_correct, Some(false));
        let f = run(&g, &p, Setting::Top5);
        assert_eq!(f.verb_correct, Some(true));
        assert!(f.grounded_all);
    }

    #[test]
    fn hand_evaluated_mixed_sample() {
        let g = gt();
        let mut frame = exact_frame(&g);
        // agent: noun right, box IoU 0.4
        frame.roles[0].noun = "person".into();
        frame.roles[0].bbox = Some(bx(0.0, 0.0, 4.0, 10.0));
        // vehicle: correct noun and box
        frame.roles[1].noun = "bike".into();
        // place: wrong noun
        frame.roles[2].noun = "field".into();
        assert!((box_iou(&g.roles[0].bbox.unwrap(), &frame.roles[0].bbox.unwrap()) - 0.4).abs() < 1e-12);
        let p = prediction(&["riding"], frame);
        let f = run(&g, &p, Setting::Top1);
        let value: Vec<bool> = f.roles.iter().map(|r| r.value_correct).collect();
        let grounded: Vec<bool> = f.roles.iter().map(|r| r.grounded_correct).collect();
        assert_eq!(value, [true, true, false]);
        assert_eq!(grounded, [false, true, false]);
        assert!(!f.value_all && !f.grounded_all);
    }

    #[test]
    fn ungrounded_role_needs_declared_absence() {
        let g = gt();
        let mut frame = exact_frame(&g);
        frame.roles[2].box_absent = false;
        let f = run(&g, &prediction(&["riding"], frame.clone()), Setting::Top1);
        assert!(f.roles[2].value_correct && !f.roles[2].grounded_correct);
        frame.roles[2].bbox = Some(bx(0.0, 0.0, 5.0, 5.0));
        let f = run(&g, &prediction(&["riding"], frame), Setting::Top1);
        assert!(!f.roles[2].grounded_correct);
    }

    #[test]
    fn blank_matches_blank() {
        let g = gt();
        let mut frame = exact_frame(&g);
        frame.roles[2].noun = "".into();
        assert!(run(&g, &prediction(&["riding"], frame), Setting::Top1).value_all);
    }

    #[test]
    fn missing_gt_frame_warns() {
        let g = gt();
        let mut p = prediction(&["riding"], exact_frame(&g));
        p.gt_conditioned = None;
        let out = eval_sample(&g, &p, Setting::GtVerb, &EvalConfig::default()).unwrap();
        assert!(out.warning.is_some());
        assert!(!out.flags.value_all);
        assert_eq!(out.flags.verb_correct, None);
    }

    #[test]
    fn image_mismatch_is_error() {
        let g = gt();
        let mut p = prediction(&["riding"], exact_frame(&g));
        p.image_id = "other".into();
        assert!(eval_sample(&g, &p, Setting::Top1, &EvalConfig::default()).is_err());
    }

    #[test]
    fn single_annotator_rule_is_stricter() {
        let g = gt();
        let mut frame = exact_frame(&g);
        // agent from annotator 1, vehicle from annotator 2: no single annotator agrees
        frame.roles[0].noun = "person".into();
        frame.roles[1].noun = "bike".into();
        let p = prediction(&["riding"], frame);
        let strict = EvalConfig {
            frame_match: FrameMatch::SingleAnnotator,
            ..EvalConfig::default()
        };
        assert!(run(&g, &p, Setting::Top1).value_all);
        assert!(!eval_sample(&g, &p, Setting::Top1, &strict).unwrap().flags.value_all);
    }

    #[test]
    fn aggregate_two_samples() {
        let g = gt();
        let good = run(&g, &prediction(&["riding"], exact_frame(&g)), Setting::Top1);
        let bad = run(&g, &prediction(&["eating"], exact_frame(&g)), Setting::Top1);
        let report = aggregate(&[good, bad], &[Setting::Top1], &EvalConfig::default());
        let r = report.top1.unwrap();
        assert_eq!(r.columns(), [Some(50.0); 5]);
        assert_eq!(r.counts.role_units, 6);
    }

    #[test]
    fn single_correct_sample_formats_as_100() {
        let g = gt();
        let p = prediction(&["riding"], exact_frame(&g));
        let flags: Vec<SampleFlags> = Setting::ALL.iter().map(|&s| run(&g, &p, s)).collect();
        let report = aggregate(&flags, &Setting::ALL, &EvalConfig::default());
        assert_eq!(report.table_row(), vec![Some(100.0); 14]);
        let text = format_report(&report);
        assert_eq!(text.matches("100.00").count(), 14);
    }

    #[test]
    fn empty_report_is_undefined() {
        let report = aggregate(&[], &Setting::ALL, &EvalConfig::default());
        assert!(report.table_row().iter().all(Option::is_none));
        let text = format_report(&report);
        assert_eq!(text.matches('\u{2014}').count(), 14);
    }

    #[test]
    fn macro_averaging_weights_verbs_equally() {
        let g1 = gt();
        let mut g2 = gt();
        g2.verb = "eating".into();
        g2.image_id = "img".into();
        let good = run(&g1, &prediction(&["riding"], exact_frame(&g1)), Setting::Top1);
        let good2 = good.clone();
        let bad = run(&g2, &prediction(&["riding"], exact_frame(&g2)), Setting::Top1);
        let cfg = EvalConfig {
            averaging: Averaging::PerVerbMacro,
            ..EvalConfig::default()
        };
        let flags = vec![good, good2, bad];
        let micro = aggregate(&flags, &[Setting::Top1], &EvalConfig::default()).top1.unwrap();
        let macro_ = aggregate(&flags, &[Setting::Top1], &cfg).top1.unwrap();
        assert!((micro.verb.unwrap() - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(macro_.verb, Some(50.0));
    }
}
