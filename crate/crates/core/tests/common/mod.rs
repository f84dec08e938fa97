#![allow(dead_code)]

use std::path::PathBuf;

use osu_core::metrics::{evaluate_dataset, DatasetEvaluation, EvalConfig, Setting};
use osu_core::pipeline::{load_bundle_str, SceneBundle};
use osu_core::swig::{parse_annotations_str, parse_predictions_str, Annotation, ParseMode, Prediction};
use osu_core::FrameLexicon;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn read(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

pub fn lexicon() -> FrameLexicon {
    let mut lex = FrameLexicon::load(read("lexicon.tsv").as_bytes()).unwrap();
    lex.load_nouns(read("nouns.tsv").as_bytes()).unwrap();
    lex
}

pub fn annotations() -> Vec<Annotation> {
    parse_annotations_str(&read("annotations.json"), ParseMode::Strict).unwrap().records
}

pub fn predictions() -> Vec<Prediction> {
    parse_predictions_str(&read("predictions.json"), ParseMode::Strict).unwrap().records
}

pub fn riding_bundle() -> SceneBundle {
    load_bundle_str(&read("riding.bundle.json")).unwrap()
}

pub fn evaluate_fixture(config: &EvalConfig) -> DatasetEvaluation {
    evaluate_dataset(&annotations(), &predictions(), &Setting::ALL, config)
}

pub mod gen {
    use osu_core::swig::{Annotation, PredictedFrame, PredictedRole, Prediction, RoleAnnotation, VerbGuess};
    use osu_core::BoundingBox;
    use rand::seq::SliceRandom;
    use rand::Rng;

    pub const SIZE: f64 = 100.0;
    const VERBS: [&str; 6] = ["v0", "v1", "v2", "v3", "v4", "v5"];
    const ROLES: [&str; 8] = ["Agent", "Item", "Place", "Tool", "Food", "Vehicle", "Source", "Goal"];
    const NOUNS: [&str; 5] = ["", "n1", "n2", "n3", "n4"];

    pub fn bbox<R: Rng>(rng: &mut R) -> BoundingBox {
        let x1 = rng.random_range(0.0..SIZE - 2.0);
        let y1 = rng.random_range(0.0..SIZE - 2.0);
        let x2 = rng.random_range(x1 + 1.0..=SIZE);
        let y2 = rng.random_range(y1 + 1.0..=SIZE);
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    fn jitter<R: Rng>(rng: &mut R, b: &BoundingBox) -> BoundingBox {
        let d = rng.random_range(0.0..30.0);
        let mut shift = |v: f64| (v + rng.random_range(-d..=d)).clamp(0.0, SIZE);
        let (mut x1, mut y1, mut x2, mut y2) = (shift(b.x1), shift(b.y1), shift(b.x2), shift(b.y2));
        if x2 <= x1 {
            std::mem::swap(&mut x1, &mut x2);
            x2 = (x1 + 1.0).min(SIZE);
            x1 = x2 - 1.0;
        }
        if y2 <= y1 {
            std::mem::swap(&mut y1, &mut y2);
            y2 = (y1 + 1.0).min(SIZE);
            y1 = y2 - 1.0;
        }
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    pub fn annotation<R: Rng>(rng: &mut R, id: &str) -> Annotation {
        let n = rng.random_range(1..=6);
        let mut pool = ROLES.to_vec();
        pool.shuffle(rng);
        let roles = pool[..n]
            .iter()
            .map(|r| RoleAnnotation {
                role: r.to_string(),
                nouns: [0, 1, 2].map(|_| NOUNS[rng.random_range(0..NOUNS.len())].to_string()),
                bbox: rng.random_bool(0.75).then(|| bbox(rng)),
            })
            .collect();
        Annotation {
            image_id: id.to_string(),
            width: SIZE as u32,
            height: SIZE as u32,
            verb: VERBS[rng.random_range(0..VERBS.len())].to_string(),
            roles,
        }
    }

    /// A frame derived from the ground truth with random noun and box
    /// corruption, occasionally dropping a role.
    pub fn frame<R: Rng>(rng: &mut R, gt: &Annotation) -> PredictedFrame {
        let roles = gt
            .roles
            .iter()
            .filter_map(|r| {
                if rng.random_bool(0.05) {
                    return None;
                }
                let noun = if rng.random_bool(0.6) {
                    r.nouns[rng.random_range(0..3)].clone()
                } else {
                    NOUNS[rng.random_range(0..NOUNS.len())].to_string()
                };
                let (bbox, box_absent) = match (r.bbox, rng.random_range(0..4)) {
                    (_, 0) => (None, true),
                    (Some(b), 1) => (Some(b), false),
                    (Some(b), _) => (Some(jitter(rng, &b)), false),
                    (None, _) => (Some(bbox(rng)), false),
                };
                Some(PredictedRole {
                    role: r.role.clone(),
                    noun,
                    bbox,
                    box_absent,
                })
            })
            .collect();
        PredictedFrame { roles }
    }

    pub fn prediction<R: Rng>(rng: &mut R, gt: &Annotation) -> Prediction {
        let k = rng.random_range(1..=5);
        let mut verbs: Vec<&str> = VERBS.iter().copied().filter(|v| *v != gt.verb).collect();
        verbs.shuffle(rng);
        verbs.truncate(k);
        if rng.random_bool(0.7) {
            let at = rng.random_range(0..k);
            verbs[at] = gt.verb.as_str();
        }
        let mut score = 1.0;
        let top5 = verbs
            .iter()
            .enumerate()
            .map(|(i, v)| {
                score *= rng.random_range(0.5..1.0);
                let has_frame = i == 0 || rng.random_bool(0.9);
                VerbGuess {
                    verb: v.to_string(),
                    score,
                    frame: has_frame.then(|| frame(rng, gt)),
                }
            })
            .collect();
        Prediction {
            image_id: gt.image_id.clone(),
            top5,
            gt_conditioned: rng.random_bool(0.95).then(|| frame(rng, gt)),
        }
    }

    pub fn dataset<R: Rng>(rng: &mut R, n: usize) -> (Vec<Annotation>, Vec<Prediction>) {
        let anns: Vec<Annotation> = (0..n).map(|i| annotation(rng, &format!("img_{i:04}"))).collect();
        let preds = anns.iter().map(|a| prediction(rng, a)).collect();
        (anns, preds)
    }
}
