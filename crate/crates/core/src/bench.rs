//! Per-stage timing of the non-neural pipeline on a synthetic scene.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::frames::FrameLexicon;
use crate::geometry::{make_disjoint, BoundingBox, MaskSet, Point};
use crate::pipeline::{build_scene, BuildOptions, GroundedSituation, SceneBundle, SceneInput, SituationEntry};
use crate::roi::{resolve_point, QueryMode};
use crate::segmenter::{Backend, Prompt, SegmentRequest};
use crate::swig::{parse_annotations_str, write_annotations, Annotation, ParseMode, RoleAnnotation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Parse,
    Segment,
    Disjoint,
    Caption,
    Query,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Parse, Stage::Segment, Stage::Disjoint, Stage::Caption, Stage::Query];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub stage: Stage,
    pub repetition: usize,
    pub elapsed_ms: f64,
    pub width: usize,
    pub height: usize,
    pub entities: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub width: usize,
    pub height: usize,
    pub entities: usize,
    pub repetitions: usize,
    pub queries: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            width: 1042,
            height: 1042,
            entities: 5,
            repetitions: 10,
            queries: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub median_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub config: BenchConfig,
    pub records: Vec<BenchRecord>,
    pub stages: Vec<StageSummary>,
    /// Median over repetitions of the summed stage times.
    pub total_median_ms: f64,
    pub total_p95_ms: f64,
}

/// Nearest-rank percentile of an unsorted sample, `q` in `[0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// A synthetic scene: `entities` overlapping boxes with a frame whose
/// roles are `R1..Rn`.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub lexicon: FrameLexicon,
    pub annotation: Annotation,
    pub annotation_json: String,
}

impl SyntheticScene {
    pub fn new(width: usize, height: usize, entities: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let roles: Vec<String> = (1..=entities).map(|i| format!("R{i}")).collect();
        let template = roles
            .iter()
            .map(|r| format!("a {{{r}}}"))
            .collect::<Vec<_>>()
            .join(" near ");
        let lexicon = FrameLexicon::load(format!("synthetic\t{}\t{template}\n", roles.join(",")).as_bytes())
            .expect("synthetic lexicon");
        let (w, h) = (width as f64, height as f64);
        let role_annotations = roles
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let bw = rng.random_range(0.2..0.6) * w;
                let bh = rng.random_range(0.2..0.6) * h;
                let x1 = rng.random_range(0.0..(w - bw));
                let y1 = rng.random_range(0.0..(h - bh));
                let noun = format!("n{:08}", i + 1);
                RoleAnnotation {
                    role: r.clone(),
                    nouns: [noun.clone(), noun.clone(), noun],
                    bbox: Some(BoundingBox::new(x1, y1, x1 + bw, y1 + bh).expect("synthetic box")),
                }
            })
            .collect();
        let annotation = Annotation {
            image_id: format!("synthetic_{width}x{height}"),
            width: width as u32,
            height: height as u32,
            verb: "synthetic".into(),
            roles: role_annotations,
        };
        let annotation_json = write_annotations(std::slice::from_ref(&annotation));
        SyntheticScene {
            lexicon,
            annotation,
            annotation_json,
        }
    }

    pub fn bundle(&self) -> SceneBundle {
        build_scene(
            &SceneInput::from_annotation(&self.annotation, None),
            &self.lexicon,
            Some(&Backend::BoxFill),
            BuildOptions { created_unix_ms: Some(0) },
        )
        .expect("synthetic scene builds")
    }
}

/// Deterministic query points spread over the image.
pub fn query_points(width: usize, height: usize, n: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    (0..n)
        .map(|_| Point::new(rng.random_range(0.0..width as f64), rng.random_range(0.0..height as f64)))
        .collect()
}

/// Runs parse, box-fill segmentation, disjointness, captioning and point
/// queries `repetitions` times and summarizes each stage.
pub fn run_pipeline_bench(config: &BenchConfig) -> BenchRun {
    let scene = SyntheticScene::new(config.width, config.height, config.entities, config.seed);
    let points = query_points(config.width, config.height, config.queries, config.seed);
    let mut records = Vec::new();
    let mut totals = Vec::new();
    for rep in 0..config.repetitions.max(1) {
        let mut times = Vec::with_capacity(5);
        let mut time = |stage: Stage, t: Instant| {
            times.push(BenchRecord {
                stage,
                repetition: rep,
                elapsed_ms: t.elapsed().as_secs_f64() * 1e3,
                width: config.width,
                height: config.height,
                entities: config.entities,
            })
        };

        let t = Instant::now();
        let parsed = parse_annotations_str(&scene.annotation_json, ParseMode::Strict).expect("synthetic parse");
        let situation = GroundedSituation::from_annotation(&parsed.records[0]);
        time(Stage::Parse, t);

        let t = Instant::now();
        let request = SegmentRequest {
            image_ref: scene.annotation.image_id.clone(),
            width: config.width,
            height: config.height,
            prompts: situation
                .boxes()
                .into_iter()
                .map(|(role, bbox)| Prompt { role, bbox })
                .collect(),
        };
        let response = Backend::BoxFill.segment(&request).expect("box-fill");
        time(Stage::Segment, t);

        let t = Instant::now();
        let masks = make_disjoint(&response.entities).expect("same dims");
        time(Stage::Disjoint, t);

        let t = Instant::now();
        let pairs: Vec<(&str, &str)> = situation
            .entries
            .iter()
            .map(|e| (e.role.as_str(), e.noun.as_str()))
            .collect();
        let caption = scene.lexicon.render_caption(&situation.verb, &pairs).expect("caption");
        time(Stage::Caption, t);

        let bundle = SceneBundle {
            image_id: scene.annotation.image_id.clone(),
            image_ref: None,
            width: config.width,
            height: config.height,
            displays: situation.entries.iter().map(|e| e.noun.clone()).collect(),
            situation: GroundedSituation {
                verb: situation.verb.clone(),
                entries: situation
                    .entries
                    .iter()
                    .map(|e| SituationEntry { ..e.clone() })
                    .collect(),
            },
            caption,
            masks: MaskSet::new(config.width, config.height, masks).expect("mask set"),
            provenance: crate::pipeline::Provenance {
                backend_id: response.backend_id,
                degraded: false,
                warnings: Vec::new(),
                created_unix_ms: 0,
                segment_ms: response.elapsed_ms,
            },
        };
        let t = Instant::now();
        for p in &points {
            let r = resolve_point(&bundle, *p, QueryMode::Mask).expect("in-bounds query");
            debug_assert!(r.hits.len() <= 1);
        }
        time(Stage::Query, t);

        totals.push(times.iter().map(|r| r.elapsed_ms).sum::<f64>());
        records.extend(times);
    }
    let stages = Stage::ALL
        .iter()
        .map(|&stage| {
            let v: Vec<f64> = records.iter().filter(|r| r.stage == stage).map(|r| r.elapsed_ms).collect();
            StageSummary {
                stage,
                median_ms: percentile(&v, 0.5),
                p95_ms: percentile(&v, 0.95),
            }
        })
        .collect();
    BenchRun {
        config: config.clone(),
        records,
        stages,
        total_median_ms: percentile(&totals, 0.5),
        total_p95_ms: percentile(&totals, 0.95),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_nearest_rank() {
        let v = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(percentile(&v, 0.5), 3.0);
        assert_eq!(percentile(&v, 0.95), 5.0);
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert!(percentile(&[], 0.5).is_nan());
    }

    #[test]
    fn small_bench_emits_every_stage() {
        let run = run_pipeline_bench(&BenchConfig {
            width: 64,
            height: 48,
            entities: 3,
            repetitions: 2,
            queries: 10,
            seed: 3,
        });
        assert_eq!(run.records.len(), 10);
        for s in Stage::ALL {
            assert_eq!(run.records.iter().filter(|r| r.stage == s).count(), 2);
        }
        assert!(run.records.iter().all(|r| r.elapsed_ms >= 0.0));
    }

    #[test]
    fn synthetic_scene_is_seeded() {
        let a = SyntheticScene::new(100, 80, 5, 9);
        let b = SyntheticScene::new(100, 80, 5, 9);
        assert_eq!(a.annotation_json, b.annotation_json);
        assert!(a.bundle().same_content(&b.bundle()));
    }
}
