//! Acceptance gate. Runs every criterion at its stated tolerance and prints
//! one line per criterion; exits non-zero when any criterion fails.

mod common;

use std::num::NonZeroUsize;
use std::time::Instant;

use common::gen;
use osu_core::bench::{run_pipeline_bench, BenchConfig, Stage};
use osu_core::geometry::{
    box_iou, is_pairwise_disjoint, make_disjoint, rle_decode, rle_encode, Bitmask, EntityMask, MaskSet, Point,
};
use osu_core::metrics::{eval_sample, evaluate_dataset, EvalConfig, Setting};
use osu_core::numerics::{gelu, gelu_grad, relu, run_convergence_lab, ConvergenceConfig};
use osu_core::pipeline::{GroundedSituation, Provenance, SceneBundle, SituationEntry};
use osu_core::roi::{ambiguity_report, resolve_point, QueryMode};
use osu_core::swig::{dataset_stats, load_annotation_files, Annotation, ParseMode, PredictedFrame, Prediction};
use osu_core::BoundingBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

// Brute-force evaluator written straight from the metric definitions.
mod oracle {
    use super::*;

    fn overlap(a1: f64, a2: f64, b1: f64, b2: f64) -> f64 {
        let lo = if a1 > b1 { a1 } else { b1 };
        let hi = if a2 < b2 { a2 } else { b2 };
        if hi > lo {
            hi - lo
        } else {
            0.0
        }
    }

    fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
        let inter = overlap(a.x1, a.x2, b.x1, b.x2) * overlap(a.y1, a.y2, b.y1, b.y2);
        let union = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
        if inter == 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    fn chosen_frame<'a>(gt: &Annotation, p: &'a Prediction, s: Setting) -> Option<Option<&'a PredictedFrame>> {
        match s {
            Setting::Top1 => (p.top5[0].verb == gt.verb).then(|| p.top5[0].frame.as_ref()),
            Setting::Top5 => {
                for g in &p.top5 {
                    if g.verb == gt.verb {
                        return Some(g.frame.as_ref());
                    }
                }
                None
            }
            Setting::GtVerb => Some(p.gt_conditioned.as_ref()),
        }
    }

    /// `[images, role units, verb, value, value-all, grounded, grounded-all]`
    pub fn counts(anns: &[Annotation], preds: &[Prediction], s: Setting) -> [usize; 7] {
        let mut c = [0usize; 7];
        for gt in anns {
            let Some(p) = preds.iter().find(|p| p.image_id == gt.image_id) else {
                continue;
            };
            c[0] += 1;
            c[1] += gt.roles.len();
            let frame = chosen_frame(gt, p, s);
            if frame.is_some() {
                c[2] += 1;
            }
            let Some(Some(frame)) = frame else {
                continue;
            };
            let mut all_v = true;
            let mut all_g = true;
            for r in &gt.roles {
                let mut v = false;
                let mut g = false;
                for pr in &frame.roles {
                    if pr.role != r.role {
                        continue;
                    }
                    v = r.nouns.contains(&pr.noun);
                    let grounded = match (r.bbox, pr.bbox) {
                        (None, _) => pr.box_absent,
                        (Some(gb), Some(pb)) => iou(&gb, &pb) >= 0.5,
                        (Some(_), None) => false,
                    };
                    g = v && grounded;
                }
                c[3] += v as usize;
                c[5] += g as usize;
                all_v &= v;
                all_g &= g;
            }
            c[4] += all_v as usize;
            c[6] += all_g as usize;
        }
        c
    }

    pub fn table(anns: &[Annotation], preds: &[Prediction]) -> Vec<Option<f64>> {
        let pct = |h: usize, t: usize| if t == 0 { None } else { Some(100.0 * h as f64 / t as f64) };
        let mut row = Vec::new();
        for s in Setting::ALL {
            let c = counts(anns, preds, s);
            if s != Setting::GtVerb {
                row.push(pct(c[2], c[0]));
            }
            row.extend([pct(c[3], c[1]), pct(c[4], c[0]), pct(c[5], c[1]), pct(c[6], c[0])]);
        }
        row
    }
}

fn metric_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (anns, preds) = gen::dataset(&mut rng, 200);
    let engine = evaluate_dataset(&anns, &preds, &Setting::ALL, &EvalConfig::default()).report.table_row();
    let brute = oracle::table(&anns, &preds);
    let secs = started.elapsed().as_secs_f64();
    check(
        engine.len() == 14 && engine == brute && secs < 5.0,
        format!("200 samples, 14 numbers equal: {}, {secs:.3}s", engine == brute),
    )
}

fn verb_gating() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut anns, mut preds) = gen::dataset(&mut rng, 200);
    anns.extend(common::annotations());
    preds.extend(common::predictions());
    let cfg = EvalConfig::default();
    let mut checked = 0;
    let mut leaks = 0;
    for (gt, p) in anns.iter().zip(&preds) {
        let mut corrupted = p.clone();
        corrupted.top5[0].verb = format!("not-{}", gt.verb);
        let f = eval_sample(gt, &corrupted, Setting::Top1, &cfg).unwrap().flags;
        checked += 1;
        let any = f.verb_correct != Some(false)
            || f.value_all
            || f.grounded_all
            || f.roles.iter().any(|r| r.value_correct || r.grounded_correct);
        leaks += any as usize;
    }
    check(leaks == 0, format!("{checked} corrupted samples, {leaks} with a surviving flag"))
}

fn iou_grid() -> Outcome {
    const N: usize = 256;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let lattice_box = |rng: &mut ChaCha8Rng| {
        let (a, b) = (rng.random_range(0..N), rng.random_range(0..N));
        let (c, d) = (rng.random_range(0..N), rng.random_range(0..N));
        let (x1, x2) = (a.min(b), a.max(b) + 1);
        let (y1, y2) = (c.min(d), c.max(d) + 1);
        (x1, y1, x2, y2)
    };
    let unit = |v: usize| v as f64 / N as f64;
    let mut worst: f64 = 0.0;
    let mut overlapping = 0;
    for _ in 0..1000 {
        let a = lattice_box(&mut rng);
        let b = lattice_box(&mut rng);
        let (mut ia, mut ib, mut both) = (0usize, 0usize, 0usize);
        for y in 0..N {
            for x in 0..N {
                let in_a = x >= a.0 && x < a.2 && y >= a.1 && y < a.3;
                let in_b = x >= b.0 && x < b.2 && y >= b.1 && y < b.3;
                ia += in_a as usize;
                ib += in_b as usize;
                both += (in_a && in_b) as usize;
            }
        }
        let grid = both as f64 / (ia + ib - both) as f64;
        overlapping += (both > 0) as usize;
        let to_box = |t: (usize, usize, usize, usize)| BoundingBox::new(unit(t.0), unit(t.1), unit(t.2), unit(t.3)).unwrap();
        worst = worst.max((box_iou(&to_box(a), &to_box(b)) - grid).abs());
    }
    let a = BoundingBox::new(0.1, 0.2, 0.7, 0.9).unwrap();
    let far = BoundingBox::new(0.7, 0.0, 1.0, 0.2).unwrap();
    let exact = box_iou(&a, &a) == 1.0 && box_iou(&a, &far) == 0.0;
    check(
        worst <= 1e-3 && exact,
        format!("1000 pairs ({overlapping} overlapping), max |error| {worst:.2e}, identity/disjoint exact: {exact}"),
    )
}

fn random_bitmask(rng: &mut ChaCha8Rng, (w, h): (usize, usize)) -> Bitmask {
    let bits: Vec<bool> = match rng.random_range(0..3) {
        0 => {
            let p = rng.random_range(0.0..=1.0);
            (0..w * h).map(|_| rng.random_bool(p)).collect()
        }
        1 => {
            let (x1, x2, y1, y2) = (rng.random_range(0..w), rng.random_range(0..=w), rng.random_range(0..h), rng.random_range(0..=h));
            (0..w * h).map(|i| (x1..x2).contains(&(i % w)) && (y1..y2).contains(&(i / w))).collect()
        }
        _ => {
            let mut on = rng.random_bool(0.5);
            (0..w * h)
                .map(|_| {
                    if rng.random_bool(0.02) {
                        on = !on;
                    }
                    on
                })
                .collect()
        }
    };
    Bitmask::from_bits(w, h, bits).unwrap()
}

fn rle_codec() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut failures = 0;
    let mut largest = 0;
    for i in 0..1000 {
        let dims = if i < 3 { (256, 256) } else { (rng.random_range(1..=256), rng.random_range(1..=256)) };
        let bm = random_bitmask(&mut rng, dims);
        largest = largest.max(bm.width() * bm.height());
        let ok = rle_encode(&bm).map(|r| rle_decode(&r) == bm).unwrap_or(false);
        failures += (!ok) as usize;
    }
    check(failures == 0, format!("1000 grids (largest {largest} px), {failures} mismatches"))
}

fn disjointness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut broken = 0;
    let mut ambiguous_bundles = 0;
    for _ in 0..500 {
        let (w, h) = (rng.random_range(4..64), rng.random_range(4..64));
        let n = rng.random_range(1..=6);
        let masks: Vec<EntityMask> = (0..n)
            .map(|i| {
                let p = rng.random_range(0.1..0.8);
                let bits = (0..w * h).map(|_| rng.random_bool(p)).collect();
                EntityMask {
                    role: format!("R{i}"),
                    mask: rle_encode(&Bitmask::from_bits(w, h, bits).unwrap()).unwrap(),
                    confidence: (rng.random_range(0..4) as f64) / 4.0,
                }
            })
            .collect();
        let out = make_disjoint(&masks).unwrap();
        let union = |ms: &[EntityMask]| -> Vec<bool> {
            let mut u = vec![false; w * h];
            for m in ms {
                for (i, b) in rle_decode(&m.mask).bits().iter().enumerate() {
                    u[i] |= *b;
                }
            }
            u
        };
        if !is_pairwise_disjoint(&out) || union(&out) != union(&masks) {
            broken += 1;
        }
        let entries = (0..n)
            .map(|i| SituationEntry {
                role: format!("R{i}"),
                noun: format!("n{i}"),
                bbox: Some(gen_box(&mut rng, w, h)),
            })
            .collect();
        let bundle = SceneBundle {
            image_id: "random".into(),
            image_ref: None,
            width: w,
            height: h,
            situation: GroundedSituation { verb: "synthetic".into(), entries },
            displays: (0..n).map(|i| format!("n{i}")).collect(),
            caption: String::new(),
            masks: MaskSet::new(w, h, out).unwrap(),
            provenance: Provenance {
                backend_id: "test".into(),
                degraded: false,
                warnings: Vec::new(),
                created_unix_ms: 0,
                segment_ms: 0.0,
            },
        };
        let report = ambiguity_report(&bundle, NonZeroUsize::MIN);
        ambiguous_bundles += (report.mask_fraction != 0.0) as usize;
    }
    check(
        broken == 0 && ambiguous_bundles == 0,
        format!("500 sets, {broken} overlapping or union-changing, {ambiguous_bundles} bundles with mask ambiguity"),
    )
}

fn gen_box(rng: &mut ChaCha8Rng, w: usize, h: usize) -> BoundingBox {
    let (x1, y1) = (rng.random_range(0.0..w as f64 - 1.0), rng.random_range(0.0..h as f64 - 1.0));
    BoundingBox::new(x1, y1, rng.random_range(x1 + 1.0..=w as f64), rng.random_range(y1 + 1.0..=h as f64)).unwrap()
}

fn overlap_scenario() -> Outcome {
    let bundle = common::riding_bundle();
    let p = Point::new(6.0, 6.0);
    let bbox = resolve_point(&bundle, p, QueryMode::Bbox).unwrap().hits.len();
    let mask = resolve_point(&bundle, p, QueryMode::Mask).unwrap().hits.len();
    check(bbox == 2 && mask == 1, format!("bbox mode {bbox} hits, mask mode {mask} hit"))
}

fn simpson_phi(x: f64) -> f64 {
    let n = 2000;
    let h = x / n as f64;
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(0.0) + pdf(x);
    for i in 1..n {
        s += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    0.5 + s * h / 3.0
}

fn gelu_math() -> Outcome {
    let at_one = (gelu(1.0).unwrap() - simpson_phi(1.0)).abs();
    let step = 1e-5;
    let mut grad_err: f64 = 0.0;
    let mut above_relu = 0;
    for i in 0..=1200 {
        let x = -6.0 + i as f64 * 0.01;
        let fd = (gelu(x + step).unwrap() - gelu(x - step).unwrap()) / (2.0 * step);
        grad_err = grad_err.max((fd - gelu_grad(x).unwrap()).abs());
        above_relu += (gelu(x).unwrap() > relu(x).unwrap()) as usize;
    }
    let cfg = ConvergenceConfig::default();
    let first = serde_json::to_string(&run_convergence_lab(&cfg).unwrap()).unwrap();
    let second = serde_json::to_string(&run_convergence_lab(&cfg).unwrap()).unwrap();
    let report = run_convergence_lab(&cfg).unwrap();
    let finite = report.runs.iter().all(|r| r.losses.iter().all(|l| l.is_finite()));
    check(
        at_one <= 1e-6 && grad_err < 1e-5 && above_relu == 0 && first == second && finite,
        format!(
            "|gelu(1) - Phi(1)| {at_one:.1e}, max grad error {grad_err:.1e}, gelu > relu at {above_relu} points, lab repeatable: {}, finite: {finite}",
            first == second
        ),
    )
}

fn captions() -> Outcome {
    let lex = common::lexicon();
    let sitting = lex
        .render_caption("sitting", &[("Agent", "n10787470"), ("Item", "n03001627"), ("Place", "n03841666")])
        .unwrap();
    let riding = lex
        .render_caption("riding", &[("Agent", "n10287213"), ("Vehicle", "n03790512"), ("Place", "n04096066")])
        .unwrap();
    check(
        sitting == "A woman sits on a chair at an office" && riding == "A man rides the motorcycle at a road",
        format!("{sitting:?}, {riding:?}"),
    )
}

fn latency() -> Outcome {
    let config = BenchConfig {
        repetitions: 15,
        ..BenchConfig::default()
    };
    let run = run_pipeline_bench(&config);
    let all_stages = Stage::ALL.iter().all(|s| run.records.iter().any(|r| r.stage == *s));
    let per_stage = run
        .stages
        .iter()
        .map(|s| format!("{:?} {:.2}", s.stage, s.median_ms).to_lowercase())
        .collect::<Vec<_>>()
        .join(", ");
    check(
        run.total_median_ms < 100.0 && all_stages,
        format!(
            "{}x{} x{} entities, median {:.2} ms, p95 {:.2} ms ({per_stage}) [{}]",
            config.width,
            config.height,
            config.entities,
            run.total_median_ms,
            run.total_p95_ms,
            osu_core::par::mode()
        ),
    )
}

fn dataset_statistics() -> Outcome {
    let Some(dir) = std::env::var_os("SWIG_DIR") else {
        return Outcome::Skip("SWIG_DIR not set".into());
    };
    let dir = std::path::PathBuf::from(dir);
    let files: Vec<_> = ["train.json", "dev.json", "test.json"].iter().map(|f| dir.join(f)).filter(|p| p.exists()).collect();
    if files.is_empty() {
        return Outcome::Skip(format!("no SWiG split files in {}", dir.display()));
    }
    match load_annotation_files(&files, ParseMode::Lenient) {
        Ok(parsed) => {
            let s = dataset_stats(&parsed.records);
            check(
                s.verbs == 504 && s.roles == 190 && s.nouns == 11_538,
                format!("{} images: {} verbs, {} roles, {} nouns", s.images, s.verbs, s.roles, s.nouns),
            )
        }
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("metric oracle equivalence", metric_oracle),
        ("verb gating", verb_gating),
        ("iou vs pixel grid", iou_grid),
        ("rle codec round trip", rle_codec),
        ("mask disjointness", disjointness),
        ("rider/motorcycle overlap", overlap_scenario),
        ("gelu math and convergence lab", gelu_math),
        ("caption fidelity", captions),
        ("pipeline latency", latency),
        ("dataset stats", dataset_statistics),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let (tag, detail) = match run() {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("{tag}  {name:<32} {detail}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
