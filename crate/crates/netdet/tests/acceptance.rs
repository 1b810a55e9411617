//! Acceptance gate: one test per release criterion, each printing a
//! single PASS/FAIL line. The heavyweight directional criteria (7 and 8)
//! share one set of trained runs via a lazily initialized static.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the
//! per-criterion lines.

mod common;

use netdet::cli::{ablate_one, cmd_eval, cmd_train, EvalSummary};
use netdet::config::{Config, RunConfig};
use netdet::detector::{BBox, Detection, GroundTruthBox, Model, ModelConfig, ScaleClass, Variant};
use netdet::eval;
use netdet::gradcheck;
use netdet::netm;
use netdet::nnops;
use netdet::pyramid::PyramidConfig;
use netdet::scenes::{self, SceneConfig};
use netdet::tape::Tape;
use netdet::tensor::{ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;
use std::time::Instant;

fn report(criterion: usize, name: &str, ok: bool, detail: &str) {
    println!(
        "{} [criterion {criterion}] {name}: {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {criterion} ({name}) failed: {detail}");
}

fn desk_run_config() -> RunConfig {
    let mut cfg = Config::parse("").unwrap();
    RunConfig::from_config(&mut cfg).unwrap()
}

// ------------------------------------------------------------------ 1 & 2

#[test]
fn c01_reversed_gate_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let p_t = Tensor::random_uniform(&[2, 6, 6], -2.0, 2.0, &mut rng);
        let g_t = Tensor::random_uniform(&[2, 6, 6], 0.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let p = tape.leaf(p_t.clone());
        let g = tape.leaf(g_t.clone());
        let es = netm::extract_salient(&mut tape, p, g).unwrap();
        let erased = netm::erase(&mut tape, p, es).unwrap();
        for ((e, pv), gv) in tape.value(erased).data().iter().zip(p_t.data()).zip(g_t.data()) {
            worst = worst.max((e - pv * (1.0 - gv)).abs());
        }
    }
    let ok = worst <= 1e-12 && start.elapsed().as_secs_f64() < 5.0;
    report(
        1,
        "reversed-gate identity",
        ok,
        &format!("max |erase(p, p*g) - p*(1-g)| = {worst:.3e} over 1000 pairs, {:.2}s", start.elapsed().as_secs_f64()),
    );
}

#[test]
fn c02_erase_conservation() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let p_t = Tensor::random_uniform(&[2, 6, 6], -2.0, 2.0, &mut rng);
        let g_t = Tensor::random_uniform(&[2, 6, 6], 0.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let p = tape.leaf(p_t.clone());
        let g = tape.leaf(g_t.clone());
        let es = netm::extract_salient(&mut tape, p, g).unwrap();
        let erased = netm::erase(&mut tape, p, es).unwrap();
        let rebuilt = tape.add(es, erased).unwrap();
        for (a, b) in tape.value(rebuilt).data().iter().zip(p_t.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    let ok = worst <= 1e-12;
    report(
        2,
        "conservation p_es + erased == p",
        ok,
        &format!("max partition error = {worst:.3e} over 1000 pairs"),
    );
}

// ---------------------------------------------------------------------- 3

#[test]
fn c03_gradient_suite() {
    let start = Instant::now();
    let seeds: Vec<u64> = (0..20).collect();
    let reports = gradcheck::run_all(&seeds, false).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let worst_rel = reports.iter().map(|r| r.max_rel).fold(0.0f64, f64::max);
    let has_end_to_end = reports.iter().any(|r| r.name == "detector_mini");
    let ok = gradcheck::all_pass(&reports) && has_end_to_end && elapsed < 120.0;
    report(
        3,
        "gradient suite vs finite differences",
        ok,
        &format!(
            "{} cases, worst rel {:.3e} (tol {:.0e}), end-to-end model included, {:.1}s (< 120s)",
            reports.len(),
            worst_rel,
            gradcheck::REL_TOL,
            elapsed
        ),
    );
}

// ---------------------------------------------------------------------- 4

#[test]
fn c04_oracle_gate_nulling() {
    let scene_cfg = SceneConfig::default();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let model = Model::new(ModelConfig::desk(Variant::Baseline), &mut store, &mut rng).unwrap();
    let (lh, lw) = {
        let sizes = model.config.pyramid.level_sizes();
        (sizes[0], sizes[0])
    };

    let mut checked = 0usize;
    let mut index = 0u64;
    let mut worst_ratio = 0.0f64;
    while checked < 20 {
        let scene = scenes::generate_scene(&scene_cfg, index).unwrap();
        index += 1;
        let mask = scenes::large_object_mask(&scene, lh, lw, &[ScaleClass::Medium, ScaleClass::Large]);
        if mask.data().iter().all(|&v| v <= 0.5) {
            continue;
        }
        let mut tape = Tape::new();
        let levels = model.backbone.forward_image(&mut tape, &store, &scene.image).unwrap().levels;
        let p1 = levels[0];
        let logits = tape.leaf(mask.map(|v| if v > 0.5 { 40.0 } else { -40.0 }));
        let gate = tape.sigmoid(logits).unwrap();
        let es = netm::extract_salient(&mut tape, p1, gate).unwrap();
        let erased = netm::erase(&mut tape, p1, es).unwrap();

        let (c, h, w) = tape.value(p1).chw();
        let mut pre = 0.0f64;
        let mut post = 0.0f64;
        for ic in 0..c {
            for p in 0..h * w {
                if mask.data()[p] > 0.5 {
                    pre += tape.value(p1).data()[ic * h * w + p].powi(2);
                    post += tape.value(erased).data()[ic * h * w + p].powi(2);
                }
            }
        }
        assert!(pre > 0.0, "masked region should carry feature energy");
        worst_ratio = worst_ratio.max(post / pre);
        checked += 1;
    }
    let ok = worst_ratio <= 1e-10;
    report(
        4,
        "oracle-gate nulling of masked energy",
        ok,
        &format!("worst residual energy ratio {worst_ratio:.3e} over {checked} scenes"),
    );
}

// ---------------------------------------------------------------------- 5

fn random_fixture(rng: &mut ChaCha8Rng) -> (Vec<Vec<Detection>>, Vec<Vec<GroundTruthBox>>) {
    let images = rng.random_range(1..=2);
    let total_dets = rng.random_range(0..=6);
    let total_gts = rng.random_range(0..=4);
    let scales = [ScaleClass::Small, ScaleClass::Medium, ScaleClass::Large];
    let mut dets = vec![Vec::new(); images];
    let mut gts = vec![Vec::new(); images];
    let rand_box = |rng: &mut ChaCha8Rng| {
        let x = rng.random_range(0.0..0.7);
        let y = rng.random_range(0.0..0.7);
        let w = rng.random_range(0.05..0.3);
        let h = rng.random_range(0.05..0.3);
        BBox::new(x, y, x + w, y + h)
    };
    for _ in 0..total_dets {
        let img = rng.random_range(0..images);
        dets[img].push(Detection {
            bbox: rand_box(rng),
            class_id: rng.random_range(1..=2),
            score: rng.random_range(0.0..1.0),
        });
    }
    for _ in 0..total_gts {
        let img = rng.random_range(0..images);
        gts[img].push(GroundTruthBox {
            bbox: rand_box(rng),
            class_id: rng.random_range(1..=2),
            scale_class: scales[rng.random_range(0..3)],
        });
    }
    (dets, gts)
}

#[test]
fn c05_evaluator_equivalence() {
    // exhaustive oracle over random small fixtures
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut cases = 0usize;
    for _ in 0..300 {
        let (dets, gts) = random_fixture(&mut rng);
        for class_id in 1..=2 {
            for &iou_thresh in &[0.3, 0.5, 0.75] {
                let lib = eval::compute_ap(&dets, &gts, class_id, iou_thresh, None);
                let oracle = common::oracle_ap(&dets, &gts, class_id, iou_thresh);
                let equal = (lib.is_nan() && oracle.is_nan()) || lib == oracle;
                assert!(equal, "AP mismatch: lib {lib} oracle {oracle} (class {class_id}, iou {iou_thresh})");
                cases += 1;
            }
        }
    }

    // hand-computed part-FP fixtures
    let gt = |b, c, s| GroundTruthBox { bbox: b, class_id: c, scale_class: s };
    let det = |b, c, s| Detection { bbox: b, class_id: c, score: s };
    // GT covers the left half of the image
    let gts = vec![vec![gt(BBox::new(0.0, 0.0, 0.5, 1.0), 1, ScaleClass::Large)]];
    let dets = vec![vec![
        det(BBox::new(0.1, 0.1, 0.2, 0.2), 1, 0.9),  // fully inside: p = 1
        det(BBox::new(0.4, 0.0, 0.6, 0.2), 1, 0.8),  // straddles: p = 0.5
        det(BBox::new(0.375, 0.0, 0.875, 0.25), 1, 0.7), // quarter inside: p = 0.25
        det(BBox::new(0.7, 0.7, 0.8, 0.8), 1, 0.6),  // disjoint: p = 0
    ]];
    for (fp, want) in eval::fp_analysis(&dets, &gts, 0.5).iter().zip([1.0, 0.5, 0.25, 0.0]) {
        let p = eval::part_rate(&fp.detection, &gts[fp.image]);
        assert!((p - want).abs() < 1e-12, "part rate {p} != {want}");
    }
    let rates = eval::pfp_rate(&dets, &gts, 0.5, &[0.25, 0.5, 0.75, 1.0]);
    assert_eq!(rates, vec![3.0 / 4.0, 2.0 / 4.0, 1.0 / 4.0, 1.0 / 4.0]);

    // class-aware: overlap with a different class contributes nothing
    let gts2 = vec![vec![gt(BBox::new(0.0, 0.0, 0.5, 1.0), 2, ScaleClass::Large)]];
    assert_eq!(eval::pfp_rate(&dets, &gts2, 0.5, &[0.5]), vec![0.0]);

    report(
        5,
        "evaluator equivalence",
        true,
        &format!("compute_ap == exhaustive oracle on {cases} fixture checks; pfp fixtures exact"),
    );
}

// ---------------------------------------------------------------------- 6

#[test]
fn c06_kernel_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut worst = 0.0f64;
    let mut cases = 0usize;
    for _ in 0..60 {
        let c = rng.random_range(1..=4);
        let h = rng.random_range(4..=9);
        let w = rng.random_range(4..=9);
        let x = Tensor::random_uniform(&[c, h, w], -2.0, 2.0, &mut rng);

        // conv
        let co = rng.random_range(1..=3);
        let k = if rng.random_bool(0.5) { 1 } else { 3 };
        let stride = rng.random_range(1..=2);
        let pad = if k == 3 { rng.random_range(0..=1) } else { 0 };
        let kw = Tensor::random_uniform(&[co, c, k, k], -1.0, 1.0, &mut rng);
        let kb = Tensor::random_uniform(&[co], -0.5, 0.5, &mut rng);
        let lib = nnops::conv_forward(&x, &kw, &kb, stride, pad).unwrap();
        let oracle = common::naive_conv(&x, &kw, &kb, stride, pad);
        worst = worst.max(common::max_abs_diff(&lib, &oracle));

        // fixed pooling
        let win = rng.random_range(2..=3);
        let ps = rng.random_range(1..=2);
        if h >= win && w >= win {
            let (mp, _) = nnops::max_pool_forward(&x, win, ps).unwrap();
            worst = worst.max(common::max_abs_diff(&mp, &common::naive_max_pool(&x, win, ps)));
            let ap = nnops::avg_pool_forward(&x, win, ps).unwrap();
            worst = worst.max(common::max_abs_diff(&ap, &common::naive_avg_pool(&x, win, ps)));
        }

        // adaptive pooling with non-integer ratios
        let oh = rng.random_range(1..=h);
        let ow = rng.random_range(1..=w);
        let (amp, _) = nnops::adaptive_max_pool_forward(&x, oh, ow).unwrap();
        worst = worst.max(common::max_abs_diff(&amp, &common::naive_adaptive_max_pool(&x, oh, ow)));

        // upsampling
        let uh = rng.random_range(h..=2 * h);
        let uw = rng.random_range(w..=2 * w);
        let up = nnops::bilinear_upsample_forward(&x, uh, uw).unwrap();
        worst = worst.max(common::max_abs_diff(&up, &common::naive_upsample(&x, uh, uw)));
        cases += 1;
    }
    let ok = worst <= 1e-10;
    report(
        6,
        "kernel equivalence vs naive references",
        ok,
        &format!("max abs deviation {worst:.3e} over {cases} random cases"),
    );
}

// ------------------------------------------------------------------ 7 & 8

struct AblationRuns {
    baseline: Vec<EvalSummary>,
    netm: Vec<EvalSummary>,
    elapsed_s: f64,
}

static RUNS: OnceLock<AblationRuns> = OnceLock::new();

fn ablation_runs() -> &'static AblationRuns {
    RUNS.get_or_init(|| {
        let run = desk_run_config();
        assert_eq!(run.train_scenes, 500);
        assert_eq!(run.test_scenes, 100);
        assert_eq!(run.train.epochs, 30);
        let start = Instant::now();
        let mut baseline = Vec::new();
        let mut netm_runs = Vec::new();
        for seed in 0..5u64 {
            baseline.push(ablate_one(&run, Variant::Baseline, seed).unwrap());
            netm_runs.push(ablate_one(&run, Variant::Netm, seed).unwrap());
        }
        AblationRuns {
            baseline,
            netm: netm_runs,
            elapsed_s: start.elapsed().as_secs_f64(),
        }
    })
}

fn pfp50_of(run: &RunConfig, s: &EvalSummary) -> f64 {
    let i = run.pfp_thresholds.iter().position(|&t| (t - 0.5).abs() < 1e-12).unwrap();
    s.pfp[i]
}

#[test]
fn c07_directional_ablation() {
    let runs = ablation_runs();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ap_b: Vec<f64> = runs.baseline.iter().map(|s| s.ap_scale[0]).collect();
    let ap_n: Vec<f64> = runs.netm.iter().map(|s| s.ap_scale[0]).collect();
    let fn_b: Vec<f64> = runs.baseline.iter().map(|s| s.fn_report.scale_rate(ScaleClass::Small)).collect();
    let fn_n: Vec<f64> = runs.netm.iter().map(|s| s.fn_report.scale_rate(ScaleClass::Small)).collect();

    let ap_wins = ap_n.iter().zip(&ap_b).filter(|(n, b)| n > b).count();
    let fn_wins = fn_n.iter().zip(&fn_b).filter(|(n, b)| n < b).count();
    let ok = mean(&ap_n) > mean(&ap_b) && mean(&fn_n) < mean(&fn_b) && ap_wins >= 4 && fn_wins >= 4;
    let r4 = |v: &[f64]| v.iter().map(|x| (x * 1e4).round() / 1e4).collect::<Vec<_>>();
    report(
        7,
        "directional ablation (small objects)",
        ok,
        &format!(
            "AP_small {:.4} -> {:.4} ({}-of-5 seeds, per-seed {:?} -> {:?}), FN_small {:.4} -> {:.4} ({}-of-5 seeds, per-seed {:?} -> {:?}), {:.1} min total",
            mean(&ap_b),
            mean(&ap_n),
            ap_wins,
            r4(&ap_b),
            r4(&ap_n),
            mean(&fn_b),
            mean(&fn_n),
            fn_wins,
            r4(&fn_b),
            r4(&fn_n),
            runs.elapsed_s / 60.0
        ),
    );
}

#[test]
fn c08_pfp_direction() {
    let runs = ablation_runs();
    let run = desk_run_config();
    let b: Vec<f64> = runs.baseline.iter().map(|s| pfp50_of(&run, s)).collect();
    let n: Vec<f64> = runs.netm.iter().map(|s| pfp50_of(&run, s)).collect();
    let wins = n.iter().zip(&b).filter(|(n, b)| n <= b).count();
    let ok = wins >= 4;
    report(
        8,
        "part-false-positive direction",
        ok,
        &format!(
            "pfp@0.5 baseline {:?} vs netm {:?}: netm <= baseline in {wins}-of-5 seeds",
            b.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
            n.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    );
}

// ---------------------------------------------------------------------- 9

#[test]
fn c09_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let mut run = desk_run_config();
    run.train_scenes = 40;
    run.test_scenes = 10;
    run.train.epochs = 3;
    run.model.variant = Variant::Netm;

    let read = |p: &std::path::Path| std::fs::read(p).unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    cmd_train(&run, &a).unwrap();
    cmd_train(&run, &b).unwrap();
    let mut identical = vec![
        ("loss.csv", read(&a.join("loss.csv")) == read(&b.join("loss.csv"))),
        ("checkpoint.ckpt", read(&a.join("checkpoint.ckpt")) == read(&b.join("checkpoint.ckpt"))),
    ];

    let ea = tmp.path().join("ea");
    let eb = tmp.path().join("eb");
    cmd_eval(&run, &a.join("checkpoint.ckpt"), &ea).unwrap();
    cmd_eval(&run, &a.join("checkpoint.ckpt"), &eb).unwrap();
    for f in ["metrics.csv", "detections.json", "pr_class1_c50.csv"] {
        identical.push((f, read(&ea.join(f)) == read(&eb.join(f))));
    }

    let ok = identical.iter().all(|(_, same)| *same);
    let detail: Vec<&str> = identical.iter().filter(|(_, same)| !*same).map(|(f, _)| *f).collect();
    report(
        9,
        "byte-identical reruns",
        ok,
        &if detail.is_empty() {
            format!("{} artifacts byte-identical across reruns", identical.len())
        } else {
            format!("differing artifacts: {detail:?}")
        },
    );
}

// --------------------------------------------------------------------- 10

#[test]
fn c10_shape_conformance() {
    let full = PyramidConfig::full();
    let sizes = full.level_sizes();
    assert_eq!(sizes, vec![38, 19, 10, 5, 3, 1], "full profile pyramid sizes");

    // reconfiguration preserves every level's shape, on the full profile
    // with both NETM wiring and NNFM fusion active
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let mut config = ModelConfig::desk(Variant::Netnet);
    config.pyramid = full.clone();
    let model = Model::new(config, &mut store, &mut rng).unwrap();
    let image = Tensor::random_uniform(&[full.in_channels, full.input_size, full.input_size], 0.0, 1.0, &mut rng);
    let mut tape = Tape::new();
    let levels = model.feature_pyramid(&mut tape, &store, &image).unwrap();
    let channels = full.level_channels();
    for (i, (&lvl, (&size, &ch))) in levels.iter().zip(sizes.iter().zip(&channels)).enumerate() {
        assert_eq!(
            tape.value(lvl).shape(),
            &[ch, size, size],
            "full-profile level {i} shape"
        );
    }

    // same property on the desk profile for the trained variant
    let mut store = ParamStore::new();
    let desk = ModelConfig::desk(Variant::Netm);
    let desk_pyr = desk.pyramid.clone();
    let model = Model::new(desk, &mut store, &mut rng).unwrap();
    let image = Tensor::random_uniform(&[1, desk_pyr.input_size, desk_pyr.input_size], 0.0, 1.0, &mut rng);
    let mut tape = Tape::new();
    let levels = model.feature_pyramid(&mut tape, &store, &image).unwrap();
    for (i, (&lvl, (&size, &ch))) in levels
        .iter()
        .zip(desk_pyr.level_sizes().iter().zip(&desk_pyr.level_channels()))
        .enumerate()
    {
        assert_eq!(tape.value(lvl).shape(), &[ch, size, size], "desk level {i} shape");
    }

    report(
        10,
        "shape conformance",
        true,
        "full profile sizes {38,19,10,5,3,1}; NETM/NNFM preserve level shapes on both profiles",
    );
}
