//! Command implementations behind the binary: gradient checking, training,
//! evaluation, variant ablation, error analysis, and feature-map dumps.
//! Every command writes its artifacts plus a manifest into one run
//! directory; floats in CSVs are printed at 9 significant digits so
//! identical (config, seed) runs are byte-identical.

use crate::checkpoint;
use crate::config::RunConfig;
use crate::detector::{predict, train, BBox, Detection, GroundTruthBox, Model, ScaleClass, Variant};
use crate::error::{NetError, Result};
use crate::eval;
use crate::netm;
use crate::scenes::{self, write_pgm, Scene};
use crate::tape::Tape;
use crate::tensor::{ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// 9 significant digits, or "absent" for an undefined metric.
pub fn fmt9(v: f64) -> String {
    if v.is_nan() {
        "absent".to_string()
    } else {
        format!("{v:.8e}")
    }
}

/// Scene index base for test sets, far from any training index.
const TEST_SCENE_BASE: u64 = 1 << 32;

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// List every file in the run directory into `manifest.txt`.
fn write_manifest(dir: &Path) -> Result<()> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.txt")
        .collect();
    names.sort();
    let mut f = fs::File::create(dir.join("manifest.txt"))?;
    for n in names {
        writeln!(f, "{n}")?;
    }
    Ok(())
}

fn write_config_copy(dir: &Path, run: &RunConfig) -> Result<()> {
    fs::write(dir.join("config.txt"), run.render())?;
    Ok(())
}

// ---------------------------------------------------------------- gradcheck

/// Finite-difference suite over every registered op; returns overall pass.
pub fn cmd_gradcheck(out: &Path, seed: u64, corrupt: bool) -> Result<bool> {
    ensure_dir(out)?;
    let seeds: Vec<u64> = (0..20).map(|i| seed.wrapping_add(i)).collect();
    let reports = crate::gradcheck::run_all(&seeds, corrupt)?;
    let mut csv = String::from("case,max_rel_error,max_abs_error_near_zero,status\n");
    for r in &reports {
        let status = if r.pass { "pass" } else { "fail" };
        println!("gradcheck {:<20} {} rel={} abs={}", r.name, status, fmt9(r.max_rel), fmt9(r.max_abs_near_zero));
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.name,
            fmt9(r.max_rel),
            fmt9(r.max_abs_near_zero),
            status
        ));
    }
    fs::write(out.join("gradcheck.csv"), csv)?;
    write_manifest(out)?;
    Ok(crate::gradcheck::all_pass(&reports))
}

// ---------------------------------------------------------------- datasets

pub fn train_dataset(run: &RunConfig) -> Result<Vec<(Tensor, Vec<GroundTruthBox>)>> {
    let scenes = scenes::generate_dataset(&run.scene, 0, run.train_scenes)?;
    Ok(scenes.into_iter().map(|s| (s.image, s.gts)).collect())
}

pub fn test_scenes(run: &RunConfig) -> Result<Vec<Scene>> {
    scenes::generate_dataset(&run.scene, TEST_SCENE_BASE, run.test_scenes)
}

pub fn build_model(run: &RunConfig, seed: u64) -> Result<(Model, ParamStore)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut config = run.model.clone();
    config.variant = run.model.variant;
    let model = Model::new(config, &mut store, &mut rng)?;
    Ok((model, store))
}

// ---------------------------------------------------------------- train

pub fn cmd_train(run: &RunConfig, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    write_config_copy(out, run)?;
    let dataset = train_dataset(run)?;
    let (model, mut store) = build_model(run, run.seed)?;
    let mut cfg = run.train.clone();
    cfg.seed = run.seed;
    let log = train(&model, &mut store, &dataset, &cfg)?;
    let mut csv = String::from("epoch,mean_loss\n");
    for (e, l) in log.iter().enumerate() {
        csv.push_str(&format!("{e},{}\n", fmt9(*l)));
    }
    fs::write(out.join("loss.csv"), csv)?;
    checkpoint::save_file(&out.join("checkpoint.ckpt"), &store)?;
    write_manifest(out)?;
    println!(
        "trained {} for {} epochs: first loss {}, final loss {}",
        run.model.variant.name(),
        cfg.epochs,
        fmt9(log[0]),
        fmt9(*log.last().unwrap())
    );
    Ok(())
}

// ---------------------------------------------------------------- records

/// COCO-results-style detection record; bbox is [x, y, width, height] in
/// pixels.
#[derive(Serialize, Deserialize)]
pub struct DetRecord {
    pub image_id: usize,
    pub category_id: usize,
    pub bbox: [f64; 4],
    pub score: f64,
}

/// Ground truth in the same convention plus the scale bucket.
#[derive(Serialize, Deserialize)]
pub struct GtRecord {
    pub image_id: usize,
    pub category_id: usize,
    pub bbox: [f64; 4],
    pub scale_class: ScaleClass,
}

fn det_records(dets: &[Vec<Detection>], image_size: usize) -> Vec<DetRecord> {
    let s = image_size as f64;
    let mut out = Vec::new();
    for (image_id, d) in dets.iter().enumerate() {
        for det in d {
            out.push(DetRecord {
                image_id,
                category_id: det.class_id,
                bbox: [
                    det.bbox.xmin * s,
                    det.bbox.ymin * s,
                    det.bbox.width() * s,
                    det.bbox.height() * s,
                ],
                score: det.score,
            });
        }
    }
    out
}

fn gt_records(gts: &[Vec<GroundTruthBox>], image_size: usize) -> Vec<GtRecord> {
    let s = image_size as f64;
    let mut out = Vec::new();
    for (image_id, g) in gts.iter().enumerate() {
        for gt in g {
            out.push(GtRecord {
                image_id,
                category_id: gt.class_id,
                bbox: [
                    gt.bbox.xmin * s,
                    gt.bbox.ymin * s,
                    gt.bbox.width() * s,
                    gt.bbox.height() * s,
                ],
                scale_class: gt.scale_class,
            });
        }
    }
    out
}

fn group_dets(records: &[DetRecord]) -> Vec<Vec<Detection>> {
    let n = records.iter().map(|r| r.image_id + 1).max().unwrap_or(0);
    let mut out = vec![Vec::new(); n];
    for r in records {
        out[r.image_id].push(Detection {
            bbox: BBox::new(r.bbox[0], r.bbox[1], r.bbox[0] + r.bbox[2], r.bbox[1] + r.bbox[3]),
            class_id: r.category_id,
            score: r.score,
        });
    }
    out
}

fn group_gts(records: &[GtRecord], min_images: usize) -> Vec<Vec<GroundTruthBox>> {
    let n = records.iter().map(|r| r.image_id + 1).max().unwrap_or(0).max(min_images);
    let mut out = vec![Vec::new(); n];
    for r in records {
        out[r.image_id].push(GroundTruthBox {
            bbox: BBox::new(r.bbox[0], r.bbox[1], r.bbox[0] + r.bbox[2], r.bbox[1] + r.bbox[3]),
            class_id: r.category_id,
            scale_class: r.scale_class,
        });
    }
    out
}

// ---------------------------------------------------------------- eval

pub struct EvalSummary {
    pub map: f64,
    pub ap_scale: [f64; 3],
    pub fn_report: eval::FnReport,
    pub fp_count: usize,
    pub pfp: Vec<f64>,
    pub total_dets: usize,
}

/// Run detection + all metrics for a model on a scene list.
pub fn evaluate_model(run: &RunConfig, model: &Model, store: &ParamStore, scenes: &[Scene]) -> Result<(EvalSummary, Vec<Vec<Detection>>)> {
    let mut dets = Vec::with_capacity(scenes.len());
    for scene in scenes {
        dets.push(predict(model, store, &scene.image, &run.predict)?);
    }
    let gts: Vec<Vec<GroundTruthBox>> = scenes.iter().map(|s| s.gts.clone()).collect();
    let summary = summarize(run, &dets, &gts);
    Ok((summary, dets))
}

pub fn summarize(run: &RunConfig, dets: &[Vec<Detection>], gts: &[Vec<GroundTruthBox>]) -> EvalSummary {
    let nc = run.model.num_classes;
    let map = eval::mean_ap(dets, gts, nc, run.eval_iou, None);
    let ap_scale = [
        eval::mean_ap(dets, gts, nc, run.eval_iou, Some(ScaleClass::Small)),
        eval::mean_ap(dets, gts, nc, run.eval_iou, Some(ScaleClass::Medium)),
        eval::mean_ap(dets, gts, nc, run.eval_iou, Some(ScaleClass::Large)),
    ];
    let fn_report = eval::fn_analysis(dets, gts, nc, run.eval_iou);
    let fp_count = eval::fp_analysis(dets, gts, run.eval_iou).len();
    let pfp = eval::pfp_rate(dets, gts, run.eval_iou, &run.pfp_thresholds);
    EvalSummary {
        map,
        ap_scale,
        fn_report,
        fp_count,
        pfp,
        total_dets: dets.iter().map(|d| d.len()).sum(),
    }
}

fn metrics_csv(run: &RunConfig, s: &EvalSummary) -> String {
    let mut csv = String::from("metric,filter,threshold,value\n");
    let iou = run.eval_iou;
    csv.push_str(&format!("ap,all,{},{}\n", iou, fmt9(s.map)));
    for (i, sc) in ScaleClass::ALL.iter().enumerate() {
        csv.push_str(&format!("ap,{},{},{}\n", sc.name(), iou, fmt9(s.ap_scale[i])));
    }
    csv.push_str(&format!("fn_rate,all,{},{}\n", iou, fmt9(s.fn_report.rate())));
    for sc in ScaleClass::ALL {
        csv.push_str(&format!("fn_rate,{},{},{}\n", sc.name(), iou, fmt9(s.fn_report.scale_rate(sc))));
    }
    csv.push_str(&format!("fn_count,all,{},{}\n", iou, s.fn_report.fn_count));
    csv.push_str(&format!("gt_count,all,{},{}\n", iou, s.fn_report.total_gts));
    csv.push_str(&format!("fp_count,all,{},{}\n", iou, s.fp_count));
    csv.push_str(&format!("det_count,all,,{}\n", s.total_dets));
    for (t, v) in run.pfp_thresholds.iter().zip(&s.pfp) {
        csv.push_str(&format!("pfp_rate,all,{t},{}\n", fmt9(*v)));
    }
    csv
}

fn pr_curve_csv(curve: &eval::PrCurve) -> String {
    let mut csv = String::from("recall,precision\n");
    for (r, p) in &curve.points {
        csv.push_str(&format!("{},{}\n", fmt9(*r), fmt9(*p)));
    }
    csv
}

pub fn cmd_eval(run: &RunConfig, checkpoint_path: &Path, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    write_config_copy(out, run)?;
    let (model, mut store) = build_model(run, run.seed)?;
    checkpoint::restore(&mut store, checkpoint::load_file(checkpoint_path)?)?;
    let scenes = test_scenes(run)?;
    let (summary, dets) = evaluate_model(run, &model, &store, &scenes)?;
    let gts: Vec<Vec<GroundTruthBox>> = scenes.iter().map(|s| s.gts.clone()).collect();

    let size = run.model.pyramid.input_size;
    fs::write(out.join("detections.json"), serde_json::to_string_pretty(&det_records(&dets, size))?)?;
    fs::write(out.join("ground_truth.json"), serde_json::to_string_pretty(&gt_records(&gts, size))?)?;
    fs::write(out.join("metrics.csv"), metrics_csv(run, &summary))?;
    for c in 1..run.model.num_classes {
        for (tag, iou) in [("c50", 0.5), ("c75", 0.75)] {
            let curve = eval::pr_curve(&dets, &gts, c, iou, None);
            fs::write(out.join(format!("pr_class{c}_{tag}.csv")), pr_curve_csv(&curve))?;
        }
    }
    write_manifest(out)?;
    println!("eval: mAP {} (small {}, medium {}, large {})", fmt9(summary.map), fmt9(summary.ap_scale[0]), fmt9(summary.ap_scale[1]), fmt9(summary.ap_scale[2]));
    Ok(())
}

// ---------------------------------------------------------------- ablate

/// Train/evaluate a (variant, seed) pair; returns its metric row.
pub fn ablate_one(run: &RunConfig, variant: Variant, seed: u64) -> Result<EvalSummary> {
    let mut vrun = run.clone();
    vrun.model.variant = variant;
    vrun.seed = seed;
    let dataset = train_dataset(&vrun)?;
    let (model, mut store) = build_model(&vrun, seed)?;
    let mut cfg = vrun.train.clone();
    cfg.seed = seed;
    train(&model, &mut store, &dataset, &cfg)?;
    let scenes = test_scenes(&vrun)?;
    let (summary, _) = evaluate_model(&vrun, &model, &store, &scenes)?;
    Ok(summary)
}

fn pfp50(run: &RunConfig, s: &EvalSummary) -> f64 {
    run.pfp_thresholds
        .iter()
        .position(|&t| (t - 0.5).abs() < 1e-12)
        .map_or(f64::NAN, |i| s.pfp[i])
}

pub fn cmd_ablate(run: &RunConfig, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    write_config_copy(out, run)?;
    let mut csv = String::from("variant,seed,ap,ap_small,ap_medium,ap_large,fn_rate,fn_small,pfp50\n");
    for &variant in &run.ablate_variants {
        let mut sums = [0.0f64; 7];
        for seed in 0..run.ablate_seeds as u64 {
            let s = ablate_one(run, variant, run.seed + seed)?;
            let row = [
                s.map,
                s.ap_scale[0],
                s.ap_scale[1],
                s.ap_scale[2],
                s.fn_report.rate(),
                s.fn_report.scale_rate(ScaleClass::Small),
                pfp50(run, &s),
            ];
            for (acc, v) in sums.iter_mut().zip(row) {
                *acc += v;
            }
            csv.push_str(&format!(
                "{},{},{}\n",
                variant.name(),
                run.seed + seed,
                row.map(fmt9).join(",")
            ));
            println!(
                "ablate {} seed {}: ap {} ap_small {} fn_small {}",
                variant.name(),
                run.seed + seed,
                fmt9(row[0]),
                fmt9(row[1]),
                fmt9(row[5])
            );
        }
        let n = run.ablate_seeds as f64;
        csv.push_str(&format!(
            "{},mean,{}\n",
            variant.name(),
            sums.map(|v| fmt9(v / n)).join(",")
        ));
    }
    fs::write(out.join("ablate.csv"), csv)?;
    write_manifest(out)?;
    Ok(())
}

// ---------------------------------------------------------------- analyze

pub fn cmd_analyze(run: &RunConfig, detections: &Path, ground_truth: &Path, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let det_records: Vec<DetRecord> = serde_json::from_str(&fs::read_to_string(detections)?)?;
    let gt_records: Vec<GtRecord> = serde_json::from_str(&fs::read_to_string(ground_truth)?)?;
    let dets = group_dets(&det_records);
    let n = dets.len();
    let gts = group_gts(&gt_records, n);
    let mut dets = dets;
    dets.resize(gts.len(), Vec::new());

    let summary = summarize(run, &dets, &gts);
    fs::write(out.join("error_report.csv"), metrics_csv(run, &summary))?;
    for c in 1..run.model.num_classes {
        for (tag, iou) in [("c50", 0.5), ("c75", 0.75)] {
            let curve = eval::pr_curve(&dets, &gts, c, iou, None);
            fs::write(out.join(format!("pr_class{c}_{tag}.csv")), pr_curve_csv(&curve))?;
        }
    }
    write_manifest(out)?;
    println!(
        "analyze: {} detections, {} GTs, fn_rate {}, fp_count {}",
        summary.total_dets,
        summary.fn_report.total_gts,
        fmt9(summary.fn_report.rate()),
        summary.fp_count
    );
    Ok(())
}

// ---------------------------------------------------------------- viz

/// Channel mean of a feature map, range-normalized into [0,1] for dumping.
fn normalized_mean_map(t: &Tensor) -> Tensor {
    let (c, h, w) = t.chw();
    let mut mean = Tensor::zeros(&[1, h, w]);
    for ic in 0..c {
        for p in 0..h * w {
            mean.data_mut()[p] += t.data()[ic * h * w + p] / c as f64;
        }
    }
    let lo = mean.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = mean.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        mean.map(|v| (v - lo) / (hi - lo))
    } else {
        Tensor::zeros(&[1, h, w])
    }
}

fn dump_pgm(dir: &Path, name: &str, map: &Tensor) -> Result<()> {
    let mut f = fs::File::create(dir.join(name))?;
    write_pgm(&mut f, map)?;
    Ok(())
}

/// Dump the shallowest erase pair: p_1, its gate, the extracted salient
/// map, and the erased residual. With `oracle`, the gate is replaced by a
/// ±40-logit gate from the scene's medium/large object mask.
pub fn cmd_viz(run: &RunConfig, checkpoint_path: Option<&Path>, scene_index: u64, oracle: bool, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    write_config_copy(out, run)?;
    let (model, mut store) = build_model(run, run.seed)?;
    if let Some(p) = checkpoint_path {
        checkpoint::restore(&mut store, checkpoint::load_file(p)?)?;
    }
    let Some(wire) = &model.wire else {
        return Err(NetError::Config(format!(
            "variant `{}` has no erase stage to visualize",
            run.model.variant.name()
        )));
    };
    let scene = scenes::generate_scene(&run.scene, scene_index)?;
    let mut tape = Tape::new();
    let pyramid = model.backbone.forward_image(&mut tape, &store, &scene.image)?.levels;
    let (si, di) = netm::topology_pairs(wire.topology)[0];
    let p_shallow = pyramid[si];
    let p_deep = pyramid[di];
    let (_, hs, ws) = tape.value(p_shallow).chw();

    let gate = if oracle {
        let mask = scenes::large_object_mask(&scene, hs, ws, &[ScaleClass::Medium, ScaleClass::Large]);
        let logits = tape.leaf(mask.map(|v| if v > 0.5 { 40.0 } else { -40.0 }));
        tape.sigmoid(logits)?
    } else {
        netm::compute_gate(&mut tape, &store, p_deep, hs, ws, &wire.instances[0].nem)?
    };
    let p_es = netm::extract_salient(&mut tape, p_shallow, gate)?;
    let erased = netm::erase(&mut tape, p_shallow, p_es)?;

    dump_pgm(out, "scene.pgm", &scene.image)?;
    dump_pgm(out, "p1.pgm", &normalized_mean_map(tape.value(p_shallow)))?;
    dump_pgm(out, "gate.pgm", &normalized_mean_map(tape.value(gate)))?;
    dump_pgm(out, "p_es.pgm", &normalized_mean_map(tape.value(p_es)))?;
    dump_pgm(out, "p1_erased.pgm", &normalized_mean_map(tape.value(erased)))?;
    write_manifest(out)?;
    println!("viz: wrote scene, p1, gate, p_es, p1_erased to {}", out.display());
    Ok(())
}

pub fn default_out(cmd: &str) -> PathBuf {
    PathBuf::from("runs").join(cmd)
}
