//! Central finite-difference verification of every differentiable op and
//! of an end-to-end mini detector. Each registered case builds a tiny
//! parameter store plus a recording closure; the checker compares tape
//! gradients against (f(x+h) - f(x-h)) / 2h element by element.

use crate::detector::{build_targets, match_anchors, AnchorConfig, Model, ModelConfig, Variant};
use crate::detector::{BBox, GroundTruthBox, ScaleClass};
use crate::error::{NetError, Result};
use crate::layers::FusionBlock;
use crate::netm::{self, GateMode, NemParams, NetmOptions, NetmParams};
use crate::nnfm::{NnfmParams, TdpParams};
use crate::pyramid::{PyramidConfig, StageSpec};
use crate::tape::{MultiboxTargets, Tape, Var};
use crate::tensor::{ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-7;
/// Elements with analytic gradient below this compare absolutely.
pub const NEAR_ZERO: f64 = 1e-8;
const H: f64 = 1e-6;

type RecordFn = Box<dyn Fn(&mut Tape, &ParamStore) -> Result<Var>>;

pub struct Case {
    pub name: &'static str,
    build: fn(u64) -> (ParamStore, RecordFn),
}

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: String,
    pub max_rel: f64,
    pub max_abs_near_zero: f64,
    pub pass: bool,
}

fn eval(store: &ParamStore, record: &RecordFn) -> Result<f64> {
    let mut tape = Tape::new();
    let loss = record(&mut tape, store)?;
    Ok(tape.value(loss).item())
}

/// One (case, seed) comparison. `corrupt` injects an error into the
/// analytic gradient — the negative-control hook.
pub fn check_once(case: &Case, seed: u64, corrupt: bool) -> Result<CheckReport> {
    let (mut store, record) = (case.build)(seed);
    store.zero_grad();
    {
        let mut tape = Tape::new();
        let loss = record(&mut tape, &store)?;
        tape.backward(loss, &mut store)?;
    }
    let mut analytic: Vec<Vec<f64>> = store.iter().map(|(_, p)| p.grad.data().to_vec()).collect();
    if corrupt {
        if let Some(first) = analytic.iter_mut().flat_map(|v| v.iter_mut()).next() {
            *first += 1e-2;
        }
    }

    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    let mut pass = true;
    for (pi, &id) in ids.iter().enumerate() {
        for ei in 0..store.value(id).len() {
            let orig = store.value(id).data()[ei];
            store.value_mut(id).data_mut()[ei] = orig + H;
            let fp = eval(&store, &record)?;
            store.value_mut(id).data_mut()[ei] = orig - H;
            let fm = eval(&store, &record)?;
            store.value_mut(id).data_mut()[ei] = orig;
            let numeric = (fp - fm) / (2.0 * H);
            let a = analytic[pi][ei];
            if a.abs() < NEAR_ZERO {
                let err = (a - numeric).abs();
                max_abs = max_abs.max(err);
                if err > ABS_TOL {
                    pass = false;
                }
            } else {
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
                max_rel = max_rel.max(rel);
                if rel > REL_TOL {
                    pass = false;
                }
            }
        }
    }
    Ok(CheckReport {
        name: case.name.to_string(),
        max_rel,
        max_abs_near_zero: max_abs,
        pass,
    })
}

/// Worst result over several seeds.
pub fn check_case(case: &Case, seeds: &[u64], corrupt: bool) -> Result<CheckReport> {
    let mut worst = CheckReport {
        name: case.name.to_string(),
        max_rel: 0.0,
        max_abs_near_zero: 0.0,
        pass: true,
    };
    for &s in seeds {
        let r = check_once(case, s, corrupt)?;
        worst.max_rel = worst.max_rel.max(r.max_rel);
        worst.max_abs_near_zero = worst.max_abs_near_zero.max(r.max_abs_near_zero);
        worst.pass &= r.pass;
    }
    Ok(worst)
}

/// Run the whole registry; op cases over all seeds, the heavier composite
/// cases over the first seed only.
pub fn run_all(seeds: &[u64], corrupt: bool) -> Result<Vec<CheckReport>> {
    let first = &seeds[..1.min(seeds.len())];
    registry()
        .iter()
        .map(|case| {
            let case_seeds = if is_composite(case.name) { first } else { seeds };
            check_case(case, case_seeds, corrupt)
        })
        .collect()
}

fn is_composite(name: &str) -> bool {
    matches!(name, "fusion_block" | "netm_full" | "nnfm_fuse" | "tdp" | "detector_mini")
}

pub fn all_pass(reports: &[CheckReport]) -> bool {
    reports.iter().all(|r| r.pass)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rt(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::random_uniform(shape, -1.0, 1.0, r)
}

/// Random values bounded away from zero (for relu kinks).
fn rt_away_from_zero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let t = Tensor::random_uniform(shape, 0.05, 1.0, r);
    let signs = Tensor::random_uniform(t.shape(), -1.0, 1.0, r);
    t.zip(&signs, "signs", |v, s| if s < 0.0 { -v } else { v }).unwrap()
}

/// Weighted sum against a fixed mask so every output position carries a
/// distinct gradient (catches ordering bugs a plain sum would miss).
fn masked_sum(tape: &mut Tape, x: Var, mask: &Tensor) -> Result<Var> {
    let m = tape.leaf(mask.clone());
    let prod = tape.mul(x, m)?;
    Ok(tape.sum(prod))
}

pub fn registry() -> Vec<Case> {
    vec![
        Case {
            name: "add",
            build: |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let a = store.add("a", rt(&mut r, &[3, 4, 4]));
                let b = store.add("b", rt(&mut r, &[3, 4, 4]));
                let mask = rt(&mut r, &[3, 4, 4]);
                (
                    store,
                    Box::new(move |tape, store| {
                        let av = tape.param(store, a);
                        let bv = tape.param(store, b);
                        let s = tape.add(av, bv)?;
                        masked_sum(tape, s, &mask)
                    }),
                )
            },
        },
        Case {
            name: "sub",
            build: |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let a = store.add("a", rt(&mut r, &[2, 3, 3]));
                let b = store.add("b", rt(&mut r, &[2, 3, 3]));
                let mask = rt(&mut r, &[2, 3, 3]);
                (
                    store,
                    Box::new(move |tape, store| {
                        let av = tape.param(store, a);
                        let bv = tape.param(store, b);
                        let s = tape.sub(av, bv)?;
                        masked_sum(tape, s, &mask)
                    }),
                )
            },
        },
        Case {
            name: "mul",
            build: |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let a = store.add("a", rt(&mut r, &[2, 3, 3]));
                let b = store.add("b", rt(&mut r, &[2, 3, 3]));
                let mask = rt(&mut r, &[2, 3, 3]);
                (
                    store,
                    Box::new(move |tape, store| {
                        let av = tape.param(store, a);
                        let bv = tape.param(store, b);
                        let s = tape.mul(av, bv)?;
                        masked_sum(tape, s, &mask)
                    }),
                )
            },
        },
        Case {
            name: "scale",
            build: |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let a = store.add("a", rt(&mut r, &[2, 3, 3]));
                let mask = rt(&mut r, &[2, 3, 3]);
                (
                    store,
                    Box::new(move |tape, store| {
                        let av = tape.param(store, a);
                        let s = tape.scale(av, -2.5);
                        masked_sum(tape, s, &mask)
                    }),
                )
            },
        },
        Case {
            name: "sigmoid",
            build: |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let a = store.add("a", Tensor::random_uniform(&[2, 4, 4], -3.0, 3.0, &mut r));
                let mask = rt(&mut r, &[2, 4, 4]);
                (
                    store,
                    Box::new(move |tape, store| {
                        let av = tape.param(store, a);
                        let s = tape.sigmoid(av)?;
                        masked_sum(tape, s, &mask)
                    }),
                )
            },
        },
        Case {
            name: "relu",
            build: |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let a = store.add("a", rt_away_from_zero(&mut r, &[2, 4, 4]));
                let mask = rt(&mut r, &[2, 4, 4]);
                (
                    store,
                    Box::new(move |tape, store| {
                        let av = tape.param(store, a);
                        let s = tape.relu(av);
                        masked_sum(tape, s, &mask)
                    }),
                )
            },
        },
        Case {
            name: "conv",
            build: |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let x = store.add("x", rt(&mut r, &[2, 5, 5]));
                let w = store.add("w", rt(&mut r, &[3, 2, 3, 3]));
                let b = store.add("b", rt(&mut r, &[3]));
                let mask = rt(&mut r, &[3, 5, 5]);
                (
                    store,
                    Box::new(move |tape, store| {
                        let xv = tape.param(store, x);
                        let wv = tape.param(store, w);
                        let bv = tape.param(store, b);
                        let y = tape.conv(xv, wv, bv, 1, 1)?;
                        masked_sum(tape, y, &mask)
                    }),
                )
            },
        },
        Case {
            name: "conv_strided",
            build: |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let x = store.add("x", rt(&mut r, &[2, 6, 6]));
                let w = store.add("w", rt(&mut r, &[2, 2, 3, 3]));
                let b = store.add("b", rt(&mut r, &[2]));
                let mask = rt(&mut r, &[2, 3, 3]);
                (
                    store,
                    Box::new(move |tape, store| {
                        let xv = tape.param(store, x);
                        let wv = tape.param(store, w);
                        let bv = tape.param(store, b);
                        let y = tape.conv(xv, wv, bv, 2, 1)?;
                        masked_sum(tape, y, &mask)
                    }),
                )
            },
        },
        Case {
            name: "max_pool",
            build: |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let x = store.add("x", rt(&mut r, &[2, 6, 6]));
                let mask = rt(&mut r, &[2, 3, 3]);
                (
                    store,
                    Box::new(move |tape, store| {
                        let xv = tape.param(store, x);
                        let y = tape.max_pool(xv, 2, 2)?;
                        masked_sum(tape, y, &mask)
                    }),
                )
            },
        },
        Case {
            name: "avg_pool",
            build: |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let x = store.add("x", rt(&mut r, &[2, 6, 6]));
                let mask = rt(&mut r, &[2, 3, 3]);
                (
                    store,
                    Box::new(move |tape, store| {
                        let xv = tape.param(store, x);
                        let y = tape.avg_pool(xv, 2, 2)?;
                        masked_sum(tape, y, &mask)
                    }),
                )
            },
        },
        Case {
            name: "adaptive_max_pool",
            build: |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let x = store.add("x", rt(&mut r, &[2, 5, 5]));
                let mask = rt(&mut r, &[2, 3, 3]);
                (
                    store,
                    Box::new(move |tape, store| {
                        let xv = tape.param(store, x);
                        let y = tape.adaptive_max_pool(xv, 3, 3)?;
                        masked_sum(tape, y, &mask)
                    }),
                )
            },
        },
        Case {
            name: "upsample",
            build: |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let x = store.add("x", rt(&mut r, &[2, 3, 3]));
                let mask = rt(&mut r, &[2, 7, 7]);
                (
                    store,
                    Box::new(move |tape, store| {
                        let xv = tape.param(store, x);
                        let y = tape.upsample(xv, 7, 7)?;
                        masked_sum(tape, y, &mask)
                    }),
                )
            },
        },
        Case {
            name: "channel_max",
            build: |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let x = store.add("x", rt(&mut r, &[3, 4, 4]));
                let mask = rt(&mut r, &[1, 4, 4]);
                (
                    store,
                    Box::new(move |tape, store| {
                        let xv = tape.param(store, x);
                        let y = tape.channel_max(xv);
                        masked_sum(tape, y, &mask)
                    }),
                )
            },
        },
        Case {
            name: "channel_avg",
            build: |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let x = store.add("x", rt(&mut r, &[3, 4, 4]));
                let mask = rt(&mut r, &[1, 4, 4]);
                (
                    store,
                    Box::new(move |tape, store| {
                        let xv = tape.param(store, x);
                        let y = tape.channel_avg(xv);
                        masked_sum(tape, y, &mask)
                    }),
                )
            },
        },
        Case {
            name: "concat_channels",
            build: |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let a = store.add("a", rt(&mut r, &[2, 3, 3]));
                let b = store.add("b", rt(&mut r, &[1, 3, 3]));
                let mask = rt(&mut r, &[3, 3, 3]);
                (
                    store,
                    Box::new(move |tape, store| {
                        let av = tape.param(store, a);
                        let bv = tape.param(store, b);
                        let y = tape.concat_channels(av, bv)?;
                        masked_sum(tape, y, &mask)
                    }),
                )
            },
        },
        Case {
            name: "repeat_channels",
            build: |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let x = store.add("x", rt(&mut r, &[1, 3, 3]));
                let mask = rt(&mut r, &[4, 3, 3]);
                (
                    store,
                    Box::new(move |tape, store| {
                        let xv = tape.param(store, x);
                        let y = tape.repeat_channels(xv, 4)?;
                        masked_sum(tape, y, &mask)
                    }),
                )
            },
        },
        Case {
            name: "head_reshape",
            build: |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let x = store.add("x", rt(&mut r, &[6, 3, 3]));
                let mask = rt(&mut r, &[54]);
                (
                    store,
                    Box::new(move |tape, store| {
                        let xv = tape.param(store, x);
                        let y = tape.head_reshape(xv, 2, 3)?;
                        masked_sum(tape, y, &mask)
                    }),
                )
            },
        },
        Case {
            name: "concat_flat",
            build: |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let a = store.add("a", rt(&mut r, &[5]));
                let b = store.add("b", rt(&mut r, &[3]));
                let mask = rt(&mut r, &[8]);
                (
                    store,
                    Box::new(move |tape, store| {
                        let av = tape.param(store, a);
                        let bv = tape.param(store, b);
                        let y = tape.concat_flat(&[av, bv])?;
                        masked_sum(tape, y, &mask)
                    }),
                )
            },
        },
        Case {
            name: "affinity_pool",
            build: |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let x = store.add("x", rt(&mut r, &[2, 3, 3]));
                let mask = rt(&mut r, &[1, 3, 3]);
                (
                    store,
                    Box::new(move |tape, store| {
                        let xv = tape.param(store, x);
                        let y = tape.affinity_pool(xv);
                        masked_sum(tape, y, &mask)
                    }),
                )
            },
        },
        Case {
            name: "multibox",
            build: |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let n = 6;
                let nc = 3;
                let cls = store.add("cls", Tensor::random_uniform(&[n * nc], -2.0, 2.0, &mut r));
                let loc = store.add("loc", Tensor::random_uniform(&[n * 4], -0.5, 0.5, &mut r));
                let mut labels = vec![0usize; n];
                labels[1] = 1;
                labels[4] = 2;
                let mut tgt = |_: usize| {
                    let mut a = [0.0; 4];
                    for v in &mut a {
                        *v = r.random_range(-0.3..0.3);
                    }
                    a
                };
                let targets = MultiboxTargets {
                    loc_targets: vec![(1, tgt(1)), (4, tgt(4))],
                    labels,
                    num_classes: nc,
                    neg_ratio: 3,
                };
                (
                    store,
                    Box::new(move |tape, store| {
                        let c = tape.param(store, cls);
                        let l = tape.param(store, loc);
                        tape.multibox_loss(c, l, targets.clone())
                    }),
                )
            },
        },
        Case {
            name: "fusion_block",
            build: |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let x = store.add("x", rt(&mut r, &[4, 4, 4]));
                let block = FusionBlock::new(&mut store, "fb", 4, 2, &mut r);
                let mask = rt(&mut r, &[4, 4, 4]);
                (
                    store,
                    Box::new(move |tape, store| {
                        let xv = tape.param(store, x);
                        let y = block.apply(tape, store, xv)?;
                        masked_sum(tape, y, &mask)
                    }),
                )
            },
        },
        Case {
            name: "gate_modes",
            build: |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let deep = store.add("deep", rt(&mut r, &[3, 3, 3]));
                let modes = [
                    GateMode::ChannelwiseConv,
                    GateMode::MaxAttention,
                    GateMode::AvgAttention,
                    GateMode::MixAttention,
                    GateMode::GlobalSimplified,
                ];
                let nems: Vec<NemParams> = modes
                    .iter()
                    .enumerate()
                    .map(|(i, &m)| NemParams::new(&mut store, &format!("nem{i}"), 4, 3, m, &mut r))
                    .collect();
                let mask = rt(&mut r, &[1, 6, 6]);
                let mask_wide = rt(&mut r, &[4, 6, 6]);
                (
                    store,
                    Box::new(move |tape, store| {
                        let dv = tape.param(store, deep);
                        let mut parts = Vec::new();
                        for nem in &nems {
                            let g = netm::compute_gate(tape, store, dv, 6, 6, nem)?;
                            let m = if tape.value(g).chw().0 == 1 { &mask } else { &mask_wide };
                            parts.push(masked_sum(tape, g, m)?);
                        }
                        let mut acc = parts[0];
                        for &p in &parts[1..] {
                            acc = tape.add(acc, p)?;
                        }
                        Ok(acc)
                    }),
                )
            },
        },
        Case {
            name: "netm_full",
            build: |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let shallow = store.add("shallow", rt(&mut r, &[4, 6, 6]));
                let deep = store.add("deep", rt(&mut r, &[3, 3, 3]));
                let params = NetmParams::new(&mut store, "netm", 4, 3, GateMode::ChannelwiseConv, &mut r);
                let mask_s = rt(&mut r, &[4, 6, 6]);
                let mask_d = rt(&mut r, &[3, 3, 3]);
                (
                    store,
                    Box::new(move |tape, store| {
                        let sv = tape.param(store, shallow);
                        let dv = tape.param(store, deep);
                        let (ns, nd) = netm::netm_apply(tape, store, sv, dv, &params, NetmOptions::FULL)?;
                        let a = masked_sum(tape, ns, &mask_s)?;
                        let b = masked_sum(tape, nd, &mask_d)?;
                        tape.add(a, b)
                    }),
                )
            },
        },
        Case {
            name: "nnfm_fuse",
            build: |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let channels = [2usize, 3, 2];
                let sizes = [8usize, 4, 2];
                let p0 = store.add("p0", rt(&mut r, &[2, 8, 8]));
                let p1 = store.add("p1", rt(&mut r, &[3, 4, 4]));
                let p2 = store.add("p2", rt(&mut r, &[2, 2, 2]));
                let params = NnfmParams::new(&mut store, "nnfm", &channels, 3, &mut r).unwrap();
                let masks: Vec<Tensor> = channels
                    .iter()
                    .zip(&sizes)
                    .map(|(&c, &s)| rt(&mut r, &[c, s, s]))
                    .collect();
                (
                    store,
                    Box::new(move |tape, store| {
                        let pyr = vec![
                            tape.param(store, p0),
                            tape.param(store, p1),
                            tape.param(store, p2),
                        ];
                        let out = crate::nnfm::nnfm_apply(tape, store, &pyr, &params)?;
                        let mut acc = masked_sum(tape, out[0], &masks[0])?;
                        for i in 1..out.len() {
                            let t = masked_sum(tape, out[i], &masks[i])?;
                            acc = tape.add(acc, t)?;
                        }
                        Ok(acc)
                    }),
                )
            },
        },
        Case {
            name: "tdp",
            build: |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let channels = [2usize, 3, 2];
                let sizes = [8usize, 4, 2];
                let p0 = store.add("p0", rt(&mut r, &[2, 8, 8]));
                let p1 = store.add("p1", rt(&mut r, &[3, 4, 4]));
                let p2 = store.add("p2", rt(&mut r, &[2, 2, 2]));
                let params = TdpParams::new(&mut store, "tdp", &channels, &mut r);
                let masks: Vec<Tensor> = channels
                    .iter()
                    .zip(&sizes)
                    .map(|(&c, &s)| rt(&mut r, &[c, s, s]))
                    .collect();
                (
                    store,
                    Box::new(move |tape, store| {
                        let pyr = vec![
                            tape.param(store, p0),
                            tape.param(store, p1),
                            tape.param(store, p2),
                        ];
                        let out = crate::nnfm::tdp_apply(tape, store, &pyr, &params)?;
                        let mut acc = masked_sum(tape, out[0], &masks[0])?;
                        for i in 1..out.len() {
                            let t = masked_sum(tape, out[i], &masks[i])?;
                            acc = tape.add(acc, t)?;
                        }
                        Ok(acc)
                    }),
                )
            },
        },
        Case {
            name: "detector_mini",
            build: |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let model = Model::new(mini_model_config(), &mut store, &mut r).unwrap();
                assert!(store.num_scalars() <= 500, "mini model too large: {}", store.num_scalars());
                let image = Tensor::random_uniform(&[1, 8, 8], 0.0, 1.0, &mut r);
                let gts = vec![GroundTruthBox {
                    bbox: BBox::new(0.2, 0.2, 0.7, 0.7),
                    class_id: 1,
                    scale_class: ScaleClass::Large,
                }];
                let assignment = match_anchors(&model.anchors, &gts, 0.5);
                let targets = build_targets(&model.anchors, &gts, &assignment, 2, 3);
                (
                    store,
                    Box::new(move |tape, store| {
                        let (cls, loc) = model.forward(tape, store, &image)?;
                        tape.multibox_loss(cls, loc, targets.clone())
                    }),
                )
            },
        },
    ]
}

/// ≤ 500 parameter detector for the end-to-end gradient check.
fn mini_model_config() -> ModelConfig {
    let stages = [(4usize, 2usize), (2, 2), (1, 2)]
        .into_iter()
        .map(|(size, channels)| StageSpec { size, channels, tap: true })
        .collect();
    ModelConfig {
        pyramid: PyramidConfig {
            input_size: 8,
            in_channels: 1,
            stages,
        },
        variant: Variant::Baseline,
        gate_mode: GateMode::ChannelwiseConv,
        num_classes: 2,
        anchors: AnchorConfig {
            ratios: vec![1.0],
            scale_min: 0.2,
            scale_max: 0.8,
        },
    }
}

/// Find a case by name.
pub fn find(name: &str) -> Result<Case> {
    registry()
        .into_iter()
        .find(|c| c.name == name)
        .ok_or_else(|| NetError::Config(format!("no gradient check case named `{name}`")))
}
