//! Nearest neighbor fusion: each fused level sums projections of itself
//! and its two adjacent levels, all read from the original pyramid (no
//! cascading). Also hosts the top-down pyramid (TDP) ablation arm.

use crate::error::{NetError, Result};
use crate::layers::ConvLayer;
use crate::tape::{Tape, Var};
use crate::tensor::ParamStore;
use rand::Rng;

/// Branches for one fused level: pool+1x1 from the shallower neighbor,
/// 1x1 of the level itself, upsample+1x1 from the deeper neighbor.
#[derive(Clone, Debug)]
pub struct NnfmLevelParams {
    pub from_prev: Option<ConvLayer>,
    pub own: ConvLayer,
    pub from_next: Option<ConvLayer>,
}

#[derive(Clone, Debug)]
pub struct NnfmParams {
    /// One entry per fused level, starting at p_1.
    pub levels: Vec<NnfmLevelParams>,
}

impl NnfmParams {
    /// Fuse the first `fused` levels of a pyramid with the given channel
    /// counts. Neighbors outside the pyramid are omitted (no fake levels).
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        level_channels: &[usize],
        fused: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if fused > level_channels.len() {
            return Err(NetError::Config(format!(
                "cannot fuse {fused} levels of a {}-level pyramid",
                level_channels.len()
            )));
        }
        let mut levels = Vec::new();
        for s in 0..fused {
            let c_s = level_channels[s];
            let from_prev = (s > 0).then(|| {
                ConvLayer::new(store, &format!("{name}.l{s}.prev"), level_channels[s - 1], c_s, 1, 1, rng)
            });
            let own = ConvLayer::new(store, &format!("{name}.l{s}.own"), c_s, c_s, 1, 1, rng);
            let from_next = (s + 1 < level_channels.len()).then(|| {
                ConvLayer::new(store, &format!("{name}.l{s}.next"), level_channels[s + 1], c_s, 1, 1, rng)
            });
            levels.push(NnfmLevelParams {
                from_prev,
                own,
                from_next,
            });
        }
        Ok(NnfmParams { levels })
    }

    /// Identity configuration: own branch is an exact identity 1x1 conv and
    /// both neighbor branches are absent. Output pyramid equals input.
    pub fn identity(store: &mut ParamStore, name: &str, level_channels: &[usize], fused: usize) -> Self {
        let mut levels = Vec::new();
        for s in 0..fused {
            let c = level_channels[s];
            let own = ConvLayer::zeros(store, &format!("{name}.l{s}.own"), c, c, 1);
            let w = store.value_mut(own.kernel);
            for i in 0..c {
                w.data_mut()[i * c + i] = 1.0;
            }
            levels.push(NnfmLevelParams {
                from_prev: None,
                own,
                from_next: None,
            });
        }
        NnfmParams { levels }
    }
}

/// p_fs = H_{s-1}(p_{s-1}) ⊕ H_s(p_s) ⊕ H_{s+1}(p_{s+1}); absent neighbors
/// contribute nothing.
pub fn nnfm_fuse(
    tape: &mut Tape,
    store: &ParamStore,
    p_prev: Option<Var>,
    p_s: Var,
    p_next: Option<Var>,
    params: &NnfmLevelParams,
) -> Result<Var> {
    let (_, h, w) = tape.value(p_s).chw();
    let mut acc = params.own.apply(tape, store, p_s)?;
    if let (Some(prev), Some(conv)) = (p_prev, &params.from_prev) {
        let (_, ph, pw) = tape.value(prev).chw();
        if ph <= h || pw <= w {
            return Err(NetError::ShapeMismatch {
                op: "nnfm_fuse: shallower neighbor must have higher resolution",
                lhs: tape.value(prev).shape().to_vec(),
                rhs: tape.value(p_s).shape().to_vec(),
            });
        }
        let pooled = tape.adaptive_max_pool(prev, h, w)?;
        let branch = conv.apply(tape, store, pooled)?;
        acc = tape.add(acc, branch)?;
    }
    if let (Some(next), Some(conv)) = (p_next, &params.from_next) {
        let (_, nh, nw) = tape.value(next).chw();
        if nh >= h || nw >= w {
            return Err(NetError::ShapeMismatch {
                op: "nnfm_fuse: deeper neighbor must have lower resolution",
                lhs: tape.value(next).shape().to_vec(),
                rhs: tape.value(p_s).shape().to_vec(),
            });
        }
        let up = tape.upsample(next, h, w)?;
        let branch = conv.apply(tape, store, up)?;
        acc = tape.add(acc, branch)?;
    }
    Ok(acc)
}

/// Replace the fused levels with their fusions of the ORIGINAL pyramid;
/// deeper levels pass through.
pub fn nnfm_apply(tape: &mut Tape, store: &ParamStore, pyramid: &[Var], params: &NnfmParams) -> Result<Vec<Var>> {
    let mut out = pyramid.to_vec();
    for (s, level) in params.levels.iter().enumerate() {
        let prev = (s > 0).then(|| pyramid[s - 1]);
        let next = (s + 1 < pyramid.len()).then(|| pyramid[s + 1]);
        out[s] = nnfm_fuse(tape, store, prev, pyramid[s], next, level)?;
    }
    Ok(out)
}

/// FPN-style top-down pyramid used as the NNFM-vs-TDP ablation arm:
/// p'_s = p_s ⊕ C1x1(U(p'_{s+1})), cascading from the deepest level.
#[derive(Clone, Debug)]
pub struct TdpParams {
    /// laterals[s] maps level s+1 channels to level s channels.
    pub laterals: Vec<ConvLayer>,
}

impl TdpParams {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, level_channels: &[usize], rng: &mut R) -> Self {
        let laterals = (0..level_channels.len() - 1)
            .map(|s| {
                ConvLayer::new(
                    store,
                    &format!("{name}.l{s}"),
                    level_channels[s + 1],
                    level_channels[s],
                    1,
                    1,
                    rng,
                )
            })
            .collect();
        TdpParams { laterals }
    }
}

pub fn tdp_apply(tape: &mut Tape, store: &ParamStore, pyramid: &[Var], params: &TdpParams) -> Result<Vec<Var>> {
    let mut out = pyramid.to_vec();
    for s in (0..pyramid.len() - 1).rev() {
        let (_, h, w) = tape.value(pyramid[s]).chw();
        let up = tape.upsample(out[s + 1], h, w)?;
        let lateral = params.laterals[s].apply(tape, store, up)?;
        out[s] = tape.add(pyramid[s], lateral)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_pyramid(tape: &mut Tape, r: &mut ChaCha8Rng, channels: &[usize], sizes: &[usize]) -> Vec<Var> {
        channels
            .iter()
            .zip(sizes)
            .map(|(&c, &s)| tape.leaf(Tensor::random_uniform(&[c, s, s], -1.0, 1.0, r)))
            .collect()
    }

    const CHANNELS: [usize; 4] = [4, 6, 6, 8];
    const SIZES: [usize; 4] = [16, 8, 4, 2];

    #[test]
    fn identity_params_give_identity_pyramid() {
        let mut store = ParamStore::new();
        let params = NnfmParams::identity(&mut store, "nnfm", &CHANNELS, 3);
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let pyr = toy_pyramid(&mut tape, &mut r, &CHANNELS, &SIZES);
        let out = nnfm_apply(&mut tape, &store, &pyr, &params).unwrap();
        for (&o, &i) in out.iter().zip(&pyr) {
            assert_eq!(tape.value(o), tape.value(i));
        }
    }

    #[test]
    fn zero_branches_give_zero_fusion() {
        let mut store = ParamStore::new();
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let mut params = NnfmParams::new(&mut store, "nnfm", &CHANNELS, 2, &mut r).unwrap();
        // zero everything
        for p in store.iter_mut() {
            p.value.data_mut().fill(0.0);
        }
        params.levels.truncate(2);
        let mut tape = Tape::new();
        let pyr = toy_pyramid(&mut tape, &mut r, &CHANNELS, &SIZES);
        let out = nnfm_apply(&mut tape, &store, &pyr, &params).unwrap();
        assert!(tape.value(out[0]).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(out[1]).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fused_shapes_match_and_deep_levels_pass_through() {
        let mut store = ParamStore::new();
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let params = NnfmParams::new(&mut store, "nnfm", &CHANNELS, 4, &mut r).unwrap();
        let mut tape = Tape::new();
        let pyr = toy_pyramid(&mut tape, &mut r, &CHANNELS, &SIZES);
        let out = nnfm_apply(&mut tape, &store, &pyr, &params).unwrap();
        for (&o, &i) in out.iter().zip(&pyr) {
            assert_eq!(tape.value(o).shape(), tape.value(i).shape());
        }
    }

    #[test]
    fn locality_perturbing_distant_level_leaves_fusion_unchanged() {
        let mut store = ParamStore::new();
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let params = NnfmParams::new(&mut store, "nnfm", &CHANNELS, 4, &mut r).unwrap();

        let mut tape = Tape::new();
        let tensors: Vec<Tensor> = CHANNELS
            .iter()
            .zip(&SIZES)
            .map(|(&c, &s)| Tensor::random_uniform(&[c, s, s], -1.0, 1.0, &mut r))
            .collect();
        let pyr: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = nnfm_apply(&mut tape, &store, &pyr, &params).unwrap();
        let fused_p2_before = tape.value(out[1]).clone();

        // perturb level 4 (index 3): fused p_2 must not change (|t-s| > 1)
        let mut tape2 = Tape::new();
        let pyr2: Vec<Var> = tensors
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let t = if i == 3 { t.map(|v| v + 10.0) } else { t.clone() };
                tape2.leaf(t)
            })
            .collect();
        let out2 = nnfm_apply(&mut tape2, &store, &pyr2, &params).unwrap();
        assert_eq!(tape2.value(out2[1]), &fused_p2_before);
        // but fused p_3 (adjacent) does change
        assert_ne!(tape2.value(out2[2]), tape.value(out[2]));
    }

    #[test]
    fn branch_linearity_with_zero_bias() {
        let mut store = ParamStore::new();
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let params = NnfmParams::new(&mut store, "nnfm", &CHANNELS, 1, &mut r).unwrap();
        // biases are zero-initialized already; own branch is linear
        let x = Tensor::random_uniform(&[4, 16, 16], -1.0, 1.0, &mut r);
        let eval = |input: &Tensor, store: &ParamStore| {
            let mut tape = Tape::new();
            let v = tape.leaf(input.clone());
            let out = nnfm_fuse(&mut tape, store, None, v, None, &params.levels[0]).unwrap();
            tape.value(out).clone()
        };
        let y1 = eval(&x, &store);
        let y2 = eval(&x.map(|v| 3.0 * v), &store);
        for (a, b) in y1.data().iter().zip(y2.data()) {
            assert!((3.0 * a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn tdp_preserves_shapes() {
        let mut store = ParamStore::new();
        let mut r = ChaCha8Rng::seed_from_u64(6);
        let params = TdpParams::new(&mut store, "tdp", &CHANNELS, &mut r);
        let mut tape = Tape::new();
        let pyr = toy_pyramid(&mut tape, &mut r, &CHANNELS, &SIZES);
        let out = tdp_apply(&mut tape, &store, &pyr, &params).unwrap();
        for (&o, &i) in out.iter().zip(&pyr) {
            assert_eq!(tape.value(o).shape(), tape.value(i).shape());
        }
        assert_eq!(out[3], pyr[3]);
    }
}
