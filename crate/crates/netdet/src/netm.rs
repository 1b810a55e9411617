//! Neighbor erasing and transferring over pyramid level pairs.
//!
//! A deep level drives a sigmoid spatial gate at the shallow level's
//! resolution. The gated (salient, larger-object) part of the shallow
//! feature is subtracted out to leave small-object features, then pooled,
//! projected, and added into the deep level. Wiring is either skipped
//! pairs (p1,p3)/(p2,p4) or the adjacent erase-only ablation.

use crate::error::{NetError, Result};
use crate::layers::{ConvLayer, FusionBlock};
use crate::tape::{Tape, Var};
use crate::tensor::ParamStore;
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateMode {
    /// 1x1 conv over the upsampled deep feature; one gate channel per
    /// shallow channel. The default.
    ChannelwiseConv,
    /// Max over channels; single-channel gate.
    MaxAttention,
    /// Mean over channels; single-channel gate.
    AvgAttention,
    /// 1x1 conv over stacked max+avg maps; single-channel gate.
    MixAttention,
    /// Channel-bottlenecked spatial self-attention pooled to one scalar
    /// per position; single-channel gate.
    GlobalSimplified,
}

impl GateMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "channelwise" => Ok(GateMode::ChannelwiseConv),
            "max" => Ok(GateMode::MaxAttention),
            "avg" => Ok(GateMode::AvgAttention),
            "mix" => Ok(GateMode::MixAttention),
            "global" => Ok(GateMode::GlobalSimplified),
            other => Err(NetError::Config(format!(
                "unknown gate mode `{other}` (expected channelwise|max|avg|mix|global)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GateMode::ChannelwiseConv => "channelwise",
            GateMode::MaxAttention => "max",
            GateMode::AvgAttention => "avg",
            GateMode::MixAttention => "mix",
            GateMode::GlobalSimplified => "global",
        }
    }
}

/// Erasing-side parameters: the gate generator plus the residual fusion
/// block applied to the erased shallow feature.
#[derive(Clone, Debug)]
pub struct NemParams {
    pub mode: GateMode,
    pub gate_conv: Option<ConvLayer>,
    pub fusion: FusionBlock,
    pub shallow_ch: usize,
}

impl NemParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        shallow_ch: usize,
        deep_ch: usize,
        mode: GateMode,
        rng: &mut R,
    ) -> Self {
        let gate_conv = match mode {
            GateMode::ChannelwiseConv => Some(ConvLayer::new(
                store,
                &format!("{name}.gate"),
                deep_ch,
                shallow_ch,
                1,
                1,
                rng,
            )),
            GateMode::MixAttention => Some(ConvLayer::new(store, &format!("{name}.gate"), 2, 1, 1, 1, rng)),
            GateMode::GlobalSimplified => Some(ConvLayer::new(
                store,
                &format!("{name}.gate"),
                deep_ch,
                (shallow_ch / 8).max(1),
                1,
                1,
                rng,
            )),
            GateMode::MaxAttention | GateMode::AvgAttention => None,
        };
        // start the gate mostly closed (sigmoid(-2) ~ 0.12) so the mechanism
        // begins near the plain pyramid and learns where to erase, instead of
        // erasing half the shallow energy at random from the first step
        if let Some(conv) = &gate_conv {
            store.value_mut(conv.bias).data_mut().fill(-2.0);
        }
        let fusion = FusionBlock::new(
            store,
            &format!("{name}.fusion"),
            shallow_ch,
            (shallow_ch / 2).max(1),
            rng,
        );
        NemParams {
            mode,
            gate_conv,
            fusion,
            shallow_ch,
        }
    }
}

/// Transfer-side parameters: 1x1 projection from shallow to deep channels.
#[derive(Clone, Debug)]
pub struct NtmParams {
    pub transfer_conv: ConvLayer,
}

impl NtmParams {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, shallow_ch: usize, deep_ch: usize, rng: &mut R) -> Self {
        NtmParams {
            transfer_conv: ConvLayer::new(store, &format!("{name}.transfer"), shallow_ch, deep_ch, 1, 1, rng),
        }
    }
}

#[derive(Clone, Debug)]
pub struct NetmParams {
    pub nem: NemParams,
    pub ntm: NtmParams,
}

impl NetmParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        shallow_ch: usize,
        deep_ch: usize,
        mode: GateMode,
        rng: &mut R,
    ) -> Self {
        NetmParams {
            nem: NemParams::new(store, &format!("{name}.nem"), shallow_ch, deep_ch, mode, rng),
            ntm: NtmParams::new(store, &format!("{name}.ntm"), shallow_ch, deep_ch, rng),
        }
    }
}

/// Which halves of the mechanism a variant runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetmOptions {
    pub erase: bool,
    pub transfer: bool,
}

impl NetmOptions {
    pub const FULL: NetmOptions = NetmOptions { erase: true, transfer: true };
    pub const ERASE_ONLY: NetmOptions = NetmOptions { erase: true, transfer: false };
    pub const TRANSFER_ONLY: NetmOptions = NetmOptions { erase: false, transfer: true };
}

/// Sigmoid spatial gate at the shallow resolution, derived from the deep
/// feature. Values lie strictly in (0,1).
pub fn compute_gate(
    tape: &mut Tape,
    store: &ParamStore,
    p_deep: Var,
    shallow_h: usize,
    shallow_w: usize,
    nem: &NemParams,
) -> Result<Var> {
    let (_, dh, dw) = tape.value(p_deep).chw();
    if dh > shallow_h || dw > shallow_w {
        return Err(NetError::ShapeMismatch {
            op: "compute_gate: deep larger than shallow",
            lhs: tape.value(p_deep).shape().to_vec(),
            rhs: vec![shallow_h, shallow_w],
        });
    }
    let up = tape.upsample(p_deep, shallow_h, shallow_w)?;
    let logits = match nem.mode {
        GateMode::ChannelwiseConv => nem.gate_conv.as_ref().unwrap().apply(tape, store, up)?,
        GateMode::MaxAttention => tape.channel_max(up),
        GateMode::AvgAttention => tape.channel_avg(up),
        GateMode::MixAttention => {
            let mx = tape.channel_max(up);
            let av = tape.channel_avg(up);
            let stacked = tape.concat_channels(mx, av)?;
            nem.gate_conv.as_ref().unwrap().apply(tape, store, stacked)?
        }
        GateMode::GlobalSimplified => {
            let bottleneck = nem.gate_conv.as_ref().unwrap().apply(tape, store, up)?;
            tape.affinity_pool(bottleneck)
        }
    };
    tape.sigmoid(logits)
}

/// p_es = p_s ⊙ g; a single-channel gate broadcasts across channels.
pub fn extract_salient(tape: &mut Tape, p_shallow: Var, gate: Var) -> Result<Var> {
    let (cs, hs, ws) = tape.value(p_shallow).chw();
    let (cg, hg, wg) = tape.value(gate).chw();
    if (hs, ws) != (hg, wg) || (cg != 1 && cg != cs) {
        return Err(NetError::ShapeMismatch {
            op: "extract_salient",
            lhs: tape.value(p_shallow).shape().to_vec(),
            rhs: tape.value(gate).shape().to_vec(),
        });
    }
    let gate_full = if cg == cs { gate } else { tape.repeat_channels(gate, cs)? };
    tape.mul(p_shallow, gate_full)
}

/// p̃_s = p_s ⊖ p_es. With p_es = p_s ⊙ g this equals p_s ⊙ (1−g).
pub fn erase(tape: &mut Tape, p_shallow: Var, p_es: Var) -> Result<Var> {
    tape.sub(p_shallow, p_es)
}

/// p̃_{s+1} = C1x1(D(p_es)) ⊕ p_deep, with D an adaptive max pool down to
/// the deep level's resolution.
pub fn transfer(tape: &mut Tape, store: &ParamStore, p_es: Var, p_deep: Var, ntm: &NtmParams) -> Result<Var> {
    let (_, dh, dw) = tape.value(p_deep).chw();
    let pooled = tape.adaptive_max_pool(p_es, dh, dw)?;
    let projected = ntm.transfer_conv.apply(tape, store, pooled)?;
    tape.add(projected, p_deep)
}

/// One full NETM over a (shallow, deep) level pair. The same extracted
/// salient feature p_es drives both the erasing and the transfer.
pub fn netm_apply(
    tape: &mut Tape,
    store: &ParamStore,
    p_shallow: Var,
    p_deep: Var,
    params: &NetmParams,
    options: NetmOptions,
) -> Result<(Var, Var)> {
    let (_, hs, ws) = tape.value(p_shallow).chw();
    let gate = compute_gate(tape, store, p_deep, hs, ws, &params.nem)?;
    let p_es = extract_salient(tape, p_shallow, gate)?;
    let new_shallow = if options.erase {
        let erased = erase(tape, p_shallow, p_es)?;
        params.nem.fusion.apply(tape, store, erased)?
    } else {
        p_shallow
    };
    let new_deep = if options.transfer {
        transfer(tape, store, p_es, p_deep, &params.ntm)?
    } else {
        p_deep
    };
    Ok((new_shallow, new_deep))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Topology {
    /// NETM over (p1,p3) and (p2,p4); other levels pass through.
    Skipped,
    /// Erase-only NEM over (p1,p2), (p2,p3), (p3,p4) — the NNEM ablation.
    Adjacent,
}

/// Level-pair indices (shallow, deep) a topology instantiates on an
/// S-level pyramid.
pub fn topology_pairs(topology: Topology) -> Vec<(usize, usize)> {
    match topology {
        Topology::Skipped => vec![(0, 2), (1, 3)],
        Topology::Adjacent => vec![(0, 1), (1, 2), (2, 3)],
    }
}

/// Parameters for every NETM instance of a wiring.
#[derive(Clone, Debug)]
pub struct WireParams {
    pub topology: Topology,
    pub instances: Vec<NetmParams>,
}

impl WireParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        topology: Topology,
        level_channels: &[usize],
        mode: GateMode,
        rng: &mut R,
    ) -> Result<Self> {
        let pairs = topology_pairs(topology);
        let needed = pairs.iter().map(|&(_, d)| d + 1).max().unwrap();
        if level_channels.len() < needed {
            return Err(NetError::Config(format!(
                "topology needs at least {needed} pyramid levels, got {}",
                level_channels.len()
            )));
        }
        let instances = pairs
            .iter()
            .enumerate()
            .map(|(i, &(s, d))| {
                NetmParams::new(
                    store,
                    &format!("{name}.netm{i}"),
                    level_channels[s],
                    level_channels[d],
                    mode,
                    rng,
                )
            })
            .collect();
        Ok(WireParams { topology, instances })
    }
}

/// Apply the wiring to a pyramid. All instances read the ORIGINAL levels;
/// untouched levels pass through unchanged.
pub fn wire(
    tape: &mut Tape,
    store: &ParamStore,
    pyramid: &[Var],
    params: &WireParams,
    options: NetmOptions,
) -> Result<Vec<Var>> {
    let pairs = topology_pairs(params.topology);
    let needed = pairs.iter().map(|&(_, d)| d + 1).max().unwrap();
    if pyramid.len() < needed {
        return Err(NetError::Config(format!(
            "wire: topology needs {needed} levels, pyramid has {}",
            pyramid.len()
        )));
    }
    let opts = match params.topology {
        Topology::Adjacent => NetmOptions { transfer: false, ..options },
        Topology::Skipped => options,
    };
    let mut out = pyramid.to_vec();
    for (&(s, d), inst) in pairs.iter().zip(&params.instances) {
        let (new_s, new_d) = netm_apply(tape, store, pyramid[s], pyramid[d], inst, opts)?;
        out[s] = new_s;
        if opts.transfer {
            out[d] = new_d;
        }
    }
    Ok(out)
}
