//! Detector assembly: backbone pyramid, optional feature reconfiguration
//! (erase/transfer wiring, neighbor fusion, top-down fusion), and per-level
//! class/box heads flattened into anchor-ordered prediction vectors.

use crate::detector::anchors::{generate_anchors, AnchorConfig};
use crate::detector::boxes::Anchor;
use crate::error::{NetError, Result};
use crate::layers::ConvLayer;
use crate::netm::{self, GateMode, NetmOptions, Topology, WireParams};
use crate::nnfm::{self, NnfmParams, TdpParams};
use crate::pyramid::{build_backbone, Backbone, PyramidConfig};
use crate::tape::{Tape, Var};
use crate::tensor::{ParamStore, Tensor};
use rand::Rng;

/// Detector composition variants (ablation axes).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Plain pyramid, no reconfiguration.
    Baseline,
    /// Erase only, skipped pairs.
    Nem,
    /// Transfer only, skipped pairs.
    Ntm,
    /// Erase + transfer, skipped pairs.
    Netm,
    /// Top-down fusion, then erase + transfer.
    NetmTdp,
    /// Nearest-neighbor fusion, then erase + transfer.
    Netnet,
    /// Erase only over adjacent pairs.
    Nnem,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "nem" => Ok(Variant::Nem),
            "ntm" => Ok(Variant::Ntm),
            "netm" => Ok(Variant::Netm),
            "netm+tdp" => Ok(Variant::NetmTdp),
            "netnet" => Ok(Variant::Netnet),
            "nnem" => Ok(Variant::Nnem),
            other => Err(NetError::Config(format!(
                "unknown variant `{other}` (expected baseline|nem|ntm|netm|netm+tdp|netnet|nnem)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Nem => "nem",
            Variant::Ntm => "ntm",
            Variant::Netm => "netm",
            Variant::NetmTdp => "netm+tdp",
            Variant::Netnet => "netnet",
            Variant::Nnem => "nnem",
        }
    }

    fn topology(&self) -> Option<Topology> {
        match self {
            Variant::Baseline => None,
            Variant::Nnem => Some(Topology::Adjacent),
            _ => Some(Topology::Skipped),
        }
    }

    fn netm_options(&self) -> NetmOptions {
        match self {
            Variant::Nem | Variant::Nnem => NetmOptions::ERASE_ONLY,
            Variant::Ntm => NetmOptions::TRANSFER_ONLY,
            _ => NetmOptions::FULL,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub pyramid: PyramidConfig,
    pub variant: Variant,
    pub gate_mode: GateMode,
    /// Classes including background (class 0).
    pub num_classes: usize,
    pub anchors: AnchorConfig,
}

impl ModelConfig {
    pub fn desk(variant: Variant) -> Self {
        ModelConfig {
            pyramid: PyramidConfig::desk(),
            variant,
            gate_mode: GateMode::ChannelwiseConv,
            num_classes: 4,
            anchors: AnchorConfig::default(),
        }
    }
}

pub struct Model {
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub wire: Option<WireParams>,
    pub nnfm: Option<NnfmParams>,
    pub tdp: Option<TdpParams>,
    pub cls_heads: Vec<ConvLayer>,
    pub loc_heads: Vec<ConvLayer>,
    pub anchors: Vec<Anchor>,
}

impl Model {
    /// Build a fresh model; parameter creation order is deterministic so a
    /// checkpoint load by name always lines up.
    pub fn new<R: Rng>(config: ModelConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        if config.num_classes < 2 {
            return Err(NetError::Config("need at least background + one class".into()));
        }
        let backbone = build_backbone(&config.pyramid, store, rng)?;
        let level_channels = config.pyramid.level_channels();
        let level_sizes = config.pyramid.level_sizes();

        let wire = match config.variant.topology() {
            Some(t) => Some(WireParams::new(store, "wire", t, &level_channels, config.gate_mode, rng)?),
            None => None,
        };
        let nnfm = if config.variant == Variant::Netnet {
            let fused = level_channels.len().min(4);
            Some(NnfmParams::new(store, "nnfm", &level_channels, fused, rng)?)
        } else {
            None
        };
        let tdp = if config.variant == Variant::NetmTdp {
            Some(TdpParams::new(store, "tdp", &level_channels, rng))
        } else {
            None
        };

        let a = config.anchors.anchors_per_cell();
        let mut cls_heads = Vec::new();
        let mut loc_heads = Vec::new();
        for (l, &c) in level_channels.iter().enumerate() {
            cls_heads.push(ConvLayer::new(
                store,
                &format!("head.cls{l}"),
                c,
                a * config.num_classes,
                3,
                1,
                rng,
            ));
            loc_heads.push(ConvLayer::new(store, &format!("head.loc{l}"), c, a * 4, 3, 1, rng));
        }
        let anchors = generate_anchors(&config.anchors, &level_sizes);
        Ok(Model {
            config,
            backbone,
            wire,
            nnfm,
            tdp,
            cls_heads,
            loc_heads,
            anchors,
        })
    }

    pub fn num_anchors(&self) -> usize {
        self.anchors.len()
    }

    /// Backbone pyramid followed by the variant's reconfiguration.
    pub fn feature_pyramid(&self, tape: &mut Tape, store: &ParamStore, image: &Tensor) -> Result<Vec<Var>> {
        let mut levels = self.backbone.forward_image(tape, store, image)?.levels;
        if let Some(tdp) = &self.tdp {
            levels = nnfm::tdp_apply(tape, store, &levels, tdp)?;
        }
        if let Some(params) = &self.nnfm {
            levels = nnfm::nnfm_apply(tape, store, &levels, params)?;
        }
        if let Some(wire) = &self.wire {
            levels = netm::wire(tape, store, &levels, wire, self.config.variant.netm_options())?;
        }
        Ok(levels)
    }

    /// Full forward pass: flat class logits (anchor-major, then class) and
    /// flat box offsets (anchor-major, then coordinate).
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, image: &Tensor) -> Result<(Var, Var)> {
        let levels = self.feature_pyramid(tape, store, image)?;
        let a = self.config.anchors.anchors_per_cell();
        let nc = self.config.num_classes;
        let mut cls_parts = Vec::new();
        let mut loc_parts = Vec::new();
        for (l, &feat) in levels.iter().enumerate() {
            let cls_map = self.cls_heads[l].apply(tape, store, feat)?;
            cls_parts.push(tape.head_reshape(cls_map, a, nc)?);
            let loc_map = self.loc_heads[l].apply(tape, store, feat)?;
            loc_parts.push(tape.head_reshape(loc_map, a, 4)?);
        }
        let cls = tape.concat_flat(&cls_parts)?;
        let loc = tape.concat_flat(&loc_parts)?;
        Ok((cls, loc))
    }
}
