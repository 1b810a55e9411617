//! Backbone and basic feature pyramid: stacked conv+relu+pool stages with a
//! tap at each configured level, producing strictly decreasing resolutions.
//!
//! The full profile mirrors SSD proportions at input 300 (taps 38, 19, 10,
//! 5, 3, 1). The desk profile is a small CPU-trainable configuration used
//! by tests and the CLI defaults.

use crate::error::{NetError, Result};
use crate::layers::ConvLayer;
use crate::tape::{Tape, Var};
use crate::tensor::{ParamStore, Tensor};
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct StageSpec {
    /// Spatial size after this stage's pooling.
    pub size: usize,
    pub channels: usize,
    /// Whether this stage emits a pyramid level.
    pub tap: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PyramidConfig {
    pub input_size: usize,
    pub in_channels: usize,
    pub stages: Vec<StageSpec>,
}

impl PyramidConfig {
    /// SSD-proportioned profile: input 300, six levels 38/19/10/5/3/1.
    pub fn full() -> Self {
        let mut stages = vec![
            StageSpec { size: 150, channels: 16, tap: false },
            StageSpec { size: 75, channels: 24, tap: false },
        ];
        for (size, channels) in [(38, 32), (19, 64), (10, 64), (5, 64), (3, 64), (1, 64)] {
            stages.push(StageSpec { size, channels, tap: true });
        }
        PyramidConfig {
            input_size: 300,
            in_channels: 3,
            stages,
        }
    }

    /// Small CPU-trainable profile: input 48, four levels 24/12/6/3.
    pub fn desk() -> Self {
        let stages = [(24, 8), (12, 16), (6, 16), (3, 16)]
            .into_iter()
            .map(|(size, channels)| StageSpec { size, channels, tap: true })
            .collect();
        PyramidConfig {
            input_size: 48,
            in_channels: 1,
            stages,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev = self.input_size;
        let mut taps = 0;
        for s in &self.stages {
            if s.size > prev {
                return Err(NetError::Config(format!(
                    "stage size {} not reachable by pooling from {}",
                    s.size, prev
                )));
            }
            if s.channels == 0 || s.size == 0 {
                return Err(NetError::Config("zero-sized stage".into()));
            }
            if s.tap {
                taps += 1;
            }
            prev = s.size;
        }
        let tap_sizes: Vec<usize> = self.tap_specs().map(|s| s.size).collect();
        if !tap_sizes.windows(2).all(|w| w[0] > w[1]) {
            return Err(NetError::Config(format!(
                "pyramid level sizes must strictly decrease, got {tap_sizes:?}"
            )));
        }
        if taps < 3 {
            return Err(NetError::Config(format!("need at least 3 pyramid levels, got {taps}")));
        }
        Ok(())
    }

    pub fn tap_specs(&self) -> impl Iterator<Item = &StageSpec> {
        self.stages.iter().filter(|s| s.tap)
    }

    /// Spatial sizes of the pyramid levels, shallow to deep.
    pub fn level_sizes(&self) -> Vec<usize> {
        self.tap_specs().map(|s| s.size).collect()
    }

    pub fn level_channels(&self) -> Vec<usize> {
        self.tap_specs().map(|s| s.channels).collect()
    }

    pub fn num_levels(&self) -> usize {
        self.tap_specs().count()
    }
}

/// Ordered pyramid features p_1..p_S, shallow (high resolution) to deep.
pub struct FeaturePyramid {
    pub levels: Vec<Var>,
}

impl FeaturePyramid {
    pub fn shapes(&self, tape: &Tape) -> Vec<Vec<usize>> {
        self.levels.iter().map(|&v| tape.value(v).shape().to_vec()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub config: PyramidConfig,
    pub convs: Vec<ConvLayer>,
}

pub fn build_backbone<R: Rng>(config: &PyramidConfig, store: &mut ParamStore, rng: &mut R) -> Result<Backbone> {
    config.validate()?;
    let mut convs = Vec::new();
    let mut in_ch = config.in_channels;
    for (i, stage) in config.stages.iter().enumerate() {
        convs.push(ConvLayer::new(
            store,
            &format!("backbone.s{i}"),
            in_ch,
            stage.channels,
            3,
            1,
            rng,
        ));
        in_ch = stage.channels;
    }
    Ok(Backbone {
        config: config.clone(),
        convs,
    })
}

impl Backbone {
    /// Run the backbone over an image leaf already on the tape.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, image: Var) -> Result<FeaturePyramid> {
        let (c, h, w) = tape.value(image).chw();
        if c != self.config.in_channels || h != self.config.input_size || w != self.config.input_size {
            return Err(NetError::ShapeMismatch {
                op: "forward_pyramid: image",
                lhs: tape.value(image).shape().to_vec(),
                rhs: vec![self.config.in_channels, self.config.input_size, self.config.input_size],
            });
        }
        let mut x = image;
        let mut levels = Vec::new();
        for (conv, stage) in self.convs.iter().zip(&self.config.stages) {
            let y = conv.apply(tape, store, x)?;
            let y = tape.relu(y);
            let (_, cur, _) = tape.value(y).chw();
            x = if stage.size < cur {
                tape.adaptive_max_pool(y, stage.size, stage.size)?
            } else {
                y
            };
            if stage.tap {
                levels.push(x);
            }
        }
        Ok(FeaturePyramid { levels })
    }

    pub fn forward_image(&self, tape: &mut Tape, store: &ParamStore, image: &Tensor) -> Result<FeaturePyramid> {
        let leaf = tape.leaf(image.clone());
        self.forward(tape, store, leaf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn build_is_deterministic_in_seed() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut store = ParamStore::new();
            build_backbone(&PyramidConfig::desk(), &mut store, &mut rng).unwrap();
            store
                .iter()
                .flat_map(|(_, p)| p.value.data().to_vec())
                .collect::<Vec<f64>>()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn desk_profile_shape_trace() {
        let cfg = PyramidConfig::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let backbone = build_backbone(&cfg, &mut store, &mut rng).unwrap();
        let mut tape = Tape::new();
        let img = Tensor::zeros(&[1, 48, 48]);
        let pyr = backbone.forward_image(&mut tape, &store, &img).unwrap();
        let sizes: Vec<usize> = pyr.levels.iter().map(|&v| tape.value(v).chw().1).collect();
        assert_eq!(sizes, vec![24, 12, 6, 3]);
        // strictly decreasing resolution
        assert!(sizes.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn zero_image_zero_bias_gives_zero_pyramid() {
        let cfg = PyramidConfig::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let backbone = build_backbone(&cfg, &mut store, &mut rng).unwrap();
        let mut tape = Tape::new();
        let img = Tensor::zeros(&[1, 48, 48]);
        let pyr = backbone.forward_image(&mut tape, &store, &img).unwrap();
        for &v in &pyr.levels {
            assert!(tape.value(v).data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn wrong_image_size_is_error() {
        let cfg = PyramidConfig::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let backbone = build_backbone(&cfg, &mut store, &mut rng).unwrap();
        let mut tape = Tape::new();
        let img = Tensor::zeros(&[1, 32, 32]);
        assert!(backbone.forward_image(&mut tape, &store, &img).is_err());
    }

    #[test]
    fn unreachable_size_is_config_error() {
        let mut cfg = PyramidConfig::desk();
        cfg.stages[1].size = 30; // larger than the 24 before it
        assert!(cfg.validate().is_err());
    }
}
