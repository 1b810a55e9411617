//! Parameterized layers built from the tape primitives: convolution layers
//! with He initialization and the residual fusion block (1x1 -> 3x3 -> 1x1
//! with a skip connection).

use crate::error::{NetError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{ParamId, ParamStore, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// A conv layer's weights plus geometry. k=1 carries padding 0, k=3 padding 1,
/// so both are shape-preserving at stride 1.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        assert!(k == 1 || k == 3, "kernel size must be 1 or 3");
        let padding = if k == 3 { 1 } else { 0 };
        let std = (2.0 / (in_ch * k * k) as f64).sqrt();
        let normal = Normal::new(0.0, std).unwrap();
        let n = out_ch * in_ch * k * k;
        let kernel_data: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
        let kernel = store.add(
            format!("{name}.w"),
            Tensor::new(vec![out_ch, in_ch, k, k], kernel_data).unwrap(),
        );
        let bias = store.add(format!("{name}.b"), Tensor::zeros(&[out_ch]));
        ConvLayer {
            kernel,
            bias,
            in_ch,
            out_ch,
            k,
            stride,
            padding,
        }
    }

    /// All-zero weights and biases (identity through skip paths; tests).
    pub fn zeros(store: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize, k: usize) -> Self {
        assert!(k == 1 || k == 3);
        let kernel = store.add(format!("{name}.w"), Tensor::zeros(&[out_ch, in_ch, k, k]));
        let bias = store.add(format!("{name}.b"), Tensor::zeros(&[out_ch]));
        ConvLayer {
            kernel,
            bias,
            in_ch,
            out_ch,
            k,
            stride: 1,
            padding: if k == 3 { 1 } else { 0 },
        }
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.kernel);
        let b = tape.param(store, self.bias);
        tape.conv(x, w, b, self.stride, self.padding)
    }
}

/// Residual block: out = x + C1x1(relu(C3x3(relu(C1x1(x))))).
#[derive(Clone, Debug)]
pub struct FusionBlock {
    pub reduce: ConvLayer,
    pub spatial: ConvLayer,
    pub expand: ConvLayer,
}

impl FusionBlock {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, channels: usize, mid: usize, rng: &mut R) -> Self {
        FusionBlock {
            reduce: ConvLayer::new(store, &format!("{name}.reduce"), channels, mid, 1, 1, rng),
            spatial: ConvLayer::new(store, &format!("{name}.spatial"), mid, mid, 3, 1, rng),
            expand: ConvLayer::new(store, &format!("{name}.expand"), mid, channels, 1, 1, rng),
        }
    }

    pub fn zeros(store: &mut ParamStore, name: &str, channels: usize, mid: usize) -> Self {
        FusionBlock {
            reduce: ConvLayer::zeros(store, &format!("{name}.reduce"), channels, mid, 1),
            spatial: ConvLayer::zeros(store, &format!("{name}.spatial"), mid, mid, 3),
            expand: ConvLayer::zeros(store, &format!("{name}.expand"), mid, channels, 1),
        }
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let (c, _, _) = tape.value(x).chw();
        if c != self.reduce.in_ch {
            return Err(NetError::ShapeMismatch {
                op: "fusion_block: channel config",
                lhs: tape.value(x).shape().to_vec(),
                rhs: vec![self.reduce.in_ch],
            });
        }
        let y = self.reduce.apply(tape, store, x)?;
        let y = tape.relu(y);
        let y = self.spatial.apply(tape, store, y)?;
        let y = tape.relu(y);
        let y = self.expand.apply(tape, store, y)?;
        tape.add(x, y)
    }
}
