//! Reverse-mode differentiation over a linear tape of recorded operations.
//!
//! Every differentiable operation appends a node holding its output value
//! and enough bookkeeping (parent ids, pooling argmaxes, mined negatives)
//! to replay the chain rule in exact reverse execution order. Parameters
//! enter as tagged leaves; `backward` accumulates into `Parameter.grad`.

use crate::error::{NetError, Result};
use crate::nnops;
use crate::tensor::{ParamId, ParamStore, Tensor};

/// Handle to a node on a [`Tape`]. Only valid for the tape that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Anchor-level supervision for the multibox loss op.
#[derive(Clone, Debug)]
pub struct MultiboxTargets {
    /// Per-anchor class label; 0 is background.
    pub labels: Vec<usize>,
    /// (anchor index, encoded box offsets) for each positive anchor.
    pub loc_targets: Vec<(usize, [f64; 4])>,
    /// Number of classes including background.
    pub num_classes: usize,
    /// Mined negatives per positive (classic SSD 3:1).
    pub neg_ratio: usize,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Relu(Var),
    Conv {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        x: Var,
        window: usize,
        stride: usize,
    },
    AdaptiveMaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample(Var),
    ChannelMax {
        x: Var,
        argmax: Vec<usize>,
    },
    ChannelAvg(Var),
    ConcatChannels(Var, Var),
    RepeatChannels {
        x: Var,
        copies: usize,
    },
    /// (A*F) x H x W feature map -> flat vector in (cell, anchor, field) order.
    HeadReshape {
        x: Var,
        anchors: usize,
        fields: usize,
    },
    ConcatFlat(Vec<Var>),
    Sum(Var),
    /// Softmax-normalized spatial affinity pooled to one scalar per position.
    AffinityPool(Var),
    Multibox {
        cls: Var,
        loc: Var,
        targets: MultiboxTargets,
        mined: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<ParamId>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Bring a parameter onto the tape; backward will accumulate its grad.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push(store.value(id).clone(), Op::Leaf);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.push(value, Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        if !self.value(a).all_finite() {
            return Err(NetError::NonFinite { op: "sigmoid" });
        }
        let value = self.value(a).map(crate::sigmoid_scalar);
        Ok(self.push(value, Op::Sigmoid(a)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn conv(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let value = nnops::conv_forward(self.value(x), self.value(w), self.value(b), stride, pad)?;
        Ok(self.push(value, Op::Conv { x, w, b, stride, pad }))
    }

    pub fn max_pool(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let (value, argmax) = nnops::max_pool_forward(self.value(x), window, stride)?;
        Ok(self.push(value, Op::MaxPool { x, argmax }))
    }

    pub fn avg_pool(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let value = nnops::avg_pool_forward(self.value(x), window, stride)?;
        Ok(self.push(value, Op::AvgPool { x, window, stride }))
    }

    pub fn adaptive_max_pool(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (value, argmax) = nnops::adaptive_max_pool_forward(self.value(x), out_h, out_w)?;
        Ok(self.push(value, Op::AdaptiveMaxPool { x, argmax }))
    }

    pub fn upsample(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let value = nnops::bilinear_upsample_forward(self.value(x), out_h, out_w)?;
        Ok(self.push(value, Op::Upsample(x)))
    }

    pub fn channel_max(&mut self, x: Var) -> Var {
        let (value, argmax) = nnops::channel_max_forward(self.value(x));
        self.push(value, Op::ChannelMax { x, argmax })
    }

    pub fn channel_avg(&mut self, x: Var) -> Var {
        let value = nnops::channel_avg_forward(self.value(x));
        self.push(value, Op::ChannelAvg(x))
    }

    /// Stack two rank-3 tensors of equal spatial size along channels.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = self.value(a).chw();
        let (cb, hb, wb) = self.value(b).chw();
        if (ha, wa) != (hb, wb) {
            return Err(NetError::ShapeMismatch {
                op: "concat_channels",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let value = Tensor::new(vec![ca + cb, ha, wa], data)?;
        Ok(self.push(value, Op::ConcatChannels(a, b)))
    }

    /// Broadcast a single-channel map across `copies` channels.
    pub fn repeat_channels(&mut self, x: Var, copies: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).chw();
        if c != 1 {
            return Err(NetError::InvalidShape {
                op: "repeat_channels",
                shape: self.value(x).shape().to_vec(),
                msg: "expected a single-channel map".into(),
            });
        }
        let plane = self.value(x).data().to_vec();
        let mut data = Vec::with_capacity(copies * h * w);
        for _ in 0..copies {
            data.extend_from_slice(&plane);
        }
        let value = Tensor::new(vec![copies, h, w], data)?;
        Ok(self.push(value, Op::RepeatChannels { x, copies }))
    }

    /// Rearrange an (anchors*fields) x H x W head map into a flat vector
    /// ordered (cell row-major, anchor, field).
    pub fn head_reshape(&mut self, x: Var, anchors: usize, fields: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).chw();
        if c != anchors * fields {
            return Err(NetError::InvalidShape {
                op: "head_reshape",
                shape: self.value(x).shape().to_vec(),
                msg: format!("channels != anchors({anchors}) * fields({fields})"),
            });
        }
        let xd = self.value(x).data();
        let mut data = Vec::with_capacity(c * h * w);
        for p in 0..h * w {
            for a in 0..anchors {
                for f in 0..fields {
                    data.push(xd[(a * fields + f) * h * w + p]);
                }
            }
        }
        let value = Tensor::new(vec![c * h * w], data)?;
        Ok(self.push(value, Op::HeadReshape { x, anchors, fields }))
    }

    pub fn concat_flat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![data.len()], data)?;
        Ok(self.push(value, Op::ConcatFlat(parts.to_vec())))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    /// Per-position scalar from a softmax-normalized spatial affinity:
    /// s_i = sum_j softmax_j(b_i . b_j) * mean_c(b_cj) over positions of the
    /// bottleneck map `x` (cb x H x W). Output is 1 x H x W.
    pub fn affinity_pool(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        let n = h * w;
        let xd = self.value(x).data();
        // mean over channels per position
        let mut m = vec![0.0f64; n];
        for ic in 0..c {
            for p in 0..n {
                m[p] += xd[ic * n + p];
            }
        }
        for v in &mut m {
            *v /= c as f64;
        }
        let mut out = vec![0.0f64; n];
        let mut row = vec![0.0f64; n];
        for i in 0..n {
            for (j, r) in row.iter_mut().enumerate() {
                let mut dot = 0.0;
                for ic in 0..c {
                    dot += xd[ic * n + i] * xd[ic * n + j];
                }
                *r = dot;
            }
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for r in &mut row {
                *r = (*r - mx).exp();
                z += *r;
            }
            let mut s = 0.0;
            for j in 0..n {
                s += row[j] / z * m[j];
            }
            out[i] = s;
        }
        let value = Tensor::new(vec![1, h, w], out).unwrap();
        self.push(value, Op::AffinityPool(x))
    }

    /// SSD multibox loss: smooth-L1 on positives plus softmax cross-entropy
    /// over positives and hard-mined negatives, normalized by positive count
    /// (or mined count when no positives). Returns a scalar node.
    pub fn multibox_loss(&mut self, cls: Var, loc: Var, targets: MultiboxTargets) -> Result<Var> {
        let n = targets.labels.len();
        let nc = targets.num_classes;
        if self.value(cls).len() != n * nc {
            return Err(NetError::ShapeMismatch {
                op: "multibox_loss: class logits",
                lhs: self.value(cls).shape().to_vec(),
                rhs: vec![n * nc],
            });
        }
        if self.value(loc).len() != n * 4 {
            return Err(NetError::ShapeMismatch {
                op: "multibox_loss: box predictions",
                lhs: self.value(loc).shape().to_vec(),
                rhs: vec![n * 4],
            });
        }
        let cls_d = self.value(cls).data();
        let loc_d = self.value(loc).data();

        let npos = targets.loc_targets.len();
        // background CE for negative candidates, mined by descending loss
        let mut neg: Vec<(f64, usize)> = (0..n)
            .filter(|&i| targets.labels[i] == 0)
            .map(|i| (ce_for(cls_d, i, nc, 0), i))
            .collect();
        neg.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let keep = if npos > 0 {
            (targets.neg_ratio * npos).min(neg.len())
        } else {
            targets.neg_ratio.min(neg.len())
        };
        neg.truncate(keep);
        let mined: Vec<usize> = neg.iter().map(|&(_, i)| i).collect();

        let mut ce = 0.0;
        for &(anchor, _) in &targets.loc_targets {
            ce += ce_for(cls_d, anchor, nc, targets.labels[anchor]);
        }
        for &(l, _) in &neg {
            ce += l;
        }
        let mut loc_loss = 0.0;
        for &(anchor, tgt) in &targets.loc_targets {
            for j in 0..4 {
                loc_loss += smooth_l1(loc_d[anchor * 4 + j] - tgt[j]);
            }
        }
        let norm = if npos > 0 { npos } else { mined.len().max(1) } as f64;
        let value = Tensor::scalar((ce + loc_loss) / norm);
        Ok(self.push(
            value,
            Op::Multibox {
                cls,
                loc,
                targets,
                mined,
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`; accumulates parameter gradients
    /// into `store` (+=, callers zero_grad between steps).
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(NetError::Config("backward: loss is not on this tape".into()));
        }
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(NetError::LossNotScalar {
                shape: self.nodes[loss.0].value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if let Some(pid) = node.param {
                store.grad_mut(pid).add_assign(&g);
            }
            self.propagate(node, &g, &mut grads);
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, contrib: Tensor) {
        match &mut grads[v.0] {
            Some(t) => t.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let da = g.zip(self.value(*b), "mul_bw", |x, y| x * y).unwrap();
                let db = g.zip(self.value(*a), "mul_bw", |x, y| x * y).unwrap();
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, g.map(|x| x * c));
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let da = g.zip(y, "sigmoid_bw", |gi, yi| gi * yi * (1.0 - yi)).unwrap();
                self.accumulate(grads, *a, da);
            }
            Op::Relu(a) => {
                let da = g
                    .zip(self.value(*a), "relu_bw", |gi, xi| if xi > 0.0 { gi } else { 0.0 })
                    .unwrap();
                self.accumulate(grads, *a, da);
            }
            Op::Conv { x, w, b, stride, pad } => {
                let (dx, dw, db) =
                    nnops::conv_backward(self.value(*x), self.value(*w), g, *stride, *pad);
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *w, dw);
                self.accumulate(grads, *b, db);
            }
            Op::MaxPool { x, argmax } | Op::AdaptiveMaxPool { x, argmax } => {
                let dx = nnops::max_pool_backward(self.value(*x).shape(), argmax, g);
                self.accumulate(grads, *x, dx);
            }
            Op::AvgPool { x, window, stride } => {
                let dx = nnops::avg_pool_backward(self.value(*x).shape(), *window, *stride, g);
                self.accumulate(grads, *x, dx);
            }
            Op::Upsample(x) => {
                let dx = nnops::bilinear_upsample_backward(self.value(*x).shape(), g);
                self.accumulate(grads, *x, dx);
            }
            Op::ChannelMax { x, argmax } => {
                let (c, h, w) = self.value(*x).chw();
                let _ = c;
                let mut dx = Tensor::zeros(self.value(*x).shape());
                for p in 0..h * w {
                    dx.data_mut()[argmax[p] * h * w + p] += g.data()[p];
                }
                self.accumulate(grads, *x, dx);
            }
            Op::ChannelAvg(x) => {
                let (c, h, w) = self.value(*x).chw();
                let inv = 1.0 / c as f64;
                let mut dx = Tensor::zeros(self.value(*x).shape());
                for ic in 0..c {
                    for p in 0..h * w {
                        dx.data_mut()[ic * h * w + p] += g.data()[p] * inv;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::ConcatChannels(a, b) => {
                let na = self.value(*a).len();
                let mut da = Tensor::zeros(self.value(*a).shape());
                let mut db = Tensor::zeros(self.value(*b).shape());
                da.data_mut().copy_from_slice(&g.data()[..na]);
                db.data_mut().copy_from_slice(&g.data()[na..]);
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::RepeatChannels { x, copies } => {
                let (_, h, w) = self.value(*x).chw();
                let mut dx = Tensor::zeros(self.value(*x).shape());
                for rep in 0..*copies {
                    for p in 0..h * w {
                        dx.data_mut()[p] += g.data()[rep * h * w + p];
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::HeadReshape { x, anchors, fields } => {
                let (c, h, w) = self.value(*x).chw();
                let _ = c;
                let mut dx = Tensor::zeros(self.value(*x).shape());
                let mut i = 0;
                for p in 0..h * w {
                    for a in 0..*anchors {
                        for f in 0..*fields {
                            dx.data_mut()[(a * fields + f) * h * w + p] += g.data()[i];
                            i += 1;
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::ConcatFlat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    let mut dp = Tensor::zeros(self.value(p).shape());
                    dp.data_mut().copy_from_slice(&g.data()[offset..offset + len]);
                    offset += len;
                    self.accumulate(grads, p, dp);
                }
            }
            Op::Sum(x) => {
                self.accumulate(grads, *x, Tensor::full(self.value(*x).shape(), g.item()));
            }
            Op::AffinityPool(x) => {
                let dx = affinity_pool_backward(self.value(*x), g);
                self.accumulate(grads, *x, dx);
            }
            Op::Multibox {
                cls,
                loc,
                targets,
                mined,
            } => {
                let (dcls, dloc) = multibox_backward(
                    self.value(*cls).data(),
                    self.value(*loc).data(),
                    targets,
                    mined,
                    g.item(),
                );
                self.accumulate(grads, *cls, Tensor::new(self.value(*cls).shape().to_vec(), dcls).unwrap());
                self.accumulate(grads, *loc, Tensor::new(self.value(*loc).shape().to_vec(), dloc).unwrap());
            }
        }
    }
}

fn smooth_l1(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

fn smooth_l1_grad(d: f64) -> f64 {
    d.clamp(-1.0, 1.0)
}

/// Cross-entropy of anchor `i`'s logits against class `label`.
fn ce_for(cls: &[f64], i: usize, nc: usize, label: usize) -> f64 {
    let logits = &cls[i * nc..(i + 1) * nc];
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|&l| (l - mx).exp()).sum();
    z.ln() + mx - logits[label]
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - mx).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

fn multibox_backward(
    cls: &[f64],
    loc: &[f64],
    targets: &MultiboxTargets,
    mined: &[usize],
    gscale: f64,
) -> (Vec<f64>, Vec<f64>) {
    let nc = targets.num_classes;
    let npos = targets.loc_targets.len();
    let norm = if npos > 0 { npos } else { mined.len().max(1) } as f64;
    let scale = gscale / norm;

    let mut dcls = vec![0.0; cls.len()];
    let mut dloc = vec![0.0; loc.len()];
    let mut probs = vec![0.0; nc];

    let mut ce_anchor = |i: usize, label: usize, dcls: &mut [f64]| {
        softmax_into(&cls[i * nc..(i + 1) * nc], &mut probs);
        for c in 0..nc {
            dcls[i * nc + c] += scale * (probs[c] - if c == label { 1.0 } else { 0.0 });
        }
    };
    for &(anchor, _) in &targets.loc_targets {
        ce_anchor(anchor, targets.labels[anchor], &mut dcls);
    }
    for &i in mined {
        ce_anchor(i, 0, &mut dcls);
    }
    for &(anchor, tgt) in &targets.loc_targets {
        for j in 0..4 {
            dloc[anchor * 4 + j] += scale * smooth_l1_grad(loc[anchor * 4 + j] - tgt[j]);
        }
    }
    (dcls, dloc)
}

fn affinity_pool_backward(x: &Tensor, g: &Tensor) -> Tensor {
    let (c, h, w) = x.chw();
    let n = h * w;
    let xd = x.data();
    let gd = g.data();

    let mut m = vec![0.0f64; n];
    for ic in 0..c {
        for p in 0..n {
            m[p] += xd[ic * n + p];
        }
    }
    for v in &mut m {
        *v /= c as f64;
    }

    let mut dx = vec![0.0f64; c * n];
    let mut dm = vec![0.0f64; n];
    let mut sigma = vec![0.0f64; n];
    for i in 0..n {
        // softmax row of affinities a_ij = b_i . b_j
        for (j, s) in sigma.iter_mut().enumerate() {
            let mut dot = 0.0;
            for ic in 0..c {
                dot += xd[ic * n + i] * xd[ic * n + j];
            }
            *s = dot;
        }
        let mx = sigma.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for s in &mut sigma {
            *s = (*s - mx).exp();
            z += *s;
        }
        let mut s_i = 0.0;
        for j in 0..n {
            sigma[j] /= z;
            s_i += sigma[j] * m[j];
        }
        let gi = gd[i];
        for k in 0..n {
            // dL/da_ik, then scattered through a_ik = b_i . b_k
            let da = gi * sigma[k] * (m[k] - s_i);
            if da != 0.0 {
                for ic in 0..c {
                    dx[ic * n + i] += da * xd[ic * n + k];
                    dx[ic * n + k] += da * xd[ic * n + i];
                }
            }
            dm[k] += gi * sigma[k];
        }
    }
    // mean path: m_j = (1/c) sum_c b_cj
    for ic in 0..c {
        for p in 0..n {
            dx[ic * n + p] += dm[p] / c as f64;
        }
    }
    Tensor::new(x.shape().to_vec(), dx).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let b = tape.leaf(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
        let s = tape.add(a, b).unwrap();
        assert_eq!(tape.value(s).data(), &[4.0, 6.0]);

        let d = tape.sub(a, a).unwrap();
        assert!(tape.value(d).data().iter().all(|&v| v == 0.0));

        let z = tape.leaf(Tensor::zeros(&[2]));
        let m = tape.mul(a, z).unwrap();
        assert!(tape.value(m).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sigmoid_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![0.0, 40.0, -3.0]).unwrap());
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y).data()[0], 0.5);
        assert!((tape.value(y).data()[1] - 1.0).abs() < 1e-12);
        // symmetry: sigmoid(-x) = 1 - sigmoid(x)
        let neg = tape.scale(x, -1.0);
        let yn = tape.sigmoid(neg).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(tape.value(yn).data()) {
            assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_rejects_non_finite() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1], vec![f64::NAN]).unwrap());
        assert!(tape.sigmoid(x).is_err());
    }

    #[test]
    fn backward_square_and_sigmoid() {
        // loss = sum(w * w), w = [3] -> grad 6
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(3.0));
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let sq = tape.mul(wv, wv).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss, &mut store).unwrap();
        assert!((store.grad(w).item() - 6.0).abs() < 1e-12);

        // loss = sum(sigmoid(w)), w = [0] -> grad 0.25
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(0.0));
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let s = tape.sigmoid(wv).unwrap();
        let loss = tape.sum(s);
        tape.backward(loss, &mut store).unwrap();
        assert!((store.grad(w).item() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::zeros(&[2]));
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        assert!(matches!(
            tape.backward(wv, &mut store),
            Err(NetError::LossNotScalar { .. })
        ));
    }

    #[test]
    fn backward_rejects_off_tape_loss() {
        let mut t1 = Tape::new();
        let mut store = ParamStore::new();
        let a = t1.leaf(Tensor::scalar(1.0));
        let s = t1.sum(a);
        let t2 = Tape::new();
        assert!(t2.backward(s, &mut store).is_err());
    }

    #[test]
    fn multibox_uniform_logits_background_only() {
        // zero GTs, uniform logits -> loss = ln(num_classes)
        let nc = 4;
        let n = 6;
        let mut tape = Tape::new();
        let cls = tape.leaf(Tensor::zeros(&[n * nc]));
        let loc = tape.leaf(Tensor::zeros(&[n * 4]));
        let loss = tape
            .multibox_loss(
                cls,
                loc,
                MultiboxTargets {
                    labels: vec![0; n],
                    loc_targets: vec![],
                    num_classes: nc,
                    neg_ratio: 3,
                },
            )
            .unwrap();
        assert!((tape.value(loss).item() - (nc as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn multibox_perfect_predictions_near_zero() {
        let nc = 3;
        let n = 4;
        let mut labels = vec![0; n];
        labels[1] = 2;
        let mut cls = vec![0.0; n * nc];
        for i in 0..n {
            for c in 0..nc {
                cls[i * nc + c] = if c == labels[i] { 40.0 } else { -40.0 };
            }
        }
        let mut tape = Tape::new();
        let cls_v = tape.leaf(Tensor::new(vec![n * nc], cls).unwrap());
        let loc_v = tape.leaf(Tensor::zeros(&[n * 4]));
        let loss = tape
            .multibox_loss(
                cls_v,
                loc_v,
                MultiboxTargets {
                    labels,
                    loc_targets: vec![(1, [0.0; 4])],
                    num_classes: nc,
                    neg_ratio: 3,
                },
            )
            .unwrap();
        assert!(tape.value(loss).item() <= 1e-10);
    }
}
