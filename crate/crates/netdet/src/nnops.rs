//! Numeric kernels for the neural ops: cross-correlation conv, max/avg
//! pooling (fixed and adaptive window), align-corners bilinear upsampling,
//! and channel reductions. Forward and backward pairs live here; the tape
//! wraps them into recorded operations.
//!
//! All spatial ops take rank-3 `channels x height x width` tensors.

use crate::error::{NetError, Result};
use crate::tensor::Tensor;

pub fn conv_out_size(input: usize, k: usize, pad: usize, stride: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < k {
        return Err(NetError::InvalidShape {
            op: "conv",
            shape: vec![input],
            msg: format!("kernel {k} with padding {pad} exceeds input {input}"),
        });
    }
    let out = (padded - k) / stride + 1;
    if out < 1 {
        return Err(NetError::InvalidShape {
            op: "conv",
            shape: vec![input],
            msg: "output size < 1".into(),
        });
    }
    Ok(out)
}

/// 2-D cross-correlation. `x`: ci x H x W, `w`: co x ci x k x k, `b`: co.
pub fn conv_forward(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (ci, h, wd) = x.chw();
    assert_eq!(w.rank(), 4, "conv kernel must be rank 4");
    let (co, wci, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    assert_eq!(kh, kw, "only square kernels supported");
    let k = kh;
    if wci != ci {
        return Err(NetError::ShapeMismatch {
            op: "conv: input channels vs kernel in_channels",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    assert_eq!(b.shape(), [co]);
    let oh = conv_out_size(h, k, pad, stride)?;
    let ow = conv_out_size(wd, k, pad, stride)?;

    let xd = x.data();
    let wv = w.data();
    let bd = b.data();
    let mut out = vec![0.0f64; co * oh * ow];

    for oc in 0..co {
        out[oc * oh * ow..(oc + 1) * oh * ow].fill(bd[oc]);
        for ic in 0..ci {
            for ky in 0..k {
                for kx in 0..k {
                    let weight = wv[((oc * ci + ic) * k + ky) * k + kx];
                    // ox range with ix = ox*stride + kx - pad inside [0, wd)
                    let (ox_lo, ox_hi) = valid_range(ow, wd, stride, kx, pad);
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = &xd[(ic * h + iy as usize) * wd..][..wd];
                        let orow = &mut out[(oc * oh + oy) * ow..][..ow];
                        for ox in ox_lo..ox_hi {
                            let ix = ox * stride + kx - pad;
                            orow[ox] += weight * xrow[ix];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![co, oh, ow], out)
}

/// Gradients of [`conv_forward`] w.r.t. input, kernel, and bias.
pub fn conv_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> (Tensor, Tensor, Tensor) {
    let (ci, h, wd) = x.chw();
    let (co, _, k, _) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let (_, oh, ow) = grad_out.chw();

    let xd = x.data();
    let wv = w.data();
    let gd = grad_out.data();
    let mut dx = vec![0.0f64; ci * h * wd];
    let mut dw = vec![0.0f64; w.len()];
    let mut db = vec![0.0f64; co];

    for oc in 0..co {
        let gplane = &gd[oc * oh * ow..][..oh * ow];
        db[oc] += gplane.iter().sum::<f64>();
        for ic in 0..ci {
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((oc * ci + ic) * k + ky) * k + kx;
                    let weight = wv[widx];
                    let mut wacc = 0.0;
                    let (ox_lo, ox_hi) = valid_range(ow, wd, stride, kx, pad);
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = &xd[(ic * h + iy as usize) * wd..][..wd];
                        let dxrow = &mut dx[(ic * h + iy as usize) * wd..][..wd];
                        let grow = &gplane[oy * ow..][..ow];
                        for ox in ox_lo..ox_hi {
                            let ix = ox * stride + kx - pad;
                            let g = grow[ox];
                            dxrow[ix] += weight * g;
                            wacc += xrow[ix] * g;
                        }
                    }
                    dw[widx] += wacc;
                }
            }
        }
    }
    (
        Tensor::new(vec![ci, h, wd], dx).unwrap(),
        Tensor::new(w.shape().to_vec(), dw).unwrap(),
        Tensor::new(vec![co], db).unwrap(),
    )
}

fn valid_range(out: usize, input: usize, stride: usize, kx: usize, pad: usize) -> (usize, usize) {
    // smallest ox with ox*stride + kx - pad >= 0
    let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(stride) };
    // largest ox with ox*stride + kx - pad < input
    let hi = if input + pad > kx {
        ((input + pad - kx - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

fn pool_out_size(input: usize, window: usize, stride: usize, op: &'static str) -> Result<usize> {
    if input < window {
        return Err(NetError::InvalidShape {
            op,
            shape: vec![input],
            msg: format!("window {window} exceeds input {input}"),
        });
    }
    Ok((input - window) / stride + 1)
}

/// Fixed-window max pooling. Returns the pooled map and, per output element,
/// the flat input index of the (first) maximum, for the backward pass.
pub fn max_pool_forward(x: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = x.chw();
    let oh = pool_out_size(h, window, stride, "max_pool")?;
    let ow = pool_out_size(w, window, stride, "max_pool")?;
    let xd = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ic in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for ky in 0..window {
                    for kx in 0..window {
                        let idx = (ic * h + oy * stride + ky) * w + ox * stride + kx;
                        if xd[idx] > best {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], out)?, argmax))
}

pub fn max_pool_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    for (g, &idx) in grad_out.data().iter().zip(argmax) {
        dx.data_mut()[idx] += g;
    }
    dx
}

pub fn avg_pool_forward(x: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let (c, h, w) = x.chw();
    let oh = pool_out_size(h, window, stride, "avg_pool")?;
    let ow = pool_out_size(w, window, stride, "avg_pool")?;
    let xd = x.data();
    let inv = 1.0 / (window * window) as f64;
    let mut out = Vec::with_capacity(c * oh * ow);
    for ic in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..window {
                    for kx in 0..window {
                        acc += xd[(ic * h + oy * stride + ky) * w + ox * stride + kx];
                    }
                }
                out.push(acc * inv);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

pub fn avg_pool_backward(input_shape: &[usize], window: usize, stride: usize, grad_out: &Tensor) -> Tensor {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (_, oh, ow) = grad_out.chw();
    let inv = 1.0 / (window * window) as f64;
    let mut dx = Tensor::zeros(input_shape);
    let _ = c;
    for ic in 0..input_shape[0] {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = grad_out.at3(ic, oy, ox) * inv;
                for ky in 0..window {
                    for kx in 0..window {
                        dx.data_mut()[(ic * h + oy * stride + ky) * w + ox * stride + kx] += g;
                    }
                }
            }
        }
    }
    dx
}

/// Index range of output cell `o` when adaptively partitioning `input`
/// positions into `out` cells (start inclusive, end exclusive).
pub fn adaptive_span(o: usize, input: usize, out: usize) -> (usize, usize) {
    let start = o * input / out;
    let end = ((o + 1) * input).div_ceil(out);
    (start, end)
}

/// Max pooling with output-size-driven windows; handles non-integer ratios
/// like 38 -> 19 -> 10. Returns pooled map plus flat argmax indices.
pub fn adaptive_max_pool_forward(x: &Tensor, out_h: usize, out_w: usize) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = x.chw();
    if out_h > h || out_w > w || out_h == 0 || out_w == 0 {
        return Err(NetError::InvalidShape {
            op: "adaptive_max_pool",
            shape: x.shape().to_vec(),
            msg: format!("cannot pool to {out_h}x{out_w}"),
        });
    }
    let xd = x.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    let mut argmax = Vec::with_capacity(c * out_h * out_w);
    for ic in 0..c {
        for oy in 0..out_h {
            let (y0, y1) = adaptive_span(oy, h, out_h);
            for ox in 0..out_w {
                let (x0, x1) = adaptive_span(ox, w, out_w);
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        let idx = (ic * h + iy) * w + ix;
                        if xd[idx] > best {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((Tensor::new(vec![c, out_h, out_w], out)?, argmax))
}

/// Align-corners bilinear interpolation to a larger (or equal) spatial size.
pub fn bilinear_upsample_forward(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = x.chw();
    if out_h < h || out_w < w {
        return Err(NetError::InvalidShape {
            op: "bilinear_upsample",
            shape: x.shape().to_vec(),
            msg: format!("shrinking to {out_h}x{out_w} not supported"),
        });
    }
    let sy = if out_h > 1 { (h - 1) as f64 / (out_h - 1) as f64 } else { 0.0 };
    let sx = if out_w > 1 { (w - 1) as f64 / (out_w - 1) as f64 } else { 0.0 };
    let xd = x.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ic in 0..c {
        for oy in 0..out_h {
            let fy = oy as f64 * sy;
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let dy = fy - y0 as f64;
            for ox in 0..out_w {
                let fx = ox as f64 * sx;
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let dx = fx - x0 as f64;
                let v00 = xd[(ic * h + y0) * w + x0];
                let v01 = xd[(ic * h + y0) * w + x1];
                let v10 = xd[(ic * h + y1) * w + x0];
                let v11 = xd[(ic * h + y1) * w + x1];
                out.push(
                    v00 * (1.0 - dy) * (1.0 - dx)
                        + v01 * (1.0 - dy) * dx
                        + v10 * dy * (1.0 - dx)
                        + v11 * dy * dx,
                );
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

pub fn bilinear_upsample_backward(input_shape: &[usize], grad_out: &Tensor) -> Tensor {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (_, out_h, out_w) = grad_out.chw();
    let sy = if out_h > 1 { (h - 1) as f64 / (out_h - 1) as f64 } else { 0.0 };
    let sx = if out_w > 1 { (w - 1) as f64 / (out_w - 1) as f64 } else { 0.0 };
    let mut dx = Tensor::zeros(input_shape);
    let gd = grad_out.data();
    for ic in 0..c {
        for oy in 0..out_h {
            let fy = oy as f64 * sy;
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let dy = fy - y0 as f64;
            for ox in 0..out_w {
                let fx = ox as f64 * sx;
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let dxf = fx - x0 as f64;
                let g = gd[(ic * out_h + oy) * out_w + ox];
                let d = dx.data_mut();
                d[(ic * h + y0) * w + x0] += g * (1.0 - dy) * (1.0 - dxf);
                d[(ic * h + y0) * w + x1] += g * (1.0 - dy) * dxf;
                d[(ic * h + y1) * w + x0] += g * dy * (1.0 - dxf);
                d[(ic * h + y1) * w + x1] += g * dy * dxf;
            }
        }
    }
    dx
}

/// Max over channels -> 1 x H x W, with per-position argmax channel.
pub fn channel_max_forward(x: &Tensor) -> (Tensor, Vec<usize>) {
    let (c, h, w) = x.chw();
    let mut out = Vec::with_capacity(h * w);
    let mut argmax = Vec::with_capacity(h * w);
    for p in 0..h * w {
        let mut best = f64::NEG_INFINITY;
        let mut best_c = 0usize;
        for ic in 0..c {
            let v = x.data()[ic * h * w + p];
            if v > best {
                best = v;
                best_c = ic;
            }
        }
        out.push(best);
        argmax.push(best_c);
    }
    (Tensor::new(vec![1, h, w], out).unwrap(), argmax)
}

pub fn channel_avg_forward(x: &Tensor) -> Tensor {
    let (c, h, w) = x.chw();
    let inv = 1.0 / c as f64;
    let mut out = vec![0.0; h * w];
    for ic in 0..c {
        for p in 0..h * w {
            out[p] += x.data()[ic * h * w + p];
        }
    }
    for v in &mut out {
        *v *= inv;
    }
    Tensor::new(vec![1, h, w], out).unwrap()
}
