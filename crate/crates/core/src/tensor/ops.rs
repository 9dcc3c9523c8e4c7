//! Forward kernels for the primitive catalog. Every function validates
//! shapes and returns a descriptive error on mismatch.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::tape::PrimOp;
use super::{Element, Tensor};

pub(crate) struct Computed<E> {
    pub value: Tensor<E>,
    pub saved: Vec<Arc<Vec<E>>>,
}

impl<E: Element> Computed<E> {
    fn plain(value: Tensor<E>) -> Self {
        Computed {
            value,
            saved: vec![],
        }
    }
}

pub(crate) const GELU_SCALE: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
pub(crate) const GELU_CUBIC: f64 = 0.044_715;

/// Splits `shape` into `(outer, len, inner)` products around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Shape(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn expect_arity(op: &PrimOp, inputs: &[&Tensor<impl Element>], n: usize) -> Result<()> {
    if inputs.len() != n {
        return Err(Error::Shape(format!(
            "{} expects {} inputs, got {}",
            op.name(),
            n,
            inputs.len()
        )));
    }
    Ok(())
}

pub(crate) fn forward<E: Element>(
    op: &PrimOp,
    inputs: &[&Tensor<E>],
    needs_grad: bool,
) -> Result<Computed<E>> {
    match op {
        PrimOp::Leaf => Err(Error::Config("leaf cannot be applied".into())),
        PrimOp::Add | PrimOp::Sub | PrimOp::Mul => {
            expect_arity(op, inputs, 2)?;
            elementwise_binary(op, inputs[0], inputs[1])
        }
        PrimOp::AddScalar(c) => {
            expect_arity(op, inputs, 1)?;
            let c = E::from_f64(*c);
            Ok(Computed::plain(map_unary(inputs[0], |v| v + c)))
        }
        PrimOp::MulScalar(c) => {
            expect_arity(op, inputs, 1)?;
            let c = E::from_f64(*c);
            Ok(Computed::plain(map_unary(inputs[0], |v| v * c)))
        }
        PrimOp::MatMul => {
            expect_arity(op, inputs, 2)?;
            matmul(inputs[0], inputs[1])
        }
        PrimOp::BatchMatMul => {
            expect_arity(op, inputs, 2)?;
            batch_matmul(inputs[0], inputs[1])
        }
        PrimOp::Conv1d { kernel } => {
            expect_arity(op, inputs, 2)?;
            conv1d(inputs[0], inputs[1], *kernel)
        }
        PrimOp::DepthwiseConv1d { kernel } => {
            expect_arity(op, inputs, 2)?;
            depthwise_conv1d(inputs[0], inputs[1], *kernel)
        }
        PrimOp::Sigmoid => {
            expect_arity(op, inputs, 1)?;
            Ok(Computed::plain(map_unary(inputs[0], sigmoid)))
        }
        PrimOp::Tanh => {
            expect_arity(op, inputs, 1)?;
            Ok(Computed::plain(map_unary(inputs[0], |v| v.tanh())))
        }
        PrimOp::Gelu => {
            expect_arity(op, inputs, 1)?;
            Ok(Computed::plain(map_unary(inputs[0], gelu)))
        }
        PrimOp::Softmax { axis } => {
            expect_arity(op, inputs, 1)?;
            softmax(inputs[0], *axis)
        }
        PrimOp::LayerNormChannels { eps } => {
            expect_arity(op, inputs, 1)?;
            layer_norm_channels(inputs[0], *eps, needs_grad)
        }
        PrimOp::MeanAxis { axis } => {
            expect_arity(op, inputs, 1)?;
            mean_axis(inputs[0], *axis)
        }
        PrimOp::AvgPool1d { kernel } => {
            expect_arity(op, inputs, 1)?;
            avg_pool1d(inputs[0], *kernel)
        }
        PrimOp::Concat { axis } => concat(inputs, *axis),
        PrimOp::Slice { axis, start, len } => {
            expect_arity(op, inputs, 1)?;
            slice(inputs[0], *axis, *start, *len)
        }
        PrimOp::BroadcastTo { shape } => {
            expect_arity(op, inputs, 1)?;
            broadcast_to(inputs[0], shape)
        }
        PrimOp::Reshape { shape } => {
            expect_arity(op, inputs, 1)?;
            reshape(inputs[0], shape)
        }
        PrimOp::Permute { axes } => {
            expect_arity(op, inputs, 1)?;
            permute(inputs[0], axes)
        }
        PrimOp::SumAll => {
            expect_arity(op, inputs, 1)?;
            let s = inputs[0].data().iter().fold(E::zero(), |acc, &v| acc + v);
            Ok(Computed::plain(Tensor::scalar(s)))
        }
        PrimOp::MeanAll => {
            expect_arity(op, inputs, 1)?;
            let n = E::from_f64(inputs[0].numel() as f64);
            let s = inputs[0].data().iter().fold(E::zero(), |acc, &v| acc + v);
            Ok(Computed::plain(Tensor::scalar(s / n)))
        }
        PrimOp::GruSeq => {
            expect_arity(op, inputs, 2)?;
            gru_seq(inputs[0], inputs[1], needs_grad)
        }
    }
}

pub(crate) fn sigmoid<E: Element>(v: E) -> E {
    E::one() / (E::one() + (-v).exp())
}

pub(crate) fn gelu<E: Element>(v: E) -> E {
    let half = E::from_f64(0.5);
    let scale = E::from_f64(GELU_SCALE);
    let cubic = E::from_f64(GELU_CUBIC);
    let inner = scale * (v + cubic * v * v * v);
    half * v * (E::one() + inner.tanh())
}

fn map_unary<E: Element>(x: &Tensor<E>, f: impl Fn(E) -> E) -> Tensor<E> {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_arc(x.shape().to_vec(), Arc::new(data))
}

fn elementwise_binary<E: Element>(
    op: &PrimOp,
    a: &Tensor<E>,
    b: &Tensor<E>,
) -> Result<Computed<E>> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{}: shapes {:?} and {:?} differ",
            op.name(),
            a.shape(),
            b.shape()
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| match op {
            PrimOp::Add => x + y,
            PrimOp::Sub => x - y,
            PrimOp::Mul => x * y,
            _ => unreachable!(),
        })
        .collect();
    Ok(Computed::plain(Tensor::from_arc(
        a.shape().to_vec(),
        Arc::new(data),
    )))
}

/// `c[i, j] += a[i, l] * b[l, j]`, all row-major contiguous.
pub(crate) fn matmul_accum<E: Element>(
    a: &[E],
    b: &[E],
    c: &mut [E],
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for l in 0..k {
            let a_il = a[i * k + l];
            if a_il == E::zero() {
                continue;
            }
            let b_row = &b[l * n..(l + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_il * bv;
            }
        }
    }
}

fn matmul<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Computed<E>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(Error::Shape(format!(
            "matmul: incompatible shapes {sa:?} @ {sb:?}"
        )));
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let mut out = vec![E::zero(); m * n];
    matmul_accum(a.data(), b.data(), &mut out, m, k, n);
    Ok(Computed::plain(Tensor::from_arc(
        vec![m, n],
        Arc::new(out),
    )))
}

fn batch_matmul<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Computed<E>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
        return Err(Error::Shape(format!(
            "batch_matmul: incompatible shapes {sa:?} @ {sb:?}"
        )));
    }
    let (nb, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
    let mut out = vec![E::zero(); nb * m * n];
    for i in 0..nb {
        matmul_accum(
            &a.data()[i * m * k..(i + 1) * m * k],
            &b.data()[i * k * n..(i + 1) * k * n],
            &mut out[i * m * n..(i + 1) * m * n],
            m,
            k,
            n,
        );
    }
    Ok(Computed::plain(Tensor::from_arc(
        vec![nb, m, n],
        Arc::new(out),
    )))
}

fn check_same_kernel(kernel: usize, w_k: usize, name: &str) -> Result<usize> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::Shape(format!(
            "{name}: kernel {kernel} must be odd for same padding"
        )));
    }
    if w_k != kernel {
        return Err(Error::Shape(format!(
            "{name}: weight kernel {w_k} != declared kernel {kernel}"
        )));
    }
    Ok((kernel - 1) / 2)
}

/// `y[t] += wv * x[t + shift]` over the valid range of `t`.
#[inline]
pub(crate) fn shifted_axpy<E: Element>(y: &mut [E], x: &[E], wv: E, shift: isize) {
    let t_len = y.len() as isize;
    let t0 = (-shift).max(0);
    let t1 = (t_len - shift).min(t_len);
    if t0 >= t1 {
        return;
    }
    let (t0, t1) = (t0 as usize, t1 as usize);
    let src = &x[(t0 as isize + shift) as usize..][..t1 - t0];
    for (yv, &xv) in y[t0..t1].iter_mut().zip(src) {
        *yv += wv * xv;
    }
}

/// Dot of `g[t]` with `x[t + shift]` over the valid range.
#[inline]
pub(crate) fn shifted_dot<E: Element>(g: &[E], x: &[E], shift: isize) -> E {
    let t_len = g.len() as isize;
    let t0 = (-shift).max(0);
    let t1 = (t_len - shift).min(t_len);
    if t0 >= t1 {
        return E::zero();
    }
    let (t0, t1) = (t0 as usize, t1 as usize);
    let src = &x[(t0 as isize + shift) as usize..][..t1 - t0];
    g[t0..t1]
        .iter()
        .zip(src)
        .fold(E::zero(), |acc, (&gv, &xv)| acc + gv * xv)
}

fn conv1d<E: Element>(x: &Tensor<E>, w: &Tensor<E>, kernel: usize) -> Result<Computed<E>> {
    let (sx, sw) = (x.shape(), w.shape());
    if sx.len() != 3 || sw.len() != 3 {
        return Err(Error::Shape(format!(
            "conv1d: expected x (B,Cin,T) and w (Cout,Cin,k), got {sx:?} and {sw:?}"
        )));
    }
    let pad = check_same_kernel(kernel, sw[2], "conv1d")?;
    if sx[1] != sw[1] {
        return Err(Error::Shape(format!(
            "conv1d: input channels {} != weight channels {}",
            sx[1], sw[1]
        )));
    }
    let (bsz, cin, t_len) = (sx[0], sx[1], sx[2]);
    let cout = sw[0];
    let mut out = vec![E::zero(); bsz * cout * t_len];
    let (xd, wd) = (x.data(), w.data());
    for b in 0..bsz {
        for co in 0..cout {
            let y_row = &mut out[(b * cout + co) * t_len..][..t_len];
            for ci in 0..cin {
                let x_row = &xd[(b * cin + ci) * t_len..][..t_len];
                let w_base = (co * cin + ci) * kernel;
                for kk in 0..kernel {
                    shifted_axpy(y_row, x_row, wd[w_base + kk], kk as isize - pad as isize);
                }
            }
        }
    }
    Ok(Computed::plain(Tensor::from_arc(
        vec![bsz, cout, t_len],
        Arc::new(out),
    )))
}

fn depthwise_conv1d<E: Element>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    kernel: usize,
) -> Result<Computed<E>> {
    let (sx, sw) = (x.shape(), w.shape());
    if sx.len() != 3 || sw.len() != 2 {
        return Err(Error::Shape(format!(
            "depthwise_conv1d: expected x (B,C,T) and w (C,k), got {sx:?} and {sw:?}"
        )));
    }
    let pad = check_same_kernel(kernel, sw[1], "depthwise_conv1d")?;
    if sx[1] != sw[0] {
        return Err(Error::Shape(format!(
            "depthwise_conv1d: channels {} != filters {}",
            sx[1], sw[0]
        )));
    }
    let (bsz, ch, t_len) = (sx[0], sx[1], sx[2]);
    let mut out = vec![E::zero(); bsz * ch * t_len];
    let (xd, wd) = (x.data(), w.data());
    for b in 0..bsz {
        for c in 0..ch {
            let y_row = &mut out[(b * ch + c) * t_len..][..t_len];
            let x_row = &xd[(b * ch + c) * t_len..][..t_len];
            for kk in 0..kernel {
                shifted_axpy(y_row, x_row, wd[c * kernel + kk], kk as isize - pad as isize);
            }
        }
    }
    Ok(Computed::plain(Tensor::from_arc(
        vec![bsz, ch, t_len],
        Arc::new(out),
    )))
}

fn softmax<E: Element>(x: &Tensor<E>, axis: usize) -> Result<Computed<E>> {
    let (outer, len, inner) = split_axis(x.shape(), axis)?;
    let xd = x.data();
    let mut out = vec![E::zero(); xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = E::neg_infinity();
            for a in 0..len {
                max = max.max(xd[base + a * inner]);
            }
            let mut sum = E::zero();
            for a in 0..len {
                let e = (xd[base + a * inner] - max).exp();
                out[base + a * inner] = e;
                sum += e;
            }
            for a in 0..len {
                out[base + a * inner] /= sum;
            }
        }
    }
    Ok(Computed::plain(Tensor::from_arc(
        x.shape().to_vec(),
        Arc::new(out),
    )))
}

fn layer_norm_channels<E: Element>(
    x: &Tensor<E>,
    eps: f64,
    needs_grad: bool,
) -> Result<Computed<E>> {
    let sx = x.shape();
    if sx.len() != 3 {
        return Err(Error::Shape(format!(
            "layer_norm: expected (B,C,T), got {sx:?}"
        )));
    }
    let (bsz, ch, t_len) = (sx[0], sx[1], sx[2]);
    let eps = E::from_f64(eps);
    let inv_c = E::one() / E::from_f64(ch as f64);
    let xd = x.data();
    let mut out = vec![E::zero(); xd.len()];
    let mut inv_std = vec![E::zero(); bsz * t_len];
    for b in 0..bsz {
        let x_blk = &xd[b * ch * t_len..][..ch * t_len];
        let o_blk = &mut out[b * ch * t_len..][..ch * t_len];
        for t in 0..t_len {
            let mut mean = E::zero();
            for c in 0..ch {
                mean += x_blk[c * t_len + t];
            }
            mean *= inv_c;
            let mut var = E::zero();
            for c in 0..ch {
                let d = x_blk[c * t_len + t] - mean;
                var += d * d;
            }
            var *= inv_c;
            let inv = E::one() / (var + eps).sqrt();
            inv_std[b * t_len + t] = inv;
            for c in 0..ch {
                o_blk[c * t_len + t] = (x_blk[c * t_len + t] - mean) * inv;
            }
        }
    }
    let saved = if needs_grad {
        vec![Arc::new(inv_std)]
    } else {
        vec![]
    };
    Ok(Computed {
        value: Tensor::from_arc(sx.to_vec(), Arc::new(out)),
        saved,
    })
}

fn mean_axis<E: Element>(x: &Tensor<E>, axis: usize) -> Result<Computed<E>> {
    let (outer, len, inner) = split_axis(x.shape(), axis)?;
    let inv = E::one() / E::from_f64(len as f64);
    let xd = x.data();
    let mut out = vec![E::zero(); outer * inner];
    for o in 0..outer {
        for a in 0..len {
            let base = (o * len + a) * inner;
            let dst = &mut out[o * inner..(o + 1) * inner];
            for (dv, &xv) in dst.iter_mut().zip(&xd[base..base + inner]) {
                *dv += xv;
            }
        }
    }
    for v in &mut out {
        *v *= inv;
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = 1;
    Ok(Computed::plain(Tensor::from_arc(shape, Arc::new(out))))
}

fn avg_pool1d<E: Element>(x: &Tensor<E>, kernel: usize) -> Result<Computed<E>> {
    let sx = x.shape();
    if sx.len() != 3 {
        return Err(Error::Shape(format!(
            "avg_pool1d: expected (B,C,T), got {sx:?}"
        )));
    }
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::Shape(format!(
            "avg_pool1d: kernel {kernel} must be odd for same padding"
        )));
    }
    let pad = (kernel - 1) / 2;
    let (rows, t_len) = (sx[0] * sx[1], sx[2]);
    let inv_k = E::one() / E::from_f64(kernel as f64);
    let xd = x.data();
    let mut out = vec![E::zero(); xd.len()];
    for r in 0..rows {
        let y_row = &mut out[r * t_len..][..t_len];
        let x_row = &xd[r * t_len..][..t_len];
        for kk in 0..kernel {
            shifted_axpy(y_row, x_row, inv_k, kk as isize - pad as isize);
        }
    }
    Ok(Computed::plain(Tensor::from_arc(
        sx.to_vec(),
        Arc::new(out),
    )))
}

fn concat<E: Element>(inputs: &[&Tensor<E>], axis: usize) -> Result<Computed<E>> {
    if inputs.is_empty() {
        return Err(Error::Shape("concat: no inputs".into()));
    }
    let first = inputs[0].shape();
    if axis >= first.len() {
        return Err(Error::Shape(format!(
            "concat: axis {axis} out of range for shape {first:?}"
        )));
    }
    let mut axis_total = 0;
    for t in inputs {
        let s = t.shape();
        if s.len() != first.len()
            || s.iter()
                .zip(first)
                .enumerate()
                .any(|(i, (a, b))| i != axis && a != b)
        {
            return Err(Error::Shape(format!(
                "concat: shape {s:?} incompatible with {first:?} along axis {axis}"
            )));
        }
        axis_total += s[axis];
    }
    let mut shape = first.to_vec();
    shape[axis] = axis_total;
    let (outer, _, inner) = split_axis(&shape, axis)?;
    let mut out = vec![E::zero(); outer * axis_total * inner];
    let mut offset = 0;
    for t in inputs {
        let len = t.shape()[axis];
        let chunk = len * inner;
        let src = t.data();
        for o in 0..outer {
            let dst = (o * axis_total + offset) * inner;
            out[dst..dst + chunk].copy_from_slice(&src[o * chunk..(o + 1) * chunk]);
        }
        offset += len;
    }
    Ok(Computed::plain(Tensor::from_arc(shape, Arc::new(out))))
}

fn slice<E: Element>(x: &Tensor<E>, axis: usize, start: usize, len: usize) -> Result<Computed<E>> {
    let (outer, axis_len, inner) = split_axis(x.shape(), axis)?;
    if len == 0 || start + len > axis_len {
        return Err(Error::Shape(format!(
            "slice: range {}..{} out of bounds for axis of length {}",
            start,
            start + len,
            axis_len
        )));
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    let xd = x.data();
    let chunk = len * inner;
    let mut out = vec![E::zero(); outer * chunk];
    for o in 0..outer {
        let src = (o * axis_len + start) * inner;
        out[o * chunk..(o + 1) * chunk].copy_from_slice(&xd[src..src + chunk]);
    }
    Ok(Computed::plain(Tensor::from_arc(shape, Arc::new(out))))
}

fn broadcast_to<E: Element>(x: &Tensor<E>, target: &[usize]) -> Result<Computed<E>> {
    let sx = x.shape();
    if sx.len() != target.len()
        || sx
            .iter()
            .zip(target)
            .any(|(&a, &b)| a != b && a != 1)
    {
        return Err(Error::Shape(format!(
            "broadcast_to: cannot broadcast {sx:?} to {target:?}"
        )));
    }
    let xd = x.data();
    let out_numel: usize = target.iter().product();
    let mut out = vec![E::zero(); out_numel];
    let last = target.len() - 1;
    let row = target[last];
    let src_row = sx[last];
    // Row-wise: map each output row prefix to its source row, then copy
    // or splat along the last axis.
    let n_rows = out_numel / row;
    let mut idx = vec![0usize; last];
    for r in 0..n_rows {
        let mut src_base = 0;
        for (d, &i) in idx.iter().enumerate() {
            let src_i = if sx[d] == 1 { 0 } else { i };
            src_base = src_base * sx[d] + src_i;
        }
        src_base *= src_row;
        let dst = &mut out[r * row..(r + 1) * row];
        if src_row == 1 {
            let v = xd[src_base];
            for d in dst.iter_mut() {
                *d = v;
            }
        } else {
            dst.copy_from_slice(&xd[src_base..src_base + row]);
        }
        for d in (0..last).rev() {
            idx[d] += 1;
            if idx[d] < target[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(Computed::plain(Tensor::from_arc(
        target.to_vec(),
        Arc::new(out),
    )))
}

fn reshape<E: Element>(x: &Tensor<E>, shape: &[usize]) -> Result<Computed<E>> {
    let numel: usize = shape.iter().product();
    if numel != x.numel() || shape.iter().any(|&d| d == 0) {
        return Err(Error::Shape(format!(
            "reshape: {:?} ({} elements) cannot become {:?}",
            x.shape(),
            x.numel(),
            shape
        )));
    }
    Ok(Computed::plain(Tensor::from_arc(
        shape.to_vec(),
        x.share_data(),
    )))
}

pub(crate) fn permute_data<E: Element>(
    data: &[E],
    shape: &[usize],
    axes: &[usize],
) -> (Vec<usize>, Vec<E>) {
    let ndim = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut in_strides = vec![1usize; ndim];
    for d in (0..ndim.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let perm_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = vec![E::zero(); data.len()];
    let last_stride = *perm_strides.last().unwrap_or(&1);
    let last_len = *out_shape.last().unwrap_or(&1);
    let n_rows = data.len() / last_len.max(1);
    let mut idx = vec![0usize; ndim.saturating_sub(1)];
    for r in 0..n_rows {
        let mut src = 0;
        for (d, &i) in idx.iter().enumerate() {
            src += i * perm_strides[d];
        }
        let dst = &mut out[r * last_len..(r + 1) * last_len];
        if last_stride == 1 {
            dst.copy_from_slice(&data[src..src + last_len]);
        } else {
            for (j, dv) in dst.iter_mut().enumerate() {
                *dv = data[src + j * last_stride];
            }
        }
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

fn permute<E: Element>(x: &Tensor<E>, axes: &[usize]) -> Result<Computed<E>> {
    let ndim = x.shape().len();
    let mut seen = vec![false; ndim];
    if axes.len() != ndim || axes.iter().any(|&a| a >= ndim || std::mem::replace(&mut seen[a], true))
    {
        return Err(Error::Shape(format!(
            "permute: {axes:?} is not a permutation of 0..{ndim}"
        )));
    }
    let (shape, data) = permute_data(x.data(), x.shape(), axes);
    Ok(Computed::plain(Tensor::from_arc(shape, Arc::new(data))))
}

/// GRU forward over a sequence; see [`PrimOp::GruSeq`] for shapes.
///
/// Gating follows the fused convention: with per-step input
/// pre-activations `(gz, gr, gn)` and recurrent contribution
/// `(hz, hr, hn) = h U`,
///
/// ```text
/// z = sigmoid(gz + hz)
/// r = sigmoid(gr + hr)
/// n = tanh(gn + r * hn)
/// h' = (1 - z) * n + z * h
/// ```
fn gru_seq<E: Element>(gates: &Tensor<E>, u: &Tensor<E>, needs_grad: bool) -> Result<Computed<E>> {
    let (sg, su) = (gates.shape(), u.shape());
    if sg.len() != 3 || sg[1] % 3 != 0 {
        return Err(Error::Shape(format!(
            "gru_seq: gates must be (B, 3C, T), got {sg:?}"
        )));
    }
    let ch = sg[1] / 3;
    if su.len() != 2 || su[0] != ch || su[1] != 3 * ch {
        return Err(Error::Shape(format!(
            "gru_seq: recurrent weight must be ({ch}, {}), got {su:?}",
            3 * ch
        )));
    }
    let (bsz, t_len) = (sg[0], sg[2]);
    let c3 = 3 * ch;
    let gd = gates.data();
    let ud = u.data();

    // Scratch in (T, 3C) per batch entry for contiguous per-step access.
    let mut gates_tc = vec![E::zero(); t_len * c3];
    let mut out = vec![E::zero(); bsz * ch * t_len];
    let saved_len = if needs_grad { bsz * ch * t_len } else { 0 };
    // (B, T, C) layouts, private to the backward rule.
    let mut sv_z = vec![E::zero(); saved_len];
    let mut sv_r = vec![E::zero(); saved_len];
    let mut sv_n = vec![E::zero(); saved_len];
    let mut sv_hn = vec![E::zero(); saved_len];

    let mut h = vec![E::zero(); ch];
    let mut gh = vec![E::zero(); c3];
    for b in 0..bsz {
        let g_blk = &gd[b * c3 * t_len..][..c3 * t_len];
        for c in 0..c3 {
            for t in 0..t_len {
                gates_tc[t * c3 + c] = g_blk[c * t_len + t];
            }
        }
        h.iter_mut().for_each(|v| *v = E::zero());
        for t in 0..t_len {
            let g_t = &gates_tc[t * c3..(t + 1) * c3];
            gh.iter_mut().for_each(|v| *v = E::zero());
            for l in 0..ch {
                let hl = h[l];
                if hl == E::zero() {
                    continue;
                }
                let u_row = &ud[l * c3..(l + 1) * c3];
                for (g, &uv) in gh.iter_mut().zip(u_row) {
                    *g += hl * uv;
                }
            }
            let save_base = (b * t_len + t) * ch;
            for c in 0..ch {
                let z = sigmoid(g_t[c] + gh[c]);
                let r = sigmoid(g_t[ch + c] + gh[ch + c]);
                let hn = gh[2 * ch + c];
                let n = (g_t[2 * ch + c] + r * hn).tanh();
                let h_new = (E::one() - z) * n + z * h[c];
                if needs_grad {
                    sv_z[save_base + c] = z;
                    sv_r[save_base + c] = r;
                    sv_n[save_base + c] = n;
                    sv_hn[save_base + c] = hn;
                }
                h[c] = h_new;
                out[(b * ch + c) * t_len + t] = h_new;
            }
        }
    }
    let saved = if needs_grad {
        vec![
            Arc::new(sv_z),
            Arc::new(sv_r),
            Arc::new(sv_n),
            Arc::new(sv_hn),
        ]
    } else {
        vec![]
    };
    Ok(Computed {
        value: Tensor::from_arc(vec![bsz, ch, t_len], Arc::new(out)),
        saved,
    })
}
