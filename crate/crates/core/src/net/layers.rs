//! Forward and backward kernels for each layer kind.
//!
//! Spatial tensors are `N x C x H x W`. Gradients are derived by hand; the
//! finite-difference checks live in the tests.

use crate::error::{shape_err, Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Probabilities are clamped to this before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

fn dims4(t: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    match t.dims()[..] {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(shape_err!("{what}: expected N x C x H x W, got {:?}", t.dims())),
    }
}

/// Output length of a convolution along one axis; errors unless integral.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(shape_err!("kernel and stride must be >= 1"));
    }
    let span = len + 2 * pad;
    if span < kernel {
        return Err(shape_err!("kernel {kernel} larger than padded input {span}"));
    }
    if !(span - kernel).is_multiple_of(stride) {
        return Err(shape_err!(
            "convolution over {len} (pad {pad}, kernel {kernel}, stride {stride}) is not integral"
        ));
    }
    Ok((span - kernel) / stride + 1)
}

/// Output length of a pooling window along one axis (floor mode).
pub fn pool_out_len(len: usize, kernel: usize, stride: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(shape_err!("kernel and stride must be >= 1"));
    }
    if kernel > len {
        return Err(shape_err!("pooling kernel {kernel} larger than input {len}"));
    }
    Ok((len - kernel) / stride + 1)
}

/// Output positions `o` in `[0, out_len)` whose tap `o*stride + tap - pad` lands inside `[0, len)`.
#[inline]
fn valid_range(len: usize, out_len: usize, tap: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if tap >= pad { 0 } else { (pad - tap).div_ceil(stride) };
    let hi = if len + pad > tap {
        ((len + pad - tap - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

struct ConvGeometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    k: usize,
    ho: usize,
    wo: usize,
}

fn conv_geometry(input: &Tensor, weights: &Tensor, stride: usize, pad: usize) -> Result<ConvGeometry> {
    let (n, c, h, w) = dims4(input, "convolution input")?;
    let (f, wc, k, k2) = dims4(weights, "convolution weights")?;
    if wc != c || k != k2 {
        return Err(shape_err!(
            "weights {:?} do not fit input with {c} channels",
            weights.dims()
        ));
    }
    let ho = conv_out_len(h, k, stride, pad)?;
    let wo = conv_out_len(w, k, stride, pad)?;
    Ok(ConvGeometry { n, c, h, w, f, k, ho, wo })
}

/// `out[n][f][i][j] = bias[f] + sum_{c,u,v} in[n][c][i*s-pad+u][j*s-pad+v] * w[f][c][u][v]`,
/// reading zeros outside the input.
pub fn conv_forward(input: &Tensor, weights: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let g = conv_geometry(input, weights, stride, pad)?;
    if bias.len() != g.f {
        return Err(shape_err!("bias has {} entries for {} filters", bias.len(), g.f));
    }
    let x = input.data();
    let wt = weights.data();
    let mut out = vec![0.0; g.n * g.f * g.ho * g.wo];
    let plane = g.ho * g.wo;
    for n in 0..g.n {
        for f in 0..g.f {
            let o = &mut out[(n * g.f + f) * plane..(n * g.f + f + 1) * plane];
            o.fill(bias.data()[f]);
            for c in 0..g.c {
                let xin = &x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                for u in 0..g.k {
                    let (i0, i1) = valid_range(g.h, g.ho, u, stride, pad);
                    for v in 0..g.k {
                        let wv = wt[((f * g.c + c) * g.k + u) * g.k + v];
                        let (j0, j1) = valid_range(g.w, g.wo, v, stride, pad);
                        for i in i0..i1 {
                            let row = (i * stride + u - pad) * g.w;
                            let orow = &mut o[i * g.wo..(i + 1) * g.wo];
                            for j in j0..j1 {
                                orow[j] += wv * xin[row + j * stride + v - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[g.n, g.f, g.ho, g.wo], out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn conv_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads> {
    let g = conv_geometry(input, weights, stride, pad)?;
    if grad_out.dims() != [g.n, g.f, g.ho, g.wo] {
        return Err(shape_err!(
            "output gradient {:?} does not match convolution output",
            grad_out.dims()
        ));
    }
    let x = input.data();
    let wt = weights.data();
    let dy = grad_out.data();
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; wt.len()];
    let mut db = vec![0.0; g.f];
    let plane = g.ho * g.wo;
    let in_plane = g.h * g.w;
    for n in 0..g.n {
        for f in 0..g.f {
            let dyp = &dy[(n * g.f + f) * plane..(n * g.f + f + 1) * plane];
            db[f] += dyp.iter().sum::<f64>();
            for c in 0..g.c {
                let base = (n * g.c + c) * in_plane;
                for u in 0..g.k {
                    let (i0, i1) = valid_range(g.h, g.ho, u, stride, pad);
                    for v in 0..g.k {
                        let widx = ((f * g.c + c) * g.k + u) * g.k + v;
                        let wv = wt[widx];
                        let (j0, j1) = valid_range(g.w, g.wo, v, stride, pad);
                        let mut acc = 0.0;
                        for i in i0..i1 {
                            let row = base + (i * stride + u - pad) * g.w;
                            let drow = &dyp[i * g.wo..(i + 1) * g.wo];
                            for (j, &d) in drow.iter().enumerate().take(j1).skip(j0) {
                                let xi = row + j * stride + v - pad;
                                acc += d * x[xi];
                                dx[xi] += d * wv;
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_vec(input.dims(), dx)?,
        weights: Tensor::from_vec(weights.dims(), dw)?,
        bias: Tensor::from_vec(&[g.f], db)?,
    })
}

/// Windowed maximum. Returns the pooled tensor and, for every output
/// element, the flat input index it came from (first maximum on ties).
pub fn maxpool_forward(input: &Tensor, kernel: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, h, w) = dims4(input, "pooling input")?;
    let ho = pool_out_len(h, kernel, stride)?;
    let wo = pool_out_len(w, kernel, stride)?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let mut best = base + i * stride * w + j * stride;
                for u in 0..kernel {
                    for v in 0..kernel {
                        let idx = base + (i * stride + u) * w + j * stride + v;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(&[n, c, ho, wo], out)?, argmax))
}

/// Routes each output gradient to the input position recorded in `argmax`.
pub fn maxpool_backward(input_dims: &[usize], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    if argmax.len() != grad_out.len() {
        return Err(shape_err!(
            "{} pooling indices for {} gradients",
            argmax.len(),
            grad_out.len()
        ));
    }
    let mut dx = Tensor::zeros(input_dims)?;
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        d[idx] += g;
    }
    Ok(dx)
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes the gradient where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.dims() != grad_out.dims() {
        return Err(shape_err!("relu gradient {:?} vs input {:?}", grad_out.dims(), input.dims()));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(input.dims(), data)
}

fn flatten(input: &Tensor) -> Result<Tensor> {
    let n = input.dims()[0];
    input.reshape(&[n, input.len() / n])
}

/// `out = flatten(input) * weights + bias`, with `weights` of shape `D x U`.
pub fn inner_product_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let x = flatten(input)?;
    let (d, u) = weights.shape2()?;
    if x.dims()[1] != d {
        return Err(shape_err!(
            "inner product expects {d} inputs per sample, got {}",
            x.dims()[1]
        ));
    }
    if bias.len() != u {
        return Err(shape_err!("bias has {} entries for {u} units", bias.len()));
    }
    let mut out = x.matmul(weights)?;
    for row in out.data_mut().chunks_mut(u) {
        for (o, b) in row.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct InnerProductGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn inner_product_backward(input: &Tensor, weights: &Tensor, grad_out: &Tensor) -> Result<InnerProductGrads> {
    let x = flatten(input)?;
    let (_, u) = weights.shape2()?;
    let dx = grad_out.matmul(&weights.transpose2()?)?.reshape(input.dims())?;
    let dw = x.transpose2()?.matmul(grad_out)?;
    let mut db = vec![0.0; u];
    for row in grad_out.data().chunks(u) {
        for (b, g) in db.iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok(InnerProductGrads {
        input: dx,
        weights: dw,
        bias: Tensor::from_vec(&[u], db)?,
    })
}

/// Inverted dropout. In training mode every element is zeroed with
/// probability `rate` and survivors are scaled by `1/(1-rate)`; the returned
/// mask holds the per-element multiplier. Inference mode is the identity.
pub fn dropout_forward(
    input: &Tensor,
    rate: f64,
    rng: Option<&mut SeededRng>,
) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Parameter(format!("dropout rate {rate} outside [0, 1)")));
    }
    let Some(rng) = rng else {
        return Ok((input.clone(), None));
    };
    let keep_scale = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..input.len())
        .map(|_| if rng.next_f64() < rate { 0.0 } else { keep_scale })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
    Ok((Tensor::from_vec(input.dims(), data)?, Some(mask)))
}

pub fn dropout_backward(mask: Option<&[f64]>, grad_out: &Tensor) -> Result<Tensor> {
    match mask {
        None => Ok(grad_out.clone()),
        Some(m) if m.len() == grad_out.len() => {
            let data = grad_out.data().iter().zip(m).map(|(g, m)| g * m).collect();
            Tensor::from_vec(grad_out.dims(), data)
        }
        Some(m) => Err(shape_err!("dropout mask of {} for {} gradients", m.len(), grad_out.len())),
    }
}

/// Row-wise softmax of an `N x K` tensor, stabilized by subtracting each row's maximum.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (_, k) = logits.shape2()?;
    if k < 2 {
        return Err(shape_err!("softmax needs at least 2 classes, got {k}"));
    }
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of softmax: `dz = p * (dp - <dp, p>)` per row.
pub fn softmax_backward(probs: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let (_, k) = probs.shape2()?;
    if probs.dims() != grad_out.dims() {
        return Err(shape_err!("softmax gradient {:?} vs {:?}", grad_out.dims(), probs.dims()));
    }
    let mut out = Vec::with_capacity(probs.len());
    for (p, g) in probs.data().chunks(k).zip(grad_out.data().chunks(k)) {
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        out.extend(p.iter().zip(g).map(|(pi, gi)| pi * (gi - dot)));
    }
    Tensor::from_vec(probs.dims(), out)
}

fn check_labels(k: usize, n: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != n {
        return Err(shape_err!("{} labels for {n} rows", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Label(format!("label {bad} outside [0, {k})")));
    }
    Ok(())
}

/// Mean negative log-likelihood and its gradient with respect to the
/// softmax inputs, `(p - onehot) / N`.
pub fn cross_entropy_loss(probs: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, k) = probs.shape2()?;
    check_labels(k, n, labels)?;
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for (i, (row, &label)) in grad.data_mut().chunks_mut(k).zip(labels).enumerate() {
        loss -= probs.data()[i * k + label].max(PROB_FLOOR).ln();
        row[label] -= 1.0;
        for g in row.iter_mut() {
            *g /= n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

/// Row-wise argmax; the lowest index wins ties.
pub fn argmax_rows(t: &Tensor) -> Result<Vec<usize>> {
    let (_, k) = t.shape2()?;
    Ok(t.data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

pub fn accuracy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let (n, k) = probs.shape2()?;
    check_labels(k, n, labels)?;
    let preds = argmax_rows(probs)?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / n as f64)
}
