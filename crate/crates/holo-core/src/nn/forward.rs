//! Forward pass over a declarative layer stack.
//!
//! Convolutions run as im2col + GEMM per batch item; batch items are
//! processed in parallel with no cross-item reductions, so results are
//! identical at any thread count. Batch statistics and other explicit
//! reductions accumulate in f64.

use rayon::prelude::*;

use super::params::ParamStore;
use super::spec::{LayerSpec, NetworkSpec, Shape};
use super::tensor::{gemm, Element, Tensor4};
use super::NnError;
use crate::rng::Stream;

/// Keras-convention epsilon inside the batch-norm denominator.
pub const BN_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-layer values saved by `forward` for the matching `backward`.
#[derive(Debug, Clone)]
pub(crate) enum CacheItem<T> {
    None,
    /// The layer's input (Conv2d, Dense, LeakyRelu, Relu).
    Input(Tensor4<T>),
    /// The layer's output (Tanh, Sigmoid).
    Output(Tensor4<T>),
    /// Dropout multiplier per element (train mode only).
    Mask(Vec<T>),
    BatchNorm {
        normalized: Tensor4<T>,
        inv_std: Vec<T>,
        /// Batch statistics (train mode only), for the running update.
        batch_mean: Vec<T>,
        batch_var: Vec<T>,
    },
}

#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub(crate) mode: Mode,
    pub(crate) batch: usize,
    pub(crate) items: Vec<CacheItem<T>>,
}

impl<T: Element> ForwardCache<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Leading zero-padding for stride-1 "same" convolution. Even kernels
/// pad one short on the leading edge and long on the trailing edge.
#[inline]
pub(crate) fn same_pad_begin(kernel: usize) -> usize {
    (kernel - 1) / 2
}

/// Fills `cols` (h*w rows by kernel*kernel*c_in columns, row-major) with
/// the zero-padded receptive fields of batch item `b`.
pub(crate) fn im2col_item<T: Element>(
    input: &Tensor4<T>,
    b: usize,
    kernel: usize,
    cols: &mut [T],
) {
    let (_, h, w, cin) = input.dims();
    let pad = same_pad_begin(kernel);
    let row_len = kernel * kernel * cin;
    let data = input.data();
    let base = b * h * w * cin;
    for i in 0..h {
        for j in 0..w {
            let row = (i * w + j) * row_len;
            for di in 0..kernel {
                let si = (i + di).wrapping_sub(pad);
                for dj in 0..kernel {
                    let sj = (j + dj).wrapping_sub(pad);
                    let dst = row + (di * kernel + dj) * cin;
                    if si < h && sj < w {
                        let src = base + (si * w + sj) * cin;
                        cols[dst..dst + cin].copy_from_slice(&data[src..src + cin]);
                    } else {
                        cols[dst..dst + cin].fill(T::zero());
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward<T: Element>(
    input: &Tensor4<T>,
    weights: &[T],
    bias: &[T],
    filters: usize,
    kernel: usize,
) -> Tensor4<T> {
    let (bsz, h, w, cin) = input.dims();
    let hw = h * w;
    let row_len = kernel * kernel * cin;
    let mut out = Tensor4::zeros((bsz, h, w, filters));
    out.data_mut()
        .par_chunks_mut(hw * filters)
        .enumerate()
        .for_each_init(
            || vec![T::zero(); hw * row_len],
            |cols, (b, out_b)| {
                im2col_item(input, b, kernel, cols);
                gemm(
                    hw,
                    row_len,
                    filters,
                    T::one(),
                    cols,
                    false,
                    weights,
                    false,
                    T::zero(),
                    out_b,
                );
                for r in 0..hw {
                    let off = r * filters;
                    for (f, &bf) in bias.iter().enumerate() {
                        out_b[off + f] = out_b[off + f] + bf;
                    }
                }
            },
        );
    out
}

fn dense_forward<T: Element>(
    input: &Tensor4<T>,
    weights: &[T],
    bias: &[T],
    units: usize,
) -> Tensor4<T> {
    let bsz = input.batch();
    let n_in = input.numel() / bsz;
    let mut out = Tensor4::zeros((bsz, 1, 1, units));
    gemm(
        bsz,
        n_in,
        units,
        T::one(),
        input.data(),
        false,
        weights,
        false,
        T::zero(),
        out.data_mut(),
    );
    for b in 0..bsz {
        let off = b * units;
        let row = &mut out.data_mut()[off..off + units];
        for (y, &bu) in row.iter_mut().zip(bias.iter()) {
            *y = *y + bu;
        }
    }
    out
}

struct BnStats<T> {
    mean: Vec<T>,
    inv_std: Vec<T>,
    var: Vec<T>,
}

fn batch_statistics<T: Element>(input: &Tensor4<T>) -> BnStats<T> {
    let channels = input.dims().3;
    let rows = input.numel() / channels;
    let mut sum = vec![0.0f64; channels];
    let mut sumsq = vec![0.0f64; channels];
    let data = input.data();
    for r in 0..rows {
        let off = r * channels;
        for c in 0..channels {
            let x = data[off + c].as_f64();
            sum[c] += x;
            sumsq[c] += x * x;
        }
    }
    let n = rows as f64;
    let mut mean = Vec::with_capacity(channels);
    let mut var = Vec::with_capacity(channels);
    let mut inv_std = Vec::with_capacity(channels);
    for c in 0..channels {
        let m = sum[c] / n;
        let v = (sumsq[c] / n - m * m).max(0.0);
        mean.push(T::of(m));
        var.push(T::of(v));
        inv_std.push(T::of(1.0 / (v + BN_EPSILON).sqrt()));
    }
    BnStats { mean, inv_std, var }
}

fn batchnorm_forward<T: Element>(
    input: Tensor4<T>,
    params: &[Vec<T>],
    mode: Mode,
) -> (Tensor4<T>, CacheItem<T>) {
    let channels = input.dims().3;
    let rows = input.numel() / channels;
    let (scale, shift) = (&params[0], &params[1]);
    let (mean, inv_std, batch_mean, batch_var) = match mode {
        Mode::Train => {
            let stats = batch_statistics(&input);
            (stats.mean.clone(), stats.inv_std, stats.mean, stats.var)
        }
        Mode::Infer => {
            let inv_std: Vec<T> = params[3]
                .iter()
                .map(|&v| T::of(1.0 / (v.as_f64() + BN_EPSILON).sqrt()))
                .collect();
            (params[2].clone(), inv_std, Vec::new(), Vec::new())
        }
    };
    let mut normalized = input;
    let data = normalized.data_mut();
    let mut out = vec![T::zero(); data.len()];
    for r in 0..rows {
        let off = r * channels;
        for c in 0..channels {
            let xhat = (data[off + c] - mean[c]) * inv_std[c];
            data[off + c] = xhat;
            out[off + c] = scale[c] * xhat + shift[c];
        }
    }
    let dims = normalized.dims();
    (
        Tensor4::from_vec(dims, out),
        CacheItem::BatchNorm {
            normalized,
            inv_std,
            batch_mean,
            batch_var,
        },
    )
}

fn upsample2x_forward<T: Element>(input: &Tensor4<T>) -> Tensor4<T> {
    let (bsz, h, w, c) = input.dims();
    let mut out = Tensor4::zeros((bsz, 2 * h, 2 * w, c));
    let (oh, ow) = (2 * h, 2 * w);
    out.data_mut()
        .par_chunks_mut(oh * ow * c)
        .enumerate()
        .for_each(|(b, out_b)| {
            let src = &input.data()[b * h * w * c..(b + 1) * h * w * c];
            for i in 0..oh {
                for j in 0..ow {
                    let s = ((i / 2) * w + j / 2) * c;
                    let d = (i * ow + j) * c;
                    out_b[d..d + c].copy_from_slice(&src[s..s + c]);
                }
            }
        });
    out
}

fn apply_layer<T: Element>(
    layer: &LayerSpec,
    out_shape: Shape,
    params: &[Vec<T>],
    input: Tensor4<T>,
    mode: Mode,
    rng: &mut Stream,
) -> (Tensor4<T>, CacheItem<T>) {
    match *layer {
        LayerSpec::Input(_) => (input, CacheItem::None),
        LayerSpec::Conv2d { filters, kernel } => {
            let out = conv_forward(&input, &params[0], &params[1], filters, kernel);
            (out, CacheItem::Input(input))
        }
        LayerSpec::Dense { units } => {
            let out = dense_forward(&input, &params[0], &params[1], units);
            (out, CacheItem::Input(input))
        }
        LayerSpec::BatchNorm { .. } => batchnorm_forward(input, params, mode),
        LayerSpec::Dropout { rate } => match mode {
            Mode::Infer => (input, CacheItem::None),
            Mode::Train => {
                let keep_scale = T::of(1.0 / (1.0 - rate));
                let mask: Vec<T> = (0..input.numel())
                    .map(|_| {
                        if rng.next_f64() < rate {
                            T::zero()
                        } else {
                            keep_scale
                        }
                    })
                    .collect();
                let mut out = input;
                for (x, m) in out.data_mut().iter_mut().zip(&mask) {
                    *x = *x * *m;
                }
                (out, CacheItem::Mask(mask))
            }
        },
        LayerSpec::LeakyRelu { slope } => {
            let s = T::of(slope);
            let out = input.map(|x| if x > T::zero() { x } else { s * x });
            (out, CacheItem::Input(input))
        }
        LayerSpec::Relu => {
            let out = input.map(|x| if x > T::zero() { x } else { T::zero() });
            (out, CacheItem::Input(input))
        }
        LayerSpec::Tanh => {
            let out = input.map(|x| x.tanh());
            (out.clone(), CacheItem::Output(out))
        }
        LayerSpec::Sigmoid => {
            let out = input.map(|x| T::one() / (T::one() + (-x).exp()));
            (out.clone(), CacheItem::Output(out))
        }
        LayerSpec::UpSample2x => (upsample2x_forward(&input), CacheItem::None),
        LayerSpec::Flatten | LayerSpec::Reshape(_) => {
            let b = input.batch();
            let out = input.reshaped((b, out_shape.height, out_shape.width, out_shape.channels));
            (out, CacheItem::None)
        }
    }
}

/// Runs the network on `input`, returning the output and the activation
/// cache needed by `backward`. Dropout draws from `rng` in train mode
/// only, one value per element in layer order.
pub fn forward<T: Element>(
    net: &NetworkSpec,
    params: &ParamStore<T>,
    input: &Tensor4<T>,
    mode: Mode,
    rng: &mut Stream,
) -> Result<(Tensor4<T>, ForwardCache<T>), NnError> {
    params.matches(net)?;
    let shapes = net.shapes()?;
    let expected = net.input_shape()?;
    let (b, h, w, c) = input.dims();
    if (h, w, c) != (expected.height, expected.width, expected.channels) {
        return Err(NnError::InputMismatch {
            got: (h, w, c),
            expected: (expected.height, expected.width, expected.channels),
        });
    }
    let mut cache = ForwardCache {
        mode,
        batch: b,
        items: Vec::with_capacity(net.layers.len()),
    };
    let mut current = input.clone();
    for (index, layer) in net.layers.iter().enumerate() {
        let (out, item) =
            apply_layer(layer, shapes[index], params.layer(index), current, mode, rng);
        if !out.all_finite() {
            return Err(NnError::NumericFault {
                index,
                kind: layer.kind().to_string(),
            });
        }
        cache.items.push(item);
        current = out;
    }
    Ok((current, cache))
}

/// Folds the batch statistics recorded in a train-mode cache into the
/// running mean/variance of every batch-norm layer:
/// running <- momentum * running + (1 - momentum) * batch.
pub fn apply_batchnorm_updates<T: Element>(
    net: &NetworkSpec,
    params: &mut ParamStore<T>,
    cache: &ForwardCache<T>,
) -> Result<(), NnError> {
    if cache.items.len() != net.layers.len() {
        return Err(NnError::CacheMismatch(
            "cache length differs from network".to_string(),
        ));
    }
    for (index, layer) in net.layers.iter().enumerate() {
        if let LayerSpec::BatchNorm { momentum } = *layer {
            if let CacheItem::BatchNorm {
                batch_mean,
                batch_var,
                ..
            } = &cache.items[index]
            {
                if batch_mean.is_empty() {
                    return Err(NnError::CacheMismatch(format!(
                        "layer {index}: no batch statistics in an infer-mode cache"
                    )));
                }
                let m = T::of(momentum);
                let one_minus = T::of(1.0 - momentum);
                let arrays = params.layer_mut(index);
                for (r, &b) in arrays[2].iter_mut().zip(batch_mean) {
                    *r = m * *r + one_minus * b;
                }
                for (r, &b) in arrays[3].iter_mut().zip(batch_var) {
                    *r = m * *r + one_minus * b;
                }
            } else {
                return Err(NnError::CacheMismatch(format!(
                    "layer {index}: cache item is not batch-norm"
                )));
            }
        }
    }
    Ok(())
}
