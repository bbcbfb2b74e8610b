//! Reverse-mode gradients through a cached forward pass.
//!
//! Weight gradients accumulate through sequential per-item GEMMs (fixed
//! order) and explicit f64 sums, so a backward pass is bitwise
//! reproducible at any thread count. Only the input gradient fans out
//! across batch items in parallel.

use rayon::prelude::*;

use super::forward::{same_pad_begin, CacheItem, ForwardCache, Mode};
use super::params::{Gradients, ParamStore};
use super::spec::{LayerSpec, NetworkSpec};
use super::tensor::{gemm, Element, Tensor4};
use super::NnError;

/// Scatter-adds receptive-field gradients back onto the input image.
fn col2im_add<T: Element>(
    dcols: &[T],
    h: usize,
    w: usize,
    cin: usize,
    kernel: usize,
    dinput_b: &mut [T],
) {
    let pad = same_pad_begin(kernel);
    let row_len = kernel * kernel * cin;
    for i in 0..h {
        for j in 0..w {
            let row = (i * w + j) * row_len;
            for di in 0..kernel {
                let si = (i + di).wrapping_sub(pad);
                if si >= h {
                    continue;
                }
                for dj in 0..kernel {
                    let sj = (j + dj).wrapping_sub(pad);
                    if sj >= w {
                        continue;
                    }
                    let src = row + (di * kernel + dj) * cin;
                    let dst = (si * w + sj) * cin;
                    for c in 0..cin {
                        dinput_b[dst + c] = dinput_b[dst + c] + dcols[src + c];
                    }
                }
            }
        }
    }
}

fn conv_backward<T: Element>(
    input: &Tensor4<T>,
    weights: &[T],
    filters: usize,
    kernel: usize,
    dout: &Tensor4<T>,
) -> (Vec<T>, Vec<T>, Tensor4<T>) {
    let (bsz, h, w, cin) = input.dims();
    let hw = h * w;
    let row_len = kernel * kernel * cin;

    // Bias gradient: plain f64 sums per filter.
    let mut db_acc = vec![0.0f64; filters];
    for r in 0..bsz * hw {
        let off = r * filters;
        for (f, acc) in db_acc.iter_mut().enumerate() {
            *acc += dout.data()[off + f].as_f64();
        }
    }
    let db: Vec<T> = db_acc.into_iter().map(T::of).collect();

    // Weight gradient: dW += cols_b^T * dout_b, batch items in order.
    let mut dw = vec![T::zero(); row_len * filters];
    let mut cols = vec![T::zero(); hw * row_len];
    for b in 0..bsz {
        super::forward::im2col_item(input, b, kernel, &mut cols);
        let dout_b = &dout.data()[b * hw * filters..(b + 1) * hw * filters];
        gemm(
            row_len,
            hw,
            filters,
            T::one(),
            &cols,
            true,
            dout_b,
            false,
            T::one(),
            &mut dw,
        );
    }

    // Input gradient: dcols_b = dout_b * W^T, scattered back per item.
    let mut dinput = Tensor4::zeros((bsz, h, w, cin));
    dinput
        .data_mut()
        .par_chunks_mut(hw * cin)
        .enumerate()
        .for_each_init(
            || vec![T::zero(); hw * row_len],
            |dcols, (b, dinput_b)| {
                let dout_b = &dout.data()[b * hw * filters..(b + 1) * hw * filters];
                gemm(
                    hw,
                    filters,
                    row_len,
                    T::one(),
                    dout_b,
                    false,
                    weights,
                    true,
                    T::zero(),
                    dcols,
                );
                col2im_add(dcols, h, w, cin, kernel, dinput_b);
            },
        );
    (dw, db, dinput)
}

fn dense_backward<T: Element>(
    input: &Tensor4<T>,
    weights: &[T],
    units: usize,
    dout: &Tensor4<T>,
) -> (Vec<T>, Vec<T>, Tensor4<T>) {
    let bsz = input.batch();
    let n_in = input.numel() / bsz;

    let mut dw = vec![T::zero(); n_in * units];
    gemm(
        n_in,
        bsz,
        units,
        T::one(),
        input.data(),
        true,
        dout.data(),
        false,
        T::zero(),
        &mut dw,
    );

    let mut db_acc = vec![0.0f64; units];
    for b in 0..bsz {
        let off = b * units;
        for (u, acc) in db_acc.iter_mut().enumerate() {
            *acc += dout.data()[off + u].as_f64();
        }
    }
    let db: Vec<T> = db_acc.into_iter().map(T::of).collect();

    let mut dinput = Tensor4::zeros(input.dims());
    gemm(
        bsz,
        units,
        n_in,
        T::one(),
        dout.data(),
        false,
        weights,
        true,
        T::zero(),
        dinput.data_mut(),
    );
    (dw, db, dinput)
}

fn batchnorm_backward<T: Element>(
    normalized: &Tensor4<T>,
    inv_std: &[T],
    scale: &[T],
    mode: Mode,
    dout: &Tensor4<T>,
) -> (Vec<T>, Vec<T>, Tensor4<T>) {
    let channels = normalized.dims().3;
    let rows = normalized.numel() / channels;
    let mut sum_dy = vec![0.0f64; channels];
    let mut sum_dy_xhat = vec![0.0f64; channels];
    for r in 0..rows {
        let off = r * channels;
        for c in 0..channels {
            let dy = dout.data()[off + c].as_f64();
            sum_dy[c] += dy;
            sum_dy_xhat[c] += dy * normalized.data()[off + c].as_f64();
        }
    }
    let dscale: Vec<T> = sum_dy_xhat.iter().map(|&x| T::of(x)).collect();
    let dshift: Vec<T> = sum_dy.iter().map(|&x| T::of(x)).collect();

    let mut dinput = Tensor4::zeros(normalized.dims());
    match mode {
        Mode::Train => {
            let n = rows as f64;
            let mean_dy: Vec<T> = sum_dy.iter().map(|&x| T::of(x / n)).collect();
            let mean_dy_xhat: Vec<T> = sum_dy_xhat.iter().map(|&x| T::of(x / n)).collect();
            for r in 0..rows {
                let off = r * channels;
                for c in 0..channels {
                    let dy = dout.data()[off + c];
                    let xhat = normalized.data()[off + c];
                    dinput.data_mut()[off + c] =
                        scale[c] * inv_std[c] * (dy - mean_dy[c] - xhat * mean_dy_xhat[c]);
                }
            }
        }
        Mode::Infer => {
            for r in 0..rows {
                let off = r * channels;
                for c in 0..channels {
                    dinput.data_mut()[off + c] = dout.data()[off + c] * scale[c] * inv_std[c];
                }
            }
        }
    }
    (dscale, dshift, dinput)
}

fn upsample2x_backward<T: Element>(dout: &Tensor4<T>, h: usize, w: usize) -> Tensor4<T> {
    let (bsz, oh, ow, c) = dout.dims();
    debug_assert_eq!((oh, ow), (2 * h, 2 * w));
    let mut dinput = Tensor4::zeros((bsz, h, w, c));
    dinput
        .data_mut()
        .par_chunks_mut(h * w * c)
        .enumerate()
        .for_each(|(b, din_b)| {
            let src = &dout.data()[b * oh * ow * c..(b + 1) * oh * ow * c];
            for i in 0..oh {
                for j in 0..ow {
                    let s = (i * ow + j) * c;
                    let d = ((i / 2) * w + j / 2) * c;
                    for ch in 0..c {
                        din_b[d + ch] = din_b[d + ch] + src[s + ch];
                    }
                }
            }
        });
    dinput
}

/// Propagates `grad_output` back through a forward cache, returning the
/// parameter gradients and the gradient with respect to the input.
pub fn backward<T: Element>(
    net: &NetworkSpec,
    params: &ParamStore<T>,
    cache: &ForwardCache<T>,
    grad_output: &Tensor4<T>,
) -> Result<(Gradients<T>, Tensor4<T>), NnError> {
    params.matches(net)?;
    if cache.items.len() != net.layers.len() {
        return Err(NnError::CacheMismatch(format!(
            "cache has {} items, network {} layers",
            cache.items.len(),
            net.layers.len()
        )));
    }
    let shapes = net.shapes()?;
    let last = *shapes.last().unwrap();
    let (b, h, w, c) = grad_output.dims();
    if b != cache.batch || (h, w, c) != (last.height, last.width, last.channels) {
        return Err(NnError::CacheMismatch(format!(
            "gradient dims {:?} do not match network output ({}, {:?})",
            grad_output.dims(),
            cache.batch,
            last
        )));
    }

    let mut grads = Gradients::zeros_like(params);
    let mut current = grad_output.clone();
    for index in (0..net.layers.len()).rev() {
        let layer = &net.layers[index];
        let item = &cache.items[index];
        let in_shape = if index == 0 {
            net.input_shape()?
        } else {
            shapes[index - 1]
        };
        current = match (layer, item) {
            (LayerSpec::Input(_), _) => current,
            (&LayerSpec::Conv2d { filters, kernel }, CacheItem::Input(input)) => {
                let (dw, db, dinput) =
                    conv_backward(input, &params.layer(index)[0], filters, kernel, &current);
                grads.arrays[index][0] = dw;
                grads.arrays[index][1] = db;
                dinput
            }
            (&LayerSpec::Dense { units }, CacheItem::Input(input)) => {
                let (dw, db, dinput) =
                    dense_backward(input, &params.layer(index)[0], units, &current);
                grads.arrays[index][0] = dw;
                grads.arrays[index][1] = db;
                dinput
            }
            (
                LayerSpec::BatchNorm { .. },
                CacheItem::BatchNorm {
                    normalized,
                    inv_std,
                    ..
                },
            ) => {
                let (dscale, dshift, dinput) = batchnorm_backward(
                    normalized,
                    inv_std,
                    &params.layer(index)[0],
                    cache.mode,
                    &current,
                );
                grads.arrays[index][0] = dscale;
                grads.arrays[index][1] = dshift;
                dinput
            }
            (LayerSpec::Dropout { .. }, CacheItem::Mask(mask)) => {
                let mut d = current;
                for (g, m) in d.data_mut().iter_mut().zip(mask) {
                    *g = *g * *m;
                }
                d
            }
            (LayerSpec::Dropout { .. }, CacheItem::None) => current, // infer mode
            (&LayerSpec::LeakyRelu { slope }, CacheItem::Input(input)) => {
                let s = T::of(slope);
                let mut d = current;
                for (g, &x) in d.data_mut().iter_mut().zip(input.data()) {
                    if x <= T::zero() {
                        *g = *g * s;
                    }
                }
                d
            }
            (LayerSpec::Relu, CacheItem::Input(input)) => {
                let mut d = current;
                for (g, &x) in d.data_mut().iter_mut().zip(input.data()) {
                    if x <= T::zero() {
                        *g = T::zero();
                    }
                }
                d
            }
            (LayerSpec::Tanh, CacheItem::Output(out)) => {
                let mut d = current;
                for (g, &y) in d.data_mut().iter_mut().zip(out.data()) {
                    *g = *g * (T::one() - y * y);
                }
                d
            }
            (LayerSpec::Sigmoid, CacheItem::Output(out)) => {
                let mut d = current;
                for (g, &y) in d.data_mut().iter_mut().zip(out.data()) {
                    *g = *g * y * (T::one() - y);
                }
                d
            }
            (LayerSpec::UpSample2x, CacheItem::None) => {
                upsample2x_backward(&current, in_shape.height, in_shape.width)
            }
            (LayerSpec::Flatten | LayerSpec::Reshape(_), CacheItem::None) => current.reshaped((
                cache.batch,
                in_shape.height,
                in_shape.width,
                in_shape.channels,
            )),
            _ => {
                return Err(NnError::CacheMismatch(format!(
                    "layer {index} ({}) has an incompatible cache item",
                    layer.kind()
                )))
            }
        };
    }
    Ok((grads, current))
}
