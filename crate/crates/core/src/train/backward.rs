//! Reverse-mode gradients of the weighted BCE through the SE-CNN.

use crate::secnn::{ActivationTrace, Conv1d, Dense, Scalar, SeCnn};

fn dense_backward<T: Scalar>(layer: &Dense<T>, x: &[T], dy: &[T], grad: &mut Dense<T>, want_dx: bool) -> Vec<T> {
    let n_out = layer.n_out;
    for (gb, d) in grad.bias.iter_mut().zip(dy) {
        *gb = *gb + *d;
    }
    let mut dx = if want_dx { vec![T::zero(); layer.n_in] } else { Vec::new() };
    for (i, &xi) in x.iter().enumerate() {
        let row = i * n_out..(i + 1) * n_out;
        if xi != T::zero() {
            for (g, d) in grad.kernel[row.clone()].iter_mut().zip(dy) {
                *g = *g + xi * *d;
            }
        }
        if want_dx {
            dx[i] = layer.kernel[row].iter().zip(dy).fold(T::zero(), |acc, (w, d)| acc + *w * *d);
        }
    }
    dx
}

fn conv_backward<T: Scalar>(layer: &Conv1d<T>, x: &[T], len: usize, dz: &[T], grad: &mut Conv1d<T>, want_dx: bool) -> Vec<T> {
    let (cin, cout, pad) = (layer.c_in, layer.c_out, layer.pad());
    let mut dx = if want_dx { vec![T::zero(); len * cin] } else { Vec::new() };
    for t in 0..len {
        let dzt = &dz[t * cout..(t + 1) * cout];
        for (gb, d) in grad.bias.iter_mut().zip(dzt) {
            *gb = *gb + *d;
        }
        if dzt.iter().all(|d| *d == T::zero()) {
            continue;
        }
        for j in 0..layer.kernel_size {
            let Some(src) = (t + j).checked_sub(pad).filter(|&s| s < len) else { continue };
            for ci in 0..cin {
                let row = (j * cin + ci) * cout..(j * cin + ci + 1) * cout;
                let xv = x[src * cin + ci];
                if xv != T::zero() {
                    for (g, d) in grad.kernel[row.clone()].iter_mut().zip(dzt) {
                        *g = *g + xv * *d;
                    }
                }
                if want_dx {
                    let s = layer.kernel[row].iter().zip(dzt).fold(T::zero(), |acc, (w, d)| acc + *w * *d);
                    dx[src * cin + ci] = dx[src * cin + ci] + s;
                }
            }
        }
    }
    dx
}

fn relu_mask<T: Scalar>(pre: &[T], upstream: &mut [T]) {
    for (u, p) in upstream.iter_mut().zip(pre) {
        if *p <= T::zero() {
            *u = T::zero();
        }
    }
}

/// Accumulate into `grads` the gradient of `dlogit * logit(x)` for one
/// example, given the forward `trace` of that example. For weighted BCE on a
/// sigmoid output, `dlogit = w_y * (p - y)` (scaled by `1/batch`).
pub fn backward_from_logit<T: Scalar>(model: &SeCnn<T>, trace: &ActivationTrace<T>, dlogit: T, grads: &mut SeCnn<T>) {
    let dh2 = dense_backward(&model.output, &trace.dense2, &[dlogit], &mut grads.output, true);

    let mut dz2 = dh2;
    relu_mask(&trace.dense2_pre, &mut dz2);
    let mut dh1 = dense_backward(&model.dense2, &trace.dense1_dropped, &dz2, &mut grads.dense2, true);
    if let Some(mask) = &trace.dropout_mask {
        for (d, m) in dh1.iter_mut().zip(mask) {
            *d = *d * *m;
        }
    }
    relu_mask(&trace.dense1_pre, &mut dh1);
    let mut upstream = dense_backward(&model.dense1, &trace.flat, &dh1, &mut grads.dense1, true);

    for (bi, (block, bt)) in model.blocks.iter().zip(&trace.blocks).enumerate().rev() {
        let gblock = &mut grads.blocks[bi];
        let c = block.conv.c_out;
        let len = bt.len;

        // max-pool: route to the recorded argmax
        let mut d_gated = vec![T::zero(); len * c];
        for (d, &idx) in upstream.iter().zip(&bt.argmax) {
            d_gated[idx] = d_gated[idx] + *d;
        }

        // SE gate: out[t][c] = a[t][c] * g[c]
        let se = &bt.se;
        let mut da = vec![T::zero(); len * c];
        let mut dgate = vec![T::zero(); c];
        for i in 0..len * c {
            let ch = i % c;
            da[i] = d_gated[i] * se.gate[ch];
            dgate[ch] = dgate[ch] + d_gated[i] * bt.conv_act[i];
        }
        let du: Vec<T> = dgate.iter().zip(&se.gate).map(|(d, g)| *d * *g * (T::one() - *g)).collect();
        let mut dh = dense_backward(&block.se.excite, &se.hidden, &du, &mut gblock.se.excite, true);
        relu_mask(&se.hidden_pre, &mut dh);
        let ds = dense_backward(&block.se.squeeze, &se.squeezed, &dh, &mut gblock.se.squeeze, true);
        let inv_len = T::one() / T::lit(len as f64);
        for i in 0..len * c {
            da[i] = da[i] + ds[i % c] * inv_len;
        }

        relu_mask(&bt.conv_pre, &mut da);
        upstream = conv_backward(&block.conv, &bt.input, len, &da, &mut gblock.conv, bi > 0);
    }
}
