//! Network-oriented fused ops. Spatial tensors use channel-last layout:
//! `[N, H, W, C]` for batches, weights `[Kh, Kw, Cin, Cout]` for dense
//! convolutions and `[Kh, Kw, C]` for depthwise ones.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayD, Ix2, IxDyn};

use crate::{sigmoid_f, Arr, Var};

fn dims4(shape: &[usize]) -> (usize, usize, usize, usize) {
    assert_eq!(shape.len(), 4, "expected 4-D tensor, got {shape:?}");
    (shape[0], shape[1], shape[2], shape[3])
}

/// Lowers one batch item to a `[OH*OW, Kh*Kw*C]` patch matrix (zero padding).
#[allow(clippy::too_many_arguments)]
fn im2col(
    xs: &[f64],
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    stride: (usize, usize),
    pad: (usize, usize),
    oh: usize,
    ow: usize,
) -> Array2<f64> {
    let mut cols = Array2::<f64>::zeros((oh * ow, kh * kw * c));
    let cs = cols.as_slice_mut().unwrap();
    let row_len = kh * kw * c;
    for oy in 0..oh {
        for ox in 0..ow {
            let row = (oy * ow + ox) * row_len;
            for ky in 0..kh {
                let yi = (oy * stride.0 + ky) as isize - pad.0 as isize;
                if yi < 0 || yi >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let xi = (ox * stride.1 + kx) as isize - pad.1 as isize;
                    if xi < 0 || xi >= w as isize {
                        continue;
                    }
                    let src = (yi as usize * w + xi as usize) * c;
                    let dst = row + (ky * kw + kx) * c;
                    cs[dst..dst + c].copy_from_slice(&xs[src..src + c]);
                }
            }
        }
    }
    cols
}

/// Scatters a patch-matrix gradient back onto the input (transpose of im2col).
#[allow(clippy::too_many_arguments)]
fn col2im(
    dcols: &Array2<f64>,
    dxs: &mut [f64],
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    stride: (usize, usize),
    pad: (usize, usize),
    oh: usize,
    ow: usize,
) {
    let ds = dcols.as_slice().unwrap();
    let row_len = kh * kw * c;
    for oy in 0..oh {
        for ox in 0..ow {
            let row = (oy * ow + ox) * row_len;
            for ky in 0..kh {
                let yi = (oy * stride.0 + ky) as isize - pad.0 as isize;
                if yi < 0 || yi >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let xi = (ox * stride.1 + kx) as isize - pad.1 as isize;
                    if xi < 0 || xi >= w as isize {
                        continue;
                    }
                    let dst = (yi as usize * w + xi as usize) * c;
                    let src = row + (ky * kw + kx) * c;
                    for ch in 0..c {
                        dxs[dst + ch] += ds[src + ch];
                    }
                }
            }
        }
    }
}

/// Dense 2-D convolution, channel-last: `[N,H,W,Ci] * [Kh,Kw,Ci,Co] -> [N,OH,OW,Co]`.
pub fn conv2d<'t>(
    x: Var<'t>,
    weight: Var<'t>,
    bias: Option<Var<'t>>,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Var<'t> {
    let tape = x.tape;
    let xv = x.value();
    let wv = weight.value();
    let (n, h, w, ci) = dims4(xv.shape());
    let ws = wv.shape().to_vec();
    assert_eq!(ws.len(), 4, "conv weight must be [Kh,Kw,Ci,Co]");
    let (kh, kw, wci, co) = (ws[0], ws[1], ws[2], ws[3]);
    assert_eq!(ci, wci, "conv input channels {ci} != weight channels {wci}");
    assert!(
        h + 2 * pad.0 >= kh && w + 2 * pad.1 >= kw,
        "conv kernel larger than padded input"
    );
    let oh = (h + 2 * pad.0 - kh) / stride.0 + 1;
    let ow = (w + 2 * pad.1 - kw) / stride.1 + 1;

    let w2 = wv
        .clone()
        .into_shape_with_order((kh * kw * ci, co))
        .unwrap();
    let xs = xv.as_slice().expect("conv input standard layout");
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[n, oh, ow, co]));
    {
        let os = out.as_slice_mut().unwrap();
        for item in 0..n {
            let xi = &xs[item * h * w * ci..(item + 1) * h * w * ci];
            let cols = im2col(xi, h, w, ci, kh, kw, stride, pad, oh, ow);
            let mut out2 = ndarray::ArrayViewMut2::from_shape(
                (oh * ow, co),
                &mut os[item * oh * ow * co..(item + 1) * oh * ow * co],
            )
            .unwrap();
            general_mat_mul(1.0, &cols, &w2, 0.0, &mut out2);
        }
    }
    let (ix, iw) = (x.id, weight.id);
    let ib = bias.map(|b| {
        assert_eq!(b.shape(), vec![co], "conv bias must be [Co]");
        b.id
    });
    if let Some(bid) = ib {
        let bv = tape.value_clone(bid);
        let bs = bv.as_slice().unwrap();
        let os = out.as_slice_mut().unwrap();
        for (i, v) in os.iter_mut().enumerate() {
            *v += bs[i % co];
        }
    }

    tape.push(
        out,
        Some(Box::new(move |vals, _self_id, g, sink| {
            let gs = g.as_slice().expect("grad standard layout");
            let xv = vals.val(ix);
            let xs = xv.as_slice().unwrap();
            let wv = vals.val(iw);
            let w2 = wv
                .clone()
                .into_shape_with_order((kh * kw * ci, co))
                .unwrap();
            let mut dw2 = Array2::<f64>::zeros((kh * kw * ci, co));
            let mut dx = vec![0.0f64; n * h * w * ci];
            for item in 0..n {
                let xi = &xs[item * h * w * ci..(item + 1) * h * w * ci];
                let cols = im2col(xi, h, w, ci, kh, kw, stride, pad, oh, ow);
                let g2 = ndarray::ArrayView2::from_shape(
                    (oh * ow, co),
                    &gs[item * oh * ow * co..(item + 1) * oh * ow * co],
                )
                .unwrap();
                general_mat_mul(1.0, &cols.t(), &g2, 1.0, &mut dw2);
                let mut dcols = Array2::<f64>::zeros((oh * ow, kh * kw * ci));
                general_mat_mul(1.0, &g2, &w2.t(), 0.0, &mut dcols);
                col2im(
                    &dcols,
                    &mut dx[item * h * w * ci..(item + 1) * h * w * ci],
                    h,
                    w,
                    ci,
                    kh,
                    kw,
                    stride,
                    pad,
                    oh,
                    ow,
                );
            }
            sink(
                ix,
                ArrayD::from_shape_vec(IxDyn(&[n, h, w, ci]), dx).unwrap(),
            );
            sink(
                iw,
                dw2.into_shape_with_order(IxDyn(&[kh, kw, ci, co]))
                    .unwrap()
                    .into_dyn(),
            );
            if let Some(bid) = ib {
                let mut db = vec![0.0f64; co];
                for (i, &gv) in gs.iter().enumerate() {
                    db[i % co] += gv;
                }
                sink(bid, ArrayD::from_shape_vec(IxDyn(&[co]), db).unwrap());
            }
        })),
    )
}

/// Depthwise convolution with stride 1 and symmetric zero padding:
/// `[N,H,W,C] * [Kh,Kw,C] -> [N,H,W,C]` when `pad = (Kh/2, Kw/2)`.
pub fn depthwise_conv2d<'t>(
    x: Var<'t>,
    weight: Var<'t>,
    bias: Option<Var<'t>>,
    pad: (usize, usize),
) -> Var<'t> {
    let tape = x.tape;
    let xv = x.value();
    let wv = weight.value();
    let (n, h, w, c) = dims4(xv.shape());
    let ws = wv.shape().to_vec();
    assert_eq!(ws.len(), 3, "depthwise weight must be [Kh,Kw,C]");
    let (kh, kw, wc) = (ws[0], ws[1], ws[2]);
    assert_eq!(c, wc, "depthwise channel mismatch");
    let oh = h + 2 * pad.0 + 1 - kh;
    let ow = w + 2 * pad.1 + 1 - kw;

    let xs = xv.as_slice().unwrap();
    let wsl = wv.as_slice().unwrap();
    let mut out = vec![0.0f64; n * oh * ow * c];
    for item in 0..n {
        for ky in 0..kh {
            for kx in 0..kw {
                let dy = ky as isize - pad.0 as isize;
                let dxo = kx as isize - pad.1 as isize;
                let yo0 = (-dy).max(0) as usize;
                let yo1 = ((h as isize - dy).min(oh as isize)).max(0) as usize;
                let xo0 = (-dxo).max(0) as usize;
                let xo1 = ((w as isize - dxo).min(ow as isize)).max(0) as usize;
                if yo0 >= yo1 || xo0 >= xo1 {
                    continue;
                }
                let wrow = &wsl[(ky * kw + kx) * c..(ky * kw + kx + 1) * c];
                for yo in yo0..yo1 {
                    let yi = (yo as isize + dy) as usize;
                    let ob = ((item * oh + yo) * ow + xo0) * c;
                    let sb = ((item * h + yi) * w + (xo0 as isize + dxo) as usize) * c;
                    let len = (xo1 - xo0) * c;
                    let orow = &mut out[ob..ob + len];
                    let xrow = &xs[sb..sb + len];
                    let mut j = 0;
                    for _ in xo0..xo1 {
                        for (ch, &wv) in wrow.iter().enumerate() {
                            orow[j + ch] += wv * xrow[j + ch];
                        }
                        j += c;
                    }
                }
            }
        }
    }
    let (ix, iw) = (x.id, weight.id);
    let ib = bias.map(|b| {
        assert_eq!(b.shape(), vec![c], "depthwise bias must be [C]");
        b.id
    });
    if let Some(bid) = ib {
        let bv = tape.value_clone(bid);
        let bs = bv.as_slice().unwrap();
        for (i, v) in out.iter_mut().enumerate() {
            *v += bs[i % c];
        }
    }

    tape.push(
        ArrayD::from_shape_vec(IxDyn(&[n, oh, ow, c]), out).unwrap(),
        Some(Box::new(move |vals, _self_id, g, sink| {
            let gs = g.as_slice().unwrap();
            let xv = vals.val(ix);
            let xs = xv.as_slice().unwrap();
            let wv = vals.val(iw);
            let wsl = wv.as_slice().unwrap();
            let mut dx = vec![0.0f64; n * h * w * c];
            let mut dw = vec![0.0f64; kh * kw * c];
            for item in 0..n {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let dy = ky as isize - pad.0 as isize;
                        let dxo = kx as isize - pad.1 as isize;
                        let yo0 = (-dy).max(0) as usize;
                        let yo1 = ((h as isize - dy).min(oh as isize)).max(0) as usize;
                        let xo0 = (-dxo).max(0) as usize;
                        let xo1 = ((w as isize - dxo).min(ow as isize)).max(0) as usize;
                        if yo0 >= yo1 || xo0 >= xo1 {
                            continue;
                        }
                        let wrow = &wsl[(ky * kw + kx) * c..(ky * kw + kx + 1) * c];
                        let dwrow = &mut dw[(ky * kw + kx) * c..(ky * kw + kx + 1) * c];
                        for yo in yo0..yo1 {
                            let yi = (yo as isize + dy) as usize;
                            let ob = ((item * oh + yo) * ow + xo0) * c;
                            let sb = ((item * h + yi) * w + (xo0 as isize + dxo) as usize) * c;
                            let len = (xo1 - xo0) * c;
                            let grow = &gs[ob..ob + len];
                            let xrow = &xs[sb..sb + len];
                            let dxrow = &mut dx[sb..sb + len];
                            let mut j = 0;
                            for _ in xo0..xo1 {
                                for ch in 0..c {
                                    let gv = grow[j + ch];
                                    dxrow[j + ch] += wrow[ch] * gv;
                                    dwrow[ch] += xrow[j + ch] * gv;
                                }
                                j += c;
                            }
                        }
                    }
                }
            }
            sink(
                ix,
                ArrayD::from_shape_vec(IxDyn(&[n, h, w, c]), dx).unwrap(),
            );
            sink(iw, ArrayD::from_shape_vec(IxDyn(&[kh, kw, c]), dw).unwrap());
            if let Some(bid) = ib {
                let mut db = vec![0.0f64; c];
                for (i, &gv) in gs.iter().enumerate() {
                    db[i % c] += gv;
                }
                sink(bid, ArrayD::from_shape_vec(IxDyn(&[c]), db).unwrap());
            }
        })),
    )
}

/// Layer normalization over the last axis with learnable gain and bias.
/// Statistics are per position, so the op is independent of spatial extent.
pub fn layer_norm<'t>(x: Var<'t>, gain: Var<'t>, bias: Var<'t>, eps: f64) -> Var<'t> {
    let tape = x.tape;
    let xv = x.value();
    let shape = xv.shape().to_vec();
    let c = *shape.last().expect("layer_norm needs at least 1 axis");
    assert_eq!(gain.shape(), vec![c], "gain must be [C]");
    assert_eq!(bias.shape(), vec![c], "bias must be [C]");
    let rows = xv.len() / c;
    let xs = xv.as_slice().unwrap();
    let gv = tape.value_clone(gain.id);
    let bv = tape.value_clone(bias.id);
    let gsl = gv.as_slice().unwrap();
    let bsl = bv.as_slice().unwrap();

    let mut out = vec![0.0f64; xv.len()];
    let mut stats = vec![0.0f64; rows * 2]; // (mean, rstd) per row
    for r in 0..rows {
        let row = &xs[r * c..(r + 1) * c];
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        stats[r * 2] = mean;
        stats[r * 2 + 1] = rstd;
        let orow = &mut out[r * c..(r + 1) * c];
        for ch in 0..c {
            orow[ch] = (row[ch] - mean) * rstd * gsl[ch] + bsl[ch];
        }
    }
    let (ix, ig, ib) = (x.id, gain.id, bias.id);
    tape.push(
        ArrayD::from_shape_vec(IxDyn(&shape), out).unwrap(),
        Some(Box::new(move |vals, _self_id, g, sink| {
            let gs = g.as_slice().unwrap();
            let xv = vals.val(ix);
            let xs = xv.as_slice().unwrap();
            let gainv = vals.val(ig);
            let gains = gainv.as_slice().unwrap();
            let mut dx = vec![0.0f64; xs.len()];
            let mut dgain = vec![0.0f64; c];
            let mut dbias = vec![0.0f64; c];
            for r in 0..rows {
                let mean = stats[r * 2];
                let rstd = stats[r * 2 + 1];
                let row = &xs[r * c..(r + 1) * c];
                let grow = &gs[r * c..(r + 1) * c];
                let mut sum_dxh = 0.0;
                let mut sum_dxh_xh = 0.0;
                for ch in 0..c {
                    let xh = (row[ch] - mean) * rstd;
                    let dxh = grow[ch] * gains[ch];
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * xh;
                    dgain[ch] += grow[ch] * xh;
                    dbias[ch] += grow[ch];
                }
                let inv_c = 1.0 / c as f64;
                let dxrow = &mut dx[r * c..(r + 1) * c];
                for ch in 0..c {
                    let xh = (row[ch] - mean) * rstd;
                    let dxh = grow[ch] * gains[ch];
                    dxrow[ch] = rstd * (dxh - inv_c * sum_dxh - xh * inv_c * sum_dxh_xh);
                }
            }
            sink(ix, ArrayD::from_shape_vec(xv.raw_dim(), dx).unwrap());
            sink(ig, ArrayD::from_shape_vec(IxDyn(&[c]), dgain).unwrap());
            sink(ib, ArrayD::from_shape_vec(IxDyn(&[c]), dbias).unwrap());
        })),
    )
}

/// Softmax over the last axis.
pub fn softmax<'t>(x: Var<'t>) -> Var<'t> {
    let tape = x.tape;
    let xv = x.value();
    let shape = xv.shape().to_vec();
    let c = *shape.last().expect("softmax needs at least 1 axis");
    let rows = xv.len() / c;
    let xs = xv.as_slice().unwrap();
    let mut out = vec![0.0f64; xv.len()];
    for r in 0..rows {
        let row = &xs[r * c..(r + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let orow = &mut out[r * c..(r + 1) * c];
        let mut sum = 0.0;
        for ch in 0..c {
            let e = (row[ch] - max).exp();
            orow[ch] = e;
            sum += e;
        }
        for v in orow.iter_mut() {
            *v /= sum;
        }
    }
    let ix = x.id;
    tape.push(
        ArrayD::from_shape_vec(IxDyn(&shape), out).unwrap(),
        Some(Box::new(move |vals, self_id, g, sink| {
            let y = vals.val(self_id);
            let ys = y.as_slice().unwrap();
            let gs = g.as_slice().unwrap();
            let mut dx = vec![0.0f64; ys.len()];
            for r in 0..rows {
                let yrow = &ys[r * c..(r + 1) * c];
                let grow = &gs[r * c..(r + 1) * c];
                let dot: f64 = yrow.iter().zip(grow).map(|(&y, &g)| y * g).sum();
                let dxrow = &mut dx[r * c..(r + 1) * c];
                for ch in 0..c {
                    dxrow[ch] = yrow[ch] * (grow[ch] - dot);
                }
            }
            sink(ix, ArrayD::from_shape_vec(y.raw_dim(), dx).unwrap());
        })),
    )
}

/// Adaptive average pooling of `[N,H,W,C]` to an `(oh, ow)` grid. Targets
/// larger than the input are clamped to the input extent.
pub fn adaptive_avg_pool<'t>(x: Var<'t>, target: (usize, usize)) -> Var<'t> {
    let tape = x.tape;
    let xv = x.value();
    let (n, h, w, c) = dims4(xv.shape());
    let oh = target.0.clamp(1, h);
    let ow = target.1.clamp(1, w);
    let bounds = |i: usize, on: usize, len: usize| -> (usize, usize) {
        let start = i * len / on;
        let end = ((i + 1) * len).div_ceil(on);
        (start, end)
    };
    let xs = xv.as_slice().unwrap();
    let mut out = vec![0.0f64; n * oh * ow * c];
    for item in 0..n {
        for oy in 0..oh {
            let (y0, y1) = bounds(oy, oh, h);
            for ox in 0..ow {
                let (x0, x1) = bounds(ox, ow, w);
                let inv = 1.0 / ((y1 - y0) * (x1 - x0)) as f64;
                let ob = ((item * oh + oy) * ow + ox) * c;
                for yi in y0..y1 {
                    for xi in x0..x1 {
                        let sb = ((item * h + yi) * w + xi) * c;
                        for ch in 0..c {
                            out[ob + ch] += xs[sb + ch] * inv;
                        }
                    }
                }
            }
        }
    }
    let ix = x.id;
    tape.push(
        ArrayD::from_shape_vec(IxDyn(&[n, oh, ow, c]), out).unwrap(),
        Some(Box::new(move |_vals, _self_id, g, sink| {
            let gs = g.as_slice().unwrap();
            let mut dx = vec![0.0f64; n * h * w * c];
            for item in 0..n {
                for oy in 0..oh {
                    let (y0, y1) = bounds(oy, oh, h);
                    for ox in 0..ow {
                        let (x0, x1) = bounds(ox, ow, w);
                        let inv = 1.0 / ((y1 - y0) * (x1 - x0)) as f64;
                        let ob = ((item * oh + oy) * ow + ox) * c;
                        for yi in y0..y1 {
                            for xi in x0..x1 {
                                let sb = ((item * h + yi) * w + xi) * c;
                                for ch in 0..c {
                                    dx[sb + ch] += gs[ob + ch] * inv;
                                }
                            }
                        }
                    }
                }
            }
            sink(
                ix,
                ArrayD::from_shape_vec(IxDyn(&[n, h, w, c]), dx).unwrap(),
            );
        })),
    )
}

/// Numerically stable binary cross-entropy on logits; elementwise, with
/// constant targets. `loss = max(z,0) - z*y + ln(1 + e^{-|z|})`.
pub fn bce_with_logits<'t>(z: Var<'t>, targets: &Arr) -> Var<'t> {
    let tape = z.tape;
    let zv = z.value();
    assert_eq!(zv.shape(), targets.shape(), "logit/target shape mismatch");
    let value = ndarray::Zip::from(&zv)
        .and(targets)
        .map_collect(|&z, &y| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p());
    let iz = z.id;
    let y = targets.clone();
    tape.push(
        value,
        Some(Box::new(move |vals, _self_id, g, sink| {
            let z = vals.val(iz);
            let dz = ndarray::Zip::from(z)
                .and(&y)
                .and(g)
                .map_collect(|&z, &y, &g| (sigmoid_f(z) - y) * g);
            sink(iz, dz);
        })),
    )
}

/// Sorts each column of a `[P, D]` matrix in ascending order. Gradients flow
/// through the sorting permutation.
pub fn sort_columns<'t>(x: Var<'t>) -> Var<'t> {
    let tape = x.tape;
    let xv = x.value();
    let x2 = xv
        .clone()
        .into_dimensionality::<Ix2>()
        .expect("sort_columns expects [P, D]");
    let (p, d) = x2.dim();
    let mut out = Array2::<f64>::zeros((p, d));
    let mut perms: Vec<Vec<u32>> = Vec::with_capacity(d);
    for col in 0..d {
        let mut idx: Vec<u32> = (0..p as u32).collect();
        idx.sort_by(|&a, &b| {
            x2[(a as usize, col)]
                .partial_cmp(&x2[(b as usize, col)])
                .expect("sort_columns requires finite values")
        });
        for (rank, &src) in idx.iter().enumerate() {
            out[(rank, col)] = x2[(src as usize, col)];
        }
        perms.push(idx);
    }
    let ix = x.id;
    tape.push(
        out.into_dyn(),
        Some(Box::new(move |_vals, _self_id, g, sink| {
            let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
            let mut dx = Array2::<f64>::zeros((p, d));
            for (col, perm) in perms.iter().enumerate() {
                for (rank, &src) in perm.iter().enumerate() {
                    dx[(src as usize, col)] += g2[(rank, col)];
                }
            }
            sink(ix, dx.into_dyn());
        })),
    )
}
