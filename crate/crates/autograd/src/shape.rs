//! Movement and shape ops: reshape, permute, slice, concat, flip, roll,
//! repeat and bilinear resampling. All are linear maps, so their backward
//! passes are the corresponding transposed scatter/gather.

use ndarray::{concatenate, ArrayD, ArrayViewD, Axis, IxDyn, Slice};

use crate::{Arr, BackFn, Var};

impl<'t> Var<'t> {
    /// Reinterprets the tensor with a new shape (same element count, row-major
    /// order preserved).
    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let in_shape = self.shape();
        assert_eq!(
            in_shape.iter().product::<usize>(),
            shape.iter().product::<usize>(),
            "reshape element count mismatch: {in_shape:?} -> {shape:?}"
        );
        let value = self
            .tape
            .with_value(self.id, |v| reshape_any(&v.view(), shape));
        let id = self.id;
        let in_shape_back = in_shape.clone();
        self.tape.push(
            value,
            Some(Box::new(move |_vals, _self_id, g, sink| {
                sink(id, reshape_any(&g.view(), &in_shape_back));
            })),
        )
    }

    /// Permutes axes; the result is materialized in standard layout.
    pub fn permute(self, axes: &[usize]) -> Var<'t> {
        let value = self.tape.with_value(self.id, |v| {
            v.view()
                .permuted_axes(axes.to_vec())
                .as_standard_layout()
                .to_owned()
        });
        let mut inverse = vec![0usize; axes.len()];
        for (i, &ax) in axes.iter().enumerate() {
            inverse[ax] = i;
        }
        let id = self.id;
        self.tape.push(
            value,
            Some(Box::new(move |_vals, _self_id, g, sink| {
                sink(
                    id,
                    g.view()
                        .permuted_axes(inverse.clone())
                        .as_standard_layout()
                        .to_owned(),
                );
            })),
        )
    }

    /// Extracts a rectangular region, `(start, len)` per axis.
    pub fn slice(self, ranges: &[(usize, usize)]) -> Var<'t> {
        let in_shape = self.shape();
        assert_eq!(ranges.len(), in_shape.len(), "slice must cover every axis");
        for (ax, &(start, len)) in ranges.iter().enumerate() {
            assert!(
                start + len <= in_shape[ax] && len > 0,
                "slice range {start}+{len} out of bounds for axis {ax} of size {}",
                in_shape[ax]
            );
        }
        let value = self.tape.with_value(self.id, |v| {
            let mut view = v.view();
            for (ax, &(start, len)) in ranges.iter().enumerate() {
                view.slice_axis_inplace(Axis(ax), Slice::from(start..start + len));
            }
            view.as_standard_layout().to_owned()
        });
        let id = self.id;
        let ranges = ranges.to_vec();
        self.tape.push(
            value,
            Some(Box::new(move |_vals, _self_id, g, sink| {
                let mut out = ArrayD::zeros(IxDyn(&in_shape));
                let mut view = out.view_mut();
                for (ax, &(start, len)) in ranges.iter().enumerate() {
                    view.slice_axis_inplace(Axis(ax), Slice::from(start..start + len));
                }
                view.assign(g);
                sink(id, out);
            })),
        )
    }

    /// Reverses the order of elements along one axis.
    pub fn flip(self, axis: usize) -> Var<'t> {
        let value = self.tape.with_value(self.id, |v| {
            v.slice_axis(Axis(axis), Slice::new(0, None, -1))
                .as_standard_layout()
                .to_owned()
        });
        let id = self.id;
        self.tape.push(
            value,
            Some(Box::new(move |_vals, _self_id, g, sink| {
                sink(
                    id,
                    g.slice_axis(Axis(axis), Slice::new(0, None, -1))
                        .as_standard_layout()
                        .to_owned(),
                );
            })),
        )
    }

    /// Circularly shifts elements along one axis: `out[i] = in[(i - shift) mod n]`.
    pub fn roll(self, axis: usize, shift: isize) -> Var<'t> {
        let value = self
            .tape
            .with_value(self.id, |v| roll_array(&v.view(), axis, shift));
        let id = self.id;
        self.tape.push(
            value,
            Some(Box::new(move |_vals, _self_id, g, sink| {
                sink(id, roll_array(&g.view(), axis, -shift));
            })),
        )
    }

    /// Tiles the tensor `k` times along one axis.
    pub fn repeat_axis(self, axis: usize, k: usize) -> Var<'t> {
        assert!(k >= 1, "repeat count must be at least 1");
        if k == 1 {
            // still record a node so the op is uniform for callers
            return self.slice(&self.shape().iter().map(|&s| (0, s)).collect::<Vec<_>>());
        }
        let in_len = self.shape()[axis];
        let value = self.tape.with_value(self.id, |v| {
            let views: Vec<ArrayViewD<'_, f64>> = (0..k).map(|_| v.view()).collect();
            standardize(concatenate(Axis(axis), &views).expect("repeat concat"))
        });
        let id = self.id;
        self.tape.push(
            value,
            Some(Box::new(move |_vals, _self_id, g, sink| {
                let mut acc: Option<Arr> = None;
                for i in 0..k {
                    let part = g
                        .slice_axis(Axis(axis), Slice::from(i * in_len..(i + 1) * in_len))
                        .to_owned();
                    match &mut acc {
                        Some(a) => *a += &part,
                        slot => *slot = Some(part),
                    }
                }
                sink(id, acc.unwrap());
            })),
        )
    }

    /// Bilinear resize of an `[H, W, C]` tensor (corner-aligned sampling).
    pub fn resize_bilinear(self, oh: usize, ow: usize) -> Var<'t> {
        let in_shape = self.shape();
        assert_eq!(in_shape.len(), 3, "resize_bilinear expects [H, W, C]");
        let (h, w, c) = (in_shape[0], in_shape[1], in_shape[2]);
        assert!(oh > 0 && ow > 0, "resize target must be non-empty");
        let value = self
            .tape
            .with_value(self.id, |v| bilinear_resize_array(v, oh, ow));
        let id = self.id;
        self.tape.push(
            value,
            Some(Box::new(move |_vals, _self_id, g, sink| {
                let mut out = ArrayD::zeros(IxDyn(&[h, w, c]));
                {
                    let gs = g.as_slice().expect("grad standard layout");
                    let os = out.as_slice_mut().unwrap();
                    for oy in 0..oh {
                        let (y0, y1, fy) = sample_coords(oy, oh, h);
                        for ox in 0..ow {
                            let (x0, x1, fx) = sample_coords(ox, ow, w);
                            let base = (oy * ow + ox) * c;
                            let w00 = (1.0 - fy) * (1.0 - fx);
                            let w01 = (1.0 - fy) * fx;
                            let w10 = fy * (1.0 - fx);
                            let w11 = fy * fx;
                            for ch in 0..c {
                                let gv = gs[base + ch];
                                os[(y0 * w + x0) * c + ch] += w00 * gv;
                                os[(y0 * w + x1) * c + ch] += w01 * gv;
                                os[(y1 * w + x0) * c + ch] += w10 * gv;
                                os[(y1 * w + x1) * c + ch] += w11 * gv;
                            }
                        }
                    }
                }
                sink(id, out);
            })),
        )
    }
}

/// Concatenates tensors along one axis.
pub fn concat<'t>(axis: usize, parts: &[Var<'t>]) -> Var<'t> {
    assert!(!parts.is_empty(), "concat needs at least one part");
    let tape = parts[0].tape;
    let values: Vec<Arr> = parts.iter().map(|p| p.value()).collect();
    let views: Vec<ArrayViewD<'_, f64>> = values.iter().map(|v| v.view()).collect();
    let value = standardize(concatenate(Axis(axis), &views).expect("concat shape mismatch"));
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
    let back: BackFn = Box::new(move |_vals, _self_id, g, sink| {
        let mut offset = 0usize;
        for (&id, &len) in ids.iter().zip(&lens) {
            let part = g
                .slice_axis(Axis(axis), Slice::from(offset..offset + len))
                .as_standard_layout()
                .to_owned();
            sink(id, part);
            offset += len;
        }
    });
    tape.push(value, Some(back))
}

/// Reshapes a view of any memory layout by materializing row-major order.
fn reshape_any(v: &ArrayViewD<'_, f64>, shape: &[usize]) -> Arr {
    v.as_standard_layout()
        .into_owned()
        .into_shape_with_order(IxDyn(shape))
        .expect("reshape")
}

/// Circular shift of a raw array (shared by forward and backward).
pub fn roll_array(v: &ArrayViewD<'_, f64>, axis: usize, shift: isize) -> Arr {
    let n = v.shape()[axis] as isize;
    if n == 0 {
        return v.to_owned();
    }
    let s = shift.rem_euclid(n);
    if s == 0 {
        return v.as_standard_layout().to_owned();
    }
    // out[i] = in[(i - s) mod n]: head of out comes from tail of in
    let tail = v.slice_axis(Axis(axis), Slice::from(n - s..));
    let head = v.slice_axis(Axis(axis), Slice::from(..n - s));
    standardize(concatenate(Axis(axis), &[tail, head]).unwrap())
}

/// Materializes an array in row-major layout if it is not already.
fn standardize(a: Arr) -> Arr {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Corner-aligned source coordinates for 1-D bilinear sampling.
pub fn sample_coords(oi: usize, on: usize, n: usize) -> (usize, usize, f64) {
    if on <= 1 || n <= 1 {
        return (0, 0, 0.0);
    }
    let pos = oi as f64 * (n - 1) as f64 / (on - 1) as f64;
    let i0 = pos.floor() as usize;
    let i0 = i0.min(n - 2);
    (i0, i0 + 1, pos - i0 as f64)
}

/// Corner-aligned bilinear resize of an `[H, W, C]` tensor.
pub fn bilinear_resize_array(v: &Arr, oh: usize, ow: usize) -> Arr {
    assert_eq!(v.ndim(), 3, "bilinear_resize_array expects [H, W, C]");
    let (h, w, c) = (v.shape()[0], v.shape()[1], v.shape()[2]);
    let contiguous = v.as_standard_layout();
    let src = contiguous
        .as_slice()
        .expect("standard layout is contiguous");
    let mut out = vec![0.0f64; oh * ow * c];
    for oy in 0..oh {
        let (y0, y1, fy) = sample_coords(oy, oh, h);
        for ox in 0..ow {
            let (x0, x1, fx) = sample_coords(ox, ow, w);
            let w00 = (1.0 - fy) * (1.0 - fx);
            let w01 = (1.0 - fy) * fx;
            let w10 = fy * (1.0 - fx);
            let w11 = fy * fx;
            let base = (oy * ow + ox) * c;
            for ch in 0..c {
                out[base + ch] = w00 * src[(y0 * w + x0) * c + ch]
                    + w01 * src[(y0 * w + x1) * c + ch]
                    + w10 * src[(y1 * w + x0) * c + ch]
                    + w11 * src[(y1 * w + x1) * c + ch];
            }
        }
    }
    ArrayD::from_shape_vec(IxDyn(&[oh, ow, c]), out).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;
    use ndarray::arr1;

    #[test]
    fn roll_shifts_and_wraps() {
        let tape = Tape::new();
        let x = tape.leaf(arr1(&[1.0, 2.0, 3.0, 4.0]).into_dyn());
        let y = x.roll(0, 1);
        assert_eq!(y.value(), arr1(&[4.0, 1.0, 2.0, 3.0]).into_dyn());
        let z = x.roll(0, -1);
        assert_eq!(z.value(), arr1(&[2.0, 3.0, 4.0, 1.0]).into_dyn());
    }

    #[test]
    fn repeat_axis_tiles_and_folds_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(arr1(&[1.0, 2.0]).into_dyn());
        let y = x.repeat_axis(0, 3);
        assert_eq!(y.value(), arr1(&[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).into_dyn());
        let grads = tape.backward(y.sum_all());
        assert_eq!(grads.wrt(x).unwrap(), &arr1(&[3.0, 3.0]).into_dyn());
    }

    #[test]
    fn resize_identity_is_exact() {
        let tape = Tape::new();
        let v: Vec<f64> = (0..4 * 5 * 3).map(|i| i as f64 * 0.01).collect();
        let x = tape.leaf(ArrayD::from_shape_vec(IxDyn(&[4, 5, 3]), v).unwrap());
        let y = x.resize_bilinear(4, 5);
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn slice_backward_scatters_into_place() {
        let tape = Tape::new();
        let x = tape.leaf(arr1(&[1.0, 2.0, 3.0, 4.0]).into_dyn());
        let y = x.slice(&[(1, 2)]).sum_all();
        let grads = tape.backward(y);
        assert_eq!(
            grads.wrt(x).unwrap(),
            &arr1(&[0.0, 1.0, 1.0, 0.0]).into_dyn()
        );
    }
}
