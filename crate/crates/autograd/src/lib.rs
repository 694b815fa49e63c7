//! Tape-based reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles; calling
//! [`Tape::backward`] on a scalar result walks the recording in reverse and
//! accumulates gradients for every recorded node. The operation set is small
//! and geared towards convolutional networks and differentiable image
//! processing: elementwise arithmetic with NumPy-style broadcasting,
//! reductions, matrix products, 2-D convolutions, normalization, softmax,
//! bilinear resampling and a handful of movement ops.
//!
//! All values are dense row-major `f64` arrays ([`Arr`]). Shape errors are
//! programming errors and panic; fallible domain logic is expected to
//! validate its inputs before touching the tape.
//!
//! ```
//! use ndarray::arr1;
//! use textile_autograd::Tape;
//!
//! let tape = Tape::new();
//! let x = tape.leaf(arr1(&[1.0, 2.0, 3.0]).into_dyn());
//! let y = x.mul(x).sum_all(); // y = Σ x²
//! let grads = tape.backward(y);
//! assert_eq!(grads.wrt(x).unwrap()[[0]], 2.0);
//! ```

use std::cell::RefCell;

use ndarray::{ArrayD, Axis, IxDyn};

mod nn;
mod shape;

pub use nn::*;
pub use shape::*;

/// Dense dynamic-dimensional tensor used throughout the engine.
pub type Arr = ArrayD<f64>;

/// Builds a 0-d (scalar) tensor.
pub fn scalar(v: f64) -> Arr {
    ArrayD::from_elem(IxDyn(&[]), v)
}

/// Extracts the value of a 0-d or single-element tensor.
pub fn scalar_value(a: &Arr) -> f64 {
    assert_eq!(
        a.len(),
        1,
        "expected single-element tensor, got shape {:?}",
        a.shape()
    );
    *a.iter().next().unwrap()
}

pub(crate) type Sink<'s> = &'s mut dyn FnMut(usize, Arr);
pub(crate) type BackFn = Box<dyn Fn(&Values<'_>, usize, &Arr, Sink<'_>)>;

pub(crate) struct Node {
    value: Arr,
    back: Option<BackFn>,
}

/// Read-only view of all recorded node values, passed to backward closures.
pub struct Values<'a> {
    nodes: &'a [Node],
}

impl Values<'_> {
    pub(crate) fn val(&self, id: usize) -> &Arr {
        &self.nodes[id].value
    }
}

/// Recording of a differentiable computation.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A tape that records backward closures (training / gradient mode).
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
        }
    }

    /// A tape that only computes forward values; `backward` on it yields
    /// empty gradients. Cheaper when only the output is needed.
    pub fn inference() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Enters a tensor into the tape as a leaf (input or parameter).
    pub fn leaf(&self, value: Arr) -> Var<'_> {
        self.push(value, None)
    }

    /// Handle to the most recently recorded node.
    pub fn last_var(&self) -> Var<'_> {
        let len = self.len();
        assert!(len > 0, "tape is empty");
        Var {
            tape: self,
            id: len - 1,
        }
    }

    pub(crate) fn push(&self, value: Arr, back: Option<BackFn>) -> Var<'_> {
        debug_assert!(value
            .iter()
            .all(|v| v.is_finite() || v.is_nan() || v.is_infinite()));
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        let back = if self.grad_enabled { back } else { None };
        nodes.push(Node { value, back });
        Var { tape: self, id }
    }

    pub(crate) fn value_clone(&self, id: usize) -> Arr {
        self.nodes.borrow()[id].value.clone()
    }

    pub(crate) fn with_value<R>(&self, id: usize, f: impl FnOnce(&Arr) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    /// Reverse pass from a scalar root (a 0-d or single-element tensor),
    /// seeding its gradient with 1.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        let seed = self.with_value(root.id, |v| {
            assert_eq!(
                v.len(),
                1,
                "backward root must be scalar, got shape {:?}",
                v.shape()
            );
            ArrayD::ones(v.raw_dim())
        });
        self.backward_seeded(root, seed)
    }

    /// Reverse pass with an explicit output gradient.
    pub fn backward_seeded(&self, root: Var<'_>, seed: Arr) -> Gradients {
        assert!(
            std::ptr::eq(root.tape, self),
            "var belongs to a different tape"
        );
        let nodes = self.nodes.borrow();
        assert_eq!(
            seed.shape(),
            nodes[root.id].value.shape(),
            "seed shape must match root shape"
        );
        let mut grads: Vec<Option<Arr>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(seed);
        let values = Values { nodes: &nodes };
        for id in (0..=root.id).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            if let Some(back) = &nodes[id].back {
                let mut sink = |dep: usize, dg: Arr| {
                    debug_assert!(dep < id, "backward dependency must precede node");
                    // keep stored gradients row-major so backward closures
                    // can rely on contiguous slices
                    let dg = if dg.is_standard_layout() {
                        dg
                    } else {
                        dg.as_standard_layout().into_owned()
                    };
                    match &mut grads[dep] {
                        Some(acc) => {
                            debug_assert_eq!(acc.shape(), dg.shape());
                            *acc += &dg;
                        }
                        slot => *slot = Some(dg),
                    }
                };
                back(&values, id, &g, &mut sink);
            }
            grads[id] = Some(g);
        }
        Gradients { g: grads }
    }
}

/// Result of a reverse pass; indexes gradients by the [`Var`] they belong to.
pub struct Gradients {
    g: Vec<Option<Arr>>,
}

impl Gradients {
    /// Gradient with respect to `v`, if `v` participated in the computation.
    pub fn wrt(&self, v: Var<'_>) -> Option<&Arr> {
        self.g.get(v.id).and_then(|g| g.as_ref())
    }

    /// Removes and returns the gradient for `v`.
    pub fn take(&mut self, v: Var<'_>) -> Option<Arr> {
        self.g.get_mut(v.id).and_then(|g| g.take())
    }
}

/// Handle to a recorded tensor. Cheap to copy; tied to the tape's lifetime.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    /// Clones the forward value out of the tape.
    pub fn value(&self) -> Arr {
        self.tape.value_clone(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_value(self.id, |v| v.shape().to_vec())
    }

    pub fn len(&self) -> usize {
        self.tape.with_value(self.id, |v| v.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.tape.with_value(self.id, scalar_value)
    }

    // ---- elementwise binary ops (NumPy-style broadcasting) ----

    pub fn add(self, rhs: Var<'t>) -> Var<'t> {
        binary(self, rhs, BinaryOp::Add)
    }

    pub fn sub(self, rhs: Var<'t>) -> Var<'t> {
        binary(self, rhs, BinaryOp::Sub)
    }

    pub fn mul(self, rhs: Var<'t>) -> Var<'t> {
        binary(self, rhs, BinaryOp::Mul)
    }

    pub fn div(self, rhs: Var<'t>) -> Var<'t> {
        binary(self, rhs, BinaryOp::Div)
    }

    // ---- elementwise unary ops ----

    pub fn neg(self) -> Var<'t> {
        self.affine(-1.0, 0.0)
    }

    /// `a*x + b` with scalar constants.
    pub fn affine(self, a: f64, b: f64) -> Var<'t> {
        let value = self.tape.with_value(self.id, |v| v.mapv(|x| a * x + b));
        let id = self.id;
        self.tape.push(
            value,
            Some(Box::new(move |_vals, _self_id, g, sink| {
                sink(id, g.mapv(|x| a * x));
            })),
        )
    }

    pub fn scale(self, a: f64) -> Var<'t> {
        self.affine(a, 0.0)
    }

    pub fn exp(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |v| v.mapv(f64::exp));
        let id = self.id;
        self.tape.push(
            value,
            Some(Box::new(move |vals, self_id, g, sink| {
                sink(id, g * vals.val(self_id));
            })),
        )
    }

    pub fn sqrt(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |v| v.mapv(f64::sqrt));
        let id = self.id;
        self.tape.push(
            value,
            Some(Box::new(move |vals, self_id, g, sink| {
                let y = vals.val(self_id);
                sink(
                    id,
                    ndarray::Zip::from(g)
                        .and(y)
                        .map_collect(|&g, &y| g * 0.5 / y),
                );
            })),
        )
    }

    /// Absolute value; the subgradient at 0 is taken as 0.
    pub fn abs(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |v| v.mapv(f64::abs));
        let id = self.id;
        self.tape.push(
            value,
            Some(Box::new(move |vals, _self_id, g, sink| {
                let x = vals.val(id);
                sink(
                    id,
                    ndarray::Zip::from(g).and(x).map_collect(|&g, &x| {
                        if x > 0.0 {
                            g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    }),
                );
            })),
        )
    }

    pub fn relu(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |v| v.mapv(|x| x.max(0.0)));
        let id = self.id;
        self.tape.push(
            value,
            Some(Box::new(move |vals, _self_id, g, sink| {
                let x = vals.val(id);
                sink(
                    id,
                    ndarray::Zip::from(g)
                        .and(x)
                        .map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 }),
                );
            })),
        )
    }

    pub fn sigmoid(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |v| v.mapv(sigmoid_f));
        let id = self.id;
        self.tape.push(
            value,
            Some(Box::new(move |vals, self_id, g, sink| {
                let y = vals.val(self_id);
                sink(
                    id,
                    ndarray::Zip::from(g)
                        .and(y)
                        .map_collect(|&g, &y| g * y * (1.0 - y)),
                );
            })),
        )
    }

    pub fn tanh(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |v| v.mapv(f64::tanh));
        let id = self.id;
        self.tape.push(
            value,
            Some(Box::new(move |vals, self_id, g, sink| {
                let y = vals.val(self_id);
                sink(
                    id,
                    ndarray::Zip::from(g)
                        .and(y)
                        .map_collect(|&g, &y| g * (1.0 - y * y)),
                );
            })),
        )
    }

    /// Gaussian error linear unit (tanh form).
    pub fn gelu(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |v| v.mapv(gelu_f));
        let id = self.id;
        self.tape.push(
            value,
            Some(Box::new(move |vals, _self_id, g, sink| {
                let x = vals.val(id);
                sink(
                    id,
                    ndarray::Zip::from(g)
                        .and(x)
                        .map_collect(|&g, &x| g * gelu_df(x)),
                );
            })),
        )
    }

    // ---- reductions ----

    pub fn sum_all(self) -> Var<'t> {
        let (value, in_shape) = self
            .tape
            .with_value(self.id, |v| (scalar(v.sum()), v.raw_dim()));
        let id = self.id;
        self.tape.push(
            value,
            Some(Box::new(move |_vals, _self_id, g, sink| {
                sink(id, ArrayD::from_elem(in_shape.clone(), scalar_value(g)));
            })),
        )
    }

    pub fn mean_all(self) -> Var<'t> {
        let n = self.len() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Sum over the given axes. `keep` retains them as size-1 dims.
    pub fn sum_axes(self, axes: &[usize], keep: bool) -> Var<'t> {
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        let in_shape = self.shape();
        let value = self.tape.with_value(self.id, |v| {
            let mut out = v.clone();
            // reduce from the highest axis down so indices stay valid
            for &ax in axes.iter().rev() {
                out = out.sum_axis(Axis(ax));
            }
            if keep {
                let mut shape = in_shape.clone();
                for &ax in &axes {
                    shape[ax] = 1;
                }
                out = out.into_shape_with_order(IxDyn(&shape)).unwrap();
            }
            out
        });
        let id = self.id;
        let axes_b = axes.clone();
        self.tape.push(
            value,
            Some(Box::new(move |_vals, _self_id, g, sink| {
                let mut g = g.clone();
                if !keep {
                    let mut shape = g.shape().to_vec();
                    for &ax in &axes_b {
                        shape.insert(ax, 1);
                    }
                    g = g.into_shape_with_order(IxDyn(&shape)).unwrap();
                }
                let gb = g
                    .broadcast(IxDyn(&in_shape))
                    .expect("broadcast back")
                    .to_owned();
                sink(id, gb);
            })),
        )
    }

    pub fn mean_axes(self, axes: &[usize], keep: bool) -> Var<'t> {
        let shape = self.shape();
        let n: usize = axes.iter().map(|&a| shape[a]).product();
        self.sum_axes(axes, keep).scale(1.0 / n as f64)
    }

    // ---- linear algebra ----

    /// 2-D matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(self, rhs: Var<'t>) -> Var<'t> {
        let a = self.tape.with_value(self.id, as2);
        let b = self.tape.with_value(rhs.id, as2);
        assert_eq!(
            a.shape()[1],
            b.shape()[0],
            "matmul inner dimension mismatch"
        );
        let value = a.dot(&b).into_dyn();
        let (ia, ib) = (self.id, rhs.id);
        self.tape.push(
            value,
            Some(Box::new(move |vals, _self_id, g, sink| {
                let g2 = as2(g);
                let a = as2(vals.val(ia));
                let b = as2(vals.val(ib));
                sink(ia, g2.dot(&b.t()).into_dyn());
                sink(ib, a.t().dot(&g2).into_dyn());
            })),
        )
    }
}

fn as2(v: &Arr) -> ndarray::Array2<f64> {
    v.clone()
        .into_dimensionality::<ndarray::Ix2>()
        .expect("expected 2-D tensor")
}

pub(crate) fn sigmoid_f(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu_f(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_df(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Right-aligned broadcast shape of two operands; panics on mismatch.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = a.len().max(b.len());
    let mut out = vec![0usize; n];
    for i in 0..n {
        let da = if i < n - a.len() {
            1
        } else {
            a[i - (n - a.len())]
        };
        let db = if i < n - b.len() {
            1
        } else {
            b[i - (n - b.len())]
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => panic!("shapes {a:?} and {b:?} are not broadcast-compatible"),
        };
    }
    out
}

/// Sums `g` down to `target` shape, inverting a broadcast.
fn reduce_to(mut g: Arr, target: &[usize]) -> Arr {
    while g.ndim() > target.len() {
        g = g.sum_axis(Axis(0));
    }
    for (ax, (&gd, &td)) in g.shape().to_vec().iter().zip(target).enumerate() {
        if gd != td {
            debug_assert_eq!(td, 1, "cannot reduce axis {ax} from {gd} to {td}");
            g = g.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    g
}

fn binary<'t>(lhs: Var<'t>, rhs: Var<'t>, op: BinaryOp) -> Var<'t> {
    assert!(
        std::ptr::eq(lhs.tape, rhs.tape),
        "operands from different tapes"
    );
    let tape = lhs.tape;
    let (la, ra) = (tape.value_clone(lhs.id), tape.value_clone(rhs.id));
    let out_shape = broadcast_shape(la.shape(), ra.shape());
    let lb = la
        .broadcast(IxDyn(&out_shape))
        .expect("lhs broadcast")
        .to_owned();
    let rb = ra
        .broadcast(IxDyn(&out_shape))
        .expect("rhs broadcast")
        .to_owned();
    let value = match op {
        BinaryOp::Add => &lb + &rb,
        BinaryOp::Sub => &lb - &rb,
        BinaryOp::Mul => &lb * &rb,
        BinaryOp::Div => &lb / &rb,
    };
    let (il, ir) = (lhs.id, rhs.id);
    let (ls, rs) = (la.shape().to_vec(), ra.shape().to_vec());
    let back: BackFn = match op {
        BinaryOp::Add => Box::new(move |_vals, _self_id, g, sink| {
            sink(il, reduce_to(g.clone(), &ls));
            sink(ir, reduce_to(g.clone(), &rs));
        }),
        BinaryOp::Sub => Box::new(move |_vals, _self_id, g, sink| {
            sink(il, reduce_to(g.clone(), &ls));
            sink(ir, reduce_to(g.mapv(|x| -x), &rs));
        }),
        BinaryOp::Mul => Box::new(move |vals, _self_id, g, sink| {
            let shape = g.raw_dim();
            let l = vals.val(il).broadcast(shape.clone()).unwrap().to_owned();
            let r = vals.val(ir).broadcast(shape).unwrap().to_owned();
            sink(il, reduce_to(g * &r, &ls));
            sink(ir, reduce_to(g * &l, &rs));
        }),
        BinaryOp::Div => Box::new(move |vals, _self_id, g, sink| {
            let shape = g.raw_dim();
            let l = vals.val(il).broadcast(shape.clone()).unwrap().to_owned();
            let r = vals.val(ir).broadcast(shape).unwrap().to_owned();
            sink(il, reduce_to(g / &r, &ls));
            let mut dr = g * &l;
            dr.zip_mut_with(&r, |d, &r| *d = -*d / (r * r));
            sink(ir, reduce_to(dr, &rs));
        }),
    };
    tape.push(value, Some(back))
}

impl<'t> std::ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self::Output {
        Var::add(self, rhs)
    }
}

impl<'t> std::ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self::Output {
        Var::sub(self, rhs)
    }
}

impl<'t> std::ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self::Output {
        Var::mul(self, rhs)
    }
}

impl<'t> std::ops::Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self::Output {
        Var::div(self, rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};

    #[test]
    fn add_broadcasts_bias_over_rows() {
        let tape = Tape::new();
        let x = tape.leaf(arr2(&[[1.0, 2.0], [3.0, 4.0]]).into_dyn());
        let b = tape.leaf(arr1(&[10.0, 20.0]).into_dyn());
        let y = (x + b).sum_all();
        assert_eq!(y.item(), 70.0);
        let grads = tape.backward(y);
        assert_eq!(grads.wrt(b).unwrap(), &arr1(&[2.0, 2.0]).into_dyn());
    }

    #[test]
    fn matmul_matches_hand_result() {
        let tape = Tape::new();
        let a = tape.leaf(arr2(&[[1.0, 2.0], [3.0, 4.0]]).into_dyn());
        let b = tape.leaf(arr2(&[[5.0], [6.0]]).into_dyn());
        let y = a.matmul(b);
        assert_eq!(y.value(), arr2(&[[17.0], [39.0]]).into_dyn());
        let grads = tape.backward(y.sum_all());
        assert_eq!(
            grads.wrt(a).unwrap(),
            &arr2(&[[5.0, 6.0], [5.0, 6.0]]).into_dyn()
        );
    }

    #[test]
    fn inference_tape_skips_gradients() {
        let tape = Tape::inference();
        let x = tape.leaf(arr1(&[2.0]).into_dyn());
        let y = x.mul(x).sum_all();
        assert_eq!(y.item(), 4.0);
        let grads = tape.backward(y);
        assert!(grads.wrt(x).is_none());
    }

    #[test]
    fn gradients_accumulate_over_reuse() {
        let tape = Tape::new();
        let x = tape.leaf(arr1(&[3.0]).into_dyn());
        let y = (x + x).sum_all(); // dy/dx = 2
        let grads = tape.backward(y);
        assert_eq!(grads.wrt(x).unwrap()[[0]], 2.0);
    }

    #[test]
    #[should_panic(expected = "broadcast-compatible")]
    fn incompatible_shapes_panic() {
        let tape = Tape::new();
        let a = tape.leaf(arr1(&[1.0, 2.0]).into_dyn());
        let b = tape.leaf(arr1(&[1.0, 2.0, 3.0]).into_dyn());
        let _ = a + b;
    }
}
