//! Tape-based reverse-mode differentiation over dense 2-D `f64` tensors.
//!
//! Every primitive records a node with links to its operands. Backward rules
//! are themselves expressed as tape primitives, so a gradient computed with
//! `create_graph = true` is an ordinary differentiable [`Var`]: this is what
//! lets the critic's gradient penalty be differentiated with respect to the
//! critic's own parameters.
//!
//! Tensors are matrices (`rows x cols`); a batch of samples occupies rows.

mod backward;
mod check;
mod kernel;

use std::cell::{Cell, Ref, RefCell};
use std::fmt;
use std::sync::Arc;

use ndarray::{concatenate, s, Array2, Axis};

use crate::error::{Error, Result};

pub use check::{finite_difference_check, FdOptions};
pub(crate) use kernel::gemm;

pub type Matrix = Array2<f64>;

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    AddRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Square(usize),
    Sqrt(usize),
    Recip(usize),
    Tanh(usize),
    LeakyRelu(usize, f64),
    ConcatCols(usize, usize),
    SliceCols { x: usize, start: usize },
    PadCols { x: usize, start: usize },
    Sum(usize),
    Broadcast(usize),
    SumRows(usize),
    BroadcastRows(usize),
    SumCols(usize),
    BroadcastCols(usize),
}

impl Op {
    fn parents(&self) -> ([usize; 2], usize) {
        use Op::*;
        match *self {
            Leaf => ([0, 0], 0),
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul { a, b, .. } | AddRow(a, b) | ConcatCols(a, b) => {
                ([a, b], 2)
            }
            Scale(x, _) | AddScalar(x) | Square(x) | Sqrt(x) | Recip(x) | Tanh(x) | LeakyRelu(x, _)
            | SliceCols { x, .. } | PadCols { x, .. } | Sum(x) | Broadcast(x) | SumRows(x)
            | BroadcastRows(x) | SumCols(x) | BroadcastCols(x) => ([x, 0], 1),
        }
    }
}

struct Node {
    value: Arc<Matrix>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of primitive operations.
///
/// A tape is single-threaded; independent computations use independent tapes.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    no_grad: Cell<bool>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

fn dims(m: &Matrix) -> [usize; 2] {
    [m.nrows(), m.ncols()]
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that gradients can be taken with respect to.
    pub fn param(&self, value: Matrix) -> Var<'_> {
        self.push_raw(value, Op::Leaf, !self.no_grad.get())
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.push_raw(value, Op::Leaf, false)
    }

    pub(crate) fn param_shared(&self, value: Arc<Matrix>) -> Var<'_> {
        self.push_rc(value, Op::Leaf, !self.no_grad.get())
    }

    pub(crate) fn constant_shared(&self, value: Arc<Matrix>) -> Var<'_> {
        self.push_rc(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Array2::from_elem((1, 1), value))
    }

    fn push_raw(&self, value: Matrix, op: Op, requires_grad: bool) -> Var<'_> {
        self.push_rc(Arc::new(value), op, requires_grad)
    }

    fn push_rc(&self, value: Arc<Matrix>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Arc<Matrix> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Records `value` as the result of `op`, checking it is finite.
    fn record(&self, name: &'static str, value: Matrix, op: Op) -> Result<Var<'_>> {
        if !all_finite(&value) {
            let bad = value.iter().find(|v| !v.is_finite()).copied().unwrap_or(f64::NAN);
            return Err(Error::Numeric(format!("{name} produced a non-finite value ({bad})")));
        }
        let (parents, n) = op.parents();
        let requires_grad = !self.no_grad.get() && parents[..n].iter().any(|&p| self.requires_grad(p));
        let op = if requires_grad { op } else { Op::Leaf };
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn nodes(&self) -> Ref<'_, Vec<Node>> {
        self.nodes.borrow()
    }

    /// Gradients of the scalar `output` with respect to each of `inputs`.
    ///
    /// With `create_graph`, the returned gradients are differentiable nodes.
    /// Inputs that `output` does not depend on get a zero gradient and a log warning.
    pub fn gradient<'t>(&'t self, output: Var<'t>, inputs: &[Var<'t>], create_graph: bool) -> Result<Vec<Var<'t>>> {
        backward::gradient(self, output, inputs, create_graph)
    }

    /// First-order gradients as plain matrices, moved off the tape without copying.
    pub fn gradient_values<'t>(&'t self, output: Var<'t>, inputs: &[Var<'t>]) -> Result<Vec<Matrix>> {
        let grads = self.gradient(output, inputs, false)?;
        let mut taken: Vec<(usize, usize)> = Vec::new();
        let mut out: Vec<Matrix> = Vec::with_capacity(grads.len());
        for g in grads {
            if let Some(&(_, k)) = taken.iter().find(|(id, _)| *id == g.id) {
                out.push(out[k].clone());
                continue;
            }
            // gradient nodes are created by the backward pass and referenced nowhere else
            let rc = std::mem::replace(&mut self.nodes.borrow_mut()[g.id].value, Arc::new(Matrix::zeros((0, 0))));
            taken.push((g.id, out.len()));
            out.push(Arc::try_unwrap(rc).unwrap_or_else(|rc| (*rc).clone()));
        }
        Ok(out)
    }
}

/// `x * 0` is NaN exactly when `x` is not finite; independent lanes let the
/// common all-finite scan vectorize.
pub(crate) fn all_finite(m: &Matrix) -> bool {
    let Some(xs) = m.as_slice_memory_order() else {
        return m.iter().all(|v| v.is_finite());
    };
    let mut acc = [0.0f64; 8];
    let chunks = xs.chunks_exact(8);
    let tail = chunks.remainder();
    for c in chunks {
        for l in 0..8 {
            acc[l] += c[l] * 0.0;
        }
    }
    acc.iter().chain(tail).all(|v| v.is_finite())
}

fn same_tape(a: &Var<'_>, b: &Var<'_>) {
    assert!(std::ptr::eq(a.tape, b.tape), "operands recorded on different tapes");
}

fn check_same(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape {
            op,
            lhs: dims(a),
            rhs: dims(b),
        });
    }
    Ok(())
}

fn oriented(m: &Matrix, t: bool) -> ndarray::ArrayView2<'_, f64> {
    if t {
        m.t()
    } else {
        m.view()
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Arc<Matrix> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> [usize; 2] {
        dims(&self.tape.nodes()[self.id].value)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// The single entry of a `1 x 1` tensor.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.dim(), (1, 1), "item() on a non-scalar tensor");
        v[[0, 0]]
    }

    fn unary(&self, name: &'static str, op: Op, f: impl FnOnce(&Matrix) -> Matrix) -> Result<Var<'t>> {
        let v = self.value();
        self.tape.record(name, f(&v), op)
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        same_tape(self, &other);
        let (a, b) = (self.value(), other.value());
        check_same("add", &a, &b)?;
        self.tape.record("add", &*a + &*b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        same_tape(self, &other);
        let (a, b) = (self.value(), other.value());
        check_same("sub", &a, &b)?;
        self.tape.record("sub", &*a - &*b, Op::Sub(self.id, other.id))
    }

    /// Elementwise product.
    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        same_tape(self, &other);
        let (a, b) = (self.value(), other.value());
        check_same("mul", &a, &b)?;
        self.tape.record("mul", &*a * &*b, Op::Mul(self.id, other.id))
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.matmul_t(other, false, false)
    }

    /// `op(self) . op(other)` where `op` optionally transposes.
    pub fn matmul_t(&self, other: Var<'t>, ta: bool, tb: bool) -> Result<Var<'t>> {
        same_tape(self, &other);
        let (a, b) = (self.value(), other.value());
        let (av, bv) = (oriented(&a, ta), oriented(&b, tb));
        if av.ncols() != bv.nrows() {
            return Err(Error::Shape {
                op: "matmul",
                lhs: [av.nrows(), av.ncols()],
                rhs: [bv.nrows(), bv.ncols()],
            });
        }
        self.tape.record(
            "matmul",
            kernel::gemm(av, bv),
            Op::MatMul {
                a: self.id,
                b: other.id,
                ta,
                tb,
            },
        )
    }

    /// Adds a `1 x c` row to every row of `self`.
    pub fn add_row(&self, row: Var<'t>) -> Result<Var<'t>> {
        same_tape(self, &row);
        let (a, b) = (self.value(), row.value());
        if b.nrows() != 1 || b.ncols() != a.ncols() {
            return Err(Error::Shape {
                op: "add_row",
                lhs: dims(&a),
                rhs: dims(&b),
            });
        }
        self.tape.record("add_row", &*a + &*b, Op::AddRow(self.id, row.id))
    }

    /// `x . weight + bias` with `weight: in x out` and `bias: 1 x out`.
    pub fn affine(&self, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        self.matmul(weight)?.add_row(bias)
    }

    pub fn scale(&self, c: f64) -> Result<Var<'t>> {
        self.unary("scale", Op::Scale(self.id, c), |v| v * c)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Var<'t>> {
        self.unary("add_scalar", Op::AddScalar(self.id), |v| v + c)
    }

    pub fn neg(&self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.unary("square", Op::Square(self.id), |v| v.mapv(|x| x * x))
    }

    pub fn sqrt(&self) -> Result<Var<'t>> {
        self.unary("sqrt", Op::Sqrt(self.id), |v| v.mapv(f64::sqrt))
    }

    pub fn recip(&self) -> Result<Var<'t>> {
        self.unary("recip", Op::Recip(self.id), |v| v.mapv(f64::recip))
    }

    pub fn tanh(&self) -> Result<Var<'t>> {
        self.unary("tanh", Op::Tanh(self.id), |v| v.mapv(f64::tanh))
    }

    /// `x` for `x > 0`, `slope * x` otherwise.
    pub fn leaky_relu(&self, slope: f64) -> Result<Var<'t>> {
        self.unary("leaky_relu", Op::LeakyRelu(self.id, slope), |v| {
            v.mapv(|x| if x > 0.0 { x } else { slope * x })
        })
    }

    /// Inverted dropout with a caller-supplied keep mask (`true` keeps the unit).
    pub fn dropout(&self, rate: f64, keep: &Array2<bool>) -> Result<Var<'t>> {
        let shape = self.shape();
        if keep.dim() != (shape[0], shape[1]) {
            return Err(Error::Shape {
                op: "dropout",
                lhs: shape,
                rhs: [keep.nrows(), keep.ncols()],
            });
        }
        let factor = 1.0 / (1.0 - rate);
        let mask = keep.mapv(|k| if k { factor } else { 0.0 });
        self.mul(self.tape.constant(mask))
    }

    pub fn concat_cols(&self, other: Var<'t>) -> Result<Var<'t>> {
        same_tape(self, &other);
        let (a, b) = (self.value(), other.value());
        if a.nrows() != b.nrows() {
            return Err(Error::Shape {
                op: "concat_cols",
                lhs: dims(&a),
                rhs: dims(&b),
            });
        }
        let v = concatenate(Axis(1), &[a.view(), b.view()]).expect("row counts checked");
        self.tape.record("concat_cols", v, Op::ConcatCols(self.id, other.id))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let v = self.value();
        if start + len > v.ncols() || len == 0 {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: dims(&v),
                rhs: [start, len],
            });
        }
        self.tape.record(
            "slice_cols",
            v.slice(s![.., start..start + len]).to_owned(),
            Op::SliceCols { x: self.id, start },
        )
    }

    /// Embeds `self` into a zero matrix of `total` columns starting at `start`.
    pub(crate) fn pad_cols(&self, start: usize, total: usize) -> Result<Var<'t>> {
        let v = self.value();
        if start + v.ncols() > total {
            return Err(Error::Shape {
                op: "pad_cols",
                lhs: dims(&v),
                rhs: [start, total],
            });
        }
        let mut out = Array2::zeros((v.nrows(), total));
        out.slice_mut(s![.., start..start + v.ncols()]).assign(&*v);
        self.tape.record("pad_cols", out, Op::PadCols { x: self.id, start })
    }

    /// Sum of all entries, as `1 x 1`.
    pub fn sum(&self) -> Result<Var<'t>> {
        self.unary("sum", Op::Sum(self.id), |v| Array2::from_elem((1, 1), v.sum()))
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        let n = self.value().len() as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Broadcasts a `1 x 1` tensor to `rows x cols`.
    pub(crate) fn broadcast(&self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let v = self.value();
        if v.dim() != (1, 1) {
            return Err(Error::Shape {
                op: "broadcast",
                lhs: dims(&v),
                rhs: [rows, cols],
            });
        }
        self.tape
            .record("broadcast", Array2::from_elem((rows, cols), v[[0, 0]]), Op::Broadcast(self.id))
    }

    /// Column sums as a `1 x c` row.
    pub fn sum_rows(&self) -> Result<Var<'t>> {
        self.unary("sum_rows", Op::SumRows(self.id), |v| v.sum_axis(Axis(0)).insert_axis(Axis(0)))
    }

    pub(crate) fn broadcast_rows(&self, rows: usize) -> Result<Var<'t>> {
        let v = self.value();
        if v.nrows() != 1 {
            return Err(Error::Shape {
                op: "broadcast_rows",
                lhs: dims(&v),
                rhs: [rows, v.ncols()],
            });
        }
        let out = v.broadcast((rows, v.ncols())).expect("single row").to_owned();
        self.tape.record("broadcast_rows", out, Op::BroadcastRows(self.id))
    }

    /// Row sums as an `r x 1` column.
    pub fn sum_cols(&self) -> Result<Var<'t>> {
        self.unary("sum_cols", Op::SumCols(self.id), |v| v.sum_axis(Axis(1)).insert_axis(Axis(1)))
    }

    pub(crate) fn broadcast_cols(&self, cols: usize) -> Result<Var<'t>> {
        let v = self.value();
        if v.ncols() != 1 {
            return Err(Error::Shape {
                op: "broadcast_cols",
                lhs: dims(&v),
                rhs: [v.nrows(), cols],
            });
        }
        let out = v.broadcast((v.nrows(), cols)).expect("single column").to_owned();
        self.tape.record("broadcast_cols", out, Op::BroadcastCols(self.id))
    }

    /// Euclidean norm of each row, as an `r x 1` column.
    pub fn l2_norm_rows(&self) -> Result<Var<'t>> {
        self.square()?.sum_cols()?.sqrt()
    }
}
