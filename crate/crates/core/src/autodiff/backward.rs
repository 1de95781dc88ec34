use ndarray::Array2;

use super::{Op, Tape, Var};
use crate::error::{Error, Result};

/// Restores the tape's grad mode when the backward pass ends, even on error.
struct GradModeGuard<'t> {
    tape: &'t Tape,
    previous: bool,
}

impl Drop for GradModeGuard<'_> {
    fn drop(&mut self) {
        self.tape.no_grad.set(self.previous);
    }
}

pub(super) fn gradient<'t>(
    tape: &'t Tape,
    output: Var<'t>,
    inputs: &[Var<'t>],
    create_graph: bool,
) -> Result<Vec<Var<'t>>> {
    let out_shape = output.shape();
    if out_shape != [1, 1] {
        return Err(Error::Shape {
            op: "gradient (output must be scalar)",
            lhs: out_shape,
            rhs: [1, 1],
        });
    }
    for inp in inputs {
        assert!(std::ptr::eq(inp.tape, tape), "gradient input from another tape");
    }
    let out = output.id;
    let (ops, requires): (Vec<Op>, Vec<bool>) = tape.nodes()[..=out]
        .iter()
        .map(|n| (n.op.clone(), n.requires_grad))
        .unzip();

    // a node is relevant when it is an input or depends on one
    let mut relevant = vec![false; out + 1];
    for inp in inputs {
        if inp.id <= out && requires[inp.id] {
            relevant[inp.id] = true;
        }
    }
    for i in 0..=out {
        if !relevant[i] {
            let (p, n) = ops[i].parents();
            relevant[i] = p[..n].iter().any(|&q| relevant[q]);
        }
    }

    let _guard = GradModeGuard {
        tape,
        previous: tape.no_grad.replace(!create_graph),
    };

    let var = |id: usize| Var { tape, id };
    let mut grads: Vec<Option<Var<'t>>> = vec![None; out + 1];
    if relevant[out] {
        grads[out] = Some(tape.scalar(1.0));
    }

    let accumulate = |grads: &mut Vec<Option<Var<'t>>>, p: usize, contrib: Var<'t>| -> Result<()> {
        grads[p] = Some(match grads[p] {
            Some(existing) => existing.add(contrib)?,
            None => contrib,
        });
        Ok(())
    };

    for i in (0..=out).rev() {
        if !relevant[i] {
            continue;
        }
        let Some(g) = grads[i] else { continue };
        let (parents, n) = ops[i].parents();
        let wants = |k: usize| k < n && relevant[parents[k]];
        match ops[i] {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if wants(0) {
                    accumulate(&mut grads, a, g)?;
                }
                if wants(1) {
                    accumulate(&mut grads, b, g)?;
                }
            }
            Op::Sub(a, b) => {
                if wants(0) {
                    accumulate(&mut grads, a, g)?;
                }
                if wants(1) {
                    accumulate(&mut grads, b, g.neg()?)?;
                }
            }
            Op::Mul(a, b) => {
                if wants(0) {
                    accumulate(&mut grads, a, g.mul(var(b))?)?;
                }
                if wants(1) {
                    accumulate(&mut grads, b, g.mul(var(a))?)?;
                }
            }
            Op::MatMul { a, b, ta, tb } => {
                if wants(0) {
                    let ga = if ta {
                        var(b).matmul_t(g, tb, true)?
                    } else {
                        g.matmul_t(var(b), false, !tb)?
                    };
                    accumulate(&mut grads, a, ga)?;
                }
                if wants(1) {
                    let gb = if tb {
                        g.matmul_t(var(a), true, ta)?
                    } else {
                        var(a).matmul_t(g, !ta, false)?
                    };
                    accumulate(&mut grads, b, gb)?;
                }
            }
            Op::AddRow(a, b) => {
                if wants(0) {
                    accumulate(&mut grads, a, g)?;
                }
                if wants(1) {
                    accumulate(&mut grads, b, g.sum_rows()?)?;
                }
            }
            Op::Scale(x, c) => accumulate(&mut grads, x, g.scale(c)?)?,
            Op::AddScalar(x) => accumulate(&mut grads, x, g)?,
            Op::Square(x) => accumulate(&mut grads, x, g.mul(var(x).scale(2.0)?)?)?,
            Op::Sqrt(x) => {
                let dy = var(i).recip()?.scale(0.5)?;
                accumulate(&mut grads, x, g.mul(dy)?)?
            }
            Op::Recip(x) => {
                let dy = var(i).square()?.neg()?;
                accumulate(&mut grads, x, g.mul(dy)?)?
            }
            Op::Tanh(x) => {
                let dy = var(i).square()?.neg()?.add_scalar(1.0)?;
                accumulate(&mut grads, x, g.mul(dy)?)?
            }
            Op::LeakyRelu(x, slope) => {
                // derivative at exactly 0 taken as the negative-side slope
                let mask: Array2<f64> = var(x).value().mapv(|v| if v > 0.0 { 1.0 } else { slope });
                accumulate(&mut grads, x, g.mul(tape.constant(mask))?)?
            }
            Op::ConcatCols(a, b) => {
                let na = var(a).shape()[1];
                let nb = var(b).shape()[1];
                if wants(0) {
                    accumulate(&mut grads, a, g.slice_cols(0, na)?)?;
                }
                if wants(1) {
                    accumulate(&mut grads, b, g.slice_cols(na, nb)?)?;
                }
            }
            Op::SliceCols { x, start } => {
                let total = var(x).shape()[1];
                accumulate(&mut grads, x, g.pad_cols(start, total)?)?
            }
            Op::PadCols { x, start } => {
                let len = var(x).shape()[1];
                accumulate(&mut grads, x, g.slice_cols(start, len)?)?
            }
            Op::Sum(x) => {
                let [r, c] = var(x).shape();
                accumulate(&mut grads, x, g.broadcast(r, c)?)?
            }
            Op::Broadcast(x) => accumulate(&mut grads, x, g.sum()?)?,
            Op::SumRows(x) => {
                let r = var(x).shape()[0];
                accumulate(&mut grads, x, g.broadcast_rows(r)?)?
            }
            Op::BroadcastRows(x) => accumulate(&mut grads, x, g.sum_rows()?)?,
            Op::SumCols(x) => {
                let c = var(x).shape()[1];
                accumulate(&mut grads, x, g.broadcast_cols(c)?)?
            }
            Op::BroadcastCols(x) => accumulate(&mut grads, x, g.sum_cols()?)?,
        }
    }

    Ok(inputs
        .iter()
        .map(|inp| match grads.get(inp.id).copied().flatten() {
            Some(g) => g,
            None => {
                log::warn!(
                    "gradient: input node {} is not reachable from output node {out}; returning zeros",
                    inp.id
                );
                let [r, c] = inp.shape();
                tape.constant(Array2::zeros((r, c)))
            }
        })
        .collect())
}
