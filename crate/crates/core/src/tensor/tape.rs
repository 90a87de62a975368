//! Reverse-mode differentiation over a linear tape of primitive
//! applications. Forward values are computed eagerly and stored, so the
//! backward pass can rebuild local derivatives without extra bookkeeping.
//!
//! Gradients through `min`/`max` flow to the winning element only, with ties
//! going to the first operand. `StopGradient` is the identity forward and
//! contributes exactly zero backward.

use super::*;

/// Index of a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValId(usize);

#[derive(Debug, Clone, PartialEq)]
pub enum TapeOp {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    DivEps,
    MinElem,
    MaxElem,
    SquaredDiff,
    MulScalar(f64),
    Abs,
    Square,
    LogGuard,
    Exp,
    Sin,
    Cos,
    Tan,
    Atan,
    Tanh,
    Atanh,
    Relu,
    Softplus,
    Clamp(f64, f64),
    SumLast,
    MeanLast,
    StdLast,
    MinLast,
    MaxLast,
    SumAll,
    MeanAll,
    StdAll,
    CumSum,
    DiscountedCumSum,
    StopGradient,
    MatMul,
    AddRow,
    ConcatLast,
    SliceLast(usize, usize),
}

impl TapeOp {
    pub fn arity(&self) -> usize {
        use TapeOp::*;
        match self {
            Leaf => 0,
            Add | Sub | Mul | Div | DivEps | MinElem | MaxElem | SquaredDiff
            | DiscountedCumSum | MatMul | AddRow | ConcatLast => 2,
            _ => 1,
        }
    }
}

struct TapeNode {
    op: TapeOp,
    inputs: Vec<ValId>,
    value: Tensor,
    needs_grad: bool,
}

/// Single-writer record of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<TapeNode>,
}

/// Gradient of one tape output with respect to every reachable value.
pub struct Gradients {
    by_id: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ValId) -> Option<&Tensor> {
        self.by_id.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient for a leaf, or zeros of the given shape when no path
    /// reached it.
    pub fn get_or_zeros(&self, id: ValId, shape: &[usize]) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn leaf(&mut self, value: Tensor, differentiable: bool) -> ValId {
        self.push(TapeOp::Leaf, vec![], value, differentiable)
    }

    fn push(&mut self, op: TapeOp, inputs: Vec<ValId>, value: Tensor, needs_grad: bool) -> ValId {
        self.nodes.push(TapeNode {
            op,
            inputs,
            value,
            needs_grad,
        });
        ValId(self.nodes.len() - 1)
    }

    /// Apply a primitive, recording it for the backward pass.
    pub fn apply(&mut self, op: TapeOp, inputs: &[ValId]) -> Result<ValId> {
        if inputs.len() != op.arity() {
            return Err(TensorError::Arity {
                op: "tape.apply",
                expected: op.arity(),
                got: inputs.len(),
            });
        }
        let v = |i: usize| &self.nodes[inputs[i].0].value;
        let value = match &op {
            TapeOp::Leaf => return Err(TensorError::Contract("leaf is not applicable".into())),
            TapeOp::Add => add(v(0), v(1))?,
            TapeOp::Sub => sub(v(0), v(1))?,
            TapeOp::Mul => mul(v(0), v(1))?,
            TapeOp::Div => div(v(0), v(1))?,
            TapeOp::DivEps => div_eps(v(0), v(1))?,
            TapeOp::MinElem => min_elem(v(0), v(1))?,
            TapeOp::MaxElem => max_elem(v(0), v(1))?,
            TapeOp::SquaredDiff => squared_diff(v(0), v(1))?,
            TapeOp::MulScalar(c) => mul_scalar(v(0), *c),
            TapeOp::Abs => abs(v(0)),
            TapeOp::Square => square(v(0)),
            TapeOp::LogGuard => log_guard(v(0)),
            TapeOp::Exp => exp(v(0)),
            TapeOp::Sin => sin(v(0)),
            TapeOp::Cos => cos(v(0)),
            TapeOp::Tan => tan(v(0)),
            TapeOp::Atan => atan(v(0)),
            TapeOp::Tanh => tanh(v(0)),
            TapeOp::Atanh => atanh(v(0)),
            TapeOp::Relu => relu(v(0)),
            TapeOp::Softplus => softplus(v(0)),
            TapeOp::Clamp(lo, hi) => clamp(v(0), *lo, *hi),
            TapeOp::SumLast => sum_last(v(0))?,
            TapeOp::MeanLast => mean_last(v(0))?,
            TapeOp::StdLast => std_last(v(0))?,
            TapeOp::MinLast => min_last(v(0))?,
            TapeOp::MaxLast => max_last(v(0))?,
            TapeOp::SumAll => sum_all(v(0)),
            TapeOp::MeanAll => mean_all(v(0)),
            TapeOp::StdAll => std_all(v(0)),
            TapeOp::CumSum => cumsum(v(0))?,
            TapeOp::DiscountedCumSum => discounted_cumsum(v(0), v(1))?,
            TapeOp::StopGradient => v(0).clone(),
            TapeOp::MatMul => matmul(v(0), v(1))?,
            TapeOp::AddRow => add_row(v(0), v(1))?,
            TapeOp::ConcatLast => concat_last(v(0), v(1))?,
            TapeOp::SliceLast(s, l) => slice_last(v(0), *s, *l)?,
        };
        let needs_grad = !matches!(op, TapeOp::StopGradient)
            && inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        Ok(self.push(op, inputs.to_vec(), value, needs_grad))
    }

    /// Reverse pass from a scalar output back to every differentiable leaf.
    pub fn backward(&self, output: ValId) -> Result<Gradients> {
        let out_node = &self.nodes[output.0];
        if !out_node.value.is_scalar() {
            return Err(TensorError::Contract(format!(
                "backward requires a scalar output, got shape {:?}",
                out_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::scalar(1.0));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, TapeOp::Leaf | TapeOp::StopGradient) && node.inputs.is_empty() {
                continue;
            }
            let Some(g) = grads[i].clone() else { continue };
            if !node.needs_grad {
                continue;
            }
            let contribs = self.local_grads(node, &g)?;
            for (input, contrib) in node.inputs.iter().zip(contribs) {
                let Some(contrib) = contrib else { continue };
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => *acc = add(acc, &contrib)?,
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(Gradients { by_id: grads })
    }

    /// Per-input gradient contributions of one node given its output grad.
    fn local_grads(&self, node: &TapeNode, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let val = |id: &ValId| &self.nodes[id.0].value;
        let a = node.inputs.first().map(val);
        let b = node.inputs.get(1).map(val);
        let out = &node.value;
        let grads = match &node.op {
            TapeOp::Leaf | TapeOp::StopGradient => vec![None],
            TapeOp::Add => {
                let (a, b) = (a.unwrap(), b.unwrap());
                vec![
                    Some(reduce_to(g.clone(), a.shape())),
                    Some(reduce_to(g.clone(), b.shape())),
                ]
            }
            TapeOp::Sub => {
                let (a, b) = (a.unwrap(), b.unwrap());
                vec![
                    Some(reduce_to(g.clone(), a.shape())),
                    Some(reduce_to(mul_scalar(g, -1.0), b.shape())),
                ]
            }
            TapeOp::Mul => {
                let (a, b) = (a.unwrap(), b.unwrap());
                vec![
                    Some(reduce_to(mul(g, b)?, a.shape())),
                    Some(reduce_to(mul(g, a)?, b.shape())),
                ]
            }
            TapeOp::Div => {
                let (a, b) = (a.unwrap(), b.unwrap());
                let ga = div(g, b)?;
                let gb = mul_scalar(&div(&mul(g, a)?, &square(b))?, -1.0);
                vec![
                    Some(reduce_to(ga, a.shape())),
                    Some(reduce_to(gb, b.shape())),
                ]
            }
            TapeOp::DivEps => {
                let (a, b) = (a.unwrap(), b.unwrap());
                let den = map_unary(b, |v| v + DIV_EPSILON);
                let ga = div(g, &den)?;
                let gb = mul_scalar(&div(&mul(g, a)?, &square(&den))?, -1.0);
                vec![
                    Some(reduce_to(ga, a.shape())),
                    Some(reduce_to(gb, b.shape())),
                ]
            }
            TapeOp::MinElem | TapeOp::MaxElem => {
                let (a, b) = (a.unwrap(), b.unwrap());
                let is_min = matches!(node.op, TapeOp::MinElem);
                let mask_a = zip_broadcast("minmax_grad", a, b, |x, y| {
                    let first_wins = if is_min { x <= y } else { x >= y };
                    if first_wins {
                        1.0
                    } else {
                        0.0
                    }
                })?;
                let mask_b = map_unary(&mask_a, |m| 1.0 - m);
                vec![
                    Some(reduce_to(mul(g, &mask_a)?, a.shape())),
                    Some(reduce_to(mul(g, &mask_b)?, b.shape())),
                ]
            }
            TapeOp::SquaredDiff => {
                let (a, b) = (a.unwrap(), b.unwrap());
                let d = mul_scalar(&sub(a, b)?, 2.0);
                let ga = mul(g, &d)?;
                vec![
                    Some(reduce_to(ga.clone(), a.shape())),
                    Some(reduce_to(mul_scalar(&ga, -1.0), b.shape())),
                ]
            }
            TapeOp::MulScalar(c) => vec![Some(mul_scalar(g, *c))],
            TapeOp::Abs => {
                let a = a.unwrap();
                let sign = map_unary(a, |v| {
                    if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                vec![Some(mul(g, &sign)?)]
            }
            TapeOp::Square => vec![Some(mul(g, &mul_scalar(a.unwrap(), 2.0))?)],
            TapeOp::LogGuard => {
                let d = map_unary(a.unwrap(), |v| if v > LOG_FLOOR { 1.0 / v } else { 0.0 });
                vec![Some(mul(g, &d)?)]
            }
            TapeOp::Exp => vec![Some(mul(g, out)?)],
            TapeOp::Sin => vec![Some(mul(g, &cos(a.unwrap()))?)],
            TapeOp::Cos => vec![Some(mul_scalar(&mul(g, &sin(a.unwrap()))?, -1.0))],
            TapeOp::Tan => {
                let d = map_unary(out, |y| 1.0 + y * y);
                vec![Some(mul(g, &d)?)]
            }
            TapeOp::Atan => {
                let d = map_unary(a.unwrap(), |v| 1.0 / (1.0 + v * v));
                vec![Some(mul(g, &d)?)]
            }
            TapeOp::Tanh => {
                let d = map_unary(out, |y| 1.0 - y * y);
                vec![Some(mul(g, &d)?)]
            }
            TapeOp::Atanh => {
                let d = map_unary(a.unwrap(), |v| 1.0 / (1.0 - v * v));
                vec![Some(mul(g, &d)?)]
            }
            TapeOp::Relu => {
                let d = map_unary(a.unwrap(), |v| if v > 0.0 { 1.0 } else { 0.0 });
                vec![Some(mul(g, &d)?)]
            }
            TapeOp::Softplus => {
                let d = map_unary(a.unwrap(), |v| 1.0 / (1.0 + (-v).exp()));
                vec![Some(mul(g, &d)?)]
            }
            TapeOp::Clamp(lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let d = map_unary(a.unwrap(), |v| if v >= lo && v <= hi { 1.0 } else { 0.0 });
                vec![Some(mul(g, &d)?)]
            }
            TapeOp::SumLast => vec![Some(expand_last(g, a.unwrap().shape(), 1.0))],
            TapeOp::MeanLast => {
                let n = *a.unwrap().shape().last().unwrap() as f64;
                vec![Some(expand_last(g, a.unwrap().shape(), 1.0 / n))]
            }
            TapeOp::StdLast => {
                let a = a.unwrap();
                let (_, n) = a.last_axis("std_last_grad")?;
                let mut data = vec![0.0; a.len()];
                for (r, row) in a.data().chunks(n).enumerate() {
                    let gs = g.data()[r];
                    let std = out.data()[r];
                    if std == 0.0 {
                        continue;
                    }
                    let mean = seq_sum(row) / n as f64;
                    for (t, &v) in row.iter().enumerate() {
                        data[r * n + t] = gs * (v - mean) / (n as f64 * std);
                    }
                }
                vec![Some(Tensor::new(a.shape().to_vec(), data)?)]
            }
            TapeOp::MinLast | TapeOp::MaxLast => {
                let a = a.unwrap();
                let (_, n) = a.last_axis("minmax_last_grad")?;
                let is_min = matches!(node.op, TapeOp::MinLast);
                let mut data = vec![0.0; a.len()];
                for (r, row) in a.data().chunks(n).enumerate() {
                    let mut best = 0usize;
                    for (t, &v) in row.iter().enumerate() {
                        let better = if is_min { v < row[best] } else { v > row[best] };
                        if better {
                            best = t;
                        }
                    }
                    data[r * n + best] = g.data()[r];
                }
                vec![Some(Tensor::new(a.shape().to_vec(), data)?)]
            }
            TapeOp::SumAll => vec![Some(Tensor::filled(a.unwrap().shape(), g.item()))],
            TapeOp::MeanAll => {
                let a = a.unwrap();
                vec![Some(Tensor::filled(a.shape(), g.item() / a.len() as f64))]
            }
            TapeOp::StdAll => {
                let a = a.unwrap();
                let std = out.item();
                if std == 0.0 {
                    vec![Some(Tensor::zeros(a.shape()))]
                } else {
                    let n = a.len() as f64;
                    let mean = seq_sum(a.data()) / n;
                    let gs = g.item();
                    let data = a
                        .data()
                        .iter()
                        .map(|&v| gs * (v - mean) / (n * std))
                        .collect();
                    vec![Some(Tensor::new(a.shape().to_vec(), data)?)]
                }
            }
            TapeOp::CumSum => vec![Some(reverse_cumsum(g)?)],
            TapeOp::DiscountedCumSum => {
                let (x, gam) = (a.unwrap(), b.unwrap());
                let (_, n) = x.last_axis("discounted_cumsum_grad")?;
                let gamma_at =
                    |i: usize| if gam.is_scalar() { gam.data()[0] } else { gam.data()[i] };
                // dL/dx_t = g_t + gamma_{t-1} * dL/dx_{t-1}, left to right.
                let mut gx = vec![0.0; x.len()];
                // dL/dgamma_k = y_{k+1} * dL/dx_k with y the forward output.
                let mut ggam = vec![0.0; x.len()];
                for r in 0..x.len() / n {
                    let base = r * n;
                    let mut acc = 0.0;
                    for t in 0..n {
                        acc = g.data()[base + t] + if t > 0 { gamma_at(base + t - 1) * acc } else { 0.0 };
                        gx[base + t] = acc;
                        let y_next = if t + 1 < n { out.data()[base + t + 1] } else { 0.0 };
                        ggam[base + t] = y_next * acc;
                    }
                }
                let gx = Tensor::new(x.shape().to_vec(), gx)?;
                let ggam = Tensor::new(x.shape().to_vec(), ggam)?;
                vec![Some(gx), Some(reduce_to(ggam, gam.shape()))]
            }
            TapeOp::MatMul => {
                let (x, w) = (a.unwrap(), b.unwrap());
                let m = *x.shape().last().unwrap();
                let n = w.shape()[1];
                let rows = x.len() / m;
                // gx = g . w^T
                let mut gx = vec![0.0; x.len()];
                for r in 0..rows {
                    for k in 0..m {
                        let wrow = &w.data()[k * n..(k + 1) * n];
                        let grow = &g.data()[r * n..(r + 1) * n];
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += grow[j] * wrow[j];
                        }
                        gx[r * m + k] = acc;
                    }
                }
                // gw = x^T . g
                let mut gw = vec![0.0; w.len()];
                for r in 0..rows {
                    let xrow = &x.data()[r * m..(r + 1) * m];
                    let grow = &g.data()[r * n..(r + 1) * n];
                    for (k, &xv) in xrow.iter().enumerate() {
                        let wrow = &mut gw[k * n..(k + 1) * n];
                        for j in 0..n {
                            wrow[j] += xv * grow[j];
                        }
                    }
                }
                vec![
                    Some(Tensor::new(x.shape().to_vec(), gx)?),
                    Some(Tensor::new(w.shape().to_vec(), gw)?),
                ]
            }
            TapeOp::AddRow => {
                let bias = b.unwrap();
                let n = bias.len();
                let mut gb = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (j, &v) in row.iter().enumerate() {
                        gb[j] += v;
                    }
                }
                vec![Some(g.clone()), Some(Tensor::new(vec![n], gb)?)]
            }
            TapeOp::ConcatLast => {
                let (x, y) = (a.unwrap(), b.unwrap());
                let nx = *x.shape().last().unwrap();
                let ny = *y.shape().last().unwrap();
                vec![
                    Some(slice_last(g, 0, nx)?),
                    Some(slice_last(g, nx, ny)?),
                ]
            }
            TapeOp::SliceLast(start, len) => {
                let x = a.unwrap();
                let (rows, n) = x.last_axis("slice_grad")?;
                let mut gx = vec![0.0; x.len()];
                for r in 0..rows {
                    gx[r * n + start..r * n + start + len]
                        .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                }
                vec![Some(Tensor::new(x.shape().to_vec(), gx)?)]
            }
        };
        Ok(grads)
    }
}

/// Sum a gradient down to a broadcast operand's shape (scalar broadcast is
/// the only case).
fn reduce_to(g: Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        g
    } else {
        debug_assert!(shape.is_empty());
        sum_all(&g)
    }
}

/// Spread a reduced gradient back over the last axis, scaled.
fn expand_last(g: &Tensor, shape: &[usize], scale: f64) -> Tensor {
    let n = *shape.last().unwrap();
    let mut data = Vec::with_capacity(g.len() * n);
    for &gv in g.data() {
        for _ in 0..n {
            data.push(gv * scale);
        }
    }
    Tensor {
        shape: shape.to_vec(),
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0), true);
        let y = tape.apply(TapeOp::Square, &[x]).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn stop_gradient_blocks_one_factor() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0), true);
        let sg = tape.apply(TapeOp::StopGradient, &[x]).unwrap();
        let y = tape.apply(TapeOp::Mul, &[sg, x]).unwrap();
        assert_eq!(tape.value(y).item(), 9.0);
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 3.0);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn fanout_accumulates() {
        // y = x*x + x => dy/dx = 2x + 1
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(4.0), true);
        let xx = tape.apply(TapeOp::Mul, &[x, x]).unwrap();
        let y = tape.apply(TapeOp::Add, &[xx, x]).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_relative_eq!(grads.get(x).unwrap().item(), 9.0);
    }

    #[test]
    fn scalar_broadcast_gradient_reduces() {
        let mut tape = Tape::new();
        let c = tape.leaf(Tensor::scalar(2.0), true);
        let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0, 3.0]), true);
        let y = tape.apply(TapeOp::Mul, &[c, x]).unwrap();
        let s = tape.apply(TapeOp::SumAll, &[y]).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(c).unwrap().item(), 6.0);
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn min_tie_goes_to_first_operand() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(1.0), true);
        let b = tape.leaf(Tensor::scalar(1.0), true);
        let m = tape.apply(TapeOp::MinElem, &[a, b]).unwrap();
        let grads = tape.backward(m).unwrap();
        assert_eq!(grads.get(a).unwrap().item(), 1.0);
        assert_eq!(grads.get(b).unwrap().item(), 0.0);
    }
}
