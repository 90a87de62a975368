//! Dense `f64` tensors with the small operation set the loss-graph language
//! needs: elementwise arithmetic with scalar broadcast, last-axis and whole
//! reductions, (discounted) cumulative sums, and the matrix primitives that
//! back the MLPs. Reverse-mode differentiation lives in [`tape`]; network
//! containers in [`nn`].

pub mod nn;
pub mod tape;

use thiserror::Error;

/// Constant added to denominators by [`div_eps`].
pub const DIV_EPSILON: f64 = 1e-8;
/// Arguments of [`log_guard`] are floored at this value before taking the log.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: requires rank >= 1, got scalar")]
    NeedsAxis { op: &'static str },
    #[error("{op}: produced a non-finite value ({summary})")]
    NonFinite { op: String, summary: String },
    #[error("{0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Row-major dense array of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(TensorError::Contract(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Size of the last axis; rows = len / last.
    fn last_axis(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.last() {
            Some(&n) => Ok((self.data.len() / n.max(1), n)),
            None => Err(TensorError::NeedsAxis { op }),
        }
    }

    /// Squared L2 norm of all elements.
    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

fn map_unary(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| f(v)).collect(),
    }
}

/// Elementwise combine with scalar-against-tensor broadcast only.
fn zip_broadcast(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape == b.shape {
        let data = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor {
            shape: a.shape.clone(),
            data,
        })
    } else if a.is_scalar() {
        let s = a.item();
        Ok(map_unary(b, |y| f(s, y)))
    } else if b.is_scalar() {
        let s = b.item();
        Ok(map_unary(a, |x| f(x, s)))
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        })
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_broadcast("add", a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_broadcast("sub", a, b, |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_broadcast("mul", a, b, |x, y| x * y)
}

/// Plain division; callers must keep the denominator away from zero.
pub fn div(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_broadcast("div", a, b, |x, y| x / y)
}

/// Division with [`DIV_EPSILON`] added to the denominator.
pub fn div_eps(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_broadcast("div_eps", a, b, |x, y| x / (y + DIV_EPSILON))
}

pub fn min_elem(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_broadcast("min_elem", a, b, |x, y| if x <= y { x } else { y })
}

pub fn max_elem(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_broadcast("max_elem", a, b, |x, y| if x >= y { x } else { y })
}

pub fn squared_diff(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_broadcast("squared_diff", a, b, |x, y| (x - y) * (x - y))
}

pub fn mul_scalar(x: &Tensor, c: f64) -> Tensor {
    map_unary(x, |v| c * v)
}

pub fn abs(x: &Tensor) -> Tensor {
    map_unary(x, f64::abs)
}

pub fn square(x: &Tensor) -> Tensor {
    map_unary(x, |v| v * v)
}

/// `ln(max(x, LOG_FLOOR))`; keeps evolved graphs that feed nonpositive
/// values into a log from producing -inf.
pub fn log_guard(x: &Tensor) -> Tensor {
    map_unary(x, |v| v.max(LOG_FLOOR).ln())
}

pub fn exp(x: &Tensor) -> Tensor {
    map_unary(x, f64::exp)
}

pub fn sin(x: &Tensor) -> Tensor {
    map_unary(x, f64::sin)
}

pub fn cos(x: &Tensor) -> Tensor {
    map_unary(x, f64::cos)
}

pub fn tan(x: &Tensor) -> Tensor {
    map_unary(x, f64::tan)
}

pub fn atan(x: &Tensor) -> Tensor {
    map_unary(x, f64::atan)
}

pub fn tanh(x: &Tensor) -> Tensor {
    map_unary(x, f64::tanh)
}

pub fn atanh(x: &Tensor) -> Tensor {
    map_unary(x, f64::atanh)
}

pub fn relu(x: &Tensor) -> Tensor {
    map_unary(x, |v| if v > 0.0 { v } else { 0.0 })
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: &Tensor) -> Tensor {
    map_unary(x, |v| {
        if v > 0.0 {
            v + (-v).exp().ln_1p()
        } else {
            v.exp().ln_1p()
        }
    })
}

pub fn clamp(x: &Tensor, lo: f64, hi: f64) -> Tensor {
    map_unary(x, |v| v.clamp(lo, hi))
}

fn reduce_last(op: &'static str, x: &Tensor, f: impl Fn(&[f64]) -> f64) -> Result<Tensor> {
    let (_rows, n) = x.last_axis(op)?;
    if n == 0 {
        return Err(TensorError::Contract(format!("{op}: empty last axis")));
    }
    let data: Vec<f64> = x.data.chunks(n).map(|row| f(row)).collect();
    Ok(Tensor {
        shape: x.shape[..x.shape.len() - 1].to_vec(),
        data,
    })
}

fn seq_sum(row: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &v in row {
        acc += v;
    }
    acc
}

fn pop_std(row: &[f64]) -> f64 {
    let n = row.len() as f64;
    let mean = seq_sum(row) / n;
    let mut acc = 0.0;
    for &v in row {
        let d = v - mean;
        acc += d * d;
    }
    (acc / n).sqrt()
}

pub fn sum_last(x: &Tensor) -> Result<Tensor> {
    reduce_last("sum_last", x, seq_sum)
}

pub fn mean_last(x: &Tensor) -> Result<Tensor> {
    reduce_last("mean_last", x, |row| seq_sum(row) / row.len() as f64)
}

/// Population standard deviation over the last axis.
pub fn std_last(x: &Tensor) -> Result<Tensor> {
    reduce_last("std_last", x, pop_std)
}

pub fn min_last(x: &Tensor) -> Result<Tensor> {
    reduce_last("min_last", x, |row| {
        row.iter().copied().fold(f64::INFINITY, f64::min)
    })
}

pub fn max_last(x: &Tensor) -> Result<Tensor> {
    reduce_last("max_last", x, |row| {
        row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    })
}

pub fn sum_all(x: &Tensor) -> Tensor {
    Tensor::scalar(seq_sum(&x.data))
}

pub fn mean_all(x: &Tensor) -> Tensor {
    Tensor::scalar(seq_sum(&x.data) / x.data.len() as f64)
}

pub fn std_all(x: &Tensor) -> Tensor {
    Tensor::scalar(pop_std(&x.data))
}

/// Forward cumulative sum along the last axis.
pub fn cumsum(x: &Tensor) -> Result<Tensor> {
    let (_, n) = x.last_axis("cumsum")?;
    let mut data = Vec::with_capacity(x.data.len());
    for row in x.data.chunks(n) {
        let mut acc = 0.0;
        for &v in row {
            acc += v;
            data.push(acc);
        }
    }
    Ok(Tensor {
        shape: x.shape.clone(),
        data,
    })
}

/// Right-to-left discounted accumulation `y_t = x_t + g_t * y_{t+1}` along
/// the last axis. The discount is a scalar or a tensor of the same shape.
pub fn discounted_cumsum(x: &Tensor, g: &Tensor) -> Result<Tensor> {
    if !(g.is_scalar() || g.shape == x.shape) {
        return Err(TensorError::ShapeMismatch {
            op: "discounted_cumsum",
            lhs: x.shape.clone(),
            rhs: g.shape.clone(),
        });
    }
    let (_, n) = x.last_axis("discounted_cumsum")?;
    let gamma_at = |i: usize| if g.is_scalar() { g.data[0] } else { g.data[i] };
    let mut data = vec![0.0; x.data.len()];
    for (r, row) in x.data.chunks(n).enumerate() {
        let base = r * n;
        let mut next = 0.0;
        for t in (0..n).rev() {
            let y = row[t] + gamma_at(base + t) * next;
            data[base + t] = y;
            next = y;
        }
    }
    Ok(Tensor {
        shape: x.shape.clone(),
        data,
    })
}

/// Plain reverse cumulative sum (used as the oracle for the `g = 1` case).
pub fn reverse_cumsum(x: &Tensor) -> Result<Tensor> {
    let (_, n) = x.last_axis("reverse_cumsum")?;
    let mut data = vec![0.0; x.data.len()];
    for (r, row) in x.data.chunks(n).enumerate() {
        let base = r * n;
        let mut acc = 0.0;
        for t in (0..n).rev() {
            acc += row[t];
            data[base + t] = acc;
        }
    }
    Ok(Tensor {
        shape: x.shape.clone(),
        data,
    })
}

/// `[rows, m] x [m, n] -> [rows, n]`, treating leading axes as rows.
pub fn matmul(a: &Tensor, w: &Tensor) -> Result<Tensor> {
    if a.rank() < 1 || w.rank() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: w.shape.clone(),
        });
    }
    let m = *a.shape.last().unwrap();
    let (wm, n) = (w.shape[0], w.shape[1]);
    if m != wm {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: w.shape.clone(),
        });
    }
    let rows = a.data.len() / m;
    let mut data = vec![0.0; rows * n];
    for r in 0..rows {
        let arow = &a.data[r * m..(r + 1) * m];
        let orow = &mut data[r * n..(r + 1) * n];
        for (k, &av) in arow.iter().enumerate() {
            let wrow = &w.data[k * n..(k + 1) * n];
            for j in 0..n {
                orow[j] += av * wrow[j];
            }
        }
    }
    let mut shape = a.shape.clone();
    *shape.last_mut().unwrap() = n;
    Ok(Tensor { shape, data })
}

/// Broadcast-add a row vector `[n]` to every row of `[rows, n]`.
pub fn add_row(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (_, n) = x.last_axis("add_row")?;
    if b.shape != [n] {
        return Err(TensorError::ShapeMismatch {
            op: "add_row",
            lhs: x.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let mut data = x.data.clone();
    for row in data.chunks_mut(n) {
        for (v, &bv) in row.iter_mut().zip(&b.data) {
            *v += bv;
        }
    }
    Ok(Tensor {
        shape: x.shape.clone(),
        data,
    })
}

/// Concatenate along the last axis; leading shapes must agree.
pub fn concat_last(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ra, na) = a.last_axis("concat_last")?;
    let (rb, nb) = b.last_axis("concat_last")?;
    if ra != rb || a.shape[..a.rank() - 1] != b.shape[..b.rank() - 1] {
        return Err(TensorError::ShapeMismatch {
            op: "concat_last",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    for r in 0..ra {
        data.extend_from_slice(&a.data[r * na..(r + 1) * na]);
        data.extend_from_slice(&b.data[r * nb..(r + 1) * nb]);
    }
    let mut shape = a.shape.clone();
    *shape.last_mut().unwrap() = na + nb;
    Ok(Tensor { shape, data })
}

/// Take `[start, start+len)` of the last axis.
pub fn slice_last(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let (rows, n) = x.last_axis("slice_last")?;
    if start + len > n {
        return Err(TensorError::Contract(format!(
            "slice_last: [{start}, {}) out of axis length {n}",
            start + len
        )));
    }
    let mut data = Vec::with_capacity(rows * len);
    for r in 0..rows {
        data.extend_from_slice(&x.data[r * n + start..r * n + start + len]);
    }
    let mut shape = x.shape.clone();
    *shape.last_mut().unwrap() = len;
    Ok(Tensor { shape, data })
}

/// Short operand description used in numeric-error messages.
pub fn summarize(t: &Tensor) -> String {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut nonfinite = 0usize;
    for &v in &t.data {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        } else {
            nonfinite += 1;
        }
    }
    if nonfinite > 0 {
        format!("shape {:?}, {} non-finite", t.shape, nonfinite)
    } else {
        format!("shape {:?}, range [{lo:.3e}, {hi:.3e}]", t.shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn add_elementwise() {
        let a = Tensor::from_vec(vec![1.0, 2.0]);
        let b = Tensor::from_vec(vec![3.0, 4.0]);
        assert_eq!(add(&a, &b).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn div_eps_at_zero() {
        let a = Tensor::from_vec(vec![1.0]);
        let b = Tensor::from_vec(vec![0.0]);
        let out = div_eps(&a, &b).unwrap();
        assert_relative_eq!(out.data()[0], 1e8, max_relative = 1e-9);
    }

    #[test]
    fn discounted_cumsum_matches_unrolled() {
        let x = Tensor::from_vec(vec![1.0, 1.0, 1.0]);
        let g = Tensor::scalar(0.5);
        let y = discounted_cumsum(&x, &g).unwrap();
        assert_eq!(y.data(), &[1.75, 1.5, 1.0]);
    }

    #[test]
    fn discounted_cumsum_degenerate_gammas() {
        let x = Tensor::from_vec(vec![0.3, -1.0, 2.5, 0.1]);
        let y0 = discounted_cumsum(&x, &Tensor::scalar(0.0)).unwrap();
        assert_eq!(y0.data(), x.data());
        let y1 = discounted_cumsum(&x, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(y1.data(), reverse_cumsum(&x).unwrap().data());
    }

    #[test]
    fn broadcast_matches_tiling() {
        let a = Tensor::scalar(2.5);
        let b = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let tiled = Tensor::new(vec![2, 3], vec![2.5; 6]).unwrap();
        assert_eq!(mul(&a, &b).unwrap(), mul(&tiled, &b).unwrap());
        assert_eq!(sub(&b, &a).unwrap(), sub(&b, &tiled).unwrap());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Tensor::from_vec(vec![1.0, 2.0]);
        let b = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(add(&a, &b).is_err());
    }

    #[test]
    fn reductions_drop_last_axis() {
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(sum_last(&x).unwrap().data(), &[6.0, 15.0]);
        assert_eq!(mean_last(&x).unwrap().shape(), &[2]);
        assert_eq!(mean_all(&x).item(), 3.5);
        assert_eq!(min_last(&x).unwrap().data(), &[1.0, 4.0]);
        assert_eq!(max_last(&x).unwrap().data(), &[3.0, 6.0]);
    }

    #[test]
    fn matmul_identity() {
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(matmul(&x, &eye).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 5.0, 6.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![3.0, 7.0]).unwrap();
        let c = concat_last(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(slice_last(&c, 0, 2).unwrap(), a);
        assert_eq!(slice_last(&c, 2, 1).unwrap(), b);
    }
}
