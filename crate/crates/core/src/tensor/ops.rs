//! Forward kernels and adjoints for every primitive.

use rand::Rng;

use super::graph::{BackwardArgs, Graph, Var};
use super::{split_at_axis, Element, Tensor};
use crate::error::{Error, Result};

/// How an input element is located from an output index under broadcasting.
#[derive(Clone)]
enum Bcast {
    Same,
    Scalar,
    /// Input repeats along leading axes: `i % n`.
    Repeat(usize),
    /// Input stretches along trailing axes: `i / inner`.
    Stretch(usize),
    Map(Vec<usize>),
}

impl Bcast {
    fn new(input: &[usize], out: &[usize]) -> Self {
        let numel: usize = input.iter().product();
        let out_numel: usize = out.iter().product();
        if numel == out_numel {
            return Bcast::Same;
        }
        if numel == 1 {
            return Bcast::Scalar;
        }
        let pad = out.len() - input.len();
        let padded: Vec<usize> = std::iter::repeat_n(1, pad).chain(input.iter().copied()).collect();
        // Leading ones followed by an exact suffix of `out`.
        let first_real = padded.iter().position(|&d| d != 1).unwrap_or(padded.len());
        if padded[first_real..] == out[first_real..] {
            return Bcast::Repeat(numel);
        }
        // Exact prefix of `out` followed by trailing ones.
        let last_real = padded.iter().rposition(|&d| d != 1).map_or(0, |p| p + 1);
        if padded[..last_real] == out[..last_real] {
            return Bcast::Stretch(out[last_real..].iter().product());
        }
        let mut strides = vec![0usize; out.len()];
        let mut acc = 1;
        for ax in (0..out.len()).rev() {
            strides[ax] = if padded[ax] == 1 { 0 } else { acc };
            acc *= padded[ax];
        }
        let mut map = Vec::with_capacity(out_numel);
        let mut counter = vec![0usize; out.len()];
        let mut offset = 0usize;
        for _ in 0..out_numel {
            map.push(offset);
            for ax in (0..out.len()).rev() {
                counter[ax] += 1;
                offset += strides[ax];
                if counter[ax] < out[ax] {
                    break;
                }
                offset -= strides[ax] * counter[ax];
                counter[ax] = 0;
            }
        }
        Bcast::Map(map)
    }

    #[inline(always)]
    fn at(&self, i: usize) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::Scalar => 0,
            Bcast::Repeat(n) => i % n,
            Bcast::Stretch(inner) => i / inner,
            Bcast::Map(m) => m[i],
        }
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        }
    }

    #[inline(always)]
    fn apply<T: Element>(self, x: T, y: T) -> T {
        match self {
            BinOp::Add => x + y,
            BinOp::Sub => x - y,
            BinOp::Mul => x * y,
            BinOp::Div => x / y,
        }
    }
}

/// Strides of a stored `rows × cols` matrix viewed as itself or its transpose.
fn mat_view(cols: usize, trans: bool) -> (isize, isize) {
    if trans {
        (1, cols as isize)
    } else {
        (cols as isize, 1)
    }
}

/// Indices of the `k` largest values; ties go to the lowest index.
pub fn topk_indices<T: Element>(values: &[T], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| {
        values[j]
            .partial_cmp(&values[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    order.truncate(k);
    order
}

fn permute_data<T: Element>(data: &[T], shape: &[usize], axes: &[usize]) -> (Vec<T>, Vec<usize>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut in_strides = vec![1usize; rank];
    for ax in (0..rank.saturating_sub(1)).rev() {
        in_strides[ax] = in_strides[ax + 1] * shape[ax + 1];
    }
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let numel = data.len();
    let mut out = Vec::with_capacity(numel);
    if numel == 0 {
        return (out, out_shape);
    }
    // Innermost output axis is iterated directly for speed.
    let last = rank - 1;
    let inner_len = out_shape[last];
    let inner_stride = strides[last];
    let mut counter = vec![0usize; rank];
    let mut offset = 0usize;
    while out.len() < numel {
        let mut o = offset;
        for _ in 0..inner_len {
            out.push(data[o]);
            o += inner_stride;
        }
        if rank == 1 {
            break;
        }
        for ax in (0..last).rev() {
            counter[ax] += 1;
            offset += strides[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            offset -= strides[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    (out, out_shape)
}

fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

#[inline]
fn gelu_scalar<T: Element>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * x * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
fn gelu_grad<T: Element>(x: T) -> T {
    let cdf = T::from_f64(0.5) * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::from_f64(0.5)).exp() * T::from_f64(0.398_942_280_401_432_7);
    cdf + x * pdf
}

/// Exact (erf-based) GELU.
pub fn gelu<T: Element>(x: T) -> T {
    gelu_scalar(x)
}

/// Numerically stable softmax over the last axis.
pub fn softmax_lastdim<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if let Some(index) = x.first_non_finite() {
        return Err(Error::NonFinite {
            context: "softmax input".into(),
            index,
        });
    }
    let n = *x.shape().last().ok_or_else(|| Error::shape("softmax", "rank-0 input"))?;
    if n == 0 {
        return Err(Error::shape("softmax", "empty last axis"));
    }
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Batched matrix product `op(a)·op(b)` where `op` optionally transposes the
/// last two axes. Either operand may lack batch axes and is then shared.
struct MatmulPlan {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    a_batched: bool,
    b_batched: bool,
    a_cols: usize,
    b_cols: usize,
    out_shape: Vec<usize>,
}

impl MatmulPlan {
    fn new(a: &[usize], b: &[usize], ta: bool, tb: bool) -> Result<Self> {
        if a.len() < 2 || b.len() < 2 {
            return Err(Error::shape("matmul", format!("{a:?} x {b:?}: operands must be rank >= 2")));
        }
        let (ar, ac) = (a[a.len() - 2], a[a.len() - 1]);
        let (br, bc) = (b[b.len() - 2], b[b.len() - 1]);
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Error::shape("matmul", format!("{a:?} x {b:?}: inner extents {k} != {k2}")));
        }
        let ab = &a[..a.len() - 2];
        let bb = &b[..b.len() - 2];
        let batch_shape = if bb.is_empty() {
            ab.to_vec()
        } else if ab.is_empty() || ab == bb {
            bb.to_vec()
        } else {
            return Err(Error::shape("matmul", format!("{a:?} x {b:?}: batch extents differ")));
        };
        let mut out_shape = batch_shape.clone();
        out_shape.extend([m, n]);
        Ok(Self {
            batch: batch_shape.iter().product(),
            m,
            k,
            n,
            a_batched: !ab.is_empty(),
            b_batched: !bb.is_empty(),
            a_cols: ac,
            b_cols: bc,
            out_shape,
        })
    }
}

impl<T: Element> Graph<T> {
    // ---- elementwise -------------------------------------------------------

    fn binary(&mut self, a: Var, b: Var, op: BinOp) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb)
            .unwrap_or_else(|| panic!("{}: cannot broadcast {sa:?} with {sb:?}", op.name()));
        let ia = Bcast::new(&sa, &out_shape);
        let ib = Bcast::new(&sb, &out_shape);
        let numel: usize = out_shape.iter().product();
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let data: Vec<T> = match (&ia, &ib) {
            (Bcast::Same, Bcast::Same) => va.iter().zip(vb).map(|(&x, &y)| op.apply(x, y)).collect(),
            _ => (0..numel).map(|i| op.apply(va[ia.at(i)], vb[ib.at(i)])).collect(),
        };
        let value = Tensor::from_parts(out_shape, data);
        let (na, nb) = (sa.iter().product::<usize>(), sb.iter().product::<usize>());
        self.record(
            op.name(),
            &[a, b],
            value,
            Box::new(move |args: &BackwardArgs<'_, T>| {
                let (x, y) = (args.inputs[0].data(), args.inputs[1].data());
                let g = args.grad;
                let mut ga = vec![T::zero(); na];
                let mut gb = vec![T::zero(); nb];
                for i in 0..g.len() {
                    let (pa, pb) = (ia.at(i), ib.at(i));
                    let (xv, yv, gv) = (x[pa], y[pb], g[i]);
                    match op {
                        BinOp::Add => {
                            ga[pa] = ga[pa] + gv;
                            gb[pb] = gb[pb] + gv;
                        }
                        BinOp::Sub => {
                            ga[pa] = ga[pa] + gv;
                            gb[pb] = gb[pb] - gv;
                        }
                        BinOp::Mul => {
                            ga[pa] = ga[pa] + gv * yv;
                            gb[pb] = gb[pb] + gv * xv;
                        }
                        BinOp::Div => {
                            ga[pa] = ga[pa] + gv / yv;
                            gb[pb] = gb[pb] - gv * xv / (yv * yv);
                        }
                    }
                }
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinOp::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinOp::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinOp::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinOp::Div)
    }

    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    fn unary(
        &mut self,
        x: Var,
        op: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Var {
        let src = self.value(x);
        let value = Tensor::from_parts(src.shape().to_vec(), src.data().iter().map(|&v| f(v)).collect());
        self.record(
            op,
            &[x],
            value,
            Box::new(move |args: &BackwardArgs<'_, T>| {
                let xs = args.inputs[0].data();
                let ys = args.output.data();
                let gx = args
                    .grad
                    .iter()
                    .zip(xs.iter().zip(ys))
                    .map(|(&g, (&xv, &yv))| g * df(xv, yv))
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let s = T::from_f64(s);
        self.unary(x, "scale", move |v| v * s, move |_, _| s)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let s = T::from_f64(s);
        self.unary(x, "add_scalar", move |v| v + s, |_, _| T::one())
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, "neg", |v| -v, |_, _| -T::one())
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, "square", |v| v * v, |v, _| v + v)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, "exp", |v| v.exp(), |_, y| y)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, "log", |v| v.ln(), |v, _| v.recip())
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, "sqrt", |v| v.sqrt(), |_, y| T::from_f64(0.5) / y)
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(x, "sin", |v| v.sin(), |v, _| v.cos())
    }

    pub fn cos(&mut self, x: Var) -> Var {
        self.unary(x, "cos", |v| v.cos(), |v, _| -v.sin())
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(
            x,
            "sigmoid",
            |v| T::one() / (T::one() + (-v).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, "gelu", gelu_scalar, |v, _| gelu_grad(v))
    }

    // ---- shape ---------------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let src = self.value(x);
        assert_eq!(
            shape.iter().product::<usize>(),
            src.numel(),
            "reshape {:?} -> {shape:?}",
            src.shape()
        );
        let value = Tensor::from_parts(shape.to_vec(), src.data().to_vec());
        self.record(
            "reshape",
            &[x],
            value,
            Box::new(|args: &BackwardArgs<'_, T>| vec![Some(args.grad.to_vec())]),
        )
    }

    /// General axis permutation; `axes[i]` is the input axis placed at output axis `i`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Var {
        let src = self.value(x);
        assert_eq!(axes.len(), src.rank(), "permute axes {axes:?} for {:?}", src.shape());
        let (data, out_shape) = permute_data(src.data(), src.shape(), axes);
        let inv = inverse_axes(axes);
        let value = Tensor::from_parts(out_shape.clone(), data);
        self.record(
            "permute",
            &[x],
            value,
            Box::new(move |args: &BackwardArgs<'_, T>| {
                let (g, _) = permute_data(args.grad, &out_shape, &inv);
                vec![Some(g)]
            }),
        )
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Var {
        let rank = self.value(x).rank();
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(x, &axes)
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let src = self.value(x);
        let (outer, n, inner) = split_at_axis(src.shape(), axis);
        assert!(start + len <= n, "narrow {start}+{len} beyond extent {n}");
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&src.data()[base..base + len * inner]);
        }
        let mut shape = src.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::from_parts(shape, data);
        self.record(
            "narrow",
            &[x],
            value,
            Box::new(move |args: &BackwardArgs<'_, T>| {
                let mut gx = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    let src = o * len * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&args.grad[src..src + len * inner]);
                }
                vec![Some(gx)]
            }),
        )
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Var {
        assert!(!xs.is_empty(), "concat of nothing");
        let first = self.shape(xs[0]).to_vec();
        let widths: Vec<usize> = xs
            .iter()
            .map(|&v| {
                let s = self.shape(v);
                assert!(
                    s.len() == first.len()
                        && s.iter().enumerate().all(|(i, &d)| i == axis || d == first[i]),
                    "concat shapes {first:?} and {s:?} on axis {axis}"
                );
                s[axis]
            })
            .collect();
        let total: usize = widths.iter().sum();
        let (outer, _, inner) = split_at_axis(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &w) in xs.iter().zip(&widths) {
                let src = self.value(v).data();
                data.extend_from_slice(&src[o * w * inner..(o + 1) * w * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::from_parts(shape, data);
        self.record(
            "concat",
            xs,
            value,
            Box::new(move |args: &BackwardArgs<'_, T>| {
                let mut grads: Vec<Vec<T>> = widths.iter().map(|&w| Vec::with_capacity(outer * w * inner)).collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (g, &w) in grads.iter_mut().zip(&widths) {
                        g.extend_from_slice(&args.grad[pos..pos + w * inner]);
                        pos += w * inner;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        )
    }

    /// Rows of `x` (viewed as `[n, rest…]`) at `indices`.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Var {
        let src = self.value(x);
        let n = src.shape()[0];
        let inner = src.numel() / n.max(1);
        let mut data = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            data.extend_from_slice(&src.data()[i * inner..(i + 1) * inner]);
        }
        let mut shape = src.shape().to_vec();
        shape[0] = indices.len();
        let indices = indices.to_vec();
        let value = Tensor::from_parts(shape, data);
        self.record(
            "gather_rows",
            &[x],
            value,
            Box::new(move |args: &BackwardArgs<'_, T>| {
                let mut gx = vec![T::zero(); n * inner];
                for (j, &i) in indices.iter().enumerate() {
                    let src = &args.grad[j * inner..(j + 1) * inner];
                    for (d, &s) in gx[i * inner..(i + 1) * inner].iter_mut().zip(src) {
                        *d = *d + s;
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Sums each `parts[p]` into rows `indices[p]` of a zero `[rows, rest…]` tensor.
    pub fn scatter_rows_sum(&mut self, rows: usize, parts: &[Var], indices: &[Vec<usize>]) -> Var {
        assert_eq!(parts.len(), indices.len());
        assert!(!parts.is_empty(), "scatter of nothing");
        let rest: Vec<usize> = self.shape(parts[0])[1..].to_vec();
        let inner: usize = rest.iter().product();
        let mut data = vec![T::zero(); rows * inner];
        for (&p, idx) in parts.iter().zip(indices) {
            let src = self.value(p);
            assert_eq!(src.shape()[0], idx.len(), "scatter part rows vs indices");
            assert_eq!(&src.shape()[1..], &rest[..], "scatter part trailing shape");
            for (j, &i) in idx.iter().enumerate() {
                for (d, &s) in data[i * inner..(i + 1) * inner]
                    .iter_mut()
                    .zip(&src.data()[j * inner..(j + 1) * inner])
                {
                    *d = *d + s;
                }
            }
        }
        let mut shape = vec![rows];
        shape.extend(&rest);
        let indices = indices.to_vec();
        let value = Tensor::from_parts(shape, data);
        self.record(
            "scatter_rows_sum",
            parts,
            value,
            Box::new(move |args: &BackwardArgs<'_, T>| {
                indices
                    .iter()
                    .map(|idx| {
                        let mut g = Vec::with_capacity(idx.len() * inner);
                        for &i in idx {
                            g.extend_from_slice(&args.grad[i * inner..(i + 1) * inner]);
                        }
                        Some(g)
                    })
                    .collect()
            }),
        )
    }

    /// Elements `x[r, c]` of a matrix for each `(r, c)` in `at`, as a vector.
    pub fn gather_elems(&mut self, x: Var, at: &[(usize, usize)]) -> Var {
        let src = self.value(x);
        assert_eq!(src.rank(), 2, "gather_elems needs a matrix");
        let (rows, cols) = (src.shape()[0], src.shape()[1]);
        let data = at.iter().map(|&(r, c)| src.data()[r * cols + c]).collect();
        let at = at.to_vec();
        let value = Tensor::from_parts(vec![at.len()], data);
        self.record(
            "gather_elems",
            &[x],
            value,
            Box::new(move |args: &BackwardArgs<'_, T>| {
                let mut gx = vec![T::zero(); rows * cols];
                for (&(r, c), &g) in at.iter().zip(args.grad) {
                    gx[r * cols + c] = gx[r * cols + c] + g;
                }
                vec![Some(gx)]
            }),
        )
    }

    // ---- reductions ------------------------------------------------------------

    pub fn sum_all(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let n = src.numel();
        let value = Tensor::scalar(src.data().iter().copied().sum());
        self.record(
            "sum_all",
            &[x],
            value,
            Box::new(move |args: &BackwardArgs<'_, T>| vec![Some(vec![args.grad[0]; n])]),
        )
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Var {
        let src = self.value(x);
        let (outer, n, inner) = split_at_axis(src.shape(), axis);
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let row = &src.data()[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (d, &v) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d = *d + v;
                }
            }
        }
        let mut shape = src.shape().to_vec();
        if keepdim {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
        }
        let value = Tensor::from_parts(shape, data);
        self.record(
            "sum_axis",
            &[x],
            value,
            Box::new(move |args: &BackwardArgs<'_, T>| {
                let mut gx = Vec::with_capacity(outer * n * inner);
                for o in 0..outer {
                    for _ in 0..n {
                        gx.extend_from_slice(&args.grad[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Var {
        let n = self.shape(x)[axis];
        let s = self.sum_axis(x, axis, keepdim);
        self.scale(s, 1.0 / n as f64)
    }

    /// Population variance along the last axis, keeping the axis with extent 1.
    pub fn var_lastdim(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let n = *src.shape().last().expect("rank >= 1");
        let nt = T::from_f64(n as f64);
        let data = src
            .data()
            .chunks(n)
            .map(|row| {
                let mean = row.iter().copied().sum::<T>() / nt;
                row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nt
            })
            .collect();
        let mut shape = src.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        let value = Tensor::from_parts(shape, data);
        self.record(
            "var_lastdim",
            &[x],
            value,
            Box::new(move |args: &BackwardArgs<'_, T>| {
                let xs = args.inputs[0].data();
                let two_over_n = T::from_f64(2.0) / nt;
                let mut gx = Vec::with_capacity(xs.len());
                for (row, &g) in xs.chunks(n).zip(args.grad) {
                    let mean = row.iter().copied().sum::<T>() / nt;
                    gx.extend(row.iter().map(|&v| g * two_over_n * (v - mean)));
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Softmax over the last axis; rejects non-finite inputs.
    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let value = softmax_lastdim(self.value(x))?;
        let n = *value.shape().last().unwrap();
        Ok(self.record(
            "softmax",
            &[x],
            value,
            Box::new(move |args: &BackwardArgs<'_, T>| {
                let ys = args.output.data();
                let mut gx = Vec::with_capacity(ys.len());
                for (y, g) in ys.chunks(n).zip(args.grad.chunks(n)) {
                    let dot: T = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
                    gx.extend(y.iter().zip(g).map(|(&yv, &gv)| yv * (gv - dot)));
                }
                vec![Some(gx)]
            }),
        ))
    }

    // ---- linear algebra ------------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a)·op(b)` over the last two axes, with optional transposes.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let plan = MatmulPlan::new(self.shape(a), self.shape(b), ta, tb).unwrap_or_else(|e| panic!("{e}"));
        let MatmulPlan {
            batch,
            m,
            k,
            n,
            a_batched,
            b_batched,
            a_cols,
            b_cols,
            ..
        } = plan;
        let (rsa, csa) = mat_view(a_cols, ta);
        let (rsb, csb) = mat_view(b_cols, tb);
        let mut out = vec![T::zero(); batch * m * n];
        {
            let va = self.value(a).data();
            let vb = self.value(b).data();
            if !b_batched && !ta {
                // Shared right operand: one tall product.
                let rows = if a_batched { batch * m } else { m };
                unsafe {
                    T::gemm(
                        rows, k, n, T::one(), va.as_ptr(), rsa, csa, vb.as_ptr(), rsb, csb,
                        T::zero(), out.as_mut_ptr(), n as isize, 1,
                    );
                }
                if !a_batched {
                    for bi in 1..batch {
                        out.copy_within(0..m * n, bi * m * n);
                    }
                }
            } else {
                for bi in 0..batch {
                    let ao = if a_batched { bi * m * k } else { 0 };
                    let bo = if b_batched { bi * k * n } else { 0 };
                    unsafe {
                        T::gemm(
                            m, k, n, T::one(), va[ao..].as_ptr(), rsa, csa, vb[bo..].as_ptr(), rsb, csb,
                            T::zero(), out[bi * m * n..].as_mut_ptr(), n as isize, 1,
                        );
                    }
                }
            }
        }
        let value = Tensor::from_parts(plan.out_shape, out);
        self.record(
            "matmul",
            &[a, b],
            value,
            Box::new(move |args: &BackwardArgs<'_, T>| {
                let va = args.inputs[0].data();
                let vb = args.inputs[1].data();
                let g = args.grad;
                let mut ga = vec![T::zero(); va.len()];
                let mut gb = vec![T::zero(); vb.len()];
                let (nn, kk, mm) = (n as isize, k as isize, m as isize);
                if !b_batched && !ta && a_batched {
                    let rows = batch * m;
                    unsafe {
                        // dA = dC · op(B)^T
                        T::gemm(rows, n, k, T::one(), g.as_ptr(), nn, 1, vb.as_ptr(), csb, rsb, T::zero(), ga.as_mut_ptr(), kk, 1);
                        if tb {
                            // dB[n,k] = dC^T · A
                            T::gemm(n, rows, k, T::one(), g.as_ptr(), 1, nn, va.as_ptr(), rsa, csa, T::zero(), gb.as_mut_ptr(), kk, 1);
                        } else {
                            // dB[k,n] = A^T · dC
                            T::gemm(k, rows, n, T::one(), va.as_ptr(), csa, rsa, g.as_ptr(), nn, 1, T::zero(), gb.as_mut_ptr(), nn, 1);
                        }
                    }
                    return vec![Some(ga), Some(gb)];
                }
                for bi in 0..batch {
                    let ao = if a_batched { bi * m * k } else { 0 };
                    let bo = if b_batched { bi * k * n } else { 0 };
                    let go = bi * m * n;
                    let beta_a = if a_batched || bi == 0 { T::zero() } else { T::one() };
                    let beta_b = if b_batched || bi == 0 { T::zero() } else { T::one() };
                    unsafe {
                        if ta {
                            // stored A is [k, m]: dA = op(B) · dC^T
                            T::gemm(k, n, m, T::one(), vb[bo..].as_ptr(), rsb, csb, g[go..].as_ptr(), 1, nn, beta_a, ga[ao..].as_mut_ptr(), mm, 1);
                        } else {
                            T::gemm(m, n, k, T::one(), g[go..].as_ptr(), nn, 1, vb[bo..].as_ptr(), csb, rsb, beta_a, ga[ao..].as_mut_ptr(), kk, 1);
                        }
                        if tb {
                            // stored B is [n, k]: dB = dC^T · op(A)
                            T::gemm(n, m, k, T::one(), g[go..].as_ptr(), 1, nn, va[ao..].as_ptr(), rsa, csa, beta_b, gb[bo..].as_mut_ptr(), kk, 1);
                        } else {
                            T::gemm(k, m, n, T::one(), va[ao..].as_ptr(), csa, rsa, g[go..].as_ptr(), nn, 1, beta_b, gb[bo..].as_mut_ptr(), nn, 1);
                        }
                    }
                }
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    // ---- convolutions ------------------------------------------------------------

    /// Depthwise convolution over `[…, channels, length]` with zero "same" padding.
    pub fn depthwise_conv1d(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() < 2 || ks.len() != 2 {
            return Err(Error::shape("depthwise_conv1d", format!("x {xs:?}, kernel {ks:?}")));
        }
        let (c, len) = (xs[xs.len() - 2], xs[xs.len() - 1]);
        let kw = ks[1];
        if ks[0] != c {
            return Err(Error::shape("depthwise_conv1d", format!("{c} channels vs kernel {ks:?}")));
        }
        if kw % 2 == 0 {
            return Err(Error::config(format!("depthwise_conv1d: kernel width {kw} must be odd")));
        }
        let pad = kw / 2;
        let batch: usize = xs[..xs.len() - 2].iter().product();
        let mut out = vec![T::zero(); batch * c * len];
        {
            let vx = self.value(x).data();
            let vk = self.value(kernel).data();
            for bc in 0..batch * c {
                let ch = bc % c;
                let w = &vk[ch * kw..(ch + 1) * kw];
                let src = &vx[bc * len..(bc + 1) * len];
                let dst = &mut out[bc * len..(bc + 1) * len];
                for (j, &wj) in w.iter().enumerate() {
                    // out[t] += w[j] * x[t + j - pad]
                    let lo = pad.saturating_sub(j);
                    let hi = (len + pad).saturating_sub(j).min(len);
                    for t in lo..hi {
                        dst[t] = dst[t] + wj * src[t + j - pad];
                    }
                }
            }
        }
        let value = Tensor::from_parts(xs.clone(), out);
        Ok(self.record(
            "depthwise_conv1d",
            &[x, kernel],
            value,
            Box::new(move |args: &BackwardArgs<'_, T>| {
                let vx = args.inputs[0].data();
                let vk = args.inputs[1].data();
                let g = args.grad;
                let mut gx = vec![T::zero(); vx.len()];
                let mut gk = vec![T::zero(); vk.len()];
                for bc in 0..batch * c {
                    let ch = bc % c;
                    let src = &vx[bc * len..(bc + 1) * len];
                    let gs = &g[bc * len..(bc + 1) * len];
                    for j in 0..kw {
                        let wj = vk[ch * kw + j];
                        let lo = pad.saturating_sub(j);
                        let hi = (len + pad).saturating_sub(j).min(len);
                        let mut acc = T::zero();
                        for t in lo..hi {
                            let xi = t + j - pad;
                            gx[bc * len + xi] = gx[bc * len + xi] + wj * gs[t];
                            acc = acc + src[xi] * gs[t];
                        }
                        gk[ch * kw + j] = gk[ch * kw + j] + acc;
                    }
                }
                vec![Some(gx), Some(gk)]
            }),
        ))
    }

    /// Transposed convolution `[…, c_in, s] -> […, c_out, s·stride]` with kernel
    /// `[c_in, c_out, width]`. Only `stride == width` (non-overlapping) is supported.
    pub fn conv_transpose1d(&mut self, x: Var, kernel: Var, stride: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() < 2 || ks.len() != 3 || ks[0] != xs[xs.len() - 2] {
            return Err(Error::shape("conv_transpose1d", format!("x {xs:?}, kernel {ks:?}")));
        }
        let (cin, s) = (xs[xs.len() - 2], xs[xs.len() - 1]);
        let (cout, width) = (ks[1], ks[2]);
        if stride != width {
            return Err(Error::config(format!(
                "conv_transpose1d: stride {stride} must equal kernel width {width}"
            )));
        }
        let batch: usize = xs[..xs.len() - 2].iter().product();
        let cols = cout * width;
        let out_len = s * width;
        let mut out = vec![T::zero(); batch * cout * out_len];
        let mut tmp = vec![T::zero(); cols * s];
        {
            let vx = self.value(x).data();
            let vk = self.value(kernel).data();
            for bi in 0..batch {
                // tmp[(co,j), s] = Σ_ci W[ci,(co,j)] · X[ci, s]
                unsafe {
                    T::gemm(
                        cols, cin, s, T::one(), vk.as_ptr(), 1, cols as isize,
                        vx[bi * cin * s..].as_ptr(), s as isize, 1, T::zero(), tmp.as_mut_ptr(), s as isize, 1,
                    );
                }
                let dst = &mut out[bi * cout * out_len..(bi + 1) * cout * out_len];
                for co in 0..cout {
                    for j in 0..width {
                        let row = &tmp[(co * width + j) * s..(co * width + j + 1) * s];
                        for (si, &v) in row.iter().enumerate() {
                            dst[co * out_len + si * width + j] = v;
                        }
                    }
                }
            }
        }
        let mut shape = xs[..xs.len() - 2].to_vec();
        shape.extend([cout, out_len]);
        let value = Tensor::from_parts(shape, out);
        Ok(self.record(
            "conv_transpose1d",
            &[x, kernel],
            value,
            Box::new(move |args: &BackwardArgs<'_, T>| {
                let vx = args.inputs[0].data();
                let vk = args.inputs[1].data();
                let mut gx = vec![T::zero(); vx.len()];
                let mut gk = vec![T::zero(); vk.len()];
                let mut gt = vec![T::zero(); cols * s];
                for bi in 0..batch {
                    let g = &args.grad[bi * cout * out_len..(bi + 1) * cout * out_len];
                    for co in 0..cout {
                        for j in 0..width {
                            for si in 0..s {
                                gt[(co * width + j) * s + si] = g[co * out_len + si * width + j];
                            }
                        }
                    }
                    let beta = if bi == 0 { T::zero() } else { T::one() };
                    unsafe {
                        // dX[ci, s] = Σ W[ci, r] · G[r, s]
                        T::gemm(
                            cin, cols, s, T::one(), vk.as_ptr(), cols as isize, 1, gt.as_ptr(), s as isize, 1,
                            T::zero(), gx[bi * cin * s..].as_mut_ptr(), s as isize, 1,
                        );
                        // dW[ci, r] += Σ_s X[ci, s] · G[r, s]
                        T::gemm(
                            cin, s, cols, T::one(), vx[bi * cin * s..].as_ptr(), s as isize, 1, gt.as_ptr(), 1, s as isize,
                            beta, gk.as_mut_ptr(), cols as isize, 1,
                        );
                    }
                }
                vec![Some(gx), Some(gk)]
            }),
        ))
    }

    /// Kernel-1 convolution `[…, c_in, len] -> […, c_out, len]` with weight `[c_out, c_in]`.
    pub fn pointwise_conv1d(&mut self, x: Var, weight: Var) -> Var {
        self.matmul(weight, x)
    }

    // ---- positional ------------------------------------------------------------

    /// Rotary embedding over `[…, seq, d]` with interleaved pairs `(2j, 2j+1)`
    /// rotated by `(offset + pos)·base^(-2j/d)`.
    pub fn rope(&mut self, x: Var, base: f64, offset: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("rope", format!("{shape:?}")));
        }
        let (seq, d) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        if d % 2 != 0 {
            return Err(Error::config(format!("rope: head dimension {d} must be even")));
        }
        let half = d / 2;
        let mut cos = Vec::with_capacity(seq * half);
        let mut sin = Vec::with_capacity(seq * half);
        for p in 0..seq {
            for j in 0..half {
                let freq = base.powf(-2.0 * j as f64 / d as f64);
                let angle = (offset + p) as f64 * freq;
                cos.push(T::from_f64(angle.cos()));
                sin.push(T::from_f64(angle.sin()));
            }
        }
        let rotate = move |src: &[T], sign: T| -> Vec<T> {
            let mut out = vec![T::zero(); src.len()];
            for (row_idx, (row, dst)) in src.chunks(d).zip(out.chunks_mut(d)).enumerate() {
                let p = row_idx % seq;
                for j in 0..half {
                    let (c, s) = (cos[p * half + j], sign * sin[p * half + j]);
                    let (a, b) = (row[2 * j], row[2 * j + 1]);
                    dst[2 * j] = a * c - b * s;
                    dst[2 * j + 1] = a * s + b * c;
                }
            }
            out
        };
        let value = Tensor::from_parts(shape, rotate(self.value(x).data(), T::one()));
        Ok(self.record(
            "rope",
            &[x],
            value,
            Box::new(move |args: &BackwardArgs<'_, T>| vec![Some(rotate(args.grad, -T::one()))]),
        ))
    }

    // ---- stochastic ------------------------------------------------------------

    /// Inverted dropout; identity outside training or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        if !self.is_training() || p <= 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let scale = T::from_f64(1.0 / keep);
        let n = self.value(x).numel();
        let mask: Vec<T> = (0..n)
            .map(|_| if self.rng.random::<f64>() < keep { scale } else { T::zero() })
            .collect();
        self.apply_mask(x, mask, 1, "dropout")
    }

    /// Stochastic depth: zeroes whole samples (leading-axis entries) with
    /// probability `p`, rescaling survivors. Identity outside training.
    pub fn drop_path(&mut self, x: Var, p: f64) -> Var {
        if !self.is_training() || p <= 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let scale = T::from_f64(1.0 / keep);
        let shape = self.shape(x).to_vec();
        let samples = shape[0];
        let inner = shape[1..].iter().product();
        let mask: Vec<T> = (0..samples)
            .map(|_| if self.rng.random::<f64>() < keep { scale } else { T::zero() })
            .collect();
        self.apply_mask(x, mask, inner, "drop_path")
    }

    fn apply_mask(&mut self, x: Var, mask: Vec<T>, run: usize, op: &'static str) -> Var {
        let src = self.value(x);
        let data = src
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * mask[i / run])
            .collect();
        let value = Tensor::from_parts(src.shape().to_vec(), data);
        self.record(
            op,
            &[x],
            value,
            Box::new(move |args: &BackwardArgs<'_, T>| {
                vec![Some(args.grad.iter().enumerate().map(|(i, &g)| g * mask[i / run]).collect())]
            }),
        )
    }

    // ---- losses ------------------------------------------------------------

    /// Mean Huber loss between `pred` and `target` (same shape).
    pub fn huber(&mut self, pred: Var, target: Var, delta: f64) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::shape(
                "huber",
                format!("{:?} vs {:?}", self.shape(pred), self.shape(target)),
            ));
        }
        let d = T::from_f64(delta);
        let half = T::from_f64(0.5);
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let n = p.len();
        let total: T = p
            .iter()
            .zip(t)
            .map(|(&pv, &tv)| {
                let e = (tv - pv).abs();
                if e <= d {
                    half * e * e
                } else {
                    d * (e - half * d)
                }
            })
            .sum();
        let value = Tensor::scalar(total / T::from_f64(n as f64));
        Ok(self.record(
            "huber",
            &[pred, target],
            value,
            Box::new(move |args: &BackwardArgs<'_, T>| {
                let (p, t) = (args.inputs[0].data(), args.inputs[1].data());
                let scale = args.grad[0] / T::from_f64(n as f64);
                // d/dpred of the per-element loss, e = pred - target
                let gp: Vec<T> = p
                    .iter()
                    .zip(t)
                    .map(|(&pv, &tv)| {
                        let e = pv - tv;
                        let de = if e.abs() <= d { e } else { d * e.signum() };
                        scale * de
                    })
                    .collect();
                let gt = gp.iter().map(|&v| -v).collect();
                vec![Some(gp), Some(gt)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn broadcast_modes() {
        let mut g = Graph::<f64>::inference();
        let a = g.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let row = g.constant(t(&[3], &[10., 20., 30.]));
        let col = g.constant(t(&[2, 1], &[100., 200.]));
        let mid = g.constant(t(&[2, 1, 2], &[1., 2., 3., 4.]));
        let r = g.add(a, row);
        assert_eq!(g.value(r).data(), &[11., 22., 33., 14., 25., 36.]);
        let c = g.add(a, col);
        assert_eq!(g.value(c).data(), &[101., 102., 103., 204., 205., 206.]);
        let wide = g.constant(t(&[1, 3, 1], &[0., 10., 20.]));
        let m = g.add(mid, wide);
        assert_eq!(g.shape(m), &[2, 3, 2]);
        assert_eq!(
            g.value(m).data(),
            &[1., 2., 11., 12., 21., 22., 3., 4., 13., 14., 23., 24.]
        );
    }

    #[test]
    fn permute_roundtrip() {
        let mut g = Graph::<f64>::inference();
        let x = g.constant(t(&[2, 3, 4], &(0..24).map(f64::from).collect::<Vec<_>>()));
        let p = g.permute(x, &[2, 0, 1]);
        assert_eq!(g.shape(p), &[4, 2, 3]);
        // out[i, j, k] = x[j, k, i]
        assert_eq!(g.value(p).data()[1 * 6 + 1 * 3 + 2], (1 * 12 + 2 * 4 + 1) as f64);
        let back = g.permute(p, &[1, 2, 0]);
        assert_eq!(g.value(back).data(), g.value(x).data());
    }

    #[test]
    fn matmul_variants_agree() {
        let mut g = Graph::<f64>::inference();
        let a = g.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let b = g.constant(t(&[3, 2], &[7., 8., 9., 10., 11., 12.]));
        let c = g.matmul(a, b);
        assert_eq!(g.value(c).data(), &[58., 64., 139., 154.]);
        let at = g.transpose(a);
        let bt = g.transpose(b);
        let c2 = g.matmul_t(at, bt, true, true);
        assert_eq!(g.value(c2).data(), &[58., 64., 139., 154.]);
    }

    #[test]
    fn topk_prefers_lowest_index_on_ties() {
        assert_eq!(topk_indices(&[0.25f64, 0.25, 0.25, 0.25], 2), vec![0, 1]);
        assert_eq!(topk_indices(&[0.1f64, 0.5, 0.2, 0.5], 2), vec![1, 3]);
    }

    #[test]
    fn dropout_is_identity_at_inference() {
        let mut g = Graph::<f64>::new(false, 1);
        let x = g.constant(t(&[4], &[1., 2., 3., 4.]));
        assert_eq!(g.dropout(x, 0.5), x);
        assert_eq!(g.drop_path(x, 0.5), x);
    }
}
