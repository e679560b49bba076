use std::fmt::Debug;

use super::{Real, Tensor};
use crate::error::{Error, Result};
use crate::rng::Stream;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub usize);

/// User-defined differentiable operation.
pub trait CustomOp<T: Real>: Debug {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;
    /// Gradient with respect to each input, given the output gradient.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &Tensor<T>,
    ) -> Vec<Tensor<T>>;
}

#[derive(Debug)]
enum Op<T: Real> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        cols: Vec<T>,
    },
    Relu {
        x: Var,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Reshape {
        x: Var,
    },
    ConcatCols {
        a: Var,
        b: Var,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: T,
    },
    AddScalar {
        x: Var,
    },
    Mse {
        a: Var,
        b: Var,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp<T>>,
    },
}

#[derive(Debug)]
struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only tape. Nodes are stored in creation order, which is a
/// topological order, so backward is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, else 1/(1-p).
pub fn dropout_mask<T: Real>(n: usize, p: f64, s: &mut Stream) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - p));
    (0..n)
        .map(|_| if s.uniform() < p { T::zero() } else { keep })
        .collect()
}

fn dims2<T>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    match t.shape.as_slice() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Shape(format!("{what} expects a matrix, got {s:?}"))),
    }
}

fn dims4<T>(t: &Tensor<T>, what: &str) -> Result<(usize, usize, usize, usize)> {
    match t.shape.as_slice() {
        [b, c, h, w] => Ok((*b, *c, *h, *w)),
        s => Err(Error::Shape(format!("{what} expects B×C×H×W, got {s:?}"))),
    }
}

/// Unfolds one C×H×W image into a (C·9)×(H·W) patch matrix, zero padded.
fn im2col<T: Real>(img: &[T], c: usize, h: usize, w: usize, out: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ch * 9 + ky * 3 + kx) * hw;
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    for x in 0..w {
                        let sx = x as isize + kx as isize - 1;
                        out[row + y * w + x] =
                            if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                img[ch * hw + sy as usize * w + sx as usize]
                            } else {
                                T::zero()
                            };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], c: usize, h: usize, w: usize, img: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ch * 9 + ky * 3 + kx) * hw;
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy as usize >= h {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + kx as isize - 1;
                        if sx >= 0 && (sx as usize) < w {
                            let i = ch * hw + sy as usize * w + sx as usize;
                            img[i] = img[i] + col[row + y * w + x];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Same-padding 3×3 cross-correlation.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (bn, c, h, wd) = dims4(self.value(x), "conv2d input")?;
        let (f, wc, kh, kw) = dims4(self.value(w), "conv2d kernels")?;
        if wc != c || kh != 3 || kw != 3 {
            return Err(Error::Shape(format!(
                "kernels {:?} do not fit {c} input channels",
                self.value(w).shape
            )));
        }
        if self.value(b).shape != [f] {
            return Err(Error::Shape(format!(
                "bias {:?} for {f} filters",
                self.value(b).shape
            )));
        }
        let hw = h * wd;
        let k = c * 9;
        let mut cols = vec![T::zero(); bn * k * hw];
        let mut out = vec![T::zero(); bn * f * hw];
        {
            let xv = &self.value(x).data;
            let wv = &self.value(w).data;
            let bv = &self.value(b).data;
            for i in 0..bn {
                let col = &mut cols[i * k * hw..(i + 1) * k * hw];
                im2col(&xv[i * c * hw..(i + 1) * c * hw], c, h, wd, col);
                let o = &mut out[i * f * hw..(i + 1) * f * hw];
                for (fi, row) in o.chunks_mut(hw).enumerate() {
                    row.fill(bv[fi]);
                }
                T::gemm(f, k, hw, wv, false, col, false, T::one(), o);
            }
        }
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(
            Tensor::new(&[bn, f, h, wd], out)?,
            Op::Conv2d { x, w, b, cols },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Tensor {
            shape: v.shape.clone(),
            data: v
                .data
                .iter()
                .map(|&a| if a > T::zero() { a } else { T::zero() })
                .collect(),
        };
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu { x }, rg)
    }

    /// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (bn, c, h, w) = dims4(self.value(x), "maxpool2")?;
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(Error::Shape(format!(
                "maxpool2 needs at least 2×2 input, got {h}×{w}"
            )));
        }
        let xv = &self.value(x).data;
        let mut out = Vec::with_capacity(bn * c * oh * ow);
        let mut argmax = Vec::with_capacity(bn * c * oh * ow);
        for plane in 0..bn * c {
            let base = plane * h * w;
            for y in 0..oh {
                for xx in 0..ow {
                    let cand = [
                        base + 2 * y * w + 2 * xx,
                        base + 2 * y * w + 2 * xx + 1,
                        base + (2 * y + 1) * w + 2 * xx,
                        base + (2 * y + 1) * w + 2 * xx + 1,
                    ];
                    let mut best = cand[0];
                    for &i in &cand[1..] {
                        if xv[i] > xv[best] {
                            best = i;
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::new(&[bn, c, oh, ow], out)?,
            Op::MaxPool2 { x, argmax },
            rg,
        ))
    }

    /// Affine map `x·w + b` for x: m×k, w: k×n, b: n.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(x), "dense input")?;
        let (wk, n) = dims2(self.value(w), "dense weight")?;
        if wk != k || self.value(b).shape != [n] {
            return Err(Error::Shape(format!(
                "dense: input {:?}, weight {:?}, bias {:?}",
                self.value(x).shape,
                self.value(w).shape,
                self.value(b).shape
            )));
        }
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(&self.value(b).data);
        }
        T::gemm(
            m,
            k,
            n,
            &self.value(x).data,
            false,
            &self.value(w).data,
            false,
            T::one(),
            &mut out,
        );
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::Dense { x, w, b }, rg))
    }

    /// Multiplies by a precomputed mask (see [`dropout_mask`]).
    pub fn dropout(&mut self, x: Var, mask: Vec<T>) -> Result<Var> {
        let v = self.value(x);
        if mask.len() != v.numel() {
            return Err(Error::Shape(format!(
                "dropout mask {} for {} values",
                mask.len(),
                v.numel()
            )));
        }
        let out = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().zip(&mask).map(|(&a, &m)| a * m).collect(),
        };
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Dropout { x, mask }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let out = Tensor::new(shape, v.data.clone())?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape { x }, rg))
    }

    /// Flattens all but the leading dimension.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = &self.value(x).shape;
        if s.is_empty() {
            return Err(Error::Shape("cannot flatten a scalar".into()));
        }
        let b = s[0];
        let rest = s[1..].iter().product();
        self.reshape(x, &[b, rest])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = dims2(self.value(a), "concat")?;
        let (mb, kb) = dims2(self.value(b), "concat")?;
        if m != mb {
            return Err(Error::Shape(format!("concat rows {m} vs {mb}")));
        }
        let (av, bv) = (&self.value(a).data, &self.value(b).data);
        let mut out = Vec::with_capacity(m * (ka + kb));
        for i in 0..m {
            out.extend_from_slice(&av[i * ka..(i + 1) * ka]);
            out.extend_from_slice(&bv[i * kb..(i + 1) * kb]);
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor::new(&[m, ka + kb], out)?,
            Op::ConcatCols { a, b },
            rg,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, k) = dims2(self.value(x), "slice_cols")?;
        if start + len > k {
            return Err(Error::Shape(format!(
                "columns {start}..{} of {k}",
                start + len
            )));
        }
        let xv = &self.value(x).data;
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&xv[i * k + start..i * k + start + len]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(&[m, len], out)?, Op::SliceCols { x, start }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape != self.value(b).shape {
            return Err(Error::Shape(format!(
                "add {:?} + {:?}",
                self.value(a).shape,
                self.value(b).shape
            )));
        }
        let out = Tensor {
            shape: self.value(a).shape.clone(),
            data: self
                .value(a)
                .data
                .iter()
                .zip(&self.value(b).data)
                .map(|(&p, &q)| p + q)
                .collect(),
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let v = self.value(x);
        let out = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|&a| a * c).collect(),
        };
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale { x, c }, rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let v = self.value(x);
        let out = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|&a| a + c).collect(),
        };
        let rg = self.rg(&[x]);
        self.push(out, Op::AddScalar { x }, rg)
    }

    /// Mean squared difference, a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.numel() != bv.numel() || av.numel() == 0 {
            return Err(Error::Shape(format!(
                "mse over {} and {} values",
                av.numel(),
                bv.numel()
            )));
        }
        let m = T::of(av.numel() as f64);
        let s = av
            .data
            .iter()
            .zip(&bv.data)
            .map(|(&p, &q)| (p - q) * (p - q))
            .sum::<T>()
            / m;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::scalar(s), Op::Mse { a, b }, rg))
    }

    pub fn custom(&mut self, inputs: &[Var], op: Box<dyn CustomOp<T>>) -> Result<Var> {
        let vals: Vec<&Tensor<T>> = inputs.iter().map(|v| self.value(*v)).collect();
        let out = op.forward(&vals)?;
        let rg = self.rg(inputs);
        Ok(self.push(
            out,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Gradients exist only for nodes that
    /// require them.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor {
            shape: self.value(loss).shape.clone(),
            data: vec![T::one()],
        });
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(&self.nodes[v.0].value.shape));
        f(&mut slot.data);
    }

    fn propagate(
        &self,
        op: &Op<T>,
        out: &Tensor<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let gd = &g.data;
        match op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, cols } => {
                let xs = &self.value(*x).shape;
                let (bn, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                let f = self.value(*w).shape[0];
                let hw = h * wd;
                let k = c * 9;
                self.accumulate(grads, *b, |db| {
                    for i in 0..bn {
                        for (fi, d) in db.iter_mut().enumerate() {
                            let row = &gd[(i * f + fi) * hw..(i * f + fi + 1) * hw];
                            *d = *d + row.iter().copied().sum::<T>();
                        }
                    }
                });
                self.accumulate(grads, *w, |dw| {
                    for i in 0..bn {
                        let go = &gd[i * f * hw..(i + 1) * f * hw];
                        let col = &cols[i * k * hw..(i + 1) * k * hw];
                        T::gemm(f, hw, k, go, false, col, true, T::one(), dw);
                    }
                });
                let wv = &self.value(*w).data;
                self.accumulate(grads, *x, |dx| {
                    let mut dcol = vec![T::zero(); k * hw];
                    for i in 0..bn {
                        let go = &gd[i * f * hw..(i + 1) * f * hw];
                        T::gemm(k, f, hw, wv, true, go, false, T::zero(), &mut dcol);
                        col2im(&dcol, c, h, wd, &mut dx[i * c * hw..(i + 1) * c * hw]);
                    }
                });
            }
            Op::Relu { x } => {
                self.accumulate(grads, *x, |dx| {
                    for ((d, &o), &gi) in dx.iter_mut().zip(&out.data).zip(gd) {
                        if o > T::zero() {
                            *d = *d + gi;
                        }
                    }
                });
            }
            Op::MaxPool2 { x, argmax } => {
                self.accumulate(grads, *x, |dx| {
                    for (&i, &gi) in argmax.iter().zip(gd) {
                        dx[i] = dx[i] + gi;
                    }
                });
            }
            Op::Dense { x, w, b } => {
                let (m, k) = (self.value(*x).shape[0], self.value(*x).shape[1]);
                let n = self.value(*w).shape[1];
                self.accumulate(grads, *b, |db| {
                    for row in gd.chunks(n) {
                        for (d, &gi) in db.iter_mut().zip(row) {
                            *d = *d + gi;
                        }
                    }
                });
                let xv = &self.value(*x).data;
                self.accumulate(grads, *w, |dw| {
                    T::gemm(k, m, n, xv, true, gd, false, T::one(), dw)
                });
                let wv = &self.value(*w).data;
                self.accumulate(grads, *x, |dx| {
                    T::gemm(m, n, k, gd, false, wv, true, T::one(), dx)
                });
            }
            Op::Dropout { x, mask } => {
                self.accumulate(grads, *x, |dx| {
                    for ((d, &m), &gi) in dx.iter_mut().zip(mask).zip(gd) {
                        *d = *d + m * gi;
                    }
                });
            }
            Op::Reshape { x } => {
                self.accumulate(grads, *x, |dx| {
                    for (d, &gi) in dx.iter_mut().zip(gd) {
                        *d = *d + gi;
                    }
                });
            }
            Op::ConcatCols { a, b } => {
                let ka = self.value(*a).shape[1];
                let kb = self.value(*b).shape[1];
                self.accumulate(grads, *a, |da| {
                    for (row, grow) in da.chunks_mut(ka).zip(gd.chunks(ka + kb)) {
                        for (d, &gi) in row.iter_mut().zip(&grow[..ka]) {
                            *d = *d + gi;
                        }
                    }
                });
                self.accumulate(grads, *b, |db| {
                    for (row, grow) in db.chunks_mut(kb).zip(gd.chunks(ka + kb)) {
                        for (d, &gi) in row.iter_mut().zip(&grow[ka..]) {
                            *d = *d + gi;
                        }
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let k = self.value(*x).shape[1];
                let len = out.shape[1];
                self.accumulate(grads, *x, |dx| {
                    for (row, grow) in dx.chunks_mut(k).zip(gd.chunks(len)) {
                        for (d, &gi) in row[*start..*start + len].iter_mut().zip(grow) {
                            *d = *d + gi;
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    self.accumulate(grads, *v, |d| {
                        for (di, &gi) in d.iter_mut().zip(gd) {
                            *di = *di + gi;
                        }
                    });
                }
            }
            Op::Scale { x, c } => {
                self.accumulate(grads, *x, |dx| {
                    for (d, &gi) in dx.iter_mut().zip(gd) {
                        *d = *d + *c * gi;
                    }
                });
            }
            Op::AddScalar { x } => {
                self.accumulate(grads, *x, |dx| {
                    for (d, &gi) in dx.iter_mut().zip(gd) {
                        *d = *d + gi;
                    }
                });
            }
            Op::Mse { a, b } => {
                let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                let coef = T::of(2.0) * gd[0] / T::of(av.len() as f64);
                self.accumulate(grads, *a, |da| {
                    for ((d, &p), &q) in da.iter_mut().zip(av).zip(bv) {
                        *d = *d + coef * (p - q);
                    }
                });
                self.accumulate(grads, *b, |db| {
                    for ((d, &p), &q) in db.iter_mut().zip(av).zip(bv) {
                        *d = *d - coef * (p - q);
                    }
                });
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|v| self.value(*v)).collect();
                let gs = op.backward(&vals, out, g);
                for (v, gi) in inputs.iter().zip(gs) {
                    self.accumulate(grads, *v, |d| {
                        for (di, &x) in d.iter_mut().zip(&gi.data) {
                            *di = *di + x;
                        }
                    });
                }
            }
        }
    }
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zeros if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..25).map(|v| v as f64 * 0.1).collect();
        let x = g.constant(t(&[1, 1, 5, 5], &data));
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = g.constant(t(&[1, 1, 3, 3], &k));
        let b = g.constant(t(&[1], &[0.0]));
        let y = g.conv2d(x, w, b).unwrap();
        assert_eq!(g.value(y).data, data);
    }

    #[test]
    fn ones_kernel_padding() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 4, 4], &[1.0; 16]));
        let w = g.constant(t(&[1, 1, 3, 3], &[1.0; 9]));
        let b = g.constant(t(&[1], &[0.0]));
        let y = g.conv2d(x, w, b).unwrap();
        let v = &g.value(y).data;
        assert_eq!(v[0], 4.0);
        assert_eq!(v[5], 9.0);
        assert_eq!(v[1], 6.0);
    }

    #[test]
    fn maxpool_routes_to_max() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), true);
        let y = g.maxpool2(x).unwrap();
        assert_eq!(g.value(y).data, vec![4.0]);
        let z = g.constant(t(&[1, 1, 1, 1], &[0.0]));
        let l = g.mse(y, z).unwrap();
        let gr = g.backward(l).unwrap();
        assert_eq!(gr.get(x).unwrap().data, vec![0.0, 0.0, 0.0, 8.0]);
    }

    #[test]
    fn maxpool_ties_and_floor() {
        let mut g = Graph::new();
        let x = g.leaf(
            t(
                &[1, 1, 3, 3],
                &[5.0, 5.0, 0.0, 5.0, 5.0, 0.0, 9.0, 9.0, 9.0],
            ),
            true,
        );
        let y = g.maxpool2(x).unwrap();
        assert_eq!(g.value(y).shape, vec![1, 1, 1, 1]);
        let s = g.scale(y, 1.0);
        let z = g.constant(Tensor::zeros(&[1, 1, 1, 1]));
        let l = g.mse(s, z).unwrap();
        let gr = g.backward(l).unwrap();
        assert_eq!(gr.get(x).unwrap().data[0], 10.0);
        assert_eq!(gr.get(x).unwrap().data[1..].iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn mse_value() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2], &[0.0, 0.0]));
        let b = g.constant(t(&[2], &[1.0, 3.0]));
        let l = g.mse(a, b).unwrap();
        assert_eq!(g.value(l).item(), 5.0);
        let c = g.constant(t(&[3], &[0.0; 3]));
        assert!(g.mse(a, c).is_err());
    }

    #[test]
    fn shape_errors() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 5, 5]));
        let w = g.constant(Tensor::zeros(&[3, 1, 3, 3]));
        let b = g.constant(Tensor::zeros(&[3]));
        assert!(matches!(g.conv2d(x, w, b), Err(Error::Shape(_))));
        let m = g.constant(Tensor::zeros(&[4, 3]));
        let w2 = g.constant(Tensor::zeros(&[2, 2]));
        let b2 = g.constant(Tensor::zeros(&[2]));
        assert!(g.dense(m, w2, b2).is_err());
    }

    #[test]
    fn no_grad_for_constants() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2], &[1.0, 2.0]));
        let b = g.leaf(t(&[2], &[0.0, 0.0]), true);
        let l = g.mse(a, b).unwrap();
        let gr = g.backward(l).unwrap();
        assert!(gr.get(a).is_none());
        assert_eq!(gr.get(b).unwrap().data, vec![-1.0, -2.0]);
    }
}
