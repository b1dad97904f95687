//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Each operation appends a node holding its output value. `backward` walks
//! the nodes in reverse and accumulates gradients into the inputs of every
//! node that (transitively) depends on a parameter.

use crate::error::NeuralError;
use crate::params::{ParamId, ParamStore};
use crate::scalar::NeuralReal;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Conv {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Scale(Var, f64),
    Shift(Var),
    Film {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    Upsample2(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Crop {
        x: Var,
        y0: usize,
        x0: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Gradients produced by one backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: NeuralReal> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Per-parameter gradients aligned with `store`, summed over every use
    /// on the tape; unused parameters get zeros.
    pub fn params(&self, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        let mut out: Vec<Tensor<T>> = store.tensors().iter().map(|t| Tensor::zeros(&t.shape)).collect();
        for &(id, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                out[id.0].add_assign(g);
            }
        }
        out
    }
}

impl<T: NeuralReal> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Which ReLU inputs are positive, over every ReLU on the tape in
    /// recording order. Two evaluations with equal patterns lie on the same
    /// linear piece, which finite-difference checks rely on.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(&self.nodes[x.0].value.data),
                _ => None,
            })
            .flat_map(|d| d.iter().map(|&v| v > T::zero()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Input => false,
            Op::Param(_) => true,
            Op::Conv { x, w, b, .. } | Op::Film { x, gamma: w, beta: b } | Op::Linear { x, w, b } => {
                self.needs(*x) || self.needs(*w) || self.needs(*b)
            }
            Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::Scale(x, _)
            | Op::Shift(x)
            | Op::Upsample2(x)
            | Op::Slice { x, .. }
            | Op::Crop { x, .. } => self.needs(*x),
            Op::Concat(xs) => xs.iter().any(|x| self.needs(*x)),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant leaf; no gradient is propagated into it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    /// Square-kernel convolution: `x (N,C,H,W)`, `w (O,C,k,k)`, `b (O)`, zero
    /// padding `pad` on every side.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let out = conv_forward(self.value(x), self.value(w), self.value(b), stride, pad);
        self.push(out, Op::Conv { x, w, b, stride, pad })
    }

    /// `y = x·wᵀ + b` with `x (N,F)`, `w (O,F)`, `b (O)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (n, f) = xv.rows_cols();
        let (o, f2) = wv.rows_cols();
        assert_eq!(f, f2, "linear: input has {f} features, weight expects {f2}");
        let mut y = Tensor::zeros(&[n, o]);
        for row in y.data.chunks_exact_mut(o) {
            row.copy_from_slice(&bv.data);
        }
        T::gemm(
            n,
            f,
            o,
            T::one(),
            &xv.data,
            false,
            &wv.data,
            true,
            T::one(),
            &mut y.data,
        );
        self.push(y, Op::Linear { x, w, b })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = map(self.value(x), |v| if v > T::zero() { v } else { T::zero() });
        self.push(y, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = map(self.value(x), sigmoid);
        self.push(y, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = map(self.value(x), |v| v.tanh());
        self.push(y, Op::Tanh(x))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let k = T::of(s);
        let y = map(self.value(x), |v| v * k);
        self.push(y, Op::Scale(x, s))
    }

    /// `x + c` for a constant `c` of the same shape.
    pub fn shift(&mut self, x: Var, c: &Tensor<T>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape, c.shape, "shift: constant shape differs from input");
        let y = zip_map(xv, c, |a, b| a + b);
        self.push(y, Op::Shift(x))
    }

    /// Per-channel affine modulation `γ_c·x + β_c` with `γ, β` of shape `(N, C)`.
    pub fn film(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.nchw();
        let (gv, bv) = (self.value(gamma), self.value(beta));
        assert_eq!(gv.shape, [n, c], "film: gamma shape {:?}", gv.shape);
        assert_eq!(bv.shape, [n, c], "film: beta shape {:?}", bv.shape);
        let mut y = xv.clone();
        for (i, plane) in y.data.chunks_exact_mut(h * w).enumerate() {
            let (g, b) = (gv.data[i], bv.data[i]);
            for v in plane {
                *v = g * *v + b;
            }
        }
        self.push(y, Op::Film { x, gamma, beta })
    }

    /// Nearest-neighbour 2× spatial upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.nchw();
        let mut y = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
        for p in 0..n * c {
            let src = &xv.data[p * h * w..(p + 1) * h * w];
            let dst = &mut y.data[p * 4 * h * w..(p + 1) * 4 * h * w];
            for yy in 0..2 * h {
                for xx in 0..2 * w {
                    dst[yy * 2 * w + xx] = src[(yy / 2) * w + xx / 2];
                }
            }
        }
        self.push(y, Op::Upsample2(x))
    }

    /// Channel concatenation of 4-d tensors sharing `N, H, W`.
    pub fn concat(&mut self, xs: &[Var]) -> Var {
        let (n, _, h, w) = self.value(xs[0]).nchw();
        let c_total: usize = xs.iter().map(|&v| self.value(v).nchw().1).sum();
        let mut y = Tensor::zeros(&[n, c_total, h, w]);
        let plane = h * w;
        for b in 0..n {
            let mut off = b * c_total * plane;
            for &v in xs {
                let t = self.value(v);
                let (n2, c, h2, w2) = t.nchw();
                assert!(n2 == n && h2 == h && w2 == w, "concat: mismatched shapes");
                let src = &t.data[b * c * plane..(b + 1) * c * plane];
                y.data[off..off + c * plane].copy_from_slice(src);
                off += c * plane;
            }
        }
        self.push(y, Op::Concat(xs.to_vec()))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.nchw();
        assert!(
            start + len <= c,
            "slice of channels {start}..{} out of {c}",
            start + len
        );
        let plane = h * w;
        let mut y = Tensor::zeros(&[n, len, h, w]);
        for b in 0..n {
            let src = &xv.data[(b * c + start) * plane..(b * c + start + len) * plane];
            y.data[b * len * plane..(b + 1) * len * plane].copy_from_slice(src);
        }
        self.push(y, Op::Slice { x, start })
    }

    /// Spatial window `[y0, y0+h) × [x0, x0+w)`.
    pub fn crop(&mut self, x: Var, y0: usize, x0: usize, h: usize, w: usize) -> Var {
        let xv = self.value(x);
        let (n, c, hh, ww) = xv.nchw();
        assert!(y0 + h <= hh && x0 + w <= ww, "crop outside the feature map");
        let mut y = Tensor::zeros(&[n, c, h, w]);
        for p in 0..n * c {
            for yy in 0..h {
                let src = &xv.data[p * hh * ww + (y0 + yy) * ww + x0..][..w];
                y.data[(p * h + yy) * w..][..w].copy_from_slice(src);
            }
        }
        self.push(y, Op::Crop { x, y0, x0 })
    }

    /// Propagates `seed = ∂L/∂out` back through the tape. A tape supports a
    /// single backward pass.
    pub fn backward(&mut self, out: Var, seed: Tensor<T>) -> Result<Gradients<T>, NeuralError> {
        if self.consumed {
            return Err(NeuralError::BackwardTwice);
        }
        if seed.shape != self.value(out).shape {
            return Err(NeuralError::Shape(format!(
                "seed shape {:?} does not match output {:?}",
                seed.shape,
                self.value(out).shape
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Conv { x, w, b, stride, pad } => {
                let (dx, dw, db) = conv_backward(self.value(*x), self.value(*w), g, *stride, *pad, self.needs(*x));
                if let Some(dx) = dx {
                    accumulate(grads, *x, dx);
                }
                accumulate(grads, *w, dw);
                accumulate(grads, *b, db);
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, f) = xv.rows_cols();
                let (o, _) = wv.rows_cols();
                if self.needs(*x) {
                    let mut dx = Tensor::zeros(&[n, f]);
                    T::gemm(
                        n,
                        o,
                        f,
                        T::one(),
                        &g.data,
                        false,
                        &wv.data,
                        false,
                        T::zero(),
                        &mut dx.data,
                    );
                    accumulate(grads, *x, dx);
                }
                let mut dw = Tensor::zeros(&[o, f]);
                T::gemm(
                    o,
                    n,
                    f,
                    T::one(),
                    &g.data,
                    true,
                    &xv.data,
                    false,
                    T::zero(),
                    &mut dw.data,
                );
                let mut db = Tensor::zeros(&[o]);
                for row in g.data.chunks_exact(o) {
                    for (d, v) in db.data.iter_mut().zip(row) {
                        *d += *v;
                    }
                }
                accumulate(grads, *w, dw);
                accumulate(grads, *b, db);
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let dx = zip_map(g, xv, |gv, v| if v > T::zero() { gv } else { T::zero() });
                accumulate(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                let dx = zip_map(g, y, |gv, s| gv * s * (T::one() - s));
                accumulate(grads, *x, dx);
            }
            Op::Tanh(x) => {
                let y = &node.value;
                let dx = zip_map(g, y, |gv, t| gv * (T::one() - t * t));
                accumulate(grads, *x, dx);
            }
            Op::Scale(x, s) => {
                let k = T::of(*s);
                accumulate(grads, *x, map(g, |v| v * k));
            }
            Op::Shift(x) => accumulate(grads, *x, g.clone()),
            Op::Film { x, gamma, beta } => {
                let xv = self.value(*x);
                let (_, _, h, w) = xv.nchw();
                let gv = self.value(*gamma);
                let mut dx = Tensor::zeros(&xv.shape);
                let mut dg = Tensor::zeros(&gv.shape);
                let mut dbeta = Tensor::zeros(&gv.shape);
                for p in 0..gv.numel() {
                    let gp = &g.data[p * h * w..(p + 1) * h * w];
                    let xp = &xv.data[p * h * w..(p + 1) * h * w];
                    let gamma_p = gv.data[p];
                    let (mut sg, mut sb) = (T::zero(), T::zero());
                    for ((d, &gi), &xi) in dx.data[p * h * w..(p + 1) * h * w].iter_mut().zip(gp).zip(xp) {
                        *d = gi * gamma_p;
                        sg += gi * xi;
                        sb += gi;
                    }
                    dg.data[p] = sg;
                    dbeta.data[p] = sb;
                }
                if self.needs(*x) {
                    accumulate(grads, *x, dx);
                }
                accumulate(grads, *gamma, dg);
                accumulate(grads, *beta, dbeta);
            }
            Op::Upsample2(x) => {
                let xv = self.value(*x);
                let (n, c, h, w) = xv.nchw();
                let mut dx = Tensor::zeros(&xv.shape);
                for p in 0..n * c {
                    let src = &g.data[p * 4 * h * w..(p + 1) * 4 * h * w];
                    let dst = &mut dx.data[p * h * w..(p + 1) * h * w];
                    for yy in 0..2 * h {
                        for xx in 0..2 * w {
                            dst[(yy / 2) * w + xx / 2] += src[yy * 2 * w + xx];
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Concat(xs) => {
                let (n, c_total, h, w) = g.nchw();
                let plane = h * w;
                let mut off_c = 0;
                for &v in xs {
                    let c = self.value(v).nchw().1;
                    if self.needs(v) {
                        let mut dx = Tensor::zeros(&[n, c, h, w]);
                        for b in 0..n {
                            let src = &g.data[(b * c_total + off_c) * plane..][..c * plane];
                            dx.data[b * c * plane..][..c * plane].copy_from_slice(src);
                        }
                        accumulate(grads, v, dx);
                    }
                    off_c += c;
                }
            }
            Op::Slice { x, start } => {
                let xv = self.value(*x);
                let (n, c, h, w) = xv.nchw();
                let len = g.nchw().1;
                let plane = h * w;
                let mut dx = Tensor::zeros(&xv.shape);
                for b in 0..n {
                    let dst = &mut dx.data[(b * c + start) * plane..][..len * plane];
                    dst.copy_from_slice(&g.data[b * len * plane..][..len * plane]);
                }
                accumulate(grads, *x, dx);
            }
            Op::Crop { x, y0, x0 } => {
                let xv = self.value(*x);
                let (n, c, hh, ww) = xv.nchw();
                let (_, _, h, w) = g.nchw();
                let mut dx = Tensor::zeros(&xv.shape);
                for p in 0..n * c {
                    for yy in 0..h {
                        let dst = &mut dx.data[p * hh * ww + (y0 + yy) * ww + x0..][..w];
                        dst.copy_from_slice(&g.data[(p * h + yy) * w..][..w]);
                    }
                }
                accumulate(grads, *x, dx);
            }
        }
    }
}

fn accumulate<T: NeuralReal>(grads: &mut [Option<Tensor<T>>], v: Var, d: Tensor<T>) {
    match &mut grads[v.0] {
        Some(g) => g.add_assign(&d),
        slot => *slot = Some(d),
    }
}

fn map<T: NeuralReal>(t: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor {
        shape: t.shape.clone(),
        data: t.data.iter().map(|&v| f(v)).collect(),
    }
}

fn zip_map<T: NeuralReal>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

pub(crate) fn sigmoid<T: NeuralReal>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn out_size(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

/// Unrolls `(C, H, W)` into a `(C·k·k) × (Ho·Wo)` patch matrix.
fn im2col<T: NeuralReal>(x: &[T], c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize, cols: &mut [T]) {
    let (ho, wo) = (out_size(h, k, stride, pad), out_size(w, k, stride, pad));
    let mut row = 0;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im<T: NeuralReal>(cols: &[T], c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize, x: &mut [T]) {
    let (ho, wo) = (out_size(h, k, stride, pad), out_size(w, k, stride, pad));
    let mut row = 0;
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn conv_forward<T: NeuralReal>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, stride: usize, pad: usize) -> Tensor<T> {
    let (n, c, h, wd) = x.nchw();
    let (o, c2, k, k2) = w.nchw();
    assert!(c == c2 && k == k2, "conv: input {:?} vs weight {:?}", x.shape, w.shape);
    assert_eq!(b.shape, [o]);
    let (ho, wo) = (out_size(h, k, stride, pad), out_size(wd, k, stride, pad));
    let ck = c * k * k;
    let mut out = Tensor::zeros(&[n, o, ho, wo]);
    let mut cols = vec![T::zero(); ck * ho * wo];
    for bi in 0..n {
        let xs = &x.data[bi * c * h * wd..(bi + 1) * c * h * wd];
        im2col(xs, c, h, wd, k, stride, pad, &mut cols);
        let ys = &mut out.data[bi * o * ho * wo..(bi + 1) * o * ho * wo];
        for (oc, plane) in ys.chunks_exact_mut(ho * wo).enumerate() {
            plane.fill(b.data[oc]);
        }
        T::gemm(o, ck, ho * wo, T::one(), &w.data, false, &cols, false, T::one(), ys);
    }
    out
}

fn conv_backward<T: NeuralReal>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Tensor<T>,
    stride: usize,
    pad: usize,
    want_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (n, c, h, wd) = x.nchw();
    let (o, _, k, _) = w.nchw();
    let (ho, wo) = (out_size(h, k, stride, pad), out_size(wd, k, stride, pad));
    let ck = c * k * k;
    let mut dw = Tensor::zeros(&w.shape);
    let mut db = Tensor::zeros(&[o]);
    let mut dx = want_dx.then(|| Tensor::zeros(&x.shape));
    let mut cols = vec![T::zero(); ck * ho * wo];
    let mut dcols = vec![T::zero(); if want_dx { ck * ho * wo } else { 0 }];
    for bi in 0..n {
        let xs = &x.data[bi * c * h * wd..(bi + 1) * c * h * wd];
        let gs = &g.data[bi * o * ho * wo..(bi + 1) * o * ho * wo];
        im2col(xs, c, h, wd, k, stride, pad, &mut cols);
        T::gemm(o, ho * wo, ck, T::one(), gs, false, &cols, true, T::one(), &mut dw.data);
        for (oc, plane) in gs.chunks_exact(ho * wo).enumerate() {
            db.data[oc] += plane.iter().copied().sum::<T>();
        }
        if let Some(dx) = dx.as_mut() {
            T::gemm(
                ck,
                o,
                ho * wo,
                T::one(),
                &w.data,
                true,
                gs,
                false,
                T::zero(),
                &mut dcols,
            );
            col2im(
                &dcols,
                c,
                h,
                wd,
                k,
                stride,
                pad,
                &mut dx.data[bi * c * h * wd..(bi + 1) * c * h * wd],
            );
        }
    }
    (dx, dw, db)
}
