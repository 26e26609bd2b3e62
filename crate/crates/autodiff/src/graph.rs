//! Computation tape. Every op appends a node holding its forward value; the
//! backward pass walks the tape in reverse and accumulates adjoints into the
//! nodes that were marked as requiring a gradient.

use crate::error::{shape_err, Error, Result};
use crate::kernels::{dot, gemm, im2row, row2im, ConvGeom, Mat};
use crate::real::Real;
use crate::tensor::Tensor;
use crate::PROB_EPS;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        batch: usize,
        cols: Vec<T>,
    },
    Elu(Var),
    Sigmoid(Var),
    Softmax(Var),
    SoftmaxXent {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Bce {
        pred: Var,
        target: Vec<T>,
    },
    TotalVariation {
        x: Var,
        height: usize,
        width: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Mean(Var),
    Sum(Var),
    Reshape(Var),
    Concat(Vec<Var>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// A single-threaded computation graph. Build one per forward pass.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`; zeros when `v`
    /// was not reached.
    pub fn grad(&self, v: Var) -> Tensor<T> {
        let node = &self.nodes[v.0];
        match &node.grad {
            Some(g) => Tensor::new(node.value.shape().to_vec(), g.clone())
                .expect("gradient length matches value"),
            None => Tensor::zeros(node.value.shape().to_vec()),
        }
    }

    /// Moves the gradient out of the graph, leaving it unset.
    pub fn take_grad(&mut self, v: Var) -> Vec<T> {
        let node = &mut self.nodes[v.0];
        node.grad
            .take()
            .unwrap_or_else(|| vec![T::zero(); node.value.numel()])
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// `x [N, in] · wᵀ [in, out] + b [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[1] || bs[0] != ws[0] {
            return Err(shape_err(
                "linear",
                format!("x {xs:?}, w {ws:?}, b {bs:?}"),
            ));
        }
        let (n, fan_in, fan_out) = (xs[0], xs[1], ws[0]);
        let xd = self.nodes[x.0].value.data();
        let wd = self.nodes[w.0].value.data();
        let bd = self.nodes[b.0].value.data();
        let mut out = Vec::with_capacity(n * fan_out);
        for _ in 0..n {
            out.extend_from_slice(bd);
        }
        gemm(T::one(), Mat::new(xd, n, fan_in), Mat::new(wd, fan_out, fan_in).t(), T::one(), &mut out);
        let needs = self.any_grad(&[x, w, b]);
        let value = Tensor::new(vec![n, fan_out], out)?;
        Ok(self.push(value, Op::Linear { x, w, b }, needs))
    }

    /// Cross-correlation of `x [N, C, H, W]` with `w [O, C, k, k]` plus bias
    /// `b [O]`, zero padding on all sides.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 4 || ws.len() != 4 || bs.len() != 1 || ws[2] != ws[3] {
            return Err(shape_err("conv2d", format!("x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        if xs[1] != ws[1] || bs[0] != ws[0] {
            return Err(shape_err(
                "conv2d",
                format!("channels: x {xs:?}, w {ws:?}, b {bs:?}"),
            ));
        }
        if stride == 0 {
            return Err(Error::Invalid {
                op: "conv2d",
                detail: "stride must be positive".into(),
            });
        }
        let k = ws[2];
        let (h, wid) = (xs[2], xs[3]);
        if h + 2 * padding < k || wid + 2 * padding < k {
            return Err(shape_err(
                "conv2d",
                format!("kernel {k} larger than padded input {h}x{wid}"),
            ));
        }
        let geom = ConvGeom {
            channels: xs[1],
            height: h,
            width: wid,
            kernel: k,
            stride,
            padding,
            out_h: (h + 2 * padding - k) / stride + 1,
            out_w: (wid + 2 * padding - k) / stride + 1,
        };
        let (batch, out_c) = (xs[0], ws[0]);
        let plen = geom.patch_len();
        let olen = geom.out_len();
        let xd = self.nodes[x.0].value.data();
        let wd = self.nodes[w.0].value.data();
        let bd = self.nodes[b.0].value.data();
        let img_len = geom.channels * h * wid;
        let mut cols = vec![T::zero(); batch * olen * plen];
        let mut out = vec![T::zero(); batch * out_c * olen];
        for n in 0..batch {
            let cols_n = &mut cols[n * olen * plen..][..olen * plen];
            im2row(&xd[n * img_len..][..img_len], &geom, cols_n);
            let out_n = &mut out[n * out_c * olen..][..out_c * olen];
            for (row, &bias) in out_n.chunks_exact_mut(olen).zip(bd) {
                row.fill(bias);
            }
            gemm(T::one(), Mat::new(wd, out_c, plen), Mat::new(cols_n, olen, plen).t(), T::one(), out_n);
        }
        let needs = self.any_grad(&[x, w, b]);
        let value = Tensor::new(vec![batch, out_c, geom.out_h, geom.out_w], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                batch,
                cols,
            },
            needs,
        ))
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0]
            .value
            .map(|v| if v > T::zero() { v } else { v.exp_m1() });
        let needs = self.any_grad(&[x]);
        self.push(value, Op::Elu(x), needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.map(stable_sigmoid);
        let needs = self.any_grad(&[x]);
        self.push(value, Op::Sigmoid(x), needs)
    }

    /// Softmax over the last axis of a 2D tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 2 {
            return Err(shape_err("softmax", format!("expected [N, K], got {xs:?}")));
        }
        let k = xs[1];
        let mut out = self.nodes[x.0].value.data().to_vec();
        for row in out.chunks_exact_mut(k) {
            softmax_in_place(row);
        }
        let value = Tensor::new(xs.to_vec(), out)?;
        let needs = self.any_grad(&[x]);
        Ok(self.push(value, Op::Softmax(x), needs))
    }

    /// Per-row cross-entropy of softmax(logits) against integer labels,
    /// computed through a shifted log-sum-exp. Output shape `[N]`.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.shape(logits);
        if ls.len() != 2 || ls[0] != labels.len() {
            return Err(shape_err(
                "softmax_xent",
                format!("logits {ls:?} vs {} labels", labels.len()),
            ));
        }
        let k = ls[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Invalid {
                op: "softmax_xent",
                detail: format!("label {bad} out of range for {k} classes"),
            });
        }
        let data = self.nodes[logits.0].value.data();
        let mut probs = data.to_vec();
        let mut losses = Vec::with_capacity(labels.len());
        for (row, (p, &label)) in data.chunks_exact(k).zip(probs.chunks_exact_mut(k).zip(labels)) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            losses.push(lse - row[label]);
            for (pi, &v) in p.iter_mut().zip(row) {
                *pi = (v - lse).exp();
            }
        }
        let value = Tensor::from_vec(losses);
        let needs = self.any_grad(&[logits]);
        Ok(self.push(
            value,
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// Elementwise binary cross-entropy of probabilities against a fixed
    /// target of the same shape. Probabilities are clamped to
    /// `[PROB_EPS, 1 - PROB_EPS]`.
    pub fn bce(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(shape_err(
                "bce",
                format!("pred {:?} vs target {:?}", self.shape(pred), target.shape()),
            ));
        }
        let eps = T::of(PROB_EPS);
        let one = T::one();
        let value = self.nodes[pred.0]
            .value
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let p = p.max(eps).min(one - eps);
                -(t * p.ln() + (one - t) * (one - p).ln())
            })
            .collect();
        let value = Tensor::new(target.shape().to_vec(), value)?;
        let needs = self.any_grad(&[pred]);
        Ok(self.push(
            value,
            Op::Bce {
                pred,
                target: target.data().to_vec(),
            },
            needs,
        ))
    }

    /// Anisotropic total variation per batch element: the sum of absolute
    /// differences between horizontally and vertically adjacent pixels over the
    /// last two axes, divided by the element's pixel count. Output `[N]`.
    pub fn total_variation(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 3 {
            return Err(shape_err(
                "total_variation",
                format!("need [N, ..., H, W], got {xs:?}"),
            ));
        }
        let (h, w) = (xs[xs.len() - 2], xs[xs.len() - 1]);
        let n = xs[0];
        let per = xs[1..].iter().product::<usize>();
        let data = self.nodes[x.0].value.data();
        let norm = T::of(per as f64);
        let out = (0..n)
            .map(|i| {
                let mut acc = T::zero();
                for plane in data[i * per..][..per].chunks_exact(h * w) {
                    for r in 0..h {
                        for c in 0..w {
                            let v = plane[r * w + c];
                            if c + 1 < w {
                                acc += (plane[r * w + c + 1] - v).abs();
                            }
                            if r + 1 < h {
                                acc += (plane[(r + 1) * w + c] - v).abs();
                            }
                        }
                    }
                }
                acc / norm
            })
            .collect();
        let needs = self.any_grad(&[x]);
        Ok(self.push(
            Tensor::from_vec(out),
            Op::TotalVariation {
                x,
                height: h,
                width: w,
            },
            needs,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x + y);
        let needs = self.any_grad(&[a, b]);
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x * y);
        let needs = self.any_grad(&[a, b]);
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let value = self.nodes[a.0].value.map(|v| v * factor);
        let needs = self.any_grad(&[a]);
        self.push(value, Op::Scale(a, factor), needs)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let n = T::of(t.numel().max(1) as f64);
        let s: T = t.data().iter().copied().sum();
        let needs = self.any_grad(&[a]);
        self.push(Tensor::scalar(s / n), Op::Mean(a), needs)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.nodes[a.0].value.data().iter().copied().sum();
        let needs = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), needs)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.nodes[a.0].value.clone().reshaped(shape)?;
        let needs = self.any_grad(&[a]);
        Ok(self.push(value, Op::Reshape(a), needs))
    }

    /// Concatenate 2D tensors `[N, d_i]` along the feature axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Invalid {
                op: "concat",
                detail: "no inputs".into(),
            });
        };
        let n = self.shape(first)[0];
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != n {
                return Err(shape_err("concat", format!("part {s:?} with batch {n}")));
            }
            total += s[1];
        }
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                let d = self.shape(p)[1];
                out.extend_from_slice(&self.nodes[p.0].value.data()[i * d..][..d]);
            }
        }
        let needs = self.any_grad(parts);
        let value = Tensor::new(vec![n, total], out)?;
        Ok(self.push(value, Op::Concat(parts.to_vec()), needs))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    /// Reverse-mode sweep from a scalar `loss`. Previously accumulated
    /// gradients are discarded first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        self.zero_grad();
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = node.grad.take() else { continue };
            propagate(before, node, &dy);
            node.grad = Some(dy);
        }
        Ok(())
    }
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Vec<T> {
    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
}

pub(crate) fn stable_sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Gradient buffer of `v`, allocated on first use. `None` when `v` does not
/// need a gradient.
fn take_buf<T: Real>(nodes: &mut [Node<T>], v: Var) -> Option<Vec<T>> {
    let n = &mut nodes[v.0];
    if !n.needs_grad {
        return None;
    }
    Some(n.grad.take().unwrap_or_else(|| vec![T::zero(); n.value.numel()]))
}

fn put_buf<T>(nodes: &mut [Node<T>], v: Var, g: Vec<T>) {
    nodes[v.0].grad = Some(g);
}

/// Accumulate `f(parent_grad)` into `v`'s gradient if it needs one.
fn with_buf<T: Real>(nodes: &mut [Node<T>], v: Var, f: impl FnOnce(&[Node<T>], &mut [T])) {
    if let Some(mut g) = take_buf(nodes, v) {
        f(nodes, &mut g);
        put_buf(nodes, v, g);
    }
}

fn propagate<T: Real>(nodes: &mut [Node<T>], node: &Node<T>, dy: &[T]) {
    let out = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Linear { x, w, b } => {
            let xs = nodes[x.0].value.shape().to_vec();
            let (n, fan_in) = (xs[0], xs[1]);
            let fan_out = out.shape()[1];
            let dy_m = Mat::new(dy, n, fan_out);
            with_buf(nodes, *x, |nodes, gx| {
                let wd = nodes[w.0].value.data();
                gemm(T::one(), dy_m, Mat::new(wd, fan_out, fan_in), T::one(), gx);
            });
            with_buf(nodes, *w, |nodes, gw| {
                let xd = nodes[x.0].value.data();
                gemm(T::one(), dy_m.t(), Mat::new(xd, n, fan_in), T::one(), gw);
            });
            with_buf(nodes, *b, |_, gb| {
                for i in 0..n {
                    for (g, &d) in gb.iter_mut().zip(&dy[i * fan_out..][..fan_out]) {
                        *g += d;
                    }
                }
            });
        }
        Op::Conv2d {
            x,
            w,
            b,
            geom,
            batch,
            cols,
        } => {
            let plen = geom.patch_len();
            let olen = geom.out_len();
            let out_c = out.shape()[1];
            let img_len = geom.channels * geom.height * geom.width;
            with_buf(nodes, *w, |_, gw| {
                for n in 0..*batch {
                    let cols_n = &cols[n * olen * plen..][..olen * plen];
                    let dy_n = &dy[n * out_c * olen..][..out_c * olen];
                    gemm(T::one(), Mat::new(dy_n, out_c, olen), Mat::new(cols_n, olen, plen), T::one(), gw);
                }
            });
            with_buf(nodes, *b, |_, gb| {
                for n in 0..*batch {
                    for (o, g) in gb.iter_mut().enumerate() {
                        *g += dy[(n * out_c + o) * olen..][..olen].iter().copied().sum::<T>();
                    }
                }
            });
            with_buf(nodes, *x, |nodes, gx| {
                let wd = nodes[w.0].value.data();
                let mut dcols = vec![T::zero(); olen * plen];
                for n in 0..*batch {
                    let dy_n = &dy[n * out_c * olen..][..out_c * olen];
                    gemm(T::one(), Mat::new(dy_n, out_c, olen).t(), Mat::new(wd, out_c, plen), T::zero(), &mut dcols);
                    row2im(&dcols, geom, &mut gx[n * img_len..][..img_len]);
                }
            });
        }
        Op::Elu(x) => with_buf(nodes, *x, |nodes, gx| {
            let xd = nodes[x.0].value.data();
            for ((g, &xi), (&yi, &d)) in gx.iter_mut().zip(xd).zip(out.data().iter().zip(dy)) {
                *g += if xi > T::zero() { d } else { d * (yi + T::one()) };
            }
        }),
        Op::Sigmoid(x) => with_buf(nodes, *x, |_, gx| {
            for (g, (&s, &d)) in gx.iter_mut().zip(out.data().iter().zip(dy)) {
                *g += d * s * (T::one() - s);
            }
        }),
        Op::Softmax(x) => with_buf(nodes, *x, |_, gx| {
            let k = out.shape()[1];
            for ((g, p), d) in gx
                .chunks_exact_mut(k)
                .zip(out.data().chunks_exact(k))
                .zip(dy.chunks_exact(k))
            {
                let inner = dot(p, d);
                for j in 0..k {
                    g[j] += p[j] * (d[j] - inner);
                }
            }
        }),
        Op::SoftmaxXent {
            logits,
            labels,
            probs,
        } => with_buf(nodes, *logits, |_, gl| {
            let k = probs.len() / labels.len().max(1);
            for (i, &label) in labels.iter().enumerate() {
                let d = dy[i];
                for j in 0..k {
                    let onehot = if j == label { T::one() } else { T::zero() };
                    gl[i * k + j] += d * (probs[i * k + j] - onehot);
                }
            }
        }),
        Op::Bce { pred, target } => with_buf(nodes, *pred, |nodes, gp| {
            let eps = T::of(PROB_EPS);
            let one = T::one();
            let pd = nodes[pred.0].value.data();
            for ((g, &p), (&t, &d)) in gp.iter_mut().zip(pd).zip(target.iter().zip(dy)) {
                if p > eps && p < one - eps {
                    *g += d * (p - t) / (p * (one - p));
                }
            }
        }),
        Op::TotalVariation { x, height, width } => with_buf(nodes, *x, |nodes, gx| {
            let (h, w) = (*height, *width);
            let xd = nodes[x.0].value.data();
            let per = xd.len() / dy.len().max(1);
            let norm = T::of(per as f64);
            for (i, &d) in dy.iter().enumerate() {
                let scale = d / norm;
                let base = i * per;
                for p in 0..per / (h * w) {
                    let off = base + p * h * w;
                    for r in 0..h {
                        for c in 0..w {
                            let at = off + r * w + c;
                            if c + 1 < w {
                                let s = sign(xd[at + 1] - xd[at]) * scale;
                                gx[at + 1] += s;
                                gx[at] -= s;
                            }
                            if r + 1 < h {
                                let s = sign(xd[at + w] - xd[at]) * scale;
                                gx[at + w] += s;
                                gx[at] -= s;
                            }
                        }
                    }
                }
            }
        }),
        Op::Add(a, b) => {
            for v in [a, b] {
                with_buf(nodes, *v, |_, g| {
                    for (gi, &d) in g.iter_mut().zip(dy) {
                        *gi += d;
                    }
                });
            }
        }
        Op::Mul(a, b) => {
            for (v, other) in [(a, b), (b, a)] {
                with_buf(nodes, *v, |nodes, g| {
                    let od = nodes[other.0].value.data();
                    for ((gi, &o), &d) in g.iter_mut().zip(od).zip(dy) {
                        *gi += d * o;
                    }
                });
            }
        }
        Op::Scale(a, factor) => with_buf(nodes, *a, |_, g| {
            for (gi, &d) in g.iter_mut().zip(dy) {
                *gi += d * *factor;
            }
        }),
        Op::Mean(a) => with_buf(nodes, *a, |_, g| {
            let share = dy[0] / T::of(g.len().max(1) as f64);
            for gi in g.iter_mut() {
                *gi += share;
            }
        }),
        Op::Sum(a) => with_buf(nodes, *a, |_, g| {
            for gi in g.iter_mut() {
                *gi += dy[0];
            }
        }),
        Op::Reshape(a) => with_buf(nodes, *a, |_, g| {
            for (gi, &d) in g.iter_mut().zip(dy) {
                *gi += d;
            }
        }),
        Op::Concat(parts) => {
            let n = out.shape()[0];
            let total = out.shape()[1];
            let mut offset = 0;
            for &p in parts {
                let d = nodes[p.0].value.shape()[1];
                with_buf(nodes, p, |_, g| {
                    for i in 0..n {
                        for (gi, &di) in g[i * d..][..d]
                            .iter_mut()
                            .zip(&dy[i * total + offset..][..d])
                        {
                            *gi += di;
                        }
                    }
                });
                offset += d;
            }
        }
    }
}

fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}
