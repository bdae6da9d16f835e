//! The tape.

use super::{conv3d, conv3d_backward, sigmoid, ConvKernel, Real, Tensor};
use crate::error::{Error, Result};

/// Probabilities fed to the binary cross-entropy are clamped to
/// `[BCE_EPS, 1 - BCE_EPS]`.
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv3d { x: Var, w: Var, b: Var },
    Concat(Var, Var),
    Slice { a: Var, start: usize },
    Sigmoid(Var),
    Tanh(Var),
    Mul(Var, Var),
    Add(Var, Var),
    OneMinus(Var),
    Scale(Var, T),
    Sum(Var),
    Bce { pred: Var, target: Vec<T>, pos_weight: T },
    Contrastive { emb: Var, pairs: Vec<(usize, usize, bool)>, margin: T },
    GroupMean { a: Var, groups: Vec<Vec<usize>> },
    SoftmaxCe { logits: Var, labels: Vec<usize> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a forward computation for reverse-mode differentiation.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_shape<T>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch(format!("{what}: {:?} vs {:?}", a.shape, b.shape)));
    }
    Ok(())
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn conv3d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let kernel = ConvKernel {
            weight: self.value(w).clone(),
            bias: self.value(b).clone(),
        };
        let out = conv3d(self.value(x), &kernel)?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(out, Op::Conv3d { x, w, b }, needs))
    }

    /// Concatenate along the leading (channel) dimension.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape[1..] != tb.shape[1..] {
            return Err(Error::ShapeMismatch(format!("concat {:?} with {:?}", ta.shape, tb.shape)));
        }
        let mut shape = ta.shape.clone();
        shape[0] += tb.shape[0];
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        data.extend_from_slice(&ta.data);
        data.extend_from_slice(&tb.data);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor { shape, data }, Op::Concat(a, b), needs))
    }

    /// Channels `start..start+len`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if start + len > t.channels() {
            return Err(Error::ShapeMismatch(format!(
                "slice {start}..{} of {} channels",
                start + len,
                t.channels()
            )));
        }
        let p = t.plane();
        let mut shape = t.shape.clone();
        shape[0] = len;
        let data = t.data[start * p..(start + len) * p].to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor { shape, data }, Op::Slice { a, start }, needs))
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let t = self.value(a);
        let out = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&v| f(v)).collect(),
        };
        let needs = self.needs(a);
        self.push(out, op, needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, T::tanh, Op::Tanh(a))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.map(a, |v| T::one() - v, Op::OneMinus(a))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.map(a, |v| v * c, Op::Scale(a, c))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>, what: &str) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, what)?;
        let out = Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect(),
        };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, op, needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().copied().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), needs)
    }

    /// Mean binary cross-entropy of probabilities `pred` against 0/1
    /// `target`.
    pub fn bce(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        self.bce_weighted(pred, target, T::one())
    }

    /// Mean binary cross-entropy with the positive term scaled by
    /// `pos_weight`: `-(w·t·ln p + (1−t)·ln(1−p))`.
    pub fn bce_weighted(&mut self, pred: Var, target: &Tensor<T>, pos_weight: T) -> Result<Var> {
        let p = self.value(pred);
        same_shape(p, target, "bce")?;
        if p.is_empty() {
            return Err(Error::ShapeMismatch("bce on an empty tensor".into()));
        }
        let eps = T::from_f64(BCE_EPS);
        let w = pos_weight.as_f64();
        let mut acc = 0.0f64;
        for (&pv, &tv) in p.data.iter().zip(&target.data) {
            let q = pv.max(eps).min(T::one() - eps).as_f64();
            let t = tv.as_f64();
            acc -= w * t * q.ln() + (1.0 - t) * (1.0 - q).ln();
        }
        let loss = T::from_f64(acc / p.len() as f64);
        let needs = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                pred,
                target: target.data.clone(),
                pos_weight,
            },
            needs,
        ))
    }

    /// Mean contrastive loss over voxel pairs of an `(E, ...)` embedding
    /// tensor: `d²` for same-instance pairs, `max(0, margin - d)²` otherwise.
    pub fn contrastive(&mut self, emb: Var, pairs: Vec<(usize, usize, bool)>, margin: T) -> Result<Var> {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("contrastive loss needs at least one pair".into()));
        }
        let e = self.value(emb);
        let (dims, plane) = (e.channels(), e.plane());
        if let Some(&(a, b, _)) = pairs.iter().find(|&&(a, b, _)| a >= plane || b >= plane) {
            return Err(Error::ShapeMismatch(format!("pair ({a},{b}) outside {plane} voxels")));
        }
        let mut acc = T::zero();
        for &(a, b, same) in &pairs {
            let d2: T = (0..dims)
                .map(|c| {
                    let diff = e.data[c * plane + a] - e.data[c * plane + b];
                    diff * diff
                })
                .sum();
            acc += if same {
                d2
            } else {
                let gap = (margin - d2.sqrt()).max(T::zero());
                gap * gap
            };
        }
        let loss = acc / T::from_f64(pairs.len() as f64);
        let needs = self.needs(emb);
        Ok(self.push(Tensor::scalar(loss), Op::Contrastive { emb, pairs, margin }, needs))
    }

    /// Mean of each group of positions of a `(C, ...)` tensor, giving
    /// `(G, C)`.
    pub fn group_mean(&mut self, a: Var, groups: Vec<Vec<usize>>) -> Result<Var> {
        let t = self.value(a);
        let (c, plane) = (t.channels(), t.plane());
        let mut out = Tensor::zeros(&[groups.len(), c]);
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::InvalidArgument(format!("group {g} is empty")));
            }
            if members.iter().any(|&m| m >= plane) {
                return Err(Error::ShapeMismatch(format!("group {g} indexes past {plane}")));
            }
            let inv = T::one() / T::from_f64(members.len() as f64);
            for ch in 0..c {
                let s: T = members.iter().map(|&m| t.data[ch * plane + m]).sum();
                out.data[g * c + ch] = s * inv;
            }
        }
        let needs = self.needs(a);
        Ok(self.push(out, Op::GroupMean { a, groups }, needs))
    }

    /// Mean softmax cross-entropy of `(G, C)` logits rows against labels.
    pub fn softmax_ce(&mut self, logits: Var, labels: Vec<usize>) -> Result<Var> {
        let t = self.value(logits);
        let (rows, cols) = if t.shape.len() == 1 {
            (1, t.shape[0])
        } else {
            (t.shape[0], t.plane())
        };
        if labels.len() != rows || rows == 0 {
            return Err(Error::ShapeMismatch(format!("{} labels for {rows} rows", labels.len())));
        }
        if labels.iter().any(|&l| l >= cols) {
            return Err(Error::InvalidArgument("label out of range".into()));
        }
        let mut acc = T::zero();
        for (r, &label) in labels.iter().enumerate() {
            let row = &t.data[r * cols..(r + 1) * cols];
            acc += log_sum_exp(row) - row[label];
        }
        let loss = acc / T::from_f64(rows as f64);
        let needs = self.needs(logits);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCe { logits, labels }, needs))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let Some(root) = self.nodes.get(loss.0) else {
            return Err(Error::NotOnTape);
        };
        if root.value.len() != 1 {
            return Err(Error::ShapeMismatch("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(&root.value.shape, T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv3d { x, w, b } => {
                let kernel = ConvKernel {
                    weight: self.value(*w).clone(),
                    bias: self.value(*b).clone(),
                };
                let cg = conv3d_backward(self.value(*x), &kernel, g, self.needs(*x))?;
                if let Some(gx) = cg.input {
                    self.accumulate(grads, *x, gx);
                }
                self.accumulate(grads, *w, cg.weight);
                self.accumulate(grads, *b, cg.bias);
            }
            Op::Concat(a, b) => {
                let split = self.value(*a).len();
                let ga = Tensor {
                    shape: self.value(*a).shape.clone(),
                    data: g.data[..split].to_vec(),
                };
                let gb = Tensor {
                    shape: self.value(*b).shape.clone(),
                    data: g.data[split..].to_vec(),
                };
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Slice { a, start } => {
                let src = self.value(*a);
                let mut ga = Tensor::zeros(&src.shape);
                let off = start * src.plane();
                ga.data[off..off + g.len()].copy_from_slice(&g.data);
                self.accumulate(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = pointwise(g, y, |gv, yv| gv * yv * (T::one() - yv));
                self.accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let ga = pointwise(g, y, |gv, yv| gv * (T::one() - yv * yv));
                self.accumulate(grads, *a, ga);
            }
            Op::OneMinus(a) => {
                let ga = Tensor {
                    shape: g.shape.clone(),
                    data: g.data.iter().map(|&v| -v).collect(),
                };
                self.accumulate(grads, *a, ga);
            }
            Op::Scale(a, c) => {
                let ga = Tensor {
                    shape: g.shape.clone(),
                    data: g.data.iter().map(|&v| v * *c).collect(),
                };
                self.accumulate(grads, *a, ga);
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let ga = pointwise(g, self.value(*b), |gv, bv| gv * bv);
                    self.accumulate(grads, *a, ga);
                }
                if self.needs(*b) {
                    let gb = pointwise(g, self.value(*a), |gv, av| gv * av);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sum(a) => {
                let ga = Tensor::full(&self.value(*a).shape, g.data[0]);
                self.accumulate(grads, *a, ga);
            }
            Op::Bce { pred, target, pos_weight } => {
                let p = self.value(*pred);
                let eps = T::from_f64(BCE_EPS);
                let scale = g.data[0] / T::from_f64(p.len() as f64);
                let data = p
                    .data
                    .iter()
                    .zip(target)
                    .map(|(&pv, &tv)| {
                        if pv < eps || pv > T::one() - eps {
                            T::zero()
                        } else {
                            scale * ((T::one() - tv) / (T::one() - pv) - *pos_weight * tv / pv)
                        }
                    })
                    .collect();
                self.accumulate(
                    grads,
                    *pred,
                    Tensor {
                        shape: p.shape.clone(),
                        data,
                    },
                );
            }
            Op::Contrastive { emb, pairs, margin } => {
                let e = self.value(*emb);
                let (dims, plane) = (e.channels(), e.plane());
                let mut ge = Tensor::zeros(&e.shape);
                let scale = g.data[0] / T::from_f64(pairs.len() as f64);
                let two = T::from_f64(2.0);
                for &(a, b, same) in pairs {
                    let diffs: Vec<T> = (0..dims).map(|c| e.data[c * plane + a] - e.data[c * plane + b]).collect();
                    let coeff = if same {
                        two
                    } else {
                        let d = diffs.iter().map(|&v| v * v).sum::<T>().sqrt();
                        if d >= *margin || d <= T::from_f64(1e-12) {
                            T::zero()
                        } else {
                            -two * (*margin - d) / d
                        }
                    };
                    if coeff == T::zero() {
                        continue;
                    }
                    for (c, &diff) in diffs.iter().enumerate() {
                        let v = scale * coeff * diff;
                        ge.data[c * plane + a] += v;
                        ge.data[c * plane + b] -= v;
                    }
                }
                self.accumulate(grads, *emb, ge);
            }
            Op::GroupMean { a, groups } => {
                let src = self.value(*a);
                let (c, plane) = (src.channels(), src.plane());
                let mut ga = Tensor::zeros(&src.shape);
                for (gi, members) in groups.iter().enumerate() {
                    let inv = T::one() / T::from_f64(members.len() as f64);
                    for ch in 0..c {
                        let v = g.data[gi * c + ch] * inv;
                        for &m in members {
                            ga.data[ch * plane + m] += v;
                        }
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SoftmaxCe { logits, labels } => {
                let t = self.value(*logits);
                let cols = t.len() / labels.len();
                let scale = g.data[0] / T::from_f64(labels.len() as f64);
                let mut gl = Tensor::zeros(&t.shape);
                for (r, &label) in labels.iter().enumerate() {
                    let row = &t.data[r * cols..(r + 1) * cols];
                    let lse = log_sum_exp(row);
                    for (ci, &v) in row.iter().enumerate() {
                        let p = (v - lse).exp();
                        let onehot = if ci == label { T::one() } else { T::zero() };
                        gl.data[r * cols + ci] = scale * (p - onehot);
                    }
                }
                self.accumulate(grads, *logits, gl);
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.data.iter_mut().zip(&g.data) {
                    *e += *x;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }
}

fn pointwise<T: Real>(g: &Tensor<T>, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor {
        shape: g.shape.clone(),
        data: g.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
    }
}

pub(crate) fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let m = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}
