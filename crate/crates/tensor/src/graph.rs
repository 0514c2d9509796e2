//! Reverse-mode tape. Every op appends a node holding its forward value; the
//! backward sweep walks nodes in reverse creation order, which is a valid
//! topological order because a node can only reference earlier nodes.

use crate::kernels::{self, ConvGeom};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMulT(Var, Var),
    AddRowBias(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Relu(Var),
    Silu(Var),
    InstanceNorm {
        x: Var,
        rstd: Vec<T>,
    },
    Modulate {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    AddChannel {
        x: Var,
        v: Var,
    },
    AvgPool2(Var),
    Upsample2(Var),
    ConcatChannels(Var, Var),
    GlobalAvgPool(Var),
    L2NormalizeRows {
        x: Var,
        norms: Vec<T>,
    },
    Mse(Var, Var),
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Reshape(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by a backward sweep, indexed by [`Var`].
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that gradients flow into (parameters, or images being optimised).
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a), &[a])
    }

    /// `a (m×k) · bᵀ` where `b` is `n×k`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa.len() == 2 && sb.len() == 2, "matmul_t needs rank-2 operands");
        assert_eq!(sa[1], sb[1], "matmul_t inner dimension mismatch {sa:?} vs {sb:?}");
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![T::zero(); m * n];
        kernels::matmul(self.value(a).data(), false, self.value(b).data(), true, &mut out, m, k, n, false);
        self.push(Tensor::new(vec![m, n], out), Op::MatMulT(a, b), &[a, b])
    }

    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Var {
        let cols = self.shape(x)[1];
        assert_eq!(self.shape(b), &[cols], "row bias shape mismatch");
        let bias = self.value(b).data().to_vec();
        let mut v = self.value(x).clone();
        for row in v.data_mut().chunks_mut(cols) {
            for (r, &bb) in row.iter_mut().zip(&bias) {
                *r += bb;
            }
        }
        self.push(v, Op::AddRowBias(x, b), &[x, b])
    }

    /// `x · wᵀ + b` with `w` shaped `(out, in)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let y = self.matmul_t(x, w);
        match b {
            Some(b) => self.add_row_bias(y, b),
            None => y,
        }
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride, pad);
        let bias = b.map(|b| self.value(b).data());
        if let Some(bias) = bias {
            assert_eq!(bias.len(), geom.co, "conv bias length mismatch");
        }
        let out = kernels::conv2d_forward(&geom, self.value(x).data(), self.value(w).data(), bias);
        let t = Tensor::new(vec![geom.n, geom.co, geom.ho, geom.wo], out);
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(t, Op::Conv2d { x, w, b, geom }, &parents)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(T::zero()));
        self.push(v, Op::Relu(x), &[x])
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a / (T::one() + (-a).exp()));
        self.push(v, Op::Silu(x), &[x])
    }

    /// Standardises every `(sample, channel)` plane of a rank-4 input.
    pub fn instance_norm(&mut self, x: Var, eps: T) -> Var {
        let shape = self.shape(x).to_vec();
        assert_eq!(shape.len(), 4, "instance_norm needs rank 4");
        let plane = shape[2] * shape[3];
        let planes = shape[0] * shape[1];
        let mut out = self.value(x).clone();
        let mut rstd = Vec::with_capacity(planes);
        let m = T::from_usize(plane).unwrap();
        for p in out.data_mut().chunks_mut(plane) {
            let mean = p.iter().copied().sum::<T>() / m;
            let var = p.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
            let r = T::one() / (var + eps).sqrt();
            for v in p.iter_mut() {
                *v = (*v - mean) * r;
            }
            rstd.push(r);
        }
        self.push(out, Op::InstanceNorm { x, rstd }, &[x])
    }

    /// `x · gamma + beta` with per-(sample, channel) coefficients of shape `(n, c)`.
    pub fn modulate(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let nc = &shape[..2];
        assert_eq!(self.shape(gamma), nc, "modulate gamma shape mismatch");
        assert_eq!(self.shape(beta), nc, "modulate beta shape mismatch");
        let plane = shape[2] * shape[3];
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let mut out = self.value(x).clone();
        for (i, p) in out.data_mut().chunks_mut(plane).enumerate() {
            for v in p.iter_mut() {
                *v = *v * g[i] + b[i];
            }
        }
        self.push(out, Op::Modulate { x, gamma, beta }, &[x, gamma, beta])
    }

    /// Adds a per-(sample, channel) value to every spatial position.
    pub fn add_channel(&mut self, x: Var, v: Var) -> Var {
        let shape = self.shape(x).to_vec();
        assert_eq!(self.shape(v), &shape[..2], "add_channel shape mismatch");
        let plane = shape[2] * shape[3];
        let add = self.value(v).data().to_vec();
        let mut out = self.value(x).clone();
        for (i, p) in out.data_mut().chunks_mut(plane).enumerate() {
            for e in p.iter_mut() {
                *e += add[i];
            }
        }
        self.push(out, Op::AddChannel { x, v }, &[x, v])
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert!(s.len() == 4 && s[2] % 2 == 0 && s[3] % 2 == 0, "avg_pool2 needs even spatial dims");
        let out = kernels::avg_pool2_forward(&s, self.value(x).data());
        self.push(Tensor::new(vec![s[0], s[1], s[2] / 2, s[3] / 2], out), Op::AvgPool2(x), &[x])
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 4, "upsample2 needs rank 4");
        let out = kernels::upsample2_forward(&s, self.value(x).data());
        self.push(Tensor::new(vec![s[0], s[1], s[2] * 2, s[3] * 2], out), Op::Upsample2(x), &[x])
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert!(
            sa.len() == 4 && sa[0] == sb[0] && sa[2..] == sb[2..],
            "concat_channels shape mismatch {sa:?} vs {sb:?}"
        );
        let plane = sa[2] * sa[3];
        let (ca, cb) = (sa[1] * plane, sb[1] * plane);
        let mut out = Vec::with_capacity(sa[0] * (ca + cb));
        for n in 0..sa[0] {
            out.extend_from_slice(&self.value(a).data()[n * ca..(n + 1) * ca]);
            out.extend_from_slice(&self.value(b).data()[n * cb..(n + 1) * cb]);
        }
        let shape = vec![sa[0], sa[1] + sb[1], sa[2], sa[3]];
        self.push(Tensor::new(shape, out), Op::ConcatChannels(a, b), &[a, b])
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 4, "global_avg_pool needs rank 4");
        let plane = s[2] * s[3];
        let m = T::from_usize(plane).unwrap();
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|p| p.iter().copied().sum::<T>() / m)
            .collect();
        self.push(Tensor::new(vec![s[0], s[1]], out), Op::GlobalAvgPool(x), &[x])
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let cols = self.shape(x)[1];
        let floor = T::lit(1e-12);
        let mut out = self.value(x).clone();
        let mut norms = Vec::new();
        for row in out.data_mut().chunks_mut(cols) {
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(floor);
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        self.push(out, Op::L2NormalizeRows { x, norms }, &[x])
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mse shape mismatch");
        let n = T::from_usize(va.numel()).unwrap();
        let s = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<T>()
            / n;
        self.push(Tensor::scalar(s), Op::Mse(a, b), &[a, b])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let s = self.value(x).mean();
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let s = self.shape(logits).to_vec();
        assert_eq!(s.len(), 2, "cross_entropy needs (rows, classes)");
        assert_eq!(s[0], targets.len(), "one target per row");
        let classes = s[1];
        let mut probs = Vec::with_capacity(s[0] * classes);
        let mut loss = T::zero();
        for (row, &t) in self.value(logits).data().chunks(classes).zip(targets) {
            assert!(t < classes, "target {t} out of range");
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let z: T = row.iter().map(|&v| (v - max).exp()).sum();
            let lz = z.ln() + max;
            loss += lz - row[t];
            probs.extend(row.iter().map(|&v| (v - lz).exp()));
        }
        let loss = loss / T::from_usize(s[0]).unwrap();
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let v = self.value(x).clone().reshape(shape);
        self.push(v, Op::Reshape(x), &[x])
    }

    /// Backward sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Grads<T> {
        assert_eq!(self.value(root).numel(), 1, "backward() needs a scalar root");
        let seed = Tensor::full(self.shape(root), T::one());
        self.backward_with(root, seed)
    }

    /// Backward sweep seeded with an explicit output cotangent.
    pub fn backward_with(&self, root: Var, seed: Tensor<T>) -> Grads<T> {
        assert_eq!(seed.shape(), self.shape(root), "seed shape mismatch");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        Grads { grads }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, t: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-T::one()));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(self.value(*b), |x, y| x * y));
                acc(*b, g.zip_map(self.value(*a), |x, y| x * y));
            }
            Op::Scale(a, s) => acc(*a, g.scale(*s)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::MatMulT(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[0]);
                if self.needs(*a) {
                    // da = g · b
                    let mut da = vec![T::zero(); m * k];
                    kernels::matmul(g.data(), false, vb.data(), false, &mut da, m, n, k, false);
                    acc(*a, Tensor::new(vec![m, k], da));
                }
                if self.needs(*b) {
                    // db = gᵀ · a
                    let mut db = vec![T::zero(); n * k];
                    kernels::matmul(g.data(), true, va.data(), false, &mut db, n, m, k, false);
                    acc(*b, Tensor::new(vec![n, k], db));
                }
            }
            Op::AddRowBias(x, b) => {
                let cols = g.shape()[1];
                let mut db = vec![T::zero(); cols];
                for row in g.data().chunks(cols) {
                    for (d, &r) in db.iter_mut().zip(row) {
                        *d += r;
                    }
                }
                acc(*x, g.clone());
                acc(*b, Tensor::new(vec![cols], db));
            }
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g.data(),
                    self.needs(*x),
                );
                if let Some(dx) = dx {
                    acc(*x, Tensor::new(self.shape(*x).to_vec(), dx));
                }
                acc(*w, Tensor::new(self.shape(*w).to_vec(), dw));
                if let Some(b) = b {
                    acc(*b, Tensor::new(vec![geom.co], db));
                }
            }
            Op::Relu(x) => {
                let d = g.zip_map(self.value(*x), |gv, xv| if xv > T::zero() { gv } else { T::zero() });
                acc(*x, d);
            }
            Op::Silu(x) => {
                let d = g.zip_map(self.value(*x), |gv, xv| {
                    let s = T::one() / (T::one() + (-xv).exp());
                    gv * s * (T::one() + xv * (T::one() - s))
                });
                acc(*x, d);
            }
            Op::InstanceNorm { x, rstd } => {
                let s = self.shape(*x);
                let plane = s[2] * s[3];
                let m = T::from_usize(plane).unwrap();
                let xhat = &node.value;
                let mut dx = g.clone();
                for ((d, xh), &r) in dx.data_mut().chunks_mut(plane).zip(xhat.data().chunks(plane)).zip(rstd) {
                    let mean_g = d.iter().copied().sum::<T>() / m;
                    let mean_gx = d.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / m;
                    for (dv, &xv) in d.iter_mut().zip(xh) {
                        *dv = r * (*dv - mean_g - xv * mean_gx);
                    }
                }
                acc(*x, dx);
            }
            Op::Modulate { x, gamma, beta } => {
                let s = self.shape(*x);
                let plane = s[2] * s[3];
                let gam = self.value(*gamma).data();
                let xv = self.value(*x).data();
                let mut dx = g.clone();
                let mut dg = vec![T::zero(); gam.len()];
                let mut dbeta = vec![T::zero(); gam.len()];
                for (i, (d, xp)) in dx.data_mut().chunks_mut(plane).zip(xv.chunks(plane)).enumerate() {
                    let mut sg = T::zero();
                    let mut sb = T::zero();
                    for (dv, &xe) in d.iter_mut().zip(xp) {
                        sg += *dv * xe;
                        sb += *dv;
                        *dv *= gam[i];
                    }
                    dg[i] = sg;
                    dbeta[i] = sb;
                }
                acc(*x, dx);
                acc(*gamma, Tensor::new(s[..2].to_vec(), dg));
                acc(*beta, Tensor::new(s[..2].to_vec(), dbeta));
            }
            Op::AddChannel { x, v } => {
                let s = self.shape(*x);
                let plane = s[2] * s[3];
                let dv: Vec<T> = g.data().chunks(plane).map(|p| p.iter().copied().sum()).collect();
                acc(*x, g.clone());
                acc(*v, Tensor::new(s[..2].to_vec(), dv));
            }
            Op::AvgPool2(x) => {
                let s = self.shape(*x).to_vec();
                acc(*x, Tensor::new(s.clone(), kernels::avg_pool2_backward(&s, g.data())));
            }
            Op::Upsample2(x) => {
                let s = self.shape(*x).to_vec();
                acc(*x, Tensor::new(s.clone(), kernels::upsample2_backward(&s, g.data())));
            }
            Op::ConcatChannels(a, b) => {
                let (sa, sb) = (self.shape(*a).to_vec(), self.shape(*b).to_vec());
                let plane = sa[2] * sa[3];
                let (ca, cb) = (sa[1] * plane, sb[1] * plane);
                let mut da = Vec::with_capacity(sa[0] * ca);
                let mut db = Vec::with_capacity(sa[0] * cb);
                for chunk in g.data().chunks(ca + cb) {
                    da.extend_from_slice(&chunk[..ca]);
                    db.extend_from_slice(&chunk[ca..]);
                }
                acc(*a, Tensor::new(sa, da));
                acc(*b, Tensor::new(sb, db));
            }
            Op::GlobalAvgPool(x) => {
                let s = self.shape(*x).to_vec();
                let plane = s[2] * s[3];
                let inv = T::one() / T::from_usize(plane).unwrap();
                let mut d = Vec::with_capacity(s.iter().product());
                for &gv in g.data() {
                    d.extend(std::iter::repeat_n(gv * inv, plane));
                }
                acc(*x, Tensor::new(s, d));
            }
            Op::L2NormalizeRows { x, norms } => {
                let cols = self.shape(*x)[1];
                let y = &node.value;
                let mut d = g.clone();
                for ((dr, yr), &n) in d.data_mut().chunks_mut(cols).zip(y.data().chunks(cols)).zip(norms) {
                    let dot = dr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>();
                    for (dv, &yv) in dr.iter_mut().zip(yr) {
                        *dv = (*dv - yv * dot) / n;
                    }
                }
                acc(*x, d);
            }
            Op::Mse(a, b) => {
                let gs = g.item();
                let (va, vb) = (self.value(*a), self.value(*b));
                let k = T::lit(2.0) * gs / T::from_usize(va.numel()).unwrap();
                let diff = va.zip_map(vb, |x, y| (x - y) * k);
                if self.needs(*b) {
                    acc(*b, diff.scale(-T::one()));
                }
                acc(*a, diff);
            }
            Op::Sum(x) => {
                acc(*x, Tensor::full(self.shape(*x), g.item()));
            }
            Op::Mean(x) => {
                let n = T::from_usize(self.value(*x).numel()).unwrap();
                acc(*x, Tensor::full(self.shape(*x), g.item() / n));
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let s = self.shape(*logits).to_vec();
                let classes = s[1];
                let k = g.item() / T::from_usize(s[0]).unwrap();
                let mut d = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    d[r * classes + t] -= T::one();
                }
                d.iter_mut().for_each(|v| *v *= k);
                acc(*logits, Tensor::new(s, d));
            }
            Op::Reshape(x) => {
                acc(*x, g.clone().reshape(self.shape(*x)));
            }
        }
    }
}
