use super::params::{ParamGrads, ParamId, ParamStore};
use super::{dims2, matmul_into, matmul_nt_into, matmul_tn_into, softmax_in_place, Real, Tensor};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Storage<T> {
    Owned(Vec<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Maximum(Var, Var),
    Scale(Var, T),
    Sum(Var),
    GatherRows(Var, Vec<usize>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Relu(Var),
    Unfold3(Var),
    MeanPool(Var, usize),
    Dropout(Var, Vec<T>),
    Concat(Vec<Var>, usize),
    SliceCols(Var, usize, usize),
}

struct Node<T> {
    shape: Vec<usize>,
    value: Storage<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation over parameters from a [`ParamStore`].
///
/// Parameter values are borrowed, never copied; every other node owns its
/// buffer. Dropout is active only in training mode.
pub struct Graph<'p, T: Real = f32> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, Var>,
    training: bool,
    rng: ChaCha8Rng,
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// A graph with dropout enabled, masks drawn from `seed`.
    pub fn training(params: &'p ParamStore<T>, seed: u64) -> Self {
        Graph {
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ..Graph::new(params)
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, inputs: &[Var]) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value: Storage::Owned(data),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[T] {
        match &self.nodes[v.0].value {
            Storage::Owned(d) => d,
            Storage::Param(id) => self.params.get(*id).data(),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        dims2(&self.nodes[v.0].shape)
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec())
            .expect("graph nodes hold consistent shapes")
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    /// Untracked constant.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let Tensor { shape, data } = t;
        self.push(shape, data, Op::Leaf, &[])
    }

    /// Tracked leaf whose gradient is reported by [`Graph::backward`].
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        let v = self.constant(t);
        self.nodes[v.0].requires_grad = true;
        v
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let shape = self.params.get(id).shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: Storage::Param(id),
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Dimension {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let src = self.value(a);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        self.push(vec![n, m], out, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("add", a, b));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), &[a, b]))
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.value(row).len() != n {
            return Err(self.mismatch("add_row", a, row));
        }
        let r = self.value(row);
        let mut out = self.value(a).to_vec();
        for i in 0..m {
            for (o, &b) in out[i * n..(i + 1) * n].iter_mut().zip(r) {
                *o += b;
            }
        }
        Ok(self.push(self.shape(a).to_vec(), out, Op::AddRow(a, row), &[a, row]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("mul", a, b));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), &[a, b]))
    }

    /// Elementwise maximum; ties send the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("maximum", a, b));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| if x >= y { x } else { y })
            .collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Maximum(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).iter().map(|&x| x * c).collect();
        self.push(self.shape(a).to_vec(), out, Op::Scale(a, c), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        self.push(vec![1], vec![s], Op::Sum(a), &[a])
    }

    /// Selects rows of a matrix by index. With an embedding table as input
    /// this is the embedding lookup.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, cols) = self.dims(table);
        if ids.is_empty() {
            return Err(Error::Dimension {
                op: "gather_rows",
                left: self.shape(table).to_vec(),
                right: vec![0],
            });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Dimension {
                op: "gather_rows",
                left: self.shape(table).to_vec(),
                right: vec![bad],
            });
        }
        let src = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        Ok(self.push(
            vec![ids.len(), cols],
            out,
            Op::GatherRows(table, ids.to_vec()),
            &[table],
        ))
    }

    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather_rows(table, ids)
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.value(gamma).len() != n {
            return Err(self.mismatch("layer_norm", x, gamma));
        }
        if self.value(beta).len() != n {
            return Err(self.mismatch("layer_norm", x, beta));
        }
        let eps = T::of(1e-5);
        let nf = T::of(n as f64);
        let xs = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut xhat = vec![T::zero(); m * n];
        let mut inv_std = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &xs[i * n..(i + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (m, n) = self.dims(x);
        let mut out = self.value(x).to_vec();
        for i in 0..m {
            softmax_in_place(&mut out[i * n..(i + 1) * n]);
        }
        self.push(self.shape(x).to_vec(), out, Op::Softmax(x), &[x])
    }

    /// Row-wise softmax where `mask[i] == false` entries get probability 0.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (m, n) = self.dims(x);
        if mask.len() != m * n {
            return Err(Error::Dimension {
                op: "masked_softmax",
                left: self.shape(x).to_vec(),
                right: vec![mask.len()],
            });
        }
        let mut out = self.value(x).to_vec();
        for (o, &keep) in out.iter_mut().zip(mask) {
            if !keep {
                *o = T::neg_infinity();
            }
        }
        for i in 0..m {
            softmax_in_place(&mut out[i * n..(i + 1) * n]);
        }
        Ok(self.push(self.shape(x).to_vec(), out, Op::Softmax(x), &[x]))
    }

    /// Mean over rows of `-log softmax(logits)[target]`. Scalar output.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(logits);
        if targets.len() != m {
            return Err(Error::Dimension {
                op: "cross_entropy",
                left: self.shape(logits).to_vec(),
                right: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
            return Err(Error::Dimension {
                op: "cross_entropy",
                left: self.shape(logits).to_vec(),
                right: vec![bad],
            });
        }
        let mut probs = self.value(logits).to_vec();
        let mut loss = T::zero();
        for (i, &t) in targets.iter().enumerate() {
            let row = &mut probs[i * n..(i + 1) * n];
            softmax_in_place(row);
            loss -= row[t].max(T::min_positive_value()).ln();
        }
        loss /= T::of(m as f64);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v.max(T::zero())).collect();
        self.push(self.shape(x).to_vec(), out, Op::Relu(x), &[x])
    }

    /// `[L×C] -> [L×3C]`, row `t` = `[x_{t-1}, x_t, x_{t+1}]` with zero padding.
    fn unfold3(&mut self, x: Var) -> Var {
        let (l, c) = self.dims(x);
        let src = self.value(x);
        let mut out = vec![T::zero(); l * 3 * c];
        for t in 0..l {
            for k in 0..3 {
                let s = t as isize + k as isize - 1;
                if s < 0 || s >= l as isize {
                    continue;
                }
                let s = s as usize;
                out[t * 3 * c + k * c..t * 3 * c + (k + 1) * c]
                    .copy_from_slice(&src[s * c..(s + 1) * c]);
            }
        }
        self.push(vec![l, 3 * c], out, Op::Unfold3(x), &[x])
    }

    /// Kernel-3 convolution over rows with same-length zero padding.
    ///
    /// `x` is `[L×C_in]`, `weight` is `[3·C_in × C_out]` (taps ordered
    /// previous, current, next), `bias` has length `C_out`.
    pub fn conv1d(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (_, c_in) = self.dims(x);
        let (wr, _) = self.dims(weight);
        if wr != 3 * c_in {
            return Err(self.mismatch("conv1d", x, weight));
        }
        let cols = self.unfold3(x);
        let y = self.matmul(cols, weight)?;
        self.add_row(y, bias)
    }

    /// Mean over `axis` (0: over rows, giving `[1×n]`; 1: over columns, giving `[m×1]`).
    pub fn mean_pool(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (m, n) = self.dims(x);
        let src = self.value(x);
        let (shape, out) = match axis {
            0 => {
                let mut out = vec![T::zero(); n];
                for i in 0..m {
                    for (o, &v) in out.iter_mut().zip(&src[i * n..(i + 1) * n]) {
                        *o += v;
                    }
                }
                let inv = T::one() / T::of(m as f64);
                out.iter_mut().for_each(|o| *o *= inv);
                (vec![1, n], out)
            }
            1 => {
                let inv = T::one() / T::of(n as f64);
                let out = (0..m)
                    .map(|i| src[i * n..(i + 1) * n].iter().copied().sum::<T>() * inv)
                    .collect();
                (vec![m, 1], out)
            }
            _ => {
                return Err(Error::Dimension {
                    op: "mean_pool",
                    left: self.shape(x).to_vec(),
                    right: vec![axis],
                })
            }
        };
        Ok(self.push(shape, out, Op::MeanPool(x, axis), &[x]))
    }

    /// Inverted dropout; the identity outside training mode.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        if !self.training || rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let scale = T::of(1.0 / keep);
        let n = self.value(x).len();
        let mask: Vec<T> = (0..n)
            .map(|_| {
                if self.rng.gen::<f64>() < keep {
                    scale
                } else {
                    T::zero()
                }
            })
            .collect();
        let out = self
            .value(x)
            .iter()
            .zip(&mask)
            .map(|(&v, &k)| v * k)
            .collect();
        self.push(self.shape(x).to_vec(), out, Op::Dropout(x, mask), &[x])
    }

    /// Concatenates 2-D values along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Dimension {
            op: "concat",
            left: vec![],
            right: vec![],
        })?;
        let (_, n0) = self.dims(first);
        let (m0, _) = self.dims(first);
        match axis {
            0 => {
                let mut rows = 0;
                let mut out = Vec::new();
                for &p in parts {
                    let (m, n) = self.dims(p);
                    if n != n0 {
                        return Err(self.mismatch("concat", first, p));
                    }
                    rows += m;
                    out.extend_from_slice(self.value(p));
                }
                Ok(self.push(vec![rows, n0], out, Op::Concat(parts.to_vec(), 0), parts))
            }
            1 => {
                let mut total = 0;
                for &p in parts {
                    let (m, n) = self.dims(p);
                    if m != m0 {
                        return Err(self.mismatch("concat", first, p));
                    }
                    total += n;
                }
                let mut out = Vec::with_capacity(m0 * total);
                for i in 0..m0 {
                    for &p in parts {
                        let (_, n) = self.dims(p);
                        out.extend_from_slice(&self.value(p)[i * n..(i + 1) * n]);
                    }
                }
                Ok(self.push(vec![m0, total], out, Op::Concat(parts.to_vec(), 1), parts))
            }
            _ => Err(Error::Dimension {
                op: "concat",
                left: self.shape(first).to_vec(),
                right: vec![axis],
            }),
        }
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims(x);
        if start >= end || end > n {
            return Err(Error::Dimension {
                op: "slice_cols",
                left: self.shape(x).to_vec(),
                right: vec![start, end],
            });
        }
        let src = self.value(x);
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        Ok(self.push(vec![m, w], out, Op::SliceCols(x, start, end), &[x]))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let node = &self.nodes[loss.0];
        if node.shape.iter().product::<usize>() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.shape
            )));
        }
        if !node.requires_grad {
            return Err(Error::Usage(
                "backward on a value that depends on no tracked parameter".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut out = Gradients {
            by_node: HashMap::new(),
            params: Vec::new(),
        };
        for (i, node) in self.nodes.iter().enumerate() {
            match node.op {
                Op::Leaf if node.requires_grad => {
                    let g = grads[i]
                        .take()
                        .unwrap_or_else(|| vec![T::zero(); self.value(Var(i)).len()]);
                    out.by_node.insert(i, g);
                }
                Op::Param(id) => {
                    let g = grads[i]
                        .take()
                        .unwrap_or_else(|| vec![T::zero(); self.value(Var(i)).len()]);
                    out.params.push((id, g.clone()));
                    out.by_node.insert(i, g);
                }
                _ => {}
            }
        }
        Ok(out)
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        macro_rules! slot {
            ($v:expr) => {
                grad_slot(grads, $v, self.value($v).len())
            };
        }

        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let (_, n) = self.dims(*b);
                if self.wants(*a) {
                    let bv = self.value(*b);
                    matmul_nt_into(g, bv, slot!(*a), m, n, k);
                }
                if self.wants(*b) {
                    let av = self.value(*a);
                    matmul_tn_into(av, g, slot!(*b), m, k, n);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.dims(*a);
                let ga = slot!(*a);
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] += g[j * m + i];
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        let gv = slot!(v);
                        for (x, &d) in gv.iter_mut().zip(g) {
                            *x += d;
                        }
                    }
                }
            }
            Op::AddRow(a, r) => {
                if self.wants(*a) {
                    let ga = slot!(*a);
                    for (x, &d) in ga.iter_mut().zip(g) {
                        *x += d;
                    }
                }
                if self.wants(*r) {
                    let (m, n) = self.dims(*a);
                    let gr = slot!(*r);
                    for i in 0..m {
                        for (x, &d) in gr.iter_mut().zip(&g[i * n..(i + 1) * n]) {
                            *x += d;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let bv = self.value(*b);
                    let ga = slot!(*a);
                    for ((x, &d), &o) in ga.iter_mut().zip(g).zip(bv) {
                        *x += d * o;
                    }
                }
                if self.wants(*b) {
                    let av = self.value(*a);
                    let gb = slot!(*b);
                    for ((x, &d), &o) in gb.iter_mut().zip(g).zip(av) {
                        *x += d * o;
                    }
                }
            }
            Op::Maximum(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.wants(*a) {
                    let ga = slot!(*a);
                    for i in 0..g.len() {
                        if av[i] >= bv[i] {
                            ga[i] += g[i];
                        }
                    }
                }
                if self.wants(*b) {
                    let gb = slot!(*b);
                    for i in 0..g.len() {
                        if av[i] < bv[i] {
                            gb[i] += g[i];
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                let ga = slot!(*a);
                for (x, &d) in ga.iter_mut().zip(g) {
                    *x += d * *c;
                }
            }
            Op::Sum(a) => {
                let ga = slot!(*a);
                for x in ga.iter_mut() {
                    *x += g[0];
                }
            }
            Op::GatherRows(t, ids) => {
                let (_, cols) = self.dims(*t);
                let gt = slot!(*t);
                for (r, &id) in ids.iter().enumerate() {
                    for (x, &d) in gt[id * cols..(id + 1) * cols]
                        .iter_mut()
                        .zip(&g[r * cols..(r + 1) * cols])
                    {
                        *x += d;
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (m, n) = self.dims(*x);
                let gv = self.value(*gamma);
                if self.wants(*gamma) {
                    let gg = slot!(*gamma);
                    for i in 0..m {
                        for j in 0..n {
                            gg[j] += g[i * n + j] * xhat[i * n + j];
                        }
                    }
                }
                if self.wants(*beta) {
                    let gb = slot!(*beta);
                    for i in 0..m {
                        for j in 0..n {
                            gb[j] += g[i * n + j];
                        }
                    }
                }
                if self.wants(*x) {
                    let nf = T::of(n as f64);
                    let gx = slot!(*x);
                    for i in 0..m {
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for j in 0..n {
                            let d = g[i * n + j] * gv[j];
                            sum_d += d;
                            sum_dx += d * xhat[i * n + j];
                        }
                        for j in 0..n {
                            let d = g[i * n + j] * gv[j];
                            gx[i * n + j] += inv_std[i] / nf
                                * (nf * d - sum_d - xhat[i * n + j] * sum_dx);
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let (m, n) = self.dims(*x);
                let y = match &node.value {
                    Storage::Owned(d) => d,
                    Storage::Param(_) => unreachable!(),
                };
                let gx = slot!(*x);
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        gx[i * n + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let (m, n) = self.dims(*logits);
                let s = g[0] / T::of(m as f64);
                let gl = slot!(*logits);
                for (i, &t) in targets.iter().enumerate() {
                    for j in 0..n {
                        let onehot = if j == t { T::one() } else { T::zero() };
                        gl[i * n + j] += s * (probs[i * n + j] - onehot);
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let gx = slot!(*x);
                for i in 0..g.len() {
                    if xv[i] > T::zero() {
                        gx[i] += g[i];
                    }
                }
            }
            Op::Unfold3(x) => {
                let (l, c) = self.dims(*x);
                let gx = slot!(*x);
                for t in 0..l {
                    for k in 0..3 {
                        let s = t as isize + k as isize - 1;
                        if s < 0 || s >= l as isize {
                            continue;
                        }
                        let s = s as usize;
                        for j in 0..c {
                            gx[s * c + j] += g[t * 3 * c + k * c + j];
                        }
                    }
                }
            }
            Op::MeanPool(x, axis) => {
                let (m, n) = self.dims(*x);
                let gx = slot!(*x);
                if *axis == 0 {
                    let inv = T::one() / T::of(m as f64);
                    for i in 0..m {
                        for j in 0..n {
                            gx[i * n + j] += g[j] * inv;
                        }
                    }
                } else {
                    let inv = T::one() / T::of(n as f64);
                    for i in 0..m {
                        for j in 0..n {
                            gx[i * n + j] += g[i] * inv;
                        }
                    }
                }
            }
            Op::Dropout(x, mask) => {
                let gx = slot!(*x);
                for ((v, &d), &k) in gx.iter_mut().zip(g).zip(mask) {
                    *v += d * k;
                }
            }
            Op::Concat(parts, axis) => {
                if *axis == 0 {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        if self.wants(p) {
                            let gp = slot!(p);
                            for (v, &d) in gp.iter_mut().zip(&g[off..off + len]) {
                                *v += d;
                            }
                        }
                        off += len;
                    }
                } else {
                    let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
                    let m = self.dims(parts[0]).0;
                    let mut col = 0;
                    for &p in parts {
                        let (_, n) = self.dims(p);
                        if self.wants(p) {
                            let gp = slot!(p);
                            for i in 0..m {
                                for j in 0..n {
                                    gp[i * n + j] += g[i * total + col + j];
                                }
                            }
                        }
                        col += n;
                    }
                }
            }
            Op::SliceCols(x, start, end) => {
                let (m, n) = self.dims(*x);
                let w = end - start;
                let gx = slot!(*x);
                for i in 0..m {
                    for j in 0..w {
                        gx[i * n + start + j] += g[i * w + j];
                    }
                }
            }
        }
    }
}

fn grad_slot<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    by_node: HashMap<usize, Vec<T>>,
    params: Vec<(ParamId, Vec<T>)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a tracked leaf or parameter node.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.by_node.get(&v.0).map(Vec::as_slice)
    }

    /// Gradient of a parameter, if it took part in the graph.
    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, g)| g.as_slice())
    }

    /// Adds every parameter gradient into `into`.
    pub fn accumulate(&self, into: &mut ParamGrads<T>) {
        for (id, g) in &self.params {
            for (acc, &d) in into.get_mut(*id).iter_mut().zip(g) {
                *acc += d;
            }
        }
    }
}
