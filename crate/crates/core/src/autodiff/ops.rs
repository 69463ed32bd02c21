use crate::error::{Error, Result};
use crate::tensor::Real;

use super::{Op, Tape, Var};

/// Denominator guard for cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;

/// Shift offsets addressed by a 3-way shift distribution.
pub const SHIFT_OFFSETS: [isize; 3] = [-1, 0, 1];

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub(crate) fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x = *x / sum;
    }
}

pub(crate) fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let sum: T = row.iter().fold(T::zero(), |s, &x| s + (x - max).exp());
    max + sum.ln()
}

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

pub(crate) fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

#[inline]
pub(crate) fn shift_source(i: usize, offset: isize, n: usize) -> usize {
    (i as isize - offset).rem_euclid(n as isize) as usize
}

impl<T: Real> Tape<'_, T> {
    fn expect_matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [m, n] => Ok((m, n)),
            ref s => Err(Error::dim(op, s, &[0, 0])),
        }
    }

    fn expect_vector(&self, op: &'static str, v: Var) -> Result<usize> {
        match *self.shape(v) {
            [n] => Ok(n),
            ref s => Err(Error::dim(op, s, &[0])),
        }
    }

    fn expect_scalar(&self, op: &'static str, v: Var) -> Result<()> {
        if self.numel(v) == 1 {
            Ok(())
        } else {
            Err(Error::dim(op, self.shape(v), &[]))
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) == self.shape(b) {
            Ok(())
        } else {
            Err(Error::dim(op, self.shape(a), self.shape(b)))
        }
    }

    /// Matrix product `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.expect_matrix("matmul", a)?;
        let (k2, n) = self.expect_matrix("matmul", b)?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                for (o, &y) in row.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                    *o += x * y;
                }
            }
        }
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    /// Matrix-vector product `w[m×k] · x[k]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (m, k) = self.expect_matrix("matvec", w)?;
        let kx = self.expect_vector("matvec", x)?;
        if k != kx {
            return Err(Error::dim("matvec", self.shape(w), self.shape(x)));
        }
        let out = matvec_raw(self.value(w), self.value(x), m, k);
        Ok(self.push(vec![m], out, Op::MatVec(w, x), &[w, x]))
    }

    /// `w · x + b`.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let (m, k) = self.expect_matrix("affine", w)?;
        let kx = self.expect_vector("affine", x)?;
        let mb = self.expect_vector("affine", b)?;
        if k != kx || m != mb {
            return Err(Error::dim("affine", self.shape(w), self.shape(x)));
        }
        let mut out = matvec_raw(self.value(w), self.value(x), m, k);
        for (o, &bb) in out.iter_mut().zip(self.value(b)) {
            *o += bb;
        }
        Ok(self.push(vec![m], out, Op::Affine(w, x, b), &[w, x, b]))
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Vec<T>> {
        self.same_shape(op, a, b)?;
        Ok(self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(self.shape(a).to_vec(), out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), &[a, b]))
    }

    /// Multiplies every element of `v` by the scalar node `s`.
    pub fn scale(&mut self, v: Var, s: Var) -> Result<Var> {
        self.expect_scalar("scale", s)?;
        let k = self.scalar(s);
        let out = self.value(v).iter().map(|&x| x * k).collect();
        Ok(self.push(self.shape(v).to_vec(), out, Op::Scale(v, s), &[v, s]))
    }

    /// `1 - x`, elementwise.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| T::one() - v).collect();
        self.push(self.shape(x).to_vec(), out, Op::OneMinus(x), &[x])
    }

    /// `x + c` for a constant `c`.
    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = T::of(c);
        let out = self.value(x).iter().map(|&v| v + c).collect();
        self.push(self.shape(x).to_vec(), out, Op::AddScalar(x), &[x])
    }

    /// Stacks `rows` copies of the vector `v` into a `rows × n` matrix.
    pub fn broadcast_rows(&mut self, v: Var, rows: usize) -> Result<Var> {
        let n = self.expect_vector("broadcast_rows", v)?;
        if rows == 0 {
            return Err(Error::contract("broadcast_rows needs at least one row"));
        }
        let src = self.value(v);
        let mut out = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            out.extend_from_slice(src);
        }
        Ok(self.push(vec![rows, n], out, Op::BroadcastRows(v), &[v]))
    }

    /// Concatenates along the last axis. All other extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        if parts.len() == 1 {
            return Ok(first);
        }
        let lead = &self.shape(first)[..self.shape(first).len().saturating_sub(1)];
        let lead = lead.to_vec();
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(Error::dim("concat", self.shape(first), s));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        Ok(self.push(shape, out, Op::Concat(parts.to_vec()), parts))
    }

    /// `x[start..start+len]` of a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.expect_vector("slice", x)?;
        if len == 0 || start + len > n {
            return Err(Error::Index {
                what: "slice",
                index: start + len,
                size: n,
            });
        }
        let out = self.value(x)[start..start + len].to_vec();
        Ok(self.push(vec![len], out, Op::Slice(x, start), &[x]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        self.push(self.shape(x).to_vec(), out, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v.tanh()).collect();
        self.push(self.shape(x).to_vec(), out, Op::Tanh(x), &[x])
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| softplus(v)).collect();
        self.push(self.shape(x).to_vec(), out, Op::Softplus(x), &[x])
    }

    /// Softmax over the last axis (each row of a matrix, or the whole vector).
    pub fn softmax(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let width = *shape.last().unwrap_or(&1);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(width) {
            softmax_in_place(row);
        }
        self.push(shape, out, Op::Softmax(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().fold(T::zero(), |a, &b| a + b);
        self.push(Vec::new(), vec![s], Op::Sum(x), &[x])
    }

    /// `u·v / (‖u‖‖v‖ + ε)`.
    pub fn cosine_similarity(&mut self, u: Var, v: Var) -> Result<Var> {
        self.expect_vector("cosine_similarity", u)?;
        self.same_shape("cosine_similarity", u, v)?;
        let (uv, vv) = (self.value(u), self.value(v));
        let c = dot(uv, vv) / (norm(uv) * norm(vv) + T::of(COSINE_EPS));
        Ok(self.push(Vec::new(), vec![c], Op::CosineSimilarity(u, v), &[u, v]))
    }

    /// Cosine similarity of `k` against every row of `m`.
    pub fn cosine_rows(&mut self, m: Var, k: Var) -> Result<Var> {
        let (rows, w) = self.expect_matrix("cosine_rows", m)?;
        let kw = self.expect_vector("cosine_rows", k)?;
        if w != kw {
            return Err(Error::dim("cosine_rows", self.shape(m), self.shape(k)));
        }
        let (mv, kv) = (self.value(m), self.value(k));
        let kn = norm(kv);
        let eps = T::of(COSINE_EPS);
        let out = mv
            .chunks(w)
            .map(|row| dot(row, kv) / (norm(row) * kn + eps))
            .collect();
        Ok(self.push(vec![rows], out, Op::CosineRows(m, k), &[m, k]))
    }

    /// `-log softmax(logits)[target]`, computed via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let n = self.expect_vector("cross_entropy", logits)?;
        if target >= n {
            return Err(Error::Index {
                what: "cross_entropy target",
                index: target,
                size: n,
            });
        }
        let z = self.value(logits);
        let loss = log_sum_exp(z) - z[target];
        Ok(self.push(
            Vec::new(),
            vec![loss],
            Op::CrossEntropy(logits, target),
            &[logits],
        ))
    }

    /// Summed binary cross-entropy of independent logits against targets in [0, 1].
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        let n = self.numel(logits);
        if targets.len() != n {
            return Err(Error::dim("bce_with_logits", self.shape(logits), &[targets.len()]));
        }
        let loss = self
            .value(logits)
            .iter()
            .zip(targets)
            .fold(T::zero(), |s, (&z, &y)| s + softplus(z) - z * y);
        Ok(self.push(
            Vec::new(),
            vec![loss],
            Op::BceWithLogits(logits, targets.to_vec()),
            &[logits],
        ))
    }

    /// Row `index` of a matrix (embedding lookup).
    pub fn gather_row(&mut self, table: Var, index: usize) -> Result<Var> {
        let (rows, w) = self.expect_matrix("gather_row", table)?;
        if index >= rows {
            return Err(Error::Index {
                what: "gather_row",
                index,
                size: rows,
            });
        }
        let out = self.value(table)[index * w..(index + 1) * w].to_vec();
        Ok(self.push(vec![w], out, Op::GatherRow(table, index), &[table]))
    }

    /// Circular convolution of a weighting with a distribution over shifts
    /// {-1, 0, +1}: `out[i] = Σ_j w[(i - off_j) mod N] · s[j]`.
    pub fn circular_shift(&mut self, w: Var, s: Var) -> Result<Var> {
        let n = self.expect_vector("circular_shift", w)?;
        if self.shape(s) != [SHIFT_OFFSETS.len()] {
            return Err(Error::dim("circular_shift", self.shape(s), &[SHIFT_OFFSETS.len()]));
        }
        let (wv, sv) = (self.value(w), self.value(s));
        let out = (0..n)
            .map(|i| {
                SHIFT_OFFSETS
                    .iter()
                    .zip(sv)
                    .fold(T::zero(), |acc, (&off, &sj)| acc + wv[shift_source(i, off, n)] * sj)
            })
            .collect();
        Ok(self.push(vec![n], out, Op::CircularShift(w, s), &[w, s]))
    }

    /// `w[i]^γ / Σ_j w[j]^γ`, evaluated relative to `max(w)` so that large γ
    /// cannot underflow the normalizer.
    pub fn sharpen(&mut self, w: Var, gamma: Var) -> Result<Var> {
        self.expect_vector("sharpen", w)?;
        self.expect_scalar("sharpen", gamma)?;
        let g = self.scalar(gamma);
        let out = sharpen_raw(self.value(w), g);
        Ok(self.push(self.shape(w).to_vec(), out, Op::Sharpen(w, gamma), &[w, gamma]))
    }

    /// Weighted sum of memory rows, `Σ_i w[i]·m[i]`.
    pub fn read_rows(&mut self, m: Var, w: Var) -> Result<Var> {
        let (rows, width) = self.expect_matrix("read_rows", m)?;
        if self.shape(w) != [rows] {
            return Err(Error::dim("read_rows", self.shape(m), self.shape(w)));
        }
        let (mv, wv) = (self.value(m), self.value(w));
        let mut out = vec![T::zero(); width];
        for (row, &wi) in mv.chunks(width).zip(wv) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += wi * x;
            }
        }
        Ok(self.push(vec![width], out, Op::ReadRows(m, w), &[m, w]))
    }

    /// Erase-then-add memory update,
    /// `m'[i] = m[i] ∘ (1 - w[i]·e) + w[i]·a`.
    pub fn erase_add(&mut self, m: Var, w: Var, e: Var, a: Var) -> Result<Var> {
        let (rows, width) = self.expect_matrix("erase_add", m)?;
        if self.shape(w) != [rows] {
            return Err(Error::dim("erase_add", self.shape(m), self.shape(w)));
        }
        if self.shape(e) != [width] || self.shape(a) != [width] {
            return Err(Error::dim("erase_add", self.shape(e), self.shape(a)));
        }
        let (mv, wv, ev, av) = (self.value(m), self.value(w), self.value(e), self.value(a));
        let mut out = Vec::with_capacity(rows * width);
        for (row, &wi) in mv.chunks(width).zip(wv) {
            for j in 0..width {
                out.push(row[j] * (T::one() - wi * ev[j]) + wi * av[j]);
            }
        }
        Ok(self.push(vec![rows, width], out, Op::EraseAdd(m, w, e, a), &[m, w, e, a]))
    }
}

pub(crate) fn matvec_raw<T: Real>(w: &[T], x: &[T], m: usize, k: usize) -> Vec<T> {
    (0..m).map(|i| dot(&w[i * k..(i + 1) * k], x)).collect()
}

pub(crate) fn sharpen_raw<T: Real>(w: &[T], gamma: T) -> Vec<T> {
    let max = w.iter().fold(T::zero(), |m, &x| m.max(x));
    if max <= T::zero() {
        let u = T::one() / T::of(w.len() as f64);
        return vec![u; w.len()];
    }
    let mut out: Vec<T> = w.iter().map(|&x| (x / max).powf(gamma)).collect();
    let z: T = out.iter().fold(T::zero(), |s, &x| s + x);
    for x in out.iter_mut() {
        *x = *x / z;
    }
    out
}
