use crate::tensor::Real;

use super::ops::{dot, norm, shift_source, sigmoid, COSINE_EPS, SHIFT_OFFSETS};
use super::{Gradients, Op, Tape, Var};

struct Acc<'a, 't, T: Real> {
    tape: &'a Tape<'t, T>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Acc<'_, '_, T> {
    /// Mutable gradient buffer for `v`, or `None` when `v` needs no gradient.
    fn buf(&mut self, v: Var) -> Option<&mut [T]> {
        let node = &self.tape.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let n = node.shape.iter().product();
        Some(self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn add_scaled(&mut self, v: Var, g: &[T], s: T) {
        if let Some(b) = self.buf(v) {
            for (x, &y) in b.iter_mut().zip(g) {
                *x += y * s;
            }
        }
    }
}

pub(super) fn run<T: Real>(tape: &Tape<'_, T>, root: Var) -> Gradients<T> {
    let n = tape.nodes.len();
    let mut acc = Acc {
        tape,
        grads: vec![None; n],
    };
    if tape.nodes[root.0].requires_grad {
        acc.grads[root.0] = Some(vec![T::one()]);
    }

    for i in (0..=root.0).rev() {
        let node = &tape.nodes[i];
        if matches!(node.op, Op::Leaf | Op::Param(_)) {
            continue;
        }
        let Some(g) = acc.grads[i].take() else {
            continue;
        };
        step(&mut acc, Var(i), &g);
    }

    let shapes = tape.nodes.iter().map(|nd| nd.shape.iter().product()).collect();
    let mut params = vec![None; tape.param_vars.len()];
    for (pid, var) in tape.param_vars.iter().enumerate() {
        if let Some(v) = var {
            params[pid] = acc.grads[v.0].clone();
        }
    }
    Gradients {
        leaves: acc.grads,
        shapes,
        params,
    }
}

fn step<T: Real>(acc: &mut Acc<'_, '_, T>, out: Var, g: &[T]) {
    let tape = acc.tape;
    let y = tape.value(out);
    match &tape.nodes[out.0].op {
        Op::Leaf | Op::Param(_) => {}
        Op::MatMul(a, b) => {
            let (m, k) = (tape.shape(*a)[0], tape.shape(*a)[1]);
            let nn = tape.shape(*b)[1];
            let (av, bv) = (tape.value(*a), tape.value(*b));
            if let Some(ga) = acc.buf(*a) {
                for i in 0..m {
                    for p in 0..k {
                        ga[i * k + p] += dot(&g[i * nn..(i + 1) * nn], &bv[p * nn..(p + 1) * nn]);
                    }
                }
            }
            if let Some(gb) = acc.buf(*b) {
                for i in 0..m {
                    for p in 0..k {
                        let x = av[i * k + p];
                        for j in 0..nn {
                            gb[p * nn + j] += x * g[i * nn + j];
                        }
                    }
                }
            }
        }
        Op::MatVec(w, x) => matvec_back(acc, *w, *x, g),
        Op::Affine(w, x, b) => {
            matvec_back(acc, *w, *x, g);
            acc.add_scaled(*b, g, T::one());
        }
        Op::Add(a, b) => {
            acc.add_scaled(*a, g, T::one());
            acc.add_scaled(*b, g, T::one());
        }
        Op::Sub(a, b) => {
            acc.add_scaled(*a, g, T::one());
            acc.add_scaled(*b, g, -T::one());
        }
        Op::Mul(a, b) => {
            let (av, bv) = (tape.value(*a), tape.value(*b));
            if let Some(ga) = acc.buf(*a) {
                for ((x, &gi), &bi) in ga.iter_mut().zip(g).zip(bv) {
                    *x += gi * bi;
                }
            }
            if let Some(gb) = acc.buf(*b) {
                for ((x, &gi), &ai) in gb.iter_mut().zip(g).zip(av) {
                    *x += gi * ai;
                }
            }
        }
        Op::Scale(v, s) => {
            let k = tape.scalar(*s);
            let vv = tape.value(*v);
            acc.add_scaled(*v, g, k);
            if let Some(gs) = acc.buf(*s) {
                gs[0] += dot(g, vv);
            }
        }
        Op::OneMinus(x) => acc.add_scaled(*x, g, -T::one()),
        Op::AddScalar(x) => acc.add_scaled(*x, g, T::one()),
        Op::BroadcastRows(v) => {
            let n = tape.numel(*v);
            if let Some(gv) = acc.buf(*v) {
                for row in g.chunks(n) {
                    for (x, &r) in gv.iter_mut().zip(row) {
                        *x += r;
                    }
                }
            }
        }
        Op::Concat(parts) => {
            let shape = tape.shape(out);
            let total = *shape.last().unwrap();
            let rows = g.len() / total;
            let mut offset = 0;
            for &p in parts {
                let w = *tape.shape(p).last().unwrap();
                if let Some(gp) = acc.buf(p) {
                    for r in 0..rows {
                        for j in 0..w {
                            gp[r * w + j] += g[r * total + offset + j];
                        }
                    }
                }
                offset += w;
            }
        }
        Op::Slice(x, start) => {
            let start = *start;
            if let Some(gx) = acc.buf(*x) {
                for (o, &gi) in gx[start..start + g.len()].iter_mut().zip(g) {
                    *o += gi;
                }
            }
        }
        Op::Sigmoid(x) => {
            if let Some(gx) = acc.buf(*x) {
                for ((o, &gi), &yi) in gx.iter_mut().zip(g).zip(y) {
                    *o += gi * yi * (T::one() - yi);
                }
            }
        }
        Op::Tanh(x) => {
            if let Some(gx) = acc.buf(*x) {
                for ((o, &gi), &yi) in gx.iter_mut().zip(g).zip(y) {
                    *o += gi * (T::one() - yi * yi);
                }
            }
        }
        Op::Softplus(x) => {
            let xv = tape.value(*x);
            if let Some(gx) = acc.buf(*x) {
                for ((o, &gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                    *o += gi * sigmoid(xi);
                }
            }
        }
        Op::Softmax(x) => {
            let width = *tape.shape(out).last().unwrap_or(&1);
            if let Some(gx) = acc.buf(*x) {
                for ((gxr, gr), yr) in gx.chunks_mut(width).zip(g.chunks(width)).zip(y.chunks(width)) {
                    let s = dot(gr, yr);
                    for ((o, &gi), &yi) in gxr.iter_mut().zip(gr).zip(yr) {
                        *o += yi * (gi - s);
                    }
                }
            }
        }
        Op::Sum(x) => {
            let g0 = g[0];
            if let Some(gx) = acc.buf(*x) {
                for o in gx.iter_mut() {
                    *o += g0;
                }
            }
        }
        Op::CosineSimilarity(u, v) => {
            let (uv, vv) = (tape.value(*u), tape.value(*v));
            let (du, dv) = cosine_grads(uv, vv);
            acc.add_scaled(*u, &du, g[0]);
            acc.add_scaled(*v, &dv, g[0]);
        }
        Op::CosineRows(m, k) => {
            let w = tape.shape(*k)[0];
            let (mv, kv) = (tape.value(*m), tape.value(*k));
            let mut gm = vec![T::zero(); mv.len()];
            let mut gk = vec![T::zero(); w];
            for (i, row) in mv.chunks(w).enumerate() {
                if g[i] == T::zero() {
                    continue;
                }
                let (dr, dk) = cosine_grads(row, kv);
                for j in 0..w {
                    gm[i * w + j] += g[i] * dr[j];
                    gk[j] += g[i] * dk[j];
                }
            }
            acc.add_scaled(*m, &gm, T::one());
            acc.add_scaled(*k, &gk, T::one());
        }
        Op::CrossEntropy(logits, target) => {
            let z = tape.value(*logits);
            let mut p = z.to_vec();
            super::ops::softmax_in_place(&mut p);
            p[*target] -= T::one();
            acc.add_scaled(*logits, &p, g[0]);
        }
        Op::BceWithLogits(logits, targets) => {
            let z = tape.value(*logits);
            let d: Vec<T> = z.iter().zip(targets).map(|(&zi, &yi)| sigmoid(zi) - yi).collect();
            acc.add_scaled(*logits, &d, g[0]);
        }
        Op::GatherRow(table, index) => {
            let w = g.len();
            let start = index * w;
            if let Some(gt) = acc.buf(*table) {
                for (o, &gi) in gt[start..start + w].iter_mut().zip(g) {
                    *o += gi;
                }
            }
        }
        Op::CircularShift(w, s) => {
            let n = tape.numel(*w);
            let (wv, sv) = (tape.value(*w), tape.value(*s));
            if let Some(gw) = acc.buf(*w) {
                for i in 0..n {
                    for (&off, &sj) in SHIFT_OFFSETS.iter().zip(sv) {
                        gw[shift_source(i, off, n)] += g[i] * sj;
                    }
                }
            }
            if let Some(gs) = acc.buf(*s) {
                for (j, &off) in SHIFT_OFFSETS.iter().enumerate() {
                    gs[j] += (0..n).fold(T::zero(), |a, i| a + g[i] * wv[shift_source(i, off, n)]);
                }
            }
        }
        Op::Sharpen(w, gamma) => {
            let wv = tape.value(*w);
            let gm = tape.scalar(*gamma);
            let max = wv.iter().fold(T::zero(), |m, &x| m.max(x));
            if max <= T::zero() {
                return;
            }
            let gy = dot(g, y);
            // Normalizer of the max-relative powers.
            let zn = wv.iter().fold(T::zero(), |s, &x| s + (x / max).powf(gm));
            if let Some(gw) = acc.buf(*w) {
                for k in 0..wv.len() {
                    let r = wv[k] / max;
                    let d = gm * r.powf(gm - T::one()) / (max * zn);
                    gw[k] += d * (g[k] - gy);
                }
            }
            if let Some(gg) = acc.buf(*gamma) {
                let ln = |x: T| if x > T::zero() { x.ln() } else { T::zero() };
                let mean_ln = wv.iter().zip(y).fold(T::zero(), |s, (&wi, &yi)| s + yi * ln(wi));
                let d = wv
                    .iter()
                    .zip(y)
                    .zip(g)
                    .fold(T::zero(), |s, ((&wi, &yi), &gi)| {
                        if yi > T::zero() {
                            s + gi * yi * (ln(wi) - mean_ln)
                        } else {
                            s
                        }
                    });
                gg[0] += d;
            }
        }
        Op::ReadRows(m, w) => {
            let width = g.len();
            let (mv, wv) = (tape.value(*m), tape.value(*w));
            if let Some(gm) = acc.buf(*m) {
                for (row, &wi) in gm.chunks_mut(width).zip(wv) {
                    for (o, &gj) in row.iter_mut().zip(g) {
                        *o += wi * gj;
                    }
                }
            }
            if let Some(gw) = acc.buf(*w) {
                for (o, row) in gw.iter_mut().zip(mv.chunks(width)) {
                    *o += dot(row, g);
                }
            }
        }
        Op::EraseAdd(m, w, e, a) => {
            let width = tape.numel(*e);
            let (mv, wv, ev, av) = (tape.value(*m), tape.value(*w), tape.value(*e), tape.value(*a));
            if let Some(gm) = acc.buf(*m) {
                for (i, &wi) in wv.iter().enumerate() {
                    for j in 0..width {
                        gm[i * width + j] += g[i * width + j] * (T::one() - wi * ev[j]);
                    }
                }
            }
            if let Some(gw) = acc.buf(*w) {
                for i in 0..wv.len() {
                    let mut s = T::zero();
                    for j in 0..width {
                        s += g[i * width + j] * (av[j] - mv[i * width + j] * ev[j]);
                    }
                    gw[i] += s;
                }
            }
            if let Some(ge) = acc.buf(*e) {
                for (i, &wi) in wv.iter().enumerate() {
                    for j in 0..width {
                        ge[j] -= g[i * width + j] * mv[i * width + j] * wi;
                    }
                }
            }
            if let Some(ga) = acc.buf(*a) {
                for (i, &wi) in wv.iter().enumerate() {
                    for j in 0..width {
                        ga[j] += g[i * width + j] * wi;
                    }
                }
            }
        }
    }
}

fn matvec_back<T: Real>(acc: &mut Acc<'_, '_, T>, w: Var, x: Var, g: &[T]) {
    let tape = acc.tape;
    let k = tape.shape(w)[1];
    let (wv, xv) = (tape.value(w), tape.value(x));
    if let Some(gw) = acc.buf(w) {
        for (i, &gi) in g.iter().enumerate() {
            if gi == T::zero() {
                continue;
            }
            for (o, &xp) in gw[i * k..(i + 1) * k].iter_mut().zip(xv) {
                *o += gi * xp;
            }
        }
    }
    if let Some(gx) = acc.buf(x) {
        for (i, &gi) in g.iter().enumerate() {
            if gi == T::zero() {
                continue;
            }
            for (o, &wp) in gx.iter_mut().zip(&wv[i * k..(i + 1) * k]) {
                *o += gi * wp;
            }
        }
    }
}

/// Partial derivatives of `u·v / (‖u‖‖v‖ + ε)` with respect to `u` and `v`.
fn cosine_grads<T: Real>(u: &[T], v: &[T]) -> (Vec<T>, Vec<T>) {
    let (nu, nv) = (norm(u), norm(v));
    let p = dot(u, v);
    let d = nu * nv + T::of(COSINE_EPS);
    let inv = T::one() / d;
    let c = p / (d * d);
    let du = u
        .iter()
        .zip(v)
        .map(|(&ui, &vi)| {
            let dn = if nu > T::zero() { nv * ui / nu } else { T::zero() };
            vi * inv - c * dn
        })
        .collect();
    let dv = v
        .iter()
        .zip(u)
        .map(|(&vi, &ui)| {
            let dn = if nv > T::zero() { nu * vi / nv } else { T::zero() };
            ui * inv - c * dn
        })
        .collect();
    (du, dv)
}
