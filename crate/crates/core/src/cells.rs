//! GRU and LSTM cells. Gate inputs are always `[state, input]`, state first.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Real;

/// Weights of a GRU cell:
///
/// ```text
/// z  = σ(W_z·[h, x] + b_z)
/// r  = σ(W_r·[h, x] + b_r)
/// h~ = tanh(W·[r∗h, x] + b)
/// h' = (1 − z)∗h + z∗h~
/// ```
///
/// With `bias == false` the bias terms are absent, which is the bias-free form
/// of the update.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub input: usize,
    pub hidden: usize,
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub bias: Option<[ParamId; 3]>,
}

impl GruParams {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let shape = [hidden, hidden + input];
        let bound = 1.0 / ((hidden + input) as f64).sqrt();
        let w_z = store.add_uniform(format!("{name}.w_z"), &shape, bound, rng);
        let w_r = store.add_uniform(format!("{name}.w_r"), &shape, bound, rng);
        let w_h = store.add_uniform(format!("{name}.w_h"), &shape, bound, rng);
        let bias = bias.then(|| {
            [
                store.add_zeros(format!("{name}.b_z"), &[hidden]),
                store.add_zeros(format!("{name}.b_r"), &[hidden]),
                store.add_zeros(format!("{name}.b_h"), &[hidden]),
            ]
        });
        GruParams {
            input,
            hidden,
            w_z,
            w_r,
            w_h,
            bias,
        }
    }

    fn gate<T: Real>(&self, tape: &mut Tape<'_, T>, w: ParamId, b: Option<ParamId>, x: Var) -> Result<Var> {
        let w = tape.param(w);
        match b {
            Some(b) => {
                let b = tape.param(b);
                tape.affine(w, x, b)
            }
            None => tape.matvec(w, x),
        }
    }

    pub fn step<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var, h_prev: Var) -> Result<Var> {
        if tape.shape(x) != [self.input] || tape.shape(h_prev) != [self.hidden] {
            return Err(Error::dim("gru_step", tape.shape(x), tape.shape(h_prev)));
        }
        let b = self.bias.map(|b| b.map(Some)).unwrap_or([None; 3]);
        let hx = tape.concat(&[h_prev, x])?;
        let z = self.gate(tape, self.w_z, b[0], hx)?;
        let z = tape.sigmoid(z);
        let r = self.gate(tape, self.w_r, b[1], hx)?;
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h_prev)?;
        let rhx = tape.concat(&[rh, x])?;
        let cand = self.gate(tape, self.w_h, b[2], rhx)?;
        let cand = tape.tanh(cand);
        // (1 - z)∗h + z∗h~
        let keep = tape.one_minus(z);
        let kept = tape.mul(keep, h_prev)?;
        let upd = tape.mul(z, cand)?;
        tape.add(kept, upd)
    }

    /// Folds [`GruParams::step`] over `xs`, returning every intermediate state.
    pub fn sequence<T: Real>(&self, tape: &mut Tape<'_, T>, xs: &[Var], h0: Var) -> Result<Vec<Var>> {
        if xs.is_empty() {
            return Err(Error::contract("gru_sequence needs at least one input"));
        }
        let mut h = h0;
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            h = self.step(tape, x, h)?;
            out.push(h);
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// Standard LSTM with input, forget, output, and candidate gates. The forget
/// bias starts at +1.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub input: usize,
    pub hidden: usize,
    /// Weights for gates i, f, o, g.
    pub w: [ParamId; 4],
    pub b: [ParamId; 4],
}

pub const FORGET_BIAS_INIT: f64 = 1.0;

impl LstmParams {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let shape = [hidden, hidden + input];
        let bound = 1.0 / ((hidden + input) as f64).sqrt();
        let gates = ["i", "f", "o", "g"];
        let w = gates.map(|g| store.add_uniform(format!("{name}.w_{g}"), &shape, bound, rng));
        let b = gates.map(|g| {
            let init = if g == "f" { FORGET_BIAS_INIT } else { 0.0 };
            store.add_full(format!("{name}.b_{g}"), &[hidden], init)
        });
        LstmParams { input, hidden, w, b }
    }

    pub fn zero_state<T: Real>(&self, tape: &mut Tape<'_, T>) -> LstmState {
        LstmState {
            h: tape.zeros(&[self.hidden]),
            c: tape.zeros(&[self.hidden]),
        }
    }

    pub fn step<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var, state: LstmState) -> Result<LstmState> {
        if tape.shape(x) != [self.input] {
            return Err(Error::dim("lstm_step", tape.shape(x), &[self.input]));
        }
        if tape.shape(state.h) != [self.hidden] || tape.shape(state.c) != [self.hidden] {
            return Err(Error::dim("lstm_step", tape.shape(state.h), tape.shape(state.c)));
        }
        let hx = tape.concat(&[state.h, x])?;
        let mut pre = [hx; 4];
        for (k, p) in pre.iter_mut().enumerate() {
            let w = tape.param(self.w[k]);
            let b = tape.param(self.b[k]);
            *p = tape.affine(w, hx, b)?;
        }
        let i = tape.sigmoid(pre[0]);
        let f = tape.sigmoid(pre[1]);
        let o = tape.sigmoid(pre[2]);
        let g = tape.tanh(pre[3]);
        let fc = tape.mul(f, state.c)?;
        let ig = tape.mul(i, g)?;
        let c = tape.add(fc, ig)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}
