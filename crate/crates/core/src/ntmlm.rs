//! Memory-augmented GRU language model over a whole conversation.
//!
//! The token stream is cut into fixed-size segments. Every token of a
//! segment is fed together with a conditioning vector that stays constant
//! within the segment. When a segment is complete and another token follows,
//! the GRU state drives one memory step whose output becomes the conditioning
//! vector for the next segment. The very first segment conditions on a learned
//! initial vector.
//!
//! In [`LmMode::Lm`] the conditioning vector is all zeros and the memory is
//! never touched.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::cells::GruParams;
use crate::corpus::{LmExample, SEP};
use crate::dntms::sum_scalars;
use crate::error::{Error, Result};
use crate::ntm::{NtmConfig, NtmParams, NtmState, StepMode};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LmMode {
    NtmLm,
    Lm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NtmLmConfig {
    pub vocab: usize,
    pub embedding: usize,
    pub hidden: usize,
    /// `ntm.input` must equal `hidden`.
    pub ntm: NtmConfig,
    pub segment_size: usize,
    /// Whether the output layer also sees the conditioning vector.
    pub head_sees_read: bool,
    pub gru_bias: bool,
    pub head_init: f64,
}

impl NtmLmConfig {
    pub fn validate(&self) -> Result<()> {
        self.ntm.validate()?;
        for (name, v) in [
            ("vocab", self.vocab),
            ("embedding", self.embedding),
            ("hidden", self.hidden),
            ("segment_size", self.segment_size),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.ntm.input != self.hidden {
            return Err(Error::config(format!(
                "memory input width {} must equal the hidden width {}",
                self.ntm.input, self.hidden
            )));
        }
        Ok(())
    }

    pub fn cond_width(&self) -> usize {
        self.ntm.output
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NtmLmModel {
    pub cfg: NtmLmConfig,
    emb: ParamId,
    gru: GruParams,
    ntm: NtmParams,
    cond_init: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

/// Incremental state of the language model over a growing prefix.
#[derive(Clone, Debug)]
pub struct LmCursor {
    pub h: Var,
    pub cond: Var,
    pub ntm: Option<NtmState>,
    /// Tokens fed into the current segment.
    pub in_segment: usize,
    pub fed: usize,
    pub mode: LmMode,
}

impl LmCursor {
    pub fn ntm_calls(&self) -> usize {
        self.ntm.as_ref().map_or(0, |s| s.steps)
    }
}

#[derive(Clone, Debug)]
pub struct LmForward {
    /// Logits before each stream position, then after the last one. Empty
    /// unless requested.
    pub logits: Vec<Var>,
    /// Conditioning vector used for each fed token (start marker first).
    pub conds: Vec<Var>,
    pub nll: Var,
    pub tokens: usize,
    pub ntm_calls: usize,
}

impl NtmLmModel {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, cfg: NtmLmConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (v, e, h, c) = (cfg.vocab, cfg.embedding, cfg.hidden, cfg.cond_width());
        let emb = store.add_uniform("emb", &[v, e], 0.1, rng);
        let gru = GruParams::new(store, "gru", e + c, h, cfg.gru_bias, rng);
        let ntm = NtmParams::new(store, "ntm", cfg.ntm.clone(), rng)?;
        let cond_init = store.add_uniform("cond_init", &[c], 0.1, rng);
        let head_in = if cfg.head_sees_read { h + c } else { h };
        let head_w = store.add_uniform("head.w", &[v, head_in], cfg.head_init / (head_in as f64).sqrt(), rng);
        let head_b = store.add_zeros("head.b", &[v]);
        Ok(NtmLmModel {
            cfg,
            emb,
            gru,
            ntm,
            cond_init,
            head_w,
            head_b,
        })
    }

    /// Cursor positioned before any token.
    pub fn start<T: Real>(&self, tape: &mut Tape<'_, T>, mode: LmMode) -> Result<LmCursor> {
        let (cond, ntm) = match mode {
            LmMode::NtmLm => (tape.param(self.cond_init), Some(self.ntm.initial_state(tape)?)),
            LmMode::Lm => (tape.zeros(&[self.cfg.cond_width()]), None),
        };
        Ok(LmCursor {
            h: tape.zeros(&[self.cfg.hidden]),
            cond,
            ntm,
            in_segment: 0,
            fed: 0,
            mode,
        })
    }

    /// Feeds one token. A memory step runs first when the current segment
    /// is already full.
    pub fn feed<T: Real>(&self, tape: &mut Tape<'_, T>, cur: &mut LmCursor, token: u32) -> Result<()> {
        if cur.in_segment == self.cfg.segment_size {
            if let Some(state) = &cur.ntm {
                let step = self.ntm.step(tape, cur.h, state, StepMode::ReadWrite)?;
                cur.cond = step.output;
                cur.ntm = Some(step.state);
            }
            cur.in_segment = 0;
        }
        let table = tape.param(self.emb);
        let x = tape.gather_row(table, token as usize)?;
        let x = tape.concat(&[x, cur.cond])?;
        cur.h = self.gru.step(tape, x, cur.h)?;
        cur.in_segment += 1;
        cur.fed += 1;
        Ok(())
    }

    pub fn logits<T: Real>(&self, tape: &mut Tape<'_, T>, cur: &LmCursor) -> Result<Var> {
        let input = if self.cfg.head_sees_read {
            tape.concat(&[cur.h, cur.cond])?
        } else {
            cur.h
        };
        let w = tape.param(self.head_w);
        let b = tape.param(self.head_b);
        tape.affine(w, input, b)
    }

    /// Runs the model over `SEP ++ ex.ids`. Position `i` predicts `ex.ids[i]`;
    /// the NLL sums the masked positions.
    pub fn lm_forward<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        ex: &LmExample,
        mode: LmMode,
        keep_logits: bool,
    ) -> Result<LmForward> {
        if ex.ids.is_empty() {
            return Err(Error::contract("token stream is empty"));
        }
        if ex.mask.len() != ex.ids.len() {
            return Err(Error::dim("stream mask", &[ex.mask.len()], &[ex.ids.len()]));
        }
        let mut cur = self.start(tape, mode)?;
        let mut conds = Vec::with_capacity(ex.ids.len() + 1);
        let mut logits = Vec::new();
        let mut terms = Vec::with_capacity(ex.ids.len());
        self.feed(tape, &mut cur, SEP)?;
        conds.push(cur.cond);
        for (&y, &keep) in ex.ids.iter().zip(&ex.mask) {
            if keep || keep_logits {
                let l = self.logits(tape, &cur)?;
                if keep {
                    terms.push(tape.cross_entropy(l, y as usize)?);
                }
                if keep_logits {
                    logits.push(l);
                }
            }
            self.feed(tape, &mut cur, y)?;
            conds.push(cur.cond);
        }
        if keep_logits {
            logits.push(self.logits(tape, &cur)?);
        }
        Ok(LmForward {
            logits,
            conds,
            nll: sum_scalars(tape, &terms)?,
            tokens: terms.len(),
            ntm_calls: cur.ntm_calls(),
        })
    }

    /// Distribution over the token following `prefix`.
    pub fn next_token_distribution<T: Real>(&self, tape: &mut Tape<'_, T>, prefix: &[u32], mode: LmMode) -> Result<Var> {
        let mut cur = self.start(tape, mode)?;
        self.feed(tape, &mut cur, SEP)?;
        for &t in prefix {
            self.feed(tape, &mut cur, t)?;
        }
        let l = self.logits(tape, &cur)?;
        Ok(tape.softmax(l))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use crate::params::ParamStore;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(segment: usize) -> NtmLmConfig {
        NtmLmConfig {
            vocab: 11,
            embedding: 4,
            hidden: 6,
            ntm: NtmConfig {
                input: 6,
                slots: 4,
                width: 5,
                read_heads: 1,
                write_heads: 1,
                controller: 6,
                output: 5,
            },
            segment_size: segment,
            head_sees_read: true,
            gru_bias: true,
            head_init: 1.0,
        }
    }

    fn model(segment: usize, seed: u64) -> (ParamStore<f64>, NtmLmModel) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = NtmLmModel::new(&mut store, cfg(segment), &mut rng).unwrap();
        (store, m)
    }

    fn stream(len: usize, segment: usize) -> LmExample {
        LmExample {
            ids: (0..len).map(|i| 4 + (i * 3 % 7) as u32).collect(),
            mask: vec![true; len],
            dropped: 0,
            segment_size: segment,
        }
    }

    #[test]
    fn call_counts_follow_the_boundary_rule() {
        for (len, seg, calls) in [(20, 20, 1), (45, 20, 2), (19, 20, 0), (10, 3, 3), (9, 3, 3), (1, 1, 1)] {
            let (store, m) = model(seg, 1);
            let mut tape = Tape::with_params(&store);
            let out = m.lm_forward(&mut tape, &stream(len, seg), LmMode::NtmLm, false).unwrap();
            assert_eq!(out.ntm_calls, calls, "len {len} seg {seg}");
            assert_eq!(out.ntm_calls, len / seg);
            let mut tape = Tape::with_params(&store);
            let out = m.lm_forward(&mut tape, &stream(len, seg), LmMode::Lm, false).unwrap();
            assert_eq!(out.ntm_calls, 0);
        }
    }

    #[test]
    fn conditioning_is_constant_within_a_segment() {
        let (store, m) = model(3, 2);
        let mut tape = Tape::with_params(&store);
        let out = m.lm_forward(&mut tape, &stream(10, 3), LmMode::NtmLm, false).unwrap();
        // 11 fed tokens (start marker included) in segments of 3.
        assert_eq!(out.conds.len(), 11);
        let init = tape.param(m.cond_init);
        for (i, &c) in out.conds.iter().enumerate() {
            let seg_start = out.conds[i / 3 * 3];
            assert_eq!(tape.value(c), tape.value(seg_start));
            if i < 3 {
                assert_eq!(c, init);
            }
        }
        assert_ne!(tape.value(out.conds[0]), tape.value(out.conds[3]));
    }

    #[test]
    fn final_row_is_the_next_token_distribution() {
        let (store, m) = model(3, 3);
        let ex = stream(7, 3);
        let mut tape = Tape::with_params(&store);
        let out = m.lm_forward(&mut tape, &ex, LmMode::NtmLm, true).unwrap();
        assert_eq!(out.logits.len(), 8);
        let last = tape.softmax(*out.logits.last().unwrap());
        let direct = m.next_token_distribution(&mut tape, &ex.ids, LmMode::NtmLm).unwrap();
        assert_eq!(tape.value(last), tape.value(direct));
        let sum: f64 = tape.value(direct).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        let empty = m.next_token_distribution(&mut tape, &[], LmMode::NtmLm).unwrap();
        let again = m.next_token_distribution(&mut tape, &[], LmMode::NtmLm).unwrap();
        assert_eq!(tape.value(empty), tape.value(again));
    }

    #[test]
    fn lm_mode_is_disconnected_from_memory() {
        let (mut store, m) = model(3, 4);
        let ex = stream(10, 3);
        let base = {
            let mut tape = Tape::with_params(&store);
            let out = m.lm_forward(&mut tape, &ex, LmMode::Lm, false).unwrap();
            let g = tape.backward(out.nll).unwrap();
            for id in store.ids() {
                if store.name(id).starts_with("ntm.") || store.name(id) == "cond_init" {
                    assert!(g.param(id).is_none_or(|g| g.iter().all(|&x| x == 0.0)));
                }
            }
            tape.scalar(out.nll)
        };
        for id in store.ids().collect::<Vec<_>>() {
            if store.name(id).starts_with("ntm.") {
                let shape = store.get(id).shape().to_vec();
                *store.get_mut(id) = Tensor::full(&shape, 3.0);
            }
        }
        let mut tape = Tape::with_params(&store);
        let out = m.lm_forward(&mut tape, &ex, LmMode::Lm, false).unwrap();
        assert_eq!(tape.scalar(out.nll), base);
    }

    #[test]
    fn masked_positions_add_nothing() {
        let (store, m) = model(3, 5);
        let mut ex = stream(6, 3);
        let mut tape = Tape::with_params(&store);
        let full = m.lm_forward(&mut tape, &ex, LmMode::NtmLm, true).unwrap();
        let per: Vec<f64> = (0..6)
            .map(|i| {
                let ce = tape.cross_entropy(full.logits[i], ex.ids[i] as usize).unwrap();
                tape.scalar(ce)
            })
            .collect();
        ex.mask[2] = false;
        ex.mask[5] = false;
        let part = m.lm_forward(&mut tape, &ex, LmMode::NtmLm, false).unwrap();
        assert_eq!(part.tokens, 4);
        let expect = per[0] + per[1] + per[3] + per[4];
        assert!((tape.scalar(part.nll) - expect).abs() < 1e-12);
        assert!(m.lm_forward(&mut tape, &stream(0, 3), LmMode::NtmLm, false).is_err());
    }

    #[test]
    fn full_gradient_matches_finite_differences() {
        let ex = stream(10, 3);
        for mode in [LmMode::NtmLm, LmMode::Lm] {
            let (store, m) = model(3, 6);
            let report = gradcheck::check_store(&store, |tape| Ok(m.lm_forward(tape, &ex, mode, false)?.nll)).unwrap();
            assert!(report.passed(gradcheck::TOLERANCE), "{mode:?}: {report:?}");
            if mode == LmMode::NtmLm {
                for g in ["emb", "gru", "ntm", "cond_init", "head"] {
                    assert!(report.group(g).unwrap().max_abs_grad > 0.0, "{g} has no gradient");
                }
            }
        }
    }
}
