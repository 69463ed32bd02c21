//! Dual-memory encoder-decoder dialogue model.
//!
//! The encoder GRU reads the whole history. At the end of every segment of a
//! turn its state is written into the memory that belongs to the speaker of
//! that turn, so each speaker's memory only changes while that speaker talks.
//! The decoder GRU consumes the previous token and the context vector; its
//! state queries both memories, and the concatenated memory outputs are
//! projected to vocabulary logits.
//!
//! With [`DntmsMode::Seq2Seq`] the memories are skipped entirely and the
//! logits come from the decoder state, which is the plain encoder-decoder
//! baseline built from the same parameters.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::cells::GruParams;
use crate::corpus::{Seq2SeqExample, Speaker, SEP};
use crate::error::{Error, Result};
use crate::ntm::{NtmConfig, NtmParams, NtmState, StepMode};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Real;

/// How a turn is cut into segments whose ends trigger memory writes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SegmentPolicy {
    /// Four segments of `⌈T/4⌉` tokens, the last one taking the remainder.
    /// Segments are shortened where needed so that every one of the
    /// `min(4, T)` segments is nonempty.
    #[default]
    Quarters,
    /// Segments of a fixed number of tokens.
    Fixed(usize),
}

pub fn segment_turn(len: usize, policy: SegmentPolicy) -> Result<Vec<Range<usize>>> {
    if len == 0 {
        return Err(Error::contract("cannot segment an empty turn"));
    }
    match policy {
        SegmentPolicy::Quarters => {
            let parts = len.min(4);
            let size = len.div_ceil(4);
            let mut out = Vec::with_capacity(parts);
            let mut start = 0;
            for k in 0..parts {
                let end = ((k + 1) * size).min(len - (parts - 1 - k));
                out.push(start..end);
                start = end;
            }
            Ok(out)
        }
        SegmentPolicy::Fixed(0) => Err(Error::config("segment size must be positive")),
        SegmentPolicy::Fixed(n) => Ok((0..len).step_by(n).map(|s| s..(s + n).min(len)).collect()),
    }
}

/// Which decoder state the memories are queried with at step `t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DecodeQuery {
    /// The state before consuming `y_{t-1}`, so step 1 queries with `s_0`.
    #[default]
    Previous,
    /// The state after consuming `y_{t-1}`.
    Current,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DntmsMode {
    Dntms,
    Seq2Seq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DntmsConfig {
    pub vocab: usize,
    pub embedding: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    /// Shared shape of both memories. `ntm.input` must equal `decoder_hidden`.
    pub ntm: NtmConfig,
    pub segments: SegmentPolicy,
    pub query: DecodeQuery,
    pub decode_step_mode: StepMode,
    pub gru_bias: bool,
    /// Output layers are drawn from `±head_init / √fan_in`.
    pub head_init: f64,
}

impl DntmsConfig {
    pub fn validate(&self) -> Result<()> {
        self.ntm.validate()?;
        for (name, v) in [
            ("vocab", self.vocab),
            ("embedding", self.embedding),
            ("encoder_hidden", self.encoder_hidden),
            ("decoder_hidden", self.decoder_hidden),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.ntm.input != self.decoder_hidden {
            return Err(Error::config(format!(
                "memory input width {} must equal the decoder width {}",
                self.ntm.input, self.decoder_hidden
            )));
        }
        if let SegmentPolicy::Fixed(0) = self.segments {
            return Err(Error::config("segment size must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DntmsModel {
    pub cfg: DntmsConfig,
    enc_emb: ParamId,
    dec_emb: ParamId,
    encoder: GruParams,
    decoder: GruParams,
    bridge_w: ParamId,
    bridge_b: ParamId,
    ntm_a: NtmParams,
    ntm_b: NtmParams,
    fused_w: ParamId,
    fused_b: ParamId,
    plain_w: ParamId,
    plain_b: ParamId,
}

/// Encoder output: the context vector and both speaker memories.
#[derive(Clone, Debug)]
pub struct EncodedHistory {
    pub context: Var,
    pub ntm_a: Option<NtmState>,
    pub ntm_b: Option<NtmState>,
    /// Encoder state after every history token.
    pub states: Vec<Var>,
    /// History positions whose state was written, with the writing speaker.
    pub taps: Vec<(Speaker, usize)>,
}

#[derive(Clone, Debug)]
pub struct DecoderState {
    pub s: Var,
    pub ntm_a: Option<NtmState>,
    pub ntm_b: Option<NtmState>,
}

impl DecoderState {
    pub fn ntm_steps(&self) -> (usize, usize) {
        (
            self.ntm_a.as_ref().map_or(0, |s| s.steps),
            self.ntm_b.as_ref().map_or(0, |s| s.steps),
        )
    }
}

/// Teacher-forced loss over one response.
#[derive(Clone, Debug)]
pub struct DntmsLoss {
    pub nll: Var,
    pub tokens: usize,
    pub step_logits: Vec<Var>,
    pub decoder: DecoderState,
}

impl DntmsModel {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, cfg: DntmsConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (v, e, he, hd) = (cfg.vocab, cfg.embedding, cfg.encoder_hidden, cfg.decoder_hidden);
        let enc_emb = store.add_uniform("enc_emb", &[v, e], 0.1, rng);
        let dec_emb = store.add_uniform("dec_emb", &[v, e], 0.1, rng);
        let encoder = GruParams::new(store, "encoder", e, he, cfg.gru_bias, rng);
        let decoder = GruParams::new(store, "decoder", e + he, hd, cfg.gru_bias, rng);
        let bridge_w = store.add_uniform("bridge.w", &[hd, he], 1.0 / (he as f64).sqrt(), rng);
        let bridge_b = store.add_zeros("bridge.b", &[hd]);
        let ntm_a = NtmParams::new(store, "ntm_a", cfg.ntm.clone(), rng)?;
        let ntm_b = NtmParams::new(store, "ntm_b", cfg.ntm.clone(), rng)?;
        let fused_in = 2 * cfg.ntm.output;
        let fused_w = store.add_uniform("head.w", &[v, fused_in], cfg.head_init / (fused_in as f64).sqrt(), rng);
        let fused_b = store.add_zeros("head.b", &[v]);
        let plain_w = store.add_uniform("plain_head.w", &[v, hd], cfg.head_init / (hd as f64).sqrt(), rng);
        let plain_b = store.add_zeros("plain_head.b", &[v]);
        Ok(DntmsModel {
            cfg,
            enc_emb,
            dec_emb,
            encoder,
            decoder,
            bridge_w,
            bridge_b,
            ntm_a,
            ntm_b,
            fused_w,
            fused_b,
            plain_w,
            plain_b,
        })
    }

    fn bridge<T: Real>(&self, tape: &mut Tape<'_, T>, s: Var) -> Result<Var> {
        let w = tape.param(self.bridge_w);
        let b = tape.param(self.bridge_b);
        let z = tape.affine(w, s, b)?;
        Ok(tape.tanh(z))
    }

    fn memory(&self, speaker: Speaker) -> &NtmParams {
        match speaker {
            Speaker::A => &self.ntm_a,
            Speaker::B => &self.ntm_b,
        }
    }

    /// Positions (into `ex.history`) at which each speaker's memory is written.
    pub fn tap_positions(&self, ex: &Seq2SeqExample) -> Result<Vec<(Speaker, usize)>> {
        let mut taps = Vec::new();
        for turn in ex.turns() {
            for seg in segment_turn(turn.span.len(), self.cfg.segments)? {
                taps.push((turn.speaker, turn.span.start + seg.end - 1));
            }
        }
        Ok(taps)
    }

    pub fn encode_history<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        ex: &Seq2SeqExample,
        mode: DntmsMode,
    ) -> Result<EncodedHistory> {
        if ex.history.iter().all(|&t| t == SEP) {
            return Err(Error::contract("history contains no turn"));
        }
        let taps = match mode {
            DntmsMode::Dntms => self.tap_positions(ex)?,
            DntmsMode::Seq2Seq => Vec::new(),
        };
        let (mut ntm_a, mut ntm_b) = match mode {
            DntmsMode::Dntms => (Some(self.ntm_a.initial_state(tape)?), Some(self.ntm_b.initial_state(tape)?)),
            DntmsMode::Seq2Seq => (None, None),
        };
        let table = tape.param(self.enc_emb);
        let mut s = tape.zeros(&[self.cfg.encoder_hidden]);
        let mut states = Vec::with_capacity(ex.history.len());
        let mut next_tap = taps.iter().peekable();
        for (i, &tok) in ex.history.iter().enumerate() {
            let x = tape.gather_row(table, tok as usize)?;
            s = self.encoder.step(tape, x, s)?;
            states.push(s);
            while let Some(&&(speaker, pos)) = next_tap.peek() {
                if pos != i {
                    break;
                }
                next_tap.next();
                let q = self.bridge(tape, s)?;
                let slot = match speaker {
                    Speaker::A => &mut ntm_a,
                    Speaker::B => &mut ntm_b,
                };
                let prev = slot.as_ref().expect("memories exist in dntms mode");
                let step = self.memory(speaker).step(tape, q, prev, StepMode::ReadWrite)?;
                *slot = Some(step.state);
            }
        }
        Ok(EncodedHistory {
            context: s,
            ntm_a,
            ntm_b,
            states,
            taps,
        })
    }

    pub fn init_decoder<T: Real>(&self, tape: &mut Tape<'_, T>, enc: &EncodedHistory) -> Result<DecoderState> {
        Ok(DecoderState {
            s: self.bridge(tape, enc.context)?,
            ntm_a: enc.ntm_a.clone(),
            ntm_b: enc.ntm_b.clone(),
        })
    }

    /// One decoding step. Returns vocabulary logits and the advanced state;
    /// the distribution is `softmax(logits)`.
    pub fn decode_step<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        y_prev: u32,
        context: Var,
        st: &DecoderState,
        mode: DntmsMode,
    ) -> Result<(Var, DecoderState)> {
        let table = tape.param(self.dec_emb);
        let e = tape.gather_row(table, y_prev as usize)?;
        let x = tape.concat(&[e, context])?;
        let s = self.decoder.step(tape, x, st.s)?;
        match mode {
            DntmsMode::Seq2Seq => {
                let w = tape.param(self.plain_w);
                let b = tape.param(self.plain_b);
                let logits = tape.affine(w, s, b)?;
                Ok((
                    logits,
                    DecoderState {
                        s,
                        ntm_a: st.ntm_a.clone(),
                        ntm_b: st.ntm_b.clone(),
                    },
                ))
            }
            DntmsMode::Dntms => {
                let query = match self.cfg.query {
                    DecodeQuery::Previous => st.s,
                    DecodeQuery::Current => s,
                };
                let (a, b) = match (&st.ntm_a, &st.ntm_b) {
                    (Some(a), Some(b)) => (a, b),
                    _ => return Err(Error::contract("decoder state has no memories")),
                };
                let step_a = self.ntm_a.step(tape, query, a, self.cfg.decode_step_mode)?;
                let step_b = self.ntm_b.step(tape, query, b, self.cfg.decode_step_mode)?;
                let fused = tape.concat(&[step_a.output, step_b.output])?;
                let w = tape.param(self.fused_w);
                let bias = tape.param(self.fused_b);
                let logits = tape.affine(w, fused, bias)?;
                Ok((
                    logits,
                    DecoderState {
                        s,
                        ntm_a: Some(step_a.state),
                        ntm_b: Some(step_b.state),
                    },
                ))
            }
        }
    }

    /// Summed cross-entropy of the response under teacher forcing, starting
    /// from the separator token.
    pub fn forward_loss<T: Real>(&self, tape: &mut Tape<'_, T>, ex: &Seq2SeqExample, mode: DntmsMode) -> Result<DntmsLoss> {
        if ex.response.is_empty() {
            return Err(Error::contract("response is empty"));
        }
        if ex.response_mask.len() != ex.response.len() {
            return Err(Error::dim("response mask", &[ex.response_mask.len()], &[ex.response.len()]));
        }
        let enc = self.encode_history(tape, ex, mode)?;
        let mut st = self.init_decoder(tape, &enc)?;
        let mut y_prev = SEP;
        let mut terms = Vec::with_capacity(ex.response.len());
        let mut step_logits = Vec::with_capacity(ex.response.len());
        for (&y, &keep) in ex.response.iter().zip(&ex.response_mask) {
            let (logits, next) = self.decode_step(tape, y_prev, enc.context, &st, mode)?;
            if keep {
                terms.push(tape.cross_entropy(logits, y as usize)?);
            }
            step_logits.push(logits);
            st = next;
            y_prev = y;
        }
        let nll = sum_scalars(tape, &terms)?;
        Ok(DntmsLoss {
            nll,
            tokens: terms.len(),
            step_logits,
            decoder: st,
        })
    }
}

/// Sum of rank-0 nodes; zero for an empty slice.
pub(crate) fn sum_scalars<T: Real>(tape: &mut Tape<'_, T>, terms: &[Var]) -> Result<Var> {
    let Some((&first, rest)) = terms.split_first() else {
        return Ok(tape.zeros(&[]));
    };
    rest.iter().try_fold(first, |acc, &t| tape.add(acc, t))
}
