//! One entry point over the four architectures.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::corpus::{self, Conversation, EncodedExample, Seq2SeqExample, Skip, Vocabulary, EOS, PAD, SEP};
use crate::dntms::{DecodeQuery, DntmsConfig, DntmsMode, DntmsModel, SegmentPolicy};
use crate::error::{Error, Result};
use crate::ntm::{NtmConfig, StepMode};
use crate::ntmlm::{LmMode, NtmLmConfig, NtmLmModel};
use crate::params::ParamStore;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "seq2seq")]
    Seq2Seq,
    #[serde(rename = "d-ntms")]
    DNtms,
    #[serde(rename = "lm")]
    Lm,
    #[serde(rename = "ntm-lm")]
    NtmLm,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [Self::Seq2Seq, Self::DNtms, Self::Lm, Self::NtmLm];

    pub fn name(self) -> &'static str {
        match self {
            Self::Seq2Seq => "seq2seq",
            Self::DNtms => "d-ntms",
            Self::Lm => "lm",
            Self::NtmLm => "ntm-lm",
        }
    }

    /// Encoder-decoder family (history/response examples).
    pub fn is_dialogue(self) -> bool {
        matches!(self, Self::Seq2Seq | Self::DNtms)
    }

    pub fn uses_memory(self) -> bool {
        matches!(self, Self::DNtms | Self::NtmLm)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown architecture {s:?} (expected seq2seq, d-ntms, lm, or ntm-lm)")))
    }
}

/// Every size and switch of a model. Fields that an architecture does not
/// use are ignored by it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub vocab: usize,
    pub embedding: usize,
    /// Encoder width of the dialogue models.
    pub encoder_hidden: usize,
    /// Decoder width of the dialogue models, GRU width of the language models.
    pub hidden: usize,
    pub slots: usize,
    pub mem_width: usize,
    pub read_heads: usize,
    pub write_heads: usize,
    pub controller: usize,
    pub ntm_output: usize,
    /// Language-model segment length.
    pub segment_size: usize,
    /// Turn segmentation of the dialogue models.
    pub turn_segments: SegmentPolicy,
    pub query: DecodeQuery,
    pub decode_step_mode: StepMode,
    pub head_sees_read: bool,
    pub gru_bias: bool,
    pub head_init: f64,
}

impl ModelConfig {
    /// Full-size configuration.
    pub fn standard(arch: Architecture, vocab: usize) -> Self {
        let (slots, width, heads) = if arch.is_dialogue() { (20, 512, 1) } else { (32, 64, 4) };
        ModelConfig {
            arch,
            vocab,
            embedding: 200,
            encoder_hidden: 200,
            hidden: 400,
            slots,
            mem_width: width,
            read_heads: heads,
            write_heads: heads,
            controller: 512,
            ntm_output: width,
            segment_size: 20,
            turn_segments: SegmentPolicy::Quarters,
            query: DecodeQuery::Previous,
            decode_step_mode: StepMode::ReadWrite,
            head_sees_read: true,
            gru_bias: true,
            head_init: 0.01,
        }
    }

    /// Tiny configuration for finite-difference checks.
    pub fn tiny(arch: Architecture) -> Self {
        ModelConfig {
            arch,
            vocab: 11,
            embedding: 4,
            encoder_hidden: 6,
            hidden: 6,
            slots: 4,
            mem_width: 5,
            read_heads: 1,
            write_heads: 1,
            controller: 6,
            ntm_output: 5,
            segment_size: 3,
            turn_segments: SegmentPolicy::Quarters,
            query: DecodeQuery::Previous,
            decode_step_mode: StepMode::ReadWrite,
            head_sees_read: true,
            gru_bias: true,
            head_init: 1.0,
        }
    }

    /// Small configuration that trains in about a minute on a toy corpus.
    pub fn desk(arch: Architecture, vocab: usize) -> Self {
        ModelConfig {
            embedding: 16,
            encoder_hidden: 32,
            hidden: 32,
            slots: 16,
            mem_width: 16,
            read_heads: 1,
            write_heads: 1,
            controller: 32,
            ntm_output: 16,
            segment_size: 5,
            head_init: 0.1,
            ..Self::standard(arch, vocab)
        }
    }

    fn ntm(&self) -> NtmConfig {
        NtmConfig {
            input: self.hidden,
            slots: self.slots,
            width: self.mem_width,
            read_heads: self.read_heads,
            write_heads: self.write_heads,
            controller: self.controller,
            output: self.ntm_output,
        }
    }

    pub fn dntms(&self) -> DntmsConfig {
        DntmsConfig {
            vocab: self.vocab,
            embedding: self.embedding,
            encoder_hidden: self.encoder_hidden,
            decoder_hidden: self.hidden,
            ntm: self.ntm(),
            segments: self.turn_segments,
            query: self.query,
            decode_step_mode: self.decode_step_mode,
            gru_bias: self.gru_bias,
            head_init: self.head_init,
        }
    }

    pub fn ntmlm(&self) -> NtmLmConfig {
        NtmLmConfig {
            vocab: self.vocab,
            embedding: self.embedding,
            hidden: self.hidden,
            ntm: self.ntm(),
            segment_size: self.segment_size,
            head_sees_read: self.head_sees_read,
            gru_bias: self.gru_bias,
            head_init: self.head_init,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab < corpus::RESERVED.len() {
            return Err(Error::config("vocabulary must hold at least the reserved tokens"));
        }
        if !(self.head_init.is_finite() && self.head_init >= 0.0) {
            return Err(Error::config("head_init must be finite and non-negative"));
        }
        if self.arch.is_dialogue() {
            self.dntms().validate()
        } else {
            self.ntmlm().validate()
        }
    }

    /// Encodes a conversation the way this architecture consumes it.
    pub fn encode(&self, c: &Conversation, v: &Vocabulary) -> std::result::Result<EncodedExample, Skip> {
        if self.arch.is_dialogue() {
            corpus::encode_seq2seq(c, v).map(EncodedExample::Seq2Seq)
        } else {
            corpus::encode_lm(c, v, self.segment_size).map(EncodedExample::Lm)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Dialogue(Box<DntmsModel>, DntmsMode),
    Language(Box<NtmLmModel>, LmMode),
}

/// Loss of one example: summed NLL and the number of scored tokens.
#[derive(Clone, Copy, Debug)]
pub struct ExampleLoss {
    pub nll: Var,
    pub tokens: usize,
}

impl Model {
    pub fn build<T: Real, R: Rng>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.arch {
            Architecture::Seq2Seq => Model::Dialogue(Box::new(DntmsModel::new(store, cfg.dntms(), rng)?), DntmsMode::Seq2Seq),
            Architecture::DNtms => Model::Dialogue(Box::new(DntmsModel::new(store, cfg.dntms(), rng)?), DntmsMode::Dntms),
            Architecture::Lm => Model::Language(Box::new(NtmLmModel::new(store, cfg.ntmlm(), rng)?), LmMode::Lm),
            Architecture::NtmLm => Model::Language(Box::new(NtmLmModel::new(store, cfg.ntmlm(), rng)?), LmMode::NtmLm),
        })
    }

    pub fn loss<T: Real>(&self, tape: &mut Tape<'_, T>, ex: &EncodedExample) -> Result<ExampleLoss> {
        match (self, ex) {
            (Model::Dialogue(m, mode), EncodedExample::Seq2Seq(e)) => {
                let out = m.forward_loss(tape, e, *mode)?;
                Ok(ExampleLoss {
                    nll: out.nll,
                    tokens: out.tokens,
                })
            }
            (Model::Language(m, mode), EncodedExample::Lm(e)) => {
                let out = m.lm_forward(tape, e, *mode, false)?;
                Ok(ExampleLoss {
                    nll: out.nll,
                    tokens: out.tokens,
                })
            }
            _ => Err(Error::config("example encoding does not match the model architecture")),
        }
    }

    /// Samples a response to `prompt` (the conversation so far) with
    /// temperature 1, stopping at `<eos>` or after `max_len` tokens. The
    /// language models also stop at a turn separator, which ends the
    /// response turn in their stream. The terminator is not returned and
    /// padding is never sampled.
    pub fn generate<T: Real>(
        &self,
        params: &ParamStore<T>,
        vocab: &Vocabulary,
        prompt: &Conversation,
        max_len: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<u32>> {
        let mut tape = Tape::with_params(params);
        let mut out = Vec::new();
        match self {
            Model::Dialogue(m, mode) => {
                let ex = history_example(prompt, vocab)?;
                let enc = m.encode_history(&mut tape, &ex, *mode)?;
                let mut st = m.init_decoder(&mut tape, &enc)?;
                let mut prev = SEP;
                while out.len() < max_len {
                    let (logits, next) = m.decode_step(&mut tape, prev, enc.context, &st, *mode)?;
                    let p = tape.softmax(logits);
                    let y = sample(tape.value(p), rng);
                    if y == EOS {
                        break;
                    }
                    out.push(y);
                    st = next;
                    prev = y;
                }
            }
            Model::Language(m, mode) => {
                let ids = prompt_stream(prompt, vocab);
                let mut cur = m.start(&mut tape, *mode)?;
                m.feed(&mut tape, &mut cur, SEP)?;
                for &t in &ids {
                    m.feed(&mut tape, &mut cur, t)?;
                }
                while out.len() < max_len {
                    let logits = m.logits(&mut tape, &cur)?;
                    let p = tape.softmax(logits);
                    let y = sample(tape.value(p), rng);
                    if y == EOS || y == SEP {
                        break;
                    }
                    out.push(y);
                    m.feed(&mut tape, &mut cur, y)?;
                }
            }
        }
        Ok(out)
    }
}

/// History-only example for generation: the prompt turns become the history.
fn history_example(prompt: &Conversation, vocab: &Vocabulary) -> Result<Seq2SeqExample> {
    if prompt.turns.is_empty() {
        return Err(Error::contract("prompt has no turns"));
    }
    let mut c = prompt.clone();
    c.turns.push(vec![corpus::RESERVED[EOS as usize].to_string()]);
    corpus::encode_seq2seq(&c, vocab).map_err(|s| Error::contract(s.to_string()))
}

/// Prompt turns joined with separators and followed by one more separator,
/// keeping the most recent ids so the response fits in the stream cap.
fn prompt_stream(prompt: &Conversation, vocab: &Vocabulary) -> Vec<u32> {
    let mut ids = Vec::new();
    for turn in &prompt.turns {
        ids.extend(vocab.encode(turn));
        ids.push(SEP);
    }
    let keep = corpus::LM_CAP.saturating_sub(corpus::RESPONSE_CAP);
    ids.split_off(ids.len().saturating_sub(keep))
}

/// Draws an index from `probs` by inverse CDF, with padding excluded.
pub fn sample<T: Real>(probs: &[T], rng: &mut impl Rng) -> u32 {
    let p: Vec<f64> = probs
        .iter()
        .enumerate()
        .map(|(i, &x)| if i as u32 == PAD { 0.0 } else { x.to_f64().unwrap_or(0.0).max(0.0) })
        .collect();
    let total: f64 = p.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &x) in p.iter().enumerate() {
        if u < x {
            return i as u32;
        }
        u -= x;
    }
    p.iter().rposition(|&x| x > 0.0).unwrap_or(EOS as usize) as u32
}

/// A model together with its parameters.
#[derive(Clone, Debug)]
pub struct Network<T: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub model: Model,
}

impl<T: Real> Network<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::build(&config, &mut params, &mut rng)?;
        Ok(Network { config, params, model })
    }

    /// Rebuilds the model skeleton for `config` around existing parameters.
    pub fn with_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        net.params.load_from(&params)?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn architecture_names_round_trip() {
        for a in Architecture::ALL {
            assert_eq!(a.name().parse::<Architecture>().unwrap(), a);
            assert_eq!(serde_json::to_string(&a).unwrap(), format!("\"{a}\""));
        }
        assert!("gpt".parse::<Architecture>().is_err());
    }

    #[test]
    fn sampling_skips_padding_and_follows_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let probs = [0.5f64, 0.1, 0.2, 0.2];
        let mut counts = [0usize; 4];
        let n = 10_000;
        for _ in 0..n {
            counts[sample(&probs, &mut rng) as usize] += 1;
        }
        assert_eq!(counts[0], 0);
        // Renormalized without padding: 0.2, 0.4, 0.4.
        for (i, q) in [(1, 0.2), (2, 0.4), (3, 0.4)] {
            let sd = (n as f64 * q * (1.0 - q)).sqrt();
            assert!((counts[i] as f64 - n as f64 * q).abs() < 3.0 * sd);
        }
    }

    #[test]
    fn mismatched_encoding_is_a_config_error() {
        let net = Network::<f64>::new(ModelConfig::tiny(Architecture::Lm), 1).unwrap();
        let c = Conversation::from_text(&["a b", "c"]);
        let v = Vocabulary::build(std::slice::from_ref(&c), 11).unwrap();
        let ex = ModelConfig::tiny(Architecture::DNtms).encode(&c, &v).unwrap();
        let mut tape = Tape::with_params(&net.params);
        assert!(matches!(net.model.loss(&mut tape, &ex), Err(Error::Config(_))));
    }

    #[test]
    fn generation_is_seeded_and_bounded() {
        let c = Conversation::from_text(&["a b c", "d e", "f"]);
        let v = Vocabulary::build(std::slice::from_ref(&c), 11).unwrap();
        for arch in Architecture::ALL {
            let net = Network::<f64>::new(ModelConfig::tiny(arch), 2).unwrap();
            let run = |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                net.model.generate(&net.params, &v, &c, 30, &mut rng).unwrap()
            };
            let a = run(7);
            assert_eq!(a, run(7));
            assert!(a.len() <= 30);
            assert!(a.iter().all(|&t| t != PAD && (t as usize) < v.len().max(11)));
        }
    }
}
