//! Mini-batch training, evaluation, and the loss log.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::corpus::{Conversation, EncodedExample, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Network};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamGrads;
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global-norm gradient clipping; off when `None`.
    pub clip: Option<f64>,
    /// Stop after this many optimizer steps in total.
    pub max_steps: Option<u64>,
    /// Validation loss is logged every this many steps (0: only at the end).
    pub eval_every: u64,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        TrainConfig {
            model,
            lr: 1e-4,
            batch: 32,
            epochs: 1,
            seed: 0,
            clip: None,
            max_steps: None,
            eval_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::config("batch size and epochs must be positive"));
        }
        if let Some(c) = self.clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::config("clip norm must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

/// One loss-log record, printed as `step<TAB>split<TAB>loss`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLine {
    pub step: u64,
    pub split: Split,
    pub loss: f64,
}

impl fmt::Display for LogLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}", self.step, self.split, self.loss)
    }
}

/// Deterministic 95/5 split on a hash of the conversation index.
pub fn is_validation(index: usize) -> bool {
    let mut z = (index as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    z % 100 < 5
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<EncodedExample>,
    pub val: Vec<EncodedExample>,
    pub skipped: usize,
}

impl Dataset {
    /// Encodes a corpus for `cfg`, splitting off the validation share.
    pub fn build(corpus: &[Conversation], vocab: &Vocabulary, cfg: &ModelConfig) -> Result<Self> {
        Self::check_vocab(vocab, cfg)?;
        let mut ds = Dataset::default();
        for (i, c) in corpus.iter().enumerate() {
            match cfg.encode(c, vocab) {
                Ok(ex) if is_validation(i) => ds.val.push(ex),
                Ok(ex) => ds.train.push(ex),
                Err(skip) => {
                    log::warn!("skipping conversation {i}: {skip}");
                    ds.skipped += 1;
                }
            }
        }
        Ok(ds)
    }

    /// Encodes every conversation as evaluation data (no split).
    pub fn eval_only(corpus: &[Conversation], vocab: &Vocabulary, cfg: &ModelConfig) -> Result<Vec<EncodedExample>> {
        Self::check_vocab(vocab, cfg)?;
        Ok(corpus.iter().filter_map(|c| cfg.encode(c, vocab).ok()).collect())
    }

    fn check_vocab(vocab: &Vocabulary, cfg: &ModelConfig) -> Result<()> {
        if vocab.len() != cfg.vocab {
            return Err(Error::config(format!(
                "vocabulary has {} entries but the model expects {}",
                vocab.len(),
                cfg.vocab
            )));
        }
        Ok(())
    }
}

pub fn perplexity(total_nll: f64, tokens: usize) -> Result<f64> {
    if tokens == 0 {
        return Err(Error::contract("perplexity over zero tokens"));
    }
    Ok((total_nll / tokens as f64).exp())
}

/// Summed NLL and token count of `examples`.
pub fn total_nll<T: Real>(net: &Network<T>, examples: &[EncodedExample]) -> Result<(f64, usize)> {
    let (mut nll, mut tokens) = (0.0f64, 0usize);
    for ex in examples {
        let mut tape = Tape::with_params(&net.params);
        let l = net.model.loss(&mut tape, ex)?;
        nll += tape.scalar(l.nll).to_f64().unwrap_or(f64::NAN);
        tokens += l.tokens;
    }
    Ok((nll, tokens))
}

/// `exp(Σ NLL / #tokens)` over the unmasked tokens of `examples`.
pub fn evaluate_perplexity<T: Real>(net: &Network<T>, examples: &[EncodedExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::contract("evaluation set is empty"));
    }
    let (nll, tokens) = total_nll(net, examples)?;
    perplexity(nll, tokens)
}

/// Position in the training schedule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub step: u64,
    pub epoch: usize,
    /// Batches already consumed in the current epoch.
    pub batch_in_epoch: usize,
}

/// Serializable ChaCha8 position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

pub struct Trainer<T: Real> {
    pub cfg: TrainConfig,
    pub net: Network<T>,
    pub adam: Adam<T>,
    pub vocab: Vocabulary,
    pub progress: Progress,
    /// Generator state at the start of the current epoch; the epoch's
    /// shuffle is drawn from it.
    pub epoch_rng: RngState,
}

impl<T: Real> Trainer<T> {
    pub fn new(cfg: TrainConfig, vocab: Vocabulary) -> Result<Self> {
        cfg.validate()?;
        let net = Network::new(cfg.model.clone(), cfg.seed)?;
        let adam = Adam::new(&net.params, AdamConfig::with_lr(cfg.lr));
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        Ok(Trainer {
            epoch_rng: RngState::capture(&rng),
            cfg,
            net,
            adam,
            vocab,
            progress: Progress::default(),
        })
    }

    pub fn finished(&self) -> bool {
        self.progress.epoch >= self.cfg.epochs || self.cfg.max_steps.is_some_and(|m| self.progress.step >= m)
    }

    /// Mean per-token loss of one batch, with the parameters updated.
    pub fn train_batch(&mut self, batch: &[&EncodedExample]) -> Result<f64> {
        let mut grads = ParamGrads::zeros_like(&self.net.params);
        let (mut nll, mut tokens) = (0.0f64, 0usize);
        for ex in batch {
            let mut tape = Tape::with_params(&self.net.params);
            let l = self.net.model.loss(&mut tape, ex)?;
            nll += tape.scalar(l.nll).to_f64().unwrap_or(f64::NAN);
            tokens += l.tokens;
            if l.tokens > 0 {
                grads.accumulate(&tape.backward(l.nll)?);
            }
        }
        if tokens == 0 {
            return Err(Error::contract("batch has no scored tokens"));
        }
        grads.scale(T::of(1.0 / tokens as f64));
        if let Some(c) = self.cfg.clip {
            grads.clip_norm(T::of(c));
        }
        self.adam.step(&mut self.net.params, &grads)?;
        self.progress.step += 1;
        Ok(nll / tokens as f64)
    }

    /// Mean per-token validation loss.
    pub fn validation_loss(&self, val: &[EncodedExample]) -> Result<f64> {
        let (nll, tokens) = total_nll(&self.net, val)?;
        if tokens == 0 {
            return Err(Error::contract("validation set has no scored tokens"));
        }
        Ok(nll / tokens as f64)
    }

    /// Trains until the schedule ends or `pause_at` total steps are reached,
    /// emitting one log line per step and validation lines on schedule.
    pub fn fit(&mut self, data: &Dataset, pause_at: Option<u64>, log: &mut dyn FnMut(LogLine)) -> Result<()> {
        if data.train.is_empty() {
            return Err(Error::contract("training set is empty"));
        }
        let b = self.cfg.batch;
        while !self.finished() {
            let mut rng = self.epoch_rng.restore();
            let mut order: Vec<usize> = (0..data.train.len()).collect();
            order.shuffle(&mut rng);
            let batches: Vec<&[usize]> = order.chunks(b).collect();
            while self.progress.batch_in_epoch < batches.len() {
                if self.finished() || pause_at.is_some_and(|p| self.progress.step >= p) {
                    return Ok(());
                }
                let batch: Vec<&EncodedExample> = batches[self.progress.batch_in_epoch]
                    .iter()
                    .map(|&i| &data.train[i])
                    .collect();
                let loss = self.train_batch(&batch)?;
                self.progress.batch_in_epoch += 1;
                log(LogLine {
                    step: self.progress.step,
                    split: Split::Train,
                    loss,
                });
                let step = self.progress.step;
                let scheduled = self.cfg.eval_every > 0 && step.is_multiple_of(self.cfg.eval_every);
                if !data.val.is_empty() && (scheduled || self.finished()) {
                    log(LogLine {
                        step,
                        split: Split::Val,
                        loss: self.validation_loss(&data.val)?,
                    });
                }
            }
            self.progress.epoch += 1;
            self.progress.batch_in_epoch = 0;
            self.epoch_rng = RngState::capture(&rng);
        }
        Ok(())
    }
}
