//! Copy-task models: a GRU coupled to an NTM that is queried after every
//! input step, and a plain GRU with a matched parameter budget.
//!
//! Memory step `t` takes the GRU state `h_t`; its output `r_t` feeds the
//! prediction at step `t` and the GRU input at step `t + 1`:
//!
//! ```text
//! h_t = GRU([x_t, r_{t-1}], h_{t-1})
//! r_t = NTM(h_t)
//! y_t = W·[h_t, r_t] + b
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::cells::GruParams;
use crate::dntms::sum_scalars;
use crate::error::{Error, Result};
use crate::ntm::{NtmConfig, NtmParams, StepMode};
use crate::optim::{Adam, AdamConfig};
use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::synth::{copy_task_from, CopyTask};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopyConfig {
    pub bits: usize,
    pub hidden: usize,
    /// `None` gives the memoryless baseline.
    pub memory: Option<CopyMemory>,
    pub lr: f64,
    pub batch: usize,
    pub clip: Option<f64>,
    /// Training lengths are drawn uniformly from `1..=max_len`.
    pub max_len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CopyMemory {
    pub slots: usize,
    pub width: usize,
    pub controller: usize,
    pub output: usize,
}

impl CopyConfig {
    /// Default desk-sized memory model for 6-bit vectors.
    pub fn ntm() -> Self {
        CopyConfig {
            bits: 6,
            hidden: 32,
            memory: Some(CopyMemory {
                slots: 24,
                width: 8,
                controller: 32,
                output: 8,
            }),
            lr: 3e-3,
            batch: 4,
            clip: Some(10.0),
            max_len: 10,
        }
    }

    /// A memoryless GRU whose parameter count is as close as possible to
    /// that of `reference`.
    pub fn matched_gru(reference: &CopyConfig) -> Self {
        let target = reference.param_count();
        let mut cfg = CopyConfig {
            memory: None,
            ..reference.clone()
        };
        let mut best = (usize::MAX, 1);
        for h in 1..=4096 {
            cfg.hidden = h;
            let n = cfg.param_count();
            let gap = n.abs_diff(target);
            if gap < best.0 {
                best = (gap, h);
            }
            if n > target {
                break;
            }
        }
        cfg.hidden = best.1;
        cfg
    }

    fn ntm_config(&self, m: CopyMemory) -> NtmConfig {
        NtmConfig {
            input: self.hidden,
            slots: m.slots,
            width: m.width,
            read_heads: 1,
            write_heads: 1,
            controller: m.controller,
            output: m.output,
        }
    }

    pub fn param_count(&self) -> usize {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        match CopyModel::new(&mut store, self.clone(), &mut rng) {
            Ok(_) => store.num_scalars(),
            Err(_) => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CopyModel {
    pub cfg: CopyConfig,
    gru: GruParams,
    ntm: Option<NtmParams>,
    head_w: ParamId,
    head_b: ParamId,
}

impl CopyModel {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, cfg: CopyConfig, rng: &mut R) -> Result<Self> {
        if cfg.bits == 0 || cfg.hidden == 0 || cfg.batch == 0 || cfg.max_len == 0 {
            return Err(Error::config("copy model sizes must be positive"));
        }
        let cond = cfg.memory.map_or(0, |m| m.output);
        let gru = GruParams::new(store, "gru", cfg.bits + 1 + cond, cfg.hidden, true, rng);
        let ntm = match cfg.memory {
            Some(m) => Some(NtmParams::new(store, "ntm", cfg.ntm_config(m), rng)?),
            None => None,
        };
        let head_in = cfg.hidden + cond;
        let head_w = store.add_uniform("head.w", &[cfg.bits, head_in], 1.0 / (head_in as f64).sqrt(), rng);
        let head_b = store.add_zeros("head.b", &[cfg.bits]);
        Ok(CopyModel {
            cfg,
            gru,
            ntm,
            head_w,
            head_b,
        })
    }

    /// Summed binary cross-entropy (nats) over every target bit.
    pub fn loss<T: Real>(&self, tape: &mut Tape<'_, T>, task: &CopyTask) -> Result<Var> {
        if task.width != self.cfg.bits {
            return Err(Error::dim("copy task width", &[task.width], &[self.cfg.bits]));
        }
        let mut h = tape.zeros(&[self.cfg.hidden]);
        let mut mem = match &self.ntm {
            Some(n) => Some((n.initial_state(tape)?, tape.zeros(&[n.cfg.output]))),
            None => None,
        };
        let hw = tape.param(self.head_w);
        let hb = tape.param(self.head_b);
        let offset = task.output_offset();
        let mut terms = Vec::with_capacity(task.len());
        for (t, x) in task.inputs.iter().enumerate() {
            let x = tape.constant(Tensor::vector(x.iter().map(|&v| T::of(v)).collect()));
            let head_in = match (&self.ntm, &mut mem) {
                (Some(ntm), Some((state, read))) => {
                    let inp = tape.concat(&[x, *read])?;
                    h = self.gru.step(tape, inp, h)?;
                    let step = ntm.step(tape, h, state, StepMode::ReadWrite)?;
                    *state = step.state;
                    *read = step.output;
                    tape.concat(&[h, step.output])?
                }
                _ => {
                    h = self.gru.step(tape, x, h)?;
                    h
                }
            };
            if t >= offset {
                let logits = tape.affine(hw, head_in, hb)?;
                let y: Vec<T> = task.targets[t - offset].iter().map(|&v| T::of(v)).collect();
                terms.push(tape.bce_with_logits(logits, &y)?);
            }
        }
        sum_scalars(tape, &terms)
    }
}

/// Mean per-bit cross-entropy of `model` over `tasks`.
pub fn eval_bits<T: Real>(model: &CopyModel, params: &ParamStore<T>, tasks: &[CopyTask]) -> Result<f64> {
    let (mut total, mut bits) = (0.0, 0usize);
    for task in tasks {
        let mut tape = Tape::with_params(params);
        let l = model.loss(&mut tape, task)?;
        total += tape.scalar(l).to_f64().unwrap_or(f64::NAN);
        bits += task.len() * task.width;
    }
    Ok(total / bits.max(1) as f64)
}

/// Fixed evaluation set with lengths cycling through `1..=max_len`.
pub fn eval_set(count: usize, max_len: usize, bits: usize, seed: u64) -> Vec<CopyTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|i| copy_task_from(&mut rng, 1 + i % max_len, bits)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CopyOutcome {
    /// Training sequences consumed when the evaluation loss first fell below
    /// the target, if it did.
    pub reached_at: Option<usize>,
    pub sequences: usize,
    /// `(sequences, eval per-bit loss)` at every evaluation.
    pub curve: Vec<(usize, f64)>,
    /// Mean per-bit training loss of every optimizer step.
    pub train_losses: Vec<f64>,
    pub params: ParamStore<f32>,
    pub model: CopyModel,
}

/// Trains on `max_sequences` random sequences, evaluating every
/// `eval_every` sequences and recording when the evaluation loss first falls
/// below `target`. With `stop_at_target` training ends at that point.
pub fn train_copy(
    cfg: &CopyConfig,
    seed: u64,
    max_sequences: usize,
    target: Option<f64>,
    stop_at_target: bool,
    eval_every: usize,
) -> Result<CopyOutcome> {
    let mut params = ParamStore::<f32>::new();
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let model = CopyModel::new(&mut params, cfg.clone(), &mut init_rng)?;
    let mut adam = Adam::new(&params, AdamConfig::with_lr(cfg.lr));
    let mut data_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_DA7A);
    let evals = eval_set(100, cfg.max_len, cfg.bits, seed ^ 0xE7A1);
    let mut grads = ParamGrads::zeros_like(&params);
    let mut outcome = CopyOutcome {
        reached_at: None,
        sequences: 0,
        curve: Vec::new(),
        train_losses: Vec::new(),
        params: ParamStore::new(),
        model: model.clone(),
    };
    let mut next_eval = eval_every;
    while outcome.sequences < max_sequences {
        grads.reset();
        let (mut bits, mut total) = (0usize, 0.0f64);
        for _ in 0..cfg.batch {
            let len = data_rng.gen_range(1..=cfg.max_len);
            let task = copy_task_from(&mut data_rng, len, cfg.bits);
            let mut tape = Tape::with_params(&params);
            let loss = model.loss(&mut tape, &task)?;
            total += f64::from(tape.scalar(loss));
            grads.accumulate(&tape.backward(loss)?);
            bits += len * cfg.bits;
        }
        grads.scale(1.0 / bits as f32);
        if let Some(c) = cfg.clip {
            grads.clip_norm(c as f32);
        }
        adam.step(&mut params, &grads)?;
        outcome.train_losses.push(total / bits as f64);
        outcome.sequences += cfg.batch;
        if eval_every > 0 && outcome.sequences >= next_eval {
            next_eval += eval_every;
            let l = eval_bits(&model, &params, &evals)?;
            log::debug!("copy seed {seed}: {} sequences, eval {l:.4}", outcome.sequences);
            outcome.curve.push((outcome.sequences, l));
            if outcome.reached_at.is_none() && target.is_some_and(|t| l < t) {
                outcome.reached_at = Some(outcome.sequences);
                if stop_at_target {
                    break;
                }
            }
        }
    }
    outcome.params = params;
    Ok(outcome)
}
