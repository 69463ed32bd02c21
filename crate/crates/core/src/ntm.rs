//! Neural Turing Machine: an LSTM controller coupled to an `N × W` memory
//! matrix through differentiable read and write heads.
//!
//! Each head weighting is produced by the addressing chain
//! content → interpolate → shift → sharpen. Within one [`NtmParams::step`]
//! every head addresses the memory as it stood on entry; reads happen first,
//! then write heads are applied in index order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::cells::{LstmParams, LstmState};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NtmConfig {
    /// Width of the external input fed to the controller each step.
    pub input: usize,
    pub slots: usize,
    pub width: usize,
    pub read_heads: usize,
    pub write_heads: usize,
    pub controller: usize,
    pub output: usize,
}

impl NtmConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("input", self.input),
            ("slots", self.slots),
            ("width", self.width),
            ("read_heads", self.read_heads),
            ("controller", self.controller),
            ("output", self.output),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::config(format!("NTM {name} must be positive")));
            }
        }
        Ok(())
    }

    fn read_emission_len(&self) -> usize {
        self.width + 6
    }

    fn write_emission_len(&self) -> usize {
        3 * self.width + 6
    }
}

/// Learned parameters of one NTM.
#[derive(Clone, Debug, PartialEq)]
pub struct NtmParams {
    pub cfg: NtmConfig,
    pub controller: LstmParams,
    read_emit: Vec<(ParamId, ParamId)>,
    write_emit: Vec<(ParamId, ParamId)>,
    out_w: ParamId,
    out_b: ParamId,
    mem_init: ParamId,
    read_init: Vec<ParamId>,
}

/// Head parameters after range constraints have been applied.
#[derive(Clone, Copy, Debug)]
pub struct HeadEmission {
    pub key: Var,
    /// Key strength β ≥ 0 (softplus).
    pub beta: Var,
    /// Interpolation gate g ∈ (0, 1) (sigmoid).
    pub gate: Var,
    /// Distribution over shifts {-1, 0, +1} (softmax).
    pub shift: Var,
    /// Sharpening exponent γ ≥ 1 (1 + softplus).
    pub gamma: Var,
    pub erase: Option<Var>,
    pub add: Option<Var>,
}

/// Weighting after each stage of the addressing chain.
#[derive(Clone, Copy, Debug)]
pub struct Addressing {
    pub content: Var,
    pub gated: Var,
    pub shifted: Var,
    pub sharpened: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NtmState {
    pub memory: Var,
    pub read_weights: Vec<Var>,
    pub write_weights: Vec<Var>,
    pub prev_reads: Vec<Var>,
    pub controller: LstmState,
    /// Number of steps this state has been advanced through.
    pub steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum StepMode {
    #[default]
    ReadWrite,
    /// Reads only; memory and write weightings pass through unchanged.
    ReadOnly,
}

#[derive(Clone, Debug)]
pub struct NtmStep {
    pub output: Var,
    pub reads: Vec<Var>,
    pub state: NtmState,
    pub read_addressing: Vec<Addressing>,
    pub write_addressing: Vec<Addressing>,
}

/// `softmax_i(β · cos(k, M[i]))`.
pub fn content_address<T: Real>(tape: &mut Tape<'_, T>, key: Var, beta: Var, memory: Var) -> Result<Var> {
    let sim = tape.cosine_rows(memory, key)?;
    let scaled = tape.scale(sim, beta)?;
    Ok(tape.softmax(scaled))
}

/// `g·w_content + (1 − g)·w_prev`.
pub fn interpolate<T: Real>(tape: &mut Tape<'_, T>, w_content: Var, w_prev: Var, gate: Var) -> Result<Var> {
    let a = tape.scale(w_content, gate)?;
    let keep = tape.one_minus(gate);
    let b = tape.scale(w_prev, keep)?;
    tape.add(a, b)
}

pub fn shift_weighting<T: Real>(tape: &mut Tape<'_, T>, w: Var, shift: Var) -> Result<Var> {
    tape.circular_shift(w, shift)
}

pub fn sharpen<T: Real>(tape: &mut Tape<'_, T>, w: Var, gamma: Var) -> Result<Var> {
    tape.sharpen(w, gamma)
}

pub fn read_memory<T: Real>(tape: &mut Tape<'_, T>, memory: Var, w: Var) -> Result<Var> {
    tape.read_rows(memory, w)
}

pub fn write_memory<T: Real>(tape: &mut Tape<'_, T>, memory: Var, w: Var, erase: Var, add: Var) -> Result<Var> {
    tape.erase_add(memory, w, erase, add)
}

/// Full addressing chain for one head.
pub fn address<T: Real>(tape: &mut Tape<'_, T>, head: &HeadEmission, memory: Var, w_prev: Var) -> Result<Addressing> {
    let content = content_address(tape, head.key, head.beta, memory)?;
    let gated = interpolate(tape, content, w_prev, head.gate)?;
    let shifted = shift_weighting(tape, gated, head.shift)?;
    let sharpened = sharpen(tape, shifted, head.gamma)?;
    Ok(Addressing {
        content,
        gated,
        shifted,
        sharpened,
    })
}

impl NtmParams {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, cfg: NtmConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let ctrl_in = cfg.input + cfg.read_heads * cfg.width;
        let controller = LstmParams::new(store, &format!("{name}.ctrl"), ctrl_in, cfg.controller, rng);
        let bound = 1.0 / (cfg.controller as f64).sqrt();
        let mut emit = |kind: &str, count: usize, len: usize, rng: &mut R| {
            (0..count)
                .map(|i| {
                    let w = store.add_uniform(format!("{name}.{kind}{i}.w"), &[len, cfg.controller], bound, rng);
                    let b = store.add_zeros(format!("{name}.{kind}{i}.b"), &[len]);
                    (w, b)
                })
                .collect::<Vec<_>>()
        };
        let read_emit = emit("read", cfg.read_heads, cfg.read_emission_len(), rng);
        let write_emit = emit("write", cfg.write_heads, cfg.write_emission_len(), rng);
        let out_in = cfg.controller + cfg.read_heads * cfg.width;
        let out_w = store.add_uniform(
            format!("{name}.out.w"),
            &[cfg.output, out_in],
            1.0 / (out_in as f64).sqrt(),
            rng,
        );
        let out_b = store.add_zeros(format!("{name}.out.b"), &[cfg.output]);
        let mem_bound = 1.0 / ((cfg.slots + cfg.width) as f64).sqrt();
        let mem_init = store.add_uniform(format!("{name}.mem_init"), &[cfg.width], mem_bound, rng);
        let read_init = (0..cfg.read_heads)
            .map(|i| store.add_uniform(format!("{name}.read_init{i}"), &[cfg.width], mem_bound, rng))
            .collect();
        Ok(NtmParams {
            cfg,
            controller,
            read_emit,
            write_emit,
            out_w,
            out_b,
            mem_init,
            read_init,
        })
    }

    /// Memory filled with the learned init row, head weightings one-hot at
    /// slot 0, previous reads from the learned read-init vectors, and a zero
    /// controller state.
    pub fn initial_state<T: Real>(&self, tape: &mut Tape<'_, T>) -> Result<NtmState> {
        let row = tape.param(self.mem_init);
        let memory = tape.broadcast_rows(row, self.cfg.slots)?;
        let mut one_hot = Tensor::zeros(&[self.cfg.slots]);
        one_hot.data_mut()[0] = T::one();
        let read_weights = (0..self.cfg.read_heads)
            .map(|_| tape.constant(one_hot.clone()))
            .collect();
        let write_weights = (0..self.cfg.write_heads)
            .map(|_| tape.constant(one_hot.clone()))
            .collect();
        let prev_reads = self.read_init.iter().map(|&p| tape.param(p)).collect();
        Ok(NtmState {
            memory,
            read_weights,
            write_weights,
            prev_reads,
            controller: self.controller.zero_state(tape),
            steps: 0,
        })
    }

    fn emit<T: Real>(&self, tape: &mut Tape<'_, T>, h: Var, (w, b): (ParamId, ParamId), write: bool) -> Result<HeadEmission> {
        let width = self.cfg.width;
        let w = tape.param(w);
        let b = tape.param(b);
        let raw = tape.affine(w, h, b)?;
        let key = tape.slice(raw, 0, width)?;
        let beta = tape.slice(raw, width, 1)?;
        let beta = tape.softplus(beta);
        let gate = tape.slice(raw, width + 1, 1)?;
        let gate = tape.sigmoid(gate);
        let shift = tape.slice(raw, width + 2, 3)?;
        let shift = tape.softmax(shift);
        let gamma = tape.slice(raw, width + 5, 1)?;
        let gamma = tape.softplus(gamma);
        let gamma = tape.add_scalar(gamma, 1.0);
        let (erase, add) = if write {
            let e = tape.slice(raw, width + 6, width)?;
            let a = tape.slice(raw, 2 * width + 6, width)?;
            (Some(tape.sigmoid(e)), Some(a))
        } else {
            (None, None)
        };
        Ok(HeadEmission {
            key,
            beta,
            gate,
            shift,
            gamma,
            erase,
            add,
        })
    }

    /// One controller step followed by addressing, reads, and writes.
    pub fn step<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var, state: &NtmState, mode: StepMode) -> Result<NtmStep> {
        if tape.shape(x) != [self.cfg.input] {
            return Err(Error::dim("ntm_step", tape.shape(x), &[self.cfg.input]));
        }
        let mut ctrl_in = Vec::with_capacity(1 + state.prev_reads.len());
        ctrl_in.push(x);
        ctrl_in.extend_from_slice(&state.prev_reads);
        let ctrl_in = tape.concat(&ctrl_in)?;
        let controller = self.controller.step(tape, ctrl_in, state.controller)?;
        let h = controller.h;

        let mut read_addressing = Vec::with_capacity(self.read_emit.len());
        for (i, &p) in self.read_emit.iter().enumerate() {
            let head = self.emit(tape, h, p, false)?;
            read_addressing.push(address(tape, &head, state.memory, state.read_weights[i])?);
        }
        let mut writes = Vec::with_capacity(self.write_emit.len());
        if mode == StepMode::ReadWrite {
            for (i, &p) in self.write_emit.iter().enumerate() {
                let head = self.emit(tape, h, p, true)?;
                let a = address(tape, &head, state.memory, state.write_weights[i])?;
                writes.push((head, a));
            }
        }

        let reads = read_addressing
            .iter()
            .map(|a| read_memory(tape, state.memory, a.sharpened))
            .collect::<Result<Vec<_>>>()?;

        let mut memory = state.memory;
        for (head, a) in &writes {
            let (e, add) = (head.erase.expect("write head"), head.add.expect("write head"));
            memory = write_memory(tape, memory, a.sharpened, e, add)?;
        }

        let mut out_in = Vec::with_capacity(1 + reads.len());
        out_in.push(h);
        out_in.extend_from_slice(&reads);
        let out_in = tape.concat(&out_in)?;
        let ow = tape.param(self.out_w);
        let ob = tape.param(self.out_b);
        let output = tape.affine(ow, out_in, ob)?;

        let write_weights = if mode == StepMode::ReadWrite {
            writes.iter().map(|(_, a)| a.sharpened).collect()
        } else {
            state.write_weights.clone()
        };
        let write_addressing = writes.into_iter().map(|(_, a)| a).collect();
        Ok(NtmStep {
            output,
            state: NtmState {
                memory,
                read_weights: read_addressing.iter().map(|a| a.sharpened).collect(),
                write_weights,
                prev_reads: reads.clone(),
                controller,
                steps: state.steps + 1,
            },
            reads,
            read_addressing,
            write_addressing,
        })
    }
}
