//! Central finite-difference verification of analytic gradients.

use std::collections::BTreeMap;

use crate::autodiff::{Tape, Var};
use crate::corpus::{Conversation, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{Architecture, ModelConfig, Network};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared on an absolute scale. With a
/// step of 1e-5 and losses of order 1 to 10, central differences carry about
/// 1e-10 of rounding noise, so below this magnitude the numeric estimate
/// itself is unreliable at the 1e-4 level.
pub const REL_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupReport {
    pub group: String,
    pub scalars: usize,
    pub max_rel_err: f64,
    pub max_abs_grad: f64,
    /// Analytic and numeric values at the worst scalar.
    pub worst: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct GradcheckReport {
    pub groups: Vec<GroupReport>,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err() < tol
    }

    pub fn group(&self, name: &str) -> Option<&GroupReport> {
        self.groups.iter().find(|g| g.group == name)
    }
}

/// Parameter group of a dotted parameter name: its first component.
pub fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// Compares the tape gradient of `loss` against central differences for every
/// scalar of every parameter in `store`.
pub fn check_store<F>(store: &ParamStore<f64>, loss: F) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape<'_, f64>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::with_params(store);
        let root = loss(&mut tape)?;
        tape.backward(root)?
    };
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::with_params(s);
        let root = loss(&mut tape)?;
        Ok(tape.scalar(root))
    };

    let mut work = store.clone();
    let mut groups: BTreeMap<String, GroupReport> = BTreeMap::new();
    for id in store.ids() {
        let group = group_of(store.name(id)).to_string();
        let zeros;
        let grad = match analytic.param(id) {
            Some(g) => g,
            None => {
                zeros = vec![0.0; store.get(id).len()];
                &zeros
            }
        };
        let entry = groups.entry(group.clone()).or_insert(GroupReport {
            group,
            scalars: 0,
            max_rel_err: 0.0,
            max_abs_grad: 0.0,
            worst: (0.0, 0.0),
        });
        for (k, &a) in grad.iter().enumerate() {
            let orig = work.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + FD_STEP;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig - FD_STEP;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            entry.scalars += 1;
            let err = relative_error(a, numeric);
            if err > entry.max_rel_err {
                entry.max_rel_err = err;
                entry.worst = (a, numeric);
            }
            entry.max_abs_grad = entry.max_abs_grad.max(a.abs());
        }
    }
    Ok(GradcheckReport {
        groups: groups.into_values().collect(),
    })
}

/// Checks every parameter of the tiny preset of `arch` on one synthetic
/// three-turn conversation (twelve predicted or consumed positions).
pub fn check_architecture(arch: Architecture, seed: u64) -> Result<GradcheckReport> {
    let conv = Conversation::from_text(&["a b c d", "e f", "g a"]);
    let vocab = Vocabulary::build(std::slice::from_ref(&conv), usize::MAX)?;
    let cfg = ModelConfig::tiny(arch);
    if vocab.len() != cfg.vocab {
        return Err(Error::config("tiny preset vocabulary size drifted"));
    }
    let ex = cfg
        .encode(&conv, &vocab)
        .map_err(|s| Error::contract(s.to_string()))?;
    let net = Network::<f64>::new(cfg, seed)?;
    check_store(&net.params, |tape| Ok(net.model.loss(tape, &ex)?.nll))
}

/// Maximum relative error of the gradient of `f` with respect to leaf inputs.
pub fn check_leaves<F>(inputs: &[Tensor<f64>], f: F) -> Result<f64>
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
{
    let run = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let root = f(&mut tape, &vars)?;
        Ok(tape.scalar(root))
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let root = f(&mut tape, &vars)?;
    let grads = tape.backward(root)?;

    let mut work = inputs.to_vec();
    let mut worst: f64 = 0.0;
    for (i, &v) in vars.iter().enumerate() {
        let g = grads.wrt(v);
        for (k, &a) in g.iter().enumerate() {
            let orig = work[i].data()[k];
            work[i].data_mut()[k] = orig + FD_STEP;
            let up = run(&work)?;
            work[i].data_mut()[k] = orig - FD_STEP;
            let down = run(&work)?;
            work[i].data_mut()[k] = orig;
            worst = worst.max(relative_error(a, (up - down) / (2.0 * FD_STEP)));
        }
    }
    Ok(worst)
}
