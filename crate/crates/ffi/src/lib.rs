//! C interface to the `ntmd` library.
//!
//! Every function returns an [`NtmdStatus`]. On failure the message is
//! available from [`ntmd_last_error`] on the same thread until the next
//! failing call. Handles are opaque and must be released with their `_free`
//! function. Strings are NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ntmd::checkpoint::{self, Checkpoint};
use ntmd::corpus::{self, Conversation, Vocabulary};
use ntmd::gradcheck;
use ntmd::model::{Architecture, ModelConfig, Network};
use ntmd::train::{self, Dataset, TrainConfig, Trainer};
use ntmd::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NtmdStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Dimension = 3,
    Index = 4,
    Contract = 5,
    Config = 6,
    UnsupportedVersion = 7,
    Corrupt = 8,
    Parse = 9,
    Io = 10,
    Json = 11,
    /// The output buffer was too small; the required size was reported.
    BufferTooSmall = 12,
    Panic = 13,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NtmdArch {
    Seq2seq = 0,
    DNtms = 1,
    Lm = 2,
    NtmLm = 3,
}

impl From<NtmdArch> for Architecture {
    fn from(a: NtmdArch) -> Self {
        match a {
            NtmdArch::Seq2seq => Architecture::Seq2Seq,
            NtmdArch::DNtms => Architecture::DNtms,
            NtmdArch::Lm => Architecture::Lm,
            NtmdArch::NtmLm => Architecture::NtmLm,
        }
    }
}

impl From<Architecture> for NtmdArch {
    fn from(a: Architecture) -> Self {
        match a {
            Architecture::Seq2Seq => NtmdArch::Seq2seq,
            Architecture::DNtms => NtmdArch::DNtms,
            Architecture::Lm => NtmdArch::Lm,
            Architecture::NtmLm => NtmdArch::NtmLm,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NtmdPreset {
    Standard = 0,
    Desk = 1,
}

/// Training options. Obtain defaults from [`ntmd_train_options_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NtmdTrainOptions {
    pub arch: NtmdArch,
    pub preset: NtmdPreset,
    pub vocab_size: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm limit; zero or negative disables clipping.
    pub clip: f64,
}

/// A trained network with its vocabulary, loaded from a checkpoint.
pub struct NtmdModel {
    net: Network<f64>,
    vocab: Vocabulary,
}

/// A training session over one corpus.
pub struct NtmdTrainer {
    trainer: Trainer<f32>,
    data: Dataset,
    last_loss: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(NtmdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Dimension { .. } => NtmdStatus::Dimension,
            Error::Index { .. } => NtmdStatus::Index,
            Error::Contract(_) => NtmdStatus::Contract,
            Error::Config(_) => NtmdStatus::Config,
            Error::UnsupportedVersion { .. } => NtmdStatus::UnsupportedVersion,
            Error::Corrupt(_) => NtmdStatus::Corrupt,
            Error::Parse { .. } => NtmdStatus::Parse,
            Error::Io(_) => NtmdStatus::Io,
            Error::Json(_) => NtmdStatus::Json,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NtmdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NtmdStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal panic: {msg}"));
            NtmdStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(NtmdStatus::NullArgument, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(NtmdStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Copies `s` plus a terminating NUL into `buf`, always reporting the
/// required size (including the NUL) through `needed`.
unsafe fn write_string(s: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> Result<(), Failure> {
    let need = s.len() + 1;
    if let Some(n) = needed.as_mut() {
        *n = need;
    }
    if buf.is_null() || len < need {
        return Err(Failure(
            NtmdStatus::BufferTooSmall,
            format!("output needs {need} bytes, buffer holds {len}"),
        ));
    }
    ptr::copy_nonoverlapping(s.as_ptr(), buf as *mut u8, s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Message of the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn ntmd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ntmd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Writes the default training options into `out`.
///
/// # Safety
/// `out` must be null or point to writable memory for one options struct.
#[no_mangle]
pub unsafe extern "C" fn ntmd_train_options_default(arch: NtmdArch, out: *mut NtmdTrainOptions) -> NtmdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let c = TrainConfig::new(ModelConfig::standard(arch.into(), corpus::RESERVED.len()));
        *out = NtmdTrainOptions {
            arch,
            preset: NtmdPreset::Standard,
            vocab_size: corpus::DEFAULT_VOCAB_CAP,
            lr: c.lr,
            batch: c.batch,
            epochs: c.epochs,
            seed: c.seed,
            clip: 0.0,
        };
        Ok(())
    })
}

/// Runs the finite-difference gradient check of `arch`'s tiny preset and
/// stores the largest relative error in `max_rel_err`.
///
/// # Safety
/// `max_rel_err` must be null or point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn ntmd_gradcheck(arch: NtmdArch, seed: u64, max_rel_err: *mut f64) -> NtmdStatus {
    guard(|| {
        let out = out_arg(max_rel_err, "max_rel_err")?;
        *out = gradcheck::check_architecture(arch.into(), seed)?.max_rel_err();
        Ok(())
    })
}

/// Loads a checkpoint of either precision.
///
/// # Safety
/// `path` must be a valid C string and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn ntmd_model_load(path: *const c_char, out: *mut *mut NtmdModel) -> NtmdStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let header = checkpoint::peek_header(&path)?;
        let (net, vocab) = if header.precision == 64 {
            let ck = Checkpoint::<f64>::load(&path)?;
            (ck.network()?, ck.vocabulary()?)
        } else {
            let ck = Checkpoint::<f32>::load(&path)?;
            let params = ck.params.cast::<f64>();
            (Network::with_params(ck.header.train.model.clone(), params)?, ck.vocabulary()?)
        };
        *out = Box::into_raw(Box::new(NtmdModel { net, vocab }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from [`ntmd_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ntmd_model_free(model: *mut NtmdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `arch` a writable slot.
#[no_mangle]
pub unsafe extern "C" fn ntmd_model_arch(model: *const NtmdModel, arch: *mut NtmdArch) -> NtmdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out_arg(arch, "arch")? = m.net.config.arch.into();
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `size` a writable slot.
#[no_mangle]
pub unsafe extern "C" fn ntmd_model_vocab_size(model: *const NtmdModel, size: *mut usize) -> NtmdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out_arg(size, "size")? = m.vocab.len();
        Ok(())
    })
}

/// Per-word perplexity of the model over every conversation of a corpus file.
///
/// # Safety
/// `model` must be a live handle, `corpus_path` a valid C string, and
/// `perplexity` a writable slot.
#[no_mangle]
pub unsafe extern "C" fn ntmd_model_perplexity(
    model: *const NtmdModel,
    corpus_path: *const c_char,
    perplexity: *mut f64,
) -> NtmdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let path = PathBuf::from(str_arg(corpus_path, "corpus_path")?);
        let out = out_arg(perplexity, "perplexity")?;
        let corpus = corpus::load_corpus(&path)?;
        let examples = Dataset::eval_only(&corpus, &m.vocab, &m.net.config)?;
        *out = train::evaluate_perplexity(&m.net, &examples)?;
        Ok(())
    })
}

/// Samples a response to `prompt`, whose turns are separated by tabs, and
/// writes it space-separated into `buf`. `needed` (if not null) receives
/// the required buffer size including the terminating NUL.
///
/// # Safety
/// `model` must be a live handle, `prompt` a valid C string, `buf` null or
/// writable for `len` bytes, and `needed` null or writable.
#[no_mangle]
pub unsafe extern "C" fn ntmd_model_generate(
    model: *const NtmdModel,
    prompt: *const c_char,
    max_len: usize,
    seed: u64,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> NtmdStatus {
    use rand::SeedableRng;
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let prompt = Conversation::parse_line(str_arg(prompt, "prompt")?, 1)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let ids = m.net.model.generate(&m.net.params, &m.vocab, &prompt, max_len, &mut rng)?;
        write_string(&m.vocab.decode(&ids).join(" "), buf, len, needed)
    })
}

/// Starts a training session on a corpus file, building the vocabulary from
/// it.
///
/// # Safety
/// `options` must point to a valid options struct, `corpus_path` must be a
/// valid C string, and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn ntmd_trainer_new(
    options: *const NtmdTrainOptions,
    corpus_path: *const c_char,
    out: *mut *mut NtmdTrainer,
) -> NtmdStatus {
    guard(|| {
        let o = *options.as_ref().ok_or_else(|| null("options"))?;
        let path = PathBuf::from(str_arg(corpus_path, "corpus_path")?);
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let corpus = corpus::load_corpus(&path)?;
        let vocab = Vocabulary::build(&corpus, o.vocab_size)?;
        let arch = o.arch.into();
        let model = match o.preset {
            NtmdPreset::Standard => ModelConfig::standard(arch, vocab.len()),
            NtmdPreset::Desk => ModelConfig::desk(arch, vocab.len()),
        };
        let mut cfg = TrainConfig::new(model);
        cfg.lr = o.lr;
        cfg.batch = o.batch;
        cfg.epochs = o.epochs;
        cfg.seed = o.seed;
        cfg.clip = (o.clip > 0.0).then_some(o.clip);
        let data = Dataset::build(&corpus, &vocab, &cfg.model)?;
        let trainer = Trainer::new(cfg, vocab)?;
        *out = Box::into_raw(Box::new(NtmdTrainer {
            trainer,
            data,
            last_loss: f64::NAN,
        }));
        Ok(())
    })
}

/// Releases a trainer. Null is ignored.
///
/// # Safety
/// `trainer` must be null or a handle from [`ntmd_trainer_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ntmd_trainer_free(trainer: *mut NtmdTrainer) {
    if !trainer.is_null() {
        drop(Box::from_raw(trainer));
    }
}

/// Runs up to `steps` more optimizer steps (fewer if the schedule ends).
/// `steps_done` receives the total step count so far and `last_loss` the
/// most recent training loss (NaN before the first step); either may be
/// null.
///
/// # Safety
/// `trainer` must be a live handle; the outputs must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn ntmd_trainer_run(
    trainer: *mut NtmdTrainer,
    steps: u64,
    steps_done: *mut u64,
    last_loss: *mut f64,
) -> NtmdStatus {
    guard(|| {
        let t = trainer.as_mut().ok_or_else(|| null("trainer"))?;
        let stop = t.trainer.progress.step.saturating_add(steps);
        let mut last = t.last_loss;
        t.trainer.fit(&t.data, Some(stop), &mut |line| {
            if line.split == train::Split::Train {
                last = line.loss;
            }
        })?;
        t.last_loss = last;
        if let Some(s) = steps_done.as_mut() {
            *s = t.trainer.progress.step;
        }
        if let Some(l) = last_loss.as_mut() {
            *l = last;
        }
        Ok(())
    })
}

/// Writes a checkpoint of the current training state.
///
/// # Safety
/// `trainer` must be a live handle and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn ntmd_trainer_save(trainer: *const NtmdTrainer, path: *const c_char) -> NtmdStatus {
    guard(|| {
        let t = trainer.as_ref().ok_or_else(|| null("trainer"))?;
        let path = PathBuf::from(str_arg(path, "path")?);
        Checkpoint::from_trainer(&t.trainer).save(&path)?;
        Ok(())
    })
}
