//! Command-line front end: vocabulary building, training, evaluation,
//! sampling, gradient checks, and synthetic corpora.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ntmd::checkpoint::{self, Checkpoint};
use ntmd::corpus::{self, Conversation, Vocabulary};
use ntmd::gradcheck;
use ntmd::model::{Architecture, ModelConfig};
use ntmd::synth;
use ntmd::train::{self, Dataset, TrainConfig, Trainer};
use ntmd::{Error, Real, Result};

#[derive(Parser, Debug)]
#[command(name = "ntmd", version, about = "Memory-augmented dialogue models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Count corpus tokens and write the vocabulary, one token per line.
    BuildVocab(BuildVocabArgs),
    /// Train a model, printing the loss log and writing a checkpoint.
    Train(TrainArgs),
    /// Per-word perplexity of a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Sample responses from a checkpoint.
    Generate(GenerateArgs),
    /// Compare analytic and finite-difference gradients at tiny sizes.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct BuildVocabArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value_t = corpus::DEFAULT_VOCAB_CAP)]
    vocab_size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Preset {
    Standard,
    Desk,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, value_enum, default_value_t = Preset::Standard)]
    preset: Preset,
    #[arg(long)]
    segment_size: Option<usize>,
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long)]
    mem_width: Option<usize>,
    #[arg(long)]
    read_heads: Option<usize>,
    #[arg(long)]
    write_heads: Option<usize>,
    #[arg(long)]
    embedding: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    encoder_hidden: Option<usize>,
    #[arg(long)]
    controller: Option<usize>,
}

impl ModelArgs {
    fn config(&self, arch: Architecture, vocab: usize) -> ModelConfig {
        let mut c = match self.preset {
            Preset::Standard => ModelConfig::standard(arch, vocab),
            Preset::Desk => ModelConfig::desk(arch, vocab),
        };
        let set = |dst: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut c.segment_size, self.segment_size);
        set(&mut c.slots, self.slots);
        set(&mut c.read_heads, self.read_heads);
        set(&mut c.write_heads, self.write_heads);
        set(&mut c.embedding, self.embedding);
        set(&mut c.hidden, self.hidden);
        set(&mut c.encoder_hidden, self.encoder_hidden);
        set(&mut c.controller, self.controller);
        if let Some(w) = self.mem_width {
            c.mem_width = w;
            c.ntm_output = w;
        }
        c
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    arch: Option<Architecture>,
    #[arg(long)]
    corpus: PathBuf,
    /// Vocabulary file; built from the corpus (and written here) if missing.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = corpus::DEFAULT_VOCAB_CAP)]
    vocab_size: usize,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Global gradient-norm limit; no clipping when absent.
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    max_steps: Option<u64>,
    /// Log validation loss every this many steps (always at the end).
    #[arg(long, default_value_t = 0)]
    eval_every: u64,
    /// Output checkpoint; with --resume also the starting point.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    resume: bool,
    #[arg(long, value_parser = ["32", "64"], default_value = "32")]
    precision: String,
    /// Loss log destination; standard output when absent.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    All,
    Train,
    Val,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Refuse checkpoints of any other architecture.
    #[arg(long)]
    arch: Option<Architecture>,
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    split: SplitArg,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    arch: Option<Architecture>,
    /// One conversation turn per occurrence, oldest first.
    #[arg(long = "prompt", required = true)]
    prompt: Vec<String>,
    #[arg(long, default_value_t = corpus::RESPONSE_CAP)]
    max_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    samples: usize,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Check one architecture; all four when absent.
    #[arg(long)]
    arch: Option<Architecture>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SynthKind {
    /// Two-turn conversations whose second turn repeats the first.
    Copy,
    /// Dialogues that state a fact early and ask for it again later.
    Recall,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(value_enum)]
    kind: SynthKind,
    #[arg(long, default_value_t = 10_000)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Copy corpus: bits per vector.
    #[arg(long, default_value_t = 6)]
    bits: usize,
    /// Copy corpus: longest sequence.
    #[arg(long, default_value_t = 10)]
    max_len: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::BuildVocab(a) => build_vocab(&a),
        Command::Train(a) => match a.precision.as_str() {
            "64" => train_cmd::<f64>(&a),
            _ => train_cmd::<f32>(&a),
        },
        Command::Eval(a) => with_precision(&a.checkpoint, |p| match p {
            64 => eval_cmd::<f64>(&a),
            _ => eval_cmd::<f32>(&a),
        }),
        Command::Generate(a) => with_precision(&a.checkpoint, |p| match p {
            64 => generate_cmd::<f64>(&a),
            _ => generate_cmd::<f32>(&a),
        }),
        Command::Gradcheck(a) => gradcheck_cmd(&a),
        Command::Synth(a) => synth_cmd(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn with_precision(path: &Path, run: impl FnOnce(u8) -> Result<ExitCode>) -> Result<ExitCode> {
    run(checkpoint::peek_header(path)?.precision)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn build_vocab(a: &BuildVocabArgs) -> Result<ExitCode> {
    let corpus = corpus::load_corpus(&a.corpus)?;
    let vocab = Vocabulary::build(&corpus, a.vocab_size)?;
    vocab.save(&a.vocab)?;
    eprintln!(
        "{} conversations, {} vocabulary entries, unknown-token rate {:.4}",
        corpus.len(),
        vocab.len(),
        vocab.unk_rate(&corpus)
    );
    Ok(ExitCode::SUCCESS)
}

fn load_or_build_vocab(a: &TrainArgs, corpus: &[Conversation]) -> Result<Vocabulary> {
    match &a.vocab {
        Some(p) if p.exists() => Vocabulary::load(p),
        other => {
            let v = Vocabulary::build(corpus, a.vocab_size)?;
            if let Some(p) = other {
                v.save(p)?;
            }
            Ok(v)
        }
    }
}

fn train_cmd<T: Real>(a: &TrainArgs) -> Result<ExitCode> {
    let corpus = corpus::load_corpus(&a.corpus)?;
    let mut trainer = if a.resume {
        let ck = Checkpoint::<T>::load(&a.checkpoint)?;
        if let Some(arch) = a.arch {
            ck.expect_arch(arch)?;
        }
        let mut t = ck.into_trainer()?;
        if let Some(e) = a.epochs {
            t.cfg.epochs = e;
        }
        if a.max_steps.is_some() {
            t.cfg.max_steps = a.max_steps;
        }
        t
    } else {
        let arch = a
            .arch
            .ok_or_else(|| Error::Config("--arch is required unless resuming".into()))?;
        let vocab = load_or_build_vocab(a, &corpus)?;
        let mut cfg = TrainConfig::new(a.model.config(arch, vocab.len()));
        cfg.lr = a.lr;
        cfg.batch = a.batch;
        cfg.epochs = a.epochs.unwrap_or(1);
        cfg.seed = a.seed;
        cfg.clip = a.clip;
        cfg.max_steps = a.max_steps;
        cfg.eval_every = a.eval_every;
        Trainer::<T>::new(cfg, vocab)?
    };
    let data = Dataset::build(&corpus, &trainer.vocab, &trainer.cfg.model)?;
    log::info!(
        "{} training and {} validation examples, {} skipped",
        data.train.len(),
        data.val.len(),
        data.skipped
    );
    let mut out = output(a.log.as_deref())?;
    let mut write_err = None;
    trainer.fit(&data, None, &mut |line| {
        if write_err.is_none() {
            if let Err(e) = writeln!(out, "{line}") {
                write_err = Some(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    out.flush()?;
    Checkpoint::from_trainer(&trainer).save(&a.checkpoint)?;
    Ok(ExitCode::SUCCESS)
}

fn eval_cmd<T: Real>(a: &EvalArgs) -> Result<ExitCode> {
    let ck = Checkpoint::<T>::load(&a.checkpoint)?;
    if let Some(arch) = a.arch {
        ck.expect_arch(arch)?;
    }
    let net = ck.network()?;
    let vocab = ck.vocabulary()?;
    let corpus = corpus::load_corpus(&a.corpus)?;
    let examples = match a.split {
        SplitArg::All => Dataset::eval_only(&corpus, &vocab, &net.config)?,
        SplitArg::Train => Dataset::build(&corpus, &vocab, &net.config)?.train,
        SplitArg::Val => Dataset::build(&corpus, &vocab, &net.config)?.val,
    };
    if examples.is_empty() {
        return Err(Error::Contract("evaluation set is empty".into()));
    }
    let (nll, tokens) = train::total_nll(&net, &examples)?;
    println!("examples\t{}", examples.len());
    println!("tokens\t{tokens}");
    println!("perplexity\t{}", train::perplexity(nll, tokens)?);
    Ok(ExitCode::SUCCESS)
}

fn generate_cmd<T: Real>(a: &GenerateArgs) -> Result<ExitCode> {
    let ck = Checkpoint::<T>::load(&a.checkpoint)?;
    if let Some(arch) = a.arch {
        ck.expect_arch(arch)?;
    }
    let net = ck.network()?;
    let vocab = ck.vocabulary()?;
    let turns: Vec<&str> = a.prompt.iter().map(String::as_str).collect();
    let prompt = Conversation::from_text(&turns);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    for _ in 0..a.samples {
        let ids = net.model.generate(&net.params, &vocab, &prompt, a.max_len, &mut rng)?;
        println!("{}", vocab.decode(&ids).join(" "));
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck_cmd(a: &GradcheckArgs) -> Result<ExitCode> {
    let archs = match a.arch {
        Some(x) => vec![x],
        None => Architecture::ALL.to_vec(),
    };
    let mut ok = true;
    println!("arch\tgroup\tscalars\tmax_rel_err");
    for arch in archs {
        let report = gradcheck::check_architecture(arch, a.seed)?;
        for g in &report.groups {
            println!("{arch}\t{}\t{}\t{:.3e}", g.group, g.scalars, g.max_rel_err);
        }
        let pass = report.passed(gradcheck::TOLERANCE);
        println!(
            "{arch}\tALL\t-\t{:.3e}\t{}",
            report.max_rel_err(),
            if pass { "PASS" } else { "FAIL" }
        );
        ok &= pass;
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn synth_cmd(a: &SynthArgs) -> Result<ExitCode> {
    let corpus = match a.kind {
        SynthKind::Recall => synth::gen_recall_dialogues(a.count, a.seed),
        SynthKind::Copy => copy_corpus(a)?,
    };
    if let Some(dir) = a.out.as_deref().and_then(Path::parent) {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut out = output(a.out.as_deref())?;
    corpus::write_corpus(&mut out, &corpus)?;
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

/// Copy sequences rendered as text: each vector becomes one token of
/// `0`/`1` characters, and the response repeats the prompt.
fn copy_corpus(a: &SynthArgs) -> Result<Vec<Conversation>> {
    if a.bits == 0 || a.max_len == 0 {
        return Err(Error::Config("--bits and --max-len must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    Ok((0..a.count)
        .map(|_| {
            let len = rand::Rng::gen_range(&mut rng, 1..=a.max_len);
            let task = synth::copy_task_from(&mut rng, len, a.bits);
            let turn: Vec<String> = task
                .targets
                .iter()
                .map(|v| v.iter().map(|&b| if b > 0.5 { '1' } else { '0' }).collect())
                .collect();
            Conversation::new(vec![turn.clone(), turn])
        })
        .collect())
}
