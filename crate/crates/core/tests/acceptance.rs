//! Acceptance criteria. Each criterion prints one `PASS` or `FAIL` line with
//! its measurements; the process exits nonzero if any fails.
//!
//! `ACCEPTANCE_ONLY=1,5` restricts the run to the listed criteria.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ntmd::checkpoint::Checkpoint;
use ntmd::copy_task::{eval_bits, train_copy, CopyConfig};
use ntmd::corpus::{
    encode_lm, encode_seq2seq, Conversation, Seq2SeqExample, Speaker, Vocabulary, DEFAULT_VOCAB_CAP, EOS,
    HISTORY_CAP, LM_CAP, RESPONSE_CAP, SEP,
};
use ntmd::dntms::{segment_turn, DntmsMode, SegmentPolicy};
use ntmd::gradcheck::{self, check_architecture};
use ntmd::model::{Architecture, Model, ModelConfig, Network};
use ntmd::ntm::{address, read_memory, write_memory, HeadEmission};
use ntmd::ntmlm::LmMode;
use ntmd::synth::{copy_task_from, gen_recall_dialogues};
use ntmd::train::{evaluate_perplexity, perplexity, Dataset, TrainConfig, Trainer};
use ntmd::{Tape, Tensor};

/// Randomized cases per invariant family.
const CASES: usize = 200;

type Criterion = (u32, &'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

fn main() -> ExitCode {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [Criterion; 7] = [
        (1, "gradient verification", gradients),
        (2, "random-model perplexity", random_perplexity),
        (3, "copy task", copy_task),
        (4, "trend on the recall corpus", trend),
        (5, "invariant suites", invariants),
        (6, "determinism", determinism),
        (7, "pipeline conformance", pipeline),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!(
            "{verdict} criterion {n} ({name}) [{:.1}s]: {}",
            start.elapsed().as_secs_f64(),
            outcome.detail
        );
        failed += usize::from(!outcome.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn within(start: Instant, limit: Duration) -> (bool, String) {
    let t = start.elapsed();
    (t < limit, format!("{:.1}s of {}s", t.as_secs_f64(), limit.as_secs()))
}

// 1 ---------------------------------------------------------------------

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = Vec::new();
    let mut pass = true;
    for arch in Architecture::ALL {
        let report = check_architecture(arch, 0).expect("gradcheck runs");
        pass &= report.passed(gradcheck::TOLERANCE);
        worst.push(format!("{arch} {:.2e}", report.max_rel_err()));
    }
    let (fast, time) = within(start, Duration::from_secs(60));
    Outcome::new(pass && fast, format!("max rel err {}; {time}", worst.join(", ")))
}

// 2 ---------------------------------------------------------------------

fn random_perplexity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let words: Vec<String> = (0..996).map(|i| format!("w{i}")).collect();
    let mut corpus: Vec<Conversation> = vec![Conversation::new(vec![words.clone()])];
    for _ in 0..30 {
        let turns = (0..rng.gen_range(2..5))
            .map(|_| {
                (0..rng.gen_range(3..12))
                    .map(|_| words[rng.gen_range(0..words.len())].clone())
                    .collect()
            })
            .collect();
        corpus.push(Conversation::new(turns));
    }
    let vocab = Vocabulary::build(&corpus, DEFAULT_VOCAB_CAP).expect("vocabulary");
    assert_eq!(vocab.len(), 1000);
    let mut pass = true;
    let mut parts = Vec::new();
    for arch in [Architecture::Lm, Architecture::NtmLm] {
        let cfg = ModelConfig::standard(arch, vocab.len());
        let examples = Dataset::eval_only(&corpus[1..], &vocab, &cfg).expect("encode");
        let net = Network::<f32>::new(cfg, 7).expect("model");
        let ppl = evaluate_perplexity(&net, &examples).expect("perplexity");
        pass &= (950.0..=1050.0).contains(&ppl);
        parts.push(format!("{arch} {ppl:.1}"));
    }
    let (fast, time) = within(start, Duration::from_secs(60));
    Outcome::new(pass && fast, format!("V=1000 perplexity {}; {time}", parts.join(", ")))
}

// 3 ---------------------------------------------------------------------

fn copy_task() -> Outcome {
    let start = Instant::now();
    let ntm_cfg = CopyConfig::ntm();
    let gru_cfg = CopyConfig::matched_gru(&ntm_cfg);
    let budget = 50_000;
    let (mut reached, mut ntm20, mut gru20) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 1..=3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let long: Vec<_> = (0..50).map(|_| copy_task_from(&mut rng, 20, ntm_cfg.bits)).collect();
        let ntm = train_copy(&ntm_cfg, seed, budget, Some(0.05), false, 1000).expect("ntm run");
        let gru = train_copy(&gru_cfg, seed, budget, None, false, 0).expect("gru run");
        reached.push(ntm.reached_at.map_or(f64::INFINITY, |s| s as f64));
        ntm20.push(eval_bits(&ntm.model, &ntm.params, &long).expect("eval"));
        gru20.push(eval_bits(&gru.model, &gru.params, &long).expect("eval"));
    }
    let (m_reached, m_ntm, m_gru) = (median(reached.clone()), median(ntm20.clone()), median(gru20.clone()));
    let (fast, time) = within(start, Duration::from_secs(30 * 60));
    Outcome::new(
        m_reached <= budget as f64 && m_ntm < m_gru && fast,
        format!(
            "params {} vs {}; <0.05 reached at {reached:?} (median {m_reached}); length-20 loss ntm {ntm20:.4?} \
             (median {m_ntm:.4}) vs gru {gru20:.4?} (median {m_gru:.4}); {time}",
            ntm_cfg.param_count(),
            gru_cfg.param_count()
        ),
    )
}

// 4 ---------------------------------------------------------------------

fn trend() -> Outcome {
    let start = Instant::now();
    let corpus = gen_recall_dialogues(10_000, 42);
    let vocab = Vocabulary::build(&corpus, DEFAULT_VOCAB_CAP).expect("vocabulary");
    let mut med = std::collections::BTreeMap::new();
    let mut parts = Vec::new();
    for arch in Architecture::ALL {
        let model = ModelConfig::desk(arch, vocab.len());
        let data = Dataset::build(&corpus, &vocab, &model).expect("dataset");
        let mut ppls = Vec::new();
        for seed in 1..=3u64 {
            let mut cfg = TrainConfig::new(model.clone());
            cfg.lr = 3e-3;
            cfg.batch = 16;
            cfg.epochs = 100;
            cfg.seed = seed;
            cfg.clip = Some(5.0);
            cfg.max_steps = Some(2000);
            let mut t = Trainer::<f32>::new(cfg, vocab.clone()).expect("trainer");
            t.fit(&data, None, &mut |_| {}).expect("training");
            ppls.push(evaluate_perplexity(&t.net, &data.val).expect("perplexity"));
        }
        parts.push(format!("{arch} {ppls:.4?}"));
        med.insert(arch.name(), median(ppls));
    }
    let (lm, ntm_lm, s2s, dntms) = (med["lm"], med["ntm-lm"], med["seq2seq"], med["d-ntms"]);
    let (fast, time) = within(start, Duration::from_secs(3600));
    Outcome::new(
        ntm_lm <= lm && dntms <= s2s && fast && vocab.len() <= 100,
        format!(
            "vocab {}; median ntm-lm {ntm_lm:.4} vs lm {lm:.4}, d-ntms {dntms:.4} vs seq2seq {s2s:.4}; runs {}; {time}",
            vocab.len(),
            parts.join("; ")
        ),
    )
}

// 5 ---------------------------------------------------------------------

fn on_simplex(w: &[f64]) -> bool {
    w.iter().all(|&x| x >= 0.0) && (w.iter().sum::<f64>() - 1.0).abs() < 1e-9
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>().powi(3) + 1e-12).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

fn scalar(tape: &mut Tape<'_, f64>, x: f64) -> ntmd::Var {
    tape.constant(Tensor::vector(vec![x]))
}

/// Runs `case` for `CASES` seeds, returning the number of failures.
fn count_failures(mut case: impl FnMut(&mut ChaCha8Rng) -> bool, salt: u64) -> usize {
    (0..CASES as u64)
        .filter(|&i| !case(&mut ChaCha8Rng::seed_from_u64(salt * 1_000_003 + i)))
        .count()
}

fn addressing_case(rng: &mut ChaCha8Rng) -> bool {
    let (n, w) = (rng.gen_range(1..12), rng.gen_range(1..8));
    let mut tape = Tape::<f64>::new();
    let memory = tape.constant(random_matrix(rng, n, w));
    let key = tape.constant(Tensor::vector((0..w).map(|_| rng.gen_range(-2.0..2.0)).collect()));
    let head = HeadEmission {
        key,
        beta: scalar(&mut tape, rng.gen_range(0.0..50.0)),
        gate: scalar(&mut tape, rng.gen_range(0.0..=1.0)),
        shift: tape.constant(Tensor::vector(random_simplex(rng, 3))),
        gamma: scalar(&mut tape, rng.gen_range(1.0..20.0)),
        erase: None,
        add: None,
    };
    let prev = tape.constant(Tensor::vector(random_simplex(rng, n)));
    let a = address(&mut tape, &head, memory, prev).expect("addressing");
    [a.content, a.gated, a.shifted, a.sharpened]
        .iter()
        .all(|&v| on_simplex(tape.value(v)))
}

fn read_hull_case(rng: &mut ChaCha8Rng) -> bool {
    let (n, w) = (rng.gen_range(1..12), rng.gen_range(1..8));
    let m = random_matrix(rng, n, w);
    let mut tape = Tape::<f64>::new();
    let memory = tape.constant(m.clone());
    let weights = tape.constant(Tensor::vector(random_simplex(rng, n)));
    let r = read_memory(&mut tape, memory, weights).expect("read");
    tape.value(r).iter().enumerate().all(|(j, &x)| {
        let col = (0..n).map(|i| m.data()[i * w + j]);
        let lo = col.clone().fold(f64::INFINITY, f64::min);
        let hi = col.fold(f64::NEG_INFINITY, f64::max);
        x >= lo - 1e-12 && x <= hi + 1e-12
    })
}

fn write_case(rng: &mut ChaCha8Rng) -> bool {
    let (n, w) = (rng.gen_range(1..12), rng.gen_range(1..8));
    let m = random_matrix(rng, n, w);
    let erase_v: Vec<f64> = (0..w).map(|_| rng.gen()).collect();
    let add_v: Vec<f64> = (0..w).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let mut tape = Tape::<f64>::new();
    let memory = tape.constant(m.clone());
    let erase = tape.constant(Tensor::vector(erase_v));
    let add = tape.constant(Tensor::vector(add_v.clone()));
    let zero = tape.zeros(&[n]);
    let same = write_memory(&mut tape, memory, zero, erase, add).expect("write");
    let identity = tape.value(same) == m.data();

    let row = rng.gen_range(0..n);
    let mut one_hot = vec![0.0; n];
    one_hot[row] = 1.0;
    let w_hot = tape.constant(Tensor::vector(one_hot));
    let full = tape.constant(Tensor::vector(vec![1.0; w]));
    let out = write_memory(&mut tape, memory, w_hot, full, add).expect("write");
    let v = tape.value(out);
    let overwrite = (0..n).all(|i| {
        (0..w).all(|j| {
            let expect = if i == row { add_v[j] } else { m.data()[i * w + j] };
            v[i * w + j] == expect
        })
    });
    identity && overwrite
}

fn random_turn(rng: &mut ChaCha8Rng, vocab: usize, max_len: usize) -> Vec<u32> {
    (0..rng.gen_range(1..=max_len)).map(|_| rng.gen_range(4..vocab as u32)).collect()
}

fn history_example(turns: &[Vec<u32>], response: &[u32]) -> Seq2SeqExample {
    let mut history = Vec::new();
    for (i, t) in turns.iter().enumerate() {
        if i > 0 {
            history.push(SEP);
        }
        history.extend(t);
    }
    let mut response = response.to_vec();
    response.push(EOS);
    Seq2SeqExample {
        history,
        first_speaker: Speaker::A,
        response_mask: vec![true; response.len()],
        response,
        history_dropped: 0,
        response_dropped: 0,
    }
}

fn dntms_net(seed: u64) -> Network<f64> {
    Network::new(ModelConfig::tiny(Architecture::DNtms), seed).expect("model")
}

/// The speaker who is silent during the final history turn keeps a
/// bit-identical memory across that whole turn.
fn pause_case(net: &Network<f64>, rng: &mut ChaCha8Rng) -> bool {
    let Model::Dialogue(m, _) = &net.model else { unreachable!() };
    let turns: Vec<Vec<u32>> = (0..rng.gen_range(2..6)).map(|_| random_turn(rng, 11, 25)).collect();
    let resp = random_turn(rng, 11, 3);
    let full = history_example(&turns, &resp);
    let prefix = history_example(&turns[..turns.len() - 1], &resp);
    let silent = Speaker::of_turn(turns.len() - 1).other();
    let mut tape = Tape::with_params(&net.params);
    let a = m.encode_history(&mut tape, &full, DntmsMode::Dntms).expect("encode");
    let b = m.encode_history(&mut tape, &prefix, DntmsMode::Dntms).expect("encode");
    let pick = |h: &ntmd::dntms::EncodedHistory| match silent {
        Speaker::A => h.ntm_a.clone().expect("memory"),
        Speaker::B => h.ntm_b.clone().expect("memory"),
    };
    let (sa, sb) = (pick(&a), pick(&b));
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    sa.steps == sb.steps
        && bits(tape.value(sa.memory)) == bits(tape.value(sb.memory))
        && sa
            .read_weights
            .iter()
            .zip(&sb.read_weights)
            .all(|(&x, &y)| bits(tape.value(x)) == bits(tape.value(y)))
        && bits(tape.value(sa.controller.h)) == bits(tape.value(sb.controller.h))
}

/// Segment sizes, per-speaker write counts, decoder steps, and the language
/// model's boundary rule.
fn call_count_case(dnet: &Network<f64>, rng: &mut ChaCha8Rng) -> bool {
    let Model::Dialogue(m, _) = &dnet.model else { unreachable!() };
    let turns: Vec<Vec<u32>> = (0..rng.gen_range(1..6)).map(|_| random_turn(rng, 11, 25)).collect();
    let resp = random_turn(rng, 11, 6);
    let ex = history_example(&turns, &resp);

    let mut expect = [0usize; 2];
    let mut segments_ok = true;
    for (i, t) in turns.iter().enumerate() {
        let segs = segment_turn(t.len(), SegmentPolicy::Quarters).expect("segments");
        let size = t.len().div_ceil(4);
        segments_ok &= segs.len() == t.len().min(4)
            && segs.first().map(|r| r.start) == Some(0)
            && segs.last().map(|r| r.end) == Some(t.len())
            && segs.windows(2).all(|p| p[0].end == p[1].start)
            && segs.iter().all(|r| !r.is_empty() && r.len() <= size);
        expect[i % 2] += segs.len();
    }
    let mut tape = Tape::with_params(&dnet.params);
    let out = m.forward_loss(&mut tape, &ex, DntmsMode::Dntms).expect("loss");
    let r = ex.response.len();
    let dialogue_ok = out.decoder.ntm_steps() == (expect[0] + r, expect[1] + r);

    let seg = rng.gen_range(1..8);
    let len = rng.gen_range(1..40);
    let mut cfg = ModelConfig::tiny(Architecture::NtmLm);
    cfg.segment_size = seg;
    let lnet = Network::<f64>::new(cfg, rng.gen()).expect("model");
    let Model::Language(lm, _) = &lnet.model else { unreachable!() };
    let ids: Vec<u32> = (0..len).map(|_| rng.gen_range(4..11)).collect();
    let lex = ntmd::corpus::LmExample {
        mask: vec![true; len],
        ids,
        dropped: 0,
        segment_size: seg,
    };
    let mut tape = Tape::with_params(&lnet.params);
    let f = lm.lm_forward(&mut tape, &lex, LmMode::NtmLm, false).expect("forward");
    segments_ok && dialogue_ok && f.ntm_calls == len / seg
}

/// Closed forms: a uniform predictor scores exactly V, and perplexity is the
/// inverse geometric mean of the predicted probabilities.
fn perplexity_case(rng: &mut ChaCha8Rng) -> bool {
    let v = rng.gen_range(5..60usize);
    let n = rng.gen_range(1..40usize);
    let uniform = perplexity(n as f64 * (v as f64).ln(), n).expect("perplexity");
    let probs: Vec<f64> = (0..n).map(|_| rng.gen_range(1e-3..1.0)).collect();
    let nll: f64 = probs.iter().map(|p| -p.ln()).sum();
    let geo = probs.iter().map(|p| p.ln()).sum::<f64>() / n as f64;
    let closed = perplexity(nll, n).expect("perplexity");

    // A language model whose parameters are all zero predicts uniformly.
    let mut cfg = ModelConfig::tiny(Architecture::Lm);
    cfg.vocab = v;
    let mut net = Network::<f64>::new(cfg.clone(), 0).expect("model");
    for id in net.params.ids().collect::<Vec<_>>() {
        net.params.get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let ids: Vec<u32> = (0..n).map(|_| rng.gen_range(4..v as u32)).collect();
    let ex = ntmd::corpus::EncodedExample::Lm(ntmd::corpus::LmExample {
        mask: vec![true; n],
        ids,
        dropped: 0,
        segment_size: cfg.segment_size,
    });
    let model_ppl = evaluate_perplexity(&net, &[ex]).expect("perplexity");
    (uniform - v as f64).abs() < 1e-9 * v as f64
        && (closed - (-geo).exp()).abs() < 1e-9 * closed
        && (model_ppl - v as f64).abs() < 1e-9 * v as f64
}

fn invariants() -> Outcome {
    let dnet = dntms_net(5);
    let families: Vec<(&str, usize)> = vec![
        ("addressing simplex", count_failures(addressing_case, 1)),
        ("read convex hull", count_failures(read_hull_case, 2)),
        ("write identity/overwrite", count_failures(write_case, 3)),
        ("pause retention", count_failures(|r| pause_case(&dnet, r), 4)),
        ("call counts", count_failures(|r| call_count_case(&dnet, r), 5)),
        ("perplexity closed forms", count_failures(perplexity_case, 6)),
    ];
    let failures: usize = families.iter().map(|f| f.1).sum();
    let detail = families
        .iter()
        .map(|(name, f)| format!("{name} {}/{CASES}", CASES - f))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome::new(failures == 0, detail)
}

// 6 ---------------------------------------------------------------------

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_ntmd"))
        .args(args)
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let corpus = p("recall.tsv");
    if !run_cli(&["synth", "recall", "--count", "400", "--seed", "6", "--out", &corpus]) {
        return Outcome::new(false, "synth failed");
    }
    let mut parts = Vec::new();
    let mut pass = true;
    for arch in ["d-ntms", "ntm-lm"] {
        let mut files = Vec::new();
        for run in 0..2 {
            let (ck, log) = (p(&format!("{arch}{run}.ck")), p(&format!("{arch}{run}.log")));
            let ok = run_cli(&[
                "train", "--arch", arch, "--preset", "desk", "--corpus", &corpus, "--lr", "0.003", "--batch", "8",
                "--seed", "13", "--max-steps", "25", "--eval-every", "10", "--clip", "5", "--checkpoint", &ck,
                "--log", &log,
            ]);
            if !ok {
                return Outcome::new(false, format!("{arch} training failed"));
            }
            files.push((std::fs::read(&log).expect("log"), std::fs::read(&ck).expect("checkpoint")));
        }
        let same = files[0] == files[1];
        let lines = String::from_utf8_lossy(&files[0].0).lines().count();
        pass &= same && lines == 28;
        parts.push(format!("{arch}: {lines} log lines, identical {same}"));
    }

    // A run paused and resumed from its checkpoint replays the same log.
    let corpus_v = gen_recall_dialogues(200, 8);
    let vocab = Vocabulary::build(&corpus_v, DEFAULT_VOCAB_CAP).expect("vocabulary");
    let mut cfg = TrainConfig::new(ModelConfig::desk(Architecture::NtmLm, vocab.len()));
    cfg.batch = 8;
    cfg.epochs = 2;
    cfg.lr = 3e-3;
    cfg.eval_every = 7;
    let data = Dataset::build(&corpus_v, &vocab, &cfg.model).expect("dataset");
    let mut whole = Vec::new();
    let mut t = Trainer::<f32>::new(cfg.clone(), vocab.clone()).expect("trainer");
    t.fit(&data, None, &mut |l| whole.push(l.to_string())).expect("fit");
    let mut resumed = Vec::new();
    let mut t = Trainer::<f32>::new(cfg, vocab).expect("trainer");
    t.fit(&data, Some(17), &mut |l| resumed.push(l.to_string())).expect("fit");
    let bytes = Checkpoint::from_trainer(&t).to_bytes();
    let mut t = Checkpoint::<f32>::from_bytes(&bytes).expect("load").into_trainer().expect("trainer");
    t.fit(&data, None, &mut |l| resumed.push(l.to_string())).expect("fit");
    let resume_ok = whole == resumed;
    parts.push(format!("resume after 17 of {} steps identical {resume_ok}", t.progress.step));
    Outcome::new(pass && resume_ok, parts.join("; "))
}

// 7 ---------------------------------------------------------------------

fn pipeline() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let words: Vec<String> = (0..40).map(|i| format!("t{i}")).collect();
    let mut cap_failures = 0;
    for _ in 0..CASES {
        let turns: Vec<Vec<String>> = (0..rng.gen_range(1..9))
            .map(|_| {
                (0..rng.gen_range(1..70))
                    .map(|_| words[rng.gen_range(0..words.len())].clone())
                    .collect()
            })
            .collect();
        let c = Conversation::new(turns.clone());
        let v = Vocabulary::build(std::slice::from_ref(&c), DEFAULT_VOCAB_CAP).expect("vocabulary");
        let hist_len: usize = turns[..turns.len() - 1].iter().map(Vec::len).sum::<usize>() + turns.len().saturating_sub(2);
        let resp_len = turns.last().map_or(0, Vec::len) + 1;
        let ok_s2s = match encode_seq2seq(&c, &v) {
            Ok(ex) => {
                ex.history.len() == hist_len.min(HISTORY_CAP)
                    && ex.history_dropped == hist_len.saturating_sub(HISTORY_CAP)
                    && ex.response.len() == resp_len.min(RESPONSE_CAP)
                    && ex.response_dropped == resp_len.saturating_sub(RESPONSE_CAP)
                    && ex.response_mask.len() == ex.response.len()
                    && ex.loss_tokens() == ex.response.len()
                    && (resp_len > RESPONSE_CAP || ex.response.last() == Some(&EOS))
            }
            Err(_) => turns.len() < 2,
        };
        let stream_len: usize = turns.iter().map(Vec::len).sum::<usize>() + turns.len();
        let ok_lm = encode_lm(&c, &v, 20).is_ok_and(|ex| {
            ex.ids.len() == stream_len.min(LM_CAP)
                && ex.dropped == stream_len.saturating_sub(LM_CAP)
                && ex.mask.len() == ex.ids.len()
                && ex.loss_tokens() == ex.ids.len()
        });
        cap_failures += usize::from(!(ok_s2s && ok_lm));
    }

    let quarters = segment_turn(20, SegmentPolicy::Quarters).expect("segments");
    let four_fives = quarters == vec![0..5, 5..10, 10..15, 15..20];
    let cfg = ModelConfig::tiny(Architecture::DNtms);
    let net = Network::<f64>::new(cfg, 1).expect("model");
    let Model::Dialogue(m, _) = &net.model else { unreachable!() };
    let ex = history_example(&[vec![5; 20], vec![6; 20]], &[7]);
    let taps = m.tap_positions(&ex).expect("taps");
    let taps_ok = taps
        == vec![
            (Speaker::A, 4),
            (Speaker::A, 9),
            (Speaker::A, 14),
            (Speaker::A, 19),
            (Speaker::B, 25),
            (Speaker::B, 30),
            (Speaker::B, 35),
            (Speaker::B, 40),
        ];

    let mut identical = 0;
    let dir = tempfile::tempdir().expect("tempdir");
    for arch in Architecture::ALL {
        let corpus = gen_recall_dialogues(40, 3);
        let vocab = Vocabulary::build(&corpus, DEFAULT_VOCAB_CAP).expect("vocabulary");
        let mut cfg = TrainConfig::new(ModelConfig::desk(arch, vocab.len()));
        cfg.batch = 4;
        cfg.max_steps = Some(3);
        let data = Dataset::build(&corpus, &vocab, &cfg.model).expect("dataset");
        let mut t = Trainer::<f32>::new(cfg, vocab).expect("trainer");
        t.fit(&data, None, &mut |_| {}).expect("fit");
        let path = dir.path().join(format!("{arch}.ck"));
        Checkpoint::from_trainer(&t).save(&path).expect("save");
        let first = std::fs::read(&path).expect("read");
        let again = Checkpoint::<f32>::load(&path).expect("load").to_bytes();
        identical += usize::from(first == again && Path::new(&path).exists());
    }
    Outcome::new(
        cap_failures == 0 && four_fives && taps_ok && identical == 4,
        format!(
            "cap cases {}/{CASES}; 20-token turn segments {quarters:?}; tap positions ok {taps_ok}; \
             byte-identical checkpoint round trips {identical}/4",
            CASES - cap_failures
        ),
    )
}
