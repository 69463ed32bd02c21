use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ntmd::copy_task::{train_copy, CopyConfig};
use ntmd::corpus::{Conversation, Vocabulary, DEFAULT_VOCAB_CAP, EOS, PAD, SEP};
use ntmd::model::{Architecture, Model, ModelConfig, Network};
use ntmd::ntmlm::LmMode;
use ntmd::synth::gen_recall_dialogues;
use ntmd::train::{evaluate_perplexity, Dataset, TrainConfig, Trainer};
use ntmd::Tape;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn copy_loss_halves_within_two_thousand_steps() {
    let cfg = CopyConfig {
        batch: 16,
        ..CopyConfig::ntm()
    };
    let steps = 2000;
    let out = train_copy(&cfg, 1, steps * cfg.batch, None, false, 0).unwrap();
    assert_eq!(out.train_losses.len(), steps);
    let first = mean(&out.train_losses[..50]);
    let last = mean(&out.train_losses[steps - 50..]);
    assert!(last <= 0.5 * first, "first {first:.4}, last {last:.4}");
}

#[test]
fn sampled_next_tokens_follow_the_model_distribution() {
    let prompt = Conversation::from_text(&["a b c", "d e"]);
    let vocab = Vocabulary::build(std::slice::from_ref(&prompt), 100).unwrap();
    let mut cfg = ModelConfig::tiny(Architecture::NtmLm);
    cfg.vocab = vocab.len();
    let net = Network::<f64>::new(cfg, 4).unwrap();
    let Model::Language(lm, _) = &net.model else { unreachable!() };

    let prefix: Vec<u32> = prompt
        .turns
        .iter()
        .flat_map(|t| vocab.encode(t).into_iter().chain([SEP]))
        .collect();
    let mut tape = Tape::with_params(&net.params);
    let dist = lm.next_token_distribution(&mut tape, &prefix, LmMode::NtmLm).unwrap();
    let p = tape.value(dist).to_vec();
    let keep = 1.0 - p[PAD as usize];
    // Terminators end the response before anything is emitted.
    let stop = (p[EOS as usize] + p[SEP as usize]) / keep;

    let n = 10_000;
    let mut counts = vec![0usize; vocab.len()];
    let mut stops = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..n {
        match net.model.generate(&net.params, &vocab, &prompt, 1, &mut rng).unwrap()[..] {
            [] => stops += 1,
            [y] => counts[y as usize] += 1,
            _ => unreachable!("max_len is 1"),
        }
    }
    assert_eq!(counts[PAD as usize], 0);
    let within = |observed: usize, q: f64| {
        let sd = (n as f64 * q * (1.0 - q)).sqrt();
        (observed as f64 - n as f64 * q).abs() <= 3.0 * sd.max(1e-9)
    };
    assert!(within(stops, stop), "stops {stops} vs {}", n as f64 * stop);
    for id in 0..vocab.len() {
        if [PAD, EOS, SEP].contains(&(id as u32)) {
            continue;
        }
        let q = p[id] / keep;
        assert!(within(counts[id], q), "token {id}: {} vs {}", counts[id], n as f64 * q);
    }
}

#[test]
fn training_lowers_held_out_perplexity() {
    let corpus = gen_recall_dialogues(600, 3);
    let vocab = Vocabulary::build(&corpus, DEFAULT_VOCAB_CAP).unwrap();
    for arch in Architecture::ALL {
        let mut cfg = TrainConfig::new(ModelConfig::desk(arch, vocab.len()));
        cfg.lr = 3e-3;
        cfg.batch = 16;
        cfg.max_steps = Some(30);
        let data = Dataset::build(&corpus, &vocab, &cfg.model).unwrap();
        let mut t = Trainer::<f32>::new(cfg, vocab.clone()).unwrap();
        let before = evaluate_perplexity(&t.net, &data.val).unwrap();
        t.fit(&data, None, &mut |_| {}).unwrap();
        let after = evaluate_perplexity(&t.net, &data.val).unwrap();
        assert!(after < before, "{arch}: {before} -> {after}");
    }
}

#[test]
fn default_batch_gives_ceil_n_over_32_steps_per_epoch() {
    let corpus = gen_recall_dialogues(150, 4);
    let vocab = Vocabulary::build(&corpus, DEFAULT_VOCAB_CAP).unwrap();
    let mut model = ModelConfig::desk(Architecture::Lm, vocab.len());
    model.hidden = 8;
    model.embedding = 4;
    let cfg = TrainConfig::new(model);
    assert_eq!((cfg.batch, cfg.epochs, cfg.lr), (32, 1, 1e-4));
    let data = Dataset::build(&corpus, &vocab, &cfg.model).unwrap();
    let mut t = Trainer::<f32>::new(cfg, vocab).unwrap();
    let mut train_lines = 0u64;
    t.fit(&data, None, &mut |l| train_lines += u64::from(l.split == ntmd::train::Split::Train)).unwrap();
    let expect = data.train.len().div_ceil(32) as u64;
    assert_eq!(t.progress.step, expect);
    assert_eq!(train_lines, expect);
}
