//! Synthetic data: the bit-sequence copy task and a templated recall-dialogue
//! corpus whose final turn repeats a fact stated near the start.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Conversation;

/// One copy-task sequence. Inputs have `width + 1` channels, the extra one
/// carrying the delimiter flag; targets have `width` channels.
#[derive(Clone, Debug, PartialEq)]
pub struct CopyTask {
    pub width: usize,
    /// `2 * len + 1` steps: the data, the delimiter, then blanks.
    pub inputs: Vec<Vec<f64>>,
    /// `len` steps, aligned with the blank input steps.
    pub targets: Vec<Vec<f64>>,
}

impl CopyTask {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Index of the first input step whose output is scored.
    pub fn output_offset(&self) -> usize {
        self.targets.len() + 1
    }
}

pub fn gen_copy_task(len: usize, width: usize, seed: u64) -> CopyTask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    copy_task_from(&mut rng, len, width)
}

pub fn copy_task_from<R: Rng>(rng: &mut R, len: usize, width: usize) -> CopyTask {
    let targets: Vec<Vec<f64>> = (0..len)
        .map(|_| (0..width).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut inputs = Vec::with_capacity(2 * len + 1);
    for t in &targets {
        let mut v = t.clone();
        v.push(0.0);
        inputs.push(v);
    }
    let mut delim = vec![0.0; width + 1];
    delim[width] = 1.0;
    inputs.push(delim);
    inputs.extend(std::iter::repeat_n(vec![0.0; width + 1], len));
    CopyTask {
        width,
        inputs,
        targets,
    }
}

pub const NAMES: [&str; 10] = [
    "alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi", "ivan", "judy",
];
pub const PROFESSIONS: [&str; 10] = [
    "doctor", "teacher", "pilot", "chef", "lawyer", "nurse", "farmer", "baker", "singer", "painter",
];

const FILLER_A: [&str; 8] = [
    "how is the weather today ?",
    "do you like music ?",
    "did you see the game last night ?",
    "what did you eat for lunch ?",
    "are you busy this week ?",
    "do you have any plans for the weekend ?",
    "have you read a good book lately ?",
    "is it cold where you live ?",
];
const FILLER_B: [&str; 8] = [
    "it is sunny and warm .",
    "yes i like jazz a lot .",
    "no i was too tired .",
    "just some soup and bread .",
    "a little , work is busy .",
    "maybe a walk in the park .",
    "not really , no time .",
    "it is cold and rainy here .",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactKind {
    Name,
    Profession,
}

/// The fact a recall dialogue is built around.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecallFact {
    pub kind: FactKind,
    pub value: &'static str,
}

fn statement(fact: &RecallFact) -> String {
    match fact.kind {
        FactKind::Name => format!("my name is {} .", fact.value),
        FactKind::Profession => format!("i am a {} .", fact.value),
    }
}

/// Builds one dialogue: a question and the fact-stating answer, an even
/// number of filler turns, then a follow-up question whose answer restates
/// the fact. The fact holder always speaks second.
pub fn recall_dialogue<R: Rng>(rng: &mut R) -> (Conversation, RecallFact) {
    let fact = if rng.gen::<bool>() {
        RecallFact {
            kind: FactKind::Name,
            value: NAMES[rng.gen_range(0..NAMES.len())],
        }
    } else {
        RecallFact {
            kind: FactKind::Profession,
            value: PROFESSIONS[rng.gen_range(0..PROFESSIONS.len())],
        }
    };
    let (ask, ask_again) = match fact.kind {
        FactKind::Name => ("hi , what is your name ?", "sorry , what was your name again ?"),
        FactKind::Profession => ("hi , what do you do for work ?", "sorry , what was your job again ?"),
    };
    let mut turns: Vec<String> = vec![ask.into(), statement(&fact)];
    let pairs = rng.gen_range(1..=3);
    for _ in 0..pairs {
        turns.push(FILLER_A.choose(rng).expect("nonempty").to_string());
        turns.push(FILLER_B.choose(rng).expect("nonempty").to_string());
    }
    turns.push(ask_again.into());
    turns.push(statement(&fact));
    let refs: Vec<&str> = turns.iter().map(String::as_str).collect();
    (Conversation::from_text(&refs), fact)
}

pub fn gen_recall_dialogues(n: usize, seed: u64) -> Vec<Conversation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| recall_dialogue(&mut rng).0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Vocabulary, DEFAULT_VOCAB_CAP};
    use std::collections::HashMap;

    #[test]
    fn single_step_copy() {
        let t = gen_copy_task(1, 4, 3);
        assert_eq!(t.inputs.len(), 3);
        assert_eq!(t.inputs[0][..4], t.targets[0][..]);
        assert_eq!(t.inputs[1], vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(t.inputs[2], vec![0.0; 5]);
        assert_eq!(t.output_offset(), 2);
    }

    #[test]
    fn copy_task_is_seeded() {
        assert_eq!(gen_copy_task(7, 6, 11), gen_copy_task(7, 6, 11));
        assert_ne!(gen_copy_task(7, 6, 11), gen_copy_task(7, 6, 12));
    }

    #[test]
    fn copy_bits_are_fair() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut ones, mut n) = (0.0, 0usize);
        for _ in 0..10_000 {
            let t = copy_task_from(&mut rng, 1, 1);
            ones += t.targets[0][0];
            n += 1;
        }
        assert!((ones / n as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn recall_corpus_shape() {
        let corpus = gen_recall_dialogues(2000, 1);
        let v = Vocabulary::build(&corpus, DEFAULT_VOCAB_CAP).unwrap();
        assert!(v.len() <= 100, "vocabulary has {} entries", v.len());
        for c in &corpus {
            assert!(c.turns.len() >= 6 && c.turns.len() % 2 == 0);
            let last = c.turns.last().unwrap();
            let fact = &last[last.len() - 2];
            assert!(c.turns[..c.turns.len() - 1].iter().flatten().any(|t| t == fact));
        }
        assert_eq!(gen_recall_dialogues(50, 9), gen_recall_dialogues(50, 9));
    }

    #[test]
    fn recall_facts_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut counts: HashMap<(bool, &str), usize> = HashMap::new();
        let n = 10_000;
        for _ in 0..n {
            let (_, f) = recall_dialogue(&mut rng);
            *counts.entry((f.kind == FactKind::Name, f.value)).or_default() += 1;
        }
        // 20 equiprobable categories, 19 degrees of freedom; 43.82 is the
        // 0.999 quantile.
        let expected = n as f64 / 20.0;
        let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert_eq!(counts.len(), 20);
        assert!(chi2 < 43.82, "chi2 = {chi2}");
    }
}
