//! Task generators and per-family answer canonicalization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab;
use super::{TaskError, TaskInstance};
use crate::seeding;

/// The four synthetic verifiable task families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskFamily {
    /// Left-nested arithmetic chain reduced modulo a small base.
    ModularArithmeticChain,
    /// Classify a bracket string as balanced or not.
    ParenthesisBalance,
    /// Emit the sorted order of a digit list.
    SequenceSortTrace,
    /// Apply a displayed letter substitution to a message.
    SubstitutionCipher,
}

pub const ALL_FAMILIES: [TaskFamily; 4] = [
    TaskFamily::ModularArithmeticChain,
    TaskFamily::ParenthesisBalance,
    TaskFamily::SequenceSortTrace,
    TaskFamily::SubstitutionCipher,
];

/// Cipher tasks use the first four letters of the alphabet.
pub const CIPHER_ALPHABET: u32 = 4;

impl TaskFamily {
    /// Documented difficulty range. The scalar means: operation count
    /// (chain), bracket pairs (balance), list length (sort), message
    /// length (cipher).
    pub fn difficulty_range(self) -> std::ops::RangeInclusive<u32> {
        match self {
            TaskFamily::ModularArithmeticChain => 1..=8,
            TaskFamily::ParenthesisBalance => 1..=12,
            TaskFamily::SequenceSortTrace => 2..=8,
            TaskFamily::SubstitutionCipher => 1..=10,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskFamily::ModularArithmeticChain => "modular-arithmetic-chain",
            TaskFamily::ParenthesisBalance => "parenthesis-balance",
            TaskFamily::SequenceSortTrace => "sequence-sort-trace",
            TaskFamily::SubstitutionCipher => "substitution-cipher",
        }
    }

    fn index(self) -> u64 {
        match self {
            TaskFamily::ModularArithmeticChain => 0,
            TaskFamily::ParenthesisBalance => 1,
            TaskFamily::SequenceSortTrace => 2,
            TaskFamily::SubstitutionCipher => 3,
        }
    }
}

/// Deterministic instance for `(family, difficulty, seed)`; the seed is the
/// instance id.
pub fn generate_task(
    family: TaskFamily,
    difficulty: u32,
    seed: u64,
) -> Result<TaskInstance, TaskError> {
    let range = family.difficulty_range();
    if !range.contains(&difficulty) {
        return Err(TaskError::DifficultyOutOfRange {
            family,
            difficulty,
            min: *range.start(),
            max: *range.end(),
        });
    }
    let mut rng = seeding::rng(seeding::derive(seed, family.index()));
    let (prompt, expected) = match family {
        TaskFamily::ModularArithmeticChain => gen_mod_chain(&mut rng, difficulty),
        TaskFamily::ParenthesisBalance => gen_balance(&mut rng, difficulty),
        TaskFamily::SequenceSortTrace => gen_sort(&mut rng, difficulty),
        TaskFamily::SubstitutionCipher => gen_cipher(&mut rng, difficulty),
    };
    Ok(TaskInstance {
        family,
        difficulty,
        id: seed,
        prompt,
        expected,
    })
}

fn gen_mod_chain(rng: &mut ChaCha8Rng, ops: u32) -> (Vec<u32>, Vec<u32>) {
    let first = rng.random_range(0..10u32);
    let chain: Vec<(u32, u32)> = (0..ops)
        .map(|_| (rng.random_range(0..3u32), rng.random_range(0..10u32)))
        .collect();
    let modulus = rng.random_range(2..10u32);

    let mut prompt = vec![vocab::LPAREN; ops as usize];
    prompt.push(vocab::digit(first));
    let mut value = i64::from(first);
    for &(op, operand) in &chain {
        let (tok, f): (u32, fn(i64, i64) -> i64) = match op {
            0 => (vocab::PLUS, |a, b| a + b),
            1 => (vocab::MINUS, |a, b| a - b),
            _ => (vocab::TIMES, |a, b| a * b),
        };
        value = f(value, i64::from(operand));
        prompt.push(tok);
        prompt.push(vocab::digit(operand));
        prompt.push(vocab::RPAREN);
    }
    prompt.push(vocab::MOD);
    prompt.push(vocab::digit(modulus));
    prompt.push(vocab::EQUALS);

    let m = i64::from(modulus);
    let answer = ((value % m) + m) % m;
    (prompt, vocab::number_tokens(answer as u64))
}

fn gen_balance(rng: &mut ChaCha8Rng, pairs: u32) -> (Vec<u32>, Vec<u32>) {
    let n = pairs as usize;
    let tokens: Vec<u32> = if rng.random::<bool>() {
        // Random valid string: forced moves at the boundaries, otherwise a
        // draw weighted by remaining opens.
        let mut out = Vec::with_capacity(2 * n);
        let (mut opens, mut closes, mut depth) = (n, n, 0usize);
        while opens + closes > 0 {
            let open = if opens == 0 {
                false
            } else if depth == 0 {
                true
            } else {
                rng.random_range(0..opens + closes) < opens
            };
            if open {
                out.push(vocab::LBRACKET);
                opens -= 1;
                depth += 1;
            } else {
                out.push(vocab::RBRACKET);
                closes -= 1;
                depth -= 1;
            }
        }
        out
    } else {
        // Uniform shuffle of n opens and n closes; usually unbalanced.
        let mut all: Vec<u32> = std::iter::repeat_n(vocab::LBRACKET, n)
            .chain(std::iter::repeat_n(vocab::RBRACKET, n))
            .collect();
        for i in (1..all.len()).rev() {
            let j = rng.random_range(0..=i);
            all.swap(i, j);
        }
        all
    };

    let mut depth = 0i64;
    let mut balanced = true;
    for &t in &tokens {
        depth += if t == vocab::LBRACKET { 1 } else { -1 };
        if depth < 0 {
            balanced = false;
        }
    }
    balanced &= depth == 0;

    let mut prompt = tokens;
    prompt.push(vocab::EQUALS);
    let answer = vec![if balanced { vocab::YES } else { vocab::NO }];
    (prompt, answer)
}

fn gen_sort(rng: &mut ChaCha8Rng, len: u32) -> (Vec<u32>, Vec<u32>) {
    let values: Vec<u32> = (0..len).map(|_| rng.random_range(0..10u32)).collect();
    let mut prompt = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        if i > 0 {
            prompt.push(vocab::COMMA);
        }
        prompt.push(vocab::digit(v));
    }
    prompt.push(vocab::EQUALS);

    let mut sorted = values;
    sorted.sort_unstable();
    let mut answer = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        if i > 0 {
            answer.push(vocab::COMMA);
        }
        answer.push(vocab::digit(v));
    }
    (prompt, answer)
}

fn gen_cipher(rng: &mut ChaCha8Rng, len: u32) -> (Vec<u32>, Vec<u32>) {
    // Random permutation over the 4-letter alphabet, displayed in full.
    let mut key: Vec<u32> = (0..CIPHER_ALPHABET).collect();
    for i in (1..key.len()).rev() {
        let j = rng.random_range(0..=i);
        key.swap(i, j);
    }
    let mut prompt = Vec::new();
    for (from, &to) in key.iter().enumerate() {
        prompt.push(vocab::letter(from as u32));
        prompt.push(vocab::MAPS_TO);
        prompt.push(vocab::letter(to));
        prompt.push(vocab::SEMICOLON);
    }
    let message: Vec<u32> = (0..len)
        .map(|_| rng.random_range(0..CIPHER_ALPHABET))
        .collect();
    for &m in &message {
        prompt.push(vocab::letter(m));
    }
    prompt.push(vocab::EQUALS);

    let answer = message.iter().map(|&m| vocab::letter(key[m as usize])).collect();
    (prompt, answer)
}

/// Canonical form of an answer payload for comparison, or `None` when the
/// payload is not a well-formed answer for the family.
pub fn canonicalize(family: TaskFamily, payload: &[u32]) -> Option<Vec<u32>> {
    match family {
        TaskFamily::ModularArithmeticChain => {
            if payload.is_empty() {
                return None;
            }
            let mut value: u64 = 0;
            for &t in payload {
                let d = vocab::digit_value(t)?;
                value = value.checked_mul(10)?.checked_add(u64::from(d))?;
            }
            Some(vocab::number_tokens(value))
        }
        TaskFamily::ParenthesisBalance => match payload {
            [t] if *t == vocab::YES || *t == vocab::NO => Some(vec![*t]),
            _ => None,
        },
        TaskFamily::SequenceSortTrace => {
            let digits: Vec<u32> = payload
                .iter()
                .filter(|&&t| t != vocab::COMMA)
                .map(|&t| vocab::digit_value(t).map(vocab::digit))
                .collect::<Option<_>>()?;
            (!digits.is_empty()).then_some(digits)
        }
        TaskFamily::SubstitutionCipher => {
            let letters: Vec<u32> = payload
                .iter()
                .map(|&t| vocab::letter_value(t).map(vocab::letter))
                .collect::<Option<_>>()?;
            (!letters.is_empty()).then_some(letters)
        }
    }
}
