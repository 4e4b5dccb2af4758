//! Synthetic verifiable task families with difficulty parameters,
//! rule-based verification, and pass-rate-based dataset filtering.

mod families;
pub mod vocab;

pub use families::{canonicalize, generate_task, TaskFamily, ALL_FAMILIES, CIPHER_ALPHABET};

use serde::{Deserialize, Serialize};

use crate::policy::PolicyParams;
use crate::rollout::{sample_one, RolloutError, SamplingConfig};
use crate::seeding;

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("difficulty {difficulty} out of range {min}..={max} for {family:?}")]
    DifficultyOutOfRange {
        family: TaskFamily,
        difficulty: u32,
        min: u32,
        max: u32,
    },
    #[error("invalid pass-rate band [{lower}, {upper}]")]
    InvalidBand { lower: f64, upper: f64 },
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error("dataset io error: {0}")]
    DatasetIo(String),
    #[error("dataset schema version {found} unsupported (expected {expected})")]
    DatasetVersion { found: u32, expected: u32 },
}

/// One generated task. `id` is the generation seed, so the instance is
/// regenerable from `(family, difficulty, id)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub family: TaskFamily,
    pub difficulty: u32,
    pub id: u64,
    pub prompt: Vec<u32>,
    /// Answer payload tokens (without delimiters).
    pub expected: Vec<u32>,
}

impl TaskInstance {
    /// The shortest fully-correct response: delimited answer plus the end
    /// token.
    pub fn reference_response(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.expected.len() + 3);
        out.push(vocab::ANS_OPEN);
        out.extend_from_slice(&self.expected);
        out.push(vocab::ANS_CLOSE);
        out.push(vocab::EOS);
        out
    }

    pub fn minimal_solution_len(&self) -> usize {
        self.expected.len() + 3
    }
}

/// Outcome of rule-based verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyResult {
    pub correct: bool,
    /// Whether the response carries a parseable delimited answer region.
    pub format_ok: bool,
}

/// Extract the payload between the first answer-open delimiter and the
/// first answer-close delimiter after it.
fn extract_answer(response: &[u32]) -> Option<&[u32]> {
    let open = response.iter().position(|&t| t == vocab::ANS_OPEN)?;
    let rest = &response[open + 1..];
    let close = rest.iter().position(|&t| t == vocab::ANS_CLOSE)?;
    Some(&rest[..close])
}

/// Pure rule-based verification: find the delimited answer region,
/// canonicalize, compare with the expected answer. A response without a
/// well-formed region is never correct.
pub fn verify(task: &TaskInstance, response: &[u32]) -> VerifyResult {
    let Some(payload) = extract_answer(response) else {
        return VerifyResult {
            correct: false,
            format_ok: false,
        };
    };
    let expected = canonicalize(task.family, &task.expected)
        .expect("expected answer always canonicalizes");
    let correct = canonicalize(task.family, payload).is_some_and(|c| c == expected);
    VerifyResult {
        correct,
        format_ok: true,
    }
}

/// Anything that can produce a response for a task. The training policy is
/// the primary implementation; tests substitute constructed oracles.
pub trait ResponseSampler {
    fn sample_response(&self, task: &TaskInstance, seed: u64) -> Result<Vec<u32>, RolloutError>;
}

/// Samples from a frozen policy snapshot.
pub struct PolicySampler<'p> {
    pub params: &'p PolicyParams,
    pub sampling: SamplingConfig,
}

impl ResponseSampler for PolicySampler<'_> {
    fn sample_response(&self, task: &TaskInstance, seed: u64) -> Result<Vec<u32>, RolloutError> {
        Ok(sample_one(self.params, &task.prompt, &self.sampling, seed)?.tokens)
    }
}

/// Fraction of `k` independent attempts judged correct. Deterministic given
/// the seed; attempt `i` uses the derived seed `derive(seed, i)`.
pub fn estimate_pass_rate_with<S: ResponseSampler>(
    sampler: &S,
    task: &TaskInstance,
    k: usize,
    seed: u64,
) -> Result<f64, TaskError> {
    assert!(k >= 1, "pass rate needs at least one attempt");
    let mut correct = 0usize;
    for attempt in 0..k {
        let response = sampler.sample_response(task, seeding::derive(seed, attempt as u64))?;
        if verify(task, &response).correct {
            correct += 1;
        }
    }
    Ok(correct as f64 / k as f64)
}

/// [`estimate_pass_rate_with`] for a policy snapshot.
pub fn estimate_pass_rate(
    params: &PolicyParams,
    task: &TaskInstance,
    k: usize,
    sampling: &SamplingConfig,
    seed: u64,
) -> Result<f64, TaskError> {
    let sampler = PolicySampler {
        params,
        sampling: sampling.clone(),
    };
    estimate_pass_rate_with(&sampler, task, k, seed)
}

/// Retain tasks whose pass rate lies strictly inside `(lower, upper)`.
pub fn filter_dataset_with<S: ResponseSampler>(
    sampler: &S,
    tasks: &[TaskInstance],
    k: usize,
    lower: f64,
    upper: f64,
    seed: u64,
) -> Result<Vec<TaskInstance>, TaskError> {
    if !(0.0..1.0).contains(&lower) || upper > 1.0 || lower >= upper {
        return Err(TaskError::InvalidBand { lower, upper });
    }
    let mut retained = Vec::new();
    for (i, task) in tasks.iter().enumerate() {
        let rate = estimate_pass_rate_with(sampler, task, k, seeding::derive(seed, i as u64))?;
        if rate > lower && rate < upper {
            retained.push(task.clone());
        }
    }
    Ok(retained)
}

/// [`filter_dataset_with`] for a policy snapshot.
pub fn filter_dataset(
    params: &PolicyParams,
    tasks: &[TaskInstance],
    k: usize,
    sampling: &SamplingConfig,
    lower: f64,
    upper: f64,
    seed: u64,
) -> Result<Vec<TaskInstance>, TaskError> {
    let sampler = PolicySampler {
        params,
        sampling: sampling.clone(),
    };
    filter_dataset_with(&sampler, tasks, k, lower, upper, seed)
}

/// Result of difficulty-bound calibration: either a usable band or an
/// explicit empty range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DifficultyBounds {
    Range { lower: u32, upper: u32 },
    Empty,
}

/// Tasks probed per difficulty level during calibration.
const CALIBRATION_TASKS_PER_LEVEL: usize = 8;

/// Search the family's difficulty grid for a workable band:
/// the lower bound is the least difficulty where the base sampler's pass
/// rate falls in (0, 0.5], the upper bound the greatest difficulty where
/// the strong sampler still passes at least once in `k` attempts.
pub fn calibrate_difficulty_bounds<B: ResponseSampler, S: ResponseSampler>(
    family: TaskFamily,
    base: &B,
    strong: &S,
    k: usize,
    seed: u64,
) -> Result<DifficultyBounds, TaskError> {
    let mut lower = None;
    let mut upper = None;
    for difficulty in family.difficulty_range() {
        let mut base_rate = 0.0;
        let mut strong_any = false;
        for t in 0..CALIBRATION_TASKS_PER_LEVEL {
            let task_seed = seeding::derive(seed, u64::from(difficulty) * 1000 + t as u64);
            let task = generate_task(family, difficulty, task_seed)?;
            base_rate +=
                estimate_pass_rate_with(base, &task, k, seeding::derive(task_seed, 1))?;
            strong_any |=
                estimate_pass_rate_with(strong, &task, k, seeding::derive(task_seed, 2))? > 0.0;
        }
        base_rate /= CALIBRATION_TASKS_PER_LEVEL as f64;
        if lower.is_none() && base_rate > 0.0 && base_rate <= 0.5 {
            lower = Some(difficulty);
        }
        if strong_any {
            upper = Some(difficulty);
        }
    }
    Ok(match (lower, upper) {
        (Some(lo), Some(hi)) if lo <= hi => DifficultyBounds::Range {
            lower: lo,
            upper: hi,
        },
        _ => DifficultyBounds::Empty,
    })
}

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    schema_version: u32,
}

/// JSON-lines dataset: a version header line followed by one task per line.
pub fn dataset_to_string(tasks: &[TaskInstance]) -> String {
    let mut out = serde_json::to_string(&DatasetHeader {
        schema_version: DATASET_SCHEMA_VERSION,
    })
    .expect("header serializes");
    out.push('\n');
    for t in tasks {
        out.push_str(&serde_json::to_string(t).expect("task serializes"));
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: &std::path::Path, tasks: &[TaskInstance]) -> Result<(), TaskError> {
    std::fs::write(path, dataset_to_string(tasks)).map_err(|e| TaskError::DatasetIo(e.to_string()))
}

pub fn read_dataset(path: &std::path::Path) -> Result<Vec<TaskInstance>, TaskError> {
    let text = std::fs::read_to_string(path).map_err(|e| TaskError::DatasetIo(e.to_string()))?;
    let mut lines = text.lines();
    let header: DatasetHeader = match lines.next() {
        Some(line) => {
            serde_json::from_str(line).map_err(|e| TaskError::DatasetIo(e.to_string()))?
        }
        None => return Err(TaskError::DatasetIo("empty dataset file".into())),
    };
    if header.schema_version != DATASET_SCHEMA_VERSION {
        return Err(TaskError::DatasetVersion {
            found: header.schema_version,
            expected: DATASET_SCHEMA_VERSION,
        });
    }
    lines
        .map(|line| serde_json::from_str(line).map_err(|e| TaskError::DatasetIo(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{FixedAnswerSampler, OracleSampler, RandomAnswerSampler};

    #[test]
    fn reference_response_verifies() {
        let task = generate_task(TaskFamily::ModularArithmeticChain, 2, 5).unwrap();
        let result = verify(&task, &task.reference_response());
        assert!(result.correct && result.format_ok);
    }

    #[test]
    fn missing_delimiters_fail_format() {
        let task = generate_task(TaskFamily::ParenthesisBalance, 3, 5).unwrap();
        let result = verify(&task, &task.expected);
        assert!(!result.correct && !result.format_ok);
    }

    #[test]
    fn wrong_answer_correct_format() {
        let task = generate_task(TaskFamily::ParenthesisBalance, 3, 6).unwrap();
        let wrong = if task.expected[0] == vocab::YES {
            vocab::NO
        } else {
            vocab::YES
        };
        let response = vec![vocab::ANS_OPEN, wrong, vocab::ANS_CLOSE, vocab::EOS];
        let result = verify(&task, &response);
        assert!(!result.correct && result.format_ok);
    }

    #[test]
    fn verifier_self_consistency_over_many_instances() {
        // Self-consistency plus regenerability for every family.
        for family in ALL_FAMILIES {
            let range = family.difficulty_range();
            for seed in 0..1000u64 {
                let d = range.start() + (seed as u32 % (range.end() - range.start() + 1));
                let task = generate_task(family, d, seed).unwrap();
                let v = verify(&task, &task.reference_response());
                assert!(v.correct && v.format_ok, "{family:?} d={d} seed={seed}");
                let again = generate_task(task.family, task.difficulty, task.id).unwrap();
                assert_eq!(task, again);
            }
        }
    }

    #[test]
    fn oracle_sampler_passes_fixed_wrong_fails() {
        let task = generate_task(TaskFamily::SequenceSortTrace, 3, 1).unwrap();
        let oracle = OracleSampler;
        assert_eq!(estimate_pass_rate_with(&oracle, &task, 10, 0).unwrap(), 1.0);
        let wrong = FixedAnswerSampler {
            response: vec![vocab::digit(9), vocab::EOS],
        };
        assert_eq!(estimate_pass_rate_with(&wrong, &task, 10, 0).unwrap(), 0.0);
    }

    #[test]
    fn pass_rate_is_deterministic_given_seed() {
        let task = generate_task(TaskFamily::ParenthesisBalance, 2, 3).unwrap();
        let sampler = RandomAnswerSampler;
        let a = estimate_pass_rate_with(&sampler, &task, 10, 42).unwrap();
        let b = estimate_pass_rate_with(&sampler, &task, 10, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pass_rates_are_binomially_consistent() {
        // Balance answers are a coin flip (p = 1/2), cipher difficulty-1
        // answers a uniform letter (p = 1/4). Over 200 tasks the fraction
        // with at least one success in k attempts must sit within three
        // standard errors of 1 - (1-p)^k, and the grand mean rate within
        // three standard errors of p.
        let cases = [
            (TaskFamily::ParenthesisBalance, 2u32, 0.5f64, 5usize),
            (TaskFamily::SubstitutionCipher, 1, 0.25, 10),
        ];
        let sampler = RandomAnswerSampler;
        for (family, difficulty, p, k) in cases {
            let n_tasks = 200;
            let mut any_success = 0usize;
            let mut rate_sum = 0.0;
            for i in 0..n_tasks {
                let task = generate_task(family, difficulty, 10_000 + i as u64).unwrap();
                let rate =
                    estimate_pass_rate_with(&sampler, &task, k, seeding::derive(77, i as u64))
                        .unwrap();
                rate_sum += rate;
                if rate > 0.0 {
                    any_success += 1;
                }
            }
            let q = 1.0 - (1.0 - p).powi(k as i32);
            let se_q = (q * (1.0 - q) / n_tasks as f64).sqrt();
            let observed_q = any_success as f64 / n_tasks as f64;
            assert!(
                (observed_q - q).abs() <= 3.0 * se_q,
                "{family:?}: pass@k {observed_q} vs {q} (3se {})",
                3.0 * se_q
            );
            let se_p = (p * (1.0 - p) / (n_tasks * k) as f64).sqrt();
            let observed_p = rate_sum / n_tasks as f64;
            assert!(
                (observed_p - p).abs() <= 3.0 * se_p,
                "{family:?}: rate {observed_p} vs {p} (3se {})",
                3.0 * se_p
            );
        }
    }

    #[test]
    fn filter_band_is_strict_at_both_ends() {
        // Constructed rates {0.0, 0.5, 0.95, 1.0}; exactly round(p*k) of
        // the k attempts succeed, so the empirical rate equals p. Only the
        // 0.5 task survives the (0, 0.9) band.
        struct RateSampler(f64, std::cell::Cell<usize>);
        impl RateSampler {
            fn at(p: f64) -> Self {
                Self(p, std::cell::Cell::new(0))
            }
        }
        impl ResponseSampler for RateSampler {
            fn sample_response(
                &self,
                task: &TaskInstance,
                _seed: u64,
            ) -> Result<Vec<u32>, RolloutError> {
                let i = self.1.get();
                self.1.set(i + 1);
                // Succeed on the first round(p*20) of every 20 attempts.
                if ((i % 20) as f64) < self.0 * 20.0 {
                    Ok(task.reference_response())
                } else {
                    Ok(vec![vocab::EOS])
                }
            }
        }
        let tasks: Vec<TaskInstance> = (0..1)
            .map(|i| generate_task(TaskFamily::SequenceSortTrace, 4, i).unwrap())
            .collect();
        for (p, keep) in [(0.0, false), (0.5, true), (0.95, false), (1.0, false)] {
            // k = 20 keeps empirical rates close to p so 0.95 lands above
            // the 0.9 cut.
            let retained =
                filter_dataset_with(&RateSampler::at(p), &tasks, 20, 0.0, 0.9, 5).unwrap();
            assert_eq!(!retained.is_empty(), keep, "p = {p}");
        }
        // Full (0,1) band keeps the mid task; empty input stays empty.
        let retained = filter_dataset_with(&RateSampler::at(0.5), &tasks, 20, 0.0, 1.0, 5).unwrap();
        assert_eq!(retained.len(), 1);
        let none: Vec<TaskInstance> = Vec::new();
        assert!(filter_dataset_with(&RateSampler::at(0.5), &none, 5, 0.0, 0.9, 5)
            .unwrap()
            .is_empty());
        assert!(matches!(
            filter_dataset_with(&RateSampler::at(0.5), &tasks, 5, 0.9, 0.2, 5),
            Err(TaskError::InvalidBand { .. })
        ));
    }

    #[test]
    fn calibration_oracle_vs_random() {
        let family = TaskFamily::SubstitutionCipher;
        let bounds =
            calibrate_difficulty_bounds(family, &RandomAnswerSampler, &OracleSampler, 10, 3)
                .unwrap();
        match bounds {
            DifficultyBounds::Range { lower, upper } => {
                // Oracle solves everything: upper is the family max. Random
                // guessing on one letter succeeds 1/4 of the time, inside
                // (0, 0.5], so the lower bound is the easiest level.
                assert_eq!(upper, *family.difficulty_range().end());
                assert_eq!(lower, 1);
            }
            DifficultyBounds::Empty => panic!("expected a range"),
        }
    }

    #[test]
    fn calibration_with_oracle_base_is_empty() {
        let bounds = calibrate_difficulty_bounds(
            TaskFamily::SequenceSortTrace,
            &OracleSampler,
            &OracleSampler,
            5,
            3,
        )
        .unwrap();
        assert_eq!(bounds, DifficultyBounds::Empty);
    }

    #[test]
    fn calibration_is_deterministic() {
        let a = calibrate_difficulty_bounds(
            TaskFamily::ParenthesisBalance,
            &RandomAnswerSampler,
            &OracleSampler,
            5,
            11,
        )
        .unwrap();
        let b = calibrate_difficulty_bounds(
            TaskFamily::ParenthesisBalance,
            &RandomAnswerSampler,
            &OracleSampler,
            5,
            11,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dataset_roundtrip_and_version_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.jsonl");
        let tasks: Vec<TaskInstance> = (0..5)
            .map(|i| generate_task(TaskFamily::ModularArithmeticChain, 2, i).unwrap())
            .collect();
        write_dataset(&path, &tasks).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(tasks, back);

        std::fs::write(&path, "{\"schema_version\":99}\n").unwrap();
        assert!(matches!(
            read_dataset(&path),
            Err(TaskError::DatasetVersion { found: 99, .. })
        ));
    }
}
