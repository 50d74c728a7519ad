//! Evaluation driver: one record per (question, condition), with an
//! append-only JSONL journal for resumability.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::endpoint::{Endpoint, ModelConfig};
use crate::eval::prompt::{build_prompt, parse_response};
use crate::pipeline::DegradationLevel;
use crate::qa::{Family, QaPair};

/// One cell of the evaluation grid: a ladder rung plus which variant feeds
/// the model and whether the variant went through enhancement preprocessing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Condition {
    pub level: DegradationLevel,
    pub noise: bool,
    /// Marks runs whose image root holds externally enhanced images; the
    /// harness itself never invokes enhancement.
    pub llie: bool,
}

impl Condition {
    pub const BASELINE: Condition = Condition {
        level: DegradationLevel::L0,
        noise: false,
        llie: false,
    };

    /// File name of the variant this condition reads.
    pub fn variant_file(&self) -> &'static str {
        if self.noise {
            "noise.png"
        } else {
            "ev.png"
        }
    }

    pub fn image_path(&self, root: &Path, scene: &str, frame: &str) -> PathBuf {
        root.join(scene)
            .join(frame)
            .join(self.level.to_string())
            .join(self.variant_file())
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.level)?;
        if self.noise {
            write!(f, "+noise")?;
        }
        if self.llie {
            write!(f, "+llie")?;
        }
        Ok(())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split('+');
        let level: DegradationLevel = parts
            .next()
            .ok_or_else(|| Error::Config("empty condition".into()))?
            .parse()?;
        let mut condition = Condition {
            level,
            noise: false,
            llie: false,
        };
        for flag in parts {
            match flag.trim() {
                "noise" => condition.noise = true,
                "llie" => condition.llie = true,
                other => return Err(Error::Config(format!("unknown condition flag {other:?}"))),
            }
        }
        Ok(condition)
    }
}

/// Parses a condition spec: comma-separated entries, each a single condition
/// (`L3+noise`) or a level range with shared flags (`L1..L5+noise+llie`).
pub fn parse_conditions(spec: &str) -> Result<Vec<Condition>> {
    let mut out = Vec::new();
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        if let Some(range_end) = part.find("..") {
            let lo: DegradationLevel = part[..range_end].parse()?;
            let rest = &part[range_end + 2..];
            let (hi_str, flags) = match rest.find('+') {
                Some(i) => (&rest[..i], &rest[i..]),
                None => (rest, ""),
            };
            let hi: DegradationLevel = hi_str.parse()?;
            if lo > hi {
                return Err(Error::Config(format!("inverted level range {part:?}")));
            }
            for level in DegradationLevel::ALL {
                if level >= lo && level <= hi {
                    out.push(format!("{level}{flags}").parse()?);
                }
            }
        } else {
            out.push(part.parse()?);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("condition spec selects nothing".into()));
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// How a response was resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    /// Parsed onto a choice.
    Ok,
    /// Response did not map onto a unique choice; scored incorrect.
    Unparseable,
    /// Transport failed after retries; scored incorrect.
    Failed,
}

/// One (question, condition, model) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub scene: String,
    pub frame: String,
    pub family: Family,
    pub question: String,
    pub condition: String,
    pub model: String,
    pub raw_response: String,
    pub parsed: Option<String>,
    pub correct: bool,
    pub status: RecordStatus,
    pub num_choices: usize,
    pub latency_ms: u64,
}

impl EvalRecord {
    /// Resume key: one record per (question, condition, model).
    pub fn key(&self) -> (String, String, String, String) {
        (
            self.scene.clone(),
            self.frame.clone(),
            format!("{}", self.family),
            self.condition.clone(),
        )
    }
}

pub fn load_journal(path: &Path) -> Result<Vec<EvalRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: EvalRecord = serde_json::from_str(line).map_err(|e| {
            Error::Structural(format!("journal {}:{}: {e}", path.display(), lineno + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Options of one evaluation run.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub jobs: usize,
    /// Overrides the model config's blind flag when set.
    pub blind: Option<bool>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            jobs: 1,
            blind: None,
        }
    }
}

/// Runs the model over every (question, condition) cell.
///
/// Already-journaled keys are skipped, so interrupting and rerunning yields
/// the same final record set. New records append to the journal as they
/// complete. Transport failures mark the record failed and the run continues;
/// a missing image for a vision endpoint is a structural error caught before
/// any request is issued.
pub fn run_eval(
    model_cfg: &ModelConfig,
    qa_set: &[QaPair],
    image_root: &Path,
    conditions: &[Condition],
    journal_path: &Path,
    opts: &EvalOptions,
) -> Result<Vec<EvalRecord>> {
    let mut config = model_cfg.clone();
    if let Some(blind) = opts.blind {
        config.blind = blind;
    }
    let endpoint = Endpoint::new(config)?;
    let blind = endpoint.config().blind;
    let model_id = endpoint.config().id.clone();

    let existing = load_journal(journal_path)?;
    let mut done: BTreeSet<(String, String, String, String)> = BTreeSet::new();
    for record in &existing {
        if record.model == model_id {
            done.insert(record.key());
        }
    }

    // Task list in deterministic order.
    let mut tasks: Vec<(&QaPair, Condition)> = Vec::new();
    for qa in qa_set {
        for &condition in conditions {
            let key = (
                qa.scene.clone(),
                qa.frame.clone(),
                format!("{}", qa.family),
                condition.to_string(),
            );
            if !done.contains(&key) {
                tasks.push((qa, condition));
            }
        }
    }

    // Vision endpoints require every image up front.
    if endpoint.needs_image() {
        for (qa, condition) in &tasks {
            let path = condition.image_path(image_root, &qa.scene, &qa.frame);
            if !path.exists() {
                return Err(Error::Structural(format!(
                    "missing image {} for {}/{} under condition {condition}",
                    path.display(),
                    qa.scene,
                    qa.frame
                )));
            }
        }
    }

    let journal_file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(journal_path)
        .map_err(|e| Error::io(journal_path, e))?;
    let journal = Mutex::new(std::io::BufWriter::new(journal_file));

    let next_task = AtomicUsize::new(0);
    let records: Mutex<Vec<EvalRecord>> = Mutex::new(existing);
    let rate_gate: Mutex<Instant> = Mutex::new(Instant::now());
    let rate_limit_ms = endpoint.config().rate_limit_ms;
    let first_error: Mutex<Option<Error>> = Mutex::new(None);

    let worker = |_worker_id: usize| loop {
        let i = next_task.fetch_add(1, Ordering::Relaxed);
        if i >= tasks.len() {
            break;
        }
        let (qa, condition) = &tasks[i];
        if rate_limit_ms > 0 {
            let mut gate = rate_gate.lock().unwrap();
            let wait =
                std::time::Duration::from_millis(rate_limit_ms).saturating_sub(gate.elapsed());
            if !wait.is_zero() {
                std::thread::sleep(wait);
            }
            *gate = Instant::now();
        }
        let prompt = build_prompt(qa, blind);
        let image = if endpoint.needs_image() {
            Some(condition.image_path(image_root, &qa.scene, &qa.frame))
        } else {
            None
        };
        let started = Instant::now();
        let outcome = endpoint.respond(qa, &condition.to_string(), &prompt, image.as_deref());
        let latency_ms = started.elapsed().as_millis() as u64;

        let record = match outcome {
            Ok(raw) => {
                let parsed_index = parse_response(&raw, &qa.choices);
                let parsed = parsed_index.map(|i| qa.choices[i].clone());
                let correct = parsed_index == Some(qa.answer_index);
                EvalRecord {
                    scene: qa.scene.clone(),
                    frame: qa.frame.clone(),
                    family: qa.family,
                    question: qa.question.clone(),
                    condition: condition.to_string(),
                    model: model_id.clone(),
                    raw_response: raw,
                    status: if parsed.is_some() {
                        RecordStatus::Ok
                    } else {
                        RecordStatus::Unparseable
                    },
                    parsed,
                    correct,
                    num_choices: qa.choices.len(),
                    latency_ms,
                }
            }
            Err(Error::Endpoint(message)) => EvalRecord {
                scene: qa.scene.clone(),
                frame: qa.frame.clone(),
                family: qa.family,
                question: qa.question.clone(),
                condition: condition.to_string(),
                model: model_id.clone(),
                raw_response: message,
                parsed: None,
                correct: false,
                status: RecordStatus::Failed,
                num_choices: qa.choices.len(),
                latency_ms,
            },
            Err(other) => {
                let mut slot = first_error.lock().unwrap();
                if slot.is_none() {
                    *slot = Some(other);
                }
                break;
            }
        };

        {
            let mut journal = journal.lock().unwrap();
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(journal, "{line}").expect("journal write");
            journal.flush().expect("journal flush");
        }
        records.lock().unwrap().push(record);
    };

    let jobs = opts.jobs.max(1).min(tasks.len().max(1));
    if jobs <= 1 {
        worker(0);
    } else {
        let worker = &worker;
        std::thread::scope(|scope| {
            for worker_id in 0..jobs {
                scope.spawn(move || worker(worker_id));
            }
        });
    }

    if let Some(error) = first_error.into_inner().unwrap() {
        return Err(error);
    }

    let mut records = records.into_inner().unwrap();
    records.sort_by(|a, b| {
        (&a.model, &a.scene, &a.frame, a.family.index(), &a.condition).cmp(&(
            &b.model,
            &b.scene,
            &b.frame,
            b.family.index(),
            &b.condition,
        ))
    });
    Ok(records)
}
