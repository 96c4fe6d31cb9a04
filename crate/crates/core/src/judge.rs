//! Rubric scoring of finished runs by a separate judge backend.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::prompt::render;
use crate::agent::{AgentBackend, BackendMessage, BackendRequest, PromptLibrary};
use crate::clock::Timestamp;

pub const DIMENSIONS: [&str; 4] = ["completeness", "correctness", "style", "maintainability"];

/// Composite scores strictly below this are flagged for review.
pub const REVIEW_THRESHOLD: f64 = 3.0;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum JudgeError {
    #[error("{dimension} score {value} is outside 1-5 or not a half point")]
    OutOfRange { dimension: String, value: f64 },
    #[error("malformed score block: {0}")]
    Malformed(String),
    #[error("judge backend `{0}` is also the generation backend")]
    SameBackend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RubricScore {
    pub completeness: f64,
    pub correctness: f64,
    pub style: f64,
    pub maintainability: f64,
}

fn check_dimension(dimension: &str, value: f64) -> Result<(), JudgeError> {
    let doubled = value * 2.0;
    if !(1.0..=5.0).contains(&value) || doubled.fract() != 0.0 {
        return Err(JudgeError::OutOfRange {
            dimension: dimension.to_string(),
            value,
        });
    }
    Ok(())
}

impl RubricScore {
    pub fn new(
        completeness: f64,
        correctness: f64,
        style: f64,
        maintainability: f64,
    ) -> Result<Self, JudgeError> {
        let s = Self {
            completeness,
            correctness,
            style,
            maintainability,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), JudgeError> {
        for (d, v) in DIMENSIONS.iter().zip(self.values()) {
            check_dimension(d, v)?;
        }
        Ok(())
    }

    pub fn values(&self) -> [f64; 4] {
        [
            self.completeness,
            self.correctness,
            self.style,
            self.maintainability,
        ]
    }

    /// Unrounded mean of the four dimensions.
    pub fn composite(&self) -> f64 {
        self.values().iter().sum::<f64>() / 4.0
    }
}

pub fn composite(score: &RubricScore) -> Result<f64, JudgeError> {
    score.validate()?;
    Ok(score.composite())
}

pub fn needs_review(composite: f64) -> bool {
    composite < REVIEW_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub score: RubricScore,
    pub composite: f64,
    pub needs_review: bool,
    pub rationale_text: String,
    pub judge_backend: String,
    pub judged_at: Timestamp,
}

impl JudgeVerdict {
    pub fn new(
        score: RubricScore,
        rationale_text: String,
        judge_backend: String,
        judged_at: Timestamp,
    ) -> Self {
        let composite = score.composite();
        Self {
            score,
            composite,
            needs_review: needs_review(composite),
            rationale_text,
            judge_backend,
            judged_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum JudgeOutcome {
    Scored(JudgeVerdict),
    Unavailable { reason: String },
}

/// Strict parse of the last ```score block: exactly the four dimensions,
/// one `name: value` line each.
pub fn parse_score_block(text: &str) -> Result<RubricScore, JudgeError> {
    let mut block: Option<Vec<&str>> = None;
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        if line.trim() == "```score" {
            let mut body = Vec::new();
            let mut closed = false;
            for l in lines.by_ref() {
                if l.trim() == "```" {
                    closed = true;
                    break;
                }
                body.push(l);
            }
            if !closed {
                return Err(JudgeError::Malformed("unterminated score block".into()));
            }
            block = Some(body);
        }
    }
    let body = block.ok_or_else(|| JudgeError::Malformed("no ```score block".into()))?;
    let mut values = BTreeMap::new();
    for line in body.iter().map(|l| l.trim()).filter(|l| !l.is_empty()) {
        let (name, value) = line.split_once(':').ok_or_else(|| {
            JudgeError::Malformed(format!("expected `dimension: value`, got `{line}`"))
        })?;
        let name = name.trim().to_ascii_lowercase();
        if !DIMENSIONS.contains(&name.as_str()) {
            return Err(JudgeError::Malformed(format!("unknown dimension `{name}`")));
        }
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| JudgeError::Malformed(format!("`{}` is not a number", value.trim())))?;
        if values.insert(name.clone(), v).is_some() {
            return Err(JudgeError::Malformed(format!(
                "dimension `{name}` repeated"
            )));
        }
    }
    let get = |d: &str| {
        values
            .get(d)
            .copied()
            .ok_or_else(|| JudgeError::Malformed(format!("missing dimension `{d}`")))
    };
    RubricScore::new(
        get("completeness")?,
        get("correctness")?,
        get("style")?,
        get("maintainability")?,
    )
}

pub fn ensure_distinct_backends(generation_id: &str, judge_id: &str) -> Result<(), JudgeError> {
    if generation_id == judge_id {
        return Err(JudgeError::SameBackend(judge_id.to_string()));
    }
    Ok(())
}

/// Scores one diff. The judge has no tools: a tool request counts as an
/// unusable reply. One retry, then the judge is marked unavailable.
pub fn judge_run(
    backend: &mut dyn AgentBackend,
    prompts: &PromptLibrary,
    task: &str,
    diff: &str,
    now: Timestamp,
) -> JudgeOutcome {
    let template = match prompts.template("judge") {
        Ok(t) => t,
        Err(e) => {
            return JudgeOutcome::Unavailable {
                reason: e.to_string(),
            }
        }
    };
    let mut vars = BTreeMap::new();
    vars.insert("task".to_string(), task.trim().to_string());
    vars.insert("diff".to_string(), diff.to_string());
    let request = BackendRequest {
        key: "judge".into(),
        turn: 0,
        prompt: render(&template, &vars),
        transcript: Vec::new(),
    };
    let mut last = String::new();
    for attempt in 0..2 {
        let mut req = request.clone();
        req.turn = attempt;
        match backend.respond(&req) {
            Ok(BackendMessage::Final(text)) => match parse_score_block(&text) {
                Ok(score) => {
                    return JudgeOutcome::Scored(JudgeVerdict::new(
                        score,
                        text,
                        backend.id().to_string(),
                        now,
                    ));
                }
                Err(e) => last = e.to_string(),
            },
            Ok(BackendMessage::ToolRequest(_)) => last = "judge requested a tool".into(),
            Err(e) => last = e.to_string(),
        }
    }
    JudgeOutcome::Unavailable { reason: last }
}
