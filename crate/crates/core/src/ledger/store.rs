use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::events::{EventSink, RunEvent};
use super::RunRecord;
use crate::artifact::ArtifactKind;
use crate::judge::JudgeOutcome;
use crate::probe::EvidenceBundle;
use crate::report::ValidationReport;
use crate::workflow::{ConfigurationKind, PhaseId};

pub const RECORD_FILE: &str = "record.jsonl";
pub const PATCH_FILE: &str = "patch.diff";

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("run `{0}` already exists")]
    Duplicate(String),
    #[error("run `{0}` not found")]
    NotFound(String),
    #[error("invalid run id `{0}`")]
    InvalidId(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> LedgerError + '_ {
    move |source| LedgerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One line of `record.jsonl`: events while the run is live, then exactly
/// one record, then any judge results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LedgerLine {
    Event(RunEvent),
    Record(Box<RunRecord>),
    Judge(JudgeOutcome),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ConfigurationKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repo_id: Option<String>,
}

impl RunFilter {
    pub fn matches(&self, r: &RunRecord) -> bool {
        self.task_id.as_ref().is_none_or(|t| *t == r.task_id)
            && self.config.is_none_or(|c| c == r.config)
            && self.repo_id.as_ref().is_none_or(|t| *t == r.repo_id)
    }
}

/// Append-only run storage. Readers only ever see finished records.
pub trait RunStore: Send + Sync {
    fn append(&self, record: &RunRecord) -> Result<(), LedgerError>;

    fn get(&self, run_id: &str) -> Result<Option<RunRecord>, LedgerError>;

    /// Matching records ordered by run id.
    fn query(&self, filter: &RunFilter) -> Result<Vec<RunRecord>, LedgerError>;

    fn attach_judge(&self, run_id: &str, outcome: &JudgeOutcome) -> Result<(), LedgerError>;
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    records: Mutex<BTreeMap<String, RunRecord>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl RunStore for MemoryStore {
    fn append(&self, record: &RunRecord) -> Result<(), LedgerError> {
        let mut map = self.records.lock().unwrap();
        if map.contains_key(&record.run_id) {
            return Err(LedgerError::Duplicate(record.run_id.clone()));
        }
        map.insert(record.run_id.clone(), record.clone());
        Ok(())
    }

    fn get(&self, run_id: &str) -> Result<Option<RunRecord>, LedgerError> {
        Ok(self.records.lock().unwrap().get(run_id).cloned())
    }

    fn query(&self, filter: &RunFilter) -> Result<Vec<RunRecord>, LedgerError> {
        Ok(self
            .records
            .lock()
            .unwrap()
            .values()
            .filter(|r| filter.matches(r))
            .cloned()
            .collect())
    }

    fn attach_judge(&self, run_id: &str, outcome: &JudgeOutcome) -> Result<(), LedgerError> {
        let mut map = self.records.lock().unwrap();
        let r = map
            .get_mut(run_id)
            .ok_or_else(|| LedgerError::NotFound(run_id.to_string()))?;
        r.apply_judge(outcome.clone());
        Ok(())
    }
}

pub fn valid_run_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.len() <= 200
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// `runs/<run_id>/record.jsonl` plus artifacts, patch, evidence and reports.
#[derive(Debug)]
pub struct FsStore {
    root: PathBuf,
    lock: Mutex<()>,
}

#[derive(Debug, Default)]
struct Parsed {
    events: Vec<RunEvent>,
    record: Option<RunRecord>,
}

impl FsStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, LedgerError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io(&root))?;
        Ok(Self {
            root,
            lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    /// Claims the run directory; a second claim on the same id fails.
    pub fn begin(&self, run_id: &str) -> Result<RunWriter, LedgerError> {
        if !valid_run_id(run_id) {
            return Err(LedgerError::InvalidId(run_id.to_string()));
        }
        let dir = self.run_dir(run_id);
        match fs::create_dir(&dir) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(LedgerError::Duplicate(run_id.to_string()))
            }
            Err(e) => return Err(io(&dir)(e)),
        }
        let path = dir.join(RECORD_FILE);
        let file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(&path)
            .map_err(io(&path))?;
        Ok(RunWriter {
            run_id: run_id.to_string(),
            dir,
            file: Mutex::new(file),
        })
    }

    /// Whether a run directory exists, finished or not.
    pub fn contains(&self, run_id: &str) -> bool {
        valid_run_id(run_id) && self.run_dir(run_id).join(RECORD_FILE).is_file()
    }

    /// Ids of every run directory, finished or not.
    pub fn run_ids(&self) -> Result<Vec<String>, LedgerError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(io(&self.root))? {
            let entry = entry.map_err(io(&self.root))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if entry.path().join(RECORD_FILE).is_file() && valid_run_id(&name) {
                ids.push(name);
            }
        }
        ids.sort();
        Ok(ids)
    }

    fn parse(&self, run_id: &str) -> Result<Option<Parsed>, LedgerError> {
        if !valid_run_id(run_id) {
            return Ok(None);
        }
        let path = self.run_dir(run_id).join(RECORD_FILE);
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io(&path)(e)),
        };
        let mut parsed = Parsed::default();
        let mut judges = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: LedgerLine = match serde_json::from_str(&line) {
                Ok(l) => l,
                // a torn final line from a crashed writer is ignored
                Err(_) if parsed.record.is_none() => continue,
                Err(e) => {
                    return Err(LedgerError::Corrupt {
                        path,
                        line: i + 1,
                        message: e.to_string(),
                    })
                }
            };
            match entry {
                LedgerLine::Event(e) => parsed.events.push(e),
                LedgerLine::Record(r) => parsed.record = Some(*r),
                LedgerLine::Judge(j) => judges.push(j),
            }
        }
        if let Some(r) = parsed.record.as_mut() {
            for j in judges {
                r.apply_judge(j);
            }
        }
        Ok(Some(parsed))
    }

    pub fn events(&self, run_id: &str) -> Result<Vec<RunEvent>, LedgerError> {
        Ok(self.parse(run_id)?.map(|p| p.events).unwrap_or_default())
    }

    /// `name` is `spec`, `plan`, `tasks` or `patch`.
    pub fn artifact_text(&self, run_id: &str, name: &str) -> Option<String> {
        if !valid_run_id(run_id) {
            return None;
        }
        let dir = self.run_dir(run_id);
        let path = if name == "patch" {
            dir.join(PATCH_FILE)
        } else {
            let kind: ArtifactKind = name.parse().ok()?;
            dir.join("artifacts").join(kind.file_name())
        };
        fs::read_to_string(path).ok()
    }

    pub fn report(&self, run_id: &str, phase: PhaseId) -> Option<ValidationReport> {
        self.read_json(run_id, &format!("reports/{}.json", phase.as_str()))
    }

    pub fn evidence(&self, run_id: &str, phase: PhaseId) -> Option<EvidenceBundle> {
        self.read_json(run_id, &format!("evidence/{}.json", phase.as_str()))
    }

    fn read_json<T: serde::de::DeserializeOwned>(&self, run_id: &str, rel: &str) -> Option<T> {
        if !valid_run_id(run_id) {
            return None;
        }
        let text = fs::read_to_string(self.run_dir(run_id).join(rel)).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn append_line(&self, run_id: &str, line: &LedgerLine) -> Result<(), LedgerError> {
        let path = self.run_dir(run_id).join(RECORD_FILE);
        let mut f = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(io(&path))?;
        let mut text = serde_json::to_string(line).expect("ledger lines serialize");
        text.push('\n');
        f.write_all(text.as_bytes()).map_err(io(&path))
    }
}

impl RunStore for FsStore {
    fn append(&self, record: &RunRecord) -> Result<(), LedgerError> {
        let _g = self.lock.lock().unwrap();
        if self
            .parse(&record.run_id)?
            .is_some_and(|p| p.record.is_some())
        {
            return Err(LedgerError::Duplicate(record.run_id.clone()));
        }
        if !self.run_dir(&record.run_id).join(RECORD_FILE).exists() {
            drop(self.begin(&record.run_id)?);
        }
        self.append_line(
            &record.run_id,
            &LedgerLine::Record(Box::new(record.clone())),
        )
    }

    fn get(&self, run_id: &str) -> Result<Option<RunRecord>, LedgerError> {
        Ok(self.parse(run_id)?.and_then(|p| p.record))
    }

    fn query(&self, filter: &RunFilter) -> Result<Vec<RunRecord>, LedgerError> {
        let mut out = Vec::new();
        for id in self.run_ids()? {
            if let Some(r) = self.get(&id)? {
                if filter.matches(&r) {
                    out.push(r);
                }
            }
        }
        Ok(out)
    }

    fn attach_judge(&self, run_id: &str, outcome: &JudgeOutcome) -> Result<(), LedgerError> {
        let _g = self.lock.lock().unwrap();
        if self.get(run_id)?.is_none() {
            return Err(LedgerError::NotFound(run_id.to_string()));
        }
        self.append_line(run_id, &LedgerLine::Judge(outcome.clone()))
    }
}

/// Single writer for one live run's directory.
#[derive(Debug)]
pub struct RunWriter {
    run_id: String,
    dir: PathBuf,
    file: Mutex<File>,
}

impl RunWriter {
    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn line(&self, line: &LedgerLine) -> Result<(), LedgerError> {
        let path = self.dir.join(RECORD_FILE);
        let mut text = serde_json::to_string(line).expect("ledger lines serialize");
        text.push('\n');
        let mut f = self.file.lock().unwrap();
        f.write_all(text.as_bytes()).map_err(io(&path))?;
        f.flush().map_err(io(&path))
    }

    fn write(&self, rel: &str, bytes: &[u8]) -> Result<(), LedgerError> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io(parent))?;
        }
        fs::write(&path, bytes).map_err(io(&path))
    }

    pub fn event(&self, event: &RunEvent) -> Result<(), LedgerError> {
        self.line(&LedgerLine::Event(event.clone()))
    }

    pub fn write_artifact(&self, kind: ArtifactKind, text: &str) -> Result<(), LedgerError> {
        self.write(&format!("artifacts/{}", kind.file_name()), text.as_bytes())
    }

    pub fn write_patch(&self, diff: &str) -> Result<(), LedgerError> {
        self.write(PATCH_FILE, diff.as_bytes())
    }

    /// Returns the path relative to the run directory.
    pub fn write_evidence(
        &self,
        phase: PhaseId,
        bundle: &EvidenceBundle,
    ) -> Result<String, LedgerError> {
        let rel = format!("evidence/{}.json", phase.as_str());
        self.write(
            &rel,
            &serde_json::to_vec_pretty(bundle).expect("bundle serializes"),
        )?;
        Ok(rel)
    }

    pub fn write_report(
        &self,
        phase: PhaseId,
        report: &ValidationReport,
    ) -> Result<String, LedgerError> {
        let rel = format!("reports/{}.json", phase.as_str());
        self.write(
            &rel,
            &serde_json::to_vec_pretty(report).expect("report serializes"),
        )?;
        Ok(rel)
    }

    /// Appends the final record; the run becomes visible to readers.
    pub fn finish(self, record: &RunRecord) -> Result<(), LedgerError> {
        self.line(&LedgerLine::Record(Box::new(record.clone())))
    }
}

impl EventSink for RunWriter {
    fn emit(&self, event: &RunEvent) {
        if let Err(e) = self.event(event) {
            tracing::warn!(run = %self.run_id, "dropping ledger event: {e}");
        }
    }
}
