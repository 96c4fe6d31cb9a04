use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workflow::UnknownName;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureCategory {
    ConfigChange,
    NewModule,
    ApiEndpoint,
    Refactor,
    Test,
}

impl FeatureCategory {
    pub const ALL: [FeatureCategory; 5] = [
        FeatureCategory::ConfigChange,
        FeatureCategory::NewModule,
        FeatureCategory::ApiEndpoint,
        FeatureCategory::Refactor,
        FeatureCategory::Test,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureCategory::ConfigChange => "config_change",
            FeatureCategory::NewModule => "new_module",
            FeatureCategory::ApiEndpoint => "api_endpoint",
            FeatureCategory::Refactor => "refactor",
            FeatureCategory::Test => "test",
        }
    }
}

impl fmt::Display for FeatureCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureCategory {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        FeatureCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == norm)
            .ok_or_else(|| UnknownName {
                what: "category",
                name: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureTask {
    pub task_id: String,
    pub repo_id: String,
    pub category: FeatureCategory,
    pub description: String,
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("feature file does not parse: {0}")]
    Yaml(#[from] serde_yaml::Error),
    #[error("task `{task_id}`: unknown category `{category}`")]
    UnknownCategory { task_id: String, category: String },
    #[error("task `{task_id}`: {message}")]
    Invalid { task_id: String, message: String },
    #[error("duplicate task id `{0}`")]
    Duplicate(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    #[serde(alias = "id")]
    task_id: String,
    #[serde(alias = "repository")]
    repo_id: String,
    category: String,
    description: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawFile {
    Wrapped { tasks: Vec<RawTask> },
    Bare(Vec<RawTask>),
}

/// Parses a feature file: either a bare list or a `tasks:` list.
pub fn parse_features(text: &str) -> Result<Vec<FeatureTask>, FeatureError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let raw = match serde_yaml::from_str::<Option<RawFile>>(text)? {
        None => return Ok(Vec::new()),
        Some(RawFile::Wrapped { tasks }) | Some(RawFile::Bare(tasks)) => tasks,
    };
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(raw.len());
    for r in raw {
        let task_id = r.task_id.trim().to_string();
        let invalid = |message: &str| FeatureError::Invalid {
            task_id: task_id.clone(),
            message: message.to_string(),
        };
        if task_id.is_empty() || task_id.chars().any(char::is_whitespace) {
            return Err(invalid("task id must be non-empty without whitespace"));
        }
        if r.repo_id.trim().is_empty() {
            return Err(invalid("repository is empty"));
        }
        if r.description.trim().is_empty() {
            return Err(invalid("description is empty"));
        }
        let category = r
            .category
            .parse()
            .map_err(|_| FeatureError::UnknownCategory {
                task_id: task_id.clone(),
                category: r.category.clone(),
            })?;
        if !seen.insert(task_id.clone()) {
            return Err(FeatureError::Duplicate(task_id));
        }
        out.push(FeatureTask {
            task_id,
            repo_id: r.repo_id.trim().to_string(),
            category,
            description: r.description.trim().to_string(),
        });
    }
    Ok(out)
}

pub fn load_features(path: &Path) -> Result<Vec<FeatureTask>, FeatureError> {
    let text = std::fs::read_to_string(path).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_features(&text)
}
