//! Repository handles, working copies, tree hashing and git plumbing.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use thiserror::Error;
use walkdir::WalkDir;

use crate::paths::normalize_repo_path;

pub const VCS_DIRS: [&str; 3] = [".git", ".hg", ".svn"];

#[derive(Debug, Error)]
pub enum RepoError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("git {args}: {message}")]
    Git { args: String, message: String },
    #[error("{0}")]
    Path(#[from] crate::paths::PathError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RepoError + '_ {
    move |source| RepoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A repository snapshot on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Repo {
    root: PathBuf,
}

impl Repo {
    pub fn open(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Resolves a repository-relative path inside the root.
    pub fn resolve(&self, rel: &str) -> Result<PathBuf, RepoError> {
        let norm = normalize_repo_path(rel)?;
        Ok(self.root.join(norm))
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.resolve(rel).map(|p| p.exists()).unwrap_or(false)
    }

    pub fn is_dir(&self, rel: &str) -> bool {
        self.resolve(rel).map(|p| p.is_dir()).unwrap_or(false)
    }

    pub fn has_vcs(&self) -> bool {
        self.root.join(".git").exists()
    }

    /// All regular files, repository-relative with `/` separators, sorted,
    /// excluding VCS metadata.
    pub fn files(&self) -> Vec<String> {
        let mut out: Vec<String> = WalkDir::new(&self.root)
            .follow_links(false)
            .into_iter()
            .filter_entry(|e| {
                !(e.file_type().is_dir()
                    && e.depth() > 0
                    && VCS_DIRS.iter().any(|d| e.file_name() == *d))
            })
            .filter_map(Result::ok)
            .filter(|e| e.file_type().is_file())
            .filter_map(|e| {
                e.path()
                    .strip_prefix(&self.root)
                    .ok()
                    .map(|p| p.to_string_lossy().replace('\\', "/"))
            })
            .collect();
        out.sort();
        out
    }

    /// Content hash over every (path, bytes) pair outside VCS metadata.
    pub fn tree_hash(&self) -> String {
        let mut h = Sha256::new();
        for rel in self.files() {
            h.update(rel.as_bytes());
            h.update([0u8]);
            if let Ok(bytes) = fs::read(self.root.join(&rel)) {
                h.update(Sha256::digest(&bytes));
            }
        }
        hex::encode(h.finalize())
    }

    pub fn git(&self, args: &[&str]) -> Result<Output, RepoError> {
        let out = Command::new("git")
            .arg("-C")
            .arg(&self.root)
            .args([
                "-c",
                "user.name=groundwork",
                "-c",
                "user.email=groundwork@localhost",
            ])
            .args(["-c", "commit.gpgsign=false", "-c", "core.quotepath=false"])
            .args(args)
            .output()
            .map_err(io_err(&self.root))?;
        if !out.status.success() {
            return Err(RepoError::Git {
                args: args.join(" "),
                message: String::from_utf8_lossy(&out.stderr).trim().to_string(),
            });
        }
        Ok(out)
    }

    pub fn git_stdout(&self, args: &[&str]) -> Result<String, RepoError> {
        Ok(String::from_utf8_lossy(&self.git(args)?.stdout).into_owned())
    }
}

/// Recursively copies a directory tree, including VCS metadata.
pub fn copy_tree(from: &Path, to: &Path) -> Result<(), RepoError> {
    fs::create_dir_all(to).map_err(io_err(to))?;
    for entry in WalkDir::new(from).follow_links(false) {
        let entry = entry.map_err(|e| RepoError::Io {
            path: from.to_path_buf(),
            source: e.into(),
        })?;
        let rel = entry
            .path()
            .strip_prefix(from)
            .expect("walk stays under root");
        let dest = to.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&dest).map_err(io_err(&dest))?;
        } else if entry.file_type().is_file() {
            fs::copy(entry.path(), &dest).map_err(io_err(&dest))?;
        }
    }
    Ok(())
}

/// A private, git-backed copy of a source repository for one run.
#[derive(Debug, Clone)]
pub struct WorkingCopy {
    pub repo: Repo,
    pub base_commit: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchSummary {
    pub branch_name: String,
    pub files_changed: usize,
    pub diff: String,
}

impl WorkingCopy {
    /// Copies `source` into `dest` and makes sure it has a commit to diff
    /// against.
    pub fn create(source: &Path, dest: &Path) -> Result<Self, RepoError> {
        if dest.exists() {
            fs::remove_dir_all(dest).map_err(io_err(dest))?;
        }
        copy_tree(source, dest)?;
        let repo = Repo::open(dest);
        if !repo.has_vcs() {
            repo.git(&["init", "-q"])?;
            repo.git(&["add", "-A"])?;
            repo.git(&["commit", "-q", "--allow-empty", "-m", "baseline snapshot"])?;
        }
        let base_commit = repo.git_stdout(&["rev-parse", "HEAD"])?.trim().to_string();
        Ok(Self { repo, base_commit })
    }

    /// Commits every change on a fresh branch and returns the patch
    /// against the base commit. This stands in for opening a pull request.
    pub fn finalize_patch(&self, branch_name: &str) -> Result<PatchSummary, RepoError> {
        let repo = &self.repo;
        repo.git(&["checkout", "-q", "-B", branch_name])?;
        repo.git(&["add", "-A"])?;
        let staged = repo.git_stdout(&["diff", "--cached", "--name-only", &self.base_commit])?;
        if !staged.trim().is_empty() {
            repo.git(&[
                "commit",
                "-q",
                "-m",
                &format!("{branch_name}: feature implementation"),
            ])?;
        }
        let names = repo.git_stdout(&["diff", "--name-only", &self.base_commit, "HEAD"])?;
        let diff = repo.git_stdout(&["diff", "--binary", &self.base_commit, "HEAD"])?;
        Ok(PatchSummary {
            branch_name: branch_name.to_string(),
            files_changed: names.lines().filter(|l| !l.trim().is_empty()).count(),
            diff,
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
