//! Shell command execution with a timeout and bounded output capture.

use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResult {
    pub command: String,
    /// Process exit code; `-1` when the process was killed or timed out.
    pub exit_status: i32,
    pub timed_out: bool,
    pub duration_secs: f64,
    pub stdout_tail: String,
    pub stderr_tail: String,
}

impl ExecResult {
    pub fn succeeded(&self) -> bool {
        self.exit_status == 0 && !self.timed_out
    }
}

/// Last `cap` bytes of `bytes`, cut at a char boundary.
pub fn tail(bytes: &[u8], cap: usize) -> String {
    let start = bytes.len().saturating_sub(cap);
    let s = String::from_utf8_lossy(&bytes[start..]);
    s.trim_start_matches('\u{FFFD}').to_string()
}

fn drain<R: Read + Send + 'static>(r: Option<R>) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut r) = r {
            let _ = r.read_to_end(&mut buf);
        }
        buf
    })
}

#[cfg(unix)]
fn isolate(cmd: &mut Command) {
    use std::os::unix::process::CommandExt;
    cmd.process_group(0);
}

#[cfg(not(unix))]
fn isolate(_cmd: &mut Command) {}

#[cfg(unix)]
fn kill_group(child: &mut std::process::Child) {
    if let Ok(pgid) = libc::pid_t::try_from(child.id()) {
        if pgid > 0 {
            // SAFETY: signals only the group created for this child
            unsafe {
                libc::kill(-pgid, libc::SIGKILL);
            }
        }
    }
    let _ = child.kill();
}

#[cfg(not(unix))]
fn kill_group(child: &mut std::process::Child) {
    let _ = child.kill();
}

/// Runs `command` through `sh -c` in `cwd`. Never returns an error: spawn
/// failures are reported as exit status 127.
pub fn run_shell(command: &str, cwd: &Path, timeout: Duration, tail_bytes: usize) -> ExecResult {
    let started = Instant::now();
    let mut cmd = Command::new("sh");
    cmd.arg("-c")
        .arg(command)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    isolate(&mut cmd);
    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) => {
            return ExecResult {
                command: command.to_string(),
                exit_status: 127,
                timed_out: false,
                duration_secs: started.elapsed().as_secs_f64(),
                stdout_tail: String::new(),
                stderr_tail: format!("failed to spawn: {e}"),
            }
        }
    };
    let out = drain(child.stdout.take());
    let err = drain(child.stderr.take());
    let (exit_status, timed_out) = match child.wait_timeout(timeout) {
        Ok(Some(status)) => (status.code().unwrap_or(-1), false),
        Ok(None) => {
            kill_group(&mut child);
            let _ = child.wait();
            (-1, true)
        }
        Err(_) => {
            kill_group(&mut child);
            let _ = child.wait();
            (-1, false)
        }
    };
    let stdout = out.join().unwrap_or_default();
    let stderr = err.join().unwrap_or_default();
    ExecResult {
        command: command.to_string(),
        exit_status,
        timed_out,
        duration_secs: started.elapsed().as_secs_f64(),
        stdout_tail: tail(&stdout, tail_bytes),
        stderr_tail: tail(&stderr, tail_bytes),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn captures_exit_and_output() {
        let d = tempfile::tempdir().unwrap();
        let r = run_shell(
            "echo out; echo err >&2; exit 3",
            d.path(),
            Duration::from_secs(10),
            1024,
        );
        assert_eq!(r.exit_status, 3);
        assert_eq!(r.stdout_tail.trim(), "out");
        assert_eq!(r.stderr_tail.trim(), "err");
        assert!(!r.succeeded());
    }

    #[test]
    fn timeout_kills_the_process_group() {
        let d = tempfile::tempdir().unwrap();
        let t = Instant::now();
        let r = run_shell("sleep 30 | cat", d.path(), Duration::from_millis(300), 1024);
        assert!(r.timed_out);
        assert_eq!(r.exit_status, -1);
        assert!(t.elapsed() < Duration::from_secs(10));
    }

    #[test]
    fn tails_are_bounded() {
        let d = tempfile::tempdir().unwrap();
        let r = run_shell("seq 1 10000", d.path(), Duration::from_secs(10), 64);
        assert!(r.stdout_tail.len() <= 64);
        assert!(r.stdout_tail.ends_with("10000\n"));
    }
}
