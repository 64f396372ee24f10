//! Subprocess evaluator: the design document goes to the adapter's stdin and
//! a single-line `{"latency": …, "area": …}` reply comes back on stdout.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::Value as Json;
use wait_timeout::ChildExt;

use super::{EvalError, Evaluator, Metrics};
use crate::ir::Design;

pub const DEFAULT_ADAPTER_TIMEOUT: Duration = Duration::from_secs(600);
pub const DEFAULT_ADAPTER_CONCURRENCY: usize = 4;
pub const TIMEOUT_ENV: &str = "FORGE_ADAPTER_TIMEOUT";

/// Counting semaphore bounding simultaneous adapter processes.
#[derive(Debug)]
pub struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.freed.notify_one();
    }
}

/// A program plus arguments, written `cmd:<program> [args…]` on the command
/// line (shell-style quoting).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdapterCommand {
    pub program: String,
    pub args: Vec<String>,
}

impl AdapterCommand {
    pub fn parse(spec: &str) -> Option<Self> {
        let body = spec.strip_prefix("cmd:").unwrap_or(spec);
        let mut words = shlex::split(body)?;
        if words.is_empty() {
            return None;
        }
        let program = words.remove(0);
        Some(AdapterCommand {
            program,
            args: words,
        })
    }

    pub fn command(&self) -> Command {
        let mut c = Command::new(&self.program);
        c.args(&self.args);
        c
    }

    pub fn display(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Reads the timeout override from the environment, in seconds.
pub fn timeout_from_env() -> Duration {
    std::env::var(TIMEOUT_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<f64>().ok())
        .filter(|s| s.is_finite() && *s > 0.0)
        .map_or(DEFAULT_ADAPTER_TIMEOUT, Duration::from_secs_f64)
}

/// Runs `cmd` with `input` on stdin and returns its stdout, enforcing the
/// timeout and surfacing non-zero exits.
pub(crate) fn run_once(
    cmd: &AdapterCommand,
    input: &[u8],
    timeout: Duration,
) -> Result<String, EvalError> {
    let mut child = cmd
        .command()
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| EvalError::Spawn {
            command: cmd.display(),
            source,
        })?;
    let mut stdin = child.stdin.take().expect("piped");
    let mut stdout = child.stdout.take().expect("piped");
    let mut stderr = child.stderr.take().expect("piped");
    let input = input.to_vec();
    // A child that exits without reading stdin yields a broken pipe; the exit
    // status is the meaningful signal, so write errors are ignored.
    let writer = thread::spawn(move || {
        let _ = stdin.write_all(&input);
    });
    let out_reader = thread::spawn(move || {
        let mut s = Vec::new();
        stdout.read_to_end(&mut s).map(|_| s)
    });
    let err_reader = thread::spawn(move || {
        let mut s = Vec::new();
        let _ = stderr.read_to_end(&mut s);
        s
    });
    let status = match child.wait_timeout(timeout)? {
        Some(s) => s,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(EvalError::Timeout(timeout.as_secs()));
        }
    };
    let _ = writer.join();
    let out = out_reader
        .join()
        .map_err(|_| EvalError::Malformed("stdout reader panicked".into()))??;
    let err = err_reader.join().unwrap_or_default();
    if !status.success() {
        return Err(EvalError::Exit {
            status: status.to_string(),
            stderr: String::from_utf8_lossy(&err).trim().to_string(),
        });
    }
    String::from_utf8(out).map_err(|_| EvalError::Malformed("reply is not UTF-8".into()))
}

fn as_cycles(v: &Json, field: &str) -> Result<u64, EvalError> {
    match v {
        Json::Number(n) => n
            .as_u64()
            .ok_or_else(|| EvalError::Malformed(format!("{field} must be a non-negative integer"))),
        Json::Object(range) if field == "latency" => {
            let lo = range
                .get("min")
                .map(|x| as_cycles(x, "latency.min"))
                .transpose()?;
            let hi = range
                .get("max")
                .map(|x| as_cycles(x, "latency.max"))
                .transpose()?;
            match (lo, hi) {
                (Some(lo), Some(hi)) if lo <= hi => Ok(lo + (hi - lo).div_ceil(2)),
                _ => Err(EvalError::Malformed(
                    "latency range needs min <= max".into(),
                )),
            }
        }
        other => Err(EvalError::Malformed(format!(
            "{field} is not numeric: {other}"
        ))),
    }
}

/// Parses a metrics reply. A latency range `{"min": a, "max": b}` is reduced
/// to its midpoint, rounded up.
pub fn parse_metrics_reply(text: &str) -> Result<Metrics, EvalError> {
    let line = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| EvalError::Malformed("empty reply".into()))?;
    let v: Json = serde_json::from_str(line).map_err(|e| EvalError::Malformed(e.to_string()))?;
    let get = |k: &str| {
        v.get(k)
            .ok_or_else(|| EvalError::Malformed(format!("missing `{k}`")))
    };
    Ok(Metrics {
        latency: as_cycles(get("latency")?, "latency")?,
        area: as_cycles(get("area")?, "area")?,
    })
}

#[derive(Debug, Clone)]
pub struct ExternalEvaluator {
    pub command: AdapterCommand,
    pub timeout: Duration,
    semaphore: Arc<Semaphore>,
}

impl ExternalEvaluator {
    pub fn new(command: AdapterCommand) -> Self {
        Self::with_limits(command, timeout_from_env(), DEFAULT_ADAPTER_CONCURRENCY)
    }

    pub fn with_limits(command: AdapterCommand, timeout: Duration, concurrency: usize) -> Self {
        ExternalEvaluator {
            command,
            timeout,
            semaphore: Arc::new(Semaphore::new(concurrency)),
        }
    }

    pub fn semaphore(&self) -> Arc<Semaphore> {
        Arc::clone(&self.semaphore)
    }
}

impl Evaluator for ExternalEvaluator {
    fn evaluate(&self, d: &Design) -> Result<Metrics, EvalError> {
        let _permit = self.semaphore.acquire();
        let mut doc = d.to_json();
        doc.push('\n');
        let out = run_once(&self.command, doc.as_bytes(), self.timeout)?;
        parse_metrics_reply(&out)
    }

    fn describe(&self) -> String {
        format!("cmd:{}", self.command.display())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reply_parsing() {
        assert_eq!(
            parse_metrics_reply("{\"latency\":5,\"area\":7}\n").unwrap(),
            Metrics::new(5, 7)
        );
        assert_eq!(
            parse_metrics_reply(r#"{"latency":{"min":10,"max":13},"area":1}"#)
                .unwrap()
                .latency,
            12
        );
        assert!(matches!(
            parse_metrics_reply(r#"{"latency":"fast","area":1}"#),
            Err(EvalError::Malformed(_))
        ));
        assert!(matches!(
            parse_metrics_reply(r#"{"latency":-1,"area":1}"#),
            Err(EvalError::Malformed(_))
        ));
        assert!(matches!(
            parse_metrics_reply(""),
            Err(EvalError::Malformed(_))
        ));
    }

    #[test]
    fn command_spec() {
        let c = AdapterCommand::parse("cmd:python3 'my adapter.py' --x").unwrap();
        assert_eq!(c.program, "python3");
        assert_eq!(c.args, vec!["my adapter.py", "--x"]);
        assert!(AdapterCommand::parse("cmd:").is_none());
    }

    #[test]
    fn semaphore_bounds_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let sem = Arc::new(Semaphore::new(2));
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (sem, live, peak) = (sem.clone(), live.clone(), peak.clone());
                thread::spawn(move || {
                    let _p = sem.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    thread::sleep(Duration::from_millis(5));
                    live.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
