//! Long-lived JSON-lines session with an external agent process: one JSON
//! document per line in each direction.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::Serialize;
use serde_json::Value as Json;
use thiserror::Error;

use crate::cost::AdapterCommand;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("failed to start agent `{command}`: {source}")]
    Spawn {
        command: String,
        source: std::io::Error,
    },
    #[error("agent closed its output")]
    Closed,
    #[error("agent did not reply within {0} s")]
    Timeout(u64),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("agent i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

pub struct AgentSession {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    command: String,
}

impl AgentSession {
    pub fn spawn(cmd: &AdapterCommand, timeout: Duration) -> Result<Self, AgentError> {
        let mut child = cmd
            .command()
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| AgentError::Spawn {
                command: cmd.display(),
                source,
            })?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(AgentSession {
            child,
            stdin,
            lines: rx,
            timeout,
            command: cmd.display(),
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn send<T: Serialize>(&mut self, msg: &T) -> Result<(), AgentError> {
        let stdin = self.stdin.as_mut().ok_or(AgentError::Closed)?;
        let mut line =
            serde_json::to_string(msg).map_err(|e| AgentError::Protocol(e.to_string()))?;
        line.push('\n');
        stdin.write_all(line.as_bytes())?;
        stdin.flush()?;
        Ok(())
    }

    /// Next non-blank line parsed as JSON.
    pub fn recv(&mut self) -> Result<Json, AgentError> {
        loop {
            let line = match self.lines.recv_timeout(self.timeout) {
                Ok(l) => l?,
                Err(RecvTimeoutError::Timeout) => {
                    return Err(AgentError::Timeout(self.timeout.as_secs()))
                }
                Err(RecvTimeoutError::Disconnected) => return Err(AgentError::Closed),
            };
            if line.trim().is_empty() {
                continue;
            }
            return serde_json::from_str(&line)
                .map_err(|e| AgentError::Protocol(format!("{e}: {line}")));
        }
    }

    pub fn request<T: Serialize>(&mut self, msg: &T) -> Result<Json, AgentError> {
        self.send(msg)?;
        self.recv()
    }
}

impl Drop for AgentSession {
    fn drop(&mut self) {
        drop(self.stdin.take());
        // Give a well-behaved agent a moment to exit on EOF before killing it.
        for _ in 0..20 {
            if matches!(self.child.try_wait(), Ok(Some(_))) {
                return;
            }
            thread::sleep(Duration::from_millis(5));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
