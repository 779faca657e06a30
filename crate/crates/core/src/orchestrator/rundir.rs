//! Run directory persistence: JSON documents, the append-only audit log and
//! the integrity manifest that commits each phase.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::OrchestratorError;
use crate::artifact::write_atomic;
use crate::digest::sha256_hex;

pub const JOB_FILE: &str = "job.json";
pub const RECORD_FILE: &str = "record.json";
pub const SETTINGS_FILE: &str = "settings.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const AUDIT_FILE: &str = "audit.log";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    Planning,
    Editing,
    Critic,
    Orchestrator,
}

/// An event before it is assigned its position in the log.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingEvent {
    pub branch: Option<u32>,
    pub agent: Agent,
    pub event: &'static str,
    pub payload: Value,
}

impl PendingEvent {
    pub fn job(agent: Agent, event: &'static str, payload: Value) -> Self {
        Self {
            branch: None,
            agent,
            event,
            payload,
        }
    }

    pub fn branch(branch: u32, agent: Agent, event: &'static str, payload: Value) -> Self {
        Self {
            branch: Some(branch),
            agent,
            event,
            payload,
        }
    }
}

/// One audit log line. `ts` is the event's 1-based position in the log,
/// a logical clock that keeps logs identical across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub ts: u64,
    pub branch: Option<u32>,
    pub agent: Agent,
    pub event: String,
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditCommit {
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: BTreeMap<String, String>,
    pub audit: AuditCommit,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OrchestratorError + '_ {
    move |source| OrchestratorError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<(), OrchestratorError> {
        let mut text = serde_json::to_string_pretty(value).expect("documents serialize");
        text.push('\n');
        write_atomic(&self.path(rel), text.as_bytes())?;
        Ok(())
    }

    pub fn write_bytes(&self, rel: &str, bytes: &[u8]) -> Result<(), OrchestratorError> {
        write_atomic(&self.path(rel), bytes)?;
        Ok(())
    }

    pub fn read_json<T: DeserializeOwned>(&self, rel: &str) -> Result<T, OrchestratorError> {
        let path = self.path(rel);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| OrchestratorError::Corrupt {
            path: rel.into(),
            detail: e.to_string(),
        })
    }

    fn audit_len(&self) -> Result<u64, OrchestratorError> {
        let path = self.path(AUDIT_FILE);
        match fs::metadata(&path) {
            Ok(m) => Ok(m.len()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(0),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn read_audit(&self) -> Result<Vec<AuditEvent>, OrchestratorError> {
        let path = self.path(AUDIT_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        text.lines()
            .enumerate()
            .map(|(i, line)| {
                serde_json::from_str(line).map_err(|e| OrchestratorError::Corrupt {
                    path: AUDIT_FILE.into(),
                    detail: format!("line {}: {e}", i + 1),
                })
            })
            .collect()
    }

    /// Appends events with consecutive logical timestamps.
    pub fn append_events(&self, events: &[PendingEvent]) -> Result<(), OrchestratorError> {
        if events.is_empty() {
            return Ok(());
        }
        let path = self.path(AUDIT_FILE);
        let text = fs::read_to_string(&path).unwrap_or_default();
        let mut ts = text.lines().count() as u64;
        let mut buf = String::new();
        for e in events {
            ts += 1;
            let line = AuditEvent {
                ts,
                branch: e.branch,
                agent: e.agent,
                event: e.event.to_string(),
                payload: e.payload.clone(),
            };
            buf.push_str(&serde_json::to_string(&line).expect("events serialize"));
            buf.push('\n');
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        f.write_all(buf.as_bytes()).map_err(io_err(&path))?;
        f.sync_data().map_err(io_err(&path))
    }

    fn tracked_files(&self) -> Result<BTreeMap<String, String>, OrchestratorError> {
        let mut out = BTreeMap::new();
        let mut stack = vec![self.root.clone()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
                let entry = entry.map_err(io_err(&dir))?;
                let path = entry.path();
                let name = entry.file_name().to_string_lossy().into_owned();
                if name.starts_with('.') {
                    continue;
                }
                if path.is_dir() {
                    stack.push(path);
                    continue;
                }
                let rel = path
                    .strip_prefix(&self.root)
                    .expect("walk stays under root")
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy().into_owned())
                    .collect::<Vec<_>>()
                    .join("/");
                if rel == MANIFEST_FILE || rel == AUDIT_FILE {
                    continue;
                }
                let bytes = fs::read(&path).map_err(io_err(&path))?;
                out.insert(rel, sha256_hex(&bytes));
            }
        }
        Ok(out)
    }

    /// Records the hash of every file and the committed audit prefix.
    pub fn commit(&self) -> Result<(), OrchestratorError> {
        let audit = fs::read(self.path(AUDIT_FILE)).unwrap_or_default();
        let manifest = Manifest {
            files: self.tracked_files()?,
            audit: AuditCommit {
                bytes: audit.len() as u64,
                sha256: sha256_hex(&audit),
            },
        };
        self.write_json(MANIFEST_FILE, &manifest)
    }

    /// Checks every committed file against the manifest. With `repair`, an
    /// audit log that grew past its committed length (an interrupted phase)
    /// is cut back to the committed prefix; without it the directory is
    /// left untouched.
    pub fn verify(&self, repair: bool) -> Result<(), OrchestratorError> {
        let manifest: Manifest = self.read_json(MANIFEST_FILE)?;
        for (rel, expected) in &manifest.files {
            let path = self.path(rel);
            let bytes = fs::read(&path).map_err(|e| OrchestratorError::Corrupt {
                path: rel.clone(),
                detail: format!("unreadable: {e}"),
            })?;
            let actual = sha256_hex(&bytes);
            if &actual != expected {
                return Err(OrchestratorError::Corrupt {
                    path: rel.clone(),
                    detail: format!("hash mismatch: expected {expected}, found {actual}"),
                });
            }
        }
        let len = self.audit_len()?;
        let committed = manifest.audit.bytes;
        if len < committed {
            return Err(OrchestratorError::Corrupt {
                path: AUDIT_FILE.into(),
                detail: format!("truncated to {len} of {committed} committed bytes"),
            });
        }
        let path = self.path(AUDIT_FILE);
        let bytes = fs::read(&path).unwrap_or_default();
        if sha256_hex(&bytes[..committed as usize]) != manifest.audit.sha256 {
            return Err(OrchestratorError::Corrupt {
                path: AUDIT_FILE.into(),
                detail: "committed events were modified".into(),
            });
        }
        if len > committed && repair {
            log::warn!(
                "discarding {} uncommitted audit bytes in {}",
                len - committed,
                self.root.display()
            );
            let f = OpenOptions::new().write(true).open(&path).map_err(io_err(&path))?;
            f.set_len(committed).map_err(io_err(&path))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn events_get_consecutive_logical_timestamps() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path());
        run.append_events(&[PendingEvent::job(Agent::Orchestrator, "a", json!({}))]).unwrap();
        run.append_events(&[
            PendingEvent::branch(1, Agent::Editing, "b", json!({"x": 1})),
            PendingEvent::branch(2, Agent::Critic, "c", json!(null)),
        ])
        .unwrap();
        let events = run.read_audit().unwrap();
        assert_eq!(events.iter().map(|e| e.ts).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(events[1].branch, Some(1));
        let text = fs::read_to_string(dir.path().join(AUDIT_FILE)).unwrap();
        assert!(text.starts_with(r#"{"ts":1,"branch":null,"agent":"orchestrator","event":"a","payload":{}}"#));
    }

    #[test]
    fn verify_detects_tampering_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path());
        run.write_json("a/b.json", &json!({"k": 1})).unwrap();
        run.append_events(&[PendingEvent::job(Agent::Orchestrator, "x", json!({}))]).unwrap();
        run.commit().unwrap();
        run.verify(false).unwrap();

        // uncommitted tail is rolled back only when repairing
        run.append_events(&[PendingEvent::job(Agent::Orchestrator, "y", json!({}))]).unwrap();
        run.verify(false).unwrap();
        assert_eq!(run.read_audit().unwrap().len(), 2);
        run.verify(true).unwrap();
        assert_eq!(run.read_audit().unwrap().len(), 1);

        let audit = dir.path().join(AUDIT_FILE);
        let bytes = fs::read(&audit).unwrap();
        fs::write(&audit, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(run.verify(true), Err(OrchestratorError::Corrupt { .. })));
        fs::write(&audit, &bytes).unwrap();

        fs::write(dir.path().join("a/b.json"), "{}").unwrap();
        match run.verify(true) {
            Err(OrchestratorError::Corrupt { path, .. }) => assert_eq!(path, "a/b.json"),
            other => panic!("{other:?}"),
        }
    }
}
