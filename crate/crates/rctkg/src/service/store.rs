//! Session persistence: one append-only JSONL event log per session.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use rctkg_core::policies::choose_action;
use rctkg_core::{Allocation, TieBreakRng};

use super::api::{ApiError, OutcomeSubmission};
use super::events::{fold, Event, EventBody, Folded};
use crate::config::Resolved;
use crate::table::timestamp;

/// Deliberate crash points for fault-injection tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Abort the process right after an outcomes event is durable, before
    /// the reply is sent.
    AfterOutcomesAppend,
}

impl Fault {
    pub fn from_env() -> Option<Fault> {
        match std::env::var("RCTKG_FAULT").ok().as_deref() {
            Some("after_outcomes_append") => Some(Fault::AfterOutcomesAppend),
            _ => None,
        }
    }
}

pub struct Session {
    pub events: Vec<Event>,
    pub folded: Folded,
    file: File,
    path: PathBuf,
}

impl Session {
    /// Validates `body` against the fold, makes it durable, then applies it.
    fn append(&mut self, body: EventBody) -> Result<&Event, ApiError> {
        let ev = Event { seq: self.folded.last_seq + 1, at: timestamp(), body };
        let mut next = self.folded.clone();
        next.apply(&ev).map_err(|e| ApiError::conflict("invalid_transition", e.to_string(), serde_json::json!({})))?;
        write_line(&mut self.file, &ev).map_err(|e| ApiError::internal(format!("{}: {e}", self.path.display())))?;
        self.folded = next;
        self.events.push(ev);
        Ok(self.events.last().expect("just pushed"))
    }
}

fn write_line(file: &mut File, ev: &Event) -> io::Result<()> {
    let mut line = serde_json::to_vec(ev).expect("events serialize");
    line.push(b'\n');
    let before = file.metadata()?.len();
    if let Err(e) = file.write_all(&line).and_then(|_| file.sync_data()) {
        // Leave no partial line behind if we can help it.
        let _ = file.set_len(before);
        return Err(e);
    }
    Ok(())
}

/// Reads a log, dropping a torn final line (no trailing newline) left by a
/// crash mid-append. Returns the events and the byte length to keep.
pub fn read_log(path: &Path) -> io::Result<(Vec<Event>, u64)> {
    let bytes = fs::read(path)?;
    let keep = match bytes.iter().rposition(|&b| b == b'\n') {
        Some(i) => i + 1,
        None => 0,
    };
    let mut events = Vec::new();
    for (n, line) in bytes[..keep].split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let ev: Event = serde_json::from_slice(line).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("{} line {}: {e}", path.display(), n + 1))
        })?;
        events.push(ev);
    }
    Ok((events, keep as u64))
}

pub struct Store {
    dir: PathBuf,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    tokens: Mutex<HashMap<String, String>>,
    fault: Option<Fault>,
}

/// Result of a create call: the session id and whether it already existed.
pub struct Created {
    pub id: String,
    pub existed: bool,
}

pub enum Recommendation {
    Pending { seq: u64, cohort_index: u32, allocation: Allocation },
    Complete,
}

impl Store {
    /// Opens `dir`, replaying every `*.jsonl` session log in it.
    pub fn open(dir: &Path, fault: Option<Fault>) -> io::Result<Store> {
        fs::create_dir_all(dir)?;
        let mut sessions = HashMap::new();
        let mut tokens = HashMap::new();
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        entries.sort();
        for path in entries {
            let (events, keep) = read_log(&path)?;
            let file = OpenOptions::new().append(true).open(&path)?;
            if file.metadata()?.len() != keep {
                file.set_len(keep)?;
                file.sync_all()?;
            }
            if events.is_empty() {
                continue;
            }
            let folded = fold(&events)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
            if let Some(t) = &folded.request_token {
                tokens.insert(t.clone(), folded.id.clone());
            }
            let id = folded.id.clone();
            sessions.insert(id, Arc::new(Mutex::new(Session { events, folded, file, path })));
        }
        Ok(Store { dir: dir.to_path_buf(), sessions: RwLock::new(sessions), tokens: Mutex::new(tokens), fault })
    }

    pub fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    pub fn ids(&self) -> Vec<String> {
        let mut v: Vec<String> = self.sessions.read().expect("session map lock").keys().cloned().collect();
        v.sort();
        v
    }

    /// Creates a session, or returns the one created earlier with the same
    /// request token.
    pub fn create(&self, config: Resolved, request_token: Option<String>) -> Result<Created, ApiError> {
        let mut tokens = self.tokens.lock().expect("token lock");
        if let Some(t) = &request_token {
            if let Some(id) = tokens.get(t) {
                return Ok(Created { id: id.clone(), existed: true });
            }
        }
        let id = uuid::Uuid::new_v4().simple().to_string();
        let path = self.dir.join(format!("{id}.jsonl"));
        let io_err = |e: io::Error| ApiError::internal(format!("{}: {e}", path.display()));
        let mut file = OpenOptions::new().create_new(true).append(true).open(&path).map_err(io_err)?;
        let ev = Event {
            seq: 0,
            at: timestamp(),
            body: EventBody::Created { id: id.clone(), config: Box::new(config.doc.clone()), request_token: request_token.clone() },
        };
        let folded = fold(std::slice::from_ref(&ev)).map_err(|e| ApiError::internal(e.to_string()))?;
        write_line(&mut file, &ev).map_err(io_err)?;
        if let Ok(d) = File::open(&self.dir) {
            let _ = d.sync_all();
        }
        let session = Session { events: vec![ev], folded, file, path };
        self.sessions.write().expect("session map lock").insert(id.clone(), Arc::new(Mutex::new(session)));
        if let Some(t) = request_token {
            tokens.insert(t, id.clone());
        }
        Ok(Created { id, existed: false })
    }

    /// Returns the pending recommendation, computing and persisting a new one
    /// if none is outstanding.
    pub fn recommend(&self, id: &str) -> Result<Recommendation, ApiError> {
        let handle = self.session(id)?;
        let mut s = handle.lock().expect("session lock");
        let f = &s.folded;
        if f.is_complete() {
            return Ok(Recommendation::Complete);
        }
        if let Some((seq, u)) = &f.pending {
            return Ok(Recommendation::Pending { seq: *seq, cohort_index: f.cohort_index, allocation: u.clone() });
        }
        let t = &f.config.trial;
        let k = f.cohort_index;
        let mut rng = TieBreakRng::for_cohort(t.seed, k as u64);
        let u = choose_action(t.policy, &t.settings, &f.state, t.cohort_size, &t.loss, t.cohorts - k, &mut rng)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        let ev = s.append(EventBody::Recommended { cohort_index: k, allocation: u.counts().to_vec() })?;
        Ok(Recommendation::Pending { seq: ev.seq, cohort_index: k, allocation: u })
    }

    /// Validates and records one cohort's outcomes.
    pub fn submit(&self, id: &str, sub: OutcomeSubmission) -> Result<(), ApiError> {
        let handle = self.session(id)?;
        let mut s = handle.lock().expect("session lock");
        sub.validate(&s.folded)?;
        s.append(EventBody::Outcomes {
            cohort_index: sub.cohort_index,
            enrolled: sub.enrolled.clone(),
            successes: sub.successes.clone(),
            skipped: sub.skipped,
        })?;
        if self.fault == Some(Fault::AfterOutcomesAppend) {
            std::process::abort();
        }
        Ok(())
    }

    /// Re-reads a session's log from disk and checks that its fold equals
    /// the in-memory state.
    pub fn verify(&self, id: &str) -> Result<bool, ApiError> {
        let handle = self.session(id)?;
        let s = handle.lock().expect("session lock");
        let (events, _) = read_log(&s.path).map_err(|e| ApiError::internal(e.to_string()))?;
        let disk = fold(&events).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(events == s.events && disk == s.folded)
    }

    /// Runs [`verify`](Self::verify) on every session; returns the ids that
    /// failed.
    pub fn verify_all(&self) -> Vec<String> {
        self.ids().into_iter().filter(|id| !matches!(self.verify(id), Ok(true))).collect()
    }
}
