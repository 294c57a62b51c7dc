//! Session persistence. One [`MappingSession`] per pseudonymized request;
//! sessions are created once and read-only afterwards. Two backends: an
//! in-memory map (default) and a directory of JSON files, one per session.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::RwLock;

use thiserror::Error;

use crate::pipeline::MappingSession;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("session {0:?} not found")]
    NotFound(String),
    #[error("session {0:?} already stored")]
    Conflict(String),
    #[error("session store I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("session record corrupt: {0}")]
    Corrupt(#[from] serde_json::Error),
}

pub trait SessionStore: Send + Sync {
    fn put(&self, session: &MappingSession) -> Result<(), StoreError>;
    fn get(&self, session_id: &str) -> Result<MappingSession, StoreError>;
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    sessions: RwLock<HashMap<String, MappingSession>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        MemoryStore::default()
    }
}

impl SessionStore for MemoryStore {
    fn put(&self, session: &MappingSession) -> Result<(), StoreError> {
        let mut sessions = self.sessions.write().expect("store lock poisoned");
        if sessions.contains_key(&session.session_id) {
            return Err(StoreError::Conflict(session.session_id.clone()));
        }
        sessions.insert(session.session_id.clone(), session.clone());
        Ok(())
    }

    fn get(&self, session_id: &str) -> Result<MappingSession, StoreError> {
        self.sessions
            .read()
            .expect("store lock poisoned")
            .get(session_id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(session_id.to_string()))
    }
}

/// Append-only directory store: `<dir>/<session_id>.json`.
#[derive(Debug)]
pub struct DirStore {
    dir: PathBuf,
}

impl DirStore {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(DirStore { dir })
    }

    fn path_for(&self, session_id: &str) -> PathBuf {
        // Ids are uuids or caller-chosen names; keep the path component safe.
        let safe: String = session_id
            .chars()
            .map(|c| {
                if c.is_alphanumeric() || c == '-' || c == '_' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        self.dir.join(format!("{safe}.json"))
    }
}

impl SessionStore for DirStore {
    fn put(&self, session: &MappingSession) -> Result<(), StoreError> {
        let path = self.path_for(&session.session_id);
        let file = match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(file) => file,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(StoreError::Conflict(session.session_id.clone()))
            }
            Err(e) => return Err(StoreError::Io(e)),
        };
        serde_json::to_writer_pretty(file, session)?;
        Ok(())
    }

    fn get(&self, session_id: &str) -> Result<MappingSession, StoreError> {
        let path = self.path_for(session_id);
        let contents = match std::fs::read_to_string(&path) {
            Ok(contents) => contents,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound(session_id.to_string()))
            }
            Err(e) => return Err(StoreError::Io(e)),
        };
        Ok(serde_json::from_str(&contents)?)
    }
}
