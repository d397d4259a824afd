//! Chat sessions: role, append-only history, optional JSON-lines persistence.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    ContractManager,
    Support,
    SupportUnitManager,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::ContractManager, Role::Support, Role::SupportUnitManager];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::ContractManager => "contract_manager",
            Role::Support => "support",
            Role::SupportUnitManager => "support_unit_manager",
        }
    }

    /// Built-in system context. Only the support-unit-manager text is
    /// prescribed; the other two are written in the same register.
    pub fn default_context(self) -> &'static str {
        match self {
            Role::ContractManager => {
                "You are an assistant specialized in answering questions about administrative contracts, who helps contract managers follow the obligations, terms and deadlines of the contracts under their responsibility."
            }
            Role::Support => {
                "You are an assistant specialized in answering questions about administrative contracts, who provides detailed operational information about the contracts to the contract management support team."
            }
            Role::SupportUnitManager => {
                "You are an assistant specialized in answering questions about administrative contracts, who provides management and summarized information about the contracts."
            }
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown role {0:?}; expected one of contract_manager, support, support_unit_manager")]
pub struct UnknownRole(pub String);

impl FromStr for Role {
    type Err = UnknownRole;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s.trim())
            .ok_or_else(|| UnknownRole(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatSession {
    pub id: String,
    pub role: Role,
    pub history: Vec<Turn>,
    pub created_at: DateTime<Utc>,
}

impl ChatSession {
    pub fn new(id: impl Into<String>, role: Role) -> Self {
        Self {
            id: id.into(),
            role,
            history: Vec::new(),
            created_at: Utc::now(),
        }
    }

    /// Last `h` turns, oldest first.
    pub fn window(&self, h: usize) -> &[Turn] {
        &self.history[self.history.len().saturating_sub(h)..]
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error("session storage: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt session file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

/// One line of a session file. The first line is the header.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Session {
        id: String,
        role: Role,
        created_at: DateTime<Utc>,
    },
    Turn(Turn),
}

pub type SharedSession = Arc<tokio::sync::Mutex<ChatSession>>;

/// In-memory sessions; with a directory, each session is mirrored to
/// `<dir>/<id>.jsonl` and reloaded on open.
#[derive(Default)]
pub struct SessionStore {
    sessions: RwLock<HashMap<String, SharedSession>>,
    dir: Option<PathBuf>,
}

impl SessionStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn persistent(dir: &Path) -> Result<Self, SessionError> {
        fs::create_dir_all(dir)?;
        let mut sessions = HashMap::new();
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            let session = load(&path)?;
            sessions.insert(session.id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
        }
        Ok(Self {
            sessions: RwLock::new(sessions),
            dir: Some(dir.to_owned()),
        })
    }

    pub fn create(&self, role: Role) -> Result<String, SessionError> {
        let id = new_id();
        let session = ChatSession::new(id.clone(), role);
        if let Some(path) = self.file_for(&id) {
            let header = Record::Session {
                id: id.clone(),
                role,
                created_at: session.created_at,
            };
            append(&path, &header)?;
        }
        self.sessions
            .write()
            .insert(id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Result<SharedSession, SessionError> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::NotFound(id.to_owned()))
    }

    /// Appends a turn to an already-locked session and mirrors it to disk.
    pub fn record_turn(&self, session: &mut ChatSession, turn: Turn) -> Result<(), SessionError> {
        if let Some(path) = self.file_for(&session.id) {
            append(&path, &Record::Turn(turn.clone()))?;
        }
        session.history.push(turn);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sessions.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn file_for(&self, id: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{id}.jsonl")))
    }
}

fn new_id() -> String {
    use rand::RngCore;
    let mut bytes = [0u8; 12];
    rand::thread_rng().fill_bytes(&mut bytes);
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn append(path: &Path, record: &Record) -> Result<(), SessionError> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_string(record).expect("session record serializes");
    line.push('\n');
    f.write_all(line.as_bytes())?;
    Ok(())
}

fn load(path: &Path) -> Result<ChatSession, SessionError> {
    let corrupt = |message: String| SessionError::Corrupt {
        path: path.to_owned(),
        message,
    };
    let mut session: Option<ChatSession> = None;
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| corrupt(format!("line {}: {e}", n + 1)))?;
        match (record, session.as_mut()) {
            (Record::Session { id, role, created_at }, None) => {
                session = Some(ChatSession {
                    id,
                    role,
                    history: Vec::new(),
                    created_at,
                })
            }
            (Record::Turn(t), Some(s)) => s.history.push(t),
            _ => return Err(corrupt(format!("line {}: unexpected record", n + 1))),
        }
    }
    session.ok_or_else(|| corrupt("missing session header".into()))
}
