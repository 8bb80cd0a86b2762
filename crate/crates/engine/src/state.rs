//! Owner-side persistent state: the camera registry and the budget journal.
//!
//! Both live in one directory. The journal is append-only and replayed on
//! every load; admission takes an exclusive lock on the directory so that
//! concurrent submissions serialize at the ledger.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::os::unix::io::AsRawFd;
use std::path::{Path, PathBuf};

use thiserror::Error;
use vidpriv_core::owner::{CameraMeta, CameraRegistry};
use vidpriv_core::privacy::{BudgetError, BudgetLedger, JournalEntry, Reservation};

pub const STATE_DIR_ENV: &str = "VIDPRIV_STATE_DIR";

#[derive(Debug, Error)]
pub enum StateError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("journal: {0}")]
    Journal(BudgetError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StateError + '_ {
    move |source| StateError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One camera per line.
pub fn read_registry(reader: impl BufRead, path: &Path) -> Result<CameraRegistry, StateError> {
    let mut reg = CameraRegistry::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let meta: CameraMeta = serde_json::from_str(&line).map_err(|e| StateError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        reg.insert(meta);
    }
    Ok(reg)
}

pub fn write_registry(mut out: impl Write, reg: &CameraRegistry) -> io::Result<()> {
    for meta in reg.cameras.values() {
        serde_json::to_writer(&mut out, meta)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn load_registry(path: &Path) -> Result<CameraRegistry, StateError> {
    match File::open(path) {
        Ok(f) => read_registry(BufReader::new(f), path),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(CameraRegistry::new()),
        Err(e) => Err(io_err(path)(e)),
    }
}

/// A fresh ledger for every camera in the registry.
pub fn ledger_for(reg: &CameraRegistry) -> BudgetLedger {
    let mut ledger = BudgetLedger::new();
    for c in reg.cameras.values() {
        ledger.add_camera(c.camera_id.clone(), c.fps, c.n_frames, &c.policy);
    }
    ledger
}

/// Where budget decisions go. The pipeline only needs admission.
pub trait BudgetStore {
    /// Admits every reservation or none.
    fn reserve(&mut self, query_id: &str, reservations: &[Reservation]) -> Result<(), ReserveError>;
}

#[derive(Debug, Error)]
pub enum ReserveError {
    #[error("denied: {0}")]
    Denied(BudgetError),
    #[error(transparent)]
    State(#[from] StateError),
}

impl BudgetStore for BudgetLedger {
    fn reserve(&mut self, query_id: &str, reservations: &[Reservation]) -> Result<(), ReserveError> {
        self.check_and_reserve(query_id, reservations)
            .map(|_| ())
            .map_err(ReserveError::Denied)
    }
}

#[derive(Debug, Clone)]
pub struct StateDir {
    root: PathBuf,
}

impl StateDir {
    pub fn new(root: impl Into<PathBuf>) -> StateDir {
        StateDir { root: root.into() }
    }

    /// `VIDPRIV_STATE_DIR` wins over the configured directory, which wins
    /// over `./vidpriv-state`.
    pub fn locate(configured: Option<&Path>) -> StateDir {
        if let Some(dir) = std::env::var_os(STATE_DIR_ENV) {
            return StateDir::new(dir);
        }
        StateDir::new(configured.map_or_else(|| PathBuf::from("vidpriv-state"), Path::to_path_buf))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn registry_path(&self) -> PathBuf {
        self.root.join("registry.jsonl")
    }

    pub fn journal_path(&self) -> PathBuf {
        self.root.join("journal.tsv")
    }

    fn ensure(&self) -> Result<(), StateError> {
        fs::create_dir_all(&self.root).map_err(io_err(&self.root))
    }

    pub fn registry(&self) -> Result<CameraRegistry, StateError> {
        load_registry(&self.registry_path())
    }

    /// Adds or replaces a camera. The write goes through a temporary file so
    /// a crash never leaves a truncated registry.
    pub fn register(&self, meta: CameraMeta) -> Result<(), StateError> {
        self.ensure()?;
        let _lock = self.lock()?;
        let mut reg = self.registry()?;
        reg.insert(meta);
        let path = self.registry_path();
        let tmp = self.root.join("registry.jsonl.tmp");
        let f = File::create(&tmp).map_err(io_err(&tmp))?;
        write_registry(BufWriter::new(&f), &reg).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    pub fn journal(&self) -> Result<Vec<JournalEntry>, StateError> {
        let path = self.journal_path();
        let f = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let mut out = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(io_err(&path))?;
            if !line.trim().is_empty() {
                out.push(JournalEntry::parse_line(&line).map_err(StateError::Journal)?);
            }
        }
        Ok(out)
    }

    /// The registry's ledger with the journal replayed.
    pub fn ledger(&self, reg: &CameraRegistry) -> Result<BudgetLedger, StateError> {
        let mut ledger = ledger_for(reg);
        for e in self.journal()? {
            ledger.replay(&e).map_err(StateError::Journal)?;
        }
        Ok(ledger)
    }

    fn lock(&self) -> Result<DirLock, StateError> {
        let path = self.root.join(".lock");
        let f = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(io_err(&path))?;
        // SAFETY: flock on a descriptor we own; released when `f` closes.
        if unsafe { libc::flock(f.as_raw_fd(), libc::LOCK_EX) } != 0 {
            return Err(io_err(&path)(io::Error::last_os_error()));
        }
        Ok(DirLock(f))
    }
}

struct DirLock(#[allow(dead_code)] File);

/// Ledger backed by the state directory. Every admission reloads the
/// journal under the lock, so decisions made by other processes count.
pub struct JournaledLedger {
    dir: StateDir,
    registry: CameraRegistry,
}

impl JournaledLedger {
    pub fn new(dir: StateDir, registry: CameraRegistry) -> JournaledLedger {
        JournaledLedger { dir, registry }
    }
}

impl BudgetStore for JournaledLedger {
    fn reserve(&mut self, query_id: &str, reservations: &[Reservation]) -> Result<(), ReserveError> {
        self.dir.ensure()?;
        let _lock = self.dir.lock()?;
        let mut ledger = self.dir.ledger(&self.registry)?;
        let entries = ledger
            .check_and_reserve(query_id, reservations)
            .map_err(ReserveError::Denied)?;
        let path = self.dir.journal_path();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        let mut text = String::new();
        for e in &entries {
            text.push_str(&e.to_line());
            text.push('\n');
        }
        f.write_all(text.as_bytes()).map_err(io_err(&path))?;
        f.sync_all().map_err(io_err(&path))?;
        Ok(())
    }
}
