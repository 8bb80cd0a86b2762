//! Runs an untrusted processor once per chunk.
//!
//! Every chunk gets a fresh process with an empty environment, an empty
//! scratch directory and its own process group. Where the kernel allows it
//! the process also gets private network and IPC namespaces (inside a user
//! namespace when the engine is unprivileged). The whole group is killed at the deadline. A chunk whose process times out
//! or fails contributes one row of schema defaults and nothing else.

use std::io::{self, BufRead, BufReader, Write};
use std::os::unix::fs::PermissionsExt;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;
use vidpriv_core::table::{assemble, ChunkOutput, IntermediateTable, RunStatus, TableMeta};
use vidpriv_core::Chunk;

use crate::trace_io::frame_line;

/// Output lines longer than this are cut.
pub const MAX_LINE_BYTES: usize = 64 * 1024;

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("processor {0} does not exist")]
    Missing(PathBuf),
    #[error("processor {0} is not an executable file")]
    NotExecutable(PathBuf),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Fails unless `path` names an executable regular file.
pub fn check_executable(path: &Path) -> Result<(), SandboxError> {
    let meta = std::fs::metadata(path).map_err(|_| SandboxError::Missing(path.to_path_buf()))?;
    if !meta.is_file() || meta.permissions().mode() & 0o111 == 0 {
        return Err(SandboxError::NotExecutable(path.to_path_buf()));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub workers: usize,
    /// Hold each chunk's result until its full timeout has elapsed, so
    /// run time reveals nothing about the chunk.
    pub pad_to_timeout: bool,
    /// Try to give each process private namespaces.
    pub isolate: bool,
    /// Permutes the order chunks are handed to workers. Only useful for
    /// checking that the table does not depend on it.
    pub order_seed: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            workers: thread::available_parallelism().map_or(1, |n| n.get()),
            pad_to_timeout: false,
            isolate: true,
            order_seed: None,
        }
    }
}

/// The processor's stdin: a header line then one frame per line.
pub fn chunk_input(camera_id: &str, fps: u32, chunk: &Chunk) -> Vec<u8> {
    let mut out = format!("{camera_id}\t{}\t{fps}\t{}\n", chunk.t0, chunk.frames.len()).into_bytes();
    for f in &chunk.frames {
        out.extend_from_slice(frame_line(f).as_bytes());
        out.push(b'\n');
    }
    out
}

/// Keeps the first `max_rows` lines, each cut at [`MAX_LINE_BYTES`], and
/// reads the rest to EOF so the writer never blocks.
pub fn collect_rows(mut r: impl BufRead, max_rows: usize) -> Vec<String> {
    let mut rows = Vec::new();
    let mut cur: Vec<u8> = Vec::new();
    let mut open = false;
    loop {
        let buf = match r.fill_buf() {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(_) => break,
        };
        if buf.is_empty() {
            break;
        }
        let (piece, used, ends) = match buf.iter().position(|&b| b == b'\n') {
            Some(p) => (&buf[..p], p + 1, true),
            None => (buf, buf.len(), false),
        };
        if rows.len() < max_rows {
            let room = MAX_LINE_BYTES.saturating_sub(cur.len());
            cur.extend_from_slice(&piece[..piece.len().min(room)]);
            open = true;
            if ends {
                rows.push(finish_line(&mut cur));
                open = false;
            }
        }
        r.consume(used);
    }
    if open && rows.len() < max_rows {
        rows.push(finish_line(&mut cur));
    }
    rows
}

fn finish_line(cur: &mut Vec<u8>) -> String {
    if cur.last() == Some(&b'\r') {
        cur.pop();
    }
    let s = String::from_utf8_lossy(cur).into_owned();
    cur.clear();
    s
}

fn kill_group(child: &Child) {
    // SAFETY: signalling the process group we created for this child.
    unsafe {
        libc::killpg(child.id() as libc::pid_t, libc::SIGKILL);
    }
}

fn write_proc(path: &[u8], data: &[u8]) {
    // SAFETY: plain open/write/close on a NUL-terminated path.
    unsafe {
        let fd = libc::open(path.as_ptr().cast(), libc::O_WRONLY);
        if fd >= 0 {
            libc::write(fd, data.as_ptr().cast(), data.len());
            libc::close(fd);
        }
    }
}

fn spawn(exe: &Path, scratch: &Path, isolate: bool) -> io::Result<Child> {
    let mut cmd = Command::new(exe);
    cmd.env_clear()
        .current_dir(scratch)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .process_group(0);
    // Identity maps for the unprivileged path, built before fork.
    // SAFETY: getuid/getgid cannot fail.
    let (uid, gid) = unsafe { (libc::getuid(), libc::getgid()) };
    let uid_map = format!("{uid} {uid} 1").into_bytes();
    let gid_map = format!("{gid} {gid} 1").into_bytes();
    // SAFETY: only async-signal-safe syscalls between fork and exec.
    unsafe {
        cmd.pre_exec(move || {
            let no_core = libc::rlimit {
                rlim_cur: 0,
                rlim_max: 0,
            };
            libc::setrlimit(libc::RLIMIT_CORE, &no_core);
            if isolate {
                let ns = libc::CLONE_NEWNET | libc::CLONE_NEWIPC;
                // A privileged caller can drop the network directly and
                // keeps its file access. Otherwise a user namespace is
                // needed, mapped to the caller's own ids.
                if libc::unshare(ns) != 0 && libc::unshare(libc::CLONE_NEWUSER | ns) == 0 {
                    write_proc(b"/proc/self/setgroups\0", b"deny");
                    write_proc(b"/proc/self/uid_map\0", &uid_map);
                    write_proc(b"/proc/self/gid_map\0", &gid_map);
                }
            }
            Ok(())
        });
    }
    cmd.spawn()
}

/// Runs one chunk to completion or to the deadline.
pub fn run_chunk(
    exe: &Path,
    input: Vec<u8>,
    timeout: Duration,
    max_rows: u64,
    opts: &RunOptions,
) -> (RunStatus, Vec<String>) {
    let start = Instant::now();
    let deadline = start + timeout;
    let result = run_chunk_inner(exe, input, deadline, max_rows, opts.isolate);
    if opts.pad_to_timeout {
        thread::sleep(deadline.saturating_duration_since(Instant::now()));
    }
    match result {
        Some((status, lines)) if status.success() => (RunStatus::Completed, lines),
        Some(_) => (RunStatus::Crashed, Vec::new()),
        None => (RunStatus::TimedOut, Vec::new()),
    }
}

/// `None` on timeout; spawn failures count as a failed exit.
fn run_chunk_inner(
    exe: &Path,
    input: Vec<u8>,
    deadline: Instant,
    max_rows: u64,
    isolate: bool,
) -> Option<(ExitStatus, Vec<String>)> {
    let scratch = tempfile::tempdir().ok()?;
    let mut child = match spawn(exe, scratch.path(), isolate) {
        Ok(c) => c,
        Err(_) => return Some((failed_status(), Vec::new())),
    };
    let mut stdin = child.stdin.take()?;
    let stdout = child.stdout.take()?;
    thread::spawn(move || {
        let _ = stdin.write_all(&input);
    });
    let (tx, rx) = mpsc::channel();
    let cap = usize::try_from(max_rows).unwrap_or(usize::MAX);
    thread::spawn(move || {
        let _ = tx.send(collect_rows(BufReader::new(stdout), cap));
    });

    let status = loop {
        match child.try_wait() {
            Ok(Some(st)) => break Some(st),
            Ok(None) if Instant::now() >= deadline => break None,
            Ok(None) => thread::sleep(Duration::from_millis(2).min(deadline.saturating_duration_since(Instant::now()))),
            Err(_) => break None,
        }
    };
    // Also reaps anything the processor left running in its group.
    kill_group(&child);
    let _ = child.wait();
    let status = status?;
    // Output counts only if the pipe closes by the deadline; a descendant
    // that escaped the group and holds stdout open forfeits the chunk.
    let wait = deadline.saturating_duration_since(Instant::now()) + Duration::from_millis(50);
    let lines = rx.recv_timeout(wait).ok()?;
    Some((status, lines))
}

fn failed_status() -> ExitStatus {
    use std::os::unix::process::ExitStatusExt;
    ExitStatus::from_raw(127 << 8)
}

/// Runs the processor over every chunk and assembles the table. The result
/// depends only on the chunks, never on completion order.
pub fn run_processor(
    exe: &Path,
    chunks: &[Chunk],
    camera_id: &str,
    fps: u32,
    meta: TableMeta,
    timeout: Duration,
    opts: &RunOptions,
) -> Result<IntermediateTable, SandboxError> {
    check_executable(exe)?;
    let mut order: Vec<usize> = (0..chunks.len()).collect();
    if let Some(seed) = opts.order_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| SandboxError::Pool(e.to_string()))?;
    let max_rows = meta.max_rows;
    let outputs: Vec<ChunkOutput> = pool.install(|| {
        order
            .par_iter()
            .with_max_len(1)
            .map(|&i| {
                let c = &chunks[i];
                let (status, lines) = run_chunk(exe, chunk_input(camera_id, fps, c), timeout, max_rows, opts);
                ChunkOutput {
                    chunk_index: c.chunk_index,
                    region: c.region_id,
                    status,
                    lines,
                }
            })
            .collect()
    });
    Ok(assemble(meta, outputs))
}
