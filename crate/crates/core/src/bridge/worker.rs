//! Worker lifecycle: launch, handshake, request/response with timeouts,
//! kill-and-respawn recovery.

use std::collections::{BTreeMap, HashSet};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use tracing::{debug, warn};

use super::protocol::{ExecStatus, ExecuteRequest, ExecutionResult, Frame, Split, PROTOCOL_VERSION};
use super::BridgeError;
use crate::stub::{StubOptions, StubWorker};

/// Prefix of worker commands served by an in-process [`StubWorker`].
pub const BUILTIN_STUB: &str = "builtin:stub";

pub const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);

/// Raw byte streams of a launched worker plus a way to stop it.
pub struct WorkerIo {
    pub pid: Option<u32>,
    pub stdin: Box<dyn Write + Send>,
    pub stdout: Box<dyn Read + Send>,
    pub terminator: Box<dyn Terminate>,
}

pub trait Terminate: Send {
    fn terminate(&mut self);
}

/// Starts fresh worker instances; called again on every respawn.
pub trait WorkerLauncher: Send + Sync {
    fn launch(&self) -> Result<WorkerIo, BridgeError>;
    fn describe(&self) -> String;
}

/// Launches an external program speaking the protocol on stdio.
#[derive(Debug, Clone)]
pub struct ProcessLauncher {
    program: String,
    args: Vec<String>,
}

impl ProcessLauncher {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }
}

struct ChildTerminator(Child);

impl Terminate for ChildTerminator {
    fn terminate(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

impl WorkerLauncher for ProcessLauncher {
    fn launch(&self) -> Result<WorkerIo, BridgeError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| BridgeError::Spawn {
                command: self.describe(),
                source,
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        if let Some(stderr) = child.stderr.take() {
            let pid = child.id();
            thread::spawn(move || {
                for line in BufReader::new(stderr).lines().map_while(Result::ok) {
                    debug!(pid, "worker stderr: {line}");
                }
            });
        }
        Ok(WorkerIo {
            pid: Some(child.id()),
            stdin: Box::new(stdin),
            stdout: Box::new(stdout),
            terminator: Box::new(ChildTerminator(child)),
        })
    }

    fn describe(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Runs a [`StubWorker`] on a thread connected through OS pipes.
#[derive(Debug, Clone, Default)]
pub struct InProcessLauncher {
    options: StubOptions,
}

impl InProcessLauncher {
    pub fn new(options: StubOptions) -> Self {
        Self { options }
    }
}

struct FlagTerminator(Arc<AtomicBool>);

impl Terminate for FlagTerminator {
    fn terminate(&mut self) {
        self.0.store(true, Ordering::SeqCst);
    }
}

impl WorkerLauncher for InProcessLauncher {
    fn launch(&self) -> Result<WorkerIo, BridgeError> {
        let spawn_err = |source| BridgeError::Spawn {
            command: self.describe(),
            source,
        };
        let (engine_reader, worker_writer) = io::pipe().map_err(spawn_err)?;
        let (worker_reader, engine_writer) = io::pipe().map_err(spawn_err)?;
        let cancel = Arc::new(AtomicBool::new(false));
        let worker = StubWorker::new(self.options.clone());
        let flag = Arc::clone(&cancel);
        thread::Builder::new()
            .name("stub-worker".into())
            .spawn(move || {
                let exit = worker.serve(BufReader::new(worker_reader), worker_writer, &flag);
                debug!("in-process stub worker exited: {exit:?}");
            })
            .map_err(spawn_err)?;
        Ok(WorkerIo {
            pid: None,
            stdin: Box::new(engine_writer),
            stdout: Box::new(engine_reader),
            terminator: Box::new(FlagTerminator(cancel)),
        })
    }

    fn describe(&self) -> String {
        let mut text = BUILTIN_STUB.to_owned();
        text.push_str(" --tasks ");
        text.push_str(&self.options.tasks.join(","));
        if let Some(sentinel) = self.options.sealed_sentinel {
            text.push_str(&format!(" --sealed-sentinel {sentinel}"));
        }
        text
    }
}

/// Builds the launcher for a configured worker command. `builtin:stub [args]`
/// selects the in-process reference worker; anything else is split on
/// whitespace into program and arguments.
pub fn launcher_for(command: &str) -> Result<Arc<dyn WorkerLauncher>, BridgeError> {
    let mut words = command.split_whitespace();
    let program = words.next().ok_or_else(|| BridgeError::Spawn {
        command: command.to_owned(),
        source: io::Error::new(io::ErrorKind::InvalidInput, "empty worker command"),
    })?;
    let args: Vec<String> = words.map(str::to_owned).collect();
    if program == BUILTIN_STUB {
        let options = StubOptions::from_args(&args).map_err(|msg| BridgeError::Spawn {
            command: command.to_owned(),
            source: io::Error::new(io::ErrorKind::InvalidInput, msg),
        })?;
        Ok(Arc::new(InProcessLauncher::new(options)))
    } else {
        Ok(Arc::new(ProcessLauncher::new(program, args)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Liveness {
    Live,
    Dead,
}

struct Session {
    stdin: Box<dyn Write + Send>,
    lines: Receiver<String>,
    terminator: Box<dyn Terminate>,
}

impl Session {
    fn send(&mut self, frame: &Frame) -> io::Result<()> {
        let mut line = frame.to_line();
        line.push('\n');
        self.stdin.write_all(line.as_bytes())?;
        self.stdin.flush()
    }

    fn close(mut self) {
        let _ = self.send(&Frame::Shutdown);
        self.terminator.terminate();
    }
}

/// A live connection to one worker, owned by exactly one run.
pub struct WorkerHandle {
    launcher: Arc<dyn WorkerLauncher>,
    task: String,
    session: Option<Session>,
    pid: Option<u32>,
    protocol: u32,
    tasks: Vec<String>,
    used_ids: HashSet<String>,
    handshake_timeout: Duration,
    restarts: usize,
}

impl std::fmt::Debug for WorkerHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerHandle")
            .field("worker", &self.launcher.describe())
            .field("task", &self.task)
            .field("pid", &self.pid)
            .field("protocol", &self.protocol)
            .field("tasks", &self.tasks)
            .field("liveness", &self.liveness())
            .finish()
    }
}

/// Starts the worker named by `command` and completes the handshake.
pub fn spawn_worker(command: &str, task: &str) -> Result<WorkerHandle, BridgeError> {
    WorkerHandle::spawn(launcher_for(command)?, task)
}

impl WorkerHandle {
    pub fn spawn(launcher: Arc<dyn WorkerLauncher>, task: &str) -> Result<Self, BridgeError> {
        Self::spawn_with_timeout(launcher, task, HANDSHAKE_TIMEOUT)
    }

    pub fn spawn_with_timeout(
        launcher: Arc<dyn WorkerLauncher>,
        task: &str,
        handshake_timeout: Duration,
    ) -> Result<Self, BridgeError> {
        let mut handle = Self {
            launcher,
            task: task.to_owned(),
            session: None,
            pid: None,
            protocol: 0,
            tasks: Vec::new(),
            used_ids: HashSet::new(),
            handshake_timeout,
            restarts: 0,
        };
        handle.start()?;
        Ok(handle)
    }

    fn start(&mut self) -> Result<(), BridgeError> {
        let io = self.launcher.launch()?;
        let (tx, rx) = mpsc::channel();
        let stdout = io.stdout;
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                match line {
                    Ok(line) => {
                        if tx.send(line).is_err() {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }
        });
        let mut session = Session {
            stdin: io.stdin,
            lines: rx,
            terminator: io.terminator,
        };
        let handshake = (|| {
            session
                .send(&Frame::Hello {
                    protocol: PROTOCOL_VERSION,
                })
                .map_err(|_| BridgeError::WorkerDead)?;
            let deadline = Instant::now() + self.handshake_timeout;
            loop {
                let remaining = deadline.saturating_duration_since(Instant::now());
                let line = match session.lines.recv_timeout(remaining) {
                    Ok(line) => line,
                    Err(RecvTimeoutError::Timeout) => return Err(BridgeError::HandshakeTimeout),
                    Err(RecvTimeoutError::Disconnected) => return Err(BridgeError::WorkerDead),
                };
                match Frame::parse(&line) {
                    Ok(Frame::Ready { protocol, tasks }) => return Ok((protocol, tasks)),
                    Ok(other) => {
                        return Err(BridgeError::Protocol(format!(
                            "expected ready frame, got {other:?}"
                        )))
                    }
                    Err(_) => debug!("ignoring non-protocol line during handshake: {line}"),
                }
            }
        })();
        let (protocol, tasks) = match handshake {
            Ok(ok) => ok,
            Err(err) => {
                session.terminator.terminate();
                return Err(err);
            }
        };
        if !tasks.iter().any(|t| t == &self.task) {
            session.close();
            return Err(BridgeError::TaskUnsupported {
                task: self.task.clone(),
                advertised: tasks,
            });
        }
        self.pid = io.pid;
        self.protocol = protocol;
        self.tasks = tasks;
        self.session = Some(session);
        Ok(())
    }

    pub fn pid(&self) -> Option<u32> {
        self.pid
    }

    pub fn protocol_version(&self) -> u32 {
        self.protocol
    }

    pub fn advertised_tasks(&self) -> &[String] {
        &self.tasks
    }

    pub fn task(&self) -> &str {
        &self.task
    }

    pub fn liveness(&self) -> Liveness {
        if self.session.is_some() {
            Liveness::Live
        } else {
            Liveness::Dead
        }
    }

    /// Number of times the worker has been replaced after a kill or crash.
    pub fn restarts(&self) -> usize {
        self.restarts
    }

    fn kill(&mut self) {
        if let Some(mut session) = self.session.take() {
            session.terminator.terminate();
        }
    }

    fn respawn(&mut self) -> Result<(), BridgeError> {
        self.kill();
        self.restarts += 1;
        warn!(worker = %self.launcher.describe(), "respawning worker");
        self.start()
    }

    /// Restarts a dead worker; no-op when live.
    pub fn ensure_live(&mut self) -> Result<(), BridgeError> {
        if self.session.is_none() {
            self.respawn()?;
        }
        Ok(())
    }

    /// Sends one execute request and waits for its result.
    ///
    /// A worker that exceeds `timeout_s` is killed and replaced; the result
    /// then has status `timeout`. A crashed worker yields `WorkerDead` and is
    /// restarted on the next call.
    pub fn execute_candidate(&mut self, request: ExecuteRequest) -> Result<ExecutionResult, BridgeError> {
        if !(request.timeout_s > 0.0) {
            return Err(BridgeError::InvalidRequest("timeout_s must be > 0".into()));
        }
        if !self.used_ids.insert(request.id.clone()) {
            return Err(BridgeError::InvalidRequest(format!(
                "request id `{}` already used in this session",
                request.id
            )));
        }
        self.ensure_live()?;
        let id = request.id.clone();
        let timeout = Duration::from_secs_f64(request.timeout_s);
        let session = self.session.as_mut().expect("live session");
        if session.send(&Frame::Execute(request.clone())).is_err() {
            self.kill();
            return Err(BridgeError::WorkerDead);
        }

        let deadline = Instant::now() + timeout;
        loop {
            let session = self.session.as_mut().expect("live session");
            let remaining = deadline.saturating_duration_since(Instant::now());
            let line = match session.lines.recv_timeout(remaining) {
                Ok(line) => line,
                Err(RecvTimeoutError::Timeout) => {
                    self.respawn()?;
                    let mut result = ExecutionResult::failed(
                        id,
                        ExecStatus::Timeout,
                        format!("execution timed out after {}s", request.timeout_s),
                    );
                    result.duration_s = request.timeout_s;
                    return Ok(result);
                }
                Err(RecvTimeoutError::Disconnected) => {
                    self.kill();
                    return Err(BridgeError::WorkerDead);
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let violation = match Frame::parse(&line) {
                Ok(Frame::Result(frame)) if frame.id == id => return Ok(frame.into()),
                Ok(Frame::Result(frame)) => {
                    format!("out-of-order result: expected id `{id}`, got `{}`", frame.id)
                }
                Ok(Frame::Error { id: err_id, feedback }) if err_id.as_deref() == Some(id.as_str()) => {
                    return Ok(ExecutionResult::failed(id, ExecStatus::Error, feedback));
                }
                Ok(other) => format!("unexpected frame while awaiting `{id}`: {other:?}"),
                Err(err) => format!("malformed frame: {err}"),
            };
            self.respawn()?;
            return Err(BridgeError::Protocol(violation));
        }
    }

    /// Executes a parameterized pair with a concrete assignment.
    pub fn execute_with_params(
        &mut self,
        id: String,
        pair: &crate::automl::ParameterizedPair,
        assignment: &BTreeMap<String, serde_json::Value>,
        split: Split,
        timeout_s: f64,
    ) -> Result<ExecutionResult, BridgeError> {
        pair.check_assignment(assignment)?;
        self.execute_candidate(ExecuteRequest {
            id,
            task: self.task.clone(),
            split,
            source: pair.candidate.pre_source.clone(),
            pre_name: pair.candidate.pre_name.clone(),
            post_name: pair.candidate.post_name.clone(),
            params: Some(assignment.clone()),
            timeout_s,
        })
    }

    pub fn shutdown(mut self) {
        if let Some(session) = self.session.take() {
            session.close();
        }
    }
}

impl Drop for WorkerHandle {
    fn drop(&mut self) {
        if let Some(session) = self.session.take() {
            session.close();
        }
    }
}
