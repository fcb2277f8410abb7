//! Launches a weird peer and a target peer, supervises their exchange and
//! classifies how it ended.
//!
//! The server side is spawned first. The client follows once the server
//! reports readiness over its control channel, or after the server's
//! startup grace if it never does. The supervisor then blocks on peer exits
//! (pidfds), control messages and deadlines, one event at a time. When one
//! peer exits the other gets the drain grace before it is terminated; when
//! neither exits within the run timeout both are terminated and the run is
//! a timeout. Coverage is read from the target's map file after the target
//! has been reaped.

use std::collections::{BTreeMap, HashSet};
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Read};
use std::net::{Ipv4Addr, SocketAddr, TcpListener, UdpSocket};
use std::os::fd::{AsRawFd, FromRawFd, OwnedFd};
use std::os::unix::net::UnixStream;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use weirdpeer_core::control::ControlMessage;
use weirdpeer_core::triage::parse_crash_record;
use weirdpeer_core::{CoverageMap, ExitInfo, RunOutcome, Verdict, MAP_SIZE};

use crate::env;

/// Exit status a server peer uses when its port is taken; the run is
/// retried on a fresh port.
pub const EXIT_ADDR_IN_USE: i32 = 98;

/// Descriptor number of the control channel inside a spawned peer.
pub const CHILD_CONTROL_FD: i32 = 3;

const PORT_RETRIES: usize = 5;
const TERM_GRACE: Duration = Duration::from_millis(50);
const KILL_GRACE: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    WeirdPeer,
    TargetPeer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Client,
    Server,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerSpec {
    pub path: PathBuf,
    /// `{port}` and `{addr}` are substituted per run.
    #[serde(default)]
    pub args: Vec<String>,
    pub role: Role,
    pub side: Side,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
    /// How long a server may take to report readiness before the client is
    /// started anyway; the orchestrator's fallback grace when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub startup_grace_ms: Option<u64>,
}

impl PeerSpec {
    pub fn new(path: impl Into<PathBuf>, role: Role, side: Side) -> Self {
        Self {
            path: path.into(),
            args: Vec::new(),
            role,
            side,
            env: BTreeMap::new(),
            startup_grace_ms: None,
        }
    }

    pub fn args<I, S>(mut self, args: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.args = args.into_iter().map(Into::into).collect();
        self
    }

    pub fn expanded_args(&self, port: u16) -> Vec<String> {
        self.args
            .iter()
            .map(|a| a.replace("{port}", &port.to_string()).replace("{addr}", "127.0.0.1"))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Timeouts {
    pub run_ms: u64,
    pub drain_ms: u64,
    pub ready_grace_ms: u64,
}

impl Default for Timeouts {
    fn default() -> Self {
        Self {
            run_ms: 1000,
            drain_ms: 200,
            ready_grace_ms: 500,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("cannot spawn {path}: {source}")]
    Spawn { path: PathBuf, source: io::Error },
    #[error("peer {pid} survived SIGKILL")]
    Unkillable { pid: u32 },
    #[error("no free port after {0} attempts")]
    Ports(usize),
    #[error("one peer must be the server and the other the client")]
    Sides,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    Spawned { pid: u32 },
    Message(ControlMessage),
    Exited(ExitInfo),
    Signalled(i32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub at: Duration,
    pub role: Role,
    pub kind: EventKind,
}

/// Everything observed during one supervised exchange.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub outcome: RunOutcome,
    pub weird_exit: ExitInfo,
    pub events: Vec<Event>,
    pub port: u16,
    pub pids: Vec<u32>,
}

impl RunRecord {
    /// Whether the client was spawned before the server reported Ready.
    pub fn client_preceded_ready(&self, client: Role) -> bool {
        let spawned = self
            .events
            .iter()
            .position(|e| e.role == client && matches!(e.kind, EventKind::Spawned { .. }));
        let ready = self
            .events
            .iter()
            .position(|e| e.role != client && matches!(e.kind, EventKind::Message(ControlMessage::Ready { .. })));
        match (spawned, ready) {
            (Some(s), Some(r)) => s < r,
            _ => false,
        }
    }

    pub fn signalled(&self, role: Role) -> bool {
        self.events
            .iter()
            .any(|e| e.role == role && matches!(e.kind, EventKind::Signalled(_)))
    }
}

static LEASED: Mutex<Option<HashSet<u16>>> = Mutex::new(None);

/// A loopback port reserved for one run; released on drop.
#[derive(Debug)]
pub struct PortLease(u16);

impl PortLease {
    /// Picks a port free for both TCP and UDP that no other live lease holds.
    pub fn acquire() -> Result<Self, OrchestratorError> {
        for _ in 0..64 {
            let tcp = TcpListener::bind((Ipv4Addr::LOCALHOST, 0))?;
            let port = tcp.local_addr()?.port();
            if UdpSocket::bind((Ipv4Addr::LOCALHOST, port)).is_err() {
                continue;
            }
            let mut leased = LEASED.lock().unwrap_or_else(|e| e.into_inner());
            if leased.get_or_insert_with(HashSet::new).insert(port) {
                return Ok(PortLease(port));
            }
        }
        Err(OrchestratorError::Ports(64))
    }

    pub fn port(&self) -> u16 {
        self.0
    }
}

impl Drop for PortLease {
    fn drop(&mut self) {
        let mut leased = LEASED.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(set) = leased.as_mut() {
            set.remove(&self.0);
        }
    }
}

fn pidfd_open(pid: u32) -> Option<OwnedFd> {
    // SAFETY: plain syscall; a non-negative result is a fresh descriptor we own.
    let fd = unsafe { libc::syscall(libc::SYS_pidfd_open, pid as libc::pid_t, 0) };
    if fd < 0 {
        None
    } else {
        // SAFETY: see above.
        Some(unsafe { OwnedFd::from_raw_fd(fd as i32) })
    }
}

fn exit_info(status: ExitStatus) -> ExitInfo {
    match (status.code(), status.signal()) {
        (Some(c), _) => ExitInfo::Code(c),
        (None, Some(s)) => ExitInfo::Signal(s),
        _ => ExitInfo::Unknown,
    }
}

struct Proc {
    role: Role,
    side: Side,
    child: Child,
    pidfd: Option<OwnedFd>,
    ctrl: Option<UnixStream>,
    buf: Vec<u8>,
    status: Option<ExitInfo>,
    exit_at: Option<Instant>,
    signalled: bool,
    ready: bool,
    connected: bool,
}

impl Proc {
    fn alive(&self) -> bool {
        self.status.is_none()
    }

    /// Reached the point where it talks to the other peer.
    fn engaged(&self) -> bool {
        match self.side {
            Side::Client => self.connected,
            Side::Server => self.ready,
        }
    }
}

enum ClientPeer<'a> {
    Spawned(&'a PeerSpec, &'a [(String, OsString)]),
    /// Runs inside the supervising process; gets the server address and the
    /// time left in the run.
    Inline(&'a mut dyn FnMut(SocketAddr, Duration)),
}

struct Supervisor {
    start: Instant,
    events: Vec<Event>,
    procs: Vec<Proc>,
}

impl Supervisor {
    fn log(&mut self, role: Role, kind: EventKind) {
        self.events.push(Event {
            at: self.start.elapsed(),
            role,
            kind,
        });
    }

    fn spawn(
        &mut self,
        spec: &PeerSpec,
        port: u16,
        extra_env: &[(String, OsString)],
        stderr: Stdio,
    ) -> Result<usize, OrchestratorError> {
        let (ours, theirs) = UnixStream::pair()?;
        ours.set_nonblocking(true)?;
        let mut cmd = Command::new(&spec.path);
        cmd.args(spec.expanded_args(port))
            .envs(&spec.env)
            .envs(extra_env.iter().map(|(k, v)| (k, v)))
            .env(env::CONTROL_FD, CHILD_CONTROL_FD.to_string())
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(stderr)
            .process_group(0);
        let fd = theirs.as_raw_fd();
        // SAFETY: only async-signal-safe calls between fork and exec.
        unsafe {
            cmd.pre_exec(move || {
                if fd == CHILD_CONTROL_FD {
                    let flags = libc::fcntl(fd, libc::F_GETFD);
                    if flags < 0 || libc::fcntl(fd, libc::F_SETFD, flags & !libc::FD_CLOEXEC) < 0 {
                        return Err(io::Error::last_os_error());
                    }
                } else if libc::dup2(fd, CHILD_CONTROL_FD) < 0 {
                    return Err(io::Error::last_os_error());
                }
                Ok(())
            });
        }
        let child = cmd.spawn().map_err(|source| OrchestratorError::Spawn {
            path: spec.path.clone(),
            source,
        })?;
        drop(theirs);
        let pid = child.id();
        self.procs.push(Proc {
            role: spec.role,
            side: spec.side,
            pidfd: pidfd_open(pid),
            child,
            ctrl: Some(ours),
            buf: Vec::new(),
            status: None,
            exit_at: None,
            signalled: false,
            ready: false,
            connected: false,
        });
        self.log(spec.role, EventKind::Spawned { pid });
        Ok(self.procs.len() - 1)
    }

    /// Blocks until some peer event or `deadline`, then handles what is
    /// pending.
    fn wait(&mut self, deadline: Instant) -> io::Result<()> {
        let mut fds = Vec::new();
        let mut fallback_tick = false;
        for p in &self.procs {
            if !p.alive() {
                continue;
            }
            match &p.pidfd {
                Some(fd) => fds.push(libc::pollfd {
                    fd: fd.as_raw_fd(),
                    events: libc::POLLIN,
                    revents: 0,
                }),
                None => fallback_tick = true,
            }
            if let Some(c) = &p.ctrl {
                fds.push(libc::pollfd {
                    fd: c.as_raw_fd(),
                    events: libc::POLLIN,
                    revents: 0,
                });
            }
        }
        let now = Instant::now();
        let mut wait = deadline.saturating_duration_since(now);
        if fallback_tick {
            wait = wait.min(Duration::from_millis(1));
        }
        let ms = wait.as_micros().div_ceil(1000).min(i32::MAX as u128) as i32;
        if !fds.is_empty() || ms > 0 {
            // SAFETY: `fds` is a valid array of `fds.len()` pollfd records.
            let rc = unsafe { libc::poll(fds.as_mut_ptr(), fds.len() as libc::nfds_t, ms) };
            if rc < 0 {
                let err = io::Error::last_os_error();
                if err.kind() != io::ErrorKind::Interrupted {
                    return Err(err);
                }
            }
        }
        self.pump()
    }

    fn pump(&mut self) -> io::Result<()> {
        let mut pending = Vec::new();
        for (idx, p) in self.procs.iter_mut().enumerate() {
            if let Some(ctrl) = p.ctrl.as_mut() {
                let mut chunk = [0u8; 512];
                loop {
                    match ctrl.read(&mut chunk) {
                        Ok(0) => {
                            p.ctrl = None;
                            break;
                        }
                        Ok(n) => p.buf.extend_from_slice(&chunk[..n]),
                        Err(e) if e.kind() == io::ErrorKind::WouldBlock => break,
                        Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                        Err(_) => {
                            p.ctrl = None;
                            break;
                        }
                    }
                }
                let mut used = 0;
                while let Ok(Some((msg, n))) = ControlMessage::decode(&p.buf[used..]) {
                    used += n;
                    match &msg {
                        ControlMessage::Ready { .. } if p.side == Side::Server => p.ready = true,
                        ControlMessage::Connected => p.connected = true,
                        _ => {}
                    }
                    pending.push((idx, EventKind::Message(msg)));
                }
                p.buf.drain(..used);
            }
            if p.alive() {
                if let Some(status) = p.child.try_wait()? {
                    let info = exit_info(status);
                    p.status = Some(info);
                    p.exit_at = Some(Instant::now());
                    pending.push((idx, EventKind::Exited(info)));
                }
            }
        }
        for (idx, kind) in pending {
            let role = self.procs[idx].role;
            self.log(role, kind);
        }
        Ok(())
    }

    /// SIGTERM to the peer's process group, SIGKILL if it lingers, then reap.
    fn terminate(&mut self, idx: usize) -> Result<(), OrchestratorError> {
        if !self.procs[idx].alive() {
            return Ok(());
        }
        let pid = self.procs[idx].child.id() as libc::pid_t;
        let role = self.procs[idx].role;
        self.procs[idx].signalled = true;
        for (sig, grace) in [(libc::SIGTERM, TERM_GRACE), (libc::SIGKILL, KILL_GRACE)] {
            // SAFETY: signalling the process group we created for this child.
            unsafe {
                libc::kill(-pid, sig);
            }
            self.log(role, EventKind::Signalled(sig));
            let until = Instant::now() + grace;
            while self.procs[idx].alive() && Instant::now() < until {
                self.wait(until)?;
            }
            if !self.procs[idx].alive() {
                return Ok(());
            }
        }
        Err(OrchestratorError::Unkillable { pid: pid as u32 })
    }

    /// Kills stragglers in the peers' process groups; leaves no zombies.
    fn reap_all(&mut self) -> Result<(), OrchestratorError> {
        for idx in 0..self.procs.len() {
            self.terminate(idx)?;
            let pid = self.procs[idx].child.id() as libc::pid_t;
            // SAFETY: the group leader is reaped; this clears any descendants.
            unsafe {
                libc::kill(-pid, libc::SIGKILL);
            }
        }
        Ok(())
    }
}

/// Supervises exchanges for one worker. Owns the worker's scratch files.
#[derive(Debug)]
pub struct Orchestrator {
    workdir: PathBuf,
    timeouts: Timeouts,
}

impl Orchestrator {
    pub fn new(workdir: impl Into<PathBuf>, timeouts: Timeouts) -> io::Result<Self> {
        let workdir = workdir.into();
        std::fs::create_dir_all(&workdir)?;
        Ok(Self { workdir, timeouts })
    }

    pub fn workdir(&self) -> &Path {
        &self.workdir
    }

    pub fn timeouts(&self) -> Timeouts {
        self.timeouts
    }

    pub fn coverage_path(&self) -> PathBuf {
        self.workdir.join("coverage.map")
    }

    pub fn target_stderr_path(&self) -> PathBuf {
        self.workdir.join("target.stderr")
    }

    /// One exchange between two spawned peers. `weird_env` is added to the
    /// weird peer's environment (mode, program path and so on).
    pub fn run_once(
        &mut self,
        weird: &PeerSpec,
        weird_env: &[(String, OsString)],
        target: &PeerSpec,
    ) -> Result<RunRecord, OrchestratorError> {
        if weird.side == target.side {
            return Err(OrchestratorError::Sides);
        }
        let (server, client) = if weird.side == Side::Server {
            ((weird, weird_env), (target, &[][..]))
        } else {
            ((target, &[][..]), (weird, weird_env))
        };
        self.run_with_retry(server, ClientPeer::Spawned(client.0, client.1))
    }

    /// One exchange between a spawned target server and a client running
    /// in this process.
    pub fn run_inline(
        &mut self,
        target: &PeerSpec,
        client: &mut dyn FnMut(SocketAddr, Duration),
    ) -> Result<RunRecord, OrchestratorError> {
        if target.side != Side::Server {
            return Err(OrchestratorError::Sides);
        }
        self.run_with_retry((target, &[]), ClientPeer::Inline(client))
    }

    fn run_with_retry(
        &mut self,
        server: (&PeerSpec, &[(String, OsString)]),
        mut client: ClientPeer<'_>,
    ) -> Result<RunRecord, OrchestratorError> {
        for _ in 0..PORT_RETRIES {
            let lease = PortLease::acquire()?;
            match self.attempt(server, &mut client, lease.port())? {
                Some(record) => return Ok(record),
                None => continue,
            }
        }
        Err(OrchestratorError::Ports(PORT_RETRIES))
    }

    fn reset_files(&self) -> io::Result<()> {
        std::fs::write(self.coverage_path(), vec![0u8; MAP_SIZE])?;
        Ok(())
    }

    fn read_coverage(&self) -> io::Result<CoverageMap> {
        let mut cells = std::fs::read(self.coverage_path())?;
        cells.resize(MAP_SIZE, 0);
        Ok(CoverageMap::from_cells(cells))
    }

    fn target_env(&self) -> Vec<(String, OsString)> {
        vec![(env::COVERAGE.into(), self.coverage_path().into_os_string())]
    }

    /// `None` when the server could not bind its port.
    fn attempt(
        &mut self,
        server: (&PeerSpec, &[(String, OsString)]),
        client: &mut ClientPeer<'_>,
        port: u16,
    ) -> Result<Option<RunRecord>, OrchestratorError> {
        self.reset_files()?;
        let t = self.timeouts;
        let mut sup = Supervisor {
            start: Instant::now(),
            events: Vec::new(),
            procs: Vec::new(),
        };
        let result = self.supervise(&mut sup, server, client, port, t);
        let cleanup = sup.reap_all();
        let timed_out = result?;
        cleanup?;

        let server_proc = &sup.procs[0];
        if server_proc.status == Some(ExitInfo::Code(EXIT_ADDR_IN_USE)) && !server_proc.ready {
            return Ok(None);
        }
        let find = |role: Role| sup.procs.iter().find(|p| p.role == role);
        let target = find(Role::TargetPeer);
        let weird = find(Role::WeirdPeer);
        let crashed =
            |p: Option<&Proc>| p.is_some_and(|p| matches!(p.status, Some(ExitInfo::Signal(_))) && !p.signalled);
        let verdict = if timed_out {
            Verdict::Timeout
        } else if crashed(target) {
            Verdict::TargetCrash
        } else if crashed(weird) {
            if weird.is_some_and(Proc::engaged) {
                Verdict::WeirdPeerCrashPostConnect
            } else {
                Verdict::WeirdPeerCrashPreConnect
            }
        } else {
            Verdict::CleanExit
        };
        let mut outcome = RunOutcome::new(verdict, self.read_coverage()?);
        outcome.target_exit = target.and_then(|p| p.status).unwrap_or_default();
        outcome.duration_ms = sup.start.elapsed().as_millis() as u64;
        if verdict == Verdict::TargetCrash {
            let mut text = String::new();
            if let Ok(mut f) = File::open(self.target_stderr_path()) {
                let _ = f.read_to_string(&mut text);
            }
            outcome.crash_evidence = Some(parse_crash_record(&text));
        }
        let spawned_at = sup.events.iter().find_map(|e| match e.kind {
            EventKind::Spawned { .. } if e.role == server_proc.role => Some(e.at),
            _ => None,
        });
        outcome.ready_latency_ms = sup.events.iter().find_map(|e| match (&e.kind, spawned_at) {
            (EventKind::Message(ControlMessage::Ready { .. }), Some(s)) if e.role == server_proc.role => {
                Some((e.at - s).as_millis() as u64)
            }
            _ => None,
        });
        let weird_exit = match (weird, client) {
            (Some(p), _) => p.status.unwrap_or_default(),
            (None, ClientPeer::Inline(_)) => ExitInfo::Code(0),
            (None, ClientPeer::Spawned(..)) => ExitInfo::Unknown,
        };
        Ok(Some(RunRecord {
            outcome,
            weird_exit,
            pids: sup.procs.iter().map(|p| p.child.id()).collect(),
            events: sup.events,
            port,
        }))
    }

    fn stderr_for(&self, spec: &PeerSpec) -> io::Result<Stdio> {
        Ok(match spec.role {
            Role::TargetPeer => Stdio::from(File::create(self.target_stderr_path())?),
            Role::WeirdPeer => Stdio::null(),
        })
    }

    /// Returns whether the run hit the overall timeout.
    fn supervise(
        &mut self,
        sup: &mut Supervisor,
        server: (&PeerSpec, &[(String, OsString)]),
        client: &mut ClientPeer<'_>,
        port: u16,
        t: Timeouts,
    ) -> Result<bool, OrchestratorError> {
        let deadline = sup.start + Duration::from_millis(t.run_ms);
        let mut server_env = server.1.to_vec();
        if server.0.role == Role::TargetPeer {
            server_env.extend(self.target_env());
        }
        let s = sup.spawn(server.0, port, &server_env, self.stderr_for(server.0)?)?;
        let grace = Duration::from_millis(server.0.startup_grace_ms.unwrap_or(t.ready_grace_ms));
        let ready_by = (sup.start + grace).min(deadline);
        while sup.procs[s].alive() && !sup.procs[s].ready && Instant::now() < ready_by {
            sup.wait(ready_by)?;
        }
        if !sup.procs[s].alive() {
            return Ok(false);
        }
        if !sup.procs[s].ready && Instant::now() >= deadline {
            sup.terminate(s)?;
            return Ok(true);
        }

        let mut inline_done_at = None;
        match client {
            ClientPeer::Spawned(spec, env) => {
                let mut client_env = env.to_vec();
                if spec.role == Role::TargetPeer {
                    client_env.extend(self.target_env());
                }
                sup.spawn(spec, port, &client_env, self.stderr_for(spec)?)?;
            }
            ClientPeer::Inline(f) => {
                let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, port));
                f(addr, deadline.saturating_duration_since(Instant::now()));
                inline_done_at = Some(Instant::now());
                sup.pump()?;
            }
        }

        let drain = Duration::from_millis(t.drain_ms);
        loop {
            let alive: Vec<usize> = (0..sup.procs.len()).filter(|&i| sup.procs[i].alive()).collect();
            if alive.is_empty() {
                return Ok(false);
            }
            let first_exit = sup.procs.iter().filter_map(|p| p.exit_at).chain(inline_done_at).min();
            let now = Instant::now();
            if let Some(exit) = first_exit {
                if now >= exit + drain {
                    for i in alive {
                        sup.terminate(i)?;
                    }
                    return Ok(false);
                }
            } else if now >= deadline {
                for i in alive {
                    sup.terminate(i)?;
                }
                return Ok(true);
            }
            let next = match first_exit {
                Some(exit) => exit + drain,
                None => deadline,
            };
            sup.wait(next)?;
        }
    }
}
