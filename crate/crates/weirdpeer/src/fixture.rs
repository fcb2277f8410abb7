//! Small peers used to exercise the runtime and the orchestrator.
//!
//! `micro` is a weird client with nine sites: loop bounds 1, 3 and 9 times
//! widths 1 (a branch), 8 and 64. Site `i * 3 + j + 1` uses bound `i` and
//! width `j`. The other modes are servers with scripted misbehaviour.

use std::io::{self, Read, Write};
use std::net::{Ipv4Addr, SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use weirdpeer_core::SiteDescriptor;

use crate::orchestrator::EXIT_ADDR_IN_USE;
use crate::peer::{self, ReadinessEvent};
use crate::testbed::Transport;
use crate::{cov, runtime};

pub const LOOP_BOUNDS: [u32; 3] = [1, 3, 9];
pub const WIDTHS: [u8; 3] = [1, 8, 64];
pub const VALUE8: u64 = 0x5a;
pub const VALUE64: u64 = 0x0123_4567_89ab_cdef;

pub fn micro_site(bound_idx: usize, width_idx: usize) -> u32 {
    (bound_idx * 3 + width_idx + 1) as u32
}

pub fn micro_sites() -> Vec<SiteDescriptor> {
    let mut sites = Vec::new();
    for (i, bound) in LOOP_BOUNDS.iter().enumerate() {
        for (j, &width) in WIDTHS.iter().enumerate() {
            let id = micro_site(i, j);
            let label = format!("loop{bound}_w{width}");
            let site = match width {
                1 => SiteDescriptor::branch(id, label),
                w => SiteDescriptor::value_load(id, w, label).expect("valid width"),
            };
            sites.push(site);
        }
    }
    sites
}

#[derive(Debug, Parser)]
#[command(name = "weirdpeer-fixture")]
pub struct FixtureCli {
    #[command(subcommand)]
    pub mode: FixtureMode,
}

#[derive(Debug, Subcommand)]
pub enum FixtureMode {
    /// Weird client: run the micro sites, connect, send one byte, close.
    Micro {
        #[arg(long)]
        port: u16,
        /// Append one `site iteration result` line per site execution.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Server: read one connection to EOF and exit.
    Sink(ServerArgs),
    /// Server: accept, then never exit.
    Hang {
        #[command(flatten)]
        server: ServerArgs,
        #[arg(long)]
        ignore_term: bool,
    },
    /// Server: accept, read a byte, report a bug and abort.
    Crash(ServerArgs),
    /// Client: connect, then never exit.
    Idle {
        #[arg(long)]
        port: u16,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ServerArgs {
    #[arg(long)]
    pub port: u16,
    #[arg(long, value_enum, default_value = "tcp")]
    pub transport: Transport,
    /// Do not report readiness over the control channel.
    #[arg(long)]
    pub no_ready: bool,
    /// Coverage location hit per received chunk.
    #[arg(long, default_value_t = 0x7001)]
    pub location: u32,
}

pub fn fixture_main(cli: FixtureCli) -> i32 {
    match cli.mode {
        FixtureMode::Micro { port, log } => micro(port, log),
        FixtureMode::Sink(args) => serve(&args, Behaviour::Sink),
        FixtureMode::Hang { server, ignore_term } => {
            if ignore_term {
                // SAFETY: installing SIG_IGN has no preconditions.
                unsafe { libc::signal(libc::SIGTERM, libc::SIG_IGN) };
            }
            serve(&server, Behaviour::Hang)
        }
        FixtureMode::Crash(args) => serve(&args, Behaviour::Crash),
        FixtureMode::Idle { port } => {
            peer::connect_from_env();
            peer::connecting();
            let _s = TcpStream::connect((Ipv4Addr::LOCALHOST, port));
            peer::connected();
            sleep_forever()
        }
    }
}

fn micro(port: u16, log: Option<PathBuf>) -> i32 {
    if let Err(e) = runtime::init(micro_sites()) {
        eprintln!("weirdpeer-fixture: {e}");
        return 2;
    }
    peer::connect_from_env();
    let mut lines = String::new();
    for (i, &bound) in LOOP_BOUNDS.iter().enumerate() {
        for (j, &width) in WIDTHS.iter().enumerate() {
            let id = micro_site(i, j);
            for k in 0..bound {
                let r = match width {
                    1 => u64::from(runtime::branch(id, true)),
                    8 => runtime::value(id, VALUE8),
                    _ => runtime::value(id, VALUE64),
                };
                lines.push_str(&format!("{id} {k} {r:#x}\n"));
            }
        }
    }
    if let Some(path) = log {
        if let Err(e) = std::fs::write(&path, lines) {
            eprintln!("weirdpeer-fixture: {}: {e}", path.display());
        }
    }
    peer::connecting();
    let code = match TcpStream::connect((Ipv4Addr::LOCALHOST, port)) {
        Ok(mut s) => {
            peer::connected();
            let _ = s.write_all(&[0]);
            0
        }
        Err(e) => {
            peer::peer_error(&e.to_string());
            1
        }
    };
    runtime::finish();
    code
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Behaviour {
    Sink,
    Hang,
    Crash,
}

fn sleep_forever() -> ! {
    loop {
        std::thread::sleep(Duration::from_secs(3600));
    }
}

fn bind_failed(e: io::Error) -> i32 {
    eprintln!("weirdpeer-fixture: bind: {e}");
    if e.kind() == io::ErrorKind::AddrInUse {
        EXIT_ADDR_IN_USE
    } else {
        1
    }
}

fn announce(args: &ServerArgs, addr: SocketAddr) {
    if !args.no_ready {
        peer::readiness_hook(ReadinessEvent::Bind, addr);
    }
}

fn crash_now() -> ! {
    let mut err = io::stderr().lock();
    let _ = writeln!(err, "FTN-BUG FX1");
    let _ = writeln!(err, "FRAME fixture_crash");
    let _ = writeln!(err, "FRAME serve");
    let _ = err.flush();
    std::process::abort()
}

fn serve(args: &ServerArgs, behaviour: Behaviour) -> i32 {
    if let Err(e) = cov::init() {
        eprintln!("weirdpeer-fixture: coverage map: {e}");
        return 1;
    }
    peer::connect_from_env();
    let bind_to = (Ipv4Addr::LOCALHOST, args.port);
    match args.transport {
        Transport::Tcp => {
            let listener = match TcpListener::bind(bind_to) {
                Ok(l) => l,
                Err(e) => return bind_failed(e),
            };
            announce(args, listener.local_addr().expect("bound socket has an address"));
            let Ok((mut stream, _)) = listener.accept() else {
                return 1;
            };
            let mut buf = [0u8; 4096];
            loop {
                match stream.read(&mut buf) {
                    Ok(0) | Err(_) => break,
                    Ok(_) => {
                        cov::hit(args.location);
                        match behaviour {
                            Behaviour::Crash => crash_now(),
                            Behaviour::Hang => sleep_forever(),
                            Behaviour::Sink => {}
                        }
                    }
                }
            }
            if behaviour == Behaviour::Hang {
                sleep_forever();
            }
            0
        }
        Transport::Udp => {
            let socket = match UdpSocket::bind(bind_to) {
                Ok(s) => s,
                Err(e) => return bind_failed(e),
            };
            announce(args, socket.local_addr().expect("bound socket has an address"));
            let mut buf = [0u8; 4096];
            loop {
                if socket.recv_from(&mut buf).is_ok() {
                    cov::hit(args.location);
                    if behaviour == Behaviour::Crash {
                        crash_now();
                    }
                }
            }
        }
    }
}
