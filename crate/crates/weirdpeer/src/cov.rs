//! Coverage runtime linked into a target peer.
//!
//! The map is a file mapped `MAP_SHARED`, so counts written before the
//! process dies (by signal included) are visible to the orchestrator once
//! it has reaped the target. Without [`env::COVERAGE`] the map is a private
//! heap buffer, which keeps the testbed usable outside the orchestrator.

use std::cell::{Cell, RefCell};
use std::fs::OpenOptions;
use std::io;
use std::os::fd::AsRawFd;
use std::path::Path;

use weirdpeer_core::coverage::edge_index;
use weirdpeer_core::{CoverageMap, MAP_SIZE};

use crate::env;

/// A file-backed shared mapping of `MAP_SIZE` bytes.
pub struct SharedMap {
    ptr: *mut u8,
    len: usize,
}

impl SharedMap {
    pub fn open(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)?;
        if file.metadata()?.len() < MAP_SIZE as u64 {
            file.set_len(MAP_SIZE as u64)?;
        }
        // SAFETY: fresh mapping of an open descriptor; the result is checked
        // below and the mapping outlives the descriptor by design.
        let ptr = unsafe {
            libc::mmap(
                std::ptr::null_mut(),
                MAP_SIZE,
                libc::PROT_READ | libc::PROT_WRITE,
                libc::MAP_SHARED,
                file.as_raw_fd(),
                0,
            )
        };
        if ptr == libc::MAP_FAILED {
            return Err(io::Error::last_os_error());
        }
        Ok(Self {
            ptr: ptr.cast(),
            len: MAP_SIZE,
        })
    }

    pub fn cells_mut(&mut self) -> &mut [u8] {
        // SAFETY: the mapping is `len` bytes, readable and writable, and
        // only reachable through `&mut self`.
        unsafe { std::slice::from_raw_parts_mut(self.ptr, self.len) }
    }

    pub fn cells(&self) -> &[u8] {
        // SAFETY: as above, shared borrow.
        unsafe { std::slice::from_raw_parts(self.ptr, self.len) }
    }
}

impl Drop for SharedMap {
    fn drop(&mut self) {
        // SAFETY: unmapping exactly what `open` mapped.
        unsafe {
            libc::munmap(self.ptr.cast(), self.len);
        }
    }
}

enum Sink {
    Shared(SharedMap),
    Local(CoverageMap),
}

impl Sink {
    fn cells_mut(&mut self) -> &mut [u8] {
        match self {
            Sink::Shared(m) => m.cells_mut(),
            Sink::Local(m) => m.cells_mut(),
        }
    }
}

thread_local! {
    static SINK: RefCell<Option<Sink>> = const { RefCell::new(None) };
    static PREV: Cell<u32> = const { Cell::new(0) };
}

/// Opens the map named by the environment, or a private one.
pub fn init() -> io::Result<()> {
    let sink = match std::env::var_os(env::COVERAGE) {
        Some(path) => Sink::Shared(SharedMap::open(Path::new(&path))?),
        None => Sink::Local(CoverageMap::new()),
    };
    SINK.with(|s| *s.borrow_mut() = Some(sink));
    PREV.with(|p| p.set(0));
    Ok(())
}

/// Starts a fresh private map; for in-process use.
pub fn init_local() {
    SINK.with(|s| *s.borrow_mut() = Some(Sink::Local(CoverageMap::new())));
    PREV.with(|p| p.set(0));
}

/// Records the edge from the previous location to `location`.
pub fn hit(location: u32) {
    let prev = PREV.with(|p| p.replace(location));
    SINK.with(|s| {
        if let Some(sink) = s.borrow_mut().as_mut() {
            let cells = sink.cells_mut();
            let cell = &mut cells[edge_index(prev, location, cells.len())];
            *cell = cell.saturating_add(1);
        }
    });
}

/// Copy of the current map contents.
pub fn snapshot() -> Option<CoverageMap> {
    SINK.with(|s| {
        s.borrow().as_ref().map(|sink| match sink {
            Sink::Shared(m) => CoverageMap::from_cells(m.cells().to_vec()),
            Sink::Local(m) => m.clone(),
        })
    })
}
