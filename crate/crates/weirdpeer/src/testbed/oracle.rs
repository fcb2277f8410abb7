//! Bug oracles and the shadow call stack that names crash frames.

use std::cell::RefCell;
use std::io::Write;

use super::Bug;

thread_local! {
    static STACK: RefCell<Vec<&'static str>> = const { RefCell::new(Vec::new()) };
}

/// Pops its frame when dropped.
#[must_use]
pub struct Frame(());

pub fn enter(name: &'static str) -> Frame {
    STACK.with(|s| s.borrow_mut().push(name));
    Frame(())
}

impl Drop for Frame {
    fn drop(&mut self) {
        STACK.with(|s| {
            s.borrow_mut().pop();
        });
    }
}

/// Current frames, innermost first.
pub fn frames() -> Vec<&'static str> {
    STACK.with(|s| s.borrow().iter().rev().copied().collect())
}

/// Writes the crash record and aborts.
pub fn trigger(bug: Bug) -> ! {
    let mut record = format!("FTN-BUG {}\n", bug.id());
    for f in frames() {
        record.push_str("FRAME ");
        record.push_str(f);
        record.push('\n');
    }
    let mut err = std::io::stderr().lock();
    let _ = err.write_all(record.as_bytes());
    let _ = err.flush();
    std::process::abort()
}
