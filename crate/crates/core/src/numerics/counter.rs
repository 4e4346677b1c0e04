//! Thread-local multiply-accumulate counter.
//!
//! Every dense kernel in the crate reports the MACs it performs here, so
//! analytic cost formulas can be checked against what actually ran.

use std::cell::Cell;

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

#[inline]
pub fn add(n: u64) {
    MACS.with(|c| c.set(c.get() + n));
}

pub fn reset() {
    MACS.with(|c| c.set(0));
}

pub fn read() -> u64 {
    MACS.with(Cell::get)
}

/// Runs `f` and returns its result with the MACs it performed on this thread.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let before = read();
    let r = f();
    (r, read() - before)
}
