//! Element precision.
//!
//! Values are stored as `f64`. In the default [`Precision::F32`] mode every
//! op output and every accumulated gradient is rounded to the nearest `f32`,
//! so stored values are exactly the ones a 32-bit engine would hold.
//! [`Precision::F64`] disables the rounding and exists for gradient checks
//! that need tighter tolerances.
//!
//! The mode is per thread: the tape is confined to one thread anyway.

use std::cell::Cell;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

thread_local! {
    static PRECISION: Cell<Precision> = const { Cell::new(Precision::F32) };
}

pub fn precision() -> Precision {
    PRECISION.with(|p| p.get())
}

pub fn set_precision(p: Precision) {
    PRECISION.with(|c| c.set(p));
}

/// Runs `f` with the given precision, restoring the previous mode afterwards.
pub fn with_precision<R>(p: Precision, f: impl FnOnce() -> R) -> R {
    struct Restore(Precision);
    impl Drop for Restore {
        fn drop(&mut self) {
            set_precision(self.0);
        }
    }
    let _restore = Restore(precision());
    set_precision(p);
    f()
}

#[inline]
pub(crate) fn round_slice(data: &mut [f64]) {
    if precision() == Precision::F32 {
        for v in data.iter_mut() {
            *v = *v as f32 as f64;
        }
    }
}
