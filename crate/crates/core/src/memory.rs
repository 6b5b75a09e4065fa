//! Live/peak byte accounting for numeric buffers.
//!
//! Every [`Buffer`] registers its size with a per-thread counter on creation
//! and releases it on drop. The benchmark harness reads the high-water mark
//! to compare memory strategies without a global allocator hook.

use std::cell::Cell;
use std::ops::{Deref, DerefMut};

thread_local! {
    static LIVE: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

fn track_alloc(bytes: usize) {
    LIVE.with(|live| {
        let now = live.get() + bytes;
        live.set(now);
        PEAK.with(|peak| {
            if now > peak.get() {
                peak.set(now);
            }
        });
    });
}

fn track_free(bytes: usize) {
    LIVE.with(|live| live.set(live.get().saturating_sub(bytes)));
}

/// Bytes currently held by live buffers on this thread.
pub fn live_bytes() -> usize {
    LIVE.with(|l| l.get())
}

/// High-water mark since the last [`reset_peak`].
pub fn peak_bytes() -> usize {
    PEAK.with(|p| p.get())
}

/// Resets the high-water mark to the current live byte count.
pub fn reset_peak() {
    let live = live_bytes();
    PEAK.with(|p| p.set(live));
}

/// A tracked `f64` buffer.
pub struct Buffer {
    data: Vec<f64>,
}

impl Buffer {
    pub fn new(data: Vec<f64>) -> Self {
        track_alloc(data.len() * std::mem::size_of::<f64>());
        Buffer { data }
    }

    pub fn zeros(len: usize) -> Self {
        Buffer::new(vec![0.0; len])
    }

    pub fn into_vec(mut self) -> Vec<f64> {
        let data = std::mem::take(&mut self.data);
        track_free(data.len() * std::mem::size_of::<f64>());
        data
    }
}

impl Drop for Buffer {
    fn drop(&mut self) {
        track_free(self.data.len() * std::mem::size_of::<f64>());
    }
}

impl Deref for Buffer {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.data
    }
}

impl DerefMut for Buffer {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

impl Clone for Buffer {
    fn clone(&self) -> Self {
        Buffer::new(self.data.clone())
    }
}

impl std::fmt::Debug for Buffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.data.iter().take(8)).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_tracks_high_water() {
        reset_peak();
        let base = live_bytes();
        {
            let _a = Buffer::zeros(1000);
            let _b = Buffer::zeros(500);
        }
        assert_eq!(live_bytes(), base);
        assert!(peak_bytes() >= base + 1500 * 8);
        let _c = Buffer::zeros(10);
        reset_peak();
        assert_eq!(peak_bytes(), base + 80);
    }

    #[test]
    fn into_vec_releases() {
        let base = live_bytes();
        let v = Buffer::new(vec![1.0; 4]).into_vec();
        assert_eq!(v.len(), 4);
        assert_eq!(live_bytes(), base);
    }
}
