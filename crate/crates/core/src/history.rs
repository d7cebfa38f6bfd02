//! Per-channel sample history with contiguous look-back windows.
//!
//! Each sample is written twice, at `slot` and `slot + capacity`, so any
//! window no longer than the capacity is a single contiguous slice. Samples
//! before the start of the stream read as zeros.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SampleHistory {
    channels: usize,
    capacity: usize,
    data: Vec<Vec<f64>>,
    total: u64,
}

impl SampleHistory {
    /// `min_capacity` is rounded up to a power of two.
    pub fn new(channels: usize, min_capacity: usize) -> Self {
        let capacity = min_capacity.max(1).next_power_of_two();
        Self {
            channels,
            capacity,
            data: vec![vec![0.0; 2 * capacity]; channels],
            total: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of samples (per channel) ingested so far.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Append one sample per channel.
    #[inline]
    pub fn push(&mut self, frame: &[f64]) {
        debug_assert_eq!(frame.len(), self.channels);
        let slot = (self.total as usize) & (self.capacity - 1);
        for (buf, &v) in self.data.iter_mut().zip(frame) {
            buf[slot] = v;
            buf[slot + self.capacity] = v;
        }
        self.total += 1;
    }

    /// Samples `start..start + len` of channel `ch`. `start` may be negative
    /// (pre-stream zeros).
    #[inline]
    pub fn window(&self, ch: usize, start: i64, len: usize) -> Result<&[f64]> {
        let end = start + len as i64;
        if end > self.total as i64 {
            return Err(Error::NotReady(format!(
                "sample {} not yet ingested ({} available)",
                end - 1,
                self.total
            )));
        }
        if self.total as i64 - start > self.capacity as i64 {
            return Err(Error::NotReady(format!(
                "sample {start} already evicted (capacity {})",
                self.capacity
            )));
        }
        let slot = start.rem_euclid(self.capacity as i64) as usize;
        Ok(&self.data[ch][slot..slot + len])
    }

    #[inline]
    pub fn sample(&self, ch: usize, t: i64) -> Result<f64> {
        Ok(self.window(ch, t, 1)?[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_are_contiguous_across_wrap() {
        let mut h = SampleHistory::new(2, 8);
        for t in 0..30 {
            h.push(&[t as f64, -(t as f64)]);
        }
        let w = h.window(0, 22, 8).unwrap();
        assert_eq!(w, &[22.0, 23.0, 24.0, 25.0, 26.0, 27.0, 28.0, 29.0]);
        let w = h.window(1, 25, 3).unwrap();
        assert_eq!(w, &[-25.0, -26.0, -27.0]);
    }

    #[test]
    fn pre_stream_reads_zero_and_limits_enforced() {
        let mut h = SampleHistory::new(1, 8);
        for t in 0..3 {
            h.push(&[t as f64 + 1.0]);
        }
        assert_eq!(h.window(0, -4, 6).unwrap(), &[0.0, 0.0, 0.0, 0.0, 1.0, 2.0]);
        assert!(matches!(h.window(0, 0, 4), Err(Error::NotReady(_))));
        for _ in 0..10 {
            h.push(&[5.0]);
        }
        assert!(matches!(h.window(0, 2, 3), Err(Error::NotReady(_))));
    }
}
