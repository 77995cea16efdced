//! Deterministic scheduling of overlapping temporal windows over a frame
//! stream. Frames and window indices are 1-based.

use crate::error::{Error, Result};

/// One temporal window: `index` is the 1-based ordinal in the schedule,
/// `start` the 1-based first frame, `len` the frame count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub index: usize,
    pub start: usize,
    pub len: usize,
}

impl WindowSpec {
    /// Last frame covered (inclusive).
    pub fn end(&self) -> usize {
        self.start + self.len - 1
    }

    pub fn contains(&self, frame: usize) -> bool {
        frame >= self.start && frame <= self.end()
    }

    pub fn frames(&self) -> impl Iterator<Item = usize> {
        self.start..=self.end()
    }

    /// Timestamps shared with another window.
    pub fn overlap_frames(&self, other: &WindowSpec) -> Vec<usize> {
        let lo = self.start.max(other.start);
        let hi = self.end().min(other.end());
        (lo..=hi).collect()
    }
}

/// Builds the window schedule for a stream of `total_frames` frames with
/// window length `window_len` and overlap `overlap`.
///
/// Regular windows start at 1, L−O+1, 2(L−O)+1, … while they fit. If the
/// last regular window does not reach the final frame, a window clamped to
/// end exactly at `total_frames` finishes the schedule; it replaces the last
/// regular window whenever coverage allows, so the stream never ends on a
/// redundant window. The clamped window's overlap with its predecessor may
/// differ from O but is always at least one frame.
pub fn schedule_windows(
    total_frames: usize,
    window_len: usize,
    overlap: usize,
) -> Result<Vec<WindowSpec>> {
    if total_frames == 0 {
        return Err(Error::Schedule("total_frames must be positive".into()));
    }
    if window_len < 2 {
        return Err(Error::Schedule(format!(
            "window_len must be at least 2, got {window_len}"
        )));
    }
    if overlap == 0 || overlap >= window_len {
        return Err(Error::Schedule(format!(
            "overlap must satisfy 1 <= overlap < window_len, got overlap={overlap} window_len={window_len}"
        )));
    }
    if total_frames < window_len {
        if total_frames < 2 {
            return Err(Error::Schedule(format!(
                "stream of {total_frames} frame(s) is too short for any window"
            )));
        }
        return Ok(vec![WindowSpec {
            index: 1,
            start: 1,
            len: total_frames,
        }]);
    }

    let stride = window_len - overlap;
    let mut starts: Vec<usize> = Vec::new();
    let mut a = 1usize;
    while a + window_len - 1 <= total_frames {
        starts.push(a);
        a += stride;
    }
    let last_end = starts.last().unwrap() + window_len - 1;
    if last_end < total_frames {
        let clamped = total_frames - window_len + 1;
        let replace = starts.len() >= 2 && {
            let prev_end = starts[starts.len() - 2] + window_len - 1;
            clamped <= prev_end
        };
        if replace {
            *starts.last_mut().unwrap() = clamped;
        } else {
            starts.push(clamped);
        }
    }

    Ok(starts
        .into_iter()
        .enumerate()
        .map(|(i, start)| WindowSpec {
            index: i + 1,
            start,
            len: window_len,
        })
        .collect())
}

/// Incremental counterpart of [`schedule_windows`] for streams whose length
/// is unknown up front. Feed frames one at a time; completed windows come
/// back as soon as they are final, and `finish` flushes the clamped tail.
/// For any total frame count the emitted specs are identical to the batch
/// schedule.
#[derive(Debug)]
pub struct IncrementalSchedule {
    window_len: usize,
    stride: usize,
    frames_seen: usize,
    next_start: usize,
    // Most recent complete regular window, held back because the stream end
    // may replace it with the clamped tail window.
    pending: Option<usize>,
    emitted: usize,
    prev_emitted_start: Option<usize>,
}

impl IncrementalSchedule {
    pub fn new(window_len: usize, overlap: usize) -> Result<Self> {
        if window_len < 2 {
            return Err(Error::Schedule(format!(
                "window_len must be at least 2, got {window_len}"
            )));
        }
        if overlap == 0 || overlap >= window_len {
            return Err(Error::Schedule(format!(
                "overlap must satisfy 1 <= overlap < window_len, got overlap={overlap} window_len={window_len}"
            )));
        }
        Ok(Self {
            window_len,
            stride: window_len - overlap,
            frames_seen: 0,
            next_start: 1,
            pending: None,
            emitted: 0,
            prev_emitted_start: None,
        })
    }

    fn make_spec(&mut self, start: usize, len: usize) -> WindowSpec {
        self.emitted += 1;
        self.prev_emitted_start = Some(start);
        WindowSpec {
            index: self.emitted,
            start,
            len,
        }
    }

    /// Registers the arrival of the next frame; returns a window that became
    /// final, if any.
    pub fn push_frame(&mut self) -> Option<WindowSpec> {
        self.frames_seen += 1;
        if self.next_start + self.window_len - 1 == self.frames_seen {
            let ready = self.next_start;
            self.next_start += self.stride;
            let flushed = self.pending.take();
            self.pending = Some(ready);
            return flushed.map(|s| self.make_spec(s, self.window_len));
        }
        None
    }

    /// Signals end of stream and returns the remaining windows.
    pub fn finish(mut self) -> Result<Vec<WindowSpec>> {
        let total = self.frames_seen;
        let mut out = Vec::new();
        match self.pending.take() {
            None => {
                // No regular window ever completed: the whole stream is one
                // short window.
                if self.emitted == 0 {
                    if total < 2 {
                        return Err(Error::Schedule(format!(
                            "stream of {total} frame(s) is too short for any window"
                        )));
                    }
                    out.push(self.make_spec(1, total));
                }
            }
            Some(last) => {
                let last_end = last + self.window_len - 1;
                if last_end < total {
                    let clamped = total - self.window_len + 1;
                    let prev_end = self
                        .prev_emitted_start
                        .map(|s| s + self.window_len - 1);
                    if prev_end.is_some_and(|e| clamped <= e) {
                        out.push(self.make_spec(clamped, self.window_len));
                    } else {
                        out.push(self.make_spec(last, self.window_len));
                        out.push(self.make_spec(clamped, self.window_len));
                    }
                } else {
                    out.push(self.make_spec(last, self.window_len));
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn starts(specs: &[WindowSpec]) -> Vec<usize> {
        specs.iter().map(|w| w.start).collect()
    }

    #[test]
    fn regular_schedule() {
        let s = schedule_windows(10, 4, 2).unwrap();
        assert_eq!(starts(&s), vec![1, 3, 5, 7]);
        assert!(s.iter().all(|w| w.len == 4));
    }

    #[test]
    fn single_window_when_stream_fits() {
        let s = schedule_windows(20, 20, 5).unwrap();
        assert_eq!(starts(&s), vec![1]);
        assert_eq!(s[0].end(), 20);
    }

    #[test]
    fn clamped_tail_replaces_redundant_window() {
        let s = schedule_windows(11, 4, 2).unwrap();
        assert_eq!(starts(&s), vec![1, 3, 5, 8]);
        assert_eq!(s.last().unwrap().end(), 11);
    }

    #[test]
    fn clamped_tail_appends_when_needed_for_coverage() {
        let s = schedule_windows(9, 4, 1).unwrap();
        assert_eq!(starts(&s), vec![1, 4, 6]);
    }

    #[test]
    fn short_stream_single_short_window() {
        let s = schedule_windows(7, 20, 5).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].start, s[0].len), (1, 7));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(schedule_windows(0, 4, 2).is_err());
        assert!(schedule_windows(10, 4, 4).is_err());
        assert!(schedule_windows(10, 4, 0).is_err());
        assert!(schedule_windows(1, 4, 2).is_err());
    }

    fn assert_covering(specs: &[WindowSpec], total: usize, overlap: usize) {
        let mut seen = vec![false; total + 1];
        for w in specs {
            assert!(w.len >= 2);
            assert!(w.end() <= total);
            for t in w.frames() {
                seen[t] = true;
            }
        }
        assert!(seen[1..].iter().all(|&b| b), "gap in coverage");
        assert_eq!(specs.last().unwrap().end(), total);
        for pair in specs.windows(2) {
            let shared = pair[0].overlap_frames(&pair[1]).len();
            assert!(shared >= 1, "consecutive windows must overlap");
            // All but the final pair must share at least O frames.
            if pair[1].index != specs.last().unwrap().index {
                assert!(shared >= overlap);
            }
        }
    }

    proptest! {
        #[test]
        fn schedule_covers_and_overlaps(total in 2usize..400, len in 2usize..40, ov in 1usize..39) {
            prop_assume!(ov < len);
            let specs = schedule_windows(total, len, ov).unwrap();
            assert_covering(&specs, total, ov);
            // Deterministic: same inputs, same output.
            prop_assert_eq!(&specs, &schedule_windows(total, len, ov).unwrap());
        }

        #[test]
        fn incremental_matches_batch(total in 2usize..400, len in 2usize..40, ov in 1usize..39) {
            prop_assume!(ov < len);
            let batch = schedule_windows(total, len, ov).unwrap();
            let mut inc = IncrementalSchedule::new(len, ov).unwrap();
            let mut lazy = Vec::new();
            for _ in 0..total {
                if let Some(w) = inc.push_frame() {
                    lazy.push(w);
                }
            }
            lazy.extend(inc.finish().unwrap());
            prop_assert_eq!(batch, lazy);
        }
    }
}
