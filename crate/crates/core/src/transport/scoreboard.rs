//! Sender-side record of selectively acknowledged segments, as a set of
//! disjoint half-open intervals of segment indices.

use std::collections::BTreeMap;

#[derive(Clone, Debug, Default)]
pub(crate) struct Scoreboard {
    ranges: BTreeMap<u64, u64>,
}

impl Scoreboard {
    /// Adds `[start, end)` and appends the sub-ranges that were not already
    /// covered to `fresh`.
    pub fn insert(&mut self, start: u64, end: u64, fresh: &mut Vec<(u64, u64)>) {
        if start >= end {
            return;
        }
        if let Some((_, &e)) = self.ranges.range(..=start).next_back() {
            if e >= end {
                return;
            }
        }
        // Collect every interval that overlaps or touches [start, end).
        let mut lo = start;
        let mut hi = end;
        let mut touched: Vec<(u64, u64)> = Vec::new();
        for (&s, &e) in self.ranges.range(..=end).rev() {
            if e < start {
                break;
            }
            touched.push((s, e));
        }
        touched.reverse();
        let mut cursor = start;
        for &(s, e) in &touched {
            if s > cursor {
                fresh.push((cursor, s.min(end)));
            }
            cursor = cursor.max(e);
            lo = lo.min(s);
            hi = hi.max(e);
        }
        if cursor < end {
            fresh.push((cursor, end));
        }
        // Most ACKs only grow the block that starts at `lo`; keep its node.
        let keep = touched.first().filter(|t| t.0 == lo).map(|t| t.0);
        for &(s, _) in &touched {
            if Some(s) != keep {
                self.ranges.remove(&s);
            }
        }
        match keep {
            Some(s) => *self.ranges.get_mut(&s).expect("kept") = hi,
            None => {
                self.ranges.insert(lo, hi);
            }
        }
    }

    /// Forgets everything below `base`.
    pub fn prune_below(&mut self, base: u64) {
        let keep = self.ranges.split_off(&base);
        let below = std::mem::replace(&mut self.ranges, keep);
        if let Some((_, &e)) = below.iter().next_back() {
            if e > base {
                self.ranges.insert(base, e);
            }
        }
    }

    /// Index such that exactly `n` recorded segments lie at or above it.
    pub fn nth_highest(&self, n: u64) -> Option<u64> {
        let mut remaining = n;
        for (&s, &e) in self.ranges.iter().rev() {
            if e - s >= remaining {
                return Some(e - remaining);
            }
            remaining -= e - s;
        }
        None
    }

    #[cfg(test)]
    pub fn intervals(&self) -> Vec<(u64, u64)> {
        self.ranges.iter().map(|(&s, &e)| (s, e)).collect()
    }
}
