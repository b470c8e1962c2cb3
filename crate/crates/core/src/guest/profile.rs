use std::collections::BTreeMap;

use super::BlockId;

/// Execution and edge counters gathered while interpreting or running
/// basic-block translations.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProfileData {
    pub exec_count: BTreeMap<BlockId, u64>,
    /// `(branch pc, taken)` → count.
    pub edge_count: BTreeMap<(usize, bool), u64>,
    /// Loop header → histogram of observed trip counts (trip → occurrences).
    pub loop_trip: BTreeMap<BlockId, BTreeMap<u64, u64>>,
    open_trips: BTreeMap<BlockId, u64>,
}

impl ProfileData {
    pub fn new() -> Self {
        Self::default()
    }

    /// Bumps and returns the execution count of `block`.
    pub fn record_block(&mut self, block: BlockId) -> u64 {
        let c = self.exec_count.entry(block).or_insert(0);
        *c += 1;
        *c
    }

    pub fn exec(&self, block: BlockId) -> u64 {
        self.exec_count.get(&block).copied().unwrap_or(0)
    }

    /// Records one conditional-branch outcome. Backward branches also drive
    /// trip counting for the loop whose header is `target`.
    pub fn record_branch(&mut self, pc: usize, target: usize, taken: bool) {
        *self.edge_count.entry((pc, taken)).or_insert(0) += 1;
        if target <= pc {
            let open = self.open_trips.entry(target).or_insert(0);
            if taken {
                *open += 1;
            } else {
                let trip = *open + 1;
                *open = 0;
                *self.loop_trip.entry(target).or_default().entry(trip).or_insert(0) += 1;
            }
        }
    }

    pub fn edges(&self, pc: usize) -> (u64, u64) {
        let t = self.edge_count.get(&(pc, true)).copied().unwrap_or(0);
        let n = self.edge_count.get(&(pc, false)).copied().unwrap_or(0);
        (t, n)
    }

    /// Fraction of executions of the branch at `pc` that were taken.
    pub fn taken_ratio(&self, pc: usize) -> Option<f64> {
        let (t, n) = self.edges(pc);
        if t + n == 0 {
            None
        } else {
            Some(t as f64 / (t + n) as f64)
        }
    }

    /// Most frequent trip count for a loop header; ties go to the smaller
    /// count.
    pub fn trip_mode(&self, header: BlockId) -> Option<u64> {
        let hist = self.loop_trip.get(&header)?;
        hist.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(&trip, _)| trip)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trip_counts_close_on_fallthrough() {
        let mut p = ProfileData::new();
        for _ in 0..2 {
            for _ in 0..3 {
                p.record_branch(10, 4, true);
            }
            p.record_branch(10, 4, false);
        }
        assert_eq!(p.loop_trip[&4][&4], 2);
        assert_eq!(p.trip_mode(4), Some(4));
        assert_eq!(p.edges(10), (6, 2));
    }

    #[test]
    fn trip_mode_tie_prefers_smaller() {
        let mut p = ProfileData::new();
        p.record_branch(5, 1, false);
        p.record_branch(5, 1, true);
        p.record_branch(5, 1, false);
        assert_eq!(p.trip_mode(1), Some(1));
    }

    #[test]
    fn forward_branches_do_not_count_trips() {
        let mut p = ProfileData::new();
        p.record_branch(3, 9, true);
        assert!(p.loop_trip.is_empty());
        assert_eq!(p.taken_ratio(3), Some(1.0));
    }
}
