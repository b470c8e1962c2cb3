use std::collections::BTreeSet;

use crate::ir::{IrOp, Superblock};
use crate::translate::DepGraph;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SeedMarks {
    pub first_load: BTreeSet<usize>,
    pub first_store: BTreeSet<usize>,
    pub candidate: BTreeSet<usize>,
}

/// Index of the same-kind, same-dtype access ending exactly where `i`
/// starts.
pub(crate) fn previous_adjacent(sb: &Superblock, ddg: &DepGraph, i: usize) -> Option<usize> {
    let a = ddg.addrs[i]?;
    let ins = &sb.instrs[i];
    (0..sb.instrs.len()).find(|&j| {
        let o = &sb.instrs[j];
        j != i && o.op == ins.op && o.dtype == ins.dtype && ddg.addrs[j].is_some_and(|b| b.adjacent_before(&a))
    })
}

/// Marks FP loads, stores and arithmetic as candidates, and the loads and
/// stores with no same-kind access at the adjacently previous address as
/// first loads and stores.
pub fn mark_candidates(sb: &Superblock, ddg: &DepGraph) -> SeedMarks {
    let mut marks = SeedMarks::default();
    for (i, ins) in sb.instrs.iter().enumerate() {
        if !ins.is_fp_candidate() {
            continue;
        }
        marks.candidate.insert(i);
        let first = previous_adjacent(sb, ddg, i).is_none();
        match ins.op {
            IrOp::Ld if first => {
                marks.first_load.insert(i);
            }
            IrOp::St if first => {
                marks.first_store.insert(i);
            }
            _ => {}
        }
    }
    marks
}
