use std::cmp::Reverse;
use std::collections::BinaryHeap;

use thiserror::Error;

use super::ddg::DepGraph;
use crate::guest::{ArithOp, DataType};
use crate::ir::{IrInst, IrOp, Superblock};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("dependence cycle among {0} unscheduled instructions")]
    Cycle(usize),
}

/// Longest latency-weighted path from each node to a sink, counting the
/// node's own latency. `order` must be a topological order of the nodes.
pub fn critical_path(succs: &[Vec<usize>], latency: &[u32], order: &[usize]) -> Vec<u64> {
    let mut cp = vec![0u64; succs.len()];
    for &i in order.iter().rev() {
        let tail = succs[i].iter().map(|&s| cp[s]).max().unwrap_or(0);
        cp[i] = latency[i] as u64 + tail;
    }
    cp
}

fn topo_order(n: usize, succs: &[Vec<usize>]) -> Result<Vec<usize>, ScheduleError> {
    let mut indeg = vec![0usize; n];
    for s in succs.iter().flatten() {
        indeg[*s] += 1;
    }
    let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).rev().collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop() {
        order.push(i);
        for &s in &succs[i] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.push(s);
            }
        }
    }
    if order.len() != n {
        return Err(ScheduleError::Cycle(n - order.len()));
    }
    Ok(order)
}

/// List scheduling: among ready nodes, the one with the longest critical
/// path goes first; ties keep the original order. Returns the new order as
/// a list of original indices.
pub fn list_schedule(n: usize, edges: &[(usize, usize)], latency: &[u32]) -> Result<Vec<usize>, ScheduleError> {
    let mut succs = vec![Vec::new(); n];
    for &(a, b) in edges {
        if a != b && !succs[a].contains(&b) {
            succs[a].push(b);
        }
    }
    let topo = topo_order(n, &succs)?;
    let cp = critical_path(&succs, latency, &topo);
    let mut indeg = vec![0usize; n];
    for s in succs.iter().flatten() {
        indeg[*s] += 1;
    }
    let mut heap: BinaryHeap<(u64, Reverse<usize>)> =
        (0..n).filter(|&i| indeg[i] == 0).map(|i| (cp[i], Reverse(i))).collect();
    let mut order = Vec::with_capacity(n);
    while let Some((_, Reverse(i))) = heap.pop() {
        order.push(i);
        for &s in &succs[i] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                heap.push((cp[s], Reverse(s)));
            }
        }
    }
    Ok(order)
}

/// Nominal latency of an IR instruction, matching the default timing model.
pub(crate) fn ir_latency(ins: &IrInst) -> u32 {
    match (&ins.op, ins.dtype) {
        (IrOp::Arith(op), DataType::I32) => match op {
            ArithOp::Add | ArithOp::Sub => 1,
            ArithOp::Mul => 3,
            ArithOp::Div => 10,
        },
        (IrOp::Arith(op), _) => match op {
            ArithOp::Add | ArithOp::Sub => 2,
            ArithOp::Mul => 4,
            ArithOp::Div => 20,
        },
        (IrOp::Mov | IrOp::Cvt | IrOp::Cmp, d) if d.is_float() => 2,
        _ => 1,
    }
}

/// Reorders a superblock by list scheduling over its dependence graph and
/// flags both members of every may-alias pair whose order changed.
pub fn schedule_list(sb: &Superblock, ddg: &DepGraph) -> Result<Superblock, ScheduleError> {
    let n = sb.instrs.len();
    let edges: Vec<(usize, usize)> =
        ddg.edges.iter().filter(|e| ddg.is_hard(e)).map(|e| (e.from, e.to)).collect();
    let latency: Vec<u32> = sb.instrs.iter().map(ir_latency).collect();
    let order = list_schedule(n, &edges, &latency)?;
    let mut pos = vec![0usize; n];
    for (p, &i) in order.iter().enumerate() {
        pos[i] = p;
    }
    let mut instrs: Vec<IrInst> = order.iter().map(|&i| sb.instrs[i].clone()).collect();
    for (a, b) in ddg.may_alias_pairs() {
        if pos[a] > pos[b] {
            instrs[pos[a]].speculative = true;
            instrs[pos[b]].speculative = true;
        }
    }
    Ok(Superblock { instrs, ..sb.clone() })
}
