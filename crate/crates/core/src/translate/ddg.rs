use std::collections::HashMap;

use crate::guest::{ArithOp, DataType};
use crate::ir::{IrInst, IrOp, Operand, Superblock, ValueId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AliasKind {
    Must,
    May,
    No,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AddrRoot {
    Value(ValueId),
    /// Constant address.
    Absolute,
}

/// Symbolic address `root + offset` of a memory access of `width` bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SymAddr {
    pub root: AddrRoot,
    pub offset: i64,
    pub width: usize,
}

impl SymAddr {
    /// Alias relation between two accesses. Overlapping accesses off one root
    /// are a definite dependence and classify as `Must`.
    pub fn alias(&self, other: &SymAddr) -> AliasKind {
        if self.root != other.root {
            return AliasKind::May;
        }
        let (a0, a1) = (self.offset, self.offset + self.width as i64);
        let (b0, b1) = (other.offset, other.offset + other.width as i64);
        if a0 < b1 && b0 < a1 {
            AliasKind::Must
        } else {
            AliasKind::No
        }
    }

    /// Whether `other` starts exactly where this access ends.
    pub fn adjacent_before(&self, other: &SymAddr) -> bool {
        self.root == other.root && self.offset + self.width as i64 == other.offset
    }
}

/// Resolves the address of a memory instruction through chains of
/// `value + constant` integer adds.
pub fn resolve_address(sb: &Superblock, defs: &HashMap<ValueId, usize>, ins: &IrInst) -> Option<SymAddr> {
    let m = ins.mem?;
    let width = ins.dtype.width_bytes();
    let mut offset = m.offset;
    let mut base = m.base;
    for _ in 0..64 {
        match base {
            Operand::Imm(c) => {
                return Some(SymAddr { root: AddrRoot::Absolute, offset: offset + c as i64 as i32 as i64, width })
            }
            Operand::Reg(_) => return None,
            Operand::Val(v) => {
                let next = defs.get(&v).map(|&i| &sb.instrs[i]).and_then(|d| match (&d.op, d.dtype, d.srcs.as_slice()) {
                    (IrOp::Arith(ArithOp::Add), DataType::I32, [Operand::Val(x), Operand::Imm(c)]) => {
                        Some((Operand::Val(*x), *c as i64 as i32 as i64))
                    }
                    (IrOp::Mov, DataType::I32, [src]) => Some((*src, 0)),
                    _ => None,
                });
                match next {
                    Some((b, c)) => {
                        base = b;
                        offset += c;
                    }
                    None => return Some(SymAddr { root: AddrRoot::Value(v), offset, width }),
                }
            }
        }
    }
    match base {
        Operand::Val(v) => Some(SymAddr { root: AddrRoot::Value(v), offset, width }),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    /// Def-use through an SSA value.
    True,
    /// Memory pair with at least one store.
    Mem(AliasKind),
    /// Ordering around side exits.
    Order,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DepEdge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
}

/// Data dependence graph over the instructions of an SSA superblock. Nodes
/// are instruction indices; every edge points forward in program order.
#[derive(Debug, Clone)]
pub struct DepGraph {
    pub n: usize,
    pub edges: Vec<DepEdge>,
    /// Every pair of memory instructions `(earlier, later, kind)`.
    pub mem_pairs: Vec<(usize, usize, AliasKind)>,
    pub addrs: Vec<Option<SymAddr>>,
    /// When set, may-alias edges do not constrain ordering or packing.
    pub speculation: bool,
    succs: Vec<Vec<usize>>,
    preds: Vec<Vec<usize>>,
    reach: Vec<Vec<u64>>,
}

impl DepGraph {
    /// Whether an edge constrains ordering.
    pub fn is_hard(&self, e: &DepEdge) -> bool {
        !(self.speculation && e.kind == EdgeKind::Mem(AliasKind::May))
    }

    pub fn succs(&self, i: usize) -> &[usize] {
        &self.succs[i]
    }

    pub fn preds(&self, i: usize) -> &[usize] {
        &self.preds[i]
    }

    /// Whether a chain of hard edges leads from `a` to `b`.
    pub fn reaches(&self, a: usize, b: usize) -> bool {
        self.reach[a][b / 64] >> (b % 64) & 1 == 1
    }

    pub fn independent(&self, a: usize, b: usize) -> bool {
        a != b && !self.reaches(a, b) && !self.reaches(b, a)
    }

    pub fn alias(&self, a: usize, b: usize) -> Option<AliasKind> {
        let (x, y) = if a < b { (a, b) } else { (b, a) };
        self.mem_pairs.iter().find(|&&(p, q, _)| p == x && q == y).map(|&(_, _, k)| k)
    }

    /// May-alias pairs with at least one store.
    pub fn may_alias_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().filter(|e| e.kind == EdgeKind::Mem(AliasKind::May)).map(|e| (e.from, e.to))
    }

    pub fn true_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().filter(|e| e.kind == EdgeKind::True).map(|e| (e.from, e.to))
    }

    fn from_edges(n: usize, mut edges: Vec<DepEdge>, mem_pairs: Vec<(usize, usize, AliasKind)>, addrs: Vec<Option<SymAddr>>, speculation: bool) -> Self {
        edges.sort_by_key(|e| (e.from, e.to));
        edges.dedup();
        let mut g = DepGraph {
            n,
            edges,
            mem_pairs,
            addrs,
            speculation,
            succs: vec![Vec::new(); n],
            preds: vec![Vec::new(); n],
            reach: Vec::new(),
        };
        let hard: Vec<(usize, usize)> = g.edges.iter().filter(|e| g.is_hard(e)).map(|e| (e.from, e.to)).collect();
        for (a, b) in hard {
            if !g.succs[a].contains(&b) {
                g.succs[a].push(b);
                g.preds[b].push(a);
            }
        }
        let words = n.div_ceil(64).max(1);
        let mut reach = vec![vec![0u64; words]; n];
        for i in (0..n).rev() {
            let mut row = vec![0u64; words];
            for &s in &g.succs[i] {
                row[s / 64] |= 1 << (s % 64);
                for (w, r) in row.iter_mut().zip(&reach[s]) {
                    *w |= r;
                }
            }
            reach[i] = row;
        }
        g.reach = reach;
        g
    }
}

/// Builds true edges from SSA def-use chains, classifies every memory pair
/// by symbolic address, and orders memory and side effects around side
/// exits.
pub fn build_ddg(sb: &Superblock) -> DepGraph {
    assert!(sb.ssa, "build_ddg expects SSA form");
    let n = sb.instrs.len();
    let defs = sb.def_map();
    let mut edges = Vec::new();
    for (j, ins) in sb.instrs.iter().enumerate() {
        for v in ins.operands().filter_map(|o| o.value()) {
            if let Some(&i) = defs.get(&v) {
                edges.push(DepEdge { from: i, to: j, kind: EdgeKind::True });
            }
        }
    }
    let addrs: Vec<Option<SymAddr>> =
        sb.instrs.iter().map(|ins| if ins.op.is_memory() { resolve_address(sb, &defs, ins) } else { None }).collect();
    let mem: Vec<usize> = (0..n).filter(|&i| sb.instrs[i].op.is_memory()).collect();
    let mut mem_pairs = Vec::new();
    for (x, &i) in mem.iter().enumerate() {
        for &j in &mem[x + 1..] {
            let kind = match (addrs[i], addrs[j]) {
                (Some(a), Some(b)) => a.alias(&b),
                _ => AliasKind::May,
            };
            mem_pairs.push((i, j, kind));
            let has_store = sb.instrs[i].op == IrOp::St || sb.instrs[j].op == IrOp::St;
            if has_store && kind != AliasKind::No {
                edges.push(DepEdge { from: i, to: j, kind: EdgeKind::Mem(kind) });
            }
        }
    }
    let barrier = |ins: &IrInst| ins.op.is_memory() || ins.op.has_side_effect();
    for (s, ins) in sb.instrs.iter().enumerate() {
        if !matches!(ins.op, IrOp::SideExit { .. }) {
            continue;
        }
        for (i, other) in sb.instrs.iter().enumerate() {
            if i != s && barrier(other) {
                let (from, to) = if i < s { (i, s) } else { (s, i) };
                edges.push(DepEdge { from, to, kind: EdgeKind::Order });
            }
        }
    }
    DepGraph::from_edges(n, edges, mem_pairs, addrs, sb.speculation)
}
