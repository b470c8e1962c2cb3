use std::collections::HashMap;

use thiserror::Error;

use super::marks::{mark_candidates, previous_adjacent, SeedMarks};
use super::{Pack, PackOp, VectorizationConfig};
use crate::guest::DataType;
use crate::ir::{IrOp, Operand, Superblock, ValueId};
use crate::translate::DepGraph;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LegalityError {
    #[error("pack {0} has fewer than two members")]
    TooShort(usize),
    #[error("pack {0} is wider than the physical vector")]
    TooWide(usize),
    #[error("pack {0} mixes operations or data types")]
    NotIsomorphic(usize),
    #[error("pack {pack}: members {a} and {b} are dependent")]
    Dependent { pack: usize, a: usize, b: usize },
    #[error("instruction {0} belongs to more than one pack")]
    Shared(usize),
    #[error("pack {0}: memory accesses are not consecutive in member order")]
    NotConsecutive(usize),
    #[error("pack {0}: operand slot mixes immediates and values")]
    MixedOperands(usize),
    #[error("packs form a dependence cycle")]
    Cycle,
}

/// Number of value operand slots of a pack member.
fn slots(op: PackOp) -> usize {
    match op {
        PackOp::Load => 0,
        PackOp::Store => 1,
        PackOp::Arith(_) => 2,
    }
}

/// Incremental pack formation over one superblock.
pub struct Packer<'a> {
    sb: &'a Superblock,
    ddg: &'a DepGraph,
    cfg: VectorizationConfig,
    marks: SeedMarks,
    packs: Vec<Pack>,
    pack_of: Vec<Option<usize>>,
    defs: HashMap<ValueId, usize>,
    /// value → (instruction, operand slot) of every reader.
    users: HashMap<ValueId, Vec<(usize, usize)>>,
}

impl<'a> Packer<'a> {
    pub fn new(sb: &'a Superblock, ddg: &'a DepGraph, cfg: VectorizationConfig) -> Self {
        let mut users: HashMap<ValueId, Vec<(usize, usize)>> = HashMap::new();
        for (i, ins) in sb.instrs.iter().enumerate() {
            for (slot, o) in ins.srcs.iter().enumerate() {
                if let Operand::Val(v) = o {
                    users.entry(*v).or_default().push((i, slot));
                }
            }
        }
        Packer {
            sb,
            ddg,
            cfg,
            marks: mark_candidates(sb, ddg),
            packs: Vec::new(),
            pack_of: vec![None; sb.instrs.len()],
            defs: sb.def_map(),
            users,
        }
    }

    pub fn packs(&self) -> &[Pack] {
        &self.packs
    }

    pub fn into_packs(self) -> Vec<Pack> {
        self.packs
    }

    fn is_free(&self, i: usize) -> bool {
        self.pack_of[i].is_none() && self.marks.candidate.contains(&i)
    }

    /// Unpacked value already feeding a packed instruction; such loads stay
    /// scalar and are gathered.
    fn is_gathered(&self, i: usize) -> bool {
        self.sb.instrs[i]
            .dst_value()
            .and_then(|v| self.users.get(&v))
            .is_some_and(|us| us.iter().any(|&(u, _)| self.pack_of[u].is_some()))
    }

    fn lanes(&self, dtype: DataType, level: u32) -> usize {
        self.cfg.physical_lanes(dtype) >> level
    }

    fn check(&self, members: &[usize], id: usize) -> Result<(), LegalityError> {
        let first = &self.sb.instrs[members[0]];
        let op = PackOp::of(first).ok_or(LegalityError::NotIsomorphic(id))?;
        if members.len() < 2 {
            return Err(LegalityError::TooShort(id));
        }
        if members.len() > self.cfg.physical_lanes(first.dtype) {
            return Err(LegalityError::TooWide(id));
        }
        for &m in members {
            let ins = &self.sb.instrs[m];
            if PackOp::of(ins) != Some(op) || ins.dtype != first.dtype || !ins.is_fp_candidate() {
                return Err(LegalityError::NotIsomorphic(id));
            }
        }
        for (x, &a) in members.iter().enumerate() {
            for &b in &members[x + 1..] {
                if !self.ddg.independent(a, b) {
                    return Err(LegalityError::Dependent { pack: id, a, b });
                }
            }
        }
        if matches!(op, PackOp::Load | PackOp::Store) {
            for w in members.windows(2) {
                match (self.ddg.addrs[w[0]], self.ddg.addrs[w[1]]) {
                    (Some(a), Some(b)) if a.adjacent_before(&b) => {}
                    _ => return Err(LegalityError::NotConsecutive(id)),
                }
            }
        }
        for slot in 0..slots(op) {
            let ops: Vec<Operand> = members.iter().map(|&m| self.sb.instrs[m].srcs[slot]).collect();
            let imms = ops.iter().filter(|o| matches!(o, Operand::Imm(_))).count();
            if imms > 0 && (imms != ops.len() || ops.iter().any(|o| *o != ops[0])) {
                return Err(LegalityError::MixedOperands(id));
            }
        }
        Ok(())
    }

    /// Whether the dependence graph stays acyclic with every pack (plus the
    /// proposed one) contracted to a single node.
    fn acyclic_with(&self, extra: &[usize]) -> bool {
        let n = self.sb.instrs.len();
        let np = self.packs.len();
        let node = |i: usize| -> usize {
            if extra.contains(&i) {
                np
            } else if let Some(p) = self.pack_of[i] {
                p
            } else {
                np + 1 + i
            }
        };
        let total = np + 1 + n;
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); total];
        for i in 0..n {
            let a = node(i);
            for &j in self.ddg.succs(i) {
                let b = node(j);
                if a != b {
                    succ[a].push(b);
                }
            }
        }
        let mut indeg = vec![0usize; total];
        for s in succ.iter().flatten() {
            indeg[*s] += 1;
        }
        let mut ready: Vec<usize> = (0..total).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(x) = ready.pop() {
            seen += 1;
            for &s in &succ[x] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    ready.push(s);
                }
            }
        }
        seen == total
    }

    /// Forms a pack if every member is free and all pack conditions hold.
    fn try_pack(&mut self, members: Vec<usize>) -> Option<usize> {
        if members.iter().any(|&m| !self.is_free(m)) {
            return None;
        }
        let id = self.packs.len();
        self.check(&members, id).ok()?;
        if !self.acyclic_with(&members) {
            return None;
        }
        let first = &self.sb.instrs[members[0]];
        let pack = Pack { op: PackOp::of(first)?, dtype: first.dtype, members };
        for &m in &pack.members {
            self.pack_of[m] = Some(id);
        }
        self.packs.push(pack);
        Some(id)
    }

    /// Packs the producers of each operand slot, then same-slot consumers of
    /// the pack's results, recursively. Returns the packs created.
    pub fn follow_chains(&mut self, pack: usize) -> Vec<usize> {
        let mut created = Vec::new();
        self.follow(pack, &mut created);
        created
    }

    fn follow(&mut self, pack: usize, created: &mut Vec<usize>) {
        let p = self.packs[pack].clone();
        for slot in 0..slots(p.op) {
            let producers: Option<Vec<usize>> = p
                .members
                .iter()
                .map(|&m| self.sb.instrs[m].srcs[slot].value().and_then(|v| self.defs.get(&v).copied()))
                .collect();
            let Some(producers) = producers else { continue };
            if let Some(q) = self.try_pack(producers) {
                created.push(q);
                self.follow(q, created);
            }
        }
        if p.op == PackOp::Store {
            return;
        }
        let values: Vec<ValueId> = p.members.iter().filter_map(|&m| self.sb.instrs[m].dst_value()).collect();
        if values.len() != p.members.len() {
            return;
        }
        let first_users = self.users.get(&values[0]).cloned().unwrap_or_default();
        for (c0, slot) in first_users {
            if !self.is_free(c0) {
                continue;
            }
            let op = PackOp::of(&self.sb.instrs[c0]);
            let dtype = self.sb.instrs[c0].dtype;
            let mut members = vec![c0];
            for v in &values[1..] {
                let next = self.users.get(v).and_then(|us| {
                    us.iter()
                        .find(|&&(c, s)| {
                            s == slot
                                && !members.contains(&c)
                                && self.is_free(c)
                                && PackOp::of(&self.sb.instrs[c]) == op
                                && self.sb.instrs[c].dtype == dtype
                        })
                        .map(|&(c, _)| c)
                });
                match next {
                    Some(c) => members.push(c),
                    None => break,
                }
            }
            if members.len() == p.members.len() {
                if let Some(q) = self.try_pack(members) {
                    created.push(q);
                    self.follow(q, created);
                }
            }
        }
    }

    /// `len` accesses of the same kind starting at `start`, each adjacent to
    /// the previous one.
    fn chain(&self, start: usize, len: usize, usable: impl Fn(usize) -> bool) -> Option<Vec<usize>> {
        let mut members = vec![start];
        let ins = &self.sb.instrs[start];
        while members.len() < len {
            let cur = self.ddg.addrs[*members.last().unwrap()]?;
            let next = (0..self.sb.instrs.len()).find(|&j| {
                let o = &self.sb.instrs[j];
                o.op == ins.op
                    && o.dtype == ins.dtype
                    && !members.contains(&j)
                    && usable(j)
                    && self.ddg.addrs[j].is_some_and(|b| cur.adjacent_before(&b))
            })?;
            members.push(next);
        }
        Some(members)
    }

    /// Seeds from memory accesses of kind `op`: first accesses and accesses
    /// whose adjacently previous access is already packed.
    fn seed_memory(&mut self, op: IrOp, level: u32) {
        loop {
            let mut progress = false;
            for i in 0..self.sb.instrs.len() {
                let ins = &self.sb.instrs[i];
                if ins.op != op || !self.is_free(i) {
                    continue;
                }
                let len = self.lanes(ins.dtype, level);
                if len < 2 {
                    continue;
                }
                let loads = op == IrOp::Ld;
                if loads && self.is_gathered(i) {
                    continue;
                }
                let first = match op {
                    IrOp::Ld => self.marks.first_load.contains(&i),
                    _ => self.marks.first_store.contains(&i),
                };
                let after_pack = previous_adjacent(self.sb, self.ddg, i).is_some_and(|p| self.pack_of[p].is_some());
                if !first && !after_pack {
                    continue;
                }
                let usable = |j: usize| self.is_free(j) && !(loads && self.is_gathered(j));
                let Some(members) = self.chain(i, len, usable) else { continue };
                if let Some(p) = self.try_pack(members) {
                    self.follow_chains(p);
                    progress = true;
                }
            }
            if !progress {
                break;
            }
        }
    }

    /// Greedy first-fit grouping of independent same-operation arithmetic
    /// in program order.
    fn seed_arith(&mut self, level: u32) {
        let n = self.sb.instrs.len();
        for i in 0..n {
            let ins = &self.sb.instrs[i];
            if !matches!(ins.op, IrOp::Arith(_)) || !self.is_free(i) {
                continue;
            }
            let len = self.lanes(ins.dtype, level);
            if len < 2 {
                continue;
            }
            let mut group = vec![i];
            for j in i + 1..n {
                if group.len() == len {
                    break;
                }
                let o = &self.sb.instrs[j];
                if o.op == ins.op && o.dtype == ins.dtype && self.is_free(j) && group.iter().all(|&g| self.ddg.independent(g, j)) {
                    group.push(j);
                }
            }
            if group.len() == len {
                if let Some(p) = self.try_pack(group) {
                    self.follow_chains(p);
                }
            }
        }
    }

    /// One pass at logical length `physical_lanes >> level`.
    pub fn round(&mut self, level: u32) {
        self.seed_memory(IrOp::St, level);
        self.seed_memory(IrOp::Ld, level);
        self.seed_arith(level);
    }
}

/// Packs of exactly the physical lane count.
pub fn vectorize_baseline(sb: &Superblock, ddg: &DepGraph, cfg: VectorizationConfig) -> Vec<Pack> {
    let mut p = Packer::new(sb, ddg, cfg);
    p.round(0);
    p.into_packs()
}

/// Baseline rounds at halving logical lengths down to two lanes.
pub fn vectorize_vlv(sb: &Superblock, ddg: &DepGraph, cfg: VectorizationConfig) -> Vec<Pack> {
    let mut p = Packer::new(sb, ddg, cfg);
    let widest = cfg.physical_lanes(DataType::F32);
    let mut level = 0;
    while widest >> level >= 2 {
        p.round(level);
        level += 1;
    }
    p.into_packs()
}

/// Re-checks every pack condition pairwise, plus acyclicity of the graph
/// with packs contracted.
pub fn verify_packs(sb: &Superblock, ddg: &DepGraph, cfg: VectorizationConfig, packs: &[Pack]) -> Result<(), LegalityError> {
    let mut checker = Packer::new(sb, ddg, cfg);
    checker.marks.candidate = (0..sb.instrs.len()).collect();
    for (id, p) in packs.iter().enumerate() {
        for &m in &p.members {
            if checker.pack_of[m].is_some() {
                return Err(LegalityError::Shared(m));
            }
        }
        checker.check(&p.members, id)?;
        let first = &sb.instrs[p.members[0]];
        if PackOp::of(first) != Some(p.op) || first.dtype != p.dtype {
            return Err(LegalityError::NotIsomorphic(id));
        }
        for &m in &p.members {
            checker.pack_of[m] = Some(id);
        }
        checker.packs.push(p.clone());
    }
    if !checker.acyclic_with(&[]) {
        return Err(LegalityError::Cycle);
    }
    Ok(())
}
