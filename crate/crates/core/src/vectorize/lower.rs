use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use thiserror::Error;

use super::plan::{GatherLowering, OperandSource, VectorPlan};
use super::regalloc::{allocate_registers, schedule_host, RegAllocError};
use super::{PackOp, VectorizationConfig};
use crate::guest::{DataType, GuestReg};
use crate::host::{pack_imm, Dst, HostInst, HostOp, HostProgram, Reg, SpecPair, Src, WriteBack};
use crate::ir::{IrOp, Operand, SbExit, Superblock, ValueClass, ValueId};
use crate::translate::{DepGraph, EdgeKind, ScheduleError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LowerError {
    #[error("members of pack {0} are not in consecutive address order")]
    MemberOrder(usize),
    #[error("pack {0} has {1} lanes, more than the vector register holds")]
    TooWide(usize, usize),
    #[error("packs form a dependence cycle")]
    PackCycle,
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    RegisterPressure(#[from] RegAllocError),
}

/// Where an SSA value lives in host code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Loc {
    Reg(Reg),
    Lane(Reg, u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum SplatKey {
    Val(ValueId),
    Imm(u64),
}

struct Lowerer<'a> {
    sb: &'a Superblock,
    plan: &'a VectorPlan,
    loc: HashMap<ValueId, Loc>,
    /// Scalar copies of pack lanes other than 0 read by scalar code.
    extracted: HashMap<ValueId, Reg>,
    pack_reg: Vec<Reg>,
    gather_reg: Vec<Reg>,
    gather_done: Vec<bool>,
    splats: BTreeMap<(SplatKey, DataType), (Reg, u8, bool)>,
    next_t: u32,
    next_v: u32,
    out: Vec<HostInst>,
    host_of: Vec<usize>,
    asserts: u32,
}

impl<'a> Lowerer<'a> {
    fn fresh(&mut self, class: ValueClass) -> Reg {
        match class {
            ValueClass::Fp => {
                self.next_v += 1;
                Reg::V(self.next_v - 1)
            }
            _ => {
                self.next_t += 1;
                Reg::T(self.next_t - 1)
            }
        }
    }

    fn emit(&mut self, op: HostOp, pc: usize) -> usize {
        self.out.push(HostInst::new(op, pc));
        self.out.len() - 1
    }

    fn scalar_src(&self, o: Operand) -> Src {
        match o {
            Operand::Imm(x) => Src::Imm(x),
            Operand::Reg(r) => Src::Reg(Reg::guest(r)),
            Operand::Val(v) => match self.loc[&v] {
                Loc::Reg(r) => Src::Reg(r),
                Loc::Lane(r, 0) => Src::Reg(r),
                Loc::Lane(..) => Src::Reg(self.extracted[&v]),
            },
        }
    }

    /// Source that reads a value in place, lanes included.
    fn lane_src(&self, o: Operand) -> Src {
        match o {
            Operand::Val(v) => match self.loc[&v] {
                Loc::Reg(r) => Src::Reg(r),
                Loc::Lane(r, e) => Src::Lane(r, e),
            },
            other => self.scalar_src(other),
        }
    }

    fn element(&self, v: ValueId) -> (Reg, u8) {
        match self.loc[&v] {
            Loc::Reg(r) => (r, 0),
            Loc::Lane(r, e) => (r, e),
        }
    }

    fn dst(&self, i: usize) -> Dst {
        let v = self.sb.instrs[i].dst_value().expect("instruction without a result");
        match self.loc[&v] {
            Loc::Reg(r) => Dst::Reg(r),
            Loc::Lane(r, e) => Dst::Lane(r, e),
        }
    }

    fn wb_dtype(&self, reg: GuestReg, o: Operand) -> DataType {
        match ValueClass::of(reg) {
            ValueClass::Fp => match o {
                Operand::Val(v) => self.sb.value(v).dtype.unwrap_or(DataType::F64),
                _ => DataType::F64,
            },
            _ => DataType::I32,
        }
    }

    fn unchanged(&self, reg: GuestReg, o: Operand) -> bool {
        match o {
            Operand::Val(v) => self.sb.value(v).live_in == Some(reg),
            Operand::Reg(r) => r == reg,
            Operand::Imm(_) => false,
        }
    }

    fn writebacks(&self, list: &[(GuestReg, Operand)]) -> Vec<WriteBack> {
        list.iter()
            .filter(|&&(r, o)| !self.unchanged(r, o))
            .map(|&(reg, o)| WriteBack { reg, dtype: self.wb_dtype(reg, o), src: self.lane_src(o) })
            .collect()
    }

    fn assign_locations(&mut self) {
        let sb = self.sb;
        for (k, info) in sb.values.iter().enumerate() {
            if let Some(r) = info.live_in {
                self.loc.insert(ValueId(k as u32), Loc::Reg(Reg::guest(r)));
            }
        }
        for p in 0..self.plan.packs.len() {
            let r = self.fresh(ValueClass::Fp);
            self.pack_reg.push(r);
            for (lane, &m) in self.plan.packs[p].members.iter().enumerate() {
                if let Some(v) = sb.instrs[m].dst_value() {
                    self.loc.insert(v, Loc::Lane(r, lane as u8));
                }
            }
        }
        for g in 0..self.plan.gathers.len() {
            let r = self.fresh(ValueClass::Fp);
            self.gather_reg.push(r);
            if self.plan.gathers[g].lowering == GatherLowering::SelectiveWrite {
                for (lane, &v) in self.plan.gathers[g].inputs.iter().enumerate() {
                    self.loc.insert(v, Loc::Lane(r, lane as u8));
                }
            }
        }
        self.gather_done = vec![false; self.plan.gathers.len()];
        for ins in &sb.instrs {
            if let Some(v) = ins.dst_value() {
                if !self.loc.contains_key(&v) {
                    let r = self.fresh(sb.value(v).class);
                    self.loc.insert(v, Loc::Reg(r));
                }
            }
        }
        for u in &self.plan.unpacks {
            for &lane in u.lanes.iter().filter(|&&l| l != 0) {
                let m = self.plan.packs[u.pack].members[lane];
                if let Some(v) = sb.instrs[m].dst_value() {
                    let r = self.fresh(ValueClass::Fp);
                    self.extracted.insert(v, r);
                }
            }
        }
        for (p, slots) in self.plan.operands.iter().enumerate() {
            let pack = &self.plan.packs[p];
            for src in slots {
                let key = match *src {
                    OperandSource::Splat(v) => (SplatKey::Val(v), pack.dtype),
                    OperandSource::Const(x) if pack.op == PackOp::Store => (SplatKey::Imm(x), pack.dtype),
                    _ => continue,
                };
                let mask = pack.mask() as u8;
                if let Some(e) = self.splats.get_mut(&key) {
                    e.1 = e.1.max(mask);
                } else {
                    let r = self.fresh(ValueClass::Fp);
                    self.splats.insert(key, (r, mask, false));
                }
            }
        }
    }

    fn ensure_splat(&mut self, key: SplatKey, dtype: DataType, pc: usize) -> Reg {
        let (reg, mask, done) = self.splats[&(key, dtype)];
        if !done {
            let src = match key {
                SplatKey::Imm(x) => Src::Imm(x),
                SplatKey::Val(v) => self.lane_src(Operand::Val(v)),
            };
            self.emit(HostOp::Bcast { dtype, dst: reg, src, mask }, pc);
            self.splats.get_mut(&(key, dtype)).expect("splat registered").2 = true;
        }
        reg
    }

    fn ensure_gather(&mut self, g: usize, pc: usize) -> Reg {
        let dst = self.gather_reg[g];
        if self.gather_done[g] {
            return dst;
        }
        self.gather_done[g] = true;
        let gather = &self.plan.gathers[g];
        let dtype = gather.dtype;
        let elems: Vec<(Reg, u8)> = gather.inputs.iter().map(|&v| self.element(v)).collect();
        match gather.lowering {
            GatherLowering::SelectiveWrite => {}
            GatherLowering::Shuffle => {
                let (r0, l0) = elems[0];
                let (r1, l1) = elems[1];
                self.emit(HostOp::Shuf { dtype, dst, s1: r0, s2: r1, sel: vec![(0, l0), (1, l1)] }, pc);
                for (k, &(r, l)) in elems.iter().enumerate().skip(2) {
                    let mut sel: Vec<(u8, u8)> = (0..k as u8).map(|i| (0, i)).collect();
                    sel.push((1, l));
                    self.emit(HostOp::Shuf { dtype, dst, s1: dst, s2: r, sel }, pc);
                }
            }
            GatherLowering::Pack => {
                let n = elems.len();
                let mut pairs: Vec<usize> = (0..n / 2).map(|k| 2 * k).collect();
                if n % 2 == 1 {
                    pairs.push(n - 2);
                }
                for a in pairs {
                    let ((r0, l0), (r1, l1)) = (elems[a], elems[a + 1]);
                    let imm = pack_imm(l0, a as u8, l1, a as u8 + 1);
                    self.emit(HostOp::Pack { dtype, dst, s1: r0, s2: r1, imm }, pc);
                }
            }
        }
        dst
    }

    fn slot_src(&mut self, p: usize, slot: usize, pc: usize) -> Src {
        let pack = &self.plan.packs[p];
        let dtype = pack.dtype;
        match self.plan.operands[p][slot] {
            OperandSource::Direct(q) => Src::Reg(self.pack_reg[q]),
            OperandSource::Const(x) if pack.op == PackOp::Store => Src::Reg(self.ensure_splat(SplatKey::Imm(x), dtype, pc)),
            OperandSource::Const(x) => Src::Imm(x),
            OperandSource::Splat(v) => Src::Reg(self.ensure_splat(SplatKey::Val(v), dtype, pc)),
            OperandSource::Gather(g) => Src::Reg(self.ensure_gather(g, pc)),
        }
    }

    fn lower_pack(&mut self, p: usize) -> usize {
        let sb = self.sb;
        let pack = &self.plan.packs[p];
        let first = &sb.instrs[pack.members[0]];
        let pc = first.guest_pc;
        let (dtype, mask, dst) = (pack.dtype, pack.mask() as u8, self.pack_reg[p]);
        let op = match pack.op {
            PackOp::Load => {
                let m = first.mem.expect("load without address");
                HostOp::VLoad { dtype, dst, base: self.scalar_src(m.base), offset: m.offset, mask }
            }
            PackOp::Store => {
                let m = first.mem.expect("store without address");
                let src = match self.slot_src(p, 0, pc) {
                    Src::Reg(r) => r,
                    other => unreachable!("store source {other:?}"),
                };
                HostOp::VStore { dtype, src, base: self.scalar_src(m.base), offset: m.offset, mask }
            }
            PackOp::Arith(op) => {
                let a = self.slot_src(p, 0, pc);
                let b = self.slot_src(p, 1, pc);
                HostOp::VArith { op, dtype, dst, a, b, mask }
            }
        };
        let at = self.emit(op, pc);
        let lanes: Vec<usize> = self.plan.unpacks.iter().filter(|u| u.pack == p).flat_map(|u| u.lanes.clone()).filter(|&l| l != 0).collect();
        for chunk in lanes.chunks(2) {
            let outs: Vec<(u8, Reg)> = chunk
                .iter()
                .map(|&l| {
                    let v = sb.instrs[pack.members[l]].dst_value().expect("unpacked lane without a value");
                    (l as u8, self.extracted[&v])
                })
                .collect();
            self.emit(HostOp::Extract { dtype, src: dst, outs }, pc);
        }
        at
    }

    fn lower_scalar_inst(&mut self, i: usize) -> usize {
        let ins = &self.sb.instrs[i];
        let (dtype, pc) = (ins.dtype, ins.guest_pc);
        let op = match &ins.op {
            IrOp::Ld => {
                let m = ins.mem.expect("load without address");
                HostOp::SLoad { dtype, dst: self.dst(i), base: self.scalar_src(m.base), offset: m.offset }
            }
            IrOp::St => {
                let m = ins.mem.expect("store without address");
                HostOp::SStore { dtype, src: self.scalar_src(ins.srcs[0]), base: self.scalar_src(m.base), offset: m.offset }
            }
            IrOp::Arith(op) => HostOp::SArith {
                op: *op,
                dtype,
                dst: self.dst(i),
                a: self.scalar_src(ins.srcs[0]),
                b: self.scalar_src(ins.srcs[1]),
            },
            IrOp::Mov => HostOp::Mov { dtype, dst: self.dst(i), src: self.scalar_src(ins.srcs[0]) },
            IrOp::Cvt => HostOp::Cvt { dtype, dst: self.dst(i), src: self.scalar_src(ins.srcs[0]) },
            IrOp::Cmp => HostOp::Cmp {
                dtype,
                dst: self.dst(i).reg(),
                a: self.scalar_src(ins.srcs[0]),
                b: self.scalar_src(ins.srcs[1]),
            },
            IrOp::Assert { cond, expect } => {
                self.asserts += 1;
                HostOp::Assert { cond: *cond, expect: *expect, flags: self.scalar_src(ins.srcs[0]), id: self.asserts - 1 }
            }
            IrOp::SideExit { cond, when, target, writeback } => HostOp::ExitIf {
                cond: *cond,
                when: *when,
                flags: self.scalar_src(ins.srcs[0]),
                target: *target,
                writeback: self.writebacks(writeback),
            },
        };
        self.emit(op, pc)
    }

    /// Emits the tail writebacks and the region exit. Guest registers read
    /// by a writeback or the exit and also overwritten are first copied.
    fn lower_tail(&mut self) {
        let sb = self.sb;
        let pc = sb.instrs.last().map_or(sb.entry_pc, |i| i.guest_pc);
        let live_out: Vec<(GuestReg, Operand)> = sb.live_out.iter().map(|(&r, &o)| (r, o)).collect();
        let mut wbs = self.writebacks(&live_out);
        let targets: Vec<Reg> = wbs.iter().map(|w| Reg::guest(w.reg)).collect();
        let mut copies: BTreeMap<Reg, Reg> = BTreeMap::new();
        let mut copy = |this: &mut Self, r: Reg, dtype: DataType| -> Reg {
            if let Some(&c) = copies.get(&r) {
                return c;
            }
            let class = if dtype.is_float() { ValueClass::Fp } else { ValueClass::Int };
            let c = this.fresh(class);
            this.emit(HostOp::Mov { dtype, dst: Dst::Reg(c), src: Src::Reg(r) }, pc);
            copies.insert(r, c);
            c
        };
        for w in &mut wbs {
            if let Src::Reg(r) = w.src {
                if targets.contains(&r) {
                    w.src = Src::Reg(copy(self, r, w.dtype));
                }
            }
        }
        let exit = match sb.exit {
            SbExit::Halt { pc } => HostOp::Halt { pc },
            SbExit::Jump { target } => HostOp::Jump { target },
            SbExit::Branch { pc, cond, flags, taken, not_taken } => {
                let mut flags = self.scalar_src(flags);
                if let Src::Reg(r) = flags {
                    if targets.contains(&r) {
                        flags = Src::Reg(copy(self, r, DataType::I32));
                    }
                }
                HostOp::Branch { pc, cond, flags, taken, not_taken }
            }
        };
        for w in wbs {
            self.emit(HostOp::WriteBack(w), pc);
        }
        self.emit(exit, pc);
    }
}

/// Topological order of instructions and packs over hard dependences,
/// earliest member first among ready nodes. Returns node representatives:
/// an instruction index for scalar nodes, `n + p` for pack `p`.
fn node_order(sb: &Superblock, plan: &VectorPlan, ddg: &DepGraph, lane_of: &[Option<(usize, usize)>]) -> Result<Vec<usize>, LowerError> {
    let n = sb.instrs.len();
    let node = |i: usize| lane_of[i].map_or(i, |(p, _)| n + p);
    let total = n + plan.packs.len();
    let mut key: Vec<usize> = (0..total).collect();
    for (p, pack) in plan.packs.iter().enumerate() {
        key[n + p] = *pack.members.iter().min().expect("empty pack");
    }
    let mut succs: Vec<Vec<usize>> = vec![Vec::new(); total];
    let mut indeg = vec![0usize; total];
    for i in 0..n {
        for &j in ddg.succs(i) {
            let (a, b) = (node(i), node(j));
            if a != b && !succs[a].contains(&b) {
                succs[a].push(b);
                indeg[b] += 1;
            }
        }
    }
    let live = |x: usize| x >= n || lane_of[x].is_none();
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..total).filter(|&x| live(x) && indeg[x] == 0).map(|x| Reverse((key[x], x))).collect();
    let mut order = Vec::with_capacity(total);
    while let Some(Reverse((_, x))) = heap.pop() {
        order.push(x);
        for &s in &succs[x] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                heap.push(Reverse((key[s], s)));
            }
        }
    }
    if order.len() != (0..total).filter(|&x| live(x)).count() {
        return Err(LowerError::PackCycle);
    }
    Ok(order)
}

fn check_plan(plan: &VectorPlan, ddg: &DepGraph, cfg: VectorizationConfig) -> Result<(), LowerError> {
    for (p, pack) in plan.packs.iter().enumerate() {
        if pack.mask() > cfg.physical_lanes(pack.dtype) {
            return Err(LowerError::TooWide(p, pack.mask()));
        }
        if matches!(pack.op, PackOp::Load | PackOp::Store) {
            let ok = pack.members.windows(2).all(|w| match (ddg.addrs[w[0]], ddg.addrs[w[1]]) {
                (Some(a), Some(b)) => a.adjacent_before(&b),
                _ => false,
            });
            if !ok {
                return Err(LowerError::MemberOrder(p));
            }
        }
    }
    Ok(())
}

/// Lowers an SSA superblock and its vector plan to host code: emits packs,
/// pseudo-ops, scalar instructions and writebacks, list-schedules the result,
/// records the reordered may-alias pairs for run-time checking, and
/// allocates registers.
pub fn lower_to_host(sb: &Superblock, plan: &VectorPlan, ddg: &DepGraph, cfg: VectorizationConfig) -> Result<HostProgram, LowerError> {
    assert!(sb.ssa, "lowering expects SSA form");
    check_plan(plan, ddg, cfg)?;
    let n = sb.instrs.len();
    let lane_of = plan.lane_map(n);
    let mut lw = Lowerer {
        sb,
        plan,
        loc: HashMap::new(),
        extracted: HashMap::new(),
        pack_reg: Vec::new(),
        gather_reg: Vec::new(),
        gather_done: Vec::new(),
        splats: BTreeMap::new(),
        next_t: 0,
        next_v: 0,
        out: Vec::new(),
        host_of: vec![usize::MAX; n],
        asserts: 0,
    };
    lw.assign_locations();
    for x in node_order(sb, plan, ddg, &lane_of)? {
        if x >= n {
            let at = lw.lower_pack(x - n);
            for &m in &plan.packs[x - n].members {
                lw.host_of[m] = at;
            }
        } else {
            lw.host_of[x] = lw.lower_scalar_inst(x);
        }
    }
    lw.lower_tail();
    let Lowerer { out, host_of, .. } = lw;

    let mut extra = Vec::new();
    for e in &ddg.edges {
        if matches!(e.kind, EdgeKind::Mem(_) | EdgeKind::Order) && ddg.is_hard(e) {
            let (a, b) = (host_of[e.from], host_of[e.to]);
            if a != b {
                extra.push((a, b));
            }
        }
    }
    let order = schedule_host(&out, &extra)?;
    let mut pos = vec![0usize; out.len()];
    for (k, &i) in order.iter().enumerate() {
        pos[i] = k;
    }
    let mut instrs: Vec<HostInst> = order.iter().map(|&i| out[i].clone()).collect();

    let lanes = |i: usize| lane_of[i].map_or((0, 1), |(_, l)| (l as u8, 1));
    let mut spec_pairs = Vec::new();
    if ddg.speculation {
        for (a, b) in ddg.may_alias_pairs() {
            let (ha, hb) = (pos[host_of[a]], pos[host_of[b]]);
            if hb < ha {
                spec_pairs.push(SpecPair { first: hb, first_lanes: lanes(b), second: ha, second_lanes: lanes(a) });
                instrs[ha].spec = true;
                instrs[hb].spec = true;
            }
        }
    }
    allocate_registers(&mut instrs)?;
    Ok(HostProgram { sb_id: Some(sb.id), entry_pc: sb.entry_pc, vlen_bits: cfg.physical_bits, instrs, spec_pairs })
}

/// Lowers a superblock with no vector packs.
pub fn lower_scalar(sb: &Superblock, ddg: &DepGraph, cfg: VectorizationConfig) -> Result<HostProgram, LowerError> {
    lower_to_host(sb, &VectorPlan::default(), ddg, cfg)
}
