//! Superblock intermediate representation.
//!
//! Before SSA conversion operands name guest registers; afterwards every
//! register operand is a [`ValueId`] and each value has exactly one
//! definition.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::guest::{format_imm, ArithOp, BlockId, Cond, DataType, GuestReg};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueId(pub u32);

impl fmt::Display for ValueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operand {
    Reg(GuestReg),
    Val(ValueId),
    /// Register image in the consuming instruction's data type.
    Imm(u64),
}

impl Operand {
    pub fn value(self) -> Option<ValueId> {
        match self {
            Operand::Val(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dest {
    Reg(GuestReg),
    Val(ValueId),
}

impl Dest {
    pub fn value(self) -> Option<ValueId> {
        match self {
            Dest::Val(v) => Some(v),
            Dest::Reg(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MemRef {
    pub base: Operand,
    pub offset: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IrOp {
    Ld,
    St,
    Arith(ArithOp),
    Mov,
    Cvt,
    Cmp,
    /// Fails (rolling back the superblock) unless `cond(flags) == expect`.
    Assert { cond: Cond, expect: bool },
    /// Leaves the superblock for `target` when `cond(flags) == when`,
    /// after writing back the listed guest registers.
    SideExit { cond: Cond, when: bool, target: usize, writeback: Vec<(GuestReg, Operand)> },
}

impl IrOp {
    pub fn is_memory(&self) -> bool {
        matches!(self, IrOp::Ld | IrOp::St)
    }

    pub fn has_side_effect(&self) -> bool {
        matches!(self, IrOp::St | IrOp::Assert { .. } | IrOp::SideExit { .. })
    }

    fn mnemonic(&self) -> &'static str {
        match self {
            IrOp::Ld => "LD",
            IrOp::St => "ST",
            IrOp::Arith(op) => op.mnemonic(),
            IrOp::Mov => "MOV",
            IrOp::Cvt => "CVT",
            IrOp::Cmp => "CMP",
            IrOp::Assert { .. } => "ASSERT",
            IrOp::SideExit { .. } => "EXIT_IF",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrInst {
    pub op: IrOp,
    pub dtype: DataType,
    pub dst: Option<Dest>,
    pub srcs: Vec<Operand>,
    pub mem: Option<MemRef>,
    pub guest_pc: usize,
    /// Set when a may-alias memory pair involving this instruction was
    /// reordered.
    pub speculative: bool,
}

impl IrInst {
    pub fn new(op: IrOp, dtype: DataType, guest_pc: usize) -> Self {
        IrInst { op, dtype, dst: None, srcs: Vec::new(), mem: None, guest_pc, speculative: false }
    }

    pub fn dst_value(&self) -> Option<ValueId> {
        self.dst.and_then(Dest::value)
    }

    /// Every operand read by this instruction, including the memory base and
    /// side-exit writebacks.
    pub fn operands(&self) -> impl Iterator<Item = &Operand> {
        let wb: &[(GuestReg, Operand)] = match &self.op {
            IrOp::SideExit { writeback, .. } => writeback,
            _ => &[],
        };
        self.srcs.iter().chain(self.mem.as_ref().map(|m| &m.base)).chain(wb.iter().map(|(_, o)| o))
    }

    pub fn operands_mut(&mut self) -> Vec<&mut Operand> {
        let mut out: Vec<&mut Operand> = self.srcs.iter_mut().collect();
        if let Some(m) = self.mem.as_mut() {
            out.push(&mut m.base);
        }
        if let IrOp::SideExit { writeback, .. } = &mut self.op {
            out.extend(writeback.iter_mut().map(|(_, o)| o));
        }
        out
    }

    /// Values read, excluding side-exit writebacks.
    pub fn used_values(&self) -> impl Iterator<Item = ValueId> + '_ {
        self.srcs.iter().chain(self.mem.as_ref().map(|m| &m.base)).filter_map(|o| o.value())
    }

    pub fn is_fp_candidate(&self) -> bool {
        self.dtype.is_float() && matches!(self.op, IrOp::Ld | IrOp::St | IrOp::Arith(_))
    }
}

fn fmt_operand(o: &Operand, dtype: DataType) -> String {
    match o {
        Operand::Reg(r) => r.to_string(),
        Operand::Val(v) => v.to_string(),
        Operand::Imm(bits) => format_imm(dtype, *bits),
    }
}

impl fmt::Display for IrInst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.op.mnemonic(), self.dtype)?;
        let mut parts = Vec::new();
        match self.dst {
            Some(Dest::Reg(r)) => parts.push(r.to_string()),
            Some(Dest::Val(v)) => parts.push(v.to_string()),
            None => {}
        }
        let src_dtype = if matches!(self.op, IrOp::Cvt) {
            match self.dtype {
                DataType::F32 => DataType::F64,
                _ => DataType::F32,
            }
        } else {
            self.dtype
        };
        if let Some(m) = &self.mem {
            parts.push(format!("[{}{:+}]", fmt_operand(&m.base, DataType::I32), m.offset));
        }
        for s in &self.srcs {
            parts.push(fmt_operand(s, src_dtype));
        }
        match &self.op {
            IrOp::Assert { cond, expect } => parts.push(format!("{}=={}", cond.name(), expect)),
            IrOp::SideExit { cond, when, target, .. } => parts.push(format!("{}=={} -> @{}", cond.name(), when, target)),
            _ => {}
        }
        if !parts.is_empty() {
            write!(f, " {}", parts.join(", "))?;
        }
        if self.speculative {
            f.write_str(" !spec")?;
        }
        Ok(())
    }
}

/// How control leaves the superblock when it runs to the end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SbExit {
    Halt { pc: usize },
    Jump { target: usize },
    Branch { pc: usize, cond: Cond, flags: Operand, taken: usize, not_taken: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueClass {
    Int,
    Fp,
    Flags,
}

impl ValueClass {
    pub fn of(reg: GuestReg) -> Self {
        match reg {
            GuestReg::Int(_) => ValueClass::Int,
            GuestReg::Fp(_) => ValueClass::Fp,
            GuestReg::Flags => ValueClass::Flags,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueInfo {
    pub class: ValueClass,
    /// Data type of the defining instruction; `None` for FP live-ins whose
    /// image type is unknown.
    pub dtype: Option<DataType>,
    pub live_in: Option<GuestReg>,
}

/// Single-entry optimization region.
#[derive(Debug, Clone, PartialEq)]
pub struct Superblock {
    pub id: usize,
    pub entry_pc: usize,
    pub guest_blocks: Vec<BlockId>,
    pub instrs: Vec<IrInst>,
    pub exit: SbExit,
    pub unroll_factor: u32,
    pub multi_exit: bool,
    /// Whether may-alias memory pairs may be reordered speculatively.
    pub speculation: bool,
    pub ssa: bool,
    pub values: Vec<ValueInfo>,
    /// Final operand for every guest register written in the region.
    pub live_out: BTreeMap<GuestReg, Operand>,
}

impl Superblock {
    pub fn asserts(&self) -> impl Iterator<Item = &IrInst> {
        self.instrs.iter().filter(|i| matches!(i.op, IrOp::Assert { .. }))
    }

    pub fn new_value(&mut self, info: ValueInfo) -> ValueId {
        self.values.push(info);
        ValueId(self.values.len() as u32 - 1)
    }

    pub fn value(&self, v: ValueId) -> &ValueInfo {
        &self.values[v.0 as usize]
    }

    /// Value → index of its defining instruction.
    pub fn def_map(&self) -> HashMap<ValueId, usize> {
        self.instrs
            .iter()
            .enumerate()
            .filter_map(|(i, ins)| ins.dst_value().map(|v| (v, i)))
            .collect()
    }

    /// Number of reads of each value by instructions (side-exit writebacks
    /// and live-outs excluded).
    pub fn use_counts(&self) -> HashMap<ValueId, usize> {
        let mut uses = HashMap::new();
        for ins in &self.instrs {
            for v in ins.used_values() {
                *uses.entry(v).or_insert(0) += 1;
            }
        }
        if let SbExit::Branch { flags: Operand::Val(v), .. } = self.exit {
            *uses.entry(v).or_insert(0) += 1;
        }
        uses
    }

    pub fn listing(&self) -> String {
        let mut out = format!(
            "superblock #{} entry=@{} blocks={:?} unroll={} multi_exit={} ssa={}\n",
            self.id, self.entry_pc, self.guest_blocks, self.unroll_factor, self.multi_exit, self.ssa
        );
        for (i, ins) in self.instrs.iter().enumerate() {
            out.push_str(&format!("  {i:4}  {ins}\n"));
        }
        match self.exit {
            SbExit::Halt { pc } => out.push_str(&format!("  exit: HALT @{pc}\n")),
            SbExit::Jump { target } => out.push_str(&format!("  exit: JMP @{target}\n")),
            SbExit::Branch { cond, flags, taken, not_taken, .. } => out.push_str(&format!(
                "  exit: BR {} {} ? @{} : @{}\n",
                cond.name(),
                fmt_operand(&flags, DataType::I32),
                taken,
                not_taken
            )),
        }
        if !self.live_out.is_empty() {
            let lo: Vec<String> = self
                .live_out
                .iter()
                .map(|(r, o)| format!("{r}={}", fmt_operand(o, DataType::I32)))
                .collect();
            out.push_str(&format!("  live-out: {}\n", lo.join(" ")));
        }
        out
    }
}
