//! The scalar guest ISA: instruction set, programs, architectural state and
//! the profiling interpreter.

mod interp;
mod parse;
mod profile;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use interp::{interpret, interpret_block, run_oracle, BlockRun, InterpPolicy, StopReason, DEFAULT_STEP_LIMIT};
pub(crate) use interp::{canonical, convert};
pub use parse::parse_program;
pub use profile::ProfileData;

/// Number of architectural integer and FP registers.
pub const GUEST_REGS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DataType {
    F32,
    F64,
    I32,
}

impl DataType {
    pub fn width_bits(self) -> u32 {
        match self {
            DataType::F32 | DataType::I32 => 32,
            DataType::F64 => 64,
        }
    }

    pub fn width_bytes(self) -> usize {
        self.width_bits() as usize / 8
    }

    pub fn is_float(self) -> bool {
        !matches!(self, DataType::I32)
    }

    pub fn suffix(self) -> &'static str {
        match self {
            DataType::F32 => "f32",
            DataType::F64 => "f64",
            DataType::I32 => "i32",
        }
    }

    pub fn from_suffix(s: &str) -> Option<DataType> {
        match s {
            "f32" => Some(DataType::F32),
            "f64" => Some(DataType::F64),
            "i32" => Some(DataType::I32),
            _ => None,
        }
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.suffix())
    }
}

/// The four vectorizable arithmetic operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            ArithOp::Add => "ADD",
            ArithOp::Sub => "SUB",
            ArithOp::Mul => "MUL",
            ArithOp::Div => "DIV",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Opcode {
    Ld,
    St,
    Arith(ArithOp),
    Mov,
    Cvt,
    Cmp,
    Br,
    Jmp,
    Halt,
}

impl Opcode {
    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Ld => "LD",
            Opcode::St => "ST",
            Opcode::Arith(op) => op.mnemonic(),
            Opcode::Mov => "MOV",
            Opcode::Cvt => "CVT",
            Opcode::Cmp => "CMP",
            Opcode::Br => "BR",
            Opcode::Jmp => "JMP",
            Opcode::Halt => "HALT",
        }
    }

    pub fn is_terminator(self) -> bool {
        matches!(self, Opcode::Br | Opcode::Jmp | Opcode::Halt)
    }
}

/// An architectural register. `Flags` is the comparison-result register
/// written by CMP and read by BR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GuestReg {
    Int(u8),
    Fp(u8),
    Flags,
}

impl fmt::Display for GuestReg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GuestReg::Int(n) => write!(f, "r{n}"),
            GuestReg::Fp(n) => write!(f, "f{n}"),
            GuestReg::Flags => f.write_str("flags"),
        }
    }
}

/// Source operand: a register or an immediate. Immediates are stored as the
/// register image of the instruction's data type (f32 bits zero-extended,
/// i32 sign-extended).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GuestOperand {
    Reg(GuestReg),
    Imm(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MemOperand {
    pub base: u8,
    pub offset: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cond {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Cond {
    pub fn name(self) -> &'static str {
        match self {
            Cond::Eq => "eq",
            Cond::Ne => "ne",
            Cond::Lt => "lt",
            Cond::Le => "le",
            Cond::Gt => "gt",
            Cond::Ge => "ge",
        }
    }

    pub fn from_name(s: &str) -> Option<Cond> {
        Some(match s {
            "eq" => Cond::Eq,
            "ne" => Cond::Ne,
            "lt" => Cond::Lt,
            "le" => Cond::Le,
            "gt" => Cond::Gt,
            "ge" => Cond::Ge,
            _ => return None,
        })
    }

    /// Ordered semantics: every condition but `ne` is false on unordered flags.
    pub fn holds(self, flags: Flags) -> bool {
        use Flags::*;
        match (self, flags) {
            (Cond::Ne, Unordered) => true,
            (_, Unordered) => false,
            (Cond::Eq, f) => f == Equal,
            (Cond::Ne, f) => f != Equal,
            (Cond::Lt, f) => f == Less,
            (Cond::Le, f) => f != Greater,
            (Cond::Gt, f) => f == Greater,
            (Cond::Ge, f) => f != Less,
        }
    }
}

/// Result of the last CMP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Flags {
    Less,
    #[default]
    Equal,
    Greater,
    Unordered,
}

impl Flags {
    pub fn encode(self) -> i64 {
        match self {
            Flags::Less => 0,
            Flags::Equal => 1,
            Flags::Greater => 2,
            Flags::Unordered => 3,
        }
    }

    pub fn decode(v: i64) -> Flags {
        match v {
            0 => Flags::Less,
            1 => Flags::Equal,
            2 => Flags::Greater,
            _ => Flags::Unordered,
        }
    }

    pub fn compare_bits(dtype: DataType, a: u64, b: u64) -> Flags {
        use std::cmp::Ordering;
        let ord = match dtype {
            DataType::I32 => Some((a as i64 as i32).cmp(&(b as i64 as i32))),
            DataType::F32 => f32::from_bits(a as u32).partial_cmp(&f32::from_bits(b as u32)),
            DataType::F64 => f64::from_bits(a).partial_cmp(&f64::from_bits(b)),
        };
        match ord {
            Some(Ordering::Less) => Flags::Less,
            Some(Ordering::Equal) => Flags::Equal,
            Some(Ordering::Greater) => Flags::Greater,
            None => Flags::Unordered,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuestInstruction {
    pub opcode: Opcode,
    pub dtype: DataType,
    pub dst: Option<GuestReg>,
    pub srcs: Vec<GuestOperand>,
    pub mem: Option<MemOperand>,
    pub cond: Option<Cond>,
    /// Resolved branch/jump target instruction index.
    pub br_target: Option<usize>,
    /// Floating-point classification used for accounting.
    pub fp: bool,
}

impl GuestInstruction {
    pub fn new(opcode: Opcode, dtype: DataType) -> Self {
        GuestInstruction {
            opcode,
            dtype,
            dst: None,
            srcs: Vec::new(),
            mem: None,
            cond: None,
            br_target: None,
            fp: false,
        }
    }

    /// Recomputes the `fp` flag from opcode and data type.
    pub fn classify(mut self) -> Self {
        self.fp = self.dtype.is_float()
            && matches!(
                self.opcode,
                Opcode::Ld | Opcode::St | Opcode::Arith(_) | Opcode::Mov | Opcode::Cvt | Opcode::Cmp
            );
        self
    }
}

impl fmt::Display for GuestInstruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opnd = |o: &GuestOperand| match o {
            GuestOperand::Reg(r) => r.to_string(),
            GuestOperand::Imm(bits) => format_imm(self.dtype, *bits),
        };
        match self.opcode {
            Opcode::Halt => f.write_str("HALT"),
            Opcode::Jmp => write!(f, "JMP @{}", self.br_target.unwrap_or(0)),
            Opcode::Br => write!(
                f,
                "BR {}, @{}",
                self.cond.map(Cond::name).unwrap_or("?"),
                self.br_target.unwrap_or(0)
            ),
            Opcode::Ld => {
                let m = self.mem.expect("LD carries mem");
                write!(f, "LD.{} {}, [r{}{:+}]", self.dtype, self.dst.unwrap(), m.base, m.offset)
            }
            Opcode::St => {
                let m = self.mem.expect("ST carries mem");
                write!(f, "ST.{} [r{}{:+}], {}", self.dtype, m.base, m.offset, opnd(&self.srcs[0]))
            }
            _ => {
                write!(f, "{}.{}", self.opcode.mnemonic(), self.dtype)?;
                let mut sep = " ";
                if let Some(d) = self.dst {
                    write!(f, " {d}")?;
                    sep = ", ";
                }
                for s in &self.srcs {
                    write!(f, "{sep}{}", opnd(s))?;
                    sep = ", ";
                }
                Ok(())
            }
        }
    }
}

/// Renders an immediate register image in the instruction's data type.
pub fn format_imm(dtype: DataType, bits: u64) -> String {
    match dtype {
        DataType::I32 => format!("{}", bits as i64),
        DataType::F32 => format!("{:?}", f32::from_bits(bits as u32)),
        DataType::F64 => format!("{:?}", f64::from_bits(bits)),
    }
}

/// A basic block: `[start, end]` inclusive instruction indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockInfo {
    pub start: usize,
    pub end: usize,
}

/// Basic blocks are identified by the index of their first instruction.
pub type BlockId = usize;

#[derive(Debug, Clone)]
pub struct GuestProgram {
    pub name: String,
    pub instructions: Vec<GuestInstruction>,
    pub labels: BTreeMap<String, usize>,
    pub entry: usize,
    pub arena_bytes: usize,
    /// Initial memory image (`init` directives applied).
    pub initial_memory: Vec<u8>,
    blocks: Vec<BlockInfo>,
    block_of: Vec<usize>,
}

impl GuestProgram {
    pub(crate) fn assemble(
        name: String,
        instructions: Vec<GuestInstruction>,
        labels: BTreeMap<String, usize>,
        arena_bytes: usize,
        initial_memory: Vec<u8>,
    ) -> Self {
        let n = instructions.len();
        let mut leader = vec![false; n];
        if n > 0 {
            leader[0] = true;
        }
        for &idx in labels.values() {
            if idx < n {
                leader[idx] = true;
            }
        }
        for (i, ins) in instructions.iter().enumerate() {
            if let Some(t) = ins.br_target {
                if t < n {
                    leader[t] = true;
                }
            }
            if ins.opcode.is_terminator() && i + 1 < n {
                leader[i + 1] = true;
            }
        }
        let mut blocks = Vec::new();
        let mut block_of = vec![0; n];
        let mut start = 0;
        for i in 0..n {
            if i > start && leader[i] {
                blocks.push(BlockInfo { start, end: i - 1 });
                start = i;
            }
            block_of[i] = blocks.len();
        }
        if n > 0 {
            blocks.push(BlockInfo { start, end: n - 1 });
        }
        GuestProgram {
            name,
            instructions,
            labels,
            entry: 0,
            arena_bytes,
            initial_memory,
            blocks,
            block_of,
        }
    }

    pub fn blocks(&self) -> &[BlockInfo] {
        &self.blocks
    }

    /// The block that contains instruction `pc`.
    pub fn block_at(&self, pc: usize) -> BlockInfo {
        self.blocks[self.block_of[pc]]
    }

    pub fn is_block_start(&self, pc: usize) -> bool {
        pc < self.instructions.len() && self.block_at(pc).start == pc
    }

    /// Label naming `pc`, if any.
    pub fn label_at(&self, pc: usize) -> Option<&str> {
        self.labels.iter().find(|(_, &v)| v == pc).map(|(k, _)| k.as_str())
    }

    pub fn initial_state(&self) -> ArchState {
        ArchState {
            int_regs: [0; GUEST_REGS],
            fp_regs: [0; GUEST_REGS],
            memory: self.initial_memory.clone(),
            pc: self.entry,
            flags: Flags::default(),
        }
    }

    /// Program listing with labels, one instruction per line.
    pub fn listing(&self) -> String {
        let mut out = String::new();
        for (i, ins) in self.instructions.iter().enumerate() {
            for (name, _) in self.labels.iter().filter(|(_, &v)| v == i) {
                out.push_str(&format!("{name}:\n"));
            }
            out.push_str(&format!("  {i:4}  {ins}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("access of {bytes} bytes at address {addr} is outside the {arena}-byte arena")]
    OutOfArena { addr: i64, bytes: usize, arena: usize },
}

/// Architectural guest state. Plain data; cloning it is a checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArchState {
    pub int_regs: [i64; GUEST_REGS],
    /// FP register images; f32 values occupy the low 32 bits.
    pub fp_regs: [u64; GUEST_REGS],
    pub memory: Vec<u8>,
    pub pc: usize,
    pub flags: Flags,
}

impl ArchState {
    fn range(&self, addr: i64, bytes: usize) -> Result<std::ops::Range<usize>, MemoryError> {
        let err = MemoryError::OutOfArena { addr, bytes, arena: self.memory.len() };
        if addr < 0 {
            return Err(err);
        }
        let start = addr as usize;
        let end = start.checked_add(bytes).ok_or(err)?;
        if end > self.memory.len() {
            return Err(err);
        }
        Ok(start..end)
    }

    /// Reads `bytes` (≤ 8) little-endian bytes as a zero-extended image.
    pub fn load(&self, addr: i64, bytes: usize) -> Result<u64, MemoryError> {
        let r = self.range(addr, bytes)?;
        let mut raw = [0u8; 8];
        raw[..bytes].copy_from_slice(&self.memory[r]);
        Ok(u64::from_le_bytes(raw))
    }

    pub fn store(&mut self, addr: i64, bytes: usize, value: u64) -> Result<(), MemoryError> {
        let r = self.range(addr, bytes)?;
        self.memory[r].copy_from_slice(&value.to_le_bytes()[..bytes]);
        Ok(())
    }

    pub fn load_slice(&self, addr: i64, bytes: usize) -> Result<&[u8], MemoryError> {
        let r = self.range(addr, bytes)?;
        Ok(&self.memory[r])
    }

    pub fn store_slice(&mut self, addr: i64, data: &[u8]) -> Result<(), MemoryError> {
        let r = self.range(addr, data.len())?;
        self.memory[r].copy_from_slice(data);
        Ok(())
    }

    pub fn read_reg(&self, reg: GuestReg) -> u64 {
        match reg {
            GuestReg::Int(n) => self.int_regs[n as usize] as u64,
            GuestReg::Fp(n) => self.fp_regs[n as usize],
            GuestReg::Flags => self.flags.encode() as u64,
        }
    }

    pub fn write_reg(&mut self, reg: GuestReg, value: u64) {
        match reg {
            GuestReg::Int(n) => self.int_regs[n as usize] = value as i64,
            GuestReg::Fp(n) => self.fp_regs[n as usize] = value,
            GuestReg::Flags => self.flags = Flags::decode(value as i64),
        }
    }

    /// First differing state element against `other`, for diagnostics.
    pub fn first_difference(&self, other: &ArchState) -> Option<String> {
        for i in 0..GUEST_REGS {
            if self.int_regs[i] != other.int_regs[i] {
                return Some(format!("r{i}: {} vs {}", self.int_regs[i], other.int_regs[i]));
            }
        }
        for i in 0..GUEST_REGS {
            if self.fp_regs[i] != other.fp_regs[i] {
                return Some(format!("f{i}: {:#018x} vs {:#018x}", self.fp_regs[i], other.fp_regs[i]));
            }
        }
        if self.flags != other.flags {
            return Some(format!("flags: {:?} vs {:?}", self.flags, other.flags));
        }
        if self.memory.len() != other.memory.len() {
            return Some(format!("arena size: {} vs {}", self.memory.len(), other.memory.len()));
        }
        if let Some(i) = (0..self.memory.len()).find(|&i| self.memory[i] != other.memory[i]) {
            return Some(format!("mem[{i}]: {:#04x} vs {:#04x}", self.memory[i], other.memory[i]));
        }
        if self.pc != other.pc {
            return Some(format!("pc: {} vs {}", self.pc, other.pc));
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GuestError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: undefined label `{label}`")]
    UndefinedLabel { line: usize, label: String },
    #[error("line {line}: register `{reg}` out of range")]
    RegisterOutOfRange { line: usize, reg: String },
    #[error("program is invalid: {0}")]
    Invalid(String),
    #[error("pc {pc}: {source}")]
    Memory { pc: usize, source: MemoryError },
    #[error("pc {pc}: divide by zero")]
    DivideByZero { pc: usize },
    #[error("step limit of {0} instructions exceeded")]
    StepLimit(u64),
}
