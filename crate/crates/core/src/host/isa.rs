use std::fmt;

use crate::guest::{format_imm, ArithOp, Cond, DataType, GuestReg};

/// Bytes in one vector register (the widest supported vector length).
pub const VREG_BYTES: usize = 64;
/// Architected vector registers.
pub const NUM_VREGS: usize = 128;
/// Integer registers beyond the 32 that hold guest integer state.
pub const NUM_TEMPS: usize = 96;

/// Host register. `T` and `V` numbers are virtual until register allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Reg {
    /// Guest integer register.
    R(u8),
    /// Guest FP register.
    F(u8),
    /// Guest flags.
    Flags,
    /// Integer temporary.
    T(u32),
    /// Vector register; scalar FP values live in lane 0.
    V(u32),
}

impl Reg {
    pub fn guest(r: GuestReg) -> Reg {
        match r {
            GuestReg::Int(n) => Reg::R(n),
            GuestReg::Fp(n) => Reg::F(n),
            GuestReg::Flags => Reg::Flags,
        }
    }

    pub fn is_vector(self) -> bool {
        matches!(self, Reg::V(_))
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reg::R(n) => write!(f, "r{n}"),
            Reg::F(n) => write!(f, "f{n}"),
            Reg::Flags => f.write_str("flags"),
            Reg::T(n) => write!(f, "t{n}"),
            Reg::V(n) => write!(f, "v{n}"),
        }
    }
}

/// Source operand. Scalar instructions read lane 0 of a vector register;
/// `Lane` is only used by writebacks. In vector instructions `Imm` is a
/// constant splat across the enabled lanes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Src {
    Reg(Reg),
    Lane(Reg, u8),
    Imm(u64),
}

impl Src {
    pub fn reg(self) -> Option<Reg> {
        match self {
            Src::Reg(r) | Src::Lane(r, _) => Some(r),
            Src::Imm(_) => None,
        }
    }
}

/// Scalar destination. `Lane(v, e)` is a selective write of element `e`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dst {
    Reg(Reg),
    Lane(Reg, u8),
}

impl Dst {
    pub fn reg(self) -> Reg {
        match self {
            Dst::Reg(r) | Dst::Lane(r, _) => r,
        }
    }

    /// Whether the write leaves other parts of the register intact.
    pub fn is_partial(self) -> bool {
        matches!(self, Dst::Lane(..))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WriteBack {
    pub reg: GuestReg,
    pub dtype: DataType,
    pub src: Src,
}

/// Encodes the PACK immediate: `dst[n1] = s1[n0]`, `dst[n3] = s2[n2]`.
pub fn pack_imm(n0: u8, n1: u8, n2: u8, n3: u8) -> u16 {
    (n0 as u16 & 0xF) | (n1 as u16 & 0xF) << 4 | (n2 as u16 & 0xF) << 8 | (n3 as u16 & 0xF) << 12
}

/// Decodes a PACK immediate into `(n0, n1, n2, n3)`.
pub fn pack_fields(imm: u16) -> (u8, u8, u8, u8) {
    ((imm & 0xF) as u8, (imm >> 4 & 0xF) as u8, (imm >> 8 & 0xF) as u8, (imm >> 12 & 0xF) as u8)
}

#[derive(Debug, Clone, PartialEq)]
pub enum HostOp {
    /// Lane-wise arithmetic on lanes `0..mask`.
    VArith { op: ArithOp, dtype: DataType, dst: Reg, a: Src, b: Src, mask: u8 },
    VLoad { dtype: DataType, dst: Reg, base: Src, offset: i64, mask: u8 },
    VStore { dtype: DataType, src: Reg, base: Src, offset: i64, mask: u8 },
    /// Scalar arithmetic, integer or FP by `dtype`.
    SArith { op: ArithOp, dtype: DataType, dst: Dst, a: Src, b: Src },
    SLoad { dtype: DataType, dst: Dst, base: Src, offset: i64 },
    SStore { dtype: DataType, src: Src, base: Src, offset: i64 },
    Mov { dtype: DataType, dst: Dst, src: Src },
    /// Converts to `dtype` from the other FP width.
    Cvt { dtype: DataType, dst: Dst, src: Src },
    /// Writes the encoded flags of `a` vs `b` to an integer register.
    Cmp { dtype: DataType, dst: Reg, a: Src, b: Src },
    /// Two-source shuffle: `dst[i] = (s1, s2)[sel[i].0][sel[i].1]` for
    /// `i < sel.len()`.
    Shuf { dtype: DataType, dst: Reg, s1: Reg, s2: Reg, sel: Vec<(u8, u8)> },
    /// Two-element gather; see [`pack_imm`].
    Pack { dtype: DataType, dst: Reg, s1: Reg, s2: Reg, imm: u16 },
    /// Copies a scalar into lanes `0..mask`.
    Bcast { dtype: DataType, dst: Reg, src: Src, mask: u8 },
    /// Moves up to two elements of `src` into lane 0 of scalar registers.
    Extract { dtype: DataType, src: Reg, outs: Vec<(u8, Reg)> },
    Assert { cond: Cond, expect: bool, flags: Src, id: u32 },
    /// Writes back and leaves for `target` when `cond(flags) == when`.
    ExitIf { cond: Cond, when: bool, flags: Src, target: usize, writeback: Vec<WriteBack> },
    WriteBack(WriteBack),
    Jump { target: usize },
    Branch { pc: usize, cond: Cond, flags: Src, taken: usize, not_taken: usize },
    Halt { pc: usize },
}

/// Accounting class of a host instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InstrClass {
    /// Masked vector arithmetic or memory op.
    Vector,
    /// Scalar FP arithmetic, load or store.
    ScalarFp,
    /// Shuffle, PACK, broadcast or extract.
    Permutation,
    /// FP move, conversion or compare.
    Unvectorizable,
    /// Integer work, control, writebacks.
    Other,
}

impl HostOp {
    pub fn class(&self) -> InstrClass {
        match self {
            HostOp::VArith { .. } | HostOp::VLoad { .. } | HostOp::VStore { .. } => InstrClass::Vector,
            HostOp::SArith { dtype, .. } | HostOp::SLoad { dtype, .. } | HostOp::SStore { dtype, .. } => {
                if dtype.is_float() {
                    InstrClass::ScalarFp
                } else {
                    InstrClass::Other
                }
            }
            HostOp::Mov { dtype, .. } | HostOp::Cvt { dtype, .. } | HostOp::Cmp { dtype, .. } => {
                if dtype.is_float() {
                    InstrClass::Unvectorizable
                } else {
                    InstrClass::Other
                }
            }
            HostOp::Shuf { .. } | HostOp::Pack { .. } | HostOp::Bcast { .. } | HostOp::Extract { .. } => {
                InstrClass::Permutation
            }
            _ => InstrClass::Other,
        }
    }

    /// Enabled lane count of a vector instruction.
    pub fn mask(&self) -> Option<u8> {
        match self {
            HostOp::VArith { mask, .. } | HostOp::VLoad { mask, .. } | HostOp::VStore { mask, .. } => Some(*mask),
            _ => None,
        }
    }

    pub fn is_memory(&self) -> bool {
        matches!(self, HostOp::VLoad { .. } | HostOp::VStore { .. } | HostOp::SLoad { .. } | HostOp::SStore { .. })
    }

    pub fn is_store(&self) -> bool {
        matches!(self, HostOp::VStore { .. } | HostOp::SStore { .. })
    }

    pub fn dtype(&self) -> Option<DataType> {
        match self {
            HostOp::VArith { dtype, .. }
            | HostOp::VLoad { dtype, .. }
            | HostOp::VStore { dtype, .. }
            | HostOp::SArith { dtype, .. }
            | HostOp::SLoad { dtype, .. }
            | HostOp::SStore { dtype, .. }
            | HostOp::Mov { dtype, .. }
            | HostOp::Cvt { dtype, .. }
            | HostOp::Cmp { dtype, .. }
            | HostOp::Shuf { dtype, .. }
            | HostOp::Pack { dtype, .. }
            | HostOp::Bcast { dtype, .. }
            | HostOp::Extract { dtype, .. } => Some(*dtype),
            HostOp::WriteBack(w) => Some(w.dtype),
            _ => None,
        }
    }

    /// Bytes touched by a memory instruction.
    pub fn access_bytes(&self) -> usize {
        match self {
            HostOp::VLoad { dtype, mask, .. } | HostOp::VStore { dtype, mask, .. } => {
                dtype.width_bytes() * *mask as usize
            }
            HostOp::SLoad { dtype, .. } | HostOp::SStore { dtype, .. } => dtype.width_bytes(),
            _ => 0,
        }
    }

    /// Registers read.
    pub fn reads(&self) -> Vec<Reg> {
        let mut out = Vec::new();
        let mut src = |s: &Src| {
            if let Some(r) = s.reg() {
                out.push(r);
            }
        };
        match self {
            HostOp::VArith { a, b, .. } | HostOp::SArith { a, b, .. } | HostOp::Cmp { a, b, .. } => {
                src(a);
                src(b);
            }
            HostOp::VLoad { base, .. } | HostOp::SLoad { base, .. } => src(base),
            HostOp::VStore { src: s, base, .. } => {
                src(&Src::Reg(*s));
                src(base);
            }
            HostOp::SStore { src: s, base, .. } => {
                src(s);
                src(base);
            }
            HostOp::Mov { src: s, .. } | HostOp::Cvt { src: s, .. } | HostOp::Bcast { src: s, .. } => src(s),
            HostOp::Shuf { s1, s2, .. } => {
                src(&Src::Reg(*s1));
                src(&Src::Reg(*s2));
            }
            HostOp::Pack { s1, s2, .. } => {
                src(&Src::Reg(*s1));
                src(&Src::Reg(*s2));
            }
            HostOp::Extract { src: s, .. } => src(&Src::Reg(*s)),
            HostOp::Assert { flags, .. } | HostOp::Branch { flags, .. } => src(flags),
            HostOp::ExitIf { flags, writeback, .. } => {
                src(flags);
                for w in writeback {
                    src(&w.src);
                }
            }
            HostOp::WriteBack(w) => src(&w.src),
            HostOp::Jump { .. } | HostOp::Halt { .. } => {}
        }
        out.sort();
        out.dedup();
        out
    }

    /// Registers written, each flagged when the write is partial.
    pub fn writes(&self) -> Vec<(Reg, bool)> {
        match self {
            HostOp::VArith { dst, .. } | HostOp::VLoad { dst, .. } | HostOp::Bcast { dst, .. } => vec![(*dst, false)],
            HostOp::Shuf { dst, .. } => vec![(*dst, false)],
            // Unselected elements survive; two PACKs into one register commute.
            HostOp::Pack { dst, .. } => vec![(*dst, true)],
            HostOp::SArith { dst, .. } | HostOp::SLoad { dst, .. } | HostOp::Mov { dst, .. } | HostOp::Cvt { dst, .. } => {
                vec![(dst.reg(), dst.is_partial())]
            }
            HostOp::Cmp { dst, .. } => vec![(*dst, false)],
            HostOp::Extract { outs, .. } => outs.iter().map(|&(_, r)| (r, false)).collect(),
            HostOp::WriteBack(w) => vec![(Reg::guest(w.reg), false)],
            HostOp::ExitIf { writeback, .. } => writeback.iter().map(|w| (Reg::guest(w.reg), false)).collect(),
            _ => Vec::new(),
        }
    }

    /// Whether the instruction can leave the block or abort it.
    pub fn is_control(&self) -> bool {
        matches!(
            self,
            HostOp::Assert { .. } | HostOp::ExitIf { .. } | HostOp::Jump { .. } | HostOp::Branch { .. } | HostOp::Halt { .. }
        )
    }

    /// Applies `f` to every register operand, reads and writes alike.
    pub fn map_regs(&mut self, mut f: impl FnMut(Reg) -> Reg) {
        let src = |s: &mut Src, f: &mut dyn FnMut(Reg) -> Reg| match s {
            Src::Reg(r) | Src::Lane(r, _) => *r = f(*r),
            Src::Imm(_) => {}
        };
        let dst = |d: &mut Dst, f: &mut dyn FnMut(Reg) -> Reg| match d {
            Dst::Reg(r) | Dst::Lane(r, _) => *r = f(*r),
        };
        match self {
            HostOp::VArith { dst: d, a, b, .. } => {
                *d = f(*d);
                src(a, &mut f);
                src(b, &mut f);
            }
            HostOp::VLoad { dst: d, base, .. } => {
                *d = f(*d);
                src(base, &mut f);
            }
            HostOp::VStore { src: s, base, .. } => {
                *s = f(*s);
                src(base, &mut f);
            }
            HostOp::SArith { dst: d, a, b, .. } => {
                dst(d, &mut f);
                src(a, &mut f);
                src(b, &mut f);
            }
            HostOp::SLoad { dst: d, base, .. } => {
                dst(d, &mut f);
                src(base, &mut f);
            }
            HostOp::SStore { src: s, base, .. } => {
                src(s, &mut f);
                src(base, &mut f);
            }
            HostOp::Mov { dst: d, src: s, .. } | HostOp::Cvt { dst: d, src: s, .. } => {
                dst(d, &mut f);
                src(s, &mut f);
            }
            HostOp::Cmp { dst: d, a, b, .. } => {
                *d = f(*d);
                src(a, &mut f);
                src(b, &mut f);
            }
            HostOp::Shuf { dst: d, s1, s2, .. } | HostOp::Pack { dst: d, s1, s2, .. } => {
                *d = f(*d);
                *s1 = f(*s1);
                *s2 = f(*s2);
            }
            HostOp::Bcast { dst: d, src: s, .. } => {
                *d = f(*d);
                src(s, &mut f);
            }
            HostOp::Extract { src: s, outs, .. } => {
                *s = f(*s);
                for (_, r) in outs {
                    *r = f(*r);
                }
            }
            HostOp::Assert { flags, .. } | HostOp::Branch { flags, .. } => src(flags, &mut f),
            HostOp::ExitIf { flags, writeback, .. } => {
                src(flags, &mut f);
                for w in writeback {
                    src(&mut w.src, &mut f);
                }
            }
            HostOp::WriteBack(w) => src(&mut w.src, &mut f),
            HostOp::Jump { .. } | HostOp::Halt { .. } => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HostInst {
    pub op: HostOp,
    /// Memory access that was reordered past a may-alias access and is
    /// checked at run time.
    pub spec: bool,
    pub guest_pc: usize,
}

impl HostInst {
    pub fn new(op: HostOp, guest_pc: usize) -> Self {
        HostInst { op, spec: false, guest_pc }
    }
}

/// A reordered may-alias pair. `first` executes before `second` in the host
/// code; each side names the lanes of its instruction that belong to the
/// pair as `(start, count)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpecPair {
    pub first: usize,
    pub first_lanes: (u8, u8),
    pub second: usize,
    pub second_lanes: (u8, u8),
}

/// Translated code for one region.
#[derive(Debug, Clone, PartialEq)]
pub struct HostProgram {
    /// Superblock id, or `None` for a basic-block translation.
    pub sb_id: Option<usize>,
    pub entry_pc: usize,
    pub vlen_bits: u32,
    pub instrs: Vec<HostInst>,
    pub spec_pairs: Vec<SpecPair>,
}

fn fmt_src(s: &Src, dtype: DataType) -> String {
    match s {
        Src::Reg(r) => r.to_string(),
        Src::Lane(r, e) => format!("{r}[{e}]"),
        Src::Imm(bits) => format_imm(dtype, *bits),
    }
}

fn fmt_dst(d: &Dst) -> String {
    match d {
        Dst::Reg(r) => r.to_string(),
        Dst::Lane(r, e) => format!("{r}[{e}]"),
    }
}

fn fmt_mem(base: &Src, offset: i64) -> String {
    format!("[{}{:+}]", fmt_src(base, DataType::I32), offset)
}

fn fmt_wb(w: &WriteBack) -> String {
    format!("{}={}", w.reg, fmt_src(&w.src, w.dtype))
}

impl fmt::Display for HostInst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let spec = if self.spec { "SPEC_" } else { "" };
        match &self.op {
            HostOp::VArith { op, dtype, dst, a, b, mask } => {
                write!(f, "V{}.{dtype} {dst}, {}, {} k={mask}", op.mnemonic(), fmt_src(a, *dtype), fmt_src(b, *dtype))
            }
            HostOp::VLoad { dtype, dst, base, offset, mask } => {
                write!(f, "{spec}VLD.{dtype} {dst}, {} k={mask}", fmt_mem(base, *offset))
            }
            HostOp::VStore { dtype, src, base, offset, mask } => {
                write!(f, "{spec}VST.{dtype} {}, {src} k={mask}", fmt_mem(base, *offset))
            }
            HostOp::SArith { op, dtype, dst, a, b } => {
                write!(f, "S{}.{dtype} {}, {}, {}", op.mnemonic(), fmt_dst(dst), fmt_src(a, *dtype), fmt_src(b, *dtype))
            }
            HostOp::SLoad { dtype, dst, base, offset } => {
                write!(f, "{spec}SLD.{dtype} {}, {}", fmt_dst(dst), fmt_mem(base, *offset))
            }
            HostOp::SStore { dtype, src, base, offset } => {
                write!(f, "{spec}SST.{dtype} {}, {}", fmt_mem(base, *offset), fmt_src(src, *dtype))
            }
            HostOp::Mov { dtype, dst, src } => write!(f, "MOV.{dtype} {}, {}", fmt_dst(dst), fmt_src(src, *dtype)),
            HostOp::Cvt { dtype, dst, src } => write!(f, "CVT.{dtype} {}, {}", fmt_dst(dst), fmt_src(src, DataType::I32)),
            HostOp::Cmp { dtype, dst, a, b } => {
                write!(f, "CMP.{dtype} {dst}, {}, {}", fmt_src(a, *dtype), fmt_src(b, *dtype))
            }
            HostOp::Shuf { dtype, dst, s1, s2, sel } => {
                let sel: Vec<String> = sel.iter().map(|(s, l)| format!("{s}.{l}")).collect();
                write!(f, "SHUF.{dtype} {dst}, {s1}, {s2}, [{}]", sel.join(" "))
            }
            HostOp::Pack { dtype, dst, s1, s2, imm } => write!(f, "PACK.{dtype} {dst}, {s1}, {s2}, {imm:#06x}"),
            HostOp::Bcast { dtype, dst, src, mask } => write!(f, "BCAST.{dtype} {dst}, {} k={mask}", fmt_src(src, *dtype)),
            HostOp::Extract { dtype, src, outs } => {
                let outs: Vec<String> = outs.iter().map(|(l, r)| format!("{r}={src}[{l}]")).collect();
                write!(f, "UNPACK_EXTRACT.{dtype} {}", outs.join(", "))
            }
            HostOp::Assert { cond, expect, flags, id } => {
                write!(f, "ASSERT#{id} {}({})=={expect}", cond.name(), fmt_src(flags, DataType::I32))
            }
            HostOp::ExitIf { cond, when, flags, target, writeback } => {
                let wb: Vec<String> = writeback.iter().map(fmt_wb).collect();
                write!(f, "EXIT_IF {}({})=={when} -> @{target} {{{}}}", cond.name(), fmt_src(flags, DataType::I32), wb.join(" "))
            }
            HostOp::WriteBack(w) => write!(f, "WB.{} {}", w.dtype, fmt_wb(w)),
            HostOp::Jump { target } => write!(f, "JMP @{target}"),
            HostOp::Branch { cond, flags, taken, not_taken, .. } => {
                write!(f, "BR {}({}) ? @{taken} : @{not_taken}", cond.name(), fmt_src(flags, DataType::I32))
            }
            HostOp::Halt { pc } => write!(f, "HALT @{pc}"),
        }
    }
}

impl HostProgram {
    pub fn listing(&self) -> String {
        let kind = match self.sb_id {
            Some(id) => format!("superblock #{id}"),
            None => "block".to_string(),
        };
        let mut out = format!("{kind} entry=@{} vlen={}\n", self.entry_pc, self.vlen_bits);
        for (i, ins) in self.instrs.iter().enumerate() {
            out.push_str(&format!("  {i:4}  {ins}\n"));
        }
        for p in &self.spec_pairs {
            out.push_str(&format!(
                "  spec-check {}{:?} vs {}{:?}\n",
                p.first, p.first_lanes, p.second, p.second_lanes
            ));
        }
        out
    }

    pub fn count(&self, class: InstrClass) -> usize {
        self.instrs.iter().filter(|i| i.op.class() == class).count()
    }
}
