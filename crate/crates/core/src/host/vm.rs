use thiserror::Error;

use super::isa::{pack_fields, Dst, HostOp, HostProgram, Reg, Src, WriteBack, NUM_TEMPS, NUM_VREGS, VREG_BYTES};
use crate::guest::{canonical, convert, ArchState, DataType, Flags, MemoryError};
use crate::scalar::{apply, apply_i32, Element};

/// Raw vector register image.
pub type VReg = [u8; VREG_BYTES];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VmError {
    #[error("divide by zero")]
    DivideByZero,
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("invalid host instruction: {0}")]
    Invalid(String),
}

/// Typed copy of a vector register's elements.
#[derive(Debug, Clone, PartialEq)]
pub struct Lanes<T: Element> {
    vals: Vec<T>,
}

impl<T: Element> Lanes<T> {
    pub const COUNT: usize = VREG_BYTES / T::BYTES;

    pub fn read(reg: &VReg) -> Self {
        Lanes { vals: reg.chunks_exact(T::BYTES).map(T::read_le).collect() }
    }

    pub fn splat(v: T) -> Self {
        Lanes { vals: vec![v; Self::COUNT] }
    }

    pub fn get(&self, lane: usize) -> T {
        self.vals[lane]
    }

    pub fn set(&mut self, lane: usize, v: T) {
        self.vals[lane] = v;
    }

    /// Writes lanes `0..k` into `reg`, leaving the rest untouched.
    pub fn write_prefix(&self, reg: &mut VReg, k: usize) {
        for (lane, v) in self.vals.iter().take(k).enumerate() {
            v.write_le(&mut reg[lane * T::BYTES..]);
        }
    }

    /// Applies `op` lane-wise on lanes `0..k`; other lanes of the result are
    /// copies of `a`.
    pub fn zip_prefix(op: crate::guest::ArithOp, a: &Self, b: &Self, k: usize) -> Result<Self, VmError> {
        let mut out = a.clone();
        for lane in 0..k {
            out.vals[lane] = apply(op, a.vals[lane], b.vals[lane]).map_err(|_| VmError::DivideByZero)?;
        }
        Ok(out)
    }
}

/// Host register state beyond the guest architectural state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegFile {
    pub vregs: Vec<VReg>,
    pub temps: Vec<i64>,
}

impl Default for RegFile {
    fn default() -> Self {
        RegFile { vregs: vec![[0; VREG_BYTES]; NUM_VREGS], temps: vec![0; NUM_TEMPS] }
    }
}

/// Everything needed to restart a region from its entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: ArchState,
    pub regs: RegFile,
    pub entry_pc: usize,
}

impl Checkpoint {
    pub fn take(state: &ArchState, regs: &RegFile, entry_pc: usize) -> Self {
        Checkpoint { state: state.clone(), regs: regs.clone(), entry_pc }
    }

    pub fn restore(&self, state: &mut ArchState, regs: &mut RegFile) {
        state.clone_from(&self.state);
        regs.clone_from(&self.regs);
        state.pc = self.entry_pc;
    }
}

fn vreg_index(r: Reg) -> Result<usize, VmError> {
    match r {
        Reg::V(n) if (n as usize) < NUM_VREGS => Ok(n as usize),
        _ => Err(VmError::Invalid(format!("{r} is not a vector register"))),
    }
}

fn lane_bytes(reg: &VReg, lane: usize, width: usize) -> u64 {
    let mut raw = [0u8; 8];
    raw[..width].copy_from_slice(&reg[lane * width..(lane + 1) * width]);
    u64::from_le_bytes(raw)
}

fn set_lane_bytes(reg: &mut VReg, lane: usize, width: usize, bits: u64) {
    reg[lane * width..(lane + 1) * width].copy_from_slice(&bits.to_le_bytes()[..width]);
}

/// Reads one element of a permutation source. A guest FP register acts as
/// a vector whose only element is lane 0.
fn source_lane(r: Reg, lane: u8, width: usize, regs: &RegFile, state: &ArchState) -> Result<u64, VmError> {
    match r {
        Reg::F(_) if lane == 0 => Ok(state.read_reg(guest_of(r)) & width_mask(width)),
        Reg::F(_) => Err(VmError::Invalid(format!("lane {lane} of scalar register {r}"))),
        _ => Ok(lane_bytes(&regs.vregs[vreg_index(r)?], check_lane(lane, width)?, width)),
    }
}

fn width_mask(width: usize) -> u64 {
    if width >= 8 {
        u64::MAX
    } else {
        (1u64 << (8 * width)) - 1
    }
}

fn check_lane(lane: u8, width: usize) -> Result<usize, VmError> {
    let lane = lane as usize;
    if lane * width >= VREG_BYTES {
        return Err(VmError::Invalid(format!("lane {lane} out of range")));
    }
    Ok(lane)
}

/// Reads a scalar operand as a register image of `dtype`.
pub fn read_scalar(src: Src, dtype: DataType, regs: &RegFile, state: &ArchState) -> Result<u64, VmError> {
    let width = dtype.width_bytes();
    Ok(match src {
        Src::Imm(bits) => bits,
        Src::Reg(Reg::V(n)) => lane_bytes(&regs.vregs[vreg_index(Reg::V(n))?], 0, width),
        Src::Lane(Reg::V(n), lane) => {
            let lane = check_lane(lane, width)?;
            lane_bytes(&regs.vregs[vreg_index(Reg::V(n))?], lane, width)
        }
        Src::Reg(Reg::T(n)) => *regs.temps.get(n as usize).ok_or_else(|| VmError::Invalid(format!("t{n}")))? as u64,
        Src::Reg(r @ (Reg::R(_) | Reg::F(_) | Reg::Flags)) => state.read_reg(guest_of(r)),
        Src::Lane(r, _) => return Err(VmError::Invalid(format!("lane read of scalar register {r}"))),
    })
}

fn guest_of(r: Reg) -> crate::guest::GuestReg {
    use crate::guest::GuestReg;
    match r {
        Reg::R(n) => GuestReg::Int(n),
        Reg::F(n) => GuestReg::Fp(n),
        _ => GuestReg::Flags,
    }
}

/// Writes a scalar result image of `dtype`. A vector destination receives the
/// value in one element; all other elements are preserved.
pub fn write_scalar(dst: Dst, dtype: DataType, bits: u64, regs: &mut RegFile, state: &mut ArchState) -> Result<(), VmError> {
    let width = dtype.width_bytes();
    match dst {
        Dst::Reg(Reg::V(n)) => set_lane_bytes(&mut regs.vregs[vreg_index(Reg::V(n))?], 0, width, bits),
        Dst::Lane(Reg::V(n), lane) => {
            let lane = check_lane(lane, width)?;
            set_lane_bytes(&mut regs.vregs[vreg_index(Reg::V(n))?], lane, width, bits);
        }
        Dst::Reg(Reg::T(n)) => {
            let slot = regs.temps.get_mut(n as usize).ok_or_else(|| VmError::Invalid(format!("t{n}")))?;
            *slot = canonical(dtype, bits) as i64;
        }
        Dst::Reg(r @ (Reg::R(_) | Reg::F(_) | Reg::Flags)) => state.write_reg(guest_of(r), canonical(dtype, bits)),
        Dst::Lane(r, _) => return Err(VmError::Invalid(format!("lane write to scalar register {r}"))),
    }
    Ok(())
}

fn address(base: Src, offset: i64, regs: &RegFile, state: &ArchState) -> Result<i64, VmError> {
    let b = read_scalar(base, DataType::I32, regs, state)?;
    Ok((b as i64 as i32 as i64).wrapping_add(offset))
}

fn vector_operand<T: Element>(s: Src, regs: &RegFile) -> Result<Lanes<T>, VmError> {
    match s {
        Src::Reg(r) => Ok(Lanes::read(&regs.vregs[vreg_index(r)?])),
        Src::Imm(bits) => Ok(Lanes::splat(T::from_bits64(bits))),
        Src::Lane(..) => Err(VmError::Invalid("lane operand in vector instruction".into())),
    }
}

fn masked_arith<T: Element>(op: crate::guest::ArithOp, dst: Reg, a: Src, b: Src, k: usize, regs: &mut RegFile) -> Result<(), VmError> {
    if k == 0 || k > Lanes::<T>::COUNT {
        return Err(VmError::Invalid(format!("mask {k}")));
    }
    let a = vector_operand::<T>(a, regs)?;
    let b = vector_operand::<T>(b, regs)?;
    let r = Lanes::zip_prefix(op, &a, &b, k)?;
    r.write_prefix(&mut regs.vregs[vreg_index(dst)?], k);
    Ok(())
}

/// Executes a masked vector arithmetic, load or store. Lanes at or above the
/// mask are neither computed, read from memory, nor written.
pub fn exec_masked_vector(op: &HostOp, regs: &mut RegFile, state: &mut ArchState) -> Result<(), VmError> {
    match *op {
        HostOp::VArith { op, dtype, dst, a, b, mask } => match dtype {
            DataType::F32 => masked_arith::<f32>(op, dst, a, b, mask as usize, regs),
            DataType::F64 => masked_arith::<f64>(op, dst, a, b, mask as usize, regs),
            DataType::I32 => Err(VmError::Invalid("integer vector arithmetic".into())),
        },
        HostOp::VLoad { dtype, dst, base, offset, mask } => {
            let n = dtype.width_bytes() * mask as usize;
            if mask == 0 || n > VREG_BYTES {
                return Err(VmError::Invalid(format!("mask {mask}")));
            }
            let addr = address(base, offset, regs, state)?;
            let data = state.load_slice(addr, n)?;
            regs.vregs[vreg_index(dst)?][..n].copy_from_slice(data);
            Ok(())
        }
        HostOp::VStore { dtype, src, base, offset, mask } => {
            let n = dtype.width_bytes() * mask as usize;
            if mask == 0 || n > VREG_BYTES {
                return Err(VmError::Invalid(format!("mask {mask}")));
            }
            let addr = address(base, offset, regs, state)?;
            let data: Vec<u8> = regs.vregs[vreg_index(src)?][..n].to_vec();
            state.store_slice(addr, &data)?;
            Ok(())
        }
        _ => Err(VmError::Invalid("not a masked vector instruction".into())),
    }
}

fn scalar_arith(op: crate::guest::ArithOp, dtype: DataType, a: u64, b: u64) -> Result<u64, VmError> {
    let r = match dtype {
        DataType::F32 => apply::<f32>(op, f32::from_bits64(a), f32::from_bits64(b)).map(Element::to_bits64),
        DataType::F64 => apply::<f64>(op, f64::from_bits64(a), f64::from_bits64(b)).map(Element::to_bits64),
        DataType::I32 => apply_i32(op, a as i64, b as i64).map(|v| v as u64),
    };
    r.map_err(|_| VmError::DivideByZero)
}

/// Executes a scalar arithmetic, load, move or conversion. With a `Lane`
/// destination only that element of the vector register changes.
pub fn exec_selective_scalar(op: &HostOp, regs: &mut RegFile, state: &mut ArchState) -> Result<(), VmError> {
    match *op {
        HostOp::SArith { op, dtype, dst, a, b } => {
            let a = read_scalar(a, dtype, regs, state)?;
            let b = read_scalar(b, dtype, regs, state)?;
            let r = scalar_arith(op, dtype, a, b)?;
            write_scalar(dst, dtype, r, regs, state)
        }
        HostOp::SLoad { dtype, dst, base, offset } => {
            let addr = address(base, offset, regs, state)?;
            let v = state.load(addr, dtype.width_bytes())?;
            write_scalar(dst, dtype, v, regs, state)
        }
        HostOp::Mov { dtype, dst, src } => {
            let v = read_scalar(src, dtype, regs, state)?;
            write_scalar(dst, dtype, v, regs, state)
        }
        HostOp::Cvt { dtype, dst, src } => {
            let from = match dtype {
                DataType::F32 => DataType::F64,
                DataType::F64 => DataType::F32,
                DataType::I32 => DataType::I32,
            };
            let v = read_scalar(src, from, regs, state)?;
            write_scalar(dst, dtype, convert(dtype, v), regs, state)
        }
        _ => Err(VmError::Invalid("not a scalar instruction".into())),
    }
}

/// Executes PACK: `dst[n1] = s1[n0]` and `dst[n3] = s2[n2]`; every other
/// element of `dst` is preserved. Both sources are read before any write.
pub fn exec_pack(op: &HostOp, regs: &mut RegFile, state: &ArchState) -> Result<(), VmError> {
    let HostOp::Pack { dtype, dst, s1, s2, imm } = *op else {
        return Err(VmError::Invalid("not a PACK instruction".into()));
    };
    let w = dtype.width_bytes();
    let (n0, n1, n2, n3) = pack_fields(imm);
    if n1 == n3 {
        return Err(VmError::Invalid(format!("PACK writes element {n1} twice")));
    }
    let x = source_lane(s1, n0, w, regs, state)?;
    let y = source_lane(s2, n2, w, regs, state)?;
    let (n1, n3) = (check_lane(n1, w)?, check_lane(n3, w)?);
    let d = &mut regs.vregs[vreg_index(dst)?];
    set_lane_bytes(d, n1, w, x);
    set_lane_bytes(d, n3, w, y);
    Ok(())
}

fn exec_permute(op: &HostOp, regs: &mut RegFile, state: &ArchState) -> Result<(), VmError> {
    match op {
        HostOp::Shuf { dtype, dst, s1, s2, sel } => {
            let w = dtype.width_bytes();
            let mut vals = Vec::with_capacity(sel.len());
            for &(s, lane) in sel {
                let r = if s & 1 == 0 { *s1 } else { *s2 };
                vals.push(source_lane(r, lane, w, regs, state)?);
            }
            let d = &mut regs.vregs[vreg_index(*dst)?];
            for (i, v) in vals.into_iter().enumerate() {
                set_lane_bytes(d, check_lane(i as u8, w)?, w, v);
            }
            Ok(())
        }
        HostOp::Pack { .. } => exec_pack(op, regs, state),
        HostOp::Bcast { dtype, dst, src, mask } => {
            let w = dtype.width_bytes();
            let v = read_scalar(*src, *dtype, regs, state)?;
            let d = &mut regs.vregs[vreg_index(*dst)?];
            for lane in 0..*mask {
                set_lane_bytes(d, check_lane(lane, w)?, w, v);
            }
            Ok(())
        }
        HostOp::Extract { dtype, src, outs } => {
            let w = dtype.width_bytes();
            let s = regs.vregs[vreg_index(*src)?];
            let mut vals = Vec::with_capacity(outs.len());
            for &(lane, _) in outs {
                vals.push(lane_bytes(&s, check_lane(lane, w)?, w));
            }
            for (&(_, r), v) in outs.iter().zip(vals) {
                set_lane_bytes(&mut regs.vregs[vreg_index(r)?], 0, w, v);
            }
            Ok(())
        }
        _ => Err(VmError::Invalid("not a permutation instruction".into())),
    }
}

fn apply_writebacks(wb: &[WriteBack], regs: &RegFile, state: &mut ArchState) -> Result<(), VmError> {
    let vals: Vec<u64> = wb.iter().map(|w| read_scalar(w.src, w.dtype, regs, state)).collect::<Result<_, _>>()?;
    for (w, v) in wb.iter().zip(vals) {
        state.write_reg(w.reg, canonical(w.dtype, v));
    }
    Ok(())
}

fn read_flags(src: Src, regs: &RegFile, state: &ArchState) -> Result<Flags, VmError> {
    Ok(Flags::decode(read_scalar(src, DataType::I32, regs, state)? as i64))
}

/// One executed host instruction: its index and, for memory instructions,
/// the effective address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEntry {
    pub idx: u32,
    pub addr: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    /// Ran to an exit. `branch` is `(pc, taken)` for a final conditional
    /// branch.
    Completed { next_pc: usize, halted: bool, branch: Option<(usize, bool)> },
    AssertFailed { id: u32 },
    /// A reordered may-alias pair overlapped at run time.
    SpecFailed,
    /// An enabled lane or scalar op faulted; the region was rolled back.
    Faulted(VmError),
}

impl Outcome {
    pub fn committed(&self) -> bool {
        matches!(self, Outcome::Completed { .. })
    }
}

enum Step {
    Next,
    Leave(Outcome),
}

fn exec(
    prog: &HostProgram,
    idx: usize,
    regs: &mut RegFile,
    state: &mut ArchState,
    spans: &mut [Option<(i64, i64)>],
) -> Result<Step, VmError> {
    let ins = &prog.instrs[idx];
    match &ins.op {
        op @ (HostOp::VArith { .. } | HostOp::VLoad { .. } | HostOp::VStore { .. }) => exec_masked_vector(op, regs, state)?,
        op @ (HostOp::SArith { .. } | HostOp::SLoad { .. } | HostOp::Mov { .. } | HostOp::Cvt { .. }) => {
            exec_selective_scalar(op, regs, state)?
        }
        HostOp::SStore { dtype, src, base, offset } => {
            let addr = address(*base, *offset, regs, state)?;
            let v = read_scalar(*src, *dtype, regs, state)?;
            state.store(addr, dtype.width_bytes(), v)?;
        }
        HostOp::Cmp { dtype, dst, a, b } => {
            let a = read_scalar(*a, *dtype, regs, state)?;
            let b = read_scalar(*b, *dtype, regs, state)?;
            let f = Flags::compare_bits(*dtype, a, b).encode() as u64;
            write_scalar(Dst::Reg(*dst), DataType::I32, f, regs, state)?;
        }
        op @ (HostOp::Shuf { .. } | HostOp::Pack { .. } | HostOp::Bcast { .. } | HostOp::Extract { .. }) => {
            exec_permute(op, regs, state)?
        }
        HostOp::Assert { cond, expect, flags, id } => {
            if cond.holds(read_flags(*flags, regs, state)?) != *expect {
                return Ok(Step::Leave(Outcome::AssertFailed { id: *id }));
            }
        }
        HostOp::ExitIf { cond, when, flags, target, writeback } => {
            if cond.holds(read_flags(*flags, regs, state)?) == *when {
                apply_writebacks(writeback, regs, state)?;
                state.pc = *target;
                return Ok(Step::Leave(Outcome::Completed { next_pc: *target, halted: false, branch: None }));
            }
        }
        HostOp::WriteBack(w) => apply_writebacks(std::slice::from_ref(w), regs, state)?,
        HostOp::Jump { target } => {
            state.pc = *target;
            return Ok(Step::Leave(Outcome::Completed { next_pc: *target, halted: false, branch: None }));
        }
        HostOp::Branch { pc, cond, flags, taken, not_taken } => {
            let t = cond.holds(read_flags(*flags, regs, state)?);
            let next = if t { *taken } else { *not_taken };
            state.pc = next;
            return Ok(Step::Leave(Outcome::Completed { next_pc: next, halted: false, branch: Some((*pc, t)) }));
        }
        HostOp::Halt { pc } => {
            state.pc = *pc;
            return Ok(Step::Leave(Outcome::Completed { next_pc: *pc, halted: true, branch: None }));
        }
    }
    if ins.spec {
        if let Some(span) = spans[idx] {
            for p in prog.spec_pairs.iter().filter(|p| p.second == idx) {
                let Some(first) = spans[p.first] else { continue };
                let a = lane_span(first, &prog.instrs[p.first].op, p.first_lanes);
                let b = lane_span(span, &ins.op, p.second_lanes);
                if a.0 < b.1 && b.0 < a.1 {
                    return Ok(Step::Leave(Outcome::SpecFailed));
                }
            }
        }
    }
    Ok(Step::Next)
}

fn lane_span(span: (i64, i64), op: &HostOp, lanes: (u8, u8)) -> (i64, i64) {
    let w = op.dtype().map_or(1, DataType::width_bytes) as i64;
    let start = span.0 + lanes.0 as i64 * w;
    (start, start + lanes.1 as i64 * w)
}

/// Effective byte range of a memory instruction.
fn mem_span(op: &HostOp, regs: &RegFile, state: &ArchState) -> Result<Option<(i64, i64)>, VmError> {
    let (base, offset) = match op {
        HostOp::VLoad { base, offset, .. }
        | HostOp::VStore { base, offset, .. }
        | HostOp::SLoad { base, offset, .. }
        | HostOp::SStore { base, offset, .. } => (*base, *offset),
        _ => return Ok(None),
    };
    let addr = address(base, offset, regs, state)?;
    Ok(Some((addr, addr + op.access_bytes() as i64)))
}

/// Runs translated code from its entry. A checkpoint is taken first; on an
/// assert failure, a speculation failure or a fault, state is restored to it
/// and `state.pc` is the region entry. Executed instructions are appended to
/// `trace`, including those of a failed attempt.
pub fn run_superblock(
    prog: &HostProgram,
    state: &mut ArchState,
    regs: &mut RegFile,
    mut trace: Option<&mut Vec<TraceEntry>>,
) -> Outcome {
    let checkpoint = Checkpoint::take(state, regs, prog.entry_pc);
    let outcome = execute(prog, state, regs, &mut trace);
    if !outcome.committed() {
        checkpoint.restore(state, regs);
    }
    outcome
}

fn execute(prog: &HostProgram, state: &mut ArchState, regs: &mut RegFile, trace: &mut Option<&mut Vec<TraceEntry>>) -> Outcome {
    let mut spans = vec![None; prog.instrs.len()];
    for idx in 0..prog.instrs.len() {
        let op = &prog.instrs[idx].op;
        let span = match mem_span(op, regs, state) {
            Ok(s) => s,
            Err(e) => return Outcome::Faulted(e),
        };
        spans[idx] = span;
        if let Some(t) = trace.as_deref_mut() {
            t.push(TraceEntry { idx: idx as u32, addr: span.map(|s| s.0) });
        }
        match exec(prog, idx, regs, state, &mut spans) {
            Ok(Step::Next) => {}
            Ok(Step::Leave(o)) => return o,
            Err(e) => return Outcome::Faulted(e),
        }
    }
    Outcome::Faulted(VmError::Invalid("fell off the end of a translation".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guest::{ArithOp, Cond, GuestReg, GUEST_REGS};
    use crate::host::isa::{pack_imm, HostInst, SpecPair};

    fn state(bytes: usize) -> ArchState {
        ArchState { int_regs: [0; GUEST_REGS], fp_regs: [0; GUEST_REGS], memory: vec![0; bytes], pc: 0, flags: Flags::Equal }
    }

    fn f32s(regs: &mut RegFile, r: usize, vals: &[f32]) {
        let mut l = Lanes::<f32>::read(&regs.vregs[r]);
        for (i, v) in vals.iter().enumerate() {
            l.set(i, *v);
        }
        l.write_prefix(&mut regs.vregs[r], vals.len());
    }

    #[test]
    fn masked_add_touches_only_enabled_lanes() {
        let mut regs = RegFile::default();
        let mut st = state(0);
        f32s(&mut regs, 1, &[1.0, 2.0, 7.0, 8.0]);
        f32s(&mut regs, 2, &[10.0, 20.0, 70.0, 80.0]);
        f32s(&mut regs, 0, &[-1.0, -2.0, -3.0, -4.0]);
        let op = HostOp::VArith { op: ArithOp::Add, dtype: DataType::F32, dst: Reg::V(0), a: Src::Reg(Reg::V(1)), b: Src::Reg(Reg::V(2)), mask: 2 };
        exec_masked_vector(&op, &mut regs, &mut st).unwrap();
        let l = Lanes::<f32>::read(&regs.vregs[0]);
        assert_eq!([l.get(0), l.get(1), l.get(2), l.get(3)], [11.0, 22.0, -3.0, -4.0]);
    }

    #[test]
    fn disabled_lane_divide_by_zero_is_ignored() {
        let mut regs = RegFile::default();
        let mut st = state(0);
        f32s(&mut regs, 1, &[1.0, 2.0, 3.0, 4.0]);
        f32s(&mut regs, 2, &[1.0, 2.0, 1.0, 0.0]);
        let op = |mask| HostOp::VArith { op: ArithOp::Div, dtype: DataType::F32, dst: Reg::V(0), a: Src::Reg(Reg::V(1)), b: Src::Reg(Reg::V(2)), mask };
        assert!(exec_masked_vector(&op(2), &mut regs, &mut st).is_ok());
        assert_eq!(exec_masked_vector(&op(4), &mut regs, &mut st), Err(VmError::DivideByZero));
    }

    #[test]
    fn masked_store_at_arena_edge_does_not_fault() {
        let mut regs = RegFile::default();
        let mut st = state(64);
        let op = |mask| HostOp::VStore { dtype: DataType::F64, src: Reg::V(0), base: Src::Imm(32), offset: 0, mask };
        assert!(exec_masked_vector(&op(4), &mut regs, &mut st).is_ok());
        assert!(exec_masked_vector(&op(5), &mut regs, &mut st).is_err());
    }

    #[test]
    fn masked_store_writes_exactly_k_elements() {
        let mut regs = RegFile::default();
        regs.vregs[0] = [0xAB; VREG_BYTES];
        let mut st = state(64);
        let op = HostOp::VStore { dtype: DataType::F64, src: Reg::V(0), base: Src::Imm(0), offset: 8, mask: 2 };
        exec_masked_vector(&op, &mut regs, &mut st).unwrap();
        assert!(st.memory[..8].iter().all(|&b| b == 0));
        assert!(st.memory[8..24].iter().all(|&b| b == 0xAB));
        assert!(st.memory[24..].iter().all(|&b| b == 0));
    }

    #[test]
    fn selective_write_changes_one_element() {
        let mut regs = RegFile::default();
        let mut st = state(0);
        f32s(&mut regs, 3, &[5.0, 6.0, 7.0, 8.0]);
        let op = HostOp::SArith {
            op: ArithOp::Add,
            dtype: DataType::F32,
            dst: Dst::Lane(Reg::V(3), 3),
            a: Src::Imm(1.0f32.to_bits() as u64),
            b: Src::Imm(2.0f32.to_bits() as u64),
        };
        exec_selective_scalar(&op, &mut regs, &mut st).unwrap();
        let l = Lanes::<f32>::read(&regs.vregs[3]);
        assert_eq!([l.get(0), l.get(1), l.get(2), l.get(3)], [5.0, 6.0, 7.0, 3.0]);
    }

    #[test]
    fn selective_writes_commute() {
        let lane_op = |lane, v: f32| HostOp::Mov { dtype: DataType::F32, dst: Dst::Lane(Reg::V(0), lane), src: Src::Imm(v.to_bits() as u64) };
        let mut st = state(0);
        let mut a = RegFile::default();
        let mut b = RegFile::default();
        exec_selective_scalar(&lane_op(0, 1.0), &mut a, &mut st).unwrap();
        exec_selective_scalar(&lane_op(1, 2.0), &mut a, &mut st).unwrap();
        exec_selective_scalar(&lane_op(1, 2.0), &mut b, &mut st).unwrap();
        exec_selective_scalar(&lane_op(0, 1.0), &mut b, &mut st).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pack_places_two_elements() {
        let mut regs = RegFile::default();
        let st = state(16);
        f32s(&mut regs, 1, &[1.0, 2.0]);
        f32s(&mut regs, 2, &[3.0, 4.0]);
        f32s(&mut regs, 0, &[9.0, 9.0, 9.0, 9.0]);
        let op = HostOp::Pack { dtype: DataType::F32, dst: Reg::V(0), s1: Reg::V(1), s2: Reg::V(2), imm: pack_imm(0, 0, 0, 1) };
        exec_pack(&op, &mut regs, &st).unwrap();
        let l = Lanes::<f32>::read(&regs.vregs[0]);
        assert_eq!([l.get(0), l.get(1), l.get(2), l.get(3)], [1.0, 3.0, 9.0, 9.0]);
    }

    #[test]
    fn pack_reads_before_writing() {
        let mut regs = RegFile::default();
        let st = state(16);
        f32s(&mut regs, 0, &[1.0, 2.0, 3.0, 4.0]);
        let op = HostOp::Pack { dtype: DataType::F32, dst: Reg::V(0), s1: Reg::V(0), s2: Reg::V(0), imm: pack_imm(1, 0, 0, 1) };
        exec_pack(&op, &mut regs, &st).unwrap();
        let l = Lanes::<f32>::read(&regs.vregs[0]);
        assert_eq!([l.get(0), l.get(1), l.get(2)], [2.0, 1.0, 3.0]);
    }

    #[test]
    fn pack_gathers_four_values_in_two_instructions() {
        let mut regs = RegFile::default();
        let st = state(16);
        for (r, v) in [(1, 1.0), (2, 2.0), (3, 3.0), (4, 4.0)] {
            f32s(&mut regs, r, &[v]);
        }
        let p = |s1, s2, lo: u8| HostOp::Pack { dtype: DataType::F32, dst: Reg::V(0), s1: Reg::V(s1), s2: Reg::V(s2), imm: pack_imm(0, lo, 0, lo + 1) };
        exec_pack(&p(1, 2, 0), &mut regs, &st).unwrap();
        exec_pack(&p(3, 4, 2), &mut regs, &st).unwrap();
        let l = Lanes::<f32>::read(&regs.vregs[0]);
        assert_eq!([l.get(0), l.get(1), l.get(2), l.get(3)], [1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn pack_rejects_duplicate_destination() {
        let mut regs = RegFile::default();
        let st = state(16);
        let op = HostOp::Pack { dtype: DataType::F32, dst: Reg::V(0), s1: Reg::V(1), s2: Reg::V(2), imm: pack_imm(0, 2, 1, 2) };
        assert!(exec_pack(&op, &mut regs, &st).is_err());
    }

    #[test]
    fn pack_reads_guest_fp_register_as_lane_zero() {
        let mut st = state(16);
        st.write_reg(GuestReg::Fp(2), 5.0f32.to_bits() as u64);
        let mut regs = RegFile::default();
        f32s(&mut regs, 1, &[1.0]);
        let op = HostOp::Pack { dtype: DataType::F32, dst: Reg::V(0), s1: Reg::V(1), s2: Reg::F(2), imm: pack_imm(0, 0, 0, 1) };
        exec_pack(&op, &mut regs, &st).unwrap();
        let l = Lanes::<f32>::read(&regs.vregs[0]);
        assert_eq!([l.get(0), l.get(1)], [1.0, 5.0]);
        let bad = HostOp::Pack { dtype: DataType::F32, dst: Reg::V(0), s1: Reg::V(1), s2: Reg::F(2), imm: pack_imm(0, 0, 1, 1) };
        assert!(exec_pack(&bad, &mut regs, &st).is_err());
    }

    fn prog(ops: Vec<HostOp>) -> HostProgram {
        HostProgram { sb_id: Some(0), entry_pc: 7, vlen_bits: 128, instrs: ops.into_iter().map(|o| HostInst::new(o, 0)).collect(), spec_pairs: Vec::new() }
    }

    #[test]
    fn failed_assert_rolls_back() {
        let mut st = state(16);
        st.pc = 7;
        let mut regs = RegFile::default();
        let p = prog(vec![
            HostOp::SStore { dtype: DataType::I32, src: Src::Imm(5), base: Src::Imm(0), offset: 0 },
            HostOp::WriteBack(WriteBack { reg: GuestReg::Int(3), dtype: DataType::I32, src: Src::Imm(9) }),
            HostOp::Assert { cond: Cond::Eq, expect: false, flags: Src::Imm(1), id: 4 },
            HostOp::Halt { pc: 9 },
        ]);
        let before = st.clone();
        let mut trace = Vec::new();
        assert_eq!(run_superblock(&p, &mut st, &mut regs, Some(&mut trace)), Outcome::AssertFailed { id: 4 });
        assert_eq!(st, before);
        assert_eq!(trace.len(), 3);
    }

    #[test]
    fn completes_with_writebacks() {
        let mut st = state(16);
        let mut regs = RegFile::default();
        let p = prog(vec![
            HostOp::SArith { op: ArithOp::Add, dtype: DataType::I32, dst: Dst::Reg(Reg::T(0)), a: Src::Imm(2), b: Src::Imm(3) },
            HostOp::WriteBack(WriteBack { reg: GuestReg::Int(3), dtype: DataType::I32, src: Src::Reg(Reg::T(0)) }),
            HostOp::Branch { pc: 5, cond: Cond::Eq, flags: Src::Imm(1), taken: 1, not_taken: 6 },
        ]);
        let out = run_superblock(&p, &mut st, &mut regs, None);
        assert_eq!(out, Outcome::Completed { next_pc: 1, halted: false, branch: Some((5, true)) });
        assert_eq!(st.int_regs[3], 5);
        assert_eq!(st.pc, 1);
    }

    #[test]
    fn overlapping_speculative_pair_fails() {
        let mut st = state(32);
        let mut regs = RegFile::default();
        let mut p = prog(vec![
            HostOp::SLoad { dtype: DataType::F32, dst: Dst::Reg(Reg::V(0)), base: Src::Reg(Reg::R(1)), offset: 0 },
            HostOp::SStore { dtype: DataType::F32, src: Src::Imm(0), base: Src::Reg(Reg::R(2)), offset: 0 },
            HostOp::Halt { pc: 3 },
        ]);
        p.instrs[0].spec = true;
        p.instrs[1].spec = true;
        p.spec_pairs.push(SpecPair { first: 0, first_lanes: (0, 1), second: 1, second_lanes: (0, 1) });
        st.int_regs[1] = 4;
        st.int_regs[2] = 8;
        assert!(run_superblock(&p, &mut st, &mut regs, None).committed());
        st.int_regs[2] = 4;
        assert_eq!(run_superblock(&p, &mut st, &mut regs, None), Outcome::SpecFailed);
    }

    #[test]
    fn fault_rolls_back() {
        let mut st = state(8);
        st.pc = 7;
        let mut regs = RegFile::default();
        let p = prog(vec![
            HostOp::SStore { dtype: DataType::I32, src: Src::Imm(5), base: Src::Imm(0), offset: 0 },
            HostOp::SLoad { dtype: DataType::F64, dst: Dst::Reg(Reg::V(0)), base: Src::Imm(4), offset: 0 },
            HostOp::Halt { pc: 3 },
        ]);
        let before = st.clone();
        assert!(matches!(run_superblock(&p, &mut st, &mut regs, None), Outcome::Faulted(_)));
        assert_eq!(st, before);
    }
}
