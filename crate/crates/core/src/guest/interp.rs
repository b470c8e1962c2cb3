//! Profiling interpreter. Its final state is the reference every translated
//! execution is checked against.

use super::{
    ArchState, BlockId, Flags, GuestError, GuestInstruction, GuestOperand, GuestProgram, Opcode,
    ProfileData,
};
use crate::guest::DataType;
use crate::scalar::{apply_bits, apply_i32};

pub const DEFAULT_STEP_LIMIT: u64 = 50_000_000;

#[derive(Debug, Clone, Copy)]
pub struct InterpPolicy {
    /// Return control once a block's execution count exceeds this value.
    pub promote_threshold: Option<u64>,
    pub step_limit: u64,
}

impl Default for InterpPolicy {
    fn default() -> Self {
        InterpPolicy { promote_threshold: None, step_limit: DEFAULT_STEP_LIMIT }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Halted,
    /// `block` just crossed the promotion threshold; `state.pc` is the next
    /// block to execute.
    Promote { block: BlockId, count: u64 },
}

/// Outcome of interpreting a single basic block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockRun {
    pub block: BlockId,
    pub count: u64,
    pub executed: u64,
    pub fp_executed: u64,
    pub halted: bool,
}

fn operand(state: &ArchState, o: &GuestOperand) -> u64 {
    match o {
        GuestOperand::Reg(r) => state.read_reg(*r),
        GuestOperand::Imm(bits) => *bits,
    }
}

fn arith(dtype: DataType, op: crate::guest::ArithOp, a: u64, b: u64) -> Option<u64> {
    match dtype {
        DataType::F32 => apply_bits::<f32>(op, a, b).ok(),
        DataType::F64 => apply_bits::<f64>(op, a, b).ok(),
        DataType::I32 => apply_i32(op, a as i64, b as i64).ok().map(|v| v as u64),
    }
}

/// Normalizes a register image to the canonical encoding of `dtype`.
pub(crate) fn canonical(dtype: DataType, bits: u64) -> u64 {
    match dtype {
        DataType::F32 => bits & 0xFFFF_FFFF,
        DataType::F64 => bits,
        DataType::I32 => bits as i32 as i64 as u64,
    }
}

pub(crate) fn convert(to: DataType, bits: u64) -> u64 {
    match to {
        DataType::F64 => (f32::from_bits(bits as u32) as f64).to_bits(),
        DataType::F32 => (f64::from_bits(bits) as f32).to_bits() as u64,
        DataType::I32 => bits,
    }
}

enum Flow {
    Next,
    Jump(usize),
    Halt,
}

fn step(ins: &GuestInstruction, pc: usize, state: &mut ArchState, profile: &mut ProfileData) -> Result<Flow, GuestError> {
    let dtype = ins.dtype;
    match ins.opcode {
        Opcode::Ld => {
            let m = ins.mem.unwrap();
            let addr = state.int_regs[m.base as usize].wrapping_add(m.offset);
            let v = state
                .load(addr, dtype.width_bytes())
                .map_err(|source| GuestError::Memory { pc, source })?;
            state.write_reg(ins.dst.unwrap(), canonical(dtype, v));
        }
        Opcode::St => {
            let m = ins.mem.unwrap();
            let addr = state.int_regs[m.base as usize].wrapping_add(m.offset);
            let v = operand(state, &ins.srcs[0]);
            state
                .store(addr, dtype.width_bytes(), v)
                .map_err(|source| GuestError::Memory { pc, source })?;
        }
        Opcode::Arith(op) => {
            let a = operand(state, &ins.srcs[0]);
            let b = operand(state, &ins.srcs[1]);
            let r = arith(dtype, op, a, b).ok_or(GuestError::DivideByZero { pc })?;
            state.write_reg(ins.dst.unwrap(), canonical(dtype, r));
        }
        Opcode::Mov => {
            let v = operand(state, &ins.srcs[0]);
            state.write_reg(ins.dst.unwrap(), canonical(dtype, v));
        }
        Opcode::Cvt => {
            let v = operand(state, &ins.srcs[0]);
            state.write_reg(ins.dst.unwrap(), convert(dtype, v));
        }
        Opcode::Cmp => {
            let a = operand(state, &ins.srcs[0]);
            let b = operand(state, &ins.srcs[1]);
            state.flags = Flags::compare_bits(dtype, a, b);
        }
        Opcode::Br => {
            let target = ins.br_target.unwrap();
            let taken = ins.cond.unwrap().holds(state.flags);
            profile.record_branch(pc, target, taken);
            if taken {
                return Ok(Flow::Jump(target));
            }
        }
        Opcode::Jmp => return Ok(Flow::Jump(ins.br_target.unwrap())),
        Opcode::Halt => return Ok(Flow::Halt),
    }
    Ok(Flow::Next)
}

/// Interprets the basic block starting at `state.pc`, updating the profile.
pub fn interpret_block(
    program: &GuestProgram,
    state: &mut ArchState,
    profile: &mut ProfileData,
) -> Result<BlockRun, GuestError> {
    let block = program.block_at(state.pc);
    let count = profile.record_block(block.start);
    let mut executed = 0;
    let mut fp_executed = 0;
    let mut pc = state.pc;
    loop {
        let ins = &program.instructions[pc];
        executed += 1;
        fp_executed += ins.fp as u64;
        match step(ins, pc, state, profile)? {
            Flow::Halt => {
                state.pc = pc;
                return Ok(BlockRun { block: block.start, count, executed, fp_executed, halted: true });
            }
            Flow::Jump(t) => {
                state.pc = t;
                break;
            }
            Flow::Next => {
                pc += 1;
                if pc > block.end {
                    state.pc = pc;
                    break;
                }
            }
        }
    }
    Ok(BlockRun { block: block.start, count, executed, fp_executed, halted: false })
}

/// Interprets until HALT or until a block's execution count exceeds the
/// promotion threshold. Returns the stop reason and the number of guest
/// instructions executed.
pub fn interpret(
    program: &GuestProgram,
    state: &mut ArchState,
    profile: &mut ProfileData,
    policy: InterpPolicy,
) -> Result<(StopReason, u64), GuestError> {
    let mut steps = 0u64;
    loop {
        let run = interpret_block(program, state, profile)?;
        steps += run.executed;
        if run.halted {
            return Ok((StopReason::Halted, steps));
        }
        if steps > policy.step_limit {
            return Err(GuestError::StepLimit(policy.step_limit));
        }
        if let Some(th) = policy.promote_threshold {
            if run.count > th {
                return Ok((StopReason::Promote { block: run.block, count: run.count }, steps));
            }
        }
    }
}

/// Runs a program to completion from its initial state with no promotion.
pub fn run_oracle(program: &GuestProgram) -> Result<(ArchState, ProfileData), GuestError> {
    let mut state = program.initial_state();
    let mut profile = ProfileData::new();
    interpret(program, &mut state, &mut profile, InterpPolicy::default())?;
    Ok((state, profile))
}
