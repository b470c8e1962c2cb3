use std::collections::{BTreeMap, BTreeSet};

use super::Thresholds;
use crate::guest::{
    BlockId, DataType, GuestInstruction, GuestOperand, GuestProgram, GuestReg, Opcode, ProfileData,
};
use crate::ir::{Dest, IrInst, IrOp, MemRef, Operand, SbExit, Superblock};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    /// Keep followed branches as side exits instead of asserts.
    pub multi_exit: bool,
    /// Allow speculative reordering of may-alias memory pairs.
    pub speculation: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { multi_exit: false, speculation: true }
    }
}

/// Targets of backward branches and jumps.
pub fn loop_headers(program: &GuestProgram) -> BTreeSet<BlockId> {
    program
        .instructions
        .iter()
        .enumerate()
        .filter_map(|(pc, ins)| ins.br_target.filter(|&t| t <= pc))
        .collect()
}

fn operand(o: &GuestOperand) -> Operand {
    match *o {
        GuestOperand::Reg(r) => Operand::Reg(r),
        GuestOperand::Imm(bits) => Operand::Imm(bits),
    }
}

/// Converts a non-control guest instruction.
fn lift(ins: &GuestInstruction, pc: usize) -> IrInst {
    let op = match ins.opcode {
        Opcode::Ld => IrOp::Ld,
        Opcode::St => IrOp::St,
        Opcode::Arith(a) => IrOp::Arith(a),
        Opcode::Mov => IrOp::Mov,
        Opcode::Cvt => IrOp::Cvt,
        Opcode::Cmp => IrOp::Cmp,
        Opcode::Br | Opcode::Jmp | Opcode::Halt => unreachable!("control instructions are not lifted"),
    };
    let mut out = IrInst::new(op, ins.dtype, pc);
    out.dst = ins.dst.map(Dest::Reg);
    out.srcs = ins.srcs.iter().map(operand).collect();
    out.mem = ins
        .mem
        .map(|m| MemRef { base: Operand::Reg(GuestReg::Int(m.base)), offset: m.offset });
    out
}

/// Forms a superblock starting at `seed` by following biased branch
/// directions. Growth stops at an unbiased branch, a loop header or a block
/// already included, HALT, or the size cap.
pub fn build_superblock(
    profile: &ProfileData,
    program: &GuestProgram,
    seed: BlockId,
    id: usize,
    th: &Thresholds,
    opts: BuildOptions,
) -> Superblock {
    let headers = loop_headers(program);
    let mut instrs: Vec<IrInst> = Vec::new();
    let mut blocks = vec![seed];
    let mut cur = seed;
    let block_len = |start: usize| {
        let b = program.block_at(start);
        b.end - b.start + 1
    };
    let exit = loop {
        let b = program.block_at(cur);
        for pc in b.start..=b.end {
            let ins = &program.instructions[pc];
            if !matches!(ins.opcode, Opcode::Br | Opcode::Jmp | Opcode::Halt) {
                instrs.push(lift(ins, pc));
            }
        }
        let last = &program.instructions[b.end];
        let accept = |next: usize, instrs: &Vec<IrInst>, blocks: &Vec<BlockId>| {
            next < program.instructions.len()
                && !blocks.contains(&next)
                && !headers.contains(&next)
                && instrs.len() + block_len(next) < th.max_superblock
        };
        match last.opcode {
            Opcode::Halt => break SbExit::Halt { pc: b.end },
            Opcode::Jmp => {
                let t = last.br_target.unwrap();
                if accept(t, &instrs, &blocks) {
                    blocks.push(t);
                    cur = t;
                } else {
                    break SbExit::Jump { target: t };
                }
            }
            Opcode::Br => {
                let cond = last.cond.unwrap();
                let taken = last.br_target.unwrap();
                let fall = b.end + 1;
                let exit = SbExit::Branch { pc: b.end, cond, flags: Operand::Reg(GuestReg::Flags), taken, not_taken: fall };
                let dir = match profile.taken_ratio(b.end) {
                    Some(r) if r >= th.bias => Some(true),
                    Some(r) if 1.0 - r >= th.bias => Some(false),
                    _ => None,
                };
                let Some(dir) = dir else { break exit };
                let (next, other) = if dir { (taken, fall) } else { (fall, taken) };
                if !accept(next, &instrs, &blocks) {
                    break exit;
                }
                let op = if opts.multi_exit {
                    IrOp::SideExit { cond, when: !dir, target: other, writeback: Vec::new() }
                } else {
                    IrOp::Assert { cond, expect: dir }
                };
                let mut check = IrInst::new(op, DataType::I32, b.end);
                check.srcs.push(Operand::Reg(GuestReg::Flags));
                instrs.push(check);
                blocks.push(next);
                cur = next;
            }
            _ => {
                let next = b.end + 1;
                if accept(next, &instrs, &blocks) {
                    blocks.push(next);
                    cur = next;
                } else {
                    break SbExit::Jump { target: next };
                }
            }
        }
    };
    Superblock {
        id,
        entry_pc: seed,
        guest_blocks: blocks,
        instrs,
        exit,
        unroll_factor: 1,
        multi_exit: opts.multi_exit,
        speculation: opts.speculation,
        ssa: false,
        values: Vec::new(),
        live_out: BTreeMap::new(),
    }
}

/// Single-block region used for basic-block translations: no branch is
/// followed and memory is never reordered speculatively.
pub fn build_basic_block(profile: &ProfileData, program: &GuestProgram, start: BlockId, id: usize) -> Superblock {
    let th = Thresholds { max_superblock: 0, ..Thresholds::default() };
    build_superblock(profile, program, start, id, &th, BuildOptions { multi_exit: false, speculation: false })
}

/// The data type most FP vectorization candidates use; earlier wins ties.
fn dominant_dtype(instrs: &[IrInst]) -> Option<DataType> {
    let mut counts: Vec<(DataType, usize)> = Vec::new();
    for ins in instrs.iter().filter(|i| i.is_fp_candidate()) {
        match counts.iter_mut().find(|(d, _)| *d == ins.dtype) {
            Some((_, c)) => *c += 1,
            None => counts.push((ins.dtype, 1)),
        }
    }
    let best = counts.iter().map(|(_, c)| *c).max()?;
    counts.into_iter().find(|(_, c)| *c == best).map(|(d, _)| d)
}

/// Replicates a single-block loop body `u` times, where `u` is the modal
/// trip count capped by the lanes of the dominant data type and by the size
/// limit. Intermediate back-edge branches become asserts (or side exits for
/// multi-exit superblocks). Other superblocks are returned unchanged.
pub fn unroll_loop(sb: Superblock, profile: &ProfileData, physical_bits: u32, max_size: usize) -> Superblock {
    assert!(!sb.ssa, "unrolling runs before SSA conversion");
    let SbExit::Branch { pc: branch_pc, cond, taken, not_taken, .. } = sb.exit else { return sb };
    if sb.guest_blocks.len() != 1 || taken != sb.entry_pc {
        return sb;
    }
    let Some(dtype) = dominant_dtype(&sb.instrs) else { return sb };
    let trip = profile.trip_mode(sb.entry_pc).unwrap_or(1);
    let lanes = (physical_bits / dtype.width_bits()) as u64;
    let body = sb.instrs.len();
    let mut u = trip.min(lanes) as usize;
    while u > 1 && u * body + (u - 1) > max_size {
        u -= 1;
    }
    if u < 2 {
        return sb;
    }
    let mut instrs = Vec::with_capacity(u * (body + 1));
    for copy in 0..u {
        instrs.extend(sb.instrs.iter().cloned());
        if copy + 1 < u {
            let op = if sb.multi_exit {
                IrOp::SideExit { cond, when: false, target: not_taken, writeback: Vec::new() }
            } else {
                IrOp::Assert { cond, expect: true }
            };
            let mut check = IrInst::new(op, DataType::I32, branch_pc);
            check.srcs.push(Operand::Reg(GuestReg::Flags));
            instrs.push(check);
        }
    }
    Superblock { instrs, unroll_factor: u as u32, ..sb }
}
