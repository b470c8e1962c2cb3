//! Flexible SIMD host ISA and its functional VM.

mod isa;
mod vm;

pub use isa::{
    pack_fields, pack_imm, Dst, HostInst, HostOp, HostProgram, InstrClass, Reg, SpecPair, Src, WriteBack, NUM_TEMPS,
    NUM_VREGS, VREG_BYTES,
};
pub use vm::{
    exec_masked_vector, exec_pack, exec_selective_scalar, read_scalar, run_superblock, write_scalar, Checkpoint, Lanes,
    Outcome, RegFile, TraceEntry, VReg, VmError,
};
