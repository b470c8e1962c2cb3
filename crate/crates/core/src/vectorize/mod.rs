//! Store-seeded pack formation, variable length vectorization, selective
//! writing, and lowering to host code.

mod lower;
mod marks;
mod packer;
mod plan;
mod regalloc;

pub use lower::{lower_scalar, lower_to_host, LowerError};
pub use marks::{mark_candidates, SeedMarks};
pub use packer::{verify_packs, vectorize_baseline, vectorize_vlv, LegalityError, Packer};
pub use plan::{apply_swr, emit_pack_unpack, Gather, GatherLowering, OperandSource, Unpack, VectorPlan};
pub use regalloc::{allocate_registers, host_dependences, schedule_host, RegAllocError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::guest::{ArithOp, DataType};
use crate::host::HostProgram;
use crate::ir::{IrInst, IrOp, Superblock};
use crate::translate::{build_ddg, classic_optimize, eliminate_redundant_mem, to_ssa};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("vector length {0} is not a power of two of at least 128 bits and at most 512")]
    VectorLength(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VectorizationConfig {
    pub physical_bits: u32,
    pub vlv_enabled: bool,
    pub swr_enabled: bool,
}

impl VectorizationConfig {
    pub fn new(physical_bits: u32, vlv_enabled: bool, swr_enabled: bool) -> Result<Self, ConfigError> {
        if !physical_bits.is_power_of_two() || !(128..=512).contains(&physical_bits) {
            return Err(ConfigError::VectorLength(physical_bits));
        }
        Ok(VectorizationConfig { physical_bits, vlv_enabled, swr_enabled })
    }

    pub fn physical_lanes(&self, dtype: DataType) -> usize {
        (self.physical_bits / dtype.width_bits()) as usize
    }
}

/// Operation shared by all members of a pack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PackOp {
    Load,
    Store,
    Arith(ArithOp),
}

impl PackOp {
    pub fn of(ins: &IrInst) -> Option<PackOp> {
        match ins.op {
            IrOp::Ld => Some(PackOp::Load),
            IrOp::St => Some(PackOp::Store),
            IrOp::Arith(op) => Some(PackOp::Arith(op)),
            _ => None,
        }
    }
}

/// Independent isomorphic instructions executed as one vector instruction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pack {
    /// IR instruction indices; member `i` runs in lane `i`.
    pub members: Vec<usize>,
    pub op: PackOp,
    pub dtype: DataType,
}

impl Pack {
    /// Enabled lane count.
    pub fn mask(&self) -> usize {
        self.members.len()
    }
}

/// Output of the per-superblock translation pipeline.
#[derive(Debug, Clone)]
pub struct Compiled {
    /// Optimized SSA superblock the host code was generated from.
    pub sb: Superblock,
    pub plan: VectorPlan,
    pub host: HostProgram,
}

/// Runs the optimization, vectorization and lowering pipeline on a formed
/// (and possibly unrolled) superblock. With `vectorize` off only scalar host
/// code is produced.
pub fn compile_superblock(sb: Superblock, cfg: VectorizationConfig, vectorize: bool) -> Result<Compiled, LowerError> {
    let sb = classic_optimize(to_ssa(sb));
    let ddg = build_ddg(&sb);
    let sb = classic_optimize(eliminate_redundant_mem(sb, &ddg));
    let ddg = build_ddg(&sb);
    let plan = if vectorize {
        let packs = if cfg.vlv_enabled { vectorize_vlv(&sb, &ddg, cfg) } else { vectorize_baseline(&sb, &ddg, cfg) };
        apply_swr(&sb, emit_pack_unpack(&sb, &packs, &ddg), cfg)
    } else {
        VectorPlan::default()
    };
    let host = lower_to_host(&sb, &plan, &ddg, cfg)?;
    Ok(Compiled { sb, plan, host })
}
