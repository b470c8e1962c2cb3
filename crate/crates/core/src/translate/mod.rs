//! Superblock formation and the scalar optimization pipeline that runs
//! before vectorization.

mod ddg;
mod memopt;
mod opt;
mod sched;
mod ssa;
mod superblock;

pub use ddg::{build_ddg, resolve_address, AddrRoot, AliasKind, DepEdge, DepGraph, EdgeKind, SymAddr};
pub use memopt::eliminate_redundant_mem;
pub use opt::classic_optimize;
pub use sched::{critical_path, list_schedule, schedule_list, ScheduleError};
pub use ssa::to_ssa;
pub use superblock::{build_basic_block, build_superblock, loop_headers, unroll_loop, BuildOptions};

use serde::{Deserialize, Serialize};

/// Promotion and region-formation knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Interpreted executions before a block gets a basic-block translation.
    pub bbm: u64,
    /// Executions before a block seeds a superblock.
    pub sbm: u64,
    /// Minimum edge bias for a branch to be followed into the superblock.
    pub bias: f64,
    /// Maximum IR instructions in a superblock.
    pub max_superblock: usize,
    /// Failures of one kind before a superblock is rebuilt.
    pub recreate: u32,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { bbm: 50, sbm: 500, bias: 0.9, max_superblock: 256, recreate: 16 }
    }
}

impl Thresholds {
    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let bad = || format!("invalid value `{value}` for threshold `{key}`");
        match key {
            "bbm" => self.bbm = value.parse().map_err(|_| bad())?,
            "sbm" => self.sbm = value.parse().map_err(|_| bad())?,
            "bias" => {
                let b: f64 = value.parse().map_err(|_| bad())?;
                if !(0.5..=1.0).contains(&b) {
                    return Err(bad());
                }
                self.bias = b;
            }
            "max_superblock" | "max_sb" => self.max_superblock = value.parse().map_err(|_| bad())?,
            "recreate" => self.recreate = value.parse().map_err(|_| bad())?,
            _ => return Err(format!("unknown threshold `{key}`")),
        }
        if self.sbm < self.bbm {
            return Err("sbm threshold must not be below bbm threshold".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds_parse_overrides() {
        let mut t = Thresholds::default();
        t.set("bias", "0.95").unwrap();
        t.set("recreate", "4").unwrap();
        assert_eq!(t.bias, 0.95);
        assert_eq!(t.recreate, 4);
        assert!(t.set("bias", "2").is_err());
        assert!(t.set("nope", "1").is_err());
        assert!(t.set("sbm", "10").is_err());
    }
}
