//! Translation driver: interprets guest code, promotes hot blocks to
//! basic-block and superblock translations, runs them on the host VM and
//! feeds the timing model.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::guest::{interpret_block, ArchState, GuestError, GuestProgram, ProfileData, DEFAULT_STEP_LIMIT};
use crate::host::{run_superblock, HostProgram, Outcome, RegFile, TraceEntry};
use crate::metrics::DynamicCounts;
use crate::timing::{CycleReport, TimingConfig, TimingModel};
use crate::translate::{build_basic_block, build_superblock, unroll_loop, BuildOptions, Thresholds};
use crate::vectorize::{compile_superblock, Compiled, ConfigError, LowerError, VectorizationConfig};

/// Compile-pipeline configuration of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// Translated but unvectorized host code.
    Scalar,
    /// Full-width packs only.
    Baseline,
    /// Variable-length packs.
    Vlv,
    /// Full-width packs with selective writing.
    Swr,
    VlvSwr,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Scalar, Mode::Baseline, Mode::Vlv, Mode::Swr, Mode::VlvSwr];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Scalar => "scalar",
            Mode::Baseline => "baseline",
            Mode::Vlv => "vlv",
            Mode::Swr => "swr",
            Mode::VlvSwr => "vlv+swr",
        }
    }

    pub fn vectorizes(self) -> bool {
        self != Mode::Scalar
    }

    pub fn vectorization(self, vlen: u32) -> Result<VectorizationConfig, ConfigError> {
        let vlv = matches!(self, Mode::Vlv | Mode::VlvSwr);
        let swr = matches!(self, Mode::Swr | Mode::VlvSwr);
        VectorizationConfig::new(vlen, vlv, swr)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown mode `{0}` (expected scalar, baseline, vlv, swr or vlv+swr)")]
pub struct UnknownMode(pub String);

impl FromStr for Mode {
    type Err = UnknownMode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "scalar" => Ok(Mode::Scalar),
            "baseline" => Ok(Mode::Baseline),
            "vlv" => Ok(Mode::Vlv),
            "swr" => Ok(Mode::Swr),
            "vlv+swr" | "vlvswr" | "vlv_swr" => Ok(Mode::VlvSwr),
            _ => Err(UnknownMode(s.to_string())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TolConfig {
    pub vlen: u32,
    pub mode: Mode,
    pub thresholds: Thresholds,
    pub timing: TimingConfig,
    /// Upper bound on guest instructions executed, interpreted or translated.
    pub step_limit: u64,
    /// Keep listings of every superblock built.
    pub dumps: bool,
}

impl TolConfig {
    pub fn new(vlen: u32, mode: Mode) -> Self {
        TolConfig {
            vlen,
            mode,
            thresholds: Thresholds::default(),
            timing: TimingConfig::default(),
            step_limit: DEFAULT_STEP_LIMIT,
            dumps: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum TolError {
    #[error(transparent)]
    Guest(#[from] GuestError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Lower(#[from] LowerError),
    #[error("step limit of {0} guest instructions exceeded")]
    StepLimit(u64),
}

/// Event counters of one run.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct TolStats {
    pub interpreted_instructions: u64,
    pub bb_translations: u64,
    pub bb_executions: u64,
    pub sb_translations: u64,
    pub sb_commits: u64,
    pub assert_failures: u64,
    pub spec_failures: u64,
    pub faults: u64,
    pub recreations: u64,
    /// Superblocks whose host code could not be generated.
    pub sb_build_failures: u64,
}

/// Listings of one translated superblock.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperblockDump {
    pub id: usize,
    pub entry_pc: usize,
    pub ir: String,
    pub plan: String,
    pub host_asm: String,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub final_state: ArchState,
    /// Host instructions of committed superblock executions.
    pub counts: DynamicCounts,
    pub cycles: CycleReport,
    pub stats: TolStats,
    pub dumps: Vec<SuperblockDump>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Failure {
    Assert,
    Spec,
    Fault,
}

struct Region {
    host: HostProgram,
    opts: BuildOptions,
    /// Guest instructions covered by one execution.
    guest_len: u64,
    failures: [u32; 3],
    recreated: bool,
}

struct Driver<'p> {
    program: &'p GuestProgram,
    cfg: TolConfig,
    vcfg: VectorizationConfig,
    state: ArchState,
    regs: RegFile,
    profile: ProfileData,
    timing: TimingModel,
    counts: DynamicCounts,
    stats: TolStats,
    dumps: Vec<SuperblockDump>,
    blocks: HashMap<usize, HostProgram>,
    superblocks: HashMap<usize, Region>,
    unbuildable: HashSet<usize>,
    next_id: usize,
    steps: u64,
    trace: Vec<TraceEntry>,
}

/// Runs `program` to HALT under the translation driver.
pub fn run_program(program: &GuestProgram, cfg: &TolConfig) -> Result<RunResult, TolError> {
    let vcfg = cfg.mode.vectorization(cfg.vlen)?;
    let mut d = Driver {
        program,
        cfg: cfg.clone(),
        vcfg,
        state: program.initial_state(),
        regs: RegFile::default(),
        profile: ProfileData::new(),
        timing: TimingModel::new(cfg.timing.clone()),
        counts: DynamicCounts::new(program.name.clone()),
        stats: TolStats::default(),
        dumps: Vec::new(),
        blocks: HashMap::new(),
        superblocks: HashMap::new(),
        unbuildable: HashSet::new(),
        next_id: 0,
        steps: 0,
        trace: Vec::new(),
    };
    d.run()?;
    Ok(RunResult {
        final_state: d.state,
        counts: d.counts,
        cycles: d.timing.report(),
        stats: d.stats,
        dumps: d.dumps,
    })
}

/// Forms, unrolls and compiles the superblock seeded at `seed` under the
/// mode and vector length of `cfg`.
pub fn compile_region(
    program: &GuestProgram,
    profile: &ProfileData,
    seed: usize,
    id: usize,
    cfg: &TolConfig,
    opts: BuildOptions,
) -> Result<Compiled, TolError> {
    let th = cfg.thresholds;
    let sb = build_superblock(profile, program, seed, id, &th, opts);
    let sb = unroll_loop(sb, profile, cfg.vlen, th.max_superblock);
    Ok(compile_superblock(sb, cfg.mode.vectorization(cfg.vlen)?, cfg.mode.vectorizes())?)
}

impl Driver<'_> {
    fn run(&mut self) -> Result<(), TolError> {
        loop {
            if self.steps > self.cfg.step_limit {
                return Err(TolError::StepLimit(self.cfg.step_limit));
            }
            let pc = self.state.pc;
            self.promote(pc);
            let halted = if self.superblocks.contains_key(&pc) {
                self.run_superblock(pc)?
            } else if self.blocks.contains_key(&pc) {
                self.run_basic_block(pc)?
            } else {
                self.interpret()?
            };
            if halted {
                return Ok(());
            }
        }
    }

    fn promote(&mut self, pc: usize) {
        let count = self.profile.exec(pc);
        let th = self.cfg.thresholds;
        if count > th.sbm && !self.superblocks.contains_key(&pc) && !self.unbuildable.contains(&pc) {
            self.build_superblock(pc, BuildOptions::default());
        } else if count > th.bbm && !self.blocks.contains_key(&pc) && !self.superblocks.contains_key(&pc) {
            let bb = build_basic_block(&self.profile, self.program, pc, self.next_id);
            self.next_id += 1;
            if let Ok(c) = compile_superblock(bb, self.vcfg, false) {
                let mut host = c.host;
                host.sb_id = None;
                self.blocks.insert(pc, host);
                self.stats.bb_translations += 1;
            }
        }
    }

    fn build_superblock(&mut self, pc: usize, opts: BuildOptions) {
        let id = self.next_id;
        self.next_id += 1;
        let guest_len = |sb: &crate::ir::Superblock| {
            sb.guest_blocks
                .iter()
                .map(|&b| {
                    let info = self.program.block_at(b);
                    (info.end - info.start + 1) as u64
                })
                .sum::<u64>()
                * sb.unroll_factor as u64
        };
        match compile_region(self.program, &self.profile, pc, id, &self.cfg, opts) {
            Ok(c) => {
                let guest_len = guest_len(&c.sb);
                if self.cfg.dumps {
                    self.dumps.push(SuperblockDump {
                        id,
                        entry_pc: pc,
                        ir: c.sb.instrs.iter().map(|i| format!("  {i}\n")).collect(),
                        plan: c.plan.listing(&c.sb),
                        host_asm: c.host.listing(),
                    });
                }
                self.stats.sb_translations += 1;
                self.superblocks
                    .insert(pc, Region { host: c.host, opts, guest_len, failures: [0; 3], recreated: false });
            }
            Err(_) => {
                self.stats.sb_build_failures += 1;
                self.superblocks.remove(&pc);
                self.unbuildable.insert(pc);
            }
        }
    }

    fn run_superblock(&mut self, pc: usize) -> Result<bool, TolError> {
        let region = self.superblocks.get_mut(&pc).expect("superblock present");
        self.trace.clear();
        let outcome = run_superblock(&region.host, &mut self.state, &mut self.regs, Some(&mut self.trace));
        self.timing.run_region(&region.host, &self.trace);
        self.steps += region.guest_len;
        let failure = match outcome {
            Outcome::Completed { halted, .. } => {
                self.counts.record_trace(&region.host, &self.trace);
                self.stats.sb_commits += 1;
                return Ok(halted);
            }
            Outcome::AssertFailed { .. } => Failure::Assert,
            Outcome::SpecFailed => Failure::Spec,
            Outcome::Faulted(_) => Failure::Fault,
        };
        match failure {
            Failure::Assert => self.stats.assert_failures += 1,
            Failure::Spec => self.stats.spec_failures += 1,
            Failure::Fault => self.stats.faults += 1,
        }
        let slot = failure as usize;
        region.failures[slot] += 1;
        if region.failures[slot] == self.cfg.thresholds.recreate && !region.recreated {
            let mut opts = region.opts;
            match failure {
                Failure::Assert => opts.multi_exit = true,
                Failure::Spec => opts.speculation = false,
                Failure::Fault => {
                    opts.multi_exit = true;
                    opts.speculation = false;
                }
            }
            self.stats.recreations += 1;
            self.build_superblock(pc, opts);
            if let Some(r) = self.superblocks.get_mut(&pc) {
                r.recreated = true;
            }
        }
        self.interpret()
    }

    fn run_basic_block(&mut self, pc: usize) -> Result<bool, TolError> {
        let host = &self.blocks[&pc];
        self.trace.clear();
        let outcome = run_superblock(host, &mut self.state, &mut self.regs, Some(&mut self.trace));
        self.timing.run_region(host, &self.trace);
        match outcome {
            Outcome::Completed { halted, branch, .. } => {
                let info = self.program.block_at(pc);
                self.steps += (info.end - info.start + 1) as u64;
                self.profile.record_block(pc);
                if let Some((bpc, taken)) = branch {
                    let target = self.program.instructions[bpc].br_target.expect("conditional branch has a target");
                    self.profile.record_branch(bpc, target, taken);
                }
                self.stats.bb_executions += 1;
                Ok(halted)
            }
            _ => {
                self.stats.faults += 1;
                self.interpret()
            }
        }
    }

    fn interpret(&mut self) -> Result<bool, TolError> {
        let run = interpret_block(self.program, &mut self.state, &mut self.profile)?;
        self.timing.interpret(run.executed);
        self.steps += run.executed;
        self.stats.interpreted_instructions += run.executed;
        Ok(run.halted)
    }
}
