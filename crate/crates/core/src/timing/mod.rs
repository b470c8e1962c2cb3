//! Cycle model of an in-order, multi-issue host core with a two-level
//! cache hierarchy.

mod cache;

pub use cache::{Cache, CacheConfig};

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::guest::{ArithOp, DataType};
use crate::host::{HostInst, HostOp, HostProgram, Reg, TraceEntry};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimingConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: invalid value `{value}` for `{key}`")]
    BadValue { line: usize, key: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

/// Functional-unit pools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuClass {
    SimpleInt,
    IntMulDiv,
    SimpleFp,
    FpMulDiv,
    VecSimpleFp,
    VecFpMulDiv,
    Memory,
}

impl FuClass {
    pub const ALL: [FuClass; 7] = [
        FuClass::SimpleInt,
        FuClass::IntMulDiv,
        FuClass::SimpleFp,
        FuClass::FpMulDiv,
        FuClass::VecSimpleFp,
        FuClass::VecFpMulDiv,
        FuClass::Memory,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FuClass::SimpleInt => "simple_int",
            FuClass::IntMulDiv => "int_muldiv",
            FuClass::SimpleFp => "simple_fp",
            FuClass::FpMulDiv => "fp_muldiv",
            FuClass::VecSimpleFp => "vec_simple_fp",
            FuClass::VecFpMulDiv => "vec_fp_muldiv",
            FuClass::Memory => "memory",
        }
    }
}

/// Core and memory-hierarchy parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingConfig {
    pub issue_width: u32,
    pub simple_int_units: u32,
    pub int_muldiv_units: u32,
    pub simple_fp_units: u32,
    pub fp_muldiv_units: u32,
    pub vec_simple_fp_units: u32,
    pub vec_fp_muldiv_units: u32,
    pub mem_ports: u32,
    pub int_alu_latency: u32,
    pub int_mul_latency: u32,
    pub int_div_latency: u32,
    pub fp_add_latency: u32,
    pub fp_mul_latency: u32,
    pub fp_div_latency: u32,
    pub permute_latency: u32,
    pub l1: CacheConfig,
    pub l2: CacheConfig,
    pub memory_latency: u32,
    /// Host cycles charged per interpreted guest instruction.
    pub interp_cycles: u32,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            issue_width: 2,
            simple_int_units: 2,
            int_muldiv_units: 2,
            simple_fp_units: 2,
            fp_muldiv_units: 2,
            vec_simple_fp_units: 1,
            vec_fp_muldiv_units: 1,
            mem_ports: 1,
            int_alu_latency: 1,
            int_mul_latency: 3,
            int_div_latency: 10,
            fp_add_latency: 2,
            fp_mul_latency: 4,
            fp_div_latency: 20,
            permute_latency: 2,
            l1: CacheConfig { size_bytes: 64 * 1024, assoc: 4, line_bytes: 64, latency: 1 },
            l2: CacheConfig { size_bytes: 512 * 1024, assoc: 8, line_bytes: 64, latency: 6 },
            memory_latency: 128,
            interp_cycles: 4,
        }
    }
}

impl TimingConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, TimingConfigError> {
        let mut cfg = TimingConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or(TimingConfigError::Syntax { line })?;
            cfg.set(line, key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<(), TimingConfigError> {
        let bad = || TimingConfigError::BadValue { line, key: key.into(), value: value.into() };
        let n: u64 = value.parse().map_err(|_| bad())?;
        let small = u32::try_from(n).map_err(|_| bad())?;
        let slot: &mut u32 = match key {
            "issue_width" => &mut self.issue_width,
            "simple_int_units" => &mut self.simple_int_units,
            "int_muldiv_units" => &mut self.int_muldiv_units,
            "simple_fp_units" => &mut self.simple_fp_units,
            "fp_muldiv_units" => &mut self.fp_muldiv_units,
            "vec_simple_fp_units" => &mut self.vec_simple_fp_units,
            "vec_fp_muldiv_units" => &mut self.vec_fp_muldiv_units,
            "mem_ports" => &mut self.mem_ports,
            "int_alu_latency" => &mut self.int_alu_latency,
            "int_mul_latency" => &mut self.int_mul_latency,
            "int_div_latency" => &mut self.int_div_latency,
            "fp_add_latency" => &mut self.fp_add_latency,
            "fp_mul_latency" => &mut self.fp_mul_latency,
            "fp_div_latency" => &mut self.fp_div_latency,
            "permute_latency" => &mut self.permute_latency,
            "l1_latency" => &mut self.l1.latency,
            "l2_latency" => &mut self.l2.latency,
            "memory_latency" => &mut self.memory_latency,
            "interp_cycles" => &mut self.interp_cycles,
            "l1_size" | "l1_assoc" | "l1_line" | "l2_size" | "l2_assoc" | "l2_line" => {
                let cache = if key.starts_with("l1") { &mut self.l1 } else { &mut self.l2 };
                let field = match &key[3..] {
                    "size" => &mut cache.size_bytes,
                    "assoc" => &mut cache.assoc,
                    _ => &mut cache.line_bytes,
                };
                *field = n as usize;
                return Ok(());
            }
            _ => return Err(TimingConfigError::UnknownKey { line, key: key.into() }),
        };
        *slot = small;
        Ok(())
    }

    fn validate(&self) -> Result<(), TimingConfigError> {
        let units = [
            self.issue_width,
            self.simple_int_units,
            self.int_muldiv_units,
            self.simple_fp_units,
            self.fp_muldiv_units,
            self.vec_simple_fp_units,
            self.vec_fp_muldiv_units,
            self.mem_ports,
        ];
        if units.contains(&0) {
            return Err(TimingConfigError::Invalid("issue width and unit counts must be positive".into()));
        }
        for (name, c) in [("l1", self.l1), ("l2", self.l2)] {
            if c.assoc == 0 || !c.line_bytes.is_power_of_two() || c.size_bytes < c.assoc * c.line_bytes {
                return Err(TimingConfigError::Invalid(format!("{name} geometry is inconsistent")));
            }
        }
        Ok(())
    }

    pub fn units(&self, class: FuClass) -> u32 {
        match class {
            FuClass::SimpleInt => self.simple_int_units,
            FuClass::IntMulDiv => self.int_muldiv_units,
            FuClass::SimpleFp => self.simple_fp_units,
            FuClass::FpMulDiv => self.fp_muldiv_units,
            FuClass::VecSimpleFp => self.vec_simple_fp_units,
            FuClass::VecFpMulDiv => self.vec_fp_muldiv_units,
            FuClass::Memory => self.mem_ports,
        }
    }

    /// Unit pool, result latency and unit occupancy of an instruction. Units
    /// are fully pipelined.
    pub fn execution(&self, op: &HostOp) -> (FuClass, u32, u32) {
        let fp_or_int = |dtype: DataType| if dtype.is_float() { (FuClass::SimpleFp, self.fp_add_latency) } else { (FuClass::SimpleInt, self.int_alu_latency) };
        let arith = |op: ArithOp, dtype: DataType, vector: bool| -> (FuClass, u32, u32) {
            let (class, lat) = match (dtype.is_float(), op) {
                (false, ArithOp::Add | ArithOp::Sub) => (FuClass::SimpleInt, self.int_alu_latency),
                (false, ArithOp::Mul) => (FuClass::IntMulDiv, self.int_mul_latency),
                (false, ArithOp::Div) => (FuClass::IntMulDiv, self.int_div_latency),
                (true, ArithOp::Add | ArithOp::Sub) => (FuClass::SimpleFp, self.fp_add_latency),
                (true, ArithOp::Mul) => (FuClass::FpMulDiv, self.fp_mul_latency),
                (true, ArithOp::Div) => (FuClass::FpMulDiv, self.fp_div_latency),
            };
            let class = match (vector, class) {
                (true, FuClass::SimpleFp) => FuClass::VecSimpleFp,
                (true, FuClass::FpMulDiv) => FuClass::VecFpMulDiv,
                (_, c) => c,
            };
            (class, lat, 1)
        };
        match op {
            HostOp::VArith { op, dtype, .. } => arith(*op, *dtype, true),
            HostOp::SArith { op, dtype, .. } => arith(*op, *dtype, false),
            HostOp::Mov { dtype, .. } | HostOp::Cvt { dtype, .. } | HostOp::Cmp { dtype, .. } => {
                let (c, l) = fp_or_int(*dtype);
                (c, l, 1)
            }
            HostOp::WriteBack(w) => {
                let (c, l) = fp_or_int(w.dtype);
                (c, l, 1)
            }
            HostOp::Shuf { .. } | HostOp::Pack { .. } | HostOp::Bcast { .. } | HostOp::Extract { .. } => {
                (FuClass::VecSimpleFp, self.permute_latency, 1)
            }
            HostOp::VLoad { .. } | HostOp::VStore { .. } | HostOp::SLoad { .. } | HostOp::SStore { .. } => {
                (FuClass::Memory, self.l1.latency, 1)
            }
            HostOp::Assert { .. } | HostOp::ExitIf { .. } | HostOp::Jump { .. } | HostOp::Branch { .. } | HostOp::Halt { .. } => {
                (FuClass::SimpleInt, self.int_alu_latency, 1)
            }
        }
    }
}

/// Cycle totals and event counts of one simulated run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleReport {
    pub total_cycles: u64,
    pub host_instructions: u64,
    pub interpreted_instructions: u64,
    /// Unit-cycles of occupancy per pool.
    pub fu_busy: BTreeMap<FuClass, u64>,
    pub l1_hits: u64,
    pub l1_misses: u64,
    pub l2_hits: u64,
    pub l2_misses: u64,
    pub stall_raw: u64,
    pub stall_structural: u64,
    pub stall_memory: u64,
}

/// Stateful timing model; caches and the clock persist across regions.
#[derive(Debug, Clone)]
pub struct TimingModel {
    cfg: TimingConfig,
    l1: Cache,
    l2: Cache,
    /// Cycle of the current issue group.
    now: u64,
    slots: u32,
    /// Cycle each register's value is available, and whether it comes from
    /// a load.
    ready: HashMap<Reg, (u64, bool)>,
    unit_free: BTreeMap<FuClass, Vec<u64>>,
    horizon: u64,
    report: CycleReport,
}

impl TimingModel {
    pub fn new(cfg: TimingConfig) -> Self {
        let unit_free = FuClass::ALL.iter().map(|&c| (c, vec![0; cfg.units(c) as usize])).collect();
        TimingModel {
            l1: Cache::new(cfg.l1),
            l2: Cache::new(cfg.l2),
            cfg,
            now: 0,
            slots: 0,
            ready: HashMap::new(),
            unit_free,
            horizon: 0,
            report: CycleReport::default(),
        }
    }

    pub fn config(&self) -> &TimingConfig {
        &self.cfg
    }

    /// Latency of a memory access of `bytes` at `addr`; every touched line
    /// is looked up and the slowest determines the result.
    fn memory_access(&mut self, addr: i64, bytes: usize) -> u32 {
        let line = self.cfg.l1.line_bytes as u64;
        let start = addr.max(0) as u64;
        let end = start + bytes.max(1) as u64 - 1;
        let mut worst = 0;
        for l in start / line..=end / line {
            let a = l * line;
            let lat = if self.l1.access(a) {
                self.report.l1_hits += 1;
                self.cfg.l1.latency
            } else {
                self.report.l1_misses += 1;
                if self.l2.access(a) {
                    self.report.l2_hits += 1;
                    self.cfg.l1.latency + self.cfg.l2.latency
                } else {
                    self.report.l2_misses += 1;
                    self.cfg.l1.latency + self.cfg.l2.latency + self.cfg.memory_latency
                }
            };
            worst = worst.max(lat);
        }
        worst
    }

    fn advance_slot(&mut self) {
        self.slots += 1;
        if self.slots >= self.cfg.issue_width {
            self.now += 1;
            self.slots = 0;
        }
    }

    /// Issues one executed host instruction. `addr` is the effective address
    /// of a memory access.
    pub fn issue(&mut self, ins: &HostInst, addr: Option<i64>) {
        let op = &ins.op;
        let (class, mut lat, busy) = self.cfg.execution(op);
        let mut operand_ready = 0;
        let mut from_load = false;
        for r in op.reads() {
            if let Some(&(t, load)) = self.ready.get(&r) {
                if t > operand_ready {
                    operand_ready = t;
                    from_load = load;
                }
            }
        }
        let writes = op.writes();
        // A full write must not complete before an earlier write to the same
        // register.
        let mut waw = 0;
        for &(r, partial) in &writes {
            if !partial {
                if let Some(&(t, _)) = self.ready.get(&r) {
                    waw = waw.max(t.saturating_sub(lat as u64));
                }
            }
        }
        let data_ready = operand_ready.max(waw);
        let units = self.unit_free.get_mut(&class).expect("every pool exists");
        let (unit, &unit_ready) = units.iter().enumerate().min_by_key(|&(_, t)| *t).expect("pools are nonempty");
        let start = self.now.max(data_ready).max(unit_ready);
        if start > self.now {
            let data_stall = data_ready.saturating_sub(self.now);
            let struct_stall = (start - self.now).saturating_sub(data_stall);
            if from_load && operand_ready >= waw {
                self.report.stall_memory += data_stall;
            } else {
                self.report.stall_raw += data_stall;
            }
            self.report.stall_structural += struct_stall;
            self.now = start;
            self.slots = 0;
        }
        units[unit] = start + busy as u64;
        *self.report.fu_busy.entry(class).or_default() += busy as u64;
        if op.is_memory() {
            let mem_lat = self.memory_access(addr.unwrap_or(0), op.access_bytes());
            if !op.is_store() {
                lat = mem_lat;
            }
        }
        let done = start + lat as u64;
        for (r, partial) in writes {
            let entry = self.ready.entry(r).or_insert((0, false));
            *entry = if partial { (entry.0.max(done), false) } else { (done, op.is_memory()) };
        }
        self.horizon = self.horizon.max(done);
        self.report.host_instructions += 1;
        self.advance_slot();
    }

    /// Simulates one execution of a translation from its trace.
    pub fn run_region(&mut self, prog: &HostProgram, trace: &[TraceEntry]) {
        self.ready.retain(|r, _| matches!(r, Reg::R(_) | Reg::F(_) | Reg::Flags));
        for e in trace {
            self.issue(&prog.instrs[e.idx as usize], e.addr);
        }
    }

    /// Charges interpretation of `guest_instrs` guest instructions after the
    /// pipeline drains.
    pub fn interpret(&mut self, guest_instrs: u64) {
        if guest_instrs == 0 {
            return;
        }
        let drained = self.horizon.max(self.now + u64::from(self.slots > 0));
        self.now = drained + guest_instrs * self.cfg.interp_cycles as u64;
        self.slots = 0;
        self.horizon = self.now;
        self.ready.clear();
        self.report.interpreted_instructions += guest_instrs;
    }

    pub fn report(&self) -> CycleReport {
        let mut r = self.report.clone();
        r.total_cycles = self.horizon.max(self.now + u64::from(self.slots > 0));
        r
    }
}
